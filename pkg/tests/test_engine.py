import os

import pytest

from osc.engine import FaultScriptError, RunConfig, transfer
from osc.engine.adapters import SimulatedAdapter
from osc.engine.transfer import Data
from osc.types import FailureSignal, FaultScript, NodeConfig, PlanNode

PIPELINE = """
Family m = {
  Connector Type Pipe = { }
  Component a : %(a_types)s = {
    %(a_props)s
    Port output out = { }
  }
  Connector p : %(p_types)s = {
    %(p_props)s
    Role source src = { }
    Role destination dst = { }
  }
  Component b : Executavel = {
    Property comando : string = "cat {input[inp]} {input[inp]} > {output[out]}";
    Port input inp = { }
    Port output out = { }
  }
  Component c : Executavel = {
    Property comando : string = "printf 'side\\n' > {output[out]}";
    Port output out = { }
  }
  Attachment a.out to p.src;
  Attachment b.inp from p.dst;
}
"""


def pipeline(a_types="Executavel", a_props="", p_types="Pipe", p_props="") -> str:
    if "comando" not in a_props:
        a_props = "Property comando : string = \"printf 'hi\\\\n' > {output[out]}\";\n" + a_props
    return PIPELINE % dict(a_types=a_types, a_props=a_props, p_types=p_types, p_props=p_props)


def single_task(types: str, props: str = "") -> str:
    return f"Family m = {{ Component t : {types} = {{ {props} Port output out = {{ }} }} }}"


@pytest.mark.parametrize("ignorar", [False, True])
@pytest.mark.parametrize("failures", range(5))
@pytest.mark.parametrize("tentativas", range(1, 5))
def test_retry_matrix(run_model, tentativas, failures, ignorar):
    source = single_task(
        "Executavel, RedundanciaTemporal",
        f"Property num_tentativas : int = {tentativas}; Property ignorar : bool = {str(ignorar).lower()};",
    )
    faults = {"t": [{"outcome": "fail"}] * failures + [{"outcome": "ok"}]}
    _, report, _ = run_model(source, faults)
    record = report.record("t#0")

    if failures < tentativas:
        assert record.status == "Success"
        assert len(record.attempts) == failures + 1
        assert [a.reason for a in record.attempts] == ["nonzero_exit"] * failures + [None]
        assert record.outputs == {"out": "t#0/out/out"}
        assert record.signal is None
        assert report.status == "Success"
    else:
        assert record.status == ("Ignored" if ignorar else "Failed")
        assert len(record.attempts) == tentativas
        assert record.signal.attempt_count == tentativas
        assert record.signal.reason == "nonzero_exit"
        assert record.outputs == {}
        assert report.status == ("Success" if ignorar else "Failed")
    assert [a.attempt_index for a in record.attempts] == list(range(1, len(record.attempts) + 1))


def test_retries_are_additional(run_model):
    source = single_task("Executavel, RedundanciaTemporal", "Property num_tentativas : int = 2;")
    faults = {"t": [{"outcome": "fail"}, {"outcome": "fail"}, {"outcome": "ok"}]}
    _, report, _ = run_model(source, faults, retries_are_additional=True)
    assert report.record("t#0").status == "Success"
    assert len(report.record("t#0").attempts) == 3


def test_without_redundancy_a_single_attempt(run_model):
    _, report, _ = run_model(single_task("Executavel"), {"t": [{"outcome": "fail"}, {"outcome": "ok"}]})
    record = report.record("t#0")
    assert (record.status, len(record.attempts)) == ("Failed", 1)


TIMED = single_task(
    "Executavel, MonitoramentoDeTempo, RedundanciaTemporal",
    "Property tempo_limite : float = 0.5; Property num_tentativas : int = 2;",
)


@pytest.mark.parametrize(
    "entry, reason",
    [
        ({"outcome": "timeout"}, "timeout"),
        ({"delay": 2.0}, "timeout"),
        ({"outcome": "fail", "exit_code": 4}, "nonzero_exit"),
        ({"delay": 0.1}, None),
    ],
)
def test_timeout_detection(run_model, entry, reason):
    _, report, _ = run_model(TIMED, {"t": entry})
    record = report.record("t#0")
    if reason is None:
        assert record.status == "Success"
        assert record.attempts[0].duration == pytest.approx(0.1)
    else:
        assert record.status == "Failed"
        assert [a.reason for a in record.attempts] == [reason, reason]
    if reason == "timeout":
        assert record.attempts[0].exit_code is None
        assert record.attempts[0].duration == pytest.approx(0.5)


def test_scripted_timeout_without_monitoring_is_a_plain_failure(run_model):
    _, report, _ = run_model(single_task("Executavel"), {"t": {"outcome": "timeout"}})
    attempt = report.record("t#0").attempts[0]
    assert (attempt.reason, attempt.exit_code) == ("nonzero_exit", 1)


@pytest.mark.parametrize(
    "props, log_text, reason",
    [
        ('Property padroes : set = {"panic"};', "kernel panic\n", "log_match"),
        ('Property padroes : set = {"panic"};', "all fine\n", None),
        ("", "Error: disk full\n", "log_match"),
        ("", "errors=0\n", None),
    ],
)
def test_log_detection_overrides_exit_status(run_model, props, log_text, reason):
    source = single_task("Executavel, Log, RedundanciaTemporal", props + " Property num_tentativas : int = 1;")
    _, report, _ = run_model(source, {"t": {"log_text": log_text}})
    attempt = report.record("t#0").attempts[0]
    assert attempt.exit_code == 0
    assert attempt.reason == reason
    if reason:
        assert attempt.log_excerpt == log_text


def test_failure_aborts_the_run(run_model):
    _, report, _ = run_model(pipeline(), {"a": {"outcome": "fail"}})
    statuses = {rec.node: rec.status for rec in report.nodes}
    # nothing consumes the signal, so nothing else is launched
    assert statuses == {"a#0": "Failed", "p#0": "NotRun", "b#0": "NotRun", "c#0": "NotRun"}
    assert report.record("a#0").signal.origin == "a#0"
    assert report.status == "Failed"


def test_abort_lets_in_flight_nodes_finish(run_model):
    _, report, _ = run_model(pipeline(), {"a": {"outcome": "fail"}}, jobs=2)
    statuses = {rec.node: rec.status for rec in report.nodes}
    assert statuses == {"a#0": "Failed", "p#0": "NotRun", "b#0": "NotRun", "c#0": "Success"}


FALLBACK = """
Family m = {
  Component a : Executavel = {
    Property comando : string = "printf 'a\\n' > {output[out]}";
    Port output out = { }
  }
  Component c : Executavel = {
    Property comando : string = "printf 'c\\n' > {output[out]}";
    Port output out = { }
  }
  Connector p : Propagacao = {
    Role source first = { }
    Role source second = { }
    Role destination dst = { }
  }
  Component b : Executavel = {
    Property comando : string = "cat {input[inp]} > {output[out]}";
    Port input inp = { }
    Port output out = { }
  }
  Attachment a.out to p.first;
  Attachment c.out to p.second;
  Attachment b.inp from p.dst;
}
"""


def test_propagation_connector_keeps_the_run_going(run_model):
    _, report, _ = run_model(FALLBACK, {"a": {"outcome": "fail"}})
    statuses = {rec.node: rec.status for rec in report.nodes}
    assert statuses == {"a#0": "Failed", "c#0": "Success", "p#0": "Success", "b#0": "Success"}
    assert report.record("p#0").delivered_from == "second"
    assert report.status == "Failed"


def test_ignored_task_signals_downstream(run_model):
    source = pipeline(
        a_types="Executavel, RedundanciaTemporal",
        a_props="Property num_tentativas : int = 2; Property ignorar : bool = true;",
    )
    _, report, _ = run_model(source, {"a": {"outcome": "fail"}})
    assert report.record("a#0").status == "Ignored"
    # a connector without Propagacao cannot consume the signal
    assert report.record("p#0").status == "Failed"
    assert report.record("b#0").status == "NotRun"


def test_connector_retries_transfers(run_model):
    source = pipeline(p_types="Pipe, RedundanciaTemporal", p_props="Property num_tentativas : int = 2;")
    _, report, _ = run_model(source, {"p": [{"outcome": "fail"}, {"outcome": "ok"}]})
    record = report.record("p#0")
    assert record.status == "Success"
    assert [a.reason for a in record.attempts] == ["transfer_failure", None]
    assert record.delivered_from == "src"
    assert report.record("b#0").status == "Success"


def test_simulated_outputs_chain_inputs(run_model, tmp_path):
    _, report, _ = run_model(pipeline())
    assert report.status == "Success"
    b_out = tmp_path / "work" / report.record("b#0").outputs["out"]
    assert b_out.read_text() == "b#0:out\na#0:out\n"


def test_shell_adapter_runs_commands(run_model, tmp_path):
    _, report, _ = run_model(pipeline(), adapter="shell")
    assert report.status == "Success"
    assert report.adapter == "shell"
    work = tmp_path / "work"
    assert (work / report.record("b#0").outputs["out"]).read_text() == "hi\nhi\n"
    assert (work / report.record("c#0").outputs["out"]).read_text() == "side\n"
    assert (work / "a#0" / "attempt-1" / "log.txt").exists()


@pytest.mark.parametrize(
    "comando, reason, exit_code",
    [
        ("exit 3", "nonzero_exit", 3),
        ("true", "nonzero_exit", 0),
        ("echo ERROR boom; touch {output[out]}", "log_match", 0),
        ("sleep 5", "timeout", None),
    ],
)
def test_shell_adapter_detection(run_model, comando, reason, exit_code):
    source = single_task(
        "Executavel, Log, MonitoramentoDeTempo, RedundanciaTemporal",
        f'Property comando : string = "{comando}"; Property tempo_limite : float = 0.3;'
        ' Property num_tentativas : int = 1; Property padroes : set = {"ERROR"};',
    )
    _, report, _ = run_model(source, adapter="shell")
    attempt = report.record("t#0").attempts[0]
    assert (attempt.reason, attempt.exit_code) == (reason, exit_code)
    assert attempt.duration < 5


def test_timeout_tolerates_a_vanished_process_group(run_model, monkeypatch):
    killpg = os.killpg

    def already_gone(pgid, sig):
        killpg(pgid, sig)
        raise ProcessLookupError(pgid)

    monkeypatch.setattr(os, "killpg", already_gone)
    source = single_task(
        "Executavel, MonitoramentoDeTempo, RedundanciaTemporal",
        'Property comando : string = "sleep 5";'
        ' Property tempo_limite : float = 0.3; Property num_tentativas : int = 1;',
    )
    _, report, _ = run_model(source, adapter="shell")
    record = report.record("t#0")
    assert record.status == "Failed"
    assert record.attempts[0].reason == "timeout"
    assert record.attempts[0].duration < 5


CONTROL = """
Family m = {
  Connector Type Pipe = { }
  Component a : Executavel = {
    Property comando : string = "true";
    Port output done = { }
  }
  Connector p : Pipe = {
    Role source src = { }
    Role destination dst = { }
  }
  Component b : Executavel = {
    Property comando : string = "wc -c < {input[go]} > {output[out]}";
    Port input go = { }
    Port output out = { }
  }
  Attachment a.done to p.src : control;
  Attachment b.go from p.dst : control;
}
"""


def test_control_dependency_is_a_zero_byte_artifact(run_model, tmp_path):
    _, report, _ = run_model(CONTROL, adapter="shell")
    assert report.status == "Success"
    assert report.record("a#0").outputs == {}
    work = tmp_path / "work"
    token = work / report.record("p#0").outputs["dst"]
    assert token.read_bytes() == b""
    assert (work / report.record("b#0").outputs["out"]).read_text().strip() == "0"


def propagating_connector(ignorar: bool = False) -> PlanNode:
    return PlanNode(
        id="if3#0",
        path="if3",
        kind="connector",
        outputs=["toProfrag"],
        config=NodeConfig(propagation=True, retries=1 if ignorar else None, ignorar=ignorar),
    )


def test_transfer_delivers_first_healthy_source(tmp_path):
    cached = tmp_path / "cached.ss"
    cached.write_text("HHHEEE\n")
    signal = FailureSignal(origin="psipred#0", attempt_count=3, reason="log_match")
    delivery = transfer(
        propagating_connector(),
        [("fromPsipred", signal), ("fromCache", Data(str(cached)))],
        SimulatedAdapter(),
        RunConfig(workdir=str(tmp_path)),
        str(tmp_path / "if3#0"),
    )
    assert delivery.status == "Success"
    assert delivery.source == "fromCache"
    with open(delivery.outputs["toProfrag"]) as f:
        assert f.read() == "HHHEEE\n"


@pytest.mark.parametrize("ignorar, status", [(False, "Failed"), (True, "Ignored")])
def test_transfer_without_healthy_source(tmp_path, ignorar, status):
    signal = FailureSignal(origin="psipred#0", attempt_count=3, reason="log_match")
    delivery = transfer(
        propagating_connector(ignorar),
        [("fromPsipred", signal)],
        SimulatedAdapter(),
        RunConfig(workdir=str(tmp_path)),
        str(tmp_path / "if3#0"),
    )
    assert delivery.status == status
    assert delivery.signal.reason == "transfer_failure"
    assert delivery.signal.origin == "if3#0"
    assert delivery.outputs == {}


def test_fault_script_keys():
    faults = FaultScript(
        entries={
            "t": {"outcome": "fail"},
            "t#0@2": {"outcome": "ok"},
            "t#1~2": {"outcome": "timeout"},
        }
    )
    adapter = SimulatedAdapter(faults)
    t0 = PlanNode(id="t#0", path="t", kind="task", instance_index=0)
    t1 = PlanNode(id="t#1", path="t", kind="task", instance_index=1)
    assert adapter.lookup(t0, 1).outcome == "fail"
    assert adapter.lookup(t0, 2).outcome == "ok"
    assert adapter.lookup(t1, 2).outcome == "fail"
    assert adapter.lookup(t1, 1, replica=2).outcome == "timeout"
    assert adapter.lookup(t1, 1, replica=0).outcome == "fail"
    other = PlanNode(id="u#0", path="u", kind="task")
    assert adapter.lookup(other, 1).outcome == "ok"


def test_run_config_validation(tmp_path):
    with pytest.raises(ValueError, match="jobs"):
        RunConfig(jobs=0)
    with pytest.raises(ValueError, match="adapter"):
        RunConfig(adapter="slurm")
    with pytest.raises(FaultScriptError, match="cannot read"):
        RunConfig(fault_script=str(tmp_path / "missing.json"))
    with pytest.raises(FaultScriptError, match="malformed"):
        RunConfig(fault_script={"t": {"outcome": "explode"}})


def test_workdir_defaults_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("OSC_WORKDIR", str(tmp_path / "elsewhere"))
    assert RunConfig().workdir == str(tmp_path / "elsewhere")
    assert RunConfig(workdir="explicit").workdir == "explicit"
    assert RunConfig().attempt_budget(None) == 1
    assert RunConfig().attempt_budget(3) == 3
    assert RunConfig(retries_are_additional=True).attempt_budget(3) == 4
