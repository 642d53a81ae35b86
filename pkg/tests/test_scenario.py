import itertools

import pytest

from tests.conftest import FIXTURES, read_fixture

SEQS = ["s1.fa", "s2.fa", "s3.fa"]


def test_psipred_falls_back_to_the_cached_prediction(run_model, tmp_path):
    _, report, _ = run_model(read_fixture("psipred.osc"), str(FIXTURES / "psipred_faults.json"))

    psipred = report.record("psipred#0")
    assert psipred.status == "Ignored"
    assert [a.reason for a in psipred.attempts] == ["log_match"] * 3
    assert psipred.signal.reason == "log_match"

    if3 = report.record("if3#0")
    assert (if3.status, if3.delivered_from) == ("Success", "fromCache")

    profrag = report.record("profrag#0")
    assert profrag.status == "Success"
    fragments = tmp_path / "work" / profrag.outputs["fragments"]
    assert fragments.read_text() == "profrag#0:fragments\ncpPsipredFile#0:ss\n"
    assert report.status == "Success"


def expected_sweep_join() -> bytes:
    chunks = []
    for i, (seq, mode) in enumerate(itertools.product(SEQS, ["fast", "slow"])):
        chunks.append(f"align.summarize#{i}:summary\nalign.score#{i}:scores\nprepare#0:header\n".encode())
        chunks.append((FIXTURES / "data" / "seqs" / seq).read_bytes())
        chunks.append(f"{mode}\n".encode())
    return b"".join(chunks)


def test_sweep_joins_instances_in_order(run_model, tmp_path):
    _, report, _ = run_model(read_fixture("sweep.osc"))
    assert report.status == "Success"
    (join,) = report.joins
    assert (join.node, join.port, join.formato) == ("align.result.join#0", "align.result", "concat")
    assert join.parts == list(range(6))
    assert (tmp_path / "work" / join.artifact).read_bytes() == expected_sweep_join()


def test_sweep_is_deterministic_across_job_counts(run_model, tmp_path):
    source = read_fixture("sweep.osc")
    _, serial, _ = run_model(source, jobs=1, workdir="serial")
    _, parallel, _ = run_model(source, jobs=4, workdir="parallel")

    assert serial.without_timestamps() == parallel.without_timestamps()
    (a,), (b,) = serial.joins, parallel.joins
    assert (tmp_path / "serial" / a.artifact).read_bytes() == (tmp_path / "parallel" / b.artifact).read_bytes()


@pytest.mark.parametrize("jobs", [1, 4])
def test_failed_instance_blocks_the_join(run_model, jobs):
    _, report, _ = run_model(read_fixture("sweep.osc"), {"align.summarize#1": {"outcome": "fail"}}, jobs=jobs)
    assert report.record("align.summarize#1").status == "Failed"
    assert report.record("align.result.join#0").status == "NotRun"
    # the run aborts: nothing starts after the failure
    failed_at = report.record("align.summarize#1").finished
    assert all(rec.started is None or rec.started < failed_at for rec in report.nodes)
    assert [rec.node for rec in report.nodes if rec.status == "Failed"] == ["align.summarize#1"]
    assert report.joins == []
    assert report.status == "Failed"


def test_ignored_instance_is_left_out_of_the_join(run_model, tmp_path):
    source = read_fixture("sweep.osc").replace(
        "Component summarize : Executavel, OPM = {",
        "Component summarize : Executavel, OPM, RedundanciaTemporal = {\n"
        "        Property num_tentativas : int = 1;\n"
        "        Property ignorar : bool = true;",
    )
    _, report, _ = run_model(source, {"align.summarize#1": {"outcome": "fail"}})
    assert report.record("align.summarize#1").status == "Ignored"
    (join,) = report.joins
    assert join.parts == [0, 2, 3, 4, 5]
    assert report.status == "Success"
