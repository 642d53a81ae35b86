import itertools

import pytest

from osc.engine.tasks import majority, vote

SYMBOLS = [None, "x", "y"]


def oracle(values, copies):
    for symbol in ("x", "y"):
        if values.count(symbol) * 2 > copies:
            return symbol
    return None


@pytest.mark.parametrize("values", list(itertools.product(SYMBOLS, repeat=3)))
def test_majority_of_three(values):
    assert majority(values, 3) == oracle(list(values), 3)


@pytest.mark.parametrize("values", list(itertools.product(SYMBOLS, repeat=5)))
def test_majority_of_five(values):
    assert majority(values, 5) == oracle(list(values), 5)


@pytest.mark.parametrize("values", list(itertools.product(SYMBOLS, repeat=3)))
def test_vote_picks_the_lowest_replica_with_the_majority(values):
    replicas = {r: None if v is None else {"out": v} for r, v in enumerate(values)}
    expected = oracle(list(values), 3)
    winners = vote(["out"], replicas, 3)
    if expected is None:
        assert winners is None
    else:
        assert winners == {"out": values.index(expected)}


def test_vote_needs_a_majority_on_every_port():
    replicas = {
        0: {"a": "1", "b": "p"},
        1: {"a": "1", "b": "q"},
        2: {"a": "2", "b": "r"},
    }
    assert vote(["a", "b"], replicas, 3) is None
    assert vote(["a"], replicas, 3) == {"a": 0}


def test_vote_without_outputs_counts_successful_replicas():
    assert vote([], {0: {}, 1: None, 2: {}}, 3) == {}
    assert vote([], {0: {}, 1: None, 2: None}, 3) is None


MASKED = """
Family m = {
  Component t : Executavel, Mascaramento, RedundanciaTemporal = {
    Property num_copias : int = 3;
    Property num_tentativas : int = 2;
    Port output out = { }
  }
}
"""


@pytest.mark.parametrize("jobs", [1, 3])
def test_masked_task_delivers_the_majority(run_model, tmp_path, jobs):
    faults = {
        "t~0": {"outputs": {"out": "A"}},
        "t~1": [{"outcome": "fail"}, {"outputs": {"out": "A"}}],
        "t~2": {"outputs": {"out": "B"}},
    }
    _, report, _ = run_model(MASKED, faults, jobs=jobs)
    record = report.record("t#0")
    assert record.status == "Success"
    assert (tmp_path / "work" / record.outputs["out"]).read_text() == "A"
    assert [(a.replica, a.attempt_index, a.reason) for a in record.attempts] == [
        (0, 1, None),
        (1, 1, "nonzero_exit"),
        (1, 2, None),
        (2, 1, None),
    ]


@pytest.mark.parametrize("jobs", [1, 3])
def test_masked_task_without_majority(run_model, jobs):
    faults = {
        "t~0": {"outputs": {"out": "A"}},
        "t~1": {"outputs": {"out": "B"}},
        "t~2": {"outputs": {"out": "C"}},
    }
    _, report, _ = run_model(MASKED, faults, jobs=jobs)
    record = report.record("t#0")
    assert record.status == "Failed"
    assert record.signal.reason == "no_majority"
    assert record.signal.attempt_count == 1
    assert record.outputs == {}


def test_failed_replicas_count_against_the_majority(run_model):
    faults = {"t~1": {"outcome": "fail"}, "t~2": {"outcome": "fail"}}
    _, report, _ = run_model(MASKED, faults)
    record = report.record("t#0")
    assert record.status == "Failed"
    assert record.signal.reason == "no_majority"
    assert record.signal.attempt_count == 2
    assert len(record.attempts) == 5


def test_masked_default_outputs_agree(run_model, tmp_path):
    _, report, _ = run_model(MASKED)
    record = report.record("t#0")
    assert record.status == "Success"
    assert (tmp_path / "work" / record.outputs["out"]).read_text() == "t#0:out\n"
