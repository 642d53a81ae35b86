from pathlib import Path

import pytest

from osc.engine import RunConfig, run
from osc.parser import parse_workflow
from osc.planner import plan_workflow
from osc.provenance import ProvenanceRecorder
from osc.typesystem import resolve_types, validate

FIXTURES = Path(__file__).parent / "fixtures"
RULE_FIXTURES = FIXTURES / "rules"


def read_fixture(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


@pytest.fixture
def analyse():
    """Parse, resolve and validate a model given as source text or a fixture name."""

    def _analyse(source: str, file: str = "<test>"):
        if source.endswith(".osc"):
            file = str(FIXTURES / source)
            source = read_fixture(source)
        model = parse_workflow(source, file)
        resolved = resolve_types(model)
        return model, resolved, validate(model, resolved)

    return _analyse


@pytest.fixture
def plan_model(analyse):
    def _plan(source: str, base_dir: Path = FIXTURES):
        model, resolved, diagnostics = analyse(source)
        assert diagnostics == [], [d.render() for d in diagnostics]
        return plan_workflow(model, resolved, base_dir=str(base_dir))

    return _plan


@pytest.fixture
def run_model(plan_model, tmp_path):
    """Plan and execute a model in a fresh work directory; returns (plan, report, recorder)."""

    def _run(source: str, faults=None, jobs: int = 1, workdir: str = "work", **config):
        plan = plan_model(source)
        run_config = RunConfig(jobs=jobs, workdir=str(tmp_path / workdir), fault_script=faults, **config)
        recorder = ProvenanceRecorder(plan.workflow, run_config.adapter, plan.versions, plan.flows)
        report = run(plan, run_config, recorder)
        return plan, report, recorder

    return _run
