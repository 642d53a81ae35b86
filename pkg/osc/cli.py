"""Subcommands: validate, plan, run and prov.

Payload (plans, reports, OPM graphs) goes to stdout; diagnostics and errors go
to stderr. Every command returns an ExitStatus.
"""

import logging
import os
import sys
from enum import IntEnum
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from .engine import FaultScriptError, RunConfig, run
from .model import WorkflowModel
from .parser import ParseError, parse_workflow
from .planner import BindError, DirectoryDataset, PlanError, apply_binds, parse_bind, plan_workflow
from .provenance import GRANULARITIES, ProvenanceRecorder, UnknownVersionError, export_opm, load_log
from .types import ExecutionPlan, dump_json
from .typesystem import Diagnostic, ResolutionError, ResolvedElement, resolve_types, validate

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
PROVENANCE_FILE = "provenance.json"


class ExitStatus(IntEnum):
    OK = 0
    INVALID = 1
    RUNTIME_FAILURE = 2
    USAGE = 3


class _Abort(Exception):
    def __init__(self, status: ExitStatus, message: str = ""):
        super().__init__(message)
        self.status = status
        self.message = message


def _error(message: str):
    print(f"osc: {message}", file=sys.stderr)


def _read(file: str) -> str:
    try:
        with open(file, "r", encoding="utf-8") as f:
            return f.read()
    except UnicodeDecodeError as e:
        raise _Abort(ExitStatus.INVALID, f"{file} is not UTF-8 text: {e}")
    except OSError as e:
        raise _Abort(ExitStatus.USAGE, f"cannot read {file}: {e}")


def _parse_binds(binds: Sequence[str]) -> Dict[str, object]:
    parsed = {}
    for text in binds or ():
        try:
            target, dataset = parse_bind(text)
        except BindError as e:
            raise _Abort(ExitStatus.USAGE, str(e))
        if isinstance(dataset, DirectoryDataset):
            dataset = DirectoryDataset(os.path.abspath(dataset.path))
        parsed[target] = dataset
    return parsed


def _load(file: str, binds: Sequence[str] = ()) -> Tuple[WorkflowModel, List[ResolvedElement], List[Diagnostic]]:
    source = _read(file)
    datasets = _parse_binds(binds)
    try:
        model = parse_workflow(source, file)
        if datasets:
            model = apply_binds(model, datasets)
        resolved = resolve_types(model)
    except BindError as e:
        raise _Abort(ExitStatus.USAGE, str(e))
    except (ParseError, ResolutionError) as e:
        raise _Abort(ExitStatus.INVALID, str(e))
    return model, resolved, validate(model, resolved)


def _plan(file: str, binds: Sequence[str]) -> ExecutionPlan:
    model, resolved, diagnostics = _load(file, binds)
    if diagnostics:
        for diagnostic in diagnostics:
            print(diagnostic.render(), file=sys.stderr)
        raise _Abort(ExitStatus.INVALID)
    try:
        return plan_workflow(model, resolved, base_dir=os.path.dirname(os.path.abspath(file)))
    except PlanError as e:
        raise _Abort(ExitStatus.INVALID, str(e))


def _guarded(command):
    def wrapper(*args, **kwargs) -> ExitStatus:
        try:
            return command(*args, **kwargs)
        except _Abort as abort:
            if abort.message:
                _error(abort.message)
            return abort.status

    wrapper.__name__ = command.__name__
    wrapper.__doc__ = command.__doc__
    return wrapper


@_guarded
def cmd_validate(file: str) -> ExitStatus:
    _, _, diagnostics = _load(file)
    for diagnostic in diagnostics:
        print(diagnostic.render(), file=sys.stderr)
    return ExitStatus.INVALID if diagnostics else ExitStatus.OK


@_guarded
def cmd_plan(file: str, binds: Sequence[str] = (), format: str = "json") -> ExitStatus:
    if format != "json":
        raise _Abort(ExitStatus.USAGE, f"unsupported plan format {format!r}")
    plan = _plan(file, binds)
    sys.stdout.write(dump_json(plan))
    return ExitStatus.OK


@_guarded
def cmd_run(
    file: str,
    binds: Sequence[str] = (),
    adapter: str = "simulated",
    jobs: int = 1,
    faults: Optional[str] = None,
    workdir: Optional[str] = None,
    retries_are_additional: bool = False,
    progress: bool = False,
) -> ExitStatus:
    try:
        config = RunConfig(
            adapter=adapter,
            jobs=jobs,
            workdir=workdir,
            fault_script=faults,
            retries_are_additional=retries_are_additional,
            progress=progress,
        )
    except FaultScriptError as e:
        raise _Abort(ExitStatus.USAGE, str(e))
    except ValueError as e:
        raise _Abort(ExitStatus.USAGE, str(e))
    plan = _plan(file, binds)
    os.makedirs(config.workdir, exist_ok=True)
    recorder = ProvenanceRecorder(plan.workflow, adapter, plan.versions, plan.flows)
    report = run(plan, config, recorder)
    with open(os.path.join(config.workdir, REPORT_FILE), "w", encoding="utf-8") as f:
        f.write(dump_json(report))
    recorder.save(os.path.join(config.workdir, PROVENANCE_FILE))
    logger.info("wrote %s and %s to %s", REPORT_FILE, PROVENANCE_FILE, config.workdir)
    sys.stdout.write(dump_json(report))
    if report.status != "Success":
        failed = [r.node for r in report.nodes if r.status == "Failed"]
        _error(f"run failed: {', '.join(failed)}")
        return ExitStatus.RUNTIME_FAILURE
    return ExitStatus.OK


def _parse_granularity(items: Sequence[str]) -> Dict[str, str]:
    overrides = {}
    for text in items or ():
        flow, sep, mode = text.partition("=")
        if not sep or mode not in GRANULARITIES:
            raise _Abort(ExitStatus.USAGE, f"expected FLOW=alta|baixa, got {text!r}")
        overrides[flow] = mode
    return overrides


@_guarded
def cmd_prov(workdir: str, version: str, granularity: Sequence[str] = ()) -> ExitStatus:
    overrides = _parse_granularity(granularity)
    path = os.path.join(workdir, PROVENANCE_FILE)
    try:
        log = load_log(path)
    except (OSError, ValidationError) as e:
        raise _Abort(ExitStatus.USAGE, f"cannot read provenance log {path}: {e}")
    try:
        graph = export_opm(log, version, overrides)
    except UnknownVersionError as e:
        raise _Abort(ExitStatus.USAGE, str(e))
    sys.stdout.write(dump_json(graph))
    return ExitStatus.OK
