"""Execution events and their export as versioned OPM graphs.

Every event is stamped by the recorder's logical clock at ingestion. An export
for one version keeps only the elements tagged with it, then collapses each
flow that is BaixaGranularidade for that version into a single process
(`path#index`). Artifacts that cross the flow boundary are re-attached to the
collapsed process; artifacts the flow both produces and consumes disappear.
"""

import hashlib
import logging
import os
import threading
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

from .types import (
    ArtifactValue,
    FlowInfo,
    OPMAgent,
    OPMArtifact,
    OPMEdge,
    OPMGraph,
    OPMProcess,
    ProvenanceEvent,
    ProvenanceLog,
    dump_json,
)

logger = logging.getLogger(__name__)

GRANULARITIES = ("alta", "baixa")
_SEVERITY = {"Success": 0, "Ignored": 1, "Failed": 2}


class UnknownVersionError(ValueError):
    def __init__(self, version: str, known: Iterable[str]):
        self.version = version
        self.known = sorted(known)
        super().__init__(str(self))

    def __str__(self):
        return f"unknown version {self.version!r}; known versions: {', '.join(self.known) or 'none'}"


def artifact_value(path: str, relative_to: Optional[str] = None) -> ArtifactValue:
    h = hashlib.sha256()
    size = 0
    if os.path.isdir(path):
        for root, dirs, files in os.walk(path):
            dirs.sort(key=os.fsencode)
            for name in sorted(files, key=os.fsencode):
                with open(os.path.join(root, name), "rb") as f:
                    data = f.read()
                h.update(data)
                size += len(data)
    else:
        with open(path, "rb") as f:
            data = f.read()
        h.update(data)
        size = len(data)
    shown = os.path.relpath(path, relative_to) if relative_to else path
    return ArtifactValue(path=shown.replace(os.sep, "/"), sha256=h.hexdigest(), size=size)


class ProvenanceRecorder:
    def __init__(
        self,
        workflow: str,
        agent: str,
        declared_versions: Iterable[str] = (),
        flows: Iterable[FlowInfo] = (),
    ):
        self.workflow = workflow
        self.agent = agent
        self.declared_versions = sorted(declared_versions)
        self.flows = list(flows)
        self._lock = threading.Lock()
        self._clock = 0
        self._events: List[ProvenanceEvent] = []

    def record(self, event: ProvenanceEvent) -> ProvenanceEvent:
        with self._lock:
            self._clock += 1
            stamped = event.model_copy(update={"time": self._clock})
            self._events.append(stamped)
        return stamped

    @property
    def events(self) -> List[ProvenanceEvent]:
        with self._lock:
            return list(self._events)

    def process_start(self, process: str, versions, flows=()) -> ProvenanceEvent:
        return self.record(
            ProvenanceEvent(kind="process_start", subject=process, versions=list(versions), flows=list(flows))
        )

    def process_end(self, process: str, versions, status: str, attempts: int) -> ProvenanceEvent:
        return self.record(
            ProvenanceEvent(
                kind="process_end", subject=process, versions=list(versions), status=status, attempts=attempts
            )
        )

    def artifact_created(
        self,
        artifact: str,
        versions,
        value: Optional[ArtifactValue] = None,
        process: Optional[str] = None,
        role: Optional[str] = None,
        flows=(),
        derived_from=(),
        exports=(),
    ) -> ProvenanceEvent:
        return self.record(
            ProvenanceEvent(
                kind="artifact_created",
                subject=artifact,
                artifact=artifact,
                versions=list(versions),
                value=value,
                process=process,
                role=role,
                flows=list(flows),
                derived_from=list(derived_from),
                exports=list(exports),
            )
        )

    def data_used(self, process: str, artifact: str, versions, role: Optional[str] = None) -> ProvenanceEvent:
        return self.record(
            ProvenanceEvent(kind="data_used", subject=process, artifact=artifact, versions=list(versions), role=role)
        )

    def triggered(self, consumer: str, producer: str, versions) -> ProvenanceEvent:
        return self.record(
            ProvenanceEvent(kind="triggered", subject=consumer, process=producer, versions=list(versions))
        )

    def to_log(self) -> ProvenanceLog:
        return ProvenanceLog(
            workflow=self.workflow,
            agent=self.agent,
            declared_versions=self.declared_versions,
            flows=self.flows,
            events=self.events,
        )

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            f.write(dump_json(self.to_log()))


def load_log(path: str) -> ProvenanceLog:
    with open(path, "r", encoding="utf-8") as f:
        return ProvenanceLog.model_validate_json(f.read())


class _Graph:
    """Full (unprojected) provenance graph rebuilt from the event log."""

    def __init__(self, log: ProvenanceLog):
        self.processes: Dict[str, dict] = {}
        self.artifacts: Dict[str, dict] = {}
        self.used: List[Tuple[str, str, Optional[str]]] = []
        self.generated: List[Tuple[str, str, Optional[str]]] = []
        self.triggered: List[Tuple[str, str]] = []
        self.derived: List[Tuple[str, str]] = []
        for event in log.events:
            if event.kind == "process_start":
                self.processes[event.subject] = {
                    "label": event.subject.rpartition("#")[0] or event.subject,
                    "start": event.time,
                    "end": None,
                    "status": None,
                    "attempts": None,
                    "versions": set(event.versions),
                    "flows": list(event.flows),
                }
            elif event.kind == "process_end":
                proc = self.processes.setdefault(
                    event.subject,
                    {"label": event.subject, "start": None, "versions": set(event.versions), "flows": []},
                )
                proc.update(end=event.time, status=event.status, attempts=event.attempts)
            elif event.kind == "artifact_created":
                self.artifacts[event.subject] = {
                    "value": event.value,
                    "versions": set(event.versions),
                    "producer": event.process,
                    "exports": set(event.exports),
                }
                if event.process is not None:
                    self.generated.append((event.subject, event.process, event.role))
                for source in event.derived_from:
                    self.derived.append((event.subject, source))
            elif event.kind == "data_used":
                self.used.append((event.subject, event.artifact, event.role))
            elif event.kind == "triggered":
                self.triggered.append((event.subject, event.process))


def _collapse_targets(
    graph: _Graph, flows: List[FlowInfo], version: str, overrides: Mapping[str, str]
) -> Dict[str, str]:
    baixa = set()
    for flow in flows:
        mode = overrides.get(flow.path) or ("baixa" if version in flow.baixa else "alta")
        if mode == "baixa":
            baixa.add(flow.path)
    rep = {}
    for pid, proc in graph.processes.items():
        target = next((f for f in proc["flows"] if f.rpartition("#")[0] in baixa), None)
        rep[pid] = target or pid
    return rep


def export_opm(
    source: Union[ProvenanceRecorder, ProvenanceLog],
    version: str,
    granularity_overrides: Optional[Mapping[str, str]] = None,
) -> OPMGraph:
    log = source.to_log() if isinstance(source, ProvenanceRecorder) else source
    overrides = dict(granularity_overrides or {})
    for path, mode in overrides.items():
        if mode not in GRANULARITIES:
            raise ValueError(f"granularity for {path!r} must be one of {GRANULARITIES}, got {mode!r}")
    if version not in log.declared_versions:
        if log.declared_versions:
            raise UnknownVersionError(version, log.declared_versions)
        return OPMGraph(account=version)

    graph = _Graph(log)
    rep = _collapse_targets(graph, log.flows, version, overrides)
    flow_info = {flow.path: flow for flow in log.flows}

    kept_processes: Dict[str, OPMProcess] = {}
    members: Dict[str, List[str]] = {}
    for pid, target in rep.items():
        if target != pid:
            members.setdefault(target, []).append(pid)
        elif version in graph.processes[pid]["versions"]:
            proc = graph.processes[pid]
            kept_processes[pid] = OPMProcess(
                id=pid,
                label=proc["label"],
                start=proc["start"],
                end=proc.get("end"),
                status=proc.get("status"),
                attempts=proc.get("attempts"),
            )
    for target, pids in members.items():
        flow = flow_info[target.rpartition("#")[0]]
        procs = [graph.processes[p] for p in pids]
        tagged = version in flow.versions or version in flow.baixa
        if not tagged and not any(version in p["versions"] for p in procs):
            continue
        starts = [p["start"] for p in procs if p["start"] is not None]
        ends = [p.get("end") for p in procs if p.get("end") is not None]
        statuses = [p.get("status") for p in procs if p.get("status") in _SEVERITY]
        kept_processes[target] = OPMProcess(
            id=target,
            label=flow.path,
            start=min(starts) if starts else None,
            end=max(ends) if ends else None,
            status=max(statuses, key=_SEVERITY.__getitem__) if statuses else None,
        )

    consumers: Dict[str, Set[str]] = {}
    for pid, aid, _ in graph.used:
        consumers.setdefault(aid, set()).add(rep.get(pid, pid))

    def internal(aid: str) -> bool:
        producer = graph.artifacts[aid]["producer"]
        if producer is None or rep.get(producer, producer) == producer:
            return False
        target = rep[producer]
        if target in graph.artifacts[aid]["exports"]:
            return False
        return all(c == target for c in consumers.get(aid, ()))

    kept_artifacts = {
        aid: OPMArtifact(id=aid, value=art["value"])
        for aid, art in graph.artifacts.items()
        if version in art["versions"] and not internal(aid)
    }

    edges: Set[Tuple[str, str, str, Optional[str]]] = set()
    for pid, aid, role in graph.used:
        p = rep.get(pid, pid)
        if p in kept_processes and aid in kept_artifacts:
            edges.add(("used", p, aid, role))
    for aid, pid, role in graph.generated:
        p = rep.get(pid, pid)
        if p in kept_processes and aid in kept_artifacts:
            edges.add(("wasGeneratedBy", aid, p, role))
    for consumer, producer in graph.triggered:
        c, p = rep.get(consumer, consumer), rep.get(producer, producer)
        if c != p and c in kept_processes and p in kept_processes:
            edges.add(("wasTriggeredBy", c, p, None))
    for aid, source in graph.derived:
        if aid in kept_artifacts and source in kept_artifacts:
            edges.add(("wasDerivedFrom", aid, source, None))

    agents = []
    if kept_processes:
        agent = OPMAgent(id=f"agent:{log.agent}", label=log.agent)
        agents.append(agent)
        for pid in kept_processes:
            edges.add(("wasControlledBy", pid, agent.id, None))

    logger.debug(
        "exported %s: %d processes, %d artifacts, %d edges",
        version,
        len(kept_processes),
        len(kept_artifacts),
        len(edges),
    )
    return OPMGraph(
        account=version,
        artifacts=sorted(kept_artifacts.values(), key=lambda a: a.id),
        processes=sorted(kept_processes.values(), key=lambda p: p.id),
        agents=agents,
        edges=[
            OPMEdge(kind=kind, source=src, target=dst, role=role)
            for kind, src, dst, role in sorted(edges, key=lambda e: (e[0], e[1], e[2], e[3] or ""))
        ],
    )
