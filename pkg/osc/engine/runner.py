import bisect
import logging
import os
import sys
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from typing import Callable, Dict, List, Optional, Set

from tqdm import tqdm

from ..planner import JoinError, join_manifest
from ..provenance import ProvenanceRecorder, artifact_value
from ..types import (
    ExecutionPlan,
    FailureSignal,
    JoinResult,
    NodeInput,
    NodeRecord,
    PlanNode,
    RunReport,
)
from .adapters import Adapter, make_adapter
from .config import RunConfig
from .join import apply_join
from .mapreduce import run_mapreduce
from .tasks import TaskContext, TaskOutcome, execute_task, reset_dir
from .transfer import Data, Delivery, transfer

logger = logging.getLogger(__name__)


def artifact_id(node: PlanNode, port: str) -> str:
    if node.kind == "join":
        return f"{node.path}#{node.instance_index}"
    return f"{node.path}.{port}#{node.instance_index}"


def item_artifact_id(inp: NodeInput) -> str:
    return f"{inp.node}.{inp.node_port}#{inp.item.position}"


class _Run:
    """Coordinator: owns every piece of run state; workers only return outcomes."""

    def __init__(self, plan: ExecutionPlan, config: RunConfig, adapter: Adapter, recorder: ProvenanceRecorder):
        self.plan = plan
        self.config = config
        self.adapter = adapter
        self.recorder = recorder
        self.workdir = os.path.abspath(config.workdir)
        self.nodes = plan.node_map()
        self.rank = {nid: i for i, nid in enumerate(plan.order)}
        self.producers: Dict[str, Set[str]] = {nid: set() for nid in self.nodes}
        self.consumers: Dict[str, Set[str]] = {nid: set() for nid in self.nodes}
        for edge in plan.edges:
            self.producers[edge.consumer].add(edge.producer)
            self.consumers[edge.producer].add(edge.consumer)
        self.expansions = {e.flow: e for e in plan.expansions}
        self.flow_versions = {f.path: f.versions for f in plan.flows}
        self.records: Dict[str, NodeRecord] = {}
        self.outputs: Dict[str, Dict[str, str]] = {}
        self.joins: List[JoinResult] = []
        self.items: Dict[str, str] = {}
        self.clock = 0
        self.aborted_by: Optional[str] = None

    def tick(self) -> int:
        self.clock += 1
        return self.clock

    def node_dir(self, node: PlanNode) -> str:
        return os.path.join(self.workdir, node.id)

    # inputs

    def item_path(self, inp: NodeInput) -> str:
        aid = item_artifact_id(inp)
        if aid not in self.items:
            if inp.item.kind == "file":
                path = inp.item.value
            else:
                item_dir = os.path.join(self.workdir, "items", aid)
                os.makedirs(item_dir, exist_ok=True)
                path = os.path.join(item_dir, "item")
                with open(path, "w", encoding="utf-8") as f:
                    f.write(f"{inp.item.value}\n")
            self.items[aid] = path
            self.recorder.artifact_created(
                aid,
                self.flow_versions.get(inp.node, []),
                value=artifact_value(path, None if inp.item.kind == "file" else self.workdir),
            )
        return self.items[aid]

    def record_inputs(self, node: PlanNode):
        for inp in node.inputs:
            if inp.kind == "item":
                self.item_path(inp)
                self.recorder.data_used(node.id, item_artifact_id(inp), node.versions, role=inp.port)
            elif inp.kind == "control":
                self.recorder.triggered(node.id, inp.node, node.versions)
            elif inp.node_port in self.outputs.get(inp.node, {}):
                producer = self.nodes[inp.node]
                self.recorder.data_used(node.id, artifact_id(producer, inp.node_port), node.versions, role=inp.port)

    def used_artifacts(self, node: PlanNode) -> List[str]:
        used = []
        for inp in node.inputs:
            if inp.kind == "item":
                used.append(item_artifact_id(inp))
            elif inp.kind == "node" and inp.node_port in self.outputs.get(inp.node, {}):
                used.append(artifact_id(self.nodes[inp.node], inp.node_port))
        return used

    # preparing work

    def prepare(self, node: PlanNode) -> Optional[Callable[[], object]]:
        """Work for a ready node, or None when it cannot run."""
        statuses = [self.records[inp.node].status for inp in node.inputs if inp.kind != "item"]
        if node.kind == "connector":
            if "NotRun" in statuses:
                return None
            sources = []
            for inp in node.inputs:
                rec = self.records[inp.node]
                if rec.status == "Success":
                    path = self.outputs[inp.node].get(inp.node_port) if inp.kind == "node" else None
                    sources.append((inp.port, Data(path)))
                else:
                    sources.append((inp.port, rec.signal))
            return lambda: transfer(node, sources, self.adapter, self.config, self.node_dir(node))

        if node.kind == "join":
            if any(s not in ("Success", "Ignored") for s in statuses):
                return None
            parts = {
                int(inp.port): self.outputs[inp.node].get(inp.node_port)
                if self.records[inp.node].status == "Success"
                else None
                for inp in node.inputs
            }
            return lambda: self.join(node, parts)

        if any(s != "Success" for s in statuses):
            return None
        inputs = {}
        for inp in node.inputs:
            if inp.kind == "item":
                inputs[inp.port] = self.item_path(inp)
            else:
                inputs[inp.port] = self.outputs[inp.node].get(inp.node_port)
        ctx = TaskContext(adapter=self.adapter, config=self.config, inputs=inputs, node_dir=self.node_dir(node))
        if node.kind == "mapreduce" and self.adapter.kind == "shell":
            return lambda: run_mapreduce(node, ctx)
        return lambda: execute_task(node, ctx)

    def join(self, node: PlanNode, parts: Dict[int, Optional[str]]) -> TaskOutcome:
        if not node.outputs:
            return TaskOutcome(status="Success")
        port = node.outputs[0]
        expansion = self.expansions[node.path.rpartition(".")[0]]
        destino = os.path.join(self.node_dir(node), "out", node.config.destino or port)
        try:
            manifest = join_manifest(expansion, node.path, parts, node.config.formato or "concat", destino)
            path = apply_join(manifest)
        except (JoinError, OSError) as e:
            logger.error("%s: %s", node.id, e)
            signal = FailureSignal(origin=node.id, attempt_count=1, reason="nonzero_exit")
            return TaskOutcome(status="Failed", signal=signal)
        return TaskOutcome(status="Success", outputs={port: path})

    def relative(self, path: str) -> str:
        return os.path.relpath(path, self.workdir).replace(os.sep, "/")

    # recording

    def launch(self, node: PlanNode) -> int:
        reset_dir(self.node_dir(node))
        started = self.tick()
        self.recorder.process_start(node.id, node.versions, node.flows)
        self.record_inputs(node)
        return started

    def not_run(self, node: PlanNode):
        logger.info("%s not run", node.id)
        self.records[node.id] = NodeRecord(
            node=node.id, kind=node.kind, instance_index=node.instance_index, status="NotRun"
        )
        self.outputs[node.id] = {}

    def complete(self, node: PlanNode, outcome, started: int):
        source = outcome.source if isinstance(outcome, Delivery) else None
        outputs = dict(outcome.outputs) if outcome.status == "Success" else {}
        self.outputs[node.id] = outputs
        self.records[node.id] = NodeRecord(
            node=node.id,
            kind=node.kind,
            instance_index=node.instance_index,
            status=outcome.status,
            attempts=outcome.attempts,
            outputs={port: self.relative(path) for port, path in outputs.items()},
            signal=outcome.signal,
            delivered_from=source,
            started=started,
            finished=self.tick(),
        )
        self.recorder.process_end(node.id, node.versions, outcome.status, len(outcome.attempts))
        if node.kind == "join" and outputs:
            self.joins.append(
                JoinResult(
                    node=node.id,
                    port=node.path,
                    formato=node.config.formato or "concat",
                    parts=[int(inp.port) for inp in node.inputs if self.records[inp.node].status == "Success"],
                    artifact=self.relative(outputs[node.outputs[0]]),
                )
            )
        if node.kind == "connector":
            derived = [
                artifact_id(self.nodes[inp.node], inp.node_port)
                for inp in node.inputs
                if inp.port == source and inp.kind == "node" and inp.node_port in self.outputs.get(inp.node, {})
            ][:1]
        else:
            derived = self.used_artifacts(node)
        for port, path in outputs.items():
            self.recorder.artifact_created(
                artifact_id(node, port),
                node.port_versions.get(port, node.versions),
                value=artifact_value(path, self.workdir),
                process=node.id,
                role=port,
                flows=node.flows,
                derived_from=derived,
                exports=node.exports.get(port, []),
            )

    def consumed_by_propagation(self, nid: str) -> bool:
        return any(
            self.nodes[c].kind == "connector" and self.nodes[c].config.propagation for c in self.consumers[nid]
        )

    def failed_worker(self, node: PlanNode, error: BaseException) -> TaskOutcome:
        logger.error("%s crashed: %s", node.id, error)
        signal = FailureSignal(origin=node.id, attempt_count=1, reason="nonzero_exit")
        return TaskOutcome(status="Failed", signal=signal)

    # scheduling

    def run(self) -> RunReport:
        os.makedirs(self.workdir, exist_ok=True)
        waiting = {nid: len(producers) for nid, producers in self.producers.items()}
        ready: List[int] = sorted(self.rank[nid] for nid, n in waiting.items() if n == 0)
        in_flight: Dict[Future, tuple] = {}
        busy_groups: Set[str] = set()

        def finished(nid: str):
            progress_bar.update(1)
            for consumer in self.consumers[nid]:
                waiting[consumer] -= 1
                if waiting[consumer] == 0:
                    bisect.insort(ready, self.rank[consumer])

        progress_bar = tqdm(
            total=len(self.nodes),
            unit="node",
            desc=self.plan.workflow,
            file=sys.stderr,
            disable=not self.config.progress,
        )
        with ThreadPoolExecutor(max_workers=self.config.jobs) as pool:
            while in_flight or (ready and self.aborted_by is None):
                launched = self.aborted_by is None
                while launched and len(in_flight) < self.config.jobs:
                    launched = False
                    for position, rank in enumerate(ready):
                        node = self.nodes[self.plan.order[rank]]
                        if node.config.group is not None and node.config.group in busy_groups:
                            continue
                        del ready[position]
                        work = self.prepare(node)
                        if work is None:
                            self.not_run(node)
                            finished(node.id)
                        else:
                            started = self.launch(node)
                            if node.config.group is not None:
                                busy_groups.add(node.config.group)
                            in_flight[pool.submit(work)] = (node, started)
                        launched = True
                        break
                if not in_flight:
                    continue
                done, _ = wait(in_flight, return_when=FIRST_COMPLETED)
                for future in sorted(done, key=lambda f: self.rank[in_flight[f][0].id]):
                    node, started = in_flight.pop(future)
                    busy_groups.discard(node.config.group)
                    try:
                        outcome = future.result()
                    except Exception as e:
                        outcome = self.failed_worker(node, e)
                    self.complete(node, outcome, started)
                    finished(node.id)
                    if outcome.status == "Failed" and not self.consumed_by_propagation(node.id):
                        if self.aborted_by is None:
                            logger.error("%s failed and nothing consumes its signal; aborting the run", node.id)
                            self.aborted_by = node.id
        # nodes never launched after an abort
        for nid in self.plan.order:
            if nid not in self.records:
                self.not_run(self.nodes[nid])
                progress_bar.update(1)
        progress_bar.close()

        records = [self.records[nid] for nid in self.plan.order]
        status = "Failed" if any(r.status == "Failed" for r in records) else "Success"
        logger.info("run of %s finished: %s", self.plan.workflow, status)
        return RunReport(
            workflow=self.plan.workflow,
            adapter=self.adapter.kind,
            status=status,
            nodes=records,
            joins=sorted(self.joins, key=lambda j: j.node),
        )


def run(
    plan: ExecutionPlan,
    config: RunConfig,
    recorder: Optional[ProvenanceRecorder] = None,
    adapter: Optional[Adapter] = None,
) -> RunReport:
    """Execute `plan` locally; up to `config.jobs` ready nodes run at once."""
    adapter = adapter or make_adapter(config)
    if recorder is None:
        recorder = ProvenanceRecorder(plan.workflow, adapter.kind, plan.versions, plan.flows)
    return _Run(plan, config, adapter, recorder).run()
