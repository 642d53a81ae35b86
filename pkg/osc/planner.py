"""Turn a validated workflow into an ExecutionPlan.

Parameter sweeps expand into the cross product of their Bifurcacao datasets.
Every (task, instance) and (connector, instance) pair becomes a plan node,
every Juncao output a join node, and MapReduce flows a single node. Plain
flows are transparent: their bodies expand inline and are wired through
`Binding`s.
"""

import itertools
import logging
import os
import re
import string
from collections import Counter
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Tuple, Union

import networkx as nx

from .model import (
    DependencyKind,
    Direction,
    ElementInstance,
    ElementKind,
    PropertyValue,
    ValueKind,
    WorkflowModel,
    join_path,
)
from .typesystem import (
    FLUXO,
    ResolvedElement,
    ResolvedInterface,
    TypeRegistry,
    builtin_style,
    data_output_ports,
    is_mapreduce,
    is_sweep,
)
from .types import (
    ExecutionPlan,
    FlowInfo,
    InstanceAssignment,
    JoinManifest,
    JoinPart,
    NodeConfig,
    NodeInput,
    PlanEdge,
    PlanNode,
    ScopeRef,
    SweepBinding,
    SweepExpansion,
    SweepItem,
)

logger = logging.getLogger(__name__)

DEFAULT_LOG_PATTERNS = [r"(?i)\berror\b"]
RUNTIME_FIELDS = ("input", "output", "instance", "workdir")
FORK_PROPERTIES = ("diretorio", "valores", "repeticoes")


class PlanError(ValueError):
    pass


class BindError(ValueError):
    pass


class JoinError(ValueError):
    pass


@dataclass(frozen=True)
class DirectoryDataset:
    path: str


@dataclass(frozen=True)
class ValueDataset:
    values: Tuple[str, ...]


@dataclass(frozen=True)
class RepetitionDataset:
    count: int


Dataset = Union[DirectoryDataset, ValueDataset, RepetitionDataset]


def dataset_of(port: ResolvedInterface) -> Optional[Dataset]:
    """The dataset bound on a Bifurcacao port, if any."""
    if port.value("diretorio") is not None:
        return DirectoryDataset(port.value("diretorio"))
    if port.value("valores") is not None:
        return ValueDataset(tuple(port.value("valores")))
    if port.value("repeticoes") is not None:
        return RepetitionDataset(port.value("repeticoes"))
    return None


def parse_bind(text: str) -> Tuple[str, Dataset]:
    """Parse `F.port=dir:PATH`, `F.port=values:a,b`, `F.port=repeat:N` or `F.port=PATH`."""
    target, sep, spec = text.partition("=")
    if not sep or not target or not spec:
        raise BindError(f"expected PORT=DATASET, got {text!r}")
    scheme, colon, rest = spec.partition(":")
    if colon and scheme == "dir":
        return target, DirectoryDataset(rest)
    if colon and scheme == "values":
        return target, ValueDataset(tuple(rest.split(",")) if rest else ())
    if colon and scheme == "repeat":
        try:
            return target, RepetitionDataset(int(rest))
        except ValueError:
            raise BindError(f"repeat count must be an integer, got {rest!r}")
    return target, DirectoryDataset(spec)


def _dataset_properties(dataset: Dataset) -> Dict[str, PropertyValue]:
    if isinstance(dataset, DirectoryDataset):
        return {"diretorio": PropertyValue(ValueKind.STRING, dataset.path)}
    if isinstance(dataset, ValueDataset):
        return {"valores": PropertyValue(ValueKind.SET, tuple(dataset.values))}
    return {"repeticoes": PropertyValue(ValueKind.INT, dataset.count)}


def apply_binds(
    model: WorkflowModel, binds: Mapping[str, Dataset], registry: Optional[TypeRegistry] = None
) -> WorkflowModel:
    """Return a copy of `model` whose Bifurcacao ports carry the given datasets."""
    if not binds:
        return model
    pending = dict(binds)
    rebound = _rebind(model, "", pending, registry or builtin_style())
    if pending:
        raise BindError(f"bind target {next(iter(pending))!r} is not a port of the workflow")
    return rebound


def _rebind(level: WorkflowModel, prefix: str, pending: Dict[str, Dataset], registry: TypeRegistry):
    registry = registry.extend(level.type_defs, prefix)
    instances = []
    for inst in level.instances:
        path = join_path(prefix, inst.name)
        interfaces = []
        for point in inst.interfaces:
            target = f"{path}.{point.name}"
            if target in pending:
                if point.kind is not ElementKind.PORT or not any(
                    t in registry and registry.is_subtype(t, "Bifurcacao") for t in point.assigned_types
                ):
                    raise BindError(f"bind target {target!r} is not a Bifurcacao port")
                kept = {
                    name: value
                    for name, value in point.property_values.items()
                    if name.rpartition(".")[2] not in FORK_PROPERTIES
                }
                kept.update(_dataset_properties(pending.pop(target)))
                point = replace(point, property_values=kept)
            interfaces.append(point)
        body = _rebind(inst.body, path, pending, registry) if inst.body is not None else None
        instances.append(replace(inst, interfaces=tuple(interfaces), body=body))
    return replace(level, instances=tuple(instances))


def _items(dataset: Dataset, base_dir: str) -> List[SweepItem]:
    if isinstance(dataset, DirectoryDataset):
        root = dataset.path if os.path.isabs(dataset.path) else os.path.join(base_dir, dataset.path)
        if not os.path.isdir(root):
            raise PlanError(f"dataset directory {root!r} does not exist")
        names = sorted(
            (name for name in os.listdir(root) if os.path.isfile(os.path.join(root, name))),
            key=os.fsencode,
        )
        return [
            SweepItem(kind="file", value=os.path.abspath(os.path.join(root, name)), position=i)
            for i, name in enumerate(names)
        ]
    if isinstance(dataset, ValueDataset):
        return [SweepItem(kind="value", value=str(v), position=i) for i, v in enumerate(dataset.values)]
    if dataset.count < 0:
        raise PlanError(f"repetition count must be >= 0, got {dataset.count}")
    return [SweepItem(kind="repetition", value=i, position=i) for i in range(dataset.count)]


def _binding_kind(dataset: Dataset) -> str:
    if isinstance(dataset, DirectoryDataset):
        return "directory"
    if isinstance(dataset, ValueDataset):
        return "values"
    return "repetition"


def expand_sweep(
    flow: ResolvedElement, bindings: Optional[Mapping[str, Dataset]] = None, base_dir: str = "."
) -> SweepExpansion:
    """Cross product of the flow's Bifurcacao datasets, in port declaration order."""
    if not is_sweep(flow):
        raise PlanError(f"{flow.path} is not a parameter-sweep flow")
    bindings = bindings or {}
    sweep_bindings = []
    for port in flow.instance.ports(Direction.INPUT):
        rport = flow.interfaces[port.name]
        if not rport.has("Bifurcacao"):
            continue
        dataset = bindings.get(port.name) or dataset_of(rport)
        if dataset is None:
            raise PlanError(f"{rport.path}: Bifurcacao port has no dataset")
        items = _items(dataset, base_dir)
        if not items:
            raise PlanError(f"{rport.path}: empty dataset")
        sweep_bindings.append(
            SweepBinding(
                port=port.name,
                kind=_binding_kind(dataset),
                source=dataset.path if isinstance(dataset, DirectoryDataset) else None,
                items=items,
            )
        )
    instances = [
        InstanceAssignment(
            instance_index=i,
            items={b.port: item for b, item in zip(sweep_bindings, combo)},
        )
        for i, combo in enumerate(itertools.product(*(b.items for b in sweep_bindings)))
    ]
    logger.debug("expanded %s into %d instances", flow.path, len(instances))
    return SweepExpansion(
        flow=flow.path,
        modo=flow.value("modo", "paralelo"),
        bindings=sweep_bindings,
        instances=instances,
    )


def join_manifest(
    expansion: SweepExpansion,
    port: str,
    outputs: Mapping[int, Optional[str]],
    formato: str = "concat",
    destino: str = "",
) -> JoinManifest:
    """Order the instance outputs of a join; `None` marks an Ignored instance."""
    parts = []
    for assignment in expansion.instances:
        index = assignment.instance_index
        if index not in outputs:
            raise JoinError(f"{port}: instance {index} has not completed")
        if outputs[index] is not None:
            parts.append(JoinPart(instance_index=index, path=outputs[index]))
    return JoinManifest(port=port, formato=formato, parts=parts, destino=destino)


def template_fields(template: str) -> List[str]:
    try:
        return [name for _, name, _, _ in string.Formatter().parse(template) if name is not None]
    except ValueError as e:
        raise PlanError(f"malformed command template {template!r}: {e}")


def check_template(path: str, template: str, params: Mapping, inputs: List[str], outputs: List[str]):
    for name in template_fields(template):
        root, rest = re.match(r"([^.\[]*)(.*)", name).groups()
        if root in ("input", "output"):
            key = re.fullmatch(r"\[([^\]]+)\]", rest)
            ports = inputs if root == "input" else outputs
            if key is None or key.group(1) not in ports:
                raise PlanError(f"{path}: command references unknown port in {{{name}}}")
        elif root in RUNTIME_FIELDS:
            continue
        elif not root or root not in params:
            raise PlanError(f"{path}: command references absent property {{{name}}}")


def _template_value(value):
    if isinstance(value, list):
        return " ".join(str(v) for v in value)
    return value


@dataclass
class _Frame:
    level: WorkflowModel
    prefix: str
    index: int = 0
    scopes: Tuple[ScopeRef, ...] = ()
    flows: Tuple[str, ...] = ()
    group: Optional[str] = None
    parent: Optional["_Frame"] = None
    owner: Optional[ElementInstance] = None
    assignment: Optional[InstanceAssignment] = None

    def child(self, inst: ElementInstance, **changes) -> "_Frame":
        path = join_path(self.prefix, inst.name)
        if inst.body is None:
            raise PlanError(f"flow {path} has no body")
        frame = _Frame(
            level=inst.body,
            prefix=path,
            index=changes.pop("index", self.index),
            scopes=changes.pop("scopes", self.scopes),
            flows=self.flows + (node_id(path, self.index),),
            group=changes.pop("group", self.group),
            parent=self,
            owner=inst,
            assignment=changes.pop("assignment", None),
        )
        return frame


def node_id(path: str, index: int) -> str:
    return f"{path}#{index}"


def join_node_id(flow_path: str, port: str, index: int) -> str:
    return f"{flow_path}.{port}.join#{index}"


class _Builder:
    def __init__(self, model: WorkflowModel, resolved: List[ResolvedElement], expansions: List[SweepExpansion]):
        self.model = model
        self.by_path = {r.path: r for r in resolved}
        self.expansions = {e.flow: e for e in expansions}
        self.nodes: List[PlanNode] = []
        self.flows: Dict[str, FlowInfo] = {}

    def element(self, frame: _Frame, name: str) -> Tuple[ElementInstance, ResolvedElement]:
        inst = frame.level.instance(name)
        return inst, self.by_path[join_path(frame.prefix, name)]

    # routing

    def producer(self, frame: _Frame, name: str, port: str) -> Tuple[str, str]:
        """Node and port that materialize output `port` of instance `name`."""
        inst, r = self.element(frame, name)
        if is_sweep(r):
            return join_node_id(r.path, port, frame.index), port
        if r.structure_type == FLUXO and not is_mapreduce(r):
            inner = frame.child(inst)
            for binding in inst.body.bindings:
                if binding.flow_port == port:
                    return self.producer(inner, *binding.inner_ref)
            raise PlanError(f"flow output {r.path}.{port} is not bound to an inner port")
        return node_id(r.path, frame.index), port

    def feed(self, frame: _Frame, name: str, port: str) -> NodeInput:
        """What feeds input `port` of instance `name`."""
        for att in frame.level.attachments:
            if att.task_ref == (name, port):
                connector, role = att.connector_ref
                return NodeInput(
                    port=port,
                    kind="control" if att.dependency_kind is DependencyKind.CONTROL else "node",
                    node=node_id(join_path(frame.prefix, connector), frame.index),
                    node_port=role,
                )
        for binding in frame.level.bindings:
            if binding.inner_ref == (name, port):
                owner = frame.owner
                if frame.assignment is not None and binding.flow_port in frame.assignment.items:
                    return NodeInput(
                        port=port,
                        kind="item",
                        node=frame.prefix,
                        node_port=binding.flow_port,
                        item=frame.assignment.items[binding.flow_port],
                    )
                fed = self.feed(frame.parent, owner.name, binding.flow_port)
                return fed.model_copy(update={"port": port})
        raise PlanError(f"input port {join_path(frame.prefix, name)}.{port} has no feed")

    # nodes

    def config(self, frame: _Frame, r: ResolvedElement, inputs: List[str], outputs: List[str]) -> NodeConfig:
        params = {
            name: _template_value(prop.python())
            for name, prop in r.effective_properties.items()
            if prop is not None
        }
        config = NodeConfig(params=params, group=frame.group, propagation=r.has("Propagacao"))
        if r.has("RedundanciaTemporal"):
            config.retries = r.value("num_tentativas")
            config.ignorar = bool(r.value("ignorar", False))
        if r.has("MonitoramentoDeTempo"):
            config.timeout = float(r.value("tempo_limite"))
        if r.has("Log"):
            config.log_patterns = list(r.value("padroes") or DEFAULT_LOG_PATTERNS)
            for pattern in config.log_patterns:
                try:
                    re.compile(pattern)
                except re.error as e:
                    raise PlanError(f"{r.path}: invalid log pattern {pattern!r}: {e}")
        if r.has("Mascaramento"):
            config.copies = r.value("num_copias")
        command = r.value("comando")
        if command is not None:
            check_template(r.path, command, params, inputs, outputs)
            config.command = command
        return config

    def add(self, frame: _Frame, r: ResolvedElement, kind: str, inputs, outputs, config, **extra) -> PlanNode:
        node = PlanNode(
            id=extra.pop("id", node_id(r.path, frame.index)),
            path=extra.pop("path", r.path),
            kind=kind,
            instance_index=frame.index,
            scopes=list(frame.scopes),
            flows=list(extra.pop("flows", frame.flows)),
            inputs=inputs,
            outputs=outputs,
            config=config,
            versions=extra.pop("versions", r.versions("OPM")),
            port_versions=extra.pop(
                "port_versions",
                {name: rp.versions("OPM") for name, rp in r.interfaces.items() if rp.has("OPM")},
            ),
        )
        self.nodes.append(node)
        return node

    def add_task(self, frame: _Frame, inst: ElementInstance, r: ResolvedElement, kind: str = "task"):
        inputs = [self.feed(frame, inst.name, p.name) for p in inst.ports(Direction.INPUT)]
        outputs = [p.name for p in data_output_ports(frame.level, inst)]
        config = self.config(frame, r, [i.port for i in inputs], outputs)
        if kind == "mapreduce":
            steps = {}
            if inst.body is None:
                raise PlanError(f"MapReduce flow {r.path} has no body")
            for step in ("map", "reduce"):
                body_inst = inst.body.instance(step)
                if body_inst is None or body_inst.element_kind is not ElementKind.TASK:
                    raise PlanError(f"MapReduce flow {r.path} needs a {step!r} task in its body")
                steps[step] = self.by_path[join_path(r.path, step)].value("comando")
            config.map_command = steps["map"]
            config.reduce_command = steps["reduce"]
        self.add(frame, r, kind, inputs, outputs, config)

    def add_connector(self, frame: _Frame, inst: ElementInstance, r: ResolvedElement):
        inputs = []
        for role in inst.roles(Direction.SOURCE):
            for att in frame.level.attachments:
                if att.connector_ref != (inst.name, role.name) or att.keyword != "to":
                    continue
                producer, port = self.producer(frame, *att.task_ref)
                inputs.append(
                    NodeInput(
                        port=role.name,
                        kind="control" if att.dependency_kind is DependencyKind.CONTROL else "node",
                        node=producer,
                        node_port=port,
                    )
                )
        outputs = [role.name for role in inst.roles(Direction.DESTINATION)]
        self.add(frame, r, "connector", inputs, outputs, self.config(frame, r, [], []))

    def add_flow_info(self, r: ResolvedElement):
        if r.path not in self.flows:
            self.flows[r.path] = FlowInfo(
                path=r.path,
                sweep=is_sweep(r),
                versions=r.versions("OPM"),
                alta=r.versions("AltaGranularidade"),
                baixa=r.versions("BaixaGranularidade"),
            )

    def add_sweep(self, frame: _Frame, inst: ElementInstance, r: ResolvedElement):
        expansion = self.expansions.get(r.path)
        if expansion is None:
            raise PlanError(f"no sweep expansion for {r.path}")
        size = expansion.size()
        group = frame.group
        if group is None and expansion.modo == "sequencial":
            group = node_id(r.path, frame.index)
        children = []
        for assignment in expansion.instances:
            child = frame.child(
                inst,
                index=frame.index * size + assignment.instance_index,
                scopes=frame.scopes + (ScopeRef(flow=r.path, index=assignment.instance_index),),
                group=group,
                assignment=assignment,
            )
            self.expand(child)
            children.append(child)

        data_ports = {p.name for p in data_output_ports(frame.level, inst)}
        for port in inst.ports(Direction.OUTPUT):
            binding = next((b for b in inst.body.bindings if b.flow_port == port.name), None)
            if binding is None:
                raise PlanError(f"flow output {r.path}.{port.name} is not bound to an inner port")
            data = port.name in data_ports
            parts = []
            for child in children:
                producer, producer_port = self.producer(child, *binding.inner_ref)
                parts.append(
                    NodeInput(
                        port=str(child.assignment.instance_index),
                        kind="node" if data else "control",
                        node=producer,
                        node_port=producer_port,
                    )
                )
            rport = r.interfaces[port.name]
            config = NodeConfig(group=frame.group)
            if data:
                config.formato = rport.value("formato", "concat")
                config.destino = rport.value("destino")
            self.add(
                frame,
                r,
                "join",
                parts,
                [port.name] if data else [],
                config,
                id=join_node_id(r.path, port.name, frame.index),
                path=f"{r.path}.{port.name}",
                flows=frame.flows + (node_id(r.path, frame.index),),
                versions=rport.versions("OPM") if rport.has("OPM") else r.versions("OPM"),
                port_versions={},
            )

    def mark_exports(self, frame: _Frame, inst: ElementInstance, r: ResolvedElement):
        flow = node_id(r.path, frame.index)
        by_id = {node.id: node for node in self.nodes}
        for port in inst.ports(Direction.OUTPUT):
            if not any(b.flow_port == port.name for b in inst.body.bindings):
                continue
            producer, producer_port = self.producer(frame, inst.name, port.name)
            by_id[producer].exports.setdefault(producer_port, []).append(flow)

    def expand(self, frame: _Frame):
        for inst in frame.level.instances:
            r = self.by_path[join_path(frame.prefix, inst.name)]
            if inst.element_kind is ElementKind.CONNECTOR:
                self.add_connector(frame, inst, r)
            elif is_mapreduce(r):
                self.add_task(frame, inst, r, kind="mapreduce")
            elif is_sweep(r):
                self.add_flow_info(r)
                self.add_sweep(frame, inst, r)
            elif r.structure_type == FLUXO:
                self.add_flow_info(r)
                self.expand(frame.child(inst))
                self.mark_exports(frame, inst, r)
            else:
                self.add_task(frame, inst, r)


def declared_versions(resolved: List[ResolvedElement]) -> List[str]:
    versions = set()
    for r in resolved:
        for type_name in ("OPM", "AltaGranularidade", "BaixaGranularidade"):
            versions.update(r.versions(type_name))
        for rp in r.interfaces.values():
            versions.update(rp.versions("OPM"))
    return sorted(versions)


def build_dag(
    model: WorkflowModel, resolved: List[ResolvedElement], expansions: List[SweepExpansion]
) -> ExecutionPlan:
    builder = _Builder(model, resolved, expansions)
    builder.expand(_Frame(level=model, prefix=""))
    nodes = builder.nodes

    rank = {node.id: i for i, node in enumerate(nodes)}
    if len(rank) != len(nodes):
        duplicate = next(i for i, count in Counter(n.id for n in nodes).items() if count > 1)
        raise PlanError(f"duplicate plan node {duplicate!r}")
    edges = []
    for node in nodes:
        for inp in node.inputs:
            if inp.kind == "item":
                continue
            if inp.node not in rank:
                raise PlanError(f"{node.id} consumes unknown node {inp.node!r}")
            edges.append(
                PlanEdge(
                    producer=inp.node,
                    consumer=node.id,
                    kind="data" if inp.kind == "node" else "control",
                    producer_port=inp.node_port,
                    consumer_port=inp.port,
                )
            )

    graph = nx.DiGraph()
    graph.add_nodes_from(rank)
    graph.add_edges_from((e.producer, e.consumer) for e in edges)
    try:
        order = list(nx.lexicographical_topological_sort(graph, key=rank.__getitem__))
    except nx.NetworkXUnfeasible:
        cycle = nx.find_cycle(graph)
        names = " -> ".join([u for u, _ in cycle] + [cycle[0][0]])
        raise PlanError(f"execution graph has a cycle: {names}")

    logger.info("planned %s: %d nodes, %d edges", model.name, len(nodes), len(edges))
    return ExecutionPlan(
        workflow=model.name,
        nodes=nodes,
        edges=edges,
        order=order,
        expansions=sorted(expansions, key=lambda e: e.flow),
        flows=list(builder.flows.values()),
        versions=declared_versions(resolved),
    )


def plan_workflow(model: WorkflowModel, resolved: List[ResolvedElement], base_dir: str = ".") -> ExecutionPlan:
    """Expand every sweep with its bound datasets, then build the DAG."""
    expansions = [expand_sweep(r, base_dir=base_dir) for r in resolved if is_sweep(r)]
    return build_dag(model, resolved, expansions)
