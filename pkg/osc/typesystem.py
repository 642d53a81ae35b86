import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import networkx as nx

from .model import (
    BUILTIN_SPAN,
    DependencyKind,
    Direction,
    ElementInstance,
    ElementKind,
    InterfacePoint,
    PropertyDecl,
    PropertyValue,
    SourceSpan,
    TypeDef,
    ValueKind,
    WorkflowModel,
    join_path,
    walk_levels,
)

logger = logging.getLogger(__name__)

EXECUTAVEL = "Executavel"
FLUXO = "Fluxo"
STRUCTURE_TYPES = (EXECUTAVEL, FLUXO)
TASK_PARALLELISM = ("MemoriaCompartilhada", "MemoriaDistribuida")
DATA_PARALLELISM = ("VarreduraDeParametros", "MapReduce")
DETECTION_TYPES = ("Log", "MonitoramentoDeTempo")
GRANULARITY_TYPES = ("AltaGranularidade", "BaixaGranularidade")

RULES = tuple(f"R{i}" for i in range(1, 15))


def _decl(name, kind, default=None, choices=()):
    if default is not None and not isinstance(default, PropertyValue):
        default = PropertyValue(kind, default)
    return PropertyDecl(name=name, kind=kind, default=default, choices=tuple(choices))


_TC = (ElementKind.TASK, ElementKind.CONNECTOR)


def builtin_style() -> "TypeRegistry":
    """The predefined OSC style: structure, parallelism and quality types."""
    T, C, P, R = ElementKind.TASK, ElementKind.CONNECTOR, ElementKind.PORT, ElementKind.ROLE
    INT, FLOAT, STRING, BOOL, SET, ENUM = (
        ValueKind.INT,
        ValueKind.FLOAT,
        ValueKind.STRING,
        ValueKind.BOOL,
        ValueKind.SET,
        ValueKind.ENUM,
    )
    defs = [
        TypeDef(EXECUTAVEL, T, properties=(_decl("comando", STRING),), powertype_class="Structure"),
        TypeDef(FLUXO, T, powertype_class="Structure"),
        TypeDef(
            "MemoriaCompartilhada",
            T,
            extends=(EXECUTAVEL,),
            properties=(_decl("num_threads", INT, 1),),
            powertype_class="TaskParallelism",
            applies_to=_TC,
        ),
        TypeDef(
            "MemoriaDistribuida",
            T,
            extends=(EXECUTAVEL,),
            properties=(_decl("num_nos", INT, 1), _decl("procs_por_no", INT, 1)),
            powertype_class="TaskParallelism",
            applies_to=_TC,
        ),
        TypeDef(
            "VarreduraDeParametros",
            T,
            extends=(FLUXO,),
            properties=(_decl("modo", ENUM, "paralelo", ("sequencial", "paralelo")),),
            powertype_class="DataParallelism",
            applies_to=_TC,
        ),
        TypeDef("MapReduce", T, extends=(FLUXO,), powertype_class="DataParallelism", applies_to=_TC),
        TypeDef(
            "Bifurcacao",
            P,
            properties=(_decl("diretorio", STRING), _decl("valores", SET), _decl("repeticoes", INT)),
            powertype_class="DataParallelism",
        ),
        TypeDef(
            "Juncao",
            P,
            properties=(
                _decl("formato", ENUM, "concat", ("include", "merge", "concat")),
                _decl("destino", STRING),
            ),
            powertype_class="DataParallelism",
        ),
        TypeDef("Log", T, properties=(_decl("padroes", SET),), powertype_class="FaultDetection", applies_to=_TC),
        TypeDef(
            "MonitoramentoDeTempo",
            T,
            properties=(_decl("tempo_limite", FLOAT),),
            powertype_class="FaultDetection",
            applies_to=_TC,
        ),
        TypeDef(
            "RedundanciaTemporal",
            T,
            properties=(_decl("num_tentativas", INT, 3), _decl("ignorar", BOOL, False)),
            powertype_class="FaultCorrection",
            applies_to=_TC,
        ),
        TypeDef("Propagacao", C, powertype_class="FaultCorrection", applies_to=_TC),
        TypeDef(
            "Mascaramento",
            T,
            properties=(_decl("num_copias", INT, 3),),
            powertype_class="Masking",
            applies_to=_TC,
        ),
        TypeDef(
            "OPM",
            T,
            properties=(_decl("versao", SET),),
            powertype_class="Provenance",
            applies_to=(T, C, P, R),
        ),
        TypeDef(
            "AltaGranularidade",
            T,
            properties=(_decl("versao", SET),),
            powertype_class="Granularity",
            applies_to=_TC,
        ),
        TypeDef(
            "BaixaGranularidade",
            T,
            properties=(_decl("versao", SET),),
            powertype_class="Granularity",
            applies_to=_TC,
        ),
    ]
    return TypeRegistry({td.name: td for td in defs})


class ResolutionError(ValueError):
    def __init__(self, path: str, span: SourceSpan, message: str):
        self.path = path
        self.span = span
        self.message = message
        super().__init__(str(self))

    def __str__(self):
        return f"{self.span}: {self.path or '<model>'}: {self.message}"


class TypeRegistry:
    def __init__(self, defs: Dict[str, TypeDef]):
        self.defs = dict(defs)
        self._ancestors: Dict[str, Tuple[str, ...]] = {}

    def __contains__(self, name: str) -> bool:
        return name in self.defs

    def __getitem__(self, name: str) -> TypeDef:
        return self.defs[name]

    def names(self) -> List[str]:
        return list(self.defs)

    def ancestors(self, name: str) -> Tuple[str, ...]:
        """`name` followed by every supertype, depth first, without repeats."""
        if name not in self._ancestors:
            order: List[str] = []

            def visit(n):
                if n in order:
                    return
                order.append(n)
                for parent in self.defs[n].extends:
                    visit(parent)

            visit(name)
            self._ancestors[name] = tuple(order)
        return self._ancestors[name]

    def is_subtype(self, name: str, ancestor: str) -> bool:
        return ancestor in self.ancestors(name)

    def extend(self, type_defs: Iterable[TypeDef], scope: str = "") -> "TypeRegistry":
        added = list(type_defs)
        if not added:
            return self
        defs = dict(self.defs)
        for td in added:
            if td.name in defs:
                raise ResolutionError(scope, td.span, f"type {td.name!r} is already defined")
            defs[td.name] = td
        graph = nx.DiGraph()
        for td in added:
            graph.add_node(td.name)
            for parent in td.extends:
                if parent not in defs:
                    raise ResolutionError(scope, td.span, f"unknown type {parent!r} in extends of {td.name!r}")
                graph.add_edge(td.name, parent)
        try:
            cycle = nx.find_cycle(graph)
        except nx.NetworkXNoCycle:
            cycle = None
        if cycle:
            names = " -> ".join([u for u, _ in cycle] + [cycle[0][0]])
            raise ResolutionError(scope, defs[cycle[0][0]].span, f"cyclic extends chain {names}")
        for td in added:
            hosts: List[ElementKind] = []
            for parent in td.extends:
                ptd = defs[parent]
                if td.element_kind is not ptd.element_kind and td.element_kind not in ptd.hosts():
                    raise ResolutionError(
                        scope,
                        td.span,
                        f"{td.element_kind.value} type {td.name!r} cannot extend "
                        f"{ptd.element_kind.value} type {parent!r}",
                    )
                hosts.extend(ptd.hosts())
            if hosts and set(hosts) != {td.element_kind}:
                kinds = tuple(k for k in ElementKind if k in hosts)
                defs[td.name] = TypeDef(
                    name=td.name,
                    element_kind=td.element_kind,
                    extends=td.extends,
                    properties=td.properties,
                    powertype_class=td.powertype_class,
                    applies_to=kinds,
                    span=td.span,
                )
        return TypeRegistry(defs)


@dataclass
class _Resolution:
    types: Tuple[str, ...]
    effective: Dict[str, Optional[PropertyValue]]
    qualified: Dict[Tuple[str, str], PropertyValue]


@dataclass(frozen=True)
class ResolvedInterface:
    path: str
    point: InterfacePoint
    types: Tuple[str, ...]
    effective_properties: Dict[str, Optional[PropertyValue]]
    qualified: Dict[Tuple[str, str], PropertyValue] = field(default_factory=dict)

    def has(self, type_name: str) -> bool:
        return type_name in self.types

    def value(self, name: str, default=None):
        prop = self.effective_properties.get(name)
        return default if prop is None else prop.python()

    def versions(self, type_name: str = "OPM") -> List[str]:
        return _versions(self.types, self.effective_properties, self.qualified, type_name)


@dataclass(frozen=True)
class ResolvedElement:
    path: str
    instance: ElementInstance
    structure_type: Optional[str]
    effective_properties: Dict[str, Optional[PropertyValue]]
    quality_attributes: FrozenSet[str]
    types: Tuple[str, ...] = ()
    # structure types reached through non-parallelism types only
    declared_structures: Tuple[str, ...] = ()
    qualified: Dict[Tuple[str, str], PropertyValue] = field(default_factory=dict)
    interfaces: Dict[str, ResolvedInterface] = field(default_factory=dict)

    @property
    def kind(self) -> ElementKind:
        return self.instance.element_kind

    def has(self, type_name: str) -> bool:
        return type_name in self.types

    def value(self, name: str, default=None):
        prop = self.effective_properties.get(name)
        return default if prop is None else prop.python()

    def versions(self, type_name: str = "OPM") -> List[str]:
        return _versions(self.types, self.effective_properties, self.qualified, type_name)


def _versions(types, effective, qualified, type_name) -> List[str]:
    if type_name not in types:
        return []
    prop = qualified.get((type_name, "versao")) or effective.get("versao")
    return list(prop.value) if prop is not None and prop.kind is ValueKind.SET else []


def _coerce(value: PropertyValue, decl: PropertyDecl) -> Optional[PropertyValue]:
    if value.kind is decl.kind:
        if decl.choices and value.value not in decl.choices:
            return None
        return value
    if decl.kind is ValueKind.FLOAT and value.kind is ValueKind.INT:
        return PropertyValue(ValueKind.FLOAT, float(value.value))
    if decl.kind is ValueKind.ENUM and value.kind is ValueKind.STRING and value.value in decl.choices:
        return PropertyValue(ValueKind.ENUM, value.value)
    return None


def _resolve_point(
    path: str,
    kind: ElementKind,
    assigned: Tuple[str, ...],
    props: Dict[str, PropertyValue],
    span: SourceSpan,
    registry: TypeRegistry,
) -> _Resolution:
    types: List[str] = []
    for name in assigned:
        if name not in registry:
            raise ResolutionError(path, span, f"unknown type {name!r}")
        td = registry[name]
        if kind not in td.hosts():
            raise ResolutionError(
                path, span, f"{td.element_kind.value} type {name!r} cannot be assigned to a {kind.value}"
            )
        for ancestor in registry.ancestors(name):
            if ancestor not in types:
                types.append(ancestor)

    declared: Dict[str, List[Tuple[str, PropertyDecl]]] = {}
    for type_name in types:
        for decl in registry[type_name].properties:
            declared.setdefault(decl.name, []).append((type_name, decl))

    effective: Dict[str, Optional[PropertyValue]] = {}
    for name, entries in declared.items():
        kinds = {decl.kind for _, decl in entries}
        if len(kinds) > 1:
            owners = ", ".join(t for t, _ in entries)
            raise ResolutionError(path, span, f"property {name!r} has conflicting kinds in {owners}")
        declaring = [t for t, _ in entries]
        # a subtype's declaration refines its supertypes'
        most_derived = [
            (t, decl)
            for t, decl in entries
            if not any(u != t and registry.is_subtype(u, t) for u in declaring)
        ]
        defaults = {decl.default for _, decl in most_derived if decl.default is not None}
        if len(defaults) > 1 and name not in props:
            owners = ", ".join(t for t, decl in most_derived if decl.default is not None)
            raise ResolutionError(path, span, f"conflicting defaults for property {name!r} from {owners}")
        effective[name] = next(iter(defaults)) if defaults else None

    qualified: Dict[Tuple[str, str], PropertyValue] = {}
    for name, value in props.items():
        type_name, _, prop_name = name.rpartition(".")
        if type_name:
            if type_name not in types:
                raise ResolutionError(path, span, f"{name!r} qualifies a type the element does not carry")
            decl = next(
                (d for t in registry.ancestors(type_name) for d in registry[t].properties if d.name == prop_name),
                None,
            )
            if decl is None:
                raise ResolutionError(path, span, f"type {type_name!r} declares no property {prop_name!r}")
            coerced = _coerce(value, decl)
            if coerced is None:
                raise ResolutionError(path, span, f"property {name!r} expects {decl.kind.value}, got {value.kind.value}")
            qualified[(type_name, prop_name)] = coerced
            continue
        entries = declared.get(name)
        if entries is None:
            effective[name] = value
            continue
        coerced = _coerce(value, entries[0][1])
        if coerced is None:
            decl = entries[0][1]
            expected = decl.kind.value
            if decl.choices:
                expected += " {" + ", ".join(decl.choices) + "}"
            raise ResolutionError(path, span, f"property {name!r} expects {expected}, got {value.python()!r}")
        effective[name] = coerced
    return _Resolution(tuple(types), effective, qualified)


def _declared_structures(assigned: Tuple[str, ...], registry: TypeRegistry) -> Tuple[str, ...]:
    # a parallelism type implies its structure; it does not declare one
    parallel = TASK_PARALLELISM + DATA_PARALLELISM
    found: List[str] = []
    for name in assigned:
        ancestors = registry.ancestors(name)
        if any(a in parallel for a in ancestors):
            continue
        found.extend(a for a in ancestors if a in STRUCTURE_TYPES and a not in found)
    return tuple(found)


def _structure_type(declared: Tuple[str, ...], types: Tuple[str, ...]) -> Optional[str]:
    if declared:
        return declared[0] if len(declared) == 1 else None
    implied = [t for t in types if t in STRUCTURE_TYPES]
    return implied[0] if len(implied) == 1 else None


def resolve_types(model: WorkflowModel, registry: Optional[TypeRegistry] = None) -> List[ResolvedElement]:
    registry = registry if registry is not None else builtin_style()
    resolved: List[ResolvedElement] = []
    _resolve_level(model, "", registry, resolved)
    return resolved


def _resolve_level(model: WorkflowModel, prefix: str, registry: TypeRegistry, out: List[ResolvedElement]):
    registry = registry.extend(model.type_defs, prefix)
    for inst in model.instances:
        path = join_path(prefix, inst.name)
        res = _resolve_point(path, inst.element_kind, inst.assigned_types, inst.property_values, inst.span, registry)
        interfaces = {}
        for point in inst.interfaces:
            point_path = f"{path}.{point.name}"
            pres = _resolve_point(
                point_path, point.kind, point.assigned_types, point.property_values, point.span, registry
            )
            interfaces[point.name] = ResolvedInterface(point_path, point, pres.types, pres.effective, pres.qualified)
        declared = _declared_structures(inst.assigned_types, registry)
        classes = {registry[t].powertype_class for t in res.types if registry[t].powertype_class}
        out.append(
            ResolvedElement(
                path=path,
                instance=inst,
                structure_type=_structure_type(declared, res.types),
                effective_properties=res.effective,
                quality_attributes=frozenset(classes - {"Structure"}),
                types=res.types,
                declared_structures=declared,
                qualified=res.qualified,
                interfaces=interfaces,
            )
        )
        if inst.body is not None:
            _resolve_level(inst.body, path, registry, out)


# validation


@dataclass(frozen=True)
class Diagnostic:
    rule_id: str
    severity: str
    path: str
    span: SourceSpan
    message: str

    def __post_init__(self):
        if self.rule_id not in RULES:
            raise ValueError(f"unknown rule {self.rule_id!r}")

    def render(self) -> str:
        return f"{self.rule_id} {self.severity} {self.path} {self.span} {self.message}"

    def sort_key(self):
        return (self.path, self.span.line, self.span.column, RULES.index(self.rule_id))


def is_sweep(element: ResolvedElement) -> bool:
    return element.kind is ElementKind.TASK and element.structure_type == FLUXO and element.has(
        "VarreduraDeParametros"
    )


def is_mapreduce(element: ResolvedElement) -> bool:
    return element.kind is ElementKind.TASK and element.structure_type == FLUXO and element.has("MapReduce")


def data_output_ports(level: WorkflowModel, inst: ElementInstance) -> List[InterfacePoint]:
    """Output ports that carry data: anything not attached exclusively by control dependencies."""
    ports = []
    for port in inst.ports(Direction.OUTPUT):
        kinds = {
            a.dependency_kind
            for a in level.attachments
            if a.task_ref == (inst.name, port.name)
        }
        if kinds != {DependencyKind.CONTROL}:
            ports.append(port)
    return ports


class _Checker:
    def __init__(self, resolved: List[ResolvedElement]):
        self.by_path = {r.path: r for r in resolved}
        self.diagnostics: List[Diagnostic] = []

    def report(self, rule: str, path: str, span: SourceSpan, message: str, severity: str = "error"):
        self.diagnostics.append(Diagnostic(rule, severity, path, span, message))

    def check_element(self, level: WorkflowModel, path: str, inst: ElementInstance):
        r = self.by_path[path]
        is_task = inst.element_kind is ElementKind.TASK
        structures = r.declared_structures or tuple(t for t in r.types if t in STRUCTURE_TYPES)
        bad_structure = is_task and r.structure_type is None
        if bad_structure:
            if structures:
                message = "combines structure types " + " and ".join(structures)
            else:
                message = "has no structure type (Executavel or Fluxo)"
            self.report("R2", path, inst.span, message)
        elif is_task and r.structure_type == FLUXO and inst.body is None:
            self.report("R2", path, inst.span, "Fluxo task needs a body")
        elif is_task and r.structure_type == EXECUTAVEL and inst.body is not None:
            self.report("R2", path, inst.span, "Executavel task cannot have a body")

        for type_name in TASK_PARALLELISM:
            if r.has(type_name) and not bad_structure and r.structure_type != EXECUTAVEL:
                self.report("R3", path, inst.span, f"{type_name} applies only to Executavel tasks")
        for type_name in DATA_PARALLELISM:
            if r.has(type_name) and not bad_structure and r.structure_type != FLUXO:
                self.report("R4", path, inst.span, f"{type_name} applies only to Fluxo tasks")

        if is_sweep(r):
            self.check_sweep(level, path, inst, r)

        for point in inst.interfaces:
            rp = r.interfaces[point.name]
            if rp.has("Bifurcacao"):
                bound = [name for name in ("diretorio", "valores", "repeticoes") if rp.value(name) is not None]
                if len(bound) != 1:
                    found = ", ".join(bound) if bound else "none"
                    self.report(
                        "R6",
                        rp.path,
                        point.span,
                        f"Bifurcacao must bind exactly one of diretorio, valores, repeticoes (found {found})",
                    )
            if rp.has("OPM") and not rp.versions("OPM"):
                self.report("R11", rp.path, point.span, "OPM element needs a non-empty versao")

        detection = [t for t in DETECTION_TYPES if r.has(t)]
        if detection:
            corrected = r.has("RedundanciaTemporal") or (not is_task and r.has("Propagacao"))
            if not corrected:
                fix = "RedundanciaTemporal" if is_task else "RedundanciaTemporal or Propagacao"
                self.report("R7", path, inst.span, f"{', '.join(detection)} needs a correction type ({fix})")

        if r.has("Mascaramento") and not is_task:
            self.report("R8", path, inst.span, "Mascaramento is only used by tasks")
        if r.has("Propagacao") and is_task:
            self.report("R9", path, inst.span, "Propagacao is a connector correction")
        for type_name in GRANULARITY_TYPES:
            if r.has(type_name) and not bad_structure and r.structure_type != FLUXO:
                self.report("R10", path, inst.span, f"{type_name} applies only to flows")
        if r.has("OPM") and not r.versions("OPM"):
            self.report("R11", path, inst.span, "OPM element needs a non-empty versao")
        self.check_numbers(path, inst, r)

    def check_sweep(self, level: WorkflowModel, path: str, inst: ElementInstance, r: ResolvedElement):
        forks = [p for p in inst.ports(Direction.INPUT) if r.interfaces[p.name].has("Bifurcacao")]
        if not forks:
            self.report("R5", path, inst.span, "parameter sweep needs an input port of type Bifurcacao")
        for port in data_output_ports(level, inst):
            if not r.interfaces[port.name].has("Juncao"):
                self.report("R5", f"{path}.{port.name}", port.span, "sweep data outputs must be of type Juncao")

    def check_numbers(self, path: str, inst: ElementInstance, r: ResolvedElement):
        def at_least(type_name, prop, minimum):
            if not r.has(type_name):
                return
            value = r.value(prop)
            if value is None or value < minimum:
                self.report("R13", path, inst.span, f"{prop} must be >= {minimum}, got {value}")

        at_least("RedundanciaTemporal", "num_tentativas", 1)
        at_least("MemoriaCompartilhada", "num_threads", 1)
        at_least("MemoriaDistribuida", "num_nos", 1)
        at_least("MemoriaDistribuida", "procs_por_no", 1)
        if r.has("MonitoramentoDeTempo"):
            limit = r.value("tempo_limite")
            if limit is None or limit <= 0:
                self.report("R13", path, inst.span, f"tempo_limite must be > 0, got {limit}")
        if r.has("Mascaramento"):
            copies = r.value("num_copias")
            if copies is None or copies < 3 or copies % 2 == 0:
                self.report("R13", path, inst.span, f"num_copias must be odd and >= 3, got {copies}")

    def check_level(self, prefix: str, level: WorkflowModel):
        for att in level.attachments:
            left = level.instance(att.task_ref[0])
            right = level.instance(att.connector_ref[0])
            left_ok = left.element_kind is ElementKind.TASK
            right_ok = right.element_kind is ElementKind.CONNECTOR
            if not (left_ok and right_ok):
                where = join_path(prefix, ".".join(att.task_ref))
                self.report(
                    "R1",
                    where,
                    att.span,
                    f"{'.'.join(att.task_ref)} and {'.'.join(att.connector_ref)} must meet through a connector",
                )

        graph = nx.DiGraph()
        graph.add_nodes_from(inst.name for inst in level.instances)
        for att in level.attachments:
            if att.keyword == "to":
                graph.add_edge(att.task_ref[0], att.connector_ref[0])
            else:
                graph.add_edge(att.connector_ref[0], att.task_ref[0])
        order = [inst.name for inst in level.instances]
        for component in nx.strongly_connected_components(graph):
            first = min(component, key=order.index)
            if len(component) == 1 and not graph.has_edge(first, first):
                continue
            cycle = nx.find_cycle(graph.subgraph(component), source=first)
            names = " -> ".join([u for u, _ in cycle] + [cycle[0][0]])
            self.report("R12", join_path(prefix, first), level.instance(first).span, f"cycle {names}")

        for inst in level.instances:
            if inst.element_kind is not ElementKind.TASK:
                continue
            r = self.by_path[join_path(prefix, inst.name)]
            for port in inst.ports(Direction.INPUT):
                ref = (inst.name, port.name)
                feeds = sum(1 for a in level.attachments if a.task_ref == ref or a.connector_ref == ref)
                feeds += sum(1 for b in level.bindings if b.inner_ref == ref)
                if r.interfaces[port.name].has("Bifurcacao"):
                    feeds += 1
                if feeds != 1:
                    self.report(
                        "R14",
                        join_path(prefix, ".".join(ref)),
                        port.span,
                        f"input port must have exactly one attachment, has {feeds}",
                    )


def validate(model: WorkflowModel, resolved: List[ResolvedElement]) -> List[Diagnostic]:
    checker = _Checker(resolved)
    for prefix, level in walk_levels(model):
        checker.check_level(prefix, level)
        for inst in level.instances:
            checker.check_element(level, join_path(prefix, inst.name), inst)
    diagnostics = sorted(checker.diagnostics, key=Diagnostic.sort_key)
    logger.debug("validated %s: %d diagnostics", model.name, len(diagnostics))
    return diagnostics
