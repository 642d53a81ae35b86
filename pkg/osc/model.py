from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple, Union


class ElementKind(str, Enum):
    TASK = "Task"
    CONNECTOR = "Connector"
    PORT = "Port"
    ROLE = "Role"


class Direction(str, Enum):
    INPUT = "input"
    OUTPUT = "output"
    SOURCE = "source"
    DESTINATION = "destination"


class DependencyKind(str, Enum):
    DATA = "data"
    CONTROL = "control"


class ValueKind(str, Enum):
    INT = "int"
    FLOAT = "float"
    STRING = "string"
    BOOL = "bool"
    SET = "set"
    ENUM = "enum"


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int

    def __post_init__(self):
        if self.line < 1 or self.column < 1:
            raise ValueError(f"span must be 1-based, got {self.line}:{self.column}")

    def __str__(self):
        return f"{self.file}:{self.line}:{self.column}"


BUILTIN_SPAN = SourceSpan("<builtin>", 1, 1)


@dataclass(frozen=True)
class PropertyValue:
    kind: ValueKind
    value: Union[int, float, str, bool, Tuple[str, ...]]

    @classmethod
    def of(cls, value) -> "PropertyValue":
        # bool before int: bool is an int subclass
        if isinstance(value, bool):
            return cls(ValueKind.BOOL, value)
        if isinstance(value, int):
            return cls(ValueKind.INT, value)
        if isinstance(value, float):
            return cls(ValueKind.FLOAT, value)
        if isinstance(value, str):
            return cls(ValueKind.STRING, value)
        if isinstance(value, (list, tuple, set, frozenset)):
            return cls(ValueKind.SET, tuple(value))
        raise ValueError(f"unsupported property value {value!r}")

    def python(self):
        if self.kind is ValueKind.SET:
            return list(self.value)
        return self.value


@dataclass(frozen=True)
class PropertyDecl:
    name: str
    kind: ValueKind
    default: Optional[PropertyValue] = None
    # allowed tokens, only for ENUM
    choices: Tuple[str, ...] = ()
    span: SourceSpan = field(default=BUILTIN_SPAN, compare=False)


@dataclass(frozen=True)
class TypeDef:
    name: str
    element_kind: ElementKind
    extends: Tuple[str, ...] = ()
    properties: Tuple[PropertyDecl, ...] = ()
    powertype_class: Optional[str] = None
    # element kinds an instance may carry this type on; empty means {element_kind}
    applies_to: Tuple[ElementKind, ...] = ()
    span: SourceSpan = field(default=BUILTIN_SPAN, compare=False)

    def hosts(self) -> Tuple[ElementKind, ...]:
        return self.applies_to or (self.element_kind,)


@dataclass(frozen=True)
class InterfacePoint:
    name: str
    kind: ElementKind
    direction: Direction
    assigned_types: Tuple[str, ...] = ()
    property_values: Dict[str, PropertyValue] = field(default_factory=dict)
    span: SourceSpan = field(default=BUILTIN_SPAN, compare=False)


@dataclass(frozen=True)
class Attachment:
    task_ref: Tuple[str, str]
    connector_ref: Tuple[str, str]
    dependency_kind: DependencyKind = DependencyKind.DATA
    # "to" (output -> source) or "from" (destination -> input)
    keyword: str = "to"
    span: SourceSpan = field(default=BUILTIN_SPAN, compare=False)

    def touches(self, instance: str) -> bool:
        return instance in (self.task_ref[0], self.connector_ref[0])


@dataclass(frozen=True)
class Binding:
    """Ties a port of the enclosing flow to a port of a task in its body."""

    flow_port: str
    inner_ref: Tuple[str, str]
    span: SourceSpan = field(default=BUILTIN_SPAN, compare=False)


@dataclass(frozen=True)
class ElementInstance:
    name: str
    element_kind: ElementKind
    assigned_types: Tuple[str, ...]
    property_values: Dict[str, PropertyValue] = field(default_factory=dict)
    interfaces: Tuple[InterfacePoint, ...] = ()
    body: Optional["WorkflowModel"] = None
    span: SourceSpan = field(default=BUILTIN_SPAN, compare=False)

    def __post_init__(self):
        if not self.assigned_types:
            raise ValueError(f"instance {self.name!r} has no assigned types")

    def interface(self, name: str) -> Optional[InterfacePoint]:
        for point in self.interfaces:
            if point.name == name:
                return point
        return None

    def ports(self, direction: Optional[Direction] = None) -> List[InterfacePoint]:
        return [
            p
            for p in self.interfaces
            if p.kind is ElementKind.PORT and (direction is None or p.direction is direction)
        ]

    def roles(self, direction: Optional[Direction] = None) -> List[InterfacePoint]:
        return [
            r
            for r in self.interfaces
            if r.kind is ElementKind.ROLE and (direction is None or r.direction is direction)
        ]


@dataclass(frozen=True)
class WorkflowModel:
    name: str
    type_defs: Tuple[TypeDef, ...] = ()
    instances: Tuple[ElementInstance, ...] = ()
    attachments: Tuple[Attachment, ...] = ()
    bindings: Tuple[Binding, ...] = ()
    span: SourceSpan = field(default=BUILTIN_SPAN, compare=False)

    def instance(self, name: str) -> Optional[ElementInstance]:
        for inst in self.instances:
            if inst.name == name:
                return inst
        return None


class UnknownInstanceError(KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"unknown instance {self.name!r}"


def join_path(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def lookup_instance(model: WorkflowModel, name: str) -> Optional[ElementInstance]:
    """Find an instance by name, descending into flow bodies for dotted paths."""
    head, _, rest = name.partition(".")
    inst = model.instance(head)
    if inst is None or not rest:
        return inst
    if inst.body is None:
        return None
    return lookup_instance(inst.body, rest)


def lookup_model(model: WorkflowModel, path: str) -> Optional[WorkflowModel]:
    """The model level a dotted instance path lives in ("" is the root)."""
    if not path:
        return model
    parent, _, _ = path.rpartition(".")
    if not parent:
        return model
    owner = lookup_instance(model, parent)
    return owner.body if owner is not None else None


def collect_attachments(model: WorkflowModel, instance: str) -> List[Attachment]:
    level = lookup_model(model, instance)
    if level is None or lookup_instance(model, instance) is None:
        raise UnknownInstanceError(instance)
    local = instance.rpartition(".")[2]
    return [a for a in level.attachments if a.touches(local)]


def walk(
    model: WorkflowModel, prefix: str = ""
) -> Iterator[Tuple[str, WorkflowModel, ElementInstance]]:
    """Yield (dotted path, owning level, instance) for every instance, depth first."""
    for inst in model.instances:
        path = join_path(prefix, inst.name)
        yield path, model, inst
        if inst.body is not None:
            yield from walk(inst.body, path)


def walk_levels(model: WorkflowModel, prefix: str = "") -> Iterator[Tuple[str, WorkflowModel]]:
    yield prefix, model
    for inst in model.instances:
        if inst.body is not None:
            yield from walk_levels(inst.body, join_path(prefix, inst.name))
