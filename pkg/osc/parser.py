"""Concrete syntax for OSC workflows.

An Acme-flavoured grammar::

    family     ::= "Family" ID "=" "{" item* "}"
    item       ::= typedef | instance | attachment | binding
    typedef    ::= ("Component"|"Connector"|"Port"|"Role") "Type" ID
                   ["extends" ID ("," ID)*] "=" "{" propdecl* "}"
    instance   ::= ("Component"|"Connector") ID ":" ID ("," ID)*
                   "=" "{" (propassign | interface | family)* "}"
    interface  ::= ("Port" ("input"|"output") | "Role" ("source"|"destination"))
                   ID [":" ID ("," ID)*] "=" "{" propassign* "}"
    attachment ::= "Attachment" ID "." ID ("to"|"from") ID "." ID
                   [":" ("data"|"control")] ";"
    binding    ::= "Binding" ID "to" ID "." ID ";"      (flow bodies only)

``//`` starts a comment that runs to the end of the line.
"""

import json
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .model import (
    Attachment,
    Binding,
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
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
   |(?P<comment>//[^\n]*)
   |(?P<float>-?\d+\.\d+(?:[eE][-+]?\d+)?|-?\d+[eE][-+]?\d+)
   |(?P<int>-?\d+)
   |(?P<string>"(?:[^"\\\n]|\\.)*")
   |(?P<id>[A-Za-z][A-Za-z0-9_]*)
   |(?P<punct>[{}=:;,.])
    """,
    re.VERBOSE,
)

_INSTANCE_KEYWORDS = {"Component": ElementKind.TASK, "Connector": ElementKind.CONNECTOR}
_TYPE_KEYWORDS = {
    "Component": ElementKind.TASK,
    "Connector": ElementKind.CONNECTOR,
    "Port": ElementKind.PORT,
    "Role": ElementKind.ROLE,
}
_KEYWORD_OF_KIND = {kind: word for word, kind in _TYPE_KEYWORDS.items()}
_PORT_DIRECTIONS = {"input": Direction.INPUT, "output": Direction.OUTPUT}
_ROLE_DIRECTIONS = {"source": Direction.SOURCE, "destination": Direction.DESTINATION}
_VALUE_KINDS = {kind.value: kind for kind in ValueKind}


class ParseError(ValueError):
    def __init__(self, span: SourceSpan, expected: str, found: str):
        self.span = span
        self.expected = expected or "input"
        self.found = found or "nothing"
        super().__init__(str(self))

    def __str__(self):
        return f"{self.span}: expected {self.expected}, found {self.found}"


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    span: SourceSpan

    def describe(self) -> str:
        if self.kind == "eof":
            return "end of input"
        return repr(self.text)


def tokenize(source: str, file: str) -> List[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        span = SourceSpan(file, line, pos - line_start + 1)
        if match is None:
            raise ParseError(span, "a token", repr(source[pos]))
        kind = match.lastgroup
        text = match.group()
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, text, span))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rindex("\n") + 1
        pos = match.end()
    end = max(len(source) - 1, 0)
    eof_line = source.count("\n", 0, end) + 1
    eof_col = end - (source.rfind("\n", 0, end) + 1) + 1
    tokens.append(Token("eof", "", SourceSpan(file, eof_line, eof_col)))
    return tokens


class _Parser:
    def __init__(self, source: str, file: str):
        self.tokens = tokenize(source, file)
        self.pos = 0

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def advance(self) -> Token:
        token = self.peek()
        self.pos += 1
        return token

    def at(self, text: str, offset: int = 0) -> bool:
        token = self.peek(offset)
        return token.kind in ("id", "punct") and token.text == text

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise ParseError(self.peek().span, repr(text), self.peek().describe())
        return self.advance()

    def expect_id(self, what: str = "identifier") -> Token:
        token = self.peek()
        if token.kind != "id":
            raise ParseError(token.span, what, token.describe())
        return self.advance()

    def expect_one_of(self, choices, what: str) -> Token:
        token = self.peek()
        if token.kind != "id" or token.text not in choices:
            raise ParseError(token.span, what, token.describe())
        return self.advance()

    def skip_semicolon(self):
        if self.at(";"):
            self.advance()

    def id_list(self) -> Tuple[str, ...]:
        names = [self.expect_id("type name").text]
        while self.at(","):
            self.advance()
            names.append(self.expect_id("type name").text)
        return tuple(names)

    # family level

    def parse_document(self) -> WorkflowModel:
        model = self.parse_family(nested=False)
        token = self.peek()
        if token.kind != "eof":
            raise ParseError(token.span, "end of input", token.describe())
        return model

    def parse_family(self, nested: bool) -> WorkflowModel:
        start = self.expect("Family")
        name = self.expect_id("family name").text
        self.expect("=")
        self.expect("{")
        type_defs, instances, attachments, bindings = [], [], [], []
        while not self.at("}"):
            token = self.peek()
            if token.kind == "id" and token.text in _TYPE_KEYWORDS and self.at("Type", 1):
                type_defs.append(self.parse_typedef())
            elif token.kind == "id" and token.text in _INSTANCE_KEYWORDS:
                instances.append(self.parse_instance())
            elif self.at("Attachment"):
                attachments.append(self.parse_attachment())
            elif self.at("Binding") and nested:
                bindings.append(self.parse_binding())
            else:
                expected = "Component, Connector, Port Type, Role Type, Attachment"
                if nested:
                    expected += ", Binding"
                raise ParseError(token.span, expected + " or '}'", token.describe())
        self.expect("}")
        self.skip_semicolon()
        model = WorkflowModel(
            name=name,
            type_defs=tuple(type_defs),
            instances=tuple(instances),
            attachments=tuple(attachments),
            bindings=tuple(bindings),
            span=start.span,
        )
        _check_references(model)
        return model

    def parse_typedef(self) -> TypeDef:
        keyword = self.advance()
        self.expect("Type")
        name = self.expect_id("type name").text
        extends: Tuple[str, ...] = ()
        if self.at("extends"):
            self.advance()
            extends = self.id_list()
        self.expect("=")
        self.expect("{")
        decls: List[PropertyDecl] = []
        seen = set()
        while not self.at("}"):
            decl = self.parse_propdecl()
            if decl.name in seen:
                raise ParseError(decl.span, "a unique property name", f"duplicate {decl.name!r}")
            seen.add(decl.name)
            decls.append(decl)
        self.expect("}")
        self.skip_semicolon()
        return TypeDef(
            name=name,
            element_kind=_TYPE_KEYWORDS[keyword.text],
            extends=extends,
            properties=tuple(decls),
            span=keyword.span,
        )

    def parse_propdecl(self) -> PropertyDecl:
        start = self.expect("Property")
        name = self.expect_id("property name").text
        self.expect(":")
        kind_token = self.expect_one_of(_VALUE_KINDS, "property kind")
        kind = _VALUE_KINDS[kind_token.text]
        choices: Tuple[str, ...] = ()
        if kind is ValueKind.ENUM:
            self.expect("{")
            choices = self.id_list()
            self.expect("}")
        default = None
        if self.at("="):
            self.advance()
            default = self.parse_value(kind, choices)
        self.expect(";")
        return PropertyDecl(name=name, kind=kind, default=default, choices=choices, span=start.span)

    def parse_value(self, kind: Optional[ValueKind] = None, choices: Tuple[str, ...] = ()) -> PropertyValue:
        token = self.peek()
        if token.kind == "int":
            value = PropertyValue(ValueKind.INT, int(token.text))
        elif token.kind == "float":
            value = PropertyValue(ValueKind.FLOAT, float(token.text))
        elif token.kind == "string":
            value = PropertyValue(ValueKind.STRING, _decode_string(token))
        elif token.kind == "id" and token.text in ("true", "false"):
            value = PropertyValue(ValueKind.BOOL, token.text == "true")
        elif token.kind == "id":
            value = PropertyValue(ValueKind.ENUM, token.text)
        elif self.at("{"):
            self.advance()
            items = []
            while not self.at("}"):
                item = self.peek()
                if item.kind != "string":
                    raise ParseError(item.span, "string", item.describe())
                items.append(_decode_string(self.advance()))
                if not self.at("}"):
                    self.expect(",")
            self.expect("}")
            return self._check_kind(PropertyValue(ValueKind.SET, tuple(items)), kind, choices, token)
        else:
            raise ParseError(token.span, "property value", token.describe())
        self.advance()
        return self._check_kind(value, kind, choices, token)

    @staticmethod
    def _check_kind(value: PropertyValue, kind, choices, token: Token) -> PropertyValue:
        if kind is None or value.kind is kind:
            if choices and value.value not in choices:
                raise ParseError(token.span, "one of " + ", ".join(choices), token.describe())
            return value
        if kind is ValueKind.FLOAT and value.kind is ValueKind.INT:
            return PropertyValue(ValueKind.FLOAT, float(value.value))
        raise ParseError(token.span, f"{kind.value} value", token.describe())

    # instances

    def parse_instance(self) -> ElementInstance:
        keyword = self.advance()
        kind = _INSTANCE_KEYWORDS[keyword.text]
        name = self.expect_id("instance name").text
        self.expect(":")
        types = self.id_list()
        self.expect("=")
        self.expect("{")
        props: Dict[str, PropertyValue] = {}
        interfaces: List[InterfacePoint] = []
        body = None
        while not self.at("}"):
            token = self.peek()
            if self.at("Property"):
                self.parse_propassign(props)
            elif self.at("Port") or self.at("Role"):
                wanted = "Port" if kind is ElementKind.TASK else "Role"
                if token.text != wanted:
                    raise ParseError(token.span, f"{wanted} in a {keyword.text}", token.describe())
                point = self.parse_interface()
                if any(p.name == point.name for p in interfaces):
                    raise ParseError(point.span, "a unique interface name", f"duplicate {point.name!r}")
                interfaces.append(point)
            elif self.at("Family"):
                if kind is not ElementKind.TASK:
                    raise ParseError(token.span, "Property or Role", token.describe())
                if body is not None:
                    raise ParseError(token.span, "a single nested Family", token.describe())
                body = self.parse_family(nested=True)
            else:
                raise ParseError(token.span, "Property, Port, Role, Family or '}'", token.describe())
        self.expect("}")
        self.skip_semicolon()
        if body is not None:
            _check_bindings(body, tuple(interfaces))
        return ElementInstance(
            name=name,
            element_kind=kind,
            assigned_types=types,
            property_values=props,
            interfaces=tuple(interfaces),
            body=body,
            span=keyword.span,
        )

    def parse_propassign(self, into: Dict[str, PropertyValue]):
        start = self.expect("Property")
        name = self.expect_id("property name").text
        if self.at("."):
            self.advance()
            name = f"{name}.{self.expect_id('property name').text}"
        kind = None
        if self.at(":"):
            self.advance()
            kind = _VALUE_KINDS[self.expect_one_of(_VALUE_KINDS, "property kind").text]
        self.expect("=")
        value = self.parse_value(kind)
        self.expect(";")
        if name in into:
            raise ParseError(start.span, "a unique property name", f"duplicate {name!r}")
        into[name] = value

    def parse_interface(self) -> InterfacePoint:
        keyword = self.advance()
        if keyword.text == "Port":
            kind, directions = ElementKind.PORT, _PORT_DIRECTIONS
        else:
            kind, directions = ElementKind.ROLE, _ROLE_DIRECTIONS
        direction = directions[self.expect_one_of(directions, " or ".join(directions)).text]
        name = self.expect_id(f"{keyword.text.lower()} name").text
        types: Tuple[str, ...] = ()
        if self.at(":"):
            self.advance()
            types = self.id_list()
        self.expect("=")
        self.expect("{")
        props: Dict[str, PropertyValue] = {}
        while not self.at("}"):
            self.parse_propassign(props)
        self.expect("}")
        self.skip_semicolon()
        return InterfacePoint(
            name=name,
            kind=kind,
            direction=direction,
            assigned_types=types,
            property_values=props,
            span=keyword.span,
        )

    def parse_ref(self) -> Tuple[str, str]:
        instance = self.expect_id("instance name").text
        self.expect(".")
        point = self.expect_id("port or role name").text
        return instance, point

    def parse_attachment(self) -> Attachment:
        start = self.expect("Attachment")
        task_ref = self.parse_ref()
        keyword = self.expect_one_of(("to", "from"), "'to' or 'from'").text
        connector_ref = self.parse_ref()
        dependency = DependencyKind.DATA
        if self.at(":"):
            self.advance()
            dependency = DependencyKind(self.expect_one_of(("data", "control"), "'data' or 'control'").text)
        self.expect(";")
        return Attachment(task_ref, connector_ref, dependency, keyword, start.span)

    def parse_binding(self) -> Binding:
        start = self.expect("Binding")
        flow_port = self.expect_id("port name").text
        self.expect("to")
        inner = self.parse_ref()
        self.expect(";")
        return Binding(flow_port, inner, start.span)


def _decode_string(token: Token) -> str:
    try:
        return json.loads(token.text)
    except ValueError:
        raise ParseError(token.span, "valid string escape", token.describe()) from None


def _check_references(model: WorkflowModel):
    seen: Dict[str, SourceSpan] = {}
    for inst in model.instances:
        if inst.name in seen:
            raise ParseError(
                inst.span, "a unique instance name", f"{inst.name!r} already declared at {seen[inst.name]}"
            )
        seen[inst.name] = inst.span
    typenames: Dict[str, SourceSpan] = {}
    for td in model.type_defs:
        if td.name in typenames:
            raise ParseError(td.span, "a unique type name", f"{td.name!r} already declared at {typenames[td.name]}")
        typenames[td.name] = td.span

    for att in model.attachments:
        left = _point_of(model, att.task_ref, att.span)
        right = _point_of(model, att.connector_ref, att.span)
        # port-to-port and role-to-role misuse is left to the validator
        if left.kind is ElementKind.PORT and right.kind is ElementKind.ROLE:
            if att.keyword == "to" and (left.direction, right.direction) != (Direction.OUTPUT, Direction.SOURCE):
                raise ParseError(
                    att.span,
                    "output port attached 'to' a source role",
                    f"{left.direction.value} port {'.'.join(att.task_ref)} and "
                    f"{right.direction.value} role {'.'.join(att.connector_ref)}",
                )
            if att.keyword == "from" and (left.direction, right.direction) != (Direction.INPUT, Direction.DESTINATION):
                raise ParseError(
                    att.span,
                    "input port attached 'from' a destination role",
                    f"{left.direction.value} port {'.'.join(att.task_ref)} and "
                    f"{right.direction.value} role {'.'.join(att.connector_ref)}",
                )


def _point_of(model: WorkflowModel, ref: Tuple[str, str], span: SourceSpan) -> InterfacePoint:
    inst = model.instance(ref[0])
    if inst is None:
        raise ParseError(span, "a declared instance", repr(ref[0]))
    point = inst.interface(ref[1])
    if point is None:
        raise ParseError(span, f"a port or role of {ref[0]!r}", repr(ref[1]))
    return point


def _check_bindings(body: WorkflowModel, flow_ports: Tuple[InterfacePoint, ...]):
    for binding in body.bindings:
        outer = next((p for p in flow_ports if p.name == binding.flow_port), None)
        if outer is None:
            raise ParseError(binding.span, "a port of the enclosing flow", repr(binding.flow_port))
        inner = _point_of(body, binding.inner_ref, binding.span)
        if inner.kind is not ElementKind.PORT or inner.direction is not outer.direction:
            raise ParseError(
                binding.span,
                f"an {outer.direction.value} port inside the flow",
                f"{inner.direction.value} {inner.kind.value.lower()} {'.'.join(binding.inner_ref)}",
            )


def parse_workflow(source: str, file: str = "<string>") -> WorkflowModel:
    return _Parser(source, str(file)).parse_document()


# rendering


def _render_value(value: PropertyValue) -> str:
    if value.kind is ValueKind.INT:
        return str(value.value)
    if value.kind is ValueKind.FLOAT:
        return repr(float(value.value))
    if value.kind is ValueKind.BOOL:
        return "true" if value.value else "false"
    if value.kind is ValueKind.STRING:
        return json.dumps(value.value, ensure_ascii=False)
    if value.kind is ValueKind.SET:
        return "{" + ", ".join(json.dumps(v, ensure_ascii=False) for v in value.value) + "}"
    return str(value.value)


def _render_props(props: Dict[str, PropertyValue], indent: str, out: List[str]):
    for name, value in props.items():
        out.append(f"{indent}Property {name} : {value.kind.value} = {_render_value(value)};")


def _render_family(model: WorkflowModel, depth: int, out: List[str]):
    pad = "  " * depth
    inner = "  " * (depth + 1)
    out.append(f"{pad}Family {model.name} = {{")
    for td in model.type_defs:
        extends = f" extends {', '.join(td.extends)}" if td.extends else ""
        out.append(f"{inner}{_KEYWORD_OF_KIND[td.element_kind]} Type {td.name}{extends} = {{")
        for decl in td.properties:
            kind = decl.kind.value
            if decl.kind is ValueKind.ENUM:
                kind += " {" + ", ".join(decl.choices) + "}"
            default = f" = {_render_value(decl.default)}" if decl.default is not None else ""
            out.append(f"{inner}  Property {decl.name} : {kind}{default};")
        out.append(f"{inner}}}")
    for inst in model.instances:
        keyword = "Component" if inst.element_kind is ElementKind.TASK else "Connector"
        out.append(f"{inner}{keyword} {inst.name} : {', '.join(inst.assigned_types)} = {{")
        _render_props(inst.property_values, inner + "  ", out)
        for point in inst.interfaces:
            types = f" : {', '.join(point.assigned_types)}" if point.assigned_types else ""
            word = "Port" if point.kind is ElementKind.PORT else "Role"
            out.append(f"{inner}  {word} {point.direction.value} {point.name}{types} = {{")
            _render_props(point.property_values, inner + "    ", out)
            out.append(f"{inner}  }}")
        if inst.body is not None:
            _render_family(inst.body, depth + 2, out)
        out.append(f"{inner}}}")
    for att in model.attachments:
        suffix = " : control" if att.dependency_kind is DependencyKind.CONTROL else ""
        out.append(
            f"{inner}Attachment {'.'.join(att.task_ref)} {att.keyword} {'.'.join(att.connector_ref)}{suffix};"
        )
    for binding in model.bindings:
        out.append(f"{inner}Binding {binding.flow_port} to {'.'.join(binding.inner_ref)};")
    out.append(f"{pad}}}")


def render_workflow(model: WorkflowModel) -> str:
    out: List[str] = []
    _render_family(model, 0, out)
    return "\n".join(out) + "\n"
