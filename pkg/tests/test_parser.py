import pytest

from tests.conftest import FIXTURES, RULE_FIXTURES, read_fixture
from osc.model import ElementKind, PropertyValue, ValueKind
from osc.parser import ParseError, parse_workflow, render_workflow, tokenize

CORPUS = sorted(FIXTURES.glob("*.osc")) + sorted(RULE_FIXTURES.glob("*.osc"))


def test_psipred_instance():
    model = parse_workflow(read_fixture("psipred.osc"), "psipred.osc")
    psipred = model.instance("psipred")
    assert psipred.assigned_types == ("Executavel", "Log", "RedundanciaTemporal", "OPM")
    props = psipred.property_values
    assert props["num_tentativas"] == PropertyValue(ValueKind.INT, 3)
    assert props["ignorar"] == PropertyValue(ValueKind.BOOL, True)
    assert props["versao"] == PropertyValue(ValueKind.SET, ("orange", "black"))


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.name)
def test_render_reparses_to_equal_model(path):
    model = parse_workflow(path.read_text(encoding="utf-8"), path.name)
    assert parse_workflow(render_workflow(model), path.name) == model


def test_render_keeps_property_order():
    model = parse_workflow(read_fixture("psipred.osc"), "psipred.osc")
    rendered = render_workflow(model)
    names = [line.split()[1] for line in rendered.splitlines() if line.strip().startswith("Property")]
    assert names[:5] == ["comando", "padroes", "num_tentativas", "ignorar", "versao"]


def test_qualified_property_names():
    model = parse_workflow(read_fixture("nested.osc"), "nested.osc")
    analysis = model.instance("analysis")
    assert set(analysis.property_values) == {"OPM.versao", "BaixaGranularidade.versao"}
    assert analysis.body.instance("stats").element_kind is ElementKind.TASK


def test_comments_and_escapes():
    model = parse_workflow(
        'Family m = { // trailing\n  Component t : Executavel = { Property comando : string = "echo \\"hi\\""; }\n}\n'
    )
    assert model.instance("t").property_values["comando"].value == 'echo "hi"'


def test_float_coerces_int_literal():
    model = parse_workflow("Family m = { Component t : Executavel = { Property tempo_limite : float = 2; } }")
    assert model.instance("t").property_values["tempo_limite"] == PropertyValue(ValueKind.FLOAT, 2.0)


def test_tokens_carry_positions():
    tokens = tokenize("Family m = {\n  }", "x.osc")
    assert [(t.text, t.span.line, t.span.column) for t in tokens[:4]] == [
        ("Family", 1, 1),
        ("m", 1, 8),
        ("=", 1, 10),
        ("{", 1, 12),
    ]
    assert tokens[-1].kind == "eof"


@pytest.mark.parametrize(
    "source, line, column, expected",
    [
        ("Family m = { Component t : Executavel = { Port inout p = { } } }", 1, 48, "input or output"),
        ("Family m = {\n  Component t Executavel = { }\n}", 2, 15, "':'"),
        ("Family m = { Component t : Executavel = { Property n : int = 1.5; } }", 1, 62, "int value"),
        ("Family m = { Attachment a.b to c.d; }", 1, 14, "a declared instance"),
        ("Family m = { }\nFamily n = { }", 2, 1, "end of input"),
    ],
)
def test_parse_errors_point_at_the_offending_token(source, line, column, expected):
    with pytest.raises(ParseError) as excinfo:
        parse_workflow(source, "bad.osc")
    error = excinfo.value
    assert (error.span.file, error.span.line, error.span.column) == ("bad.osc", line, column)
    assert expected in error.expected


def test_duplicate_instance_is_rejected():
    with pytest.raises(ParseError, match="unique instance name"):
        parse_workflow("Family m = { Component t : Executavel = { } Component t : Executavel = { } }")


def test_attachment_direction_is_checked():
    source = """
    Family m = {
      Connector Type Pipe = { }
      Component a : Executavel = { Port input i = { } }
      Connector p : Pipe = { Role source s = { } Role destination d = { } }
      Attachment a.i to p.s;
    }
    """
    with pytest.raises(ParseError, match="output port attached 'to' a source role"):
        parse_workflow(source)


def test_binding_needs_a_flow_port():
    source = """
    Family m = {
      Component f : Fluxo = {
        Family body = {
          Component t : Executavel = { Port input i = { } }
          Binding nope to t.i;
        }
      }
    }
    """
    with pytest.raises(ParseError, match="a port of the enclosing flow"):
        parse_workflow(source)


def test_binding_only_inside_flow_bodies():
    source = """
    Family m = {
      Component t : Executavel = { Port input i = { } }
      Binding i to t.i;
    }
    """
    with pytest.raises(ParseError):
        parse_workflow(source)
