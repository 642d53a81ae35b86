import pytest

from tests.conftest import RULE_FIXTURES
from osc.model import ElementKind
from osc.parser import parse_workflow
from osc.typesystem import RULES, ResolutionError, builtin_style, resolve_types, validate


def check(source: str):
    model = parse_workflow(source, "m.osc")
    return validate(model, resolve_types(model))


def rule_ids(source: str):
    return [d.rule_id for d in check(source)]


@pytest.mark.parametrize("rule", RULES)
def test_violating_fixture_reports_exactly_its_rule(rule):
    path = RULE_FIXTURES / f"r{int(rule[1:]):02d}_bad.osc"
    model = parse_workflow(path.read_text(encoding="utf-8"), str(path))
    diagnostics = validate(model, resolve_types(model))
    assert [d.rule_id for d in diagnostics] == [rule], [d.render() for d in diagnostics]
    assert diagnostics[0].severity == "error"
    assert diagnostics[0].span.file == str(path)


@pytest.mark.parametrize("rule", RULES)
def test_passing_twin_is_clean(rule):
    path = RULE_FIXTURES / f"r{int(rule[1:]):02d}_good.osc"
    model = parse_workflow(path.read_text(encoding="utf-8"), str(path))
    diagnostics = validate(model, resolve_types(model))
    assert diagnostics == [], [d.render() for d in diagnostics]


@pytest.mark.parametrize("name", ["psipred.osc", "sweep.osc", "wordcount.osc", "nested.osc", "deep.osc"])
def test_scenario_models_are_valid(analyse, name):
    _, _, diagnostics = analyse(name)
    assert diagnostics == [], [d.render() for d in diagnostics]


def test_empty_model_is_valid():
    assert check("Family m = { }") == []


def test_builtin_style():
    style = builtin_style()
    assert style["MemoriaCompartilhada"].extends == ("Executavel",)
    assert style["VarreduraDeParametros"].extends == ("Fluxo",)
    assert style["Bifurcacao"].element_kind is ElementKind.PORT
    assert style["Propagacao"].powertype_class == "FaultCorrection"
    assert set(style["OPM"].hosts()) == set(ElementKind)
    assert style.is_subtype("MapReduce", "Fluxo")
    juncao = {d.name: d for d in style["Juncao"].properties}
    assert juncao["formato"].choices == ("include", "merge", "concat")


def test_psipred_resolution(analyse):
    _, resolved, _ = analyse("psipred.osc")
    psipred = next(r for r in resolved if r.path == "psipred")
    assert psipred.structure_type == "Executavel"
    assert psipred.value("num_tentativas") == 3
    assert psipred.value("ignorar") is True
    assert psipred.versions("OPM") == ["orange", "black"]
    assert psipred.quality_attributes == {"FaultDetection", "FaultCorrection", "Provenance"}


def test_defaults_flow_from_supertypes():
    model = parse_workflow("Family m = { Component t : MemoriaCompartilhada, RedundanciaTemporal = { } }")
    (t,) = resolve_types(model)
    assert t.types == ("MemoriaCompartilhada", "Executavel", "RedundanciaTemporal")
    assert t.value("num_threads") == 1
    assert t.value("num_tentativas") == 3
    assert t.value("ignorar") is False
    assert t.value("comando") is None


def test_subtype_default_refines_supertype():
    source = """
    Family m = {
      Component Type Stubborn extends RedundanciaTemporal = { Property num_tentativas : int = 5; }
      Component t : Executavel, Stubborn = { }
      Connector c : Stubborn = { }
    }
    """
    model = parse_workflow(source)
    resolved = {r.path: r for r in resolve_types(model)}
    assert resolved["t"].value("num_tentativas") == 5
    assert resolved["c"].has("RedundanciaTemporal")


def test_conflicting_defaults_need_an_explicit_value():
    types = """
      Component Type A = { Property n : int = 1; }
      Component Type B = { Property n : int = 2; }
    """
    with pytest.raises(ResolutionError, match="conflicting defaults"):
        resolve_types(parse_workflow("Family m = {" + types + "Component t : Executavel, A, B = { } }"))
    model = parse_workflow("Family m = {" + types + "Component t : Executavel, A, B = { Property n = 3; } }")
    assert resolve_types(model)[0].value("n") == 3


def test_conflicting_property_kinds():
    source = """
    Family m = {
      Component Type A = { Property n : int; }
      Component Type B = { Property n : string; }
      Component t : Executavel, A, B = { }
    }
    """
    with pytest.raises(ResolutionError, match="conflicting kinds"):
        resolve_types(parse_workflow(source))


@pytest.mark.parametrize(
    "body, message",
    [
        ("Component t : Nope = { }", "unknown type 'Nope'"),
        ("Component t : Juncao = { }", "cannot be assigned to a Task"),
        ('Component t : Executavel, RedundanciaTemporal = { Property num_tentativas = "x"; }', "expects int"),
        ("Component t : VarreduraDeParametros = { Property modo = rapido; }", "expects enum"),
        ("Component t : Executavel = { Property OPM.versao : set = {\"a\"}; }", "does not carry"),
        (
            "Component Type A extends B = { } Component Type B extends A = { } Component t : Executavel = { }",
            "cyclic extends",
        ),
    ],
)
def test_resolution_errors(body, message):
    with pytest.raises(ResolutionError, match=message):
        resolve_types(parse_workflow("Family m = { " + body + " }"))


def test_type_scopes_are_nested():
    source = """
    Family m = {
      Component f : Fluxo = {
        Family body = {
          Component Type Local = { }
          Component t : Executavel, Local = { }
        }
      }
      Component u : Executavel, Local = { }
    }
    """
    with pytest.raises(ResolutionError, match="unknown type 'Local'"):
        resolve_types(parse_workflow(source))


def test_structure_conflict_hides_parallelism_rules():
    assert rule_ids("Family m = { Component a : MemoriaCompartilhada, MapReduce = { } }") == ["R2"]
    assert rule_ids("Family m = { Component a : Executavel, Fluxo = { } }") == ["R2"]


def test_diagnostics_sorted_by_location():
    source = """Family m = {
  Component b : Executavel, Propagacao = { }
  Component a : Executavel, Log, OPM = { }
}"""
    diagnostics = check(source)
    assert [(d.path, d.rule_id) for d in diagnostics] == [("a", "R7"), ("a", "R11"), ("b", "R9")]
    assert diagnostics[0].render() == "R7 error a m.osc:3:3 Log needs a correction type (RedundanciaTemporal)"


def test_connector_detection_accepts_propagation():
    source = """
    Family m = {
      Connector c : Propagacao, MonitoramentoDeTempo = { Property tempo_limite : float = 1.0; }
      Connector d : Propagacao, Log = { }
    }
    """
    assert check(source) == []


def test_adding_opm_never_adds_diagnostics():
    for rule in RULES:
        path = RULE_FIXTURES / f"r{int(rule[1:]):02d}_good.osc"
        source = path.read_text(encoding="utf-8")
        model = parse_workflow(source)
        for inst in model.instances:
            if "OPM" in inst.assigned_types:
                continue
            header = f"{inst.name} : {', '.join(inst.assigned_types)} = {{"
            assert header in source
            tagged = source.replace(header, header[:-4] + ', OPM = { Property OPM.versao : set = {"v"};', 1)
            assert check(tagged) == [], (rule, inst.name)


def test_sweep_outputs_need_juncao():
    source = """
    Family m = {
      Component s : VarreduraDeParametros = {
        Port input seeds : Bifurcacao = { Property repeticoes : int = 2; }
        Port output out = { }
        Family body = {
          Component t : Executavel = { Port input seed = { } Port output out = { } }
          Binding seeds to t.seed;
          Binding out to t.out;
        }
      }
    }
    """
    diagnostics = check(source)
    assert [(d.rule_id, d.path) for d in diagnostics] == [("R5", "s.out")]


@pytest.mark.parametrize(
    "source, message",
    [
        ("Family m = { Component f : Fluxo = { } }", "Fluxo task needs a body"),
        ("Family m = { Component f : MapReduce = { } }", "Fluxo task needs a body"),
        (
            "Family m = { Component t : Executavel = { Family body = { Component u : Executavel = { } } } }",
            "Executavel task cannot have a body",
        ),
    ],
)
def test_body_follows_the_structure_type(source, message):
    (diagnostic,) = check(source)
    assert (diagnostic.rule_id, diagnostic.message) == ("R2", message)


@pytest.mark.parametrize(
    "source",
    [
        "Family m = { Component f : Fluxo = { Family body = { Component t : Executavel = { } } } }",
        "Family m = { Component t : Executavel = { } }",
    ],
)
def test_body_matching_the_structure_type_is_clean(source):
    assert check(source) == []
