"""
Tests for template parsing, rendering, linting, resolution and versioning.
Run with: pytest test_template_model.py -v
"""
import json

import pytest

from conftest import FIXTURES
from errors import ResolutionError, TemplateSemanticError, TemplateSyntaxError, VersionMismatch
from table_ingest import parse_delimited
from template_model import (
    ChangeClass,
    Constraints,
    Field,
    ResolvedTemplate,
    Template,
    Term,
    ValueSetRef,
    compare_versions,
    lint_template,
    next_version,
    parse_template,
    render_template,
    resolve_template,
)
from validation_engine import validate_table


def _doc(fields, **top):
    return json.dumps({"id": "demo", "name": "Demo", "version": "1.0.0", "fields": fields, **top})


def _text(key, **extra):
    return {"key": key, "label": key.replace("_", " ").title(), "datatype": "text", "description": "d", **extra}


UNITS = [{"label": "Year"}, {"label": "Month"}, {"label": "Day"}]


def test_parse_keeps_field_order():
    """Fields come back in document order"""
    t = parse_template(_doc([
        _text("parent_sample_id", required=True),
        {"key": "analyte_class", "label": "Analyte class", "datatype": "categorical", "required": True,
         "value_set": {"source": "terminology-service", "set_id": "analyte_class"}},
    ]))
    assert t.keys == ("parent_sample_id", "analyte_class")
    assert t.fields[0].required and t.fields[1].datatype == "categorical"


def test_parse_accepts_bytes():
    t = parse_template(_doc([_text("lab_id")]).encode("utf-8"))
    assert t.id == "demo"


def test_zero_fields_is_semantic_error():
    with pytest.raises(TemplateSemanticError, match="template has no fields"):
        parse_template(_doc([]))


def test_inverted_range_names_field():
    doc = _doc([{"key": "thickness_value", "label": "T", "datatype": "decimal", "constraints": {"min_value": 10, "max_value": 5}}])
    with pytest.raises(TemplateSemanticError) as excinfo:
        parse_template(doc)
    assert excinfo.value.field_key == "thickness_value"
    assert "thickness_value" in str(excinfo.value)


def test_categorical_without_value_set():
    with pytest.raises(TemplateSemanticError, match="no value set") as excinfo:
        parse_template(_doc([{"key": "unit", "label": "Unit", "datatype": "categorical"}]))
    assert excinfo.value.field_key == "unit"


def test_duplicate_key():
    with pytest.raises(TemplateSemanticError, match="duplicate") as excinfo:
        parse_template(_doc([_text("lab_id"), _text("lab_id")]))
    assert excinfo.value.field_key == "lab_id"


def test_constraint_outside_datatype_scope():
    with pytest.raises(TemplateSemanticError, match="min_length"):
        parse_template(_doc([{"key": "n", "label": "N", "datatype": "integer", "constraints": {"min_length": 1}}]))


def test_bad_key_and_version():
    with pytest.raises(TemplateSemanticError):
        parse_template(_doc([_text("Lab-ID")]))
    with pytest.raises(TemplateSemanticError, match="major.minor.patch"):
        parse_template(_doc([_text("lab_id")], version="1.0"))


def test_syntax_error_reports_position():
    with pytest.raises(TemplateSyntaxError) as excinfo:
        parse_template('{\n  "id": "demo",\n  "fields": [,]\n}')
    assert excinfo.value.line == 3
    assert excinfo.value.column > 0


def test_render_round_trip_for_fixtures():
    """parse(render(t)) == t and rendering is byte-stable"""
    for path in sorted((FIXTURES / "registry").glob("*/*.json")):
        t = parse_template(path.read_bytes())
        rendered = render_template(t)
        assert parse_template(rendered) == t
        assert render_template(parse_template(rendered)) == rendered
        assert rendered.endswith("}\n")


def test_render_key_order():
    t = parse_template(_doc([_text("lab_id")], description="x"))
    rendered = json.loads(render_template(t))
    assert list(rendered) == ["id", "name", "version", "description", "fields"]
    assert list(rendered["fields"][0]) == ["key", "label", "datatype", "required", "description"]


def test_inline_set_id_defaults_to_key():
    t = parse_template(_doc([{"key": "unit", "label": "Unit", "datatype": "categorical", "description": "u",
                              "value_set": {"source": "inline", "terms": UNITS}}]))
    assert t.fields[0].value_set.set_id == "unit"
    assert "set_id" not in json.loads(render_template(t))["fields"][0]["value_set"]


def test_lint_clean_template():
    t = parse_template(_doc([_text("lab_id")]))
    assert lint_template(t) == []


def test_lint_near_duplicate_labels():
    t = parse_template(_doc([{"key": "unit", "label": "Unit", "datatype": "categorical", "description": "u",
                              "value_set": {"source": "inline", "terms": [{"label": "Day"}, {"label": "Days"}]}}]))
    findings = lint_template(t)
    assert [f.code for f in findings] == ["near_duplicate_label"]


def test_lint_missing_description_and_lexicon():
    t = parse_template(_doc([
        {"key": "lab_id", "label": "Lab", "datatype": "text"},
        {"key": "flag", "label": "Flag", "datatype": "boolean", "description": "f",
         "constraints": {"boolean_lexicon": ["Y", "N"]}},
    ]))
    codes = sorted(f.code for f in lint_template(t))
    assert codes == ["missing_description", "nonstandard_lexicon"]


def test_lint_never_changes_validation(rnaseq_text, rnaseq):
    """Lint findings are advisory only"""
    table = parse_delimited(rnaseq_text)
    bare = rnaseq.model_copy(update={"fields": tuple(f.model_copy(update={"description": None}) for f in rnaseq.fields)})
    assert lint_template(bare)
    assert validate_table(bare, table) == validate_table(rnaseq, table)


def test_resolve_inline_set_unchanged():
    t = parse_template(_doc([{"key": "unit", "label": "Unit", "datatype": "categorical", "description": "u",
                              "value_set": {"source": "inline", "terms": UNITS}}]))
    rt = resolve_template(t)
    assert isinstance(rt, ResolvedTemplate)
    assert rt.labels("unit") == ("Year", "Month", "Day")
    assert rt.template == t


def test_resolve_keeps_every_template_attribute():
    t = parse_template(_doc([_text("lab_id"), {"key": "unit", "label": "Unit", "datatype": "categorical", "description": "u",
                                                "value_set": {"source": "inline", "terms": UNITS}}],
                            description="Demo template"))
    rt = resolve_template(t)
    assert rt.keys == ("lab_id", "unit")
    assert (rt.id, rt.name, rt.version, rt.description) == ("demo", "Demo", "1.0.0", "Demo template")

    again = resolve_template(rt)
    assert again == rt
    assert again.template == t


def test_resolve_fixture_set(terms_client):
    t = parse_template((FIXTURES / "registry" / "rnaseq" / "5.0.0.json").read_bytes())
    rt = resolve_template(t, terms_client)
    labels = rt.labels("analyte_class")
    for label in ("Chromatin", "Collagen", "DNA", "DNA + RNA", "Endogenous fluorophores", "Fluorochrome", "Lipid"):
        assert label in labels


def test_resolve_without_categoricals_is_identity():
    t = parse_template(_doc([_text("lab_id")]))
    rt = resolve_template(t)
    assert rt.value_sets == {}
    assert rt.template == t


def test_resolve_unknown_set_names_field_and_set(terms_client):
    t = parse_template(_doc([{"key": "stain", "label": "Stain", "datatype": "categorical",
                              "value_set": {"source": "terminology-service", "set_id": "no_such_set"}}]))
    with pytest.raises(ResolutionError) as excinfo:
        resolve_template(t, terms_client)
    assert excinfo.value.field_key == "stain"
    assert excinfo.value.set_id == "no_such_set"


def _base():
    return Template(id="demo", name="Demo", version="1.0.0", fields=(
        Field(key="lab_id", label="Lab ID", datatype="text"),
        Field(key="thickness_value", label="Thickness", datatype="decimal", constraints=Constraints(min_value=0, max_value=100)),
    ))


def _with(t: Template, *fields: Field, **update) -> Template:
    return t.model_copy(update={"fields": fields or t.fields, **update})


def test_compare_identical_is_patch_equivalent():
    t = _base()
    assert compare_versions(t, t) == ChangeClass(level="patch-equivalent", reasons=())


def test_compare_added_required_field_is_major():
    old = _base()
    new = _with(old, *old.fields, Field(key="acquisition_instrument_model", label="Instrument", datatype="text", required=True))
    change = compare_versions(old, new)
    assert change.level == "major"
    assert any("added required field" in r for r in change.reasons)


def test_compare_added_optional_field_is_minor_and_antisymmetric():
    old = _base()
    new = _with(old, *old.fields, Field(key="notes", label="Notes", datatype="text"))
    assert compare_versions(old, new).level == "minor"
    assert compare_versions(new, old).level == "major"


def test_compare_rename_narrow_widen_and_datatype():
    old = _base()
    renamed = _with(old, Field(key="lab_identifier", label="Lab ID", datatype="text"), old.fields[1])
    assert any("renamed" in r for r in compare_versions(old, renamed).reasons)

    narrowed = _with(old, old.fields[0], old.fields[1].model_copy(update={"constraints": Constraints(min_value=0, max_value=50)}))
    assert compare_versions(old, narrowed).level == "major"

    widened = _with(old, old.fields[0], old.fields[1].model_copy(update={"constraints": Constraints(min_value=0)}))
    assert compare_versions(old, widened).level == "minor"

    retyped = _with(old, old.fields[0], old.fields[1].model_copy(update={"datatype": "integer"}))
    assert compare_versions(old, retyped).level == "major"


def test_compare_value_set_content_is_patch_equivalent():
    unit = Field(key="unit", label="Unit", datatype="categorical",
                 value_set=ValueSetRef(source="inline", set_id="unit", terms=(Term(label="Day"),)))
    old = Template(id="demo", name="Demo", version="1.0.0", fields=(unit,))
    richer = unit.model_copy(update={"value_set": ValueSetRef(source="inline", set_id="unit",
                                                              terms=(Term(label="Day"), Term(label="Hour")))})
    change = compare_versions(old, _with(old, richer))
    assert change.level == "patch-equivalent"
    assert change.reasons


def test_compare_different_ids():
    with pytest.raises(VersionMismatch):
        compare_versions(_base(), _base().model_copy(update={"id": "other"}))


def test_next_version():
    assert next_version("5.0.0", ChangeClass(level="major")) == "6.0.0"
    assert next_version("2.1.3", ChangeClass(level="minor")) == "2.2.0"
    assert next_version("2.2.0", ChangeClass(level="patch-equivalent")) == "2.2.1"
