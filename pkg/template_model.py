"""
Machine-actionable metadata templates: types, parser, canonical writer,
linter, value-set resolution and version comparison.

A template encodes a reporting guideline as an ordered list of typed fields.
Field order is column order in every generated artifact.
"""
import json
import re
from datetime import datetime
from typing import Literal, Protocol

from pydantic import BaseModel, ConfigDict, NonNegativeInt, ValidationError, model_validator

from errors import ResolutionError, TemplateSemanticError, TemplateSyntaxError, ValueSetNotFound, VersionMismatch
from logger import DEBUG, INFO, log_message

Datatype = Literal["text", "integer", "decimal", "boolean", "temporal", "categorical", "uri", "email"]
Granularity = Literal["year", "month", "day", "minute", "second"]
ValueSetSource = Literal["inline", "terminology-service"]

KEY_PATTERN = re.compile(r"[a-z][a-z0-9_]*")
VERSION_PATTERN = re.compile(r"(0|[1-9]\d*)\.(0|[1-9]\d*)\.(0|[1-9]\d*)")

DEFAULT_GRANULARITY = "day"
DEFAULT_TEMPORAL_FORMAT = "iso8601"
DEFAULT_BOOLEAN_LEXICON = ("Yes", "No")

# format name -> granularity -> (full-match regex, strptime pattern, Excel number format)
TEMPORAL_FORMATS: dict[str, dict[str, tuple[str, str, str]]] = {
    "iso8601": {
        "year": (r"\d{4}", "%Y", "0"),
        "month": (r"\d{4}-\d{2}", "%Y-%m", "@"),
        "day": (r"\d{4}-\d{2}-\d{2}", "%Y-%m-%d", "yyyy-mm-dd"),
        "minute": (r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}", "%Y-%m-%dT%H:%M", "yyyy-mm-dd hh:mm"),
        "second": (r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}", "%Y-%m-%dT%H:%M:%S", "yyyy-mm-dd hh:mm:ss"),
    },
    "iso8601_basic": {
        "year": (r"\d{4}", "%Y", "0"),
        "month": (r"\d{6}", "%Y%m", "@"),
        "day": (r"\d{8}", "%Y%m%d", "@"),
        "minute": (r"\d{8}T\d{4}", "%Y%m%dT%H%M", "@"),
        "second": (r"\d{8}T\d{6}", "%Y%m%dT%H%M%S", "@"),
    },
}

NUMERIC_TYPES = {"integer", "decimal"}
_CONSTRAINT_SCOPE = {
    "min_value": NUMERIC_TYPES,
    "max_value": NUMERIC_TYPES,
    "min_length": {"text"},
    "max_length": {"text"},
    "temporal_granularity": {"temporal"},
    "temporal_format": {"temporal"},
    "boolean_lexicon": {"boolean"},
}


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


# ── Domain types ──────────────────────────────────────────────────────────────
class Term(_Frozen):
    label: str
    synonyms: tuple[str, ...] = ()
    iri: str | None = None


def _check_unique_labels(terms: tuple[Term, ...]):
    seen = set()
    for term in terms:
        if term.label in seen:
            raise ValueError(f"duplicate label '{term.label}' in value set")
        seen.add(term.label)


class ValueSet(_Frozen):
    set_id: str
    terms: tuple[Term, ...]

    @model_validator(mode="after")
    def _unique_labels(self):
        _check_unique_labels(self.terms)
        return self

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(t.label for t in self.terms)


class ValueSetRef(_Frozen):
    source: ValueSetSource
    set_id: str
    terms: tuple[Term, ...] = ()

    @model_validator(mode="after")
    def _terms_match_source(self):
        if self.source == "inline":
            if not self.terms:
                raise ValueError("inline value set is empty")
            _check_unique_labels(self.terms)
        elif self.terms:
            raise ValueError("terminology-service value sets cannot carry inline terms")
        return self


class Constraints(_Frozen):
    min_value: int | float | None = None
    max_value: int | float | None = None
    min_length: NonNegativeInt | None = None
    max_length: NonNegativeInt | None = None
    temporal_granularity: Granularity | None = None
    temporal_format: str | None = None
    boolean_lexicon: tuple[str, str] | None = None

    @model_validator(mode="after")
    def _ranges(self):
        if self.min_value is not None and self.max_value is not None and self.min_value > self.max_value:
            raise ValueError(f"min_value {self.min_value} exceeds max_value {self.max_value}")
        if self.min_length is not None and self.max_length is not None and self.min_length > self.max_length:
            raise ValueError(f"min_length {self.min_length} exceeds max_length {self.max_length}")
        if self.temporal_format is not None and self.temporal_format not in TEMPORAL_FORMATS:
            raise ValueError(f"unknown temporal_format '{self.temporal_format}'")
        if self.boolean_lexicon is not None:
            yes, no = self.boolean_lexicon
            if not yes or not no or yes.lower() == no.lower():
                raise ValueError("boolean_lexicon needs two distinct non-empty entries")
        return self

    def present(self) -> dict:
        return self.model_dump(exclude_none=True)


class Field(_Frozen):
    key: str
    label: str
    datatype: Datatype
    required: bool = False
    constraints: Constraints = Constraints()
    value_set: ValueSetRef | None = None
    description: str | None = None

    @model_validator(mode="before")
    @classmethod
    def _default_inline_set_id(cls, data):
        if isinstance(data, dict):
            vs = data.get("value_set")
            if isinstance(vs, dict) and vs.get("source") == "inline" and "set_id" not in vs:
                data = {**data, "value_set": {**vs, "set_id": data.get("key", "")}}
        return data

    @model_validator(mode="after")
    def _consistency(self):
        if not KEY_PATTERN.fullmatch(self.key):
            raise ValueError(f"key '{self.key}' must match [a-z][a-z0-9_]*")
        if self.datatype == "categorical" and self.value_set is None:
            raise ValueError("categorical field has no value set")
        if self.datatype != "categorical" and self.value_set is not None:
            raise ValueError(f"{self.datatype} field cannot reference a value set")
        for name in self.constraints.present():
            if self.datatype not in _CONSTRAINT_SCOPE[name]:
                raise ValueError(f"constraint '{name}' does not apply to {self.datatype} fields")
        return self

    @property
    def granularity(self) -> str:
        return self.constraints.temporal_granularity or DEFAULT_GRANULARITY

    @property
    def temporal_format(self) -> str:
        return self.constraints.temporal_format or DEFAULT_TEMPORAL_FORMAT

    @property
    def lexicon(self) -> tuple[str, str]:
        return self.constraints.boolean_lexicon or DEFAULT_BOOLEAN_LEXICON


class Template(_Frozen):
    id: str
    name: str
    version: str
    description: str | None = None
    fields: tuple[Field, ...]

    @model_validator(mode="after")
    def _structure(self):
        if not VERSION_PATTERN.fullmatch(self.version):
            raise ValueError(f"version '{self.version}' is not major.minor.patch")
        if not self.fields:
            raise ValueError("template has no fields")
        seen = set()
        for f in self.fields:
            if f.key in seen:
                raise ValueError(f"duplicate field key '{f.key}'")
            seen.add(f.key)
        return self

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(f.key for f in self.fields)

    @property
    def version_tuple(self) -> tuple[int, int, int]:
        major, minor, patch = self.version.split(".")
        return int(major), int(minor), int(patch)

    def field(self, key: str) -> Field | None:
        return next((f for f in self.fields if f.key == key), None)


class ResolvedTemplate(Template):
    """Template whose categorical fields all carry a materialized value set"""

    value_sets: dict[str, ValueSet] = {}

    def value_set(self, key: str) -> ValueSet:
        return self.value_sets[key]

    def labels(self, key: str) -> tuple[str, ...]:
        return self.value_sets[key].labels

    @property
    def template(self) -> Template:
        return Template.model_validate(self.model_dump(exclude={"value_sets"}))


class LintFinding(_Frozen):
    code: Literal["missing_description", "near_duplicate_label", "nonstandard_lexicon"]
    field_key: str | None
    message: str


class ChangeClass(_Frozen):
    level: Literal["major", "minor", "patch-equivalent"]
    reasons: tuple[str, ...] = ()


class ValueSetProvider(Protocol):
    """Anything that can materialize a value set by id"""

    def fetch_value_set(self, set_id: str) -> ValueSet: ...


# ── Temporal helpers ──────────────────────────────────────────────────────────
def temporal_pattern(field: Field) -> tuple[str, str, str]:
    return TEMPORAL_FORMATS[field.temporal_format][field.granularity]


def parse_temporal(value: str, field: Field) -> datetime | None:
    """Exact-format parse; zero padding is mandatory"""
    regex, strptime_fmt, _ = temporal_pattern(field)
    if not re.fullmatch(regex, value):
        return None
    try:
        return datetime.strptime(value, strptime_fmt)
    except ValueError:
        return None


def format_temporal(moment: datetime, field: Field) -> str:
    return moment.strftime(temporal_pattern(field)[1])


# ── Parsing and writing ───────────────────────────────────────────────────────
def _first_error(e: ValidationError) -> str:
    err = e.errors()[0]
    msg = err["msg"].removeprefix("Value error, ")
    loc = ".".join(str(p) for p in err["loc"])
    return f"{loc}: {msg}" if loc else msg


def parse_template(doc: bytes | str) -> Template:
    """Parse a template document; raises TemplateSyntaxError or TemplateSemanticError"""
    if isinstance(doc, bytes):
        try:
            doc = doc.decode("utf-8")
        except UnicodeDecodeError as e:
            raise TemplateSyntaxError(f"document is not UTF-8: {e.reason}", 1, e.start + 1)
    try:
        data = json.loads(doc)
    except json.JSONDecodeError as e:
        raise TemplateSyntaxError(e.msg, e.lineno, e.colno)

    if not isinstance(data, dict):
        raise TemplateSemanticError("template document must be a JSON object")
    raw_fields = data.get("fields")
    if not isinstance(raw_fields, list):
        raise TemplateSemanticError("'fields' must be an array")
    if not raw_fields:
        raise TemplateSemanticError("template has no fields")

    fields = []
    seen = set()
    for position, raw in enumerate(raw_fields, start=1):
        key = raw.get("key") if isinstance(raw, dict) else None
        label = key if isinstance(key, str) and key else f"#{position}"
        try:
            field = Field.model_validate(raw)
        except ValidationError as e:
            raise TemplateSemanticError(_first_error(e), label)
        if field.key in seen:
            raise TemplateSemanticError("duplicate field key", field.key)
        seen.add(field.key)
        fields.append(field)

    try:
        template = Template.model_validate({**data, "fields": fields})
    except ValidationError as e:
        raise TemplateSemanticError(_first_error(e))
    log_message(DEBUG, f"Parsed template {template.id}@{template.version} ({len(fields)} fields)")
    return template


def _field_document(f: Field) -> dict:
    doc = {"key": f.key, "label": f.label, "datatype": f.datatype, "required": f.required}
    constraints = f.constraints.present()
    if "boolean_lexicon" in constraints:
        constraints["boolean_lexicon"] = list(constraints["boolean_lexicon"])
    if constraints:
        doc["constraints"] = constraints
    if f.value_set is not None:
        vs = {"source": f.value_set.source}
        if f.value_set.source != "inline" or f.value_set.set_id != f.key:
            vs["set_id"] = f.value_set.set_id
        if f.value_set.source == "inline":
            vs["terms"] = [
                {"label": t.label, "synonyms": list(t.synonyms), "iri": t.iri}
                for t in f.value_set.terms
            ]
        doc["value_set"] = vs
    if f.description is not None:
        doc["description"] = f.description
    return doc


def render_template(t: Template) -> str:
    """Canonical writer: fixed key order, 2-space indent, trailing newline"""
    doc = {
        "id": t.id,
        "name": t.name,
        "version": t.version,
        "description": t.description,
        "fields": [_field_document(f) for f in t.fields],
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


# ── Lint ──────────────────────────────────────────────────────────────────────
def _value_sets_for_lint(t: Template) -> dict[str, tuple[str, ...]]:
    if isinstance(t, ResolvedTemplate):
        return {key: vs.labels for key, vs in t.value_sets.items()}
    return {
        f.key: tuple(term.label for term in f.value_set.terms)
        for f in t.fields
        if f.value_set is not None and f.value_set.source == "inline"
    }


def lint_template(t: Template) -> list[LintFinding]:
    """Quality warnings; never errors and never consulted by validation"""
    from repair_engine import edit_distance

    findings = []
    for f in t.fields:
        if not f.description:
            findings.append(LintFinding(
                code="missing_description", field_key=f.key,
                message=f"field '{f.key}' has no description",
            ))
        if f.datatype == "boolean" and f.lexicon != DEFAULT_BOOLEAN_LEXICON:
            findings.append(LintFinding(
                code="nonstandard_lexicon", field_key=f.key,
                message=f"field '{f.key}' uses boolean lexicon {list(f.lexicon)} instead of {list(DEFAULT_BOOLEAN_LEXICON)}",
            ))

    for key, labels in _value_sets_for_lint(t).items():
        for i, a in enumerate(labels):
            for b in labels[i + 1:]:
                if edit_distance(a, b) == 1:
                    findings.append(LintFinding(
                        code="near_duplicate_label", field_key=key,
                        message=f"value set of '{key}' has near-duplicate labels '{a}' and '{b}'",
                    ))
    return findings


# ── Resolution ────────────────────────────────────────────────────────────────
def resolve_template(t: Template, terms: ValueSetProvider | None = None) -> ResolvedTemplate:
    """Materialize every categorical field's value set"""
    value_sets = {}
    for f in t.fields:
        if f.value_set is None:
            continue
        ref = f.value_set
        if ref.source == "inline":
            value_sets[f.key] = ValueSet(set_id=ref.set_id, terms=ref.terms)
            continue
        if terms is None:
            raise ResolutionError("no terminology source configured", f.key, ref.set_id)
        try:
            vs = terms.fetch_value_set(ref.set_id)
        except ValueSetNotFound:
            raise ResolutionError("unresolvable value set", f.key, ref.set_id)
        if not vs.terms:
            raise ResolutionError("resolved value set is empty", f.key, ref.set_id)
        value_sets[f.key] = vs

    if value_sets:
        log_message(INFO, f"Resolved {len(value_sets)} value sets for {t.id}@{t.version}")
    base = t.template if isinstance(t, ResolvedTemplate) else t
    # not dict(base): it would call the `keys` property as Mapping.keys()
    return ResolvedTemplate(**{name: getattr(base, name) for name in Template.model_fields}, value_sets=value_sets)


# ── Versioning ────────────────────────────────────────────────────────────────
def _bounds_narrowed(old: Constraints, new: Constraints) -> list[str]:
    narrowed = []
    for low, high in (("min_value", "max_value"), ("min_length", "max_length")):
        o_lo, n_lo = getattr(old, low), getattr(new, low)
        o_hi, n_hi = getattr(old, high), getattr(new, high)
        if n_lo is not None and (o_lo is None or n_lo > o_lo):
            narrowed.append(low)
        if n_hi is not None and (o_hi is None or n_hi < o_hi):
            narrowed.append(high)
    return narrowed


def _bounds_widened(old: Constraints, new: Constraints) -> list[str]:
    widened = []
    for low, high in (("min_value", "max_value"), ("min_length", "max_length")):
        o_lo, n_lo = getattr(old, low), getattr(new, low)
        o_hi, n_hi = getattr(old, high), getattr(new, high)
        if o_lo is not None and (n_lo is None or n_lo < o_lo):
            widened.append(low)
        if o_hi is not None and (n_hi is None or n_hi > o_hi):
            widened.append(high)
    return widened


def _compare_field(old: Field, new: Field, major: list[str], minor: list[str], patch: list[str]):
    key = new.key
    if old.datatype != new.datatype:
        major.append(f"changed datatype of '{key}' from {old.datatype} to {new.datatype}")
        return
    if new.required and not old.required:
        major.append(f"field '{key}' became required")
    elif old.required and not new.required:
        minor.append(f"field '{key}' became optional")

    for name in _bounds_narrowed(old.constraints, new.constraints):
        major.append(f"narrowed {name} of '{key}'")
    for name in _bounds_widened(old.constraints, new.constraints):
        minor.append(f"widened {name} of '{key}'")
    if old.datatype == "temporal" and (old.granularity, old.temporal_format) != (new.granularity, new.temporal_format):
        major.append(f"changed temporal format of '{key}'")
    if old.datatype == "boolean" and old.lexicon != new.lexicon:
        major.append(f"changed boolean lexicon of '{key}'")

    if old.value_set != new.value_set:
        if old.value_set.source != new.value_set.source or old.value_set.set_id != new.value_set.set_id:
            minor.append(f"changed value set reference of '{key}'")
        else:
            patch.append(f"updated value set content of '{key}'")
    if (old.label, old.description) != (new.label, new.description):
        minor.append(f"modified label or description of '{key}'")


def compare_versions(old: Template, new: Template) -> ChangeClass:
    """Classify the change from old to new as major, minor or patch-equivalent"""
    if old.id != new.id:
        raise VersionMismatch(f"cannot compare templates '{old.id}' and '{new.id}'")

    major, minor, patch = [], [], []
    old_fields = {f.key: f for f in old.fields}
    new_fields = {f.key: f for f in new.fields}
    removed = [k for k in old.keys if k not in new_fields]
    added = [k for k in new.keys if k not in old_fields]

    # A removed/added pair with the same label and datatype reads as a rename
    for old_key in list(removed):
        of = old_fields[old_key]
        match = next(
            (k for k in added if (new_fields[k].label, new_fields[k].datatype) == (of.label, of.datatype)),
            None,
        )
        if match is not None:
            major.append(f"renamed field '{old_key}' to '{match}'")
            removed.remove(old_key)
            added.remove(match)

    major.extend(f"removed field '{k}'" for k in removed)
    for k in added:
        if new_fields[k].required:
            major.append(f"added required field '{k}'")
        else:
            minor.append(f"added optional field '{k}'")

    for key in old.keys:
        if key in new_fields:
            _compare_field(old_fields[key], new_fields[key], major, minor, patch)

    common = [k for k in old.keys if k in new_fields]
    if common != [k for k in new.keys if k in old_fields]:
        minor.append("reordered fields")
    if (old.name, old.description) != (new.name, new.description):
        minor.append("modified template name or description")

    if major:
        return ChangeClass(level="major", reasons=tuple(major + minor + patch))
    if minor:
        return ChangeClass(level="minor", reasons=tuple(minor + patch))
    return ChangeClass(level="patch-equivalent", reasons=tuple(patch))


def next_version(version: str, change: ChangeClass) -> str:
    """Release number that matches the size of a change"""
    major, minor, patch = (int(p) for p in version.split("."))
    if change.level == "major":
        return f"{major + 1}.0.0"
    if change.level == "minor":
        return f"{major}.{minor + 1}.0"
    return f"{major}.{minor}.{patch + 1}"
