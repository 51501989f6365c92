"""
Checks a Table against a ResolvedTemplate and builds the clustered,
summarized issue report.

Validity is strict: values are compared as entered. Anything a repair could
fix (stray spaces, quotes, case drift) is still an issue here.
"""
import json
import re
from collections.abc import Collection, Sequence
from decimal import Decimal, InvalidOperation
from typing import Literal, get_args
from urllib.parse import urlsplit

from pydantic import BaseModel, ConfigDict, model_validator

from logger import DEBUG, WARNING, log_message
from table_ingest import Cell, Table
from template_model import Field, ResolvedTemplate, parse_temporal, temporal_pattern

IssueKind = Literal[
    "missing_required",
    "type_mismatch",
    "out_of_range",
    "bad_length",
    "not_in_value_set",
    "bad_temporal",
    "bad_uri",
    "bad_email",
    "bad_boolean",
    "unknown_column",
    "missing_column",
]
ISSUE_KINDS: tuple[str, ...] = get_args(IssueKind)
TABLE_LEVEL_KINDS = {"unknown_column", "missing_column"}

INTEGER_RE = re.compile(r"[+-]?[0-9]+")
DECIMAL_RE = re.compile(r"[+-]?([0-9]+(\.[0-9]*)?|\.[0-9]+)([eE][+-]?[0-9]+)?")
EMAIL_RE = re.compile(r"[^@\s]+@[^@\s.]+(\.[^@\s.]+)+")
URI_SCHEMES = {"http", "https", "ftp"}
MAX_LISTED_VALUES = 10
_STRPTIME_DISPLAY = {"%Y": "YYYY", "%m": "MM", "%d": "DD", "%H": "hh", "%M": "mm", "%S": "ss"}


class Issue(BaseModel):
    model_config = ConfigDict(frozen=True)

    row_index: int
    column_key: str
    kind: IssueKind
    category: Literal["completeness", "adherence"]
    observed: str
    expected: str

    @model_validator(mode="before")
    @classmethod
    def _category_from_kind(cls, data):
        if isinstance(data, dict) and "category" not in data:
            kind = data.get("kind")
            data = {**data, "category": "completeness" if kind == "missing_required" else "adherence"}
        return data

    @model_validator(mode="after")
    def _consistent(self):
        if (self.kind == "missing_required") != (self.category == "completeness"):
            raise ValueError(f"{self.kind} issues cannot be {self.category} issues")
        if self.kind in TABLE_LEVEL_KINDS and self.row_index != 0:
            raise ValueError("column issues carry row_index 0")
        return self


class Cluster(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: IssueKind
    column_key: str
    issues: tuple[int, ...]


class Summary(BaseModel):
    model_config = ConfigDict(frozen=True)

    total_records: int
    erroneous_records: int
    issue_counts: dict[str, int]
    completeness_count: int
    adherence_count: int

    @property
    def clean_records(self) -> int:
        return self.total_records - self.erroneous_records


class TemplateRef(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    version: str


class ValidationReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    template: TemplateRef
    summary: Summary
    clusters: tuple[Cluster, ...]
    issues: tuple[Issue, ...]


# ── Cell checks ───────────────────────────────────────────────────────────────
def _temporal_display(f: Field) -> str:
    display = temporal_pattern(f)[1]
    for directive, text in _STRPTIME_DISPLAY.items():
        display = display.replace(directive, text)
    return display


def _range_text(f: Field) -> str:
    lo, hi = f.constraints.min_value, f.constraints.max_value
    if lo is not None and hi is not None:
        return f"{f.datatype} between {lo} and {hi}"
    if lo is not None:
        return f"{f.datatype} >= {lo}"
    return f"{f.datatype} <= {hi}"


def _length_text(f: Field) -> str:
    lo, hi = f.constraints.min_length, f.constraints.max_length
    if lo is not None and hi is not None:
        return f"text of {lo} to {hi} characters"
    if lo is not None:
        return f"text of at least {lo} characters"
    return f"text of at most {hi} characters"


def _value_set_text(f: Field, labels: Collection[str]) -> str:
    if len(labels) <= MAX_LISTED_VALUES:
        return "one of: " + ", ".join(labels)
    return f"one of the {len(labels)} permitted values of value set '{f.value_set.set_id}'"


def _in_range(number: Decimal, f: Field) -> bool:
    lo, hi = f.constraints.min_value, f.constraints.max_value
    if lo is not None and number < Decimal(str(lo)):
        return False
    if hi is not None and number > Decimal(str(hi)):
        return False
    return True


def is_uri(value: str) -> bool:
    if any(ch.isspace() for ch in value):
        return False
    try:
        parts = urlsplit(value)
    except ValueError:
        return False
    return parts.scheme.lower() in URI_SCHEMES and bool(parts.netloc)


def _check(f: Field, raw: str, labels: Collection[str] | None) -> tuple[str, str] | None:
    """(kind, expected) for the single defect of a non-blank value, or None"""
    if f.datatype in ("integer", "decimal"):
        pattern = INTEGER_RE if f.datatype == "integer" else DECIMAL_RE
        if not pattern.fullmatch(raw):
            return "type_mismatch", f.datatype
        try:
            number = Decimal(raw)
        except InvalidOperation:
            return "type_mismatch", f.datatype
        if not _in_range(number, f):
            return "out_of_range", _range_text(f)
    elif f.datatype == "text":
        lo, hi = f.constraints.min_length, f.constraints.max_length
        if (lo is not None and len(raw) < lo) or (hi is not None and len(raw) > hi):
            return "bad_length", _length_text(f)
    elif f.datatype == "temporal":
        if parse_temporal(raw, f) is None:
            return "bad_temporal", f"{f.granularity} formatted as {_temporal_display(f)}"
    elif f.datatype == "categorical":
        if raw not in labels:
            return "not_in_value_set", _value_set_text(f, labels)
    elif f.datatype == "boolean":
        if raw.lower() not in {entry.lower() for entry in f.lexicon}:
            return "bad_boolean", " or ".join(f.lexicon)
    elif f.datatype == "uri":
        if not is_uri(raw):
            return "bad_uri", "absolute http, https or ftp URI"
    elif f.datatype == "email":
        if not EMAIL_RE.fullmatch(raw):
            return "bad_email", "email address of the form local@domain.tld"
    return None


def _field_labels(f: Field, labels: Collection[str] | None) -> Collection[str] | None:
    if f.datatype != "categorical" or labels is not None:
        return labels
    if f.value_set.source != "inline":
        raise ValueError(f"value set of '{f.key}' is not resolved")
    return tuple(t.label for t in f.value_set.terms)


def validate_cell(f: Field, c: Cell, labels: Collection[str] | None = None, row_index: int = 0) -> list[Issue]:
    """
    Issues for one cell. Categorical fields need the resolved labels unless
    their value set is inline. A blank required cell yields only
    missing_required; every other cell yields at most one issue.
    """
    if c.is_blank:
        if f.required:
            return [Issue(row_index=row_index, column_key=f.key, kind="missing_required",
                          observed=c.raw, expected="a value")]
        return []
    found = _check(f, c.raw, _field_labels(f, labels))
    if found is None:
        return []
    kind, expected = found
    return [Issue(row_index=row_index, column_key=f.key, kind=kind, observed=c.raw, expected=expected)]


# ── Table checks ──────────────────────────────────────────────────────────────
def _summarize(issues: Sequence[Issue], total_records: int) -> Summary:
    counts = {kind: 0 for kind in ISSUE_KINDS}
    for issue in issues:
        counts[issue.kind] += 1
    completeness = counts["missing_required"]
    return Summary(
        total_records=total_records,
        erroneous_records=len({i.row_index for i in issues if i.row_index >= 1}),
        issue_counts=counts,
        completeness_count=completeness,
        adherence_count=len(issues) - completeness,
    )


def summarize(report: ValidationReport) -> Summary:
    """Recompute the summary from a report's issues"""
    return _summarize(report.issues, report.summary.total_records)


def cluster_issues(issues: Sequence[Issue]) -> tuple[Cluster, ...]:
    groups: dict[tuple[str, str], list[int]] = {}
    for index, issue in enumerate(issues):
        groups.setdefault((issue.kind, issue.column_key), []).append(index)
    return tuple(
        Cluster(kind=kind, column_key=column, issues=tuple(indices))
        for (kind, column), indices in groups.items()
    )


def validate_table(rt: ResolvedTemplate, t: Table) -> ValidationReport:
    """Full report: column issues first, then cells row-major in template field order"""
    issues: list[Issue] = []
    present = set(t.headers)
    for f in rt.fields:
        if f.key not in present:
            issues.append(Issue(row_index=0, column_key=f.key, kind="missing_column",
                                observed="", expected=f"column '{f.key}'"))
    for header in t.headers:
        if rt.field(header) is None:
            issues.append(Issue(row_index=0, column_key=header, kind="unknown_column",
                                observed=header, expected=f"a field of {rt.id}@{rt.version}"))

    known = [h for h in t.headers if rt.field(h) is not None]
    if known != [k for k in rt.keys if k in present]:
        log_message(WARNING, f"Column order differs from {rt.id}@{rt.version} field order")

    checks = []
    for f in rt.fields:
        if f.key in present:
            labels = rt.labels(f.key) if f.datatype == "categorical" else None
            checks.append((f, t.column_index(f.key), labels))

    for record in t.records:
        for f, column, labels in checks:
            issues.extend(validate_cell(f, record.cells[column], labels, record.row_index))

    log_message(DEBUG, f"Validated {len(t.records)} records against {rt.id}@{rt.version}: {len(issues)} issues")
    return ValidationReport(
        template=TemplateRef(id=rt.id, version=rt.version),
        summary=_summarize(issues, len(t.records)),
        clusters=cluster_issues(issues),
        issues=tuple(issues),
    )


# ── Serialization ─────────────────────────────────────────────────────────────
def report_to_json(report: ValidationReport) -> str:
    """The canonical report document shared by the service, CLI and dashboard"""
    return json.dumps(report.model_dump(mode="json"), indent=2, ensure_ascii=False) + "\n"


def report_from_json(text: str | bytes) -> ValidationReport:
    return ValidationReport.model_validate_json(text)
