"""
Repair suggestions for adherence issues, and patch application.

Suggestions come from four sources, tried in priority order: synonym hits
(score 1.0), literal coercion (0.9), edit-distance matches (below 1.0) and,
for categorical values with no close match, a pluggable semantic ranker.
Nothing here changes a table until the caller accepts a patch.
"""
import io
import json
import math
import re
from collections.abc import Iterable, Sequence
from datetime import datetime
from functools import lru_cache
from typing import Annotated, Literal, Protocol

from pydantic import BaseModel, ConfigDict, TypeAdapter, ValidationError
from pydantic import Field as PydanticField

from errors import PatchError
from logger import DEBUG, INFO, WARNING, log_message
from table_ingest import Cell, Record, Table, first_visible_sheet, load_workbook
from template_model import (
    NUMERIC_TYPES,
    TEMPORAL_FORMATS,
    Field,
    ResolvedTemplate,
    Term,
    ValueSet,
    format_temporal,
    parse_temporal,
)
from term_client import SynonymIndex, build_synonym_index, normalize_term
from validation_engine import DECIMAL_RE, INTEGER_RE, Issue, ValidationReport, validate_cell

MAX_SUGGESTIONS = 3
SYNONYM_SCORE = 1.0
COERCION_SCORE = 0.9
TRUE_ALIASES = {"true", "t", "y", "1"}
FALSE_ALIASES = {"false", "f", "n", "0"}

THOUSANDS_RE = re.compile(r"[+-]?[0-9]{1,3}(,[0-9]{3})+(\.[0-9]+)?")
COMMA_DECIMAL_RE = re.compile(r"[+-]?[0-9]*,[0-9]+")
INTEGRAL_DECIMAL_RE = re.compile(r"([+-]?[0-9]+)\.0*")
_TOKEN_RE = re.compile(r"[a-z0-9]+")


# ── Types ─────────────────────────────────────────────────────────────────────
class Suggestion(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: str
    score: Annotated[float, PydanticField(ge=0.0, le=1.0)]
    provenance: Literal["distance", "synonym", "coercion", "semantic"]


class Patch(BaseModel):
    """One accepted cell edit; serialized as {"row", "column", "value"}"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    row_index: Annotated[int, PydanticField(alias="row", ge=1)]
    column_key: Annotated[str, PydanticField(alias="column")]
    new_value: Annotated[str, PydanticField(alias="value")]


_patch_list = TypeAdapter(list[Patch])


def patches_from_json(text: str | bytes) -> list[Patch]:
    try:
        return _patch_list.validate_json(text)
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(p) for p in err["loc"])
        raise PatchError(f"invalid patch list at {loc or 'top level'}: {err['msg']}")


def patches_to_json(patches: Sequence[Patch]) -> str:
    return json.dumps([p.model_dump(by_alias=True) for p in patches], indent=2, ensure_ascii=False) + "\n"


def _ranked(suggestions: Iterable[Suggestion]) -> list[Suggestion]:
    return sorted(suggestions, key=lambda s: (-s.score, s.value))


# ── Distance ──────────────────────────────────────────────────────────────────
def edit_distance(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute distance"""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cb),
            ))
        previous = current
    return previous[-1]


def _strip_quotes(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        value = value[1:-1].strip()
    return value


def normalize_observed(value: str) -> str:
    """Strip surrounding quotes and spaces, lowercase, collapse whitespace"""
    return normalize_term(_strip_quotes(value))


def distance_threshold(normalized: str) -> int:
    return max(2, math.ceil(0.34 * len(normalized)))


@lru_cache(maxsize=256)
def synonym_index(vs: ValueSet) -> SynonymIndex:
    return build_synonym_index(vs)


# ── Categorical ───────────────────────────────────────────────────────────────
def suggest_categorical(f: Field, observed: str, idx: SynonymIndex) -> list[Suggestion]:
    """Synonym hit first; otherwise up to three labels within the distance threshold"""
    norm = normalize_observed(observed)
    if not norm:
        return []

    hit = idx.entries.get(norm)
    if hit is not None:
        return [Suggestion(value=hit, score=SYNONYM_SCORE, provenance="synonym")]

    threshold = distance_threshold(norm)
    best: dict[str, float] = {}
    for entry, label in idx.entries.items():
        longest = max(len(norm), len(entry))
        d = edit_distance(norm, entry)
        # d == longest means nothing in common
        if d > threshold or d >= longest:
            continue
        score = 1 - d / longest
        if score > best.get(label, -1.0):
            best[label] = score

    found = _ranked(Suggestion(value=v, score=s, provenance="distance") for v, s in best.items())
    log_message(DEBUG, f"'{observed}' on '{f.key}': {len(found)} distance candidates within {threshold}")
    return found[:MAX_SUGGESTIONS]


# ── Literal coercion ──────────────────────────────────────────────────────────
def _coerce_number(f: Field, value: str) -> str:
    if THOUSANDS_RE.fullmatch(value):
        value = value.replace(",", "")
    elif COMMA_DECIMAL_RE.fullmatch(value):
        value = value.replace(",", ".")
    if f.datatype == "integer":
        integral = INTEGRAL_DECIMAL_RE.fullmatch(value)
        if integral:
            value = integral.group(1)
    return value


def _coerce_boolean(f: Field, value: str) -> str:
    yes, no = f.lexicon
    lowered = value.lower()
    if lowered == yes.lower():
        return yes
    if lowered == no.lower():
        return no
    if lowered in TRUE_ALIASES:
        return yes
    if lowered in FALSE_ALIASES:
        return no
    return value


def _moment(year: str, month: str, day: str = "1", rest: str = "00:00:00") -> datetime | None:
    try:
        return datetime.strptime(f"{int(year):04d}-{int(month):02d}-{int(day):02d}T{rest}", "%Y-%m-%dT%H:%M:%S")
    except ValueError:
        return None


def _temporal_alternate(f: Field, value: str) -> datetime | None:
    """Reparse the common alternate spellings of a date or timestamp"""
    # same granularity, other registered format
    for fmt, patterns in TEMPORAL_FORMATS.items():
        regex, strptime_fmt, _ = patterns[f.granularity]
        if fmt != f.temporal_format and re.fullmatch(regex, value):
            try:
                return datetime.strptime(value, strptime_fmt)
            except ValueError:
                return None

    if f.granularity == "month":
        m = re.fullmatch(r"([0-9]{4})[/.-]([0-9]{1,2})", value)
        return _moment(*m.groups()) if m else None

    if f.granularity == "day":
        m = re.fullmatch(r"([0-9]{4})[/.-]([0-9]{1,2})[/.-]([0-9]{1,2})", value)
        if m:
            return _moment(*m.groups())
        m = re.fullmatch(r"([0-9]{4})-([0-9]{2})-([0-9]{2})[T ]00:00(:00)?", value)
        if m:
            return _moment(*m.groups()[:3])
        m = re.fullmatch(r"([0-9]{1,2})/([0-9]{1,2})/([0-9]{4})", value)
        # MM/DD/YYYY only when the day cannot be a month; DD-MM-YYYY never
        if m and int(m.group(1)) <= 12 < int(m.group(2)):
            return _moment(m.group(3), m.group(1), m.group(2))
        return None

    if f.granularity in ("minute", "second"):
        m = re.fullmatch(r"([0-9]{4})-([0-9]{2})-([0-9]{2}) ([0-9]{2}:[0-9]{2}(:[0-9]{2})?)", value)
        if m:
            clock = m.group(4) if m.group(5) else m.group(4) + ":00"
            return _moment(*m.groups()[:3], rest=clock)
    return None


def _coerce_temporal(f: Field, value: str) -> str:
    if parse_temporal(value, f) is not None:
        return value
    moment = _temporal_alternate(f, value)
    return format_temporal(moment, f) if moment is not None else value


def coerce_literal(f: Field, observed: str) -> Suggestion | None:
    """Mechanical fix for a non-categorical value, offered only when it validates"""
    if f.datatype == "categorical":
        return None
    value = _strip_quotes(observed)
    if f.datatype in NUMERIC_TYPES:
        value = _coerce_number(f, value)
    elif f.datatype == "boolean":
        value = _coerce_boolean(f, value)
    elif f.datatype == "temporal":
        value = _coerce_temporal(f, value)

    if value == observed or not value:
        return None
    if validate_cell(f, Cell(column_key=f.key, raw=value, was_blank=False)):
        return None
    return Suggestion(value=value, score=COERCION_SCORE, provenance="coercion")


# ── Semantic ranking ──────────────────────────────────────────────────────────
class SemanticRanker(Protocol):
    """Orders candidate terms by how likely each is the intended value"""

    def rank(self, field: Field, observed: str, candidates: Sequence[Term]) -> list[tuple[str, float]]: ...


def _tokens(text: str) -> set[str]:
    return set(_TOKEN_RE.findall(normalize_term(text)))


class DefaultRanker:
    """
    Deterministic ranker needing no model: token-overlap (Jaccard) ratio
    against the label and its synonyms, falling back to 1 - normalized
    edit distance when no token is shared.
    """

    def rank(self, field: Field, observed: str, candidates: Sequence[Term]) -> list[tuple[str, float]]:
        observed_tokens = _tokens(observed)
        norm = normalize_observed(observed)
        ranked = []
        for term in candidates:
            names = (term.label, *term.synonyms)
            overlap = 0.0
            for name in names:
                tokens = _tokens(name)
                union = observed_tokens | tokens
                if union:
                    overlap = max(overlap, len(observed_tokens & tokens) / len(union))
            if overlap > 0:
                ranked.append((term.label, overlap))
                continue
            closeness = 0.0
            for name in names:
                entry = normalize_term(name)
                longest = max(len(norm), len(entry)) or 1
                closeness = max(closeness, 1 - edit_distance(norm, entry) / longest)
            ranked.append((term.label, closeness))
        return ranked


def rank_semantic(f: Field, observed: str, candidates: Sequence[Term | str], ranker: SemanticRanker) -> list[Suggestion]:
    """
    Scored permutation of the candidate labels. Labels the ranker invents are
    dropped, labels it omits are appended with score 0, and a failing ranker
    yields an empty list.
    """
    terms = [c if isinstance(c, Term) else Term(label=c) for c in candidates]
    if not terms:
        return []
    try:
        ranked = ranker.rank(f, observed, terms)
    except Exception as e:
        log_message(WARNING, f"Semantic ranker {type(ranker).__name__} failed on '{f.key}': {e}")
        return []

    labels = [t.label for t in terms]
    scores: dict[str, float] = {}
    for label, score in ranked:
        if label in labels and label not in scores:
            try:
                scores[label] = min(1.0, max(0.0, float(score)))
            except (TypeError, ValueError):
                scores[label] = 0.0
    for label in labels:
        scores.setdefault(label, 0.0)
    return _ranked(Suggestion(value=v, score=s, provenance="semantic") for v, s in scores.items())


# ── Dispatch ──────────────────────────────────────────────────────────────────
def _lexicon_set(f: Field) -> ValueSet:
    return ValueSet(set_id=f"{f.key}_lexicon", terms=tuple(Term(label=entry) for entry in f.lexicon))


def _is_sound(rt: ResolvedTemplate, f: Field, value: str) -> bool:
    labels = rt.labels(f.key) if f.datatype == "categorical" else None
    return not validate_cell(f, Cell(column_key=f.key, raw=value, was_blank=False), labels)


def suggest_for_issue(rt: ResolvedTemplate, issue: Issue, ranker: SemanticRanker | None = None) -> list[Suggestion]:
    """
    Ranked suggestions for one issue. Completeness and column issues get none;
    every returned value validates cleanly in the issue's column.
    """
    f = rt.field(issue.column_key)
    if f is None or issue.row_index < 1 or issue.category != "adherence":
        return []

    if f.datatype == "categorical":
        vs = rt.value_set(f.key)
        found = suggest_categorical(f, issue.observed, synonym_index(vs))
        if not found:
            found = rank_semantic(f, issue.observed, vs.terms, ranker or DefaultRanker())[:MAX_SUGGESTIONS]
    else:
        coerced = coerce_literal(f, issue.observed)
        found = [coerced] if coerced is not None else []
        if not found and f.datatype == "boolean":
            found = suggest_categorical(f, issue.observed, synonym_index(_lexicon_set(f)))

    return [s for s in found if _is_sound(rt, f, s.value)]


def accept_top_suggestions(rt: ResolvedTemplate, table: Table, report: ValidationReport,
                           ranker: SemanticRanker | None = None) -> list[Patch]:
    """One patch per suggestible cell, carrying its best suggestion"""
    patches = {}
    for issue in report.issues:
        if (issue.row_index, issue.column_key) in patches or table.record(issue.row_index) is None:
            continue
        found = suggest_for_issue(rt, issue, ranker)
        if found:
            patches[(issue.row_index, issue.column_key)] = Patch(
                row_index=issue.row_index, column_key=issue.column_key, new_value=found[0].value,
            )
    log_message(INFO, f"Accepted top suggestion for {len(patches)} of {len(report.issues)} issues")
    return list(patches.values())


# ── Patches ───────────────────────────────────────────────────────────────────
def batch_patches(column_key: str, value: str, row_indices: Iterable[int]) -> list[Patch]:
    """The same value for one column across many rows"""
    return [Patch(row_index=r, column_key=column_key, new_value=value) for r in row_indices]


def _patch_map(headers: Sequence[str], rows: set[int], patches: Sequence[Patch]) -> dict[tuple[int, str], str]:
    edits: dict[tuple[int, str], str] = {}
    for p in patches:
        if p.row_index not in rows or p.column_key not in headers:
            raise PatchError(f"no cell at row {p.row_index}, column '{p.column_key}'")
        address = (p.row_index, p.column_key)
        if address in edits:
            raise PatchError(f"more than one patch for row {p.row_index}, column '{p.column_key}'")
        edits[address] = p.new_value
    return edits


def apply_patches(t: Table, patches: Sequence[Patch]) -> Table:
    """New table with the patched values; the input table is left untouched"""
    edits = _patch_map(t.headers, {r.row_index for r in t.records}, patches)
    if not edits:
        return t

    records = []
    for record in t.records:
        cells = tuple(
            Cell(column_key=c.column_key, raw=edits[(record.row_index, c.column_key)], was_blank=False)
            if (record.row_index, c.column_key) in edits else c
            for c in record.cells
        )
        records.append(Record(row_index=record.row_index, cells=cells))
    log_message(DEBUG, f"Applied {len(edits)} patches")
    return Table(headers=t.headers, records=tuple(records), provenance=t.provenance)


def _typed_value(f: Field | None, value: str):
    """A number only when the value already validates for the field's datatype"""
    if value == "":
        return None
    if f is None or f.datatype not in NUMERIC_TYPES:
        return value
    if f.datatype == "integer":
        return int(value) if INTEGER_RE.fullmatch(value) else value
    if DECIMAL_RE.fullmatch(value):
        number = float(value)
        if math.isfinite(number):
            return number
    return value


def write_workbook_patches(data: bytes, patches: Sequence[Patch], rt: ResolvedTemplate | None = None) -> bytes:
    """
    Write patches into the original workbook so its data-entry rules, hidden
    sheets and provenance survive the repair. Numeric fields are written as
    numbers when a template is given.
    """
    wb = load_workbook(data, data_only=False)
    sheet = first_visible_sheet(wb)
    headers = [("" if c.value is None else str(c.value)) for c in next(sheet.iter_rows(max_row=1), ())]
    while headers and not headers[-1]:
        headers.pop()
    edits = _patch_map(headers, set(range(1, sheet.max_row)), patches)

    for (row_index, key), value in edits.items():
        f = rt.field(key) if rt is not None else None
        sheet.cell(row=row_index + 1, column=headers.index(key) + 1).value = _typed_value(f, value)

    out = io.BytesIO()
    wb.save(out)
    log_message(INFO, f"Wrote {len(edits)} patches into sheet '{sheet.title}'")
    return out.getvalue()
