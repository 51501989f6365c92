"""
Artifacts generated from a resolved template: a constrained XLSX workbook,
a tab-separated header skeleton and a markdown specification page.

Workbook layout:
  metadata          visible data sheet, row 1 = field keys in template order
  _vs_<key>         one hidden sheet per categorical field, labels in column A
  _template         hidden provenance sheet, A1 = template id, B1 = version
"""
import hashlib
import io
from datetime import datetime

from openpyxl import Workbook
from openpyxl.utils import get_column_letter
from openpyxl.worksheet.datavalidation import DataValidation
from pydantic import BaseModel, ConfigDict

from errors import WorkbookError
from logger import DEBUG, INFO, log_message
from table_ingest import PROVENANCE_SHEET
from template_model import Field, ResolvedTemplate, format_temporal, temporal_pattern

DATA_SHEET = "metadata"
VALUE_SHEET_PREFIX = "_vs_"
SHEET_NAME_LIMIT = 31
MAX_ROWS = 10000
FIRST_DATA_ROW = 2

WHOLE_LIMITS = (-2147483648, 2147483647)
DECIMAL_LIMITS = (-1e307, 1e307)
DATE_SERIAL_LIMITS = (1, 2958465)     # 1900-01-01 .. 9999-12-31


class GeneratedWorkbook(BaseModel):
    model_config = ConfigDict(frozen=True)

    content: bytes
    sheet_inventory: tuple[str, ...]


# ── Sheet names ───────────────────────────────────────────────────────────────
def value_sheet_names(rt: ResolvedTemplate) -> dict[str, str]:
    """Hidden sheet name per categorical field key"""
    names: dict[str, str] = {}
    taken = {DATA_SHEET, PROVENANCE_SHEET}
    for f in rt.fields:
        if f.datatype != "categorical":
            continue
        name = (VALUE_SHEET_PREFIX + f.key)[:SHEET_NAME_LIMIT]
        if name in taken:
            suffix = hashlib.sha1(f.key.encode("utf-8")).hexdigest()[:4]
            name = name[:SHEET_NAME_LIMIT - 5] + "_" + suffix
            if name in taken:
                raise WorkbookError(f"field '{f.key}' cannot be given a unique sheet name within {SHEET_NAME_LIMIT} characters")
        taken.add(name)
        names[f.key] = name
    return names


# ── Data-entry rules ──────────────────────────────────────────────────────────
def _bounded(kind: str, lo, hi, limits) -> DataValidation:
    if lo is not None and hi is not None:
        return DataValidation(type=kind, operator="between", formula1=str(lo), formula2=str(hi))
    if lo is not None:
        return DataValidation(type=kind, operator="greaterThanOrEqual", formula1=str(lo))
    if hi is not None:
        return DataValidation(type=kind, operator="lessThanOrEqual", formula1=str(hi))
    return DataValidation(type=kind, operator="between", formula1=str(limits[0]), formula2=str(limits[1]))


def _temporal_rule(f: Field) -> DataValidation:
    number_format = temporal_pattern(f)[2]
    if f.granularity == "year":
        return DataValidation(type="whole", operator="between", formula1="1", formula2="9999")
    if number_format == "@":
        width = len(format_temporal(datetime(2000, 1, 1), f))
        return DataValidation(type="textLength", operator="equal", formula1=str(width))
    return DataValidation(type="date", operator="between",
                          formula1=str(DATE_SERIAL_LIMITS[0]), formula2=str(DATE_SERIAL_LIMITS[1]))


def _field_rule(f: Field, value_sheet: str | None, n_labels: int) -> DataValidation | None:
    c = f.constraints
    if f.datatype == "integer":
        return _bounded("whole", c.min_value, c.max_value, WHOLE_LIMITS)
    if f.datatype == "decimal":
        return _bounded("decimal", c.min_value, c.max_value, DECIMAL_LIMITS)
    if f.datatype == "text":
        if c.min_length is None and c.max_length is None:
            return None
        return _bounded("textLength", c.min_length, c.max_length, None)
    if f.datatype == "temporal":
        return _temporal_rule(f)
    if f.datatype == "categorical":
        return DataValidation(type="list", formula1=f"'{value_sheet}'!$A$1:$A${n_labels}")
    if f.datatype == "boolean":
        if any("," in entry for entry in f.lexicon):
            log_message(DEBUG, f"Lexicon of '{f.key}' contains a comma; no list rule attached")
            return None
        entries = ",".join(entry.replace('"', '""') for entry in f.lexicon)
        return DataValidation(type="list", formula1=f'"{entries}"')
    # uri and email have no portable rule type
    return None


def _write_text(sheet, row: int, column: int, value: str):
    cell = sheet.cell(row=row, column=column)
    cell.value = value
    # a leading "=" must stay text, not become a formula
    cell.data_type = "s"


# ── Generators ────────────────────────────────────────────────────────────────
def _check_resolved(rt: ResolvedTemplate):
    for f in rt.fields:
        if f.datatype == "categorical" and f.key not in rt.value_sets:
            raise WorkbookError(f"value set of '{f.key}' is not resolved")


def generate_workbook(rt: ResolvedTemplate) -> GeneratedWorkbook:
    """Constrained workbook with hidden value and provenance sheets"""
    _check_resolved(rt)
    sheet_names = value_sheet_names(rt)

    wb = Workbook()
    data = wb.active
    data.title = DATA_SHEET
    inventory = [DATA_SHEET]

    for column, f in enumerate(rt.fields, start=1):
        letter = get_column_letter(column)
        _write_text(data, 1, column, f.key)

        value_sheet = sheet_names.get(f.key)
        labels = rt.labels(f.key) if value_sheet else ()
        if value_sheet:
            hidden = wb.create_sheet(value_sheet)
            for row, label in enumerate(labels, start=1):
                _write_text(hidden, row, 1, label)
            hidden.sheet_state = "hidden"
            inventory.append(value_sheet)

        rule = _field_rule(f, value_sheet, len(labels))
        if rule is None:
            continue
        rule.allow_blank = True
        rule.showErrorMessage = True
        rule.errorTitle = f.label[:32]
        rule.promptTitle = f.label[:32]
        if f.description:
            rule.prompt = f.description[:255]
            rule.showInputMessage = True
        rule.add(f"{letter}{FIRST_DATA_ROW}:{letter}{FIRST_DATA_ROW + MAX_ROWS - 1}")
        data.add_data_validation(rule)
        if f.datatype == "temporal":
            data.column_dimensions[letter].number_format = temporal_pattern(f)[2]

    provenance = wb.create_sheet(PROVENANCE_SHEET)
    _write_text(provenance, 1, 1, rt.id)
    _write_text(provenance, 1, 2, rt.version)
    provenance.sheet_state = "hidden"
    inventory.append(PROVENANCE_SHEET)

    out = io.BytesIO()
    wb.save(out)
    log_message(INFO, f"Generated workbook for {rt.id}@{rt.version}: {len(rt.fields)} columns, {len(inventory)} sheets")
    return GeneratedWorkbook(content=out.getvalue(), sheet_inventory=tuple(inventory))


def generate_delimited_skeleton(rt: ResolvedTemplate) -> str:
    return "\t".join(rt.keys) + "\n"


def _constraint_lines(f: Field) -> list[str]:
    c = f.constraints
    lines = []
    if c.min_value is not None:
        lines.append(f"minimum value: {c.min_value}")
    if c.max_value is not None:
        lines.append(f"maximum value: {c.max_value}")
    if c.min_length is not None:
        lines.append(f"minimum length: {c.min_length}")
    if c.max_length is not None:
        lines.append(f"maximum length: {c.max_length}")
    if f.datatype == "temporal":
        lines.append(f"granularity: {f.granularity} ({f.temporal_format}, e.g. {format_temporal(datetime(2023, 8, 15, 9, 30, 5), f)})")
    if f.datatype == "boolean":
        lines.append(f"values: {f.lexicon[0]} / {f.lexicon[1]}")
    return lines


def render_spec_doc(rt: ResolvedTemplate) -> str:
    """Human-readable markdown page, one section per field"""
    _check_resolved(rt)
    out = [f"# {rt.name}", "", f"Template `{rt.id}` version {rt.version}", ""]
    if rt.description:
        out += [rt.description, ""]

    for f in rt.fields:
        out += [f"## {f.key}", ""]
        out.append(f"- Label: {f.label}")
        out.append(f"- Datatype: {f.datatype}")
        out.append(f"- Required: {'yes' if f.required else 'no'}")
        constraints = _constraint_lines(f)
        if constraints:
            out.append("- Constraints:")
            out += [f"  - {line}" for line in constraints]
        out.append(f"- Description: {f.description or '(no description)'}")
        if f.datatype == "categorical":
            vs = rt.value_set(f.key)
            out += ["", f"Permissible values ({len(vs.terms)}, value set `{vs.set_id}`):", ""]
            for term in vs.terms:
                extra = f" (synonyms: {', '.join(term.synonyms)})" if term.synonyms else ""
                out.append(f"- {term.label}{extra}")
        out.append("")

    log_message(DEBUG, f"Rendered specification page for {rt.id}@{rt.version}")
    return "\n".join(out)
