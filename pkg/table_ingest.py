"""
Reads populated workbooks and delimited files into one Table model and links
each table to the template that governs it.

Cells keep their raw text exactly as entered; trimming and coercion are left
to validation and repair so that they stay visible to the user.
"""
import csv
import io
import zipfile
from datetime import date, datetime, time
from typing import Literal, Protocol

import openpyxl
from openpyxl.utils.exceptions import InvalidFileException
from pydantic import BaseModel, ConfigDict, model_validator

from errors import AmbiguousTemplate, DuplicateHeaderError, NoTemplateFound, TableParseError, UnregisteredTemplate
from logger import DEBUG, INFO, log_message
from template_model import ResolvedTemplate, Template

PROVENANCE_SHEET = "_template"
ZIP_MAGIC = b"PK\x03\x04"
SEPARATORS = {"tab": "\t", "comma": ",", "\t": "\t", ",": ","}

TableFormat = Literal["xlsx", "tsv", "csv"]


# ── Table model ───────────────────────────────────────────────────────────────
class Cell(BaseModel):
    model_config = ConfigDict(frozen=True)

    column_key: str
    raw: str = ""
    was_blank: bool = True

    @property
    def is_blank(self) -> bool:
        return not self.raw.strip()


class Record(BaseModel):
    model_config = ConfigDict(frozen=True)

    row_index: int      # record 1 is spreadsheet row 2
    cells: tuple[Cell, ...]

    def value(self, key: str) -> str | None:
        cell = next((c for c in self.cells if c.column_key == key), None)
        return None if cell is None else cell.raw


class Table(BaseModel):
    model_config = ConfigDict(frozen=True)

    headers: tuple[str, ...]
    records: tuple[Record, ...] = ()
    provenance: tuple[str, str] | None = None

    @model_validator(mode="after")
    def _shape(self):
        seen = set()
        for record in self.records:
            if record.row_index in seen:
                raise ValueError(f"duplicate record index {record.row_index}")
            seen.add(record.row_index)
            if tuple(c.column_key for c in record.cells) != self.headers:
                raise ValueError(f"record {record.row_index} does not match the header row")
        return self

    def column_index(self, key: str) -> int:
        return self.headers.index(key)

    def record(self, row_index: int) -> Record | None:
        return next((r for r in self.records if r.row_index == row_index), None)


def _record(headers: tuple[str, ...], row_index: int, values: list[tuple[str, bool]]) -> Record:
    return Record(
        row_index=row_index,
        cells=tuple(Cell(column_key=k, raw=raw, was_blank=blank) for k, (raw, blank) in zip(headers, values)),
    )


def _check_headers(headers: list[str]) -> tuple[str, ...]:
    seen = set()
    for position, key in enumerate(headers, start=1):
        if not key:
            raise TableParseError(f"header cell {position} is blank", row=1)
        if key in seen:
            raise DuplicateHeaderError(key)
        seen.add(key)
    return tuple(headers)


# ── Workbooks ─────────────────────────────────────────────────────────────────
def _render_cell(cell) -> tuple[str, bool]:
    """Render a workbook cell value to (raw text, was_blank)"""
    value = cell.value
    if value is None:
        return "", True
    if isinstance(value, bool):
        return ("TRUE" if value else "FALSE"), False
    if isinstance(value, int):
        return str(value), False
    if isinstance(value, float):
        if value.is_integer():
            return str(int(value)), False
        return repr(value), False
    if isinstance(value, datetime):
        number_format = (cell.number_format or "").lower()
        # a bare date only when the cell format shows no time of day
        if value.time() == time(0, 0) and "h" not in number_format and "s" not in number_format:
            return value.date().isoformat(), False
        if value.second == 0 and "ss" not in number_format:
            return value.strftime("%Y-%m-%dT%H:%M"), False
        return value.strftime("%Y-%m-%dT%H:%M:%S"), False
    if isinstance(value, (date, time)):
        return value.isoformat(), False
    return str(value), False


def _read_provenance(wb) -> tuple[str, str] | None:
    if PROVENANCE_SHEET not in wb.sheetnames:
        return None
    sheet = wb[PROVENANCE_SHEET]
    template_id, version = sheet["A1"].value, sheet["B1"].value
    if template_id is None or version is None:
        return None
    return str(template_id), str(version)


def load_workbook(data: bytes, data_only: bool = True):
    try:
        return openpyxl.load_workbook(io.BytesIO(data), data_only=data_only)
    except (zipfile.BadZipFile, InvalidFileException, KeyError, OSError, ValueError) as e:
        raise TableParseError(f"unreadable workbook: {e}")


def first_visible_sheet(wb):
    sheet = next((ws for ws in wb.worksheets if ws.sheet_state == "visible"), None)
    if sheet is None:
        raise TableParseError("workbook has no visible sheet")
    return sheet


def parse_workbook(data: bytes) -> Table:
    """Parse the first visible sheet of an XLSX workbook"""
    wb = load_workbook(data)
    sheet = first_visible_sheet(wb)
    rows = list(sheet.iter_rows())
    header_values = [_render_cell(c)[0] for c in rows[0]] if rows else []
    while header_values and not header_values[-1]:
        header_values.pop()
    if not header_values:
        raise TableParseError(f"sheet '{sheet.title}' is empty")
    headers = _check_headers(header_values)
    width = len(headers)

    body = []
    for row in rows[1:]:
        values = [_render_cell(c) for c in row[:width]]
        values += [("", True)] * (width - len(values))
        body.append(values)
    # trailing fully blank rows are formatting residue, interior ones are records
    while body and all(blank for _, blank in body[-1]):
        body.pop()

    records = tuple(_record(headers, i, values) for i, values in enumerate(body, start=1))
    provenance = _read_provenance(wb)
    log_message(DEBUG, f"Parsed workbook sheet '{sheet.title}': {width} columns, {len(records)} records, provenance {provenance}")
    return Table(headers=headers, records=records, provenance=provenance)


# ── Delimited text ────────────────────────────────────────────────────────────
def parse_delimited(text: str, separator: str = "tab") -> Table:
    """RFC-4180 parsing generalized to tab or comma separators"""
    sep = SEPARATORS.get(separator)
    if sep is None:
        raise TableParseError(f"unsupported separator {separator!r}")
    text = text.removeprefix("\ufeff")
    if not text.strip():
        raise TableParseError("input is empty")

    reader = csv.reader(io.StringIO(text, newline=""), delimiter=sep, quotechar='"', strict=True)
    rows = []
    try:
        for row in reader:
            rows.append(row)
    except csv.Error as e:
        message = "unclosed quote" if "unexpected end of data" in str(e) else str(e)
        raise TableParseError(message, row=len(rows) + 1)

    while rows and not rows[-1]:
        rows.pop()
    if not rows or not rows[0]:
        raise TableParseError("header row is empty", row=1)
    headers = _check_headers(rows[0])
    width = len(headers)

    records = []
    for index, row in enumerate(rows[1:], start=1):
        if not row:
            row = [""] * width
        if len(row) != width:
            raise TableParseError(f"expected {width} cells, found {len(row)}", row=index + 1)
        records.append(_record(headers, index, [(v, v == "") for v in row]))
    return Table(headers=headers, records=tuple(records), provenance=None)


def serialize_delimited(table: Table, separator: str = "tab") -> str:
    """Canonical writer; parse_delimited(serialize_delimited(t)) == t"""
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=SEPARATORS[separator], lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(table.headers)
    for record in table.records:
        writer.writerow([c.raw for c in record.cells])
    return buf.getvalue()


def sniff_table(data: bytes, filename: str | None = None, separator: str | None = None) -> tuple[Table, TableFormat]:
    """Workbook when the payload is a zip archive, delimited text otherwise"""
    if data.startswith(ZIP_MAGIC):
        return parse_workbook(data), "xlsx"
    if separator is None:
        separator = "comma" if (filename or "").lower().endswith(".csv") else "tab"
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise TableParseError(f"file is neither a workbook nor UTF-8 text: {e.reason}")
    fmt = "csv" if SEPARATORS.get(separator) == "," else "tsv"
    return parse_delimited(text, separator), fmt


# ── Linking ───────────────────────────────────────────────────────────────────
class TemplateStore(Protocol):
    def contains(self, template_id: str, version: str) -> bool: ...
    def resolved(self, template_id: str, version: str) -> ResolvedTemplate: ...
    def find_by_headers(self, headers) -> list[Template]: ...


def link_template(t: Table, registry: TemplateStore, override: tuple[str, str] | None = None) -> ResolvedTemplate:
    """Override, then embedded provenance, then an exact header-set match"""
    if override is not None:
        log_message(DEBUG, f"Linking via override {override[0]}@{override[1]}")
        return registry.resolved(*override)

    if t.provenance is not None:
        template_id, version = t.provenance
        if not registry.contains(template_id, version):
            raise UnregisteredTemplate(template_id, version)
        log_message(DEBUG, f"Linking via provenance {template_id}@{version}")
        return registry.resolved(template_id, version)

    matches = registry.find_by_headers(t.headers)
    if not matches:
        raise NoTemplateFound()
    if len(matches) > 1:
        raise AmbiguousTemplate([(m.id, m.version) for m in matches])
    log_message(INFO, f"Linked table to {matches[0].id}@{matches[0].version} by header match")
    return registry.resolved(matches[0].id, matches[0].version)
