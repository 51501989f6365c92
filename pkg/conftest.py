"""
Shared pytest fixtures: the bundled registry and value sets, the 16
RNAseq records, workbook filling and a sample-block fault injector.
"""
import csv
import io
import random
import shutil
from pathlib import Path

import openpyxl
import pytest

from table_ingest import parse_delimited
from template_registry import TemplateRegistry
from term_client import TerminologySource, TermServiceClient
from workbook_generator import DATA_SHEET, generate_workbook

FIXTURES = Path(__file__).parent / "fixtures"
VALUE_SETS = FIXTURES / "value_sets"
RNASEQ_TSV = FIXTURES / "rnaseq_records.tsv"
DOI = "https://dx.doi.org/10.17504/protocols.io.4r3l224p3l1y/v1"

SAMPLE_BLOCK_HEADERS = (
    "parent_sample_id", "lab_id", "preparation_date", "storage_duration_value", "storage_duration_unit",
    "thickness_value", "volume_value", "was_frozen", "contact_email", "preparation_protocol_doi",
)
UNITS = ("Year", "Month", "Day", "Hour", "Minute")


def fill_workbook(content: bytes, rows: list[list[str]]) -> bytes:
    """Type rows into the data sheet of a generated workbook, as a user would"""
    wb = openpyxl.load_workbook(io.BytesIO(content))
    sheet = wb[DATA_SHEET]
    for r, row in enumerate(rows, start=2):
        for c, value in enumerate(row, start=1):
            sheet.cell(row=r, column=c).value = value if value != "" else None
    out = io.BytesIO()
    wb.save(out)
    return out.getvalue()


def sample_block_rows(n: int, rng: random.Random) -> list[list[str]]:
    """n valid sample-block records"""
    rows = []
    for i in range(1, n + 1):
        rows.append([
            f"HBM{100 + i}.BLCK.{rng.randrange(100, 1000)}",
            f"block_{i}",
            f"2023-{rng.randrange(1, 13):02d}-{rng.randrange(1, 29):02d}",
            str(rng.randrange(0, 10001)),
            rng.choice(UNITS),
            f"{rng.uniform(0, 100):.2f}",
            f"{rng.uniform(0, 500):.1f}",
            rng.choice(("Yes", "No")),
            f"lab{i}@example.org",
            DOI,
        ])
    return rows


def _typo(value: str, rng: random.Random) -> str:
    return value[:-1] + ("q" if value[-1] != "q" else "z")


# fault class -> (columns it can hit, issue kind it must produce, mutation)
CELL_FAULTS = {
    "blank_required": (
        ("parent_sample_id", "preparation_date", "storage_duration_value", "storage_duration_unit", "was_frozen"),
        "missing_required",
        lambda value, rng: "",
    ),
    "wrong_case_set_value": (("storage_duration_unit",), "not_in_value_set", lambda value, rng: value.lower()),
    "typo_set_value": (("storage_duration_unit",), "not_in_value_set", _typo),
    "quoted_integer": (("storage_duration_value",), "type_mismatch", lambda value, rng: f'"{value}"'),
    "out_of_range_decimal": (("thickness_value",), "out_of_range", lambda value, rng: f"{rng.uniform(100.5, 1000):.2f}"),
    "bad_date_separator": (("preparation_date",), "bad_temporal", lambda value, rng: value.replace("-", "/")),
    "bad_boolean": (("was_frozen",), "bad_boolean", lambda value, rng: "maybe"),
}
UNKNOWN_COLUMN = "extra_notes"


def inject_faults(rows: list[list[str]], n_faults: int, rng: random.Random):
    """
    Apply n_faults - 1 cell faults round-robin over the cell fault classes to
    distinct cells, plus one unknown column. Returns (headers, rows, expected)
    with expected a set of (row_index, column_key, kind).
    """
    rows = [list(row) for row in rows]
    used = set()
    expected = set()
    names = list(CELL_FAULTS)
    for k in range(n_faults - 1):
        columns, kind, mutate = CELL_FAULTS[names[k % len(names)]]
        while True:
            r = rng.randrange(len(rows))
            column = rng.choice(columns)
            if (r, column) not in used:
                break
        used.add((r, column))
        position = SAMPLE_BLOCK_HEADERS.index(column)
        rows[r][position] = mutate(rows[r][position], rng)
        expected.add((r + 1, column, kind))

    headers = SAMPLE_BLOCK_HEADERS + (UNKNOWN_COLUMN,)
    rows = [row + [f"note {i}"] for i, row in enumerate(rows, start=1)]
    expected.add((0, UNKNOWN_COLUMN, "unknown_column"))
    return headers, rows, expected


def to_tsv(headers, rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, delimiter="\t", lineterminator="\n").writerows([list(headers), *rows])
    return buf.getvalue()


@pytest.fixture
def terms_client():
    """Fixture-backed terminology client with a private cache"""
    return TermServiceClient(TerminologySource(kind="fixture", fixture_dir=VALUE_SETS))


@pytest.fixture
def registry_dir(tmp_path):
    """Writable copy of the bundled registry"""
    root = tmp_path / "registry"
    shutil.copytree(FIXTURES / "registry", root)
    return root


@pytest.fixture
def registry(registry_dir, terms_client):
    reg = TemplateRegistry(registry_dir, terms_client)
    reg.load()
    return reg


@pytest.fixture
def rnaseq(registry):
    return registry.resolved("rnaseq", "5.0.0")


@pytest.fixture
def sample_block(registry):
    return registry.resolved("sample-block", "2.1.0")


@pytest.fixture
def rnaseq_text():
    return RNASEQ_TSV.read_text(encoding="utf-8")


@pytest.fixture
def rnaseq_rows(rnaseq_text):
    return [line.split("\t") for line in rnaseq_text.splitlines()[1:]]


@pytest.fixture
def rnaseq_table(rnaseq_text):
    return parse_delimited(rnaseq_text)


@pytest.fixture
def rnaseq_workbook(rnaseq, rnaseq_rows):
    """Generated RNAseq workbook populated with the 16 bundled RNAseq records"""
    return fill_workbook(generate_workbook(rnaseq).content, rnaseq_rows)


@pytest.fixture
def faulty_rnaseq_rows(rnaseq_rows):
    """The bundled RNAseq records with record 3 analyte_class blanked and record 5 is_target set to 'maybe'"""
    rows = [list(row) for row in rnaseq_rows]
    rows[2][4] = ""
    rows[4][5] = "maybe"
    return rows


@pytest.fixture
def faulty_sample_block():
    """40 sample-block records with 100 injected faults: (table, expected)"""
    rng = random.Random(20230815)
    headers, rows, expected = inject_faults(sample_block_rows(40, rng), 100, rng)
    return parse_delimited(to_tsv(headers, rows)), expected
