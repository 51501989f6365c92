"""
Sheetcheck API Server
Template registry, artifact generation, validation, suggestion and repair
over HTTP. Stateless apart from the template registry: clients resend
table content with every suggest/repair request.
"""
import base64
import json
import logging
import sys
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

# allow `uvicorn main:app` from inside server/
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config import Settings, load_settings  # noqa: E402
from errors import (  # noqa: E402
    PatchError,
    RegistryConflict,
    ResolutionError,
    TableParseError,
    TemplateLinkError,
    TemplateNotFound,
    TemplateSemanticError,
    TemplateSyntaxError,
    TerminologyTransportError,
)
from repair_engine import apply_patches, patches_from_json, suggest_for_issue, write_workbook_patches  # noqa: E402
from semantic_ranker import get_ranker  # noqa: E402
from table_ingest import Cell, Record, Table, link_template, parse_workbook, serialize_delimited, sniff_table  # noqa: E402
from template_model import lint_template, render_template  # noqa: E402
from template_registry import TemplateRegistry  # noqa: E402
from term_client import TerminologySource, get_client  # noqa: E402
from validation_engine import ISSUE_KINDS, Issue, ValidationReport, report_to_json, validate_table  # noqa: E402
from workbook_generator import generate_delimited_skeleton, generate_workbook, render_spec_doc  # noqa: E402

# ── Logging ───────────────────────────────────────────────────────────────────
logging.basicConfig(level=logging.INFO)
log = logging.getLogger(__name__)

XLSX_MEDIA_TYPE = "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet"
MEDIA_TYPES = {"xlsx": XLSX_MEDIA_TYPE, "tsv": "text/tab-separated-values", "csv": "text/csv"}


# ── Request / response models ─────────────────────────────────────────────────
class TemplateKey(BaseModel):
    id: str
    version: str


class ExcerptRow(BaseModel):
    row_index: int
    values: list[str]


class TableExcerpt(BaseModel):
    headers: list[str]
    rows: list[ExcerptRow] = []


class IssueRef(BaseModel):
    row_index: int
    column_key: str
    kind: str
    observed: str | None = None


class SuggestRequest(BaseModel):
    template: TemplateKey | None = None
    table: TableExcerpt | None = None
    issues: list[IssueRef] = []


class PayloadTooLarge(Exception):
    def __init__(self, size: int, limit: int):
        super().__init__(f"payload of {size} bytes exceeds the {limit} byte limit")


# ── Helpers ───────────────────────────────────────────────────────────────────
def _override(template_id: str | None, template_version: str | None) -> tuple[str, str] | None:
    if (template_id is None) != (template_version is None):
        raise HTTPException(status_code=400, detail="template_id and template_version must be given together")
    return (template_id, template_version) if template_id is not None else None


async def _read_upload(request: Request, limit: int) -> tuple[bytes, str | None, dict]:
    """(payload, filename, other form fields) from a multipart upload or a raw body"""
    declared = request.headers.get("content-length")
    if declared is not None and declared.isdigit() and int(declared) > limit:
        raise PayloadTooLarge(int(declared), limit)

    fields = {}
    filename = None
    if request.headers.get("content-type", "").startswith("multipart/form-data"):
        form = await request.form()
        upload = form.get("file")
        if upload is None or isinstance(upload, str):
            raise HTTPException(status_code=400, detail="multipart upload needs a 'file' part")
        data = await upload.read()
        filename = upload.filename
        fields = {k: v for k, v in form.items() if k != "file" and isinstance(v, str)}
    else:
        data = await request.body()

    if len(data) > limit:
        raise PayloadTooLarge(len(data), limit)
    if not data:
        raise HTTPException(status_code=400, detail="empty payload")
    return data, filename, fields


def _excerpt_table(excerpt: TableExcerpt) -> Table:
    headers = tuple(excerpt.headers)
    records = []
    for row in excerpt.rows:
        if len(row.values) != len(headers):
            raise HTTPException(status_code=400, detail=f"row {row.row_index} has {len(row.values)} values for {len(headers)} headers")
        records.append(Record(
            row_index=row.row_index,
            cells=tuple(Cell(column_key=k, raw=v, was_blank=(v == "")) for k, v in zip(headers, row.values)),
        ))
    try:
        return Table(headers=headers, records=tuple(records))
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))


def _error(status: int, detail: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status, content={"detail": detail, **extra})


# ── App factory ───────────────────────────────────────────────────────────────
def create_app(settings: Settings | None = None) -> FastAPI:
    settings = settings or load_settings()
    source = TerminologySource.from_spec(settings.terms, settings.cache_ttl)
    registry = TemplateRegistry(settings.registry_root, get_client(source))

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        """Load the template registry once at startup."""
        log.info(f"Loading templates from {settings.registry_root}...")
        count = registry.load()
        log.info(f"Loaded {count} templates; terminology source {settings.terms}.")

        yield  # server runs here

        log.info("Shutting down.")

    app = FastAPI(title="sheetcheck", lifespan=lifespan)
    app.state.settings = settings
    app.state.registry = registry
    app.state.ranker = get_ranker(settings.ranker)

    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(settings.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    # ── Error mapping ─────────────────────────────────────────────────────────
    @app.exception_handler(TemplateSyntaxError)
    async def _syntax(request: Request, e: TemplateSyntaxError):
        log.warning(f"{request.url.path}: {e}")
        return _error(400, str(e), line=e.line, column=e.column)

    @app.exception_handler(TemplateSemanticError)
    @app.exception_handler(TableParseError)
    @app.exception_handler(PatchError)
    async def _bad_input(request: Request, e: Exception):
        log.warning(f"{request.url.path}: {e}")
        return _error(400, str(e))

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, e: RequestValidationError):
        log.warning(f"{request.url.path}: malformed request")
        return _error(400, "malformed request", errors=json.loads(json.dumps(e.errors(), default=str)))

    @app.exception_handler(TemplateNotFound)
    async def _not_found(request: Request, e: TemplateNotFound):
        log.warning(f"{request.url.path}: {e}")
        return _error(404, str(e))

    @app.exception_handler(RegistryConflict)
    async def _conflict(request: Request, e: RegistryConflict):
        log.warning(f"{request.url.path}: {e}")
        return _error(409, str(e))

    @app.exception_handler(TemplateLinkError)
    async def _unlinkable(request: Request, e: TemplateLinkError):
        log.warning(f"{request.url.path}: {e}")
        candidates = [{"id": i, "version": v} for i, v in e.candidates]
        return _error(422, str(e), candidates=candidates)

    @app.exception_handler(PayloadTooLarge)
    async def _too_large(request: Request, e: PayloadTooLarge):
        log.warning(f"{request.url.path}: {e}")
        return _error(413, str(e))

    @app.exception_handler(ResolutionError)
    @app.exception_handler(TerminologyTransportError)
    async def _backend(request: Request, e: Exception):
        log.error(f"{request.url.path}: terminology backend error: {e}")
        return _error(502, str(e))

    # ── Templates ─────────────────────────────────────────────────────────────
    @app.post("/templates")
    async def post_template(request: Request):
        t, created = registry.register(await request.body())
        warnings = [finding.model_dump() for finding in lint_template(t)]
        return JSONResponse(
            status_code=201 if created else 200,
            content={"id": t.id, "version": t.version, "warnings": warnings},
        )

    @app.get("/templates")
    def list_templates():
        return [{"id": t.id, "version": t.version, "name": t.name} for t in registry.list_templates()]

    @app.get("/templates/{template_id}/{version}")
    def get_template(template_id: str, version: str):
        return Response(content=render_template(registry.get(template_id, version)), media_type="application/json")

    @app.get("/templates/{template_id}/{version}/workbook")
    def get_workbook(template_id: str, version: str):
        generated = generate_workbook(registry.resolved(template_id, version))
        return Response(
            content=generated.content,
            media_type=XLSX_MEDIA_TYPE,
            headers={"Content-Disposition": f'attachment; filename="{template_id}-{version}.xlsx"'},
        )

    @app.get("/templates/{template_id}/{version}/skeleton.tsv")
    def get_skeleton(template_id: str, version: str):
        text = generate_delimited_skeleton(registry.resolved(template_id, version))
        return PlainTextResponse(text, media_type="text/tab-separated-values")

    @app.get("/templates/{template_id}/{version}/spec.md")
    def get_spec_doc(template_id: str, version: str):
        return PlainTextResponse(render_spec_doc(registry.resolved(template_id, version)), media_type="text/markdown")

    @app.get("/templates/{template_id}/{version}/value-sets")
    def get_value_sets(template_id: str, version: str):
        """Permissible labels per categorical field, for client-side checks of manual entries"""
        rt = registry.resolved(template_id, version)
        return {key: list(vs.labels) for key, vs in rt.value_sets.items()}

    # ── Validation and repair ─────────────────────────────────────────────────
    @app.post("/validate")
    async def validate(request: Request, template_id: str | None = None, template_version: str | None = None,
                       separator: str | None = None):
        override = _override(template_id, template_version)
        data, filename, _ = await _read_upload(request, settings.max_upload_bytes)

        def check() -> str:
            table, fmt = sniff_table(data, filename, separator)
            rt = link_template(table, registry, override)
            report = validate_table(rt, table)
            log.info(f"Validated {fmt} upload against {rt.id}@{rt.version}: {len(report.issues)} issues")
            return report_to_json(report)

        # sniffing and validation are synchronous; run them in a worker thread
        return Response(content=await run_in_threadpool(check), media_type="application/json")

    @app.post("/suggest")
    def suggest(req: SuggestRequest):
        if not req.issues:
            return {"suggestions": {}}
        table = _excerpt_table(req.table) if req.table is not None else None
        if req.template is not None:
            rt = registry.resolved(req.template.id, req.template.version)
        elif table is not None:
            rt = link_template(table, registry)
        else:
            raise HTTPException(status_code=400, detail="either a template or a table excerpt is required")

        suggestions = {}
        for ref in req.issues:
            if ref.kind not in ISSUE_KINDS:
                raise HTTPException(status_code=400, detail=f"unknown issue kind '{ref.kind}'")
            observed = ref.observed
            if observed is None:
                record = table.record(ref.row_index) if table is not None else None
                observed = record.value(ref.column_key) if record is not None else None
            if observed is None:
                raise HTTPException(status_code=400, detail=f"no value for row {ref.row_index}, column '{ref.column_key}'")
            try:
                issue = Issue(row_index=ref.row_index, column_key=ref.column_key, kind=ref.kind, observed=observed, expected="")
            except ValueError as e:
                raise HTTPException(status_code=400, detail=str(e))
            found = suggest_for_issue(rt, issue, app.state.ranker)
            suggestions[f"{ref.row_index}:{ref.column_key}"] = [s.model_dump() for s in found]
        return {"suggestions": suggestions}

    @app.post("/repair")
    async def repair(request: Request, template_id: str | None = None, template_version: str | None = None,
                     separator: str | None = None):
        override = _override(template_id, template_version)
        data, filename, fields = await _read_upload(request, settings.max_upload_bytes)
        patches = patches_from_json(fields.get("patches", "[]"))

        def patch() -> tuple[str, bytes, ValidationReport]:
            table, fmt = sniff_table(data, filename, separator)
            rt = link_template(table, registry, override)
            repaired = apply_patches(table, patches)
            if fmt == "xlsx":
                content = write_workbook_patches(data, patches, rt)
                repaired = parse_workbook(content)
            else:
                content = serialize_delimited(repaired, "comma" if fmt == "csv" else "tab").encode("utf-8")
            report = validate_table(rt, repaired)
            log.info(f"Applied {len(patches)} patches to {fmt} upload; {len(report.issues)} issues remain")
            return fmt, content, report

        fmt, content, report = await run_in_threadpool(patch)

        stem = Path(filename).stem if filename else "repaired"
        return {
            "filename": f"{stem}.{fmt}",
            "media_type": MEDIA_TYPES[fmt],
            "content_base64": base64.b64encode(content).decode("ascii"),
            "report": json.loads(report_to_json(report)),
        }

    # ── Health check ──────────────────────────────────────────────────────────
    @app.get("/health")
    def health():
        return {"status": "ok", "templates_loaded": len(registry)}

    # ── Serve dashboard static build (if present) ─────────────────────────────
    static_dir = Path(__file__).parent / "static"
    if static_dir.exists():
        app.mount("/assets", StaticFiles(directory=static_dir / "assets"), name="assets")

        @app.get("/{full_path:path}")
        def serve_spa(full_path: str):
            """Catch-all: serve index.html for any non-API route (SPA routing)."""
            return FileResponse(static_dir / "index.html")

    return app


app = create_app()
