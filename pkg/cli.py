"""
Command-line front end: template authoring checks, artifact generation,
validation and repair of filled-in sheets, and the HTTP server.

Exit status: 0 success, 1 validation found issues, 2 usage or parse error,
3 I/O or backend error. Diagnostics go to stderr; stdout carries results.
"""
import sys
from enum import IntEnum
from pathlib import Path

import click

from config import load_settings
from errors import (
    PatchError,
    RegistryConflict,
    ResolutionError,
    SheetcheckError,
    TableParseError,
    TemplateLinkError,
    TemplateNotFound,
    TemplateSemanticError,
    TemplateSyntaxError,
    TerminologyTransportError,
    ValueSetNotFound,
    VersionMismatch,
    WorkbookError,
)
from logger import DEBUG, INFO, log_message, set_level
from repair_engine import accept_top_suggestions, apply_patches, patches_from_json, write_workbook_patches
from semantic_ranker import get_ranker
from table_ingest import ZIP_MAGIC, link_template, parse_workbook, serialize_delimited, sniff_table
from template_model import compare_versions, lint_template, next_version, parse_template
from template_registry import TemplateRegistry
from term_client import TerminologySource, get_client
from validation_engine import report_to_json, validate_table
from workbook_generator import generate_delimited_skeleton, generate_workbook, render_spec_doc


class ExitStatus(IntEnum):
    OK = 0
    ISSUES = 1
    USAGE = 2
    BACKEND = 3


USAGE_ERRORS = (TemplateSyntaxError, TemplateSemanticError, TableParseError, PatchError, TemplateLinkError, VersionMismatch)
BACKEND_ERRORS = (TemplateNotFound, RegistryConflict, ValueSetNotFound, ResolutionError, TerminologyTransportError, WorkbookError)


# ── Shared options ────────────────────────────────────────────────────────────
def _template_ref(ctx, param, value):
    if value is None:
        return None
    template_id, sep, version = value.rpartition("@")
    if not sep or not template_id or not version:
        raise click.BadParameter("expected ID@VERSION")
    return template_id, version


registry_option = click.option("--registry", type=click.Path(file_okay=False), default=None,
                               help="Template registry directory (default: $SHEETCHECK_REGISTRY)")
terms_option = click.option("--terms", default=None,
                            help="Value-set fixture directory or terminology service URL (default: $SHEETCHECK_TERMS)")
template_option = click.option("--template", "template_ref", callback=_template_ref, default=None,
                               metavar="ID@VERSION", help="Template to use instead of linking automatically")


def _registry(registry: str | None, terms: str | None) -> TemplateRegistry:
    settings = load_settings(registry_root=registry, terms=terms)
    source = TerminologySource.from_spec(settings.terms, settings.cache_ttl)
    reg = TemplateRegistry(settings.registry_root, get_client(source))
    reg.load()
    return reg


def _read_input(path: str) -> tuple[bytes, str | None]:
    if path == "-":
        data = click.get_binary_stream("stdin").read()
        if data.startswith(ZIP_MAGIC):
            raise click.UsageError("standard input accepts delimited text only")
        return data, None
    with open(path, "rb") as f:
        return f.read(), path


def _write_output(path: str, content: bytes | str):
    mode = "wb" if isinstance(content, bytes) else "w"
    with open(path, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as f:
        f.write(content)


# ── Commands ──────────────────────────────────────────────────────────────────
@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", count=True, help="Log more (-v info, -vv debug)")
def cli(verbose):
    """Template-driven metadata spreadsheets: generate, validate, repair."""
    if verbose:
        set_level(DEBUG if verbose > 1 else INFO)


@cli.group()
def template():
    """Template documents."""


@template.command("lint")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
def template_lint(file):
    """Parse a template document and report quality warnings."""
    t = parse_template(Path(file).read_bytes())
    findings = lint_template(t)
    for finding in findings:
        click.echo(f"warning: {finding.message} [{finding.code}]")
    click.echo(f"{t.id}@{t.version}: {len(t.fields)} fields, {len(findings)} warnings")
    return ExitStatus.OK


@template.command("register")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@registry_option
@terms_option
def template_register(file, registry, terms):
    """Add a template document to the registry."""
    reg = _registry(registry, terms)
    t, created = reg.register(Path(file).read_bytes())
    for finding in lint_template(t):
        click.echo(f"warning: {finding.message} [{finding.code}]", err=True)
    click.echo(f"{'registered' if created else 'already registered'} {t.id}@{t.version}")
    return ExitStatus.OK


@template.command("diff")
@click.argument("old", type=click.Path(exists=True, dir_okay=False))
@click.argument("new", type=click.Path(exists=True, dir_okay=False))
def template_diff(old, new):
    """Classify the change between two versions of a template."""
    before = parse_template(Path(old).read_bytes())
    after = parse_template(Path(new).read_bytes())
    change = compare_versions(before, after)
    click.echo(f"{change.level} change from {before.version}")
    for reason in change.reasons:
        click.echo(f"  - {reason}")
    click.echo(f"next version: {next_version(before.version, change)}")
    if after.version != next_version(before.version, change):
        log_message(INFO, f"{after.id} is versioned {after.version}; the change suggests {next_version(before.version, change)}")
    return ExitStatus.OK


@cli.group()
def sheet():
    """Metadata spreadsheets."""


@sheet.command("generate")
@click.option("--template", "template_ref", callback=_template_ref, required=True, metavar="ID@VERSION")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False), help="Output file")
@click.option("--tsv", "as_tsv", is_flag=True, help="Write a tab-separated header skeleton instead of a workbook")
@click.option("--markdown", "as_markdown", is_flag=True, help="Write the human-readable specification page")
@registry_option
@terms_option
def sheet_generate(template_ref, output, as_tsv, as_markdown, registry, terms):
    """Generate a blank workbook (or skeleton) from a registered template."""
    if as_tsv and as_markdown:
        raise click.UsageError("--tsv and --markdown are mutually exclusive")
    rt = _registry(registry, terms).resolved(*template_ref)
    if as_tsv:
        _write_output(output, generate_delimited_skeleton(rt))
    elif as_markdown:
        _write_output(output, render_spec_doc(rt))
    else:
        _write_output(output, generate_workbook(rt).content)
    click.echo(f"wrote {output}")
    return ExitStatus.OK


def _summary_line(report) -> str:
    return f"{len(report.issues)} issues in {report.summary.total_records} records"


@sheet.command("validate")
@click.argument("file", type=click.Path(allow_dash=True, dir_okay=False))
@template_option
@click.option("--json", "as_json", is_flag=True, help="Print the report JSON on stdout")
@click.option("--separator", type=click.Choice(["tab", "comma"]), default=None)
@registry_option
@terms_option
def sheet_validate(file, template_ref, as_json, separator, registry, terms):
    """Validate a filled-in workbook or delimited file."""
    data, filename = _read_input(file)
    table, _ = sniff_table(data, filename, separator)
    rt = link_template(table, _registry(registry, terms), template_ref)
    report = validate_table(rt, table)

    if as_json:
        click.echo(report_to_json(report), nl=False)
    else:
        for issue in report.issues:
            where = f"row {issue.row_index}" if issue.row_index else "header"
            click.echo(f"{where:>9}  {issue.column_key:<28} {issue.kind:<17} {issue.observed!r} (expected {issue.expected})")
        click.echo(_summary_line(report))
    return ExitStatus.ISSUES if report.issues else ExitStatus.OK


@sheet.command("repair")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--patches", "patches_file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON array of {row, column, value}")
@click.option("--accept-top", is_flag=True, help="Accept the best suggestion for every suggestible issue")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@template_option
@click.option("--separator", type=click.Choice(["tab", "comma"]), default=None)
@registry_option
@terms_option
def sheet_repair(file, patches_file, accept_top, output, template_ref, separator, registry, terms):
    """Apply patches to a filled-in sheet and write the repaired copy."""
    if (patches_file is None) == (not accept_top):
        raise click.UsageError("give exactly one of --patches or --accept-top")
    data, filename = _read_input(file)
    table, fmt = sniff_table(data, filename, separator)
    settings = load_settings(registry_root=registry, terms=terms)
    rt = link_template(table, _registry(registry, terms), template_ref)

    if patches_file is not None:
        patches = patches_from_json(Path(patches_file).read_bytes())
    else:
        patches = accept_top_suggestions(rt, table, validate_table(rt, table), get_ranker(settings.ranker))

    repaired = apply_patches(table, patches)
    if fmt == "xlsx":
        content = write_workbook_patches(data, patches, rt)
        repaired = parse_workbook(content)
        _write_output(output, content)
    else:
        _write_output(output, serialize_delimited(repaired, "comma" if fmt == "csv" else "tab"))
    report = validate_table(rt, repaired)
    click.echo(f"applied {len(patches)} patches; {_summary_line(report)}")
    return ExitStatus.OK


@cli.command("serve")
@click.option("--listen", default=None, metavar="HOST:PORT", help="Listen address (default: $SHEETCHECK_LISTEN)")
@registry_option
@terms_option
def serve(listen, registry, terms):
    """Run the HTTP service."""
    import uvicorn

    from server.main import create_app

    settings = load_settings(listen=listen, registry_root=registry, terms=terms)
    uvicorn.run(create_app(settings), host=settings.host, port=settings.port)
    return ExitStatus.OK


# ── Entry point ───────────────────────────────────────────────────────────────
def run(argv: list[str] | None = None) -> int:
    """Run the CLI and map every outcome onto an ExitStatus"""
    args = sys.argv[1:] if argv is None else list(argv)
    try:
        result = cli.main(args=args, prog_name="sheetcheck", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return ExitStatus.USAGE
    except click.ClickException as e:
        e.show()
        return ExitStatus.BACKEND
    except click.Abort:
        click.echo("aborted", err=True)
        return ExitStatus.BACKEND
    except USAGE_ERRORS as e:
        click.echo(f"error: {e}", err=True)
        return ExitStatus.USAGE
    except (*BACKEND_ERRORS, OSError) as e:
        click.echo(f"error: {e}", err=True)
        return ExitStatus.BACKEND
    except SheetcheckError as e:
        click.echo(f"error: {e}", err=True)
        return ExitStatus.BACKEND
    # --help and group-only invocations return None or an exit code
    if result is None:
        return ExitStatus.OK
    return int(result)


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
