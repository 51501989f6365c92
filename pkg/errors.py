"""
Exception hierarchy shared by the library, the CLI and the HTTP server.

Validation issues are never raised; these cover malformed inputs and
lookup/backend failures only.
"""


class SheetcheckError(Exception):
    """Base class for every error raised by this project"""


# ── Templates ─────────────────────────────────────────────────────────────────
class TemplateSyntaxError(SheetcheckError):
    """Template document is not well-formed JSON"""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class TemplateSemanticError(SheetcheckError):
    """Template document is well-formed but breaks a template rule"""

    def __init__(self, message: str, field_key: str | None = None):
        prefix = f"field '{field_key}': " if field_key else ""
        super().__init__(f"{prefix}{message}")
        self.field_key = field_key


class VersionMismatch(SheetcheckError):
    """Two templates with different ids were compared"""


# ── Terminology ───────────────────────────────────────────────────────────────
class ValueSetNotFound(SheetcheckError):
    def __init__(self, set_id: str):
        super().__init__(f"value set '{set_id}' not found")
        self.set_id = set_id


class TerminologyTransportError(SheetcheckError):
    """Backend could not be reached; callers may retry"""


class ResolutionError(SheetcheckError):
    def __init__(self, message: str, field_key: str, set_id: str):
        super().__init__(f"field '{field_key}', value set '{set_id}': {message}")
        self.field_key = field_key
        self.set_id = set_id


# ── Workbooks and tables ──────────────────────────────────────────────────────
class WorkbookError(SheetcheckError):
    pass


class TableParseError(SheetcheckError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row


class DuplicateHeaderError(TableParseError):
    def __init__(self, key: str):
        super().__init__(f"duplicate header '{key}'", row=1)
        self.key = key


# ── Registry and linking ──────────────────────────────────────────────────────
class TemplateNotFound(SheetcheckError):
    def __init__(self, template_id: str, version: str):
        super().__init__(f"template {template_id}@{version} is not registered")
        self.template_id = template_id
        self.version = version


class RegistryConflict(SheetcheckError):
    def __init__(self, template_id: str, version: str):
        super().__init__(
            f"template {template_id}@{version} is already registered with different content"
        )
        self.template_id = template_id
        self.version = version


class TemplateLinkError(SheetcheckError):
    """Base for failures to find the template governing a table"""

    candidates: list[tuple[str, str]] = []


class NoTemplateFound(TemplateLinkError):
    def __init__(self):
        super().__init__("no registered template matches the table headers")
        self.candidates = []


class AmbiguousTemplate(TemplateLinkError):
    def __init__(self, candidates: list[tuple[str, str]]):
        names = ", ".join(f"{i}@{v}" for i, v in candidates)
        super().__init__(f"table headers match several templates: {names}")
        self.candidates = candidates


class UnregisteredTemplate(TemplateLinkError):
    def __init__(self, template_id: str, version: str):
        super().__init__(
            f"workbook was generated from {template_id}@{version}, which is not registered"
        )
        self.candidates = []
        self.template_id = template_id
        self.version = version


# ── Repair ────────────────────────────────────────────────────────────────────
class PatchError(SheetcheckError):
    pass
