"""
Directory-backed template registry: {root}/{template_id}/{version}.json.

Entries are immutable once written. Registration is single-writer and
atomic (temp file + rename); readers always see complete documents.
"""
import os
import re
import tempfile
import threading
from collections.abc import Iterable
from pathlib import Path

from errors import RegistryConflict, SheetcheckError, TemplateNotFound, TemplateSemanticError
from logger import DEBUG, INFO, WARNING, log_message
from template_model import ResolvedTemplate, Template, ValueSetProvider, parse_template, render_template, resolve_template

TEMPLATE_ID_PATTERN = re.compile(r"[A-Za-z0-9][A-Za-z0-9_.-]*")


class TemplateRegistry:
    def __init__(self, root: Path | str, terms: ValueSetProvider | None = None):
        self.root = Path(root)
        self.terms = terms
        self._lock = threading.RLock()
        self._templates: dict[tuple[str, str], Template] = {}

    def __len__(self) -> int:
        return len(self._templates)

    def _path(self, template_id: str, version: str) -> Path:
        return self.root / template_id / f"{version}.json"

    def load(self) -> int:
        """Read every stored template; unreadable files are skipped with a warning"""
        loaded = {}
        if self.root.is_dir():
            for path in sorted(self.root.glob("*/*.json")):
                try:
                    t = parse_template(path.read_bytes())
                except (OSError, SheetcheckError) as e:
                    log_message(WARNING, f"Skipping {path}: {e}")
                    continue
                if (path.parent.name, path.stem) != (t.id, t.version):
                    log_message(WARNING, f"Skipping {path}: holds {t.id}@{t.version}")
                    continue
                loaded[(t.id, t.version)] = t
        else:
            log_message(WARNING, f"Registry directory {self.root} does not exist")
        with self._lock:
            self._templates = loaded
        log_message(INFO, f"Loaded {len(loaded)} templates from {self.root}")
        return len(loaded)

    def register(self, doc: bytes | str | Template) -> tuple[Template, bool]:
        """
        Store a template. Returns (template, created); re-registering the same
        content is a no-op, different content under a taken id@version raises
        RegistryConflict.
        """
        t = doc if isinstance(doc, Template) else parse_template(doc)
        if isinstance(t, ResolvedTemplate):
            t = t.template
        if not TEMPLATE_ID_PATTERN.fullmatch(t.id):
            raise TemplateSemanticError(f"template id '{t.id}' cannot be used as a directory name")

        with self._lock:
            existing = self._templates.get((t.id, t.version))
            if existing is not None:
                if existing == t:
                    log_message(DEBUG, f"{t.id}@{t.version} already registered with identical content")
                    return existing, False
                raise RegistryConflict(t.id, t.version)

            path = self._path(t.id, t.version)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as f:
                    f.write(render_template(t))
                os.replace(tmp, path)
            except BaseException:
                Path(tmp).unlink(missing_ok=True)
                raise
            self._templates[(t.id, t.version)] = t
        log_message(INFO, f"Registered {t.id}@{t.version}")
        return t, True

    def get(self, template_id: str, version: str) -> Template:
        t = self._templates.get((template_id, version))
        if t is None:
            raise TemplateNotFound(template_id, version)
        return t

    def contains(self, template_id: str, version: str) -> bool:
        return (template_id, version) in self._templates

    def resolved(self, template_id: str, version: str) -> ResolvedTemplate:
        return resolve_template(self.get(template_id, version), self.terms)

    def list_templates(self) -> list[Template]:
        """All templates ordered by id, then numeric version"""
        with self._lock:
            templates = list(self._templates.values())
        return sorted(templates, key=lambda t: (t.id, t.version_tuple))

    def find_by_headers(self, headers: Iterable[str]) -> list[Template]:
        """Templates whose field-key set equals the header set"""
        wanted = set(headers)
        return [t for t in self.list_templates() if set(t.keys) == wanted]
