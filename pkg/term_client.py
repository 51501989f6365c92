"""
Terminology client: fetches value sets (terms plus synonyms) from a bundled
fixture directory or a remote terminology service, with an in-memory TTL
cache and per-set request coalescing.

Remote protocol: GET {base_url}/value-sets/{set_id} returns the same JSON
document a fixture file holds: {"set_id": ..., "terms": [...]}.
"""
import json
import re
import threading
import time
from concurrent.futures import Future
from pathlib import Path
from typing import Literal

import httpx
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from config import DEFAULT_CACHE_TTL
from errors import TerminologyTransportError, ValueSetNotFound
from logger import DEBUG, INFO, WARNING, log_message
from template_model import ValueSet

SET_ID_PATTERN = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_.-]*")
REMOTE_TIMEOUT = 10.0
_ASCII_LOWER = str.maketrans("ABCDEFGHIJKLMNOPQRSTUVWXYZ", "abcdefghijklmnopqrstuvwxyz")


class TerminologySource(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["fixture", "remote"]
    base_url: str | None = None
    fixture_dir: Path | None = None
    cache_ttl: int = DEFAULT_CACHE_TTL

    @model_validator(mode="after")
    def _one_location(self):
        if self.kind == "fixture" and (self.fixture_dir is None or self.base_url is not None):
            raise ValueError("fixture sources need fixture_dir and no base_url")
        if self.kind == "remote" and (self.base_url is None or self.fixture_dir is not None):
            raise ValueError("remote sources need base_url and no fixture_dir")
        return self

    @classmethod
    def from_spec(cls, spec: str, cache_ttl: int = DEFAULT_CACHE_TTL) -> "TerminologySource":
        """'http(s)://...' means a remote service, anything else a fixture directory"""
        if spec.startswith(("http://", "https://")):
            return cls(kind="remote", base_url=spec.rstrip("/"), cache_ttl=cache_ttl)
        return cls(kind="fixture", fixture_dir=Path(spec), cache_ttl=cache_ttl)


class SynonymIndex(BaseModel):
    model_config = ConfigDict(frozen=True)

    entries: dict[str, str]
    labels: frozenset[str]

    def lookup(self, value: str) -> str | None:
        """Canonical label for a label or synonym, or None"""
        if value in self.labels:
            return value
        return self.entries.get(normalize_term(value))


def normalize_term(value: str) -> str:
    """ASCII lowercasing plus whitespace collapse"""
    return " ".join(value.translate(_ASCII_LOWER).split())


def build_synonym_index(vs: ValueSet) -> SynonymIndex:
    """
    Map normalized labels and synonyms to canonical labels.

    Labels are entered before synonyms so a label always maps to itself;
    within each pass the first term in the set wins a collision.
    """
    entries: dict[str, str] = {}
    for term in vs.terms:
        entries.setdefault(normalize_term(term.label), term.label)
    for term in vs.terms:
        for synonym in term.synonyms:
            entries.setdefault(normalize_term(synonym), term.label)
    return SynonymIndex(entries=entries, labels=frozenset(vs.labels))


class TermServiceClient:
    """Cached, thread-safe access to one terminology source"""

    def __init__(self, src: TerminologySource, transport: httpx.BaseTransport | None = None, clock=time.monotonic):
        self.src = src
        self.backend_reads = 0
        self._transport = transport
        self._clock = clock
        self._lock = threading.Lock()
        self._cache: dict[str, tuple[float, ValueSet]] = {}
        self._inflight: dict[str, Future] = {}

    def fetch_value_set(self, set_id: str) -> ValueSet:
        with self._lock:
            hit = self._cache.get(set_id)
            if hit is not None and hit[0] > self._clock():
                return hit[1]
            pending = self._inflight.get(set_id)
            owner = pending is None
            if owner:
                pending = Future()
                self._inflight[set_id] = pending

        if not owner:
            log_message(DEBUG, f"Waiting on in-flight fetch of '{set_id}'")
            return pending.result()

        try:
            vs = self._read_backend(set_id)
        except Exception as e:
            with self._lock:
                self._inflight.pop(set_id, None)
            pending.set_exception(e)
            raise

        # cache before releasing the in-flight slot so no second read can start
        with self._lock:
            self._cache[set_id] = (self._clock() + self.src.cache_ttl, vs)
            self._inflight.pop(set_id, None)
        pending.set_result(vs)
        return vs

    def clear_cache(self):
        with self._lock:
            self._cache.clear()

    def _read_backend(self, set_id: str) -> ValueSet:
        if not SET_ID_PATTERN.fullmatch(set_id):
            raise ValueSetNotFound(set_id)
        with self._lock:
            self.backend_reads += 1
        if self.src.kind == "fixture":
            payload = self._read_fixture(set_id)
        else:
            payload = self._read_remote(set_id)
        try:
            vs = ValueSet.model_validate(payload)
        except ValidationError as e:
            raise TerminologyTransportError(f"malformed value set '{set_id}': {e.errors()[0]['msg']}")
        log_message(INFO, f"Fetched value set '{set_id}' ({len(vs.terms)} terms) from {self.src.kind} backend")
        return vs

    def _read_fixture(self, set_id: str) -> dict:
        root = self.src.fixture_dir
        if not root.is_dir():
            raise TerminologyTransportError(f"fixture directory {root} does not exist")
        path = root / f"{set_id}.json"
        if not path.exists():
            raise ValueSetNotFound(set_id)
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise TerminologyTransportError(f"cannot read {path}: {e}")

    def _read_remote(self, set_id: str) -> dict:
        try:
            with httpx.Client(base_url=self.src.base_url, transport=self._transport, timeout=REMOTE_TIMEOUT) as client:
                resp = client.get(f"/value-sets/{set_id}")
        except httpx.HTTPError as e:
            log_message(WARNING, f"Terminology service unreachable: {e}")
            raise TerminologyTransportError(f"terminology service unreachable: {e}")
        if resp.status_code == 404:
            raise ValueSetNotFound(set_id)
        if resp.status_code != 200:
            raise TerminologyTransportError(f"terminology service answered {resp.status_code} for '{set_id}'")
        try:
            return resp.json()
        except ValueError as e:
            raise TerminologyTransportError(f"terminology service sent invalid JSON: {e}")


# One shared client per source (can be replaced for testing)
_clients: dict[TerminologySource, TermServiceClient] = {}
_clients_lock = threading.Lock()


def get_client(src: TerminologySource) -> TermServiceClient:
    """Get or create the shared client for a source"""
    with _clients_lock:
        client = _clients.get(src)
        if client is None:
            client = _clients[src] = TermServiceClient(src)
        return client


def set_client(src: TerminologySource, client: TermServiceClient):
    """Set custom client (for testing)"""
    with _clients_lock:
        _clients[src] = client


def fetch_value_set(src: TerminologySource, set_id: str) -> ValueSet:
    return get_client(src).fetch_value_set(set_id)
