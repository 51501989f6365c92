"""
Tests for the terminology client: fixture and remote backends, caching,
request coalescing and synonym indexing.
"""
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from conftest import VALUE_SETS
from errors import TerminologyTransportError, ValueSetNotFound
from template_model import Term, ValueSet
from term_client import (
    TermServiceClient,
    TerminologySource,
    build_synonym_index,
    fetch_value_set,
    get_client,
    normalize_term,
    set_client,
)

BASE_URL = "http://terms.test"


def stub_transport(delay: float = 0.0, fail: bool = False) -> httpx.MockTransport:
    """Serve the fixture value sets over the remote protocol"""

    def handler(request: httpx.Request) -> httpx.Response:
        if fail:
            raise httpx.ConnectError("connection refused", request=request)
        if delay:
            time.sleep(delay)
        prefix = "/value-sets/"
        if not request.url.path.startswith(prefix):
            return httpx.Response(404)
        path = VALUE_SETS / f"{request.url.path[len(prefix):]}.json"
        if not path.exists():
            return httpx.Response(404, json={"detail": "not found"})
        return httpx.Response(200, json=json.loads(path.read_text(encoding="utf-8")))

    return httpx.MockTransport(handler)


@pytest.fixture(params=["fixture", "remote"])
def client(request):
    """The same tests run against both backends"""
    if request.param == "fixture":
        return TermServiceClient(TerminologySource(kind="fixture", fixture_dir=VALUE_SETS))
    return TermServiceClient(TerminologySource(kind="remote", base_url=BASE_URL), transport=stub_transport())


def test_fetch_analyte_class(client):
    vs = client.fetch_value_set("analyte_class")
    assert len(vs.terms) == 10
    assert "RNA" in vs.labels and "DNA + RNA" in vs.labels


def test_unknown_set_is_not_found(client):
    with pytest.raises(ValueSetNotFound):
        client.fetch_value_set("no_such_set")


def test_cache_hit_reads_backend_once(client):
    first = client.fetch_value_set("fixative")
    second = client.fetch_value_set("fixative")
    assert first == second
    assert client.backend_reads == 1


def test_cache_expires_after_ttl():
    now = [0.0]
    src = TerminologySource(kind="fixture", fixture_dir=VALUE_SETS, cache_ttl=60)
    client = TermServiceClient(src, clock=lambda: now[0])
    client.fetch_value_set("fixative")
    now[0] = 59.0
    client.fetch_value_set("fixative")
    assert client.backend_reads == 1
    now[0] = 61.0
    client.fetch_value_set("fixative")
    assert client.backend_reads == 2


def test_clear_cache():
    client = TermServiceClient(TerminologySource(kind="fixture", fixture_dir=VALUE_SETS))
    client.fetch_value_set("fixative")
    client.clear_cache()
    client.fetch_value_set("fixative")
    assert client.backend_reads == 2


def test_concurrent_fetches_coalesce():
    """At most one backend request per set while it is in flight"""
    client = TermServiceClient(TerminologySource(kind="remote", base_url=BASE_URL), transport=stub_transport(delay=0.2))
    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(lambda _: client.fetch_value_set("analyte_class"), range(8)))
    assert all(r == results[0] for r in results)
    assert client.backend_reads == 1


def test_unreachable_remote_is_transport_error():
    client = TermServiceClient(TerminologySource(kind="remote", base_url=BASE_URL), transport=stub_transport(fail=True))
    with pytest.raises(TerminologyTransportError):
        client.fetch_value_set("analyte_class")


def test_missing_fixture_dir_is_transport_error(tmp_path):
    client = TermServiceClient(TerminologySource(kind="fixture", fixture_dir=tmp_path / "nowhere"))
    with pytest.raises(TerminologyTransportError):
        client.fetch_value_set("analyte_class")


def test_remote_server_error_is_transport_error():
    transport = httpx.MockTransport(lambda request: httpx.Response(503))
    client = TermServiceClient(TerminologySource(kind="remote", base_url=BASE_URL), transport=transport)
    with pytest.raises(TerminologyTransportError, match="503"):
        client.fetch_value_set("analyte_class")


def test_source_requires_matching_location():
    with pytest.raises(ValueError):
        TerminologySource(kind="fixture", base_url=BASE_URL)
    with pytest.raises(ValueError):
        TerminologySource(kind="remote", fixture_dir=VALUE_SETS)
    assert TerminologySource.from_spec("https://terms.example.org/").base_url == "https://terms.example.org"
    assert TerminologySource.from_spec(str(VALUE_SETS)).kind == "fixture"


def test_shared_client_per_source():
    src = TerminologySource(kind="fixture", fixture_dir=VALUE_SETS, cache_ttl=5)
    custom = TermServiceClient(src)
    set_client(src, custom)
    assert get_client(src) is custom
    fetch_value_set(src, "fixative")
    assert custom.backend_reads == 1


def test_synonym_index_maps_labels_and_synonyms():
    vs = ValueSet(set_id="unit", terms=(Term(label="Day", synonyms=("days", "d")),))
    idx = build_synonym_index(vs)
    assert idx.entries == {"day": "Day", "days": "Day", "d": "Day"}


def test_synonym_index_without_synonyms():
    vs = ValueSet(set_id="unit", terms=(Term(label="Year"), Term(label="Month"), Term(label="Day")))
    assert len(build_synonym_index(vs).entries) == 3


def test_synonym_collision_first_term_wins():
    vs = ValueSet(set_id="s", terms=(Term(label="Alpha", synonyms=("x",)), Term(label="Beta", synonyms=("x",))))
    assert build_synonym_index(vs).lookup("x") == "Alpha"


def test_labels_map_to_themselves(client):
    """Self-map property holds for every fixture set"""
    for set_id in ("analyte_class", "dataset_type", "fixative", "stain_name"):
        vs = client.fetch_value_set(set_id)
        idx = build_synonym_index(vs)
        for label in vs.labels:
            assert idx.lookup(label) == label


def test_normalize_term():
    assert normalize_term("  DNA   +\tRNA ") == "dna + rna"
    # non-ASCII letters are left alone
    assert normalize_term("Ä") == "Ä"


def test_concurrent_mixed_sets_are_thread_safe():
    client = TermServiceClient(TerminologySource(kind="fixture", fixture_dir=VALUE_SETS))
    ids = ["analyte_class", "dataset_type", "fixative", "stain_name"] * 10
    errors = []

    def fetch(set_id):
        try:
            assert client.fetch_value_set(set_id).set_id == set_id
        except Exception as e:
            errors.append(e)

    threads = [threading.Thread(target=fetch, args=(i,)) for i in ids]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
    assert client.backend_reads == 4
