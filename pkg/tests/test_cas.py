from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sha256_oracle import sha256_hex

from chainlearn.cas import BlobNotFound, ContentHash, DirectoryStore, IntegrityError, MemoryStore, digest

EMPTY = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
ABC = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
TWO_BLOCK_MSG = b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"
TWO_BLOCK = "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"


@pytest.fixture(params=["memory", "directory"])
def store(request, tmp_path):
    return MemoryStore() if request.param == "memory" else DirectoryStore(tmp_path / "blobs")


def test_known_vectors_match_oracle_and_library():
    for msg, expected in [(b"", EMPTY), (b"abc", ABC), (TWO_BLOCK_MSG, TWO_BLOCK)]:
        assert sha256_hex(msg) == expected
        assert digest(msg) == expected


def test_random_payloads_agree_with_oracle():
    rng = random.Random(20240601)
    for _ in range(1000):
        payload = rng.randbytes(rng.randrange(0, 300))
        assert digest(payload) == sha256_hex(payload)


def test_content_hash_validation_and_render():
    h = digest(b"abc")
    assert ContentHash(str(h)) == h
    assert ContentHash(h.upper()) == h
    assert ContentHash.from_bytes(h.raw) == h
    for bad in ["", "xyz", "0" * 63, "g" * 64]:
        with pytest.raises(ValueError):
            ContentHash(bad)


def test_put_get_round_trip(store):
    h = store.put(b"hello")
    assert h == digest(b"hello")
    assert store.get(h) == b"hello"
    assert store.has(h)


def test_put_is_idempotent(store):
    a = store.put(b"same")
    b = store.put(b"same")
    assert a == b and len(store) == 1


def test_distinct_payloads_distinct_hashes(store):
    hashes = {store.put(bytes([i]) * i) for i in range(50)}
    assert len(hashes) == 50 == len(store)


def test_missing_blob(store):
    with pytest.raises(BlobNotFound):
        store.get(digest(b"never stored"))
    store.put(b"x")
    assert not store.has(digest(b"y"))


def test_megabyte_payload(store):
    payload = random.Random(3).randbytes(10**6)
    h = store.put(payload)
    assert store.get(h) == payload
    assert digest(store.get(h)) == h


def test_directory_layout_and_corruption(tmp_path):
    s = DirectoryStore(tmp_path)
    h = s.put(b"blob")
    path = tmp_path / h
    assert path.read_bytes() == b"blob"
    assert list(s) == [h]
    path.write_bytes(b"tampered")
    with pytest.raises(IntegrityError):
        s.get(h)


def test_directory_store_survives_reopen(tmp_path):
    h = DirectoryStore(tmp_path).put(b"persist")
    assert DirectoryStore(tmp_path).get(h) == b"persist"


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=512))
def test_round_trip_property(payload):
    s = MemoryStore()
    h = s.put(payload)
    assert s.get(h) == payload
    assert digest(s.get(h)) == h == sha256_hex(payload)
