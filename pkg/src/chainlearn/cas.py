"""Local content-addressed blob store.

Blobs are addressed by the SHA-256 digest of their bytes. Two backends share
one interface: ``MemoryStore`` for tests and simulations, ``DirectoryStore``
which keeps one file per blob named by its hex digest.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import threading
from pathlib import Path


class ContentHash(str):
    """Lowercase 64-char hex rendering of a SHA-256 digest.

    Being a ``str`` it travels through JSON, CSV and filenames unchanged.
    """

    __slots__ = ()

    def __new__(cls, value: str) -> ContentHash:
        text = str(value).strip().lower()
        if len(text) != 64:
            raise ValueError(f"content hash must be 64 hex chars, got {len(text)}")
        try:
            bytes.fromhex(text)
        except ValueError:
            raise ValueError(f"content hash is not hex: {value!r}") from None
        return super().__new__(cls, text)

    @classmethod
    def from_bytes(cls, raw: bytes) -> ContentHash:
        if len(raw) != 32:
            raise ValueError("raw digest must be 32 bytes")
        return cls(raw.hex())

    @property
    def raw(self) -> bytes:
        return bytes.fromhex(self)

    def __repr__(self) -> str:
        return f"ContentHash({str(self)[:12]}...)"


def digest(payload: bytes) -> ContentHash:
    return ContentHash(hashlib.sha256(payload).hexdigest())


class StoreError(OSError):
    """The backing storage failed to persist or read a blob."""


class BlobNotFound(KeyError):
    pass


class IntegrityError(StoreError):
    """Stored bytes do not match the digest they are filed under."""


class MemoryStore:
    def __init__(self) -> None:
        self._blobs: dict[ContentHash, bytes] = {}
        self._lock = threading.Lock()

    def put(self, payload: bytes) -> ContentHash:
        payload = bytes(payload)
        h = digest(payload)
        with self._lock:
            existing = self._blobs.get(h)
            if existing is None:
                self._blobs[h] = payload
            elif existing != payload:
                raise IntegrityError(f"digest collision on {h}")
        return h

    def get(self, h: str) -> bytes:
        h = ContentHash(h)
        with self._lock:
            try:
                return self._blobs[h]
            except KeyError:
                raise BlobNotFound(h) from None

    def has(self, h: str) -> bool:
        with self._lock:
            return ContentHash(h) in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)

    def __iter__(self):
        return iter(sorted(self._blobs))


class DirectoryStore:
    """One file per blob under ``root``; the filename is the hex digest.

    Writes go through a temporary file and an atomic rename, so concurrent
    puts of the same content are harmless.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreError(f"cannot create store at {self.root}: {exc}") from exc

    def _path(self, h: str) -> Path:
        return self.root / ContentHash(h)

    def put(self, payload: bytes) -> ContentHash:
        payload = bytes(payload)
        h = digest(payload)
        path = self._path(h)
        if path.is_file():
            if path.read_bytes() != payload:
                raise IntegrityError(f"digest collision on {h}")
            return h
        try:
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except OSError as exc:
            raise StoreError(f"cannot write blob {h}: {exc}") from exc
        return h

    def get(self, h: str) -> bytes:
        path = self._path(h)
        try:
            payload = path.read_bytes()
        except FileNotFoundError:
            raise BlobNotFound(ContentHash(h)) from None
        except OSError as exc:
            raise StoreError(f"cannot read blob {h}: {exc}") from exc
        if digest(payload) != path.name:
            raise IntegrityError(f"blob {h} is corrupted on disk")
        return payload

    def has(self, h: str) -> bool:
        return self._path(h).is_file()

    def __len__(self) -> int:
        return sum(1 for _ in self)

    def __iter__(self):
        for p in sorted(self.root.iterdir()):
            if p.is_file() and not p.name.startswith("."):
                yield ContentHash(p.name)
