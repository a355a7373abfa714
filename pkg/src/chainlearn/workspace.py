"""On-disk ledger + blob store used by the ``contract`` subcommands.

Layout of a workspace directory::

    ledger.log      first line: JSON header (format, blocktime, genesis accounts)
                    then one canonical block encoding per line, height 1 onward
    blobs/          DirectoryStore holding dataset blobs
    contracts/      <address>.json, canonical state of each contract (derived)
    names.json      human labels -> addresses, for display only
    .lock           held with flock while a command runs

Loading replays the journal, so a reloaded workspace has the same state
digest as the one that was saved.
"""

from __future__ import annotations

import fcntl
import json
import os
from pathlib import Path

from .cas import DirectoryStore
from .ledger import DEFAULT_BLOCKTIME, Address, Block, Ledger, canonical_json

JOURNAL_FORMAT = "chainlearn-journal/1"


class WorkspaceError(Exception):
    @property
    def name(self) -> str:
        return type(self).__name__


class NoWorkspace(WorkspaceError):
    pass


class WorkspaceExists(WorkspaceError):
    pass


class WorkspaceLocked(WorkspaceError):
    pass


class Workspace:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.ledger: Ledger | None = None
        self.names: dict[str, str] = {}
        self._lock_fh = None
        self._saved_height = 0

    @property
    def journal(self) -> Path:
        return self.root / "ledger.log"

    def exists(self) -> bool:
        return self.journal.is_file()

    # -- locking -----------------------------------------------------------

    def lock(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        fh = open(self.root / ".lock", "a+")
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            fh.close()
            raise WorkspaceLocked(f"{self.root} is in use by another process") from None
        self._lock_fh = fh

    def unlock(self) -> None:
        if self._lock_fh is not None:
            fcntl.flock(self._lock_fh, fcntl.LOCK_UN)
            self._lock_fh.close()
            self._lock_fh = None

    def __enter__(self) -> Workspace:
        self.lock()
        return self

    def __exit__(self, *exc) -> None:
        self.unlock()

    # -- lifecycle ---------------------------------------------------------

    def create(self, accounts: dict[str, int], blocktime: int = DEFAULT_BLOCKTIME) -> Ledger:
        """Start a fresh chain funding ``accounts`` (label -> micro-coins)."""
        if self.exists():
            raise WorkspaceExists(f"{self.root} already holds a ledger")
        self.names = {label: str(resolve(label)) for label in accounts}
        genesis = [(self.names[label], amount) for label, amount in accounts.items()]
        self.ledger = Ledger.genesis(genesis, blocktime, DirectoryStore(self.root / "blobs"))
        self._saved_height = 0
        return self.ledger

    def load(self) -> Ledger:
        if not self.exists():
            raise NoWorkspace(f"{self.root} has no ledger; run 'contract deploy --init' first")
        lines = self.journal.read_bytes().splitlines()
        header = json.loads(lines[0])
        if header.get("format") != JOURNAL_FORMAT:
            raise WorkspaceError(f"unsupported journal format {header.get('format')!r}")
        blocks = [Block.decode(line) for line in lines[1:] if line.strip()]
        self.ledger = Ledger.replay(
            [(addr, bal) for addr, bal in header["genesis"]], blocks,
            header["blocktime"], DirectoryStore(self.root / "blobs"),
        )
        names_path = self.root / "names.json"
        self.names = json.loads(names_path.read_text()) if names_path.exists() else {}
        self._saved_height = self.ledger.height
        return self.ledger

    def save(self) -> None:
        """Append blocks sealed since the last save and refresh derived files."""
        ledger = self.ledger
        if not self.exists():
            header = {
                "format": JOURNAL_FORMAT,
                "blocktime": ledger.blocktime,
                "genesis": [[a, b] for a, b in ledger.genesis_accounts],
            }
            _atomic_write(self.journal, canonical_json(header) + b"\n")
        new = ledger.blocks[self._saved_height + 1:]
        if new:
            with self.journal.open("ab") as fh:
                for block in new:
                    fh.write(block.encode() + b"\n")
                fh.flush()
                os.fsync(fh.fileno())
        self._saved_height = ledger.height
        cdir = self.root / "contracts"
        cdir.mkdir(exist_ok=True)
        for addr, c in ledger.contracts.items():
            _atomic_write(cdir / f"{addr}.json", c.encode_bytes() + b"\n")
        _atomic_write(self.root / "names.json",
                      (json.dumps(self.names, indent=1, sort_keys=True) + "\n").encode())

    def remember(self, label: str) -> Address:
        addr = resolve(label)
        if not _is_address(label):
            self.names.setdefault(label, str(addr))
        return addr

    def label_of(self, addr: str) -> str:
        for label, a in self.names.items():
            if a == addr:
                return label
        return str(addr)


def _is_address(text: str) -> bool:
    try:
        Address(text)
    except ValueError:
        return False
    return True


def resolve(name: str) -> Address:
    """Accept either a 0x address or a human label."""
    return Address(name) if _is_address(name) else Address.from_label(name)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
