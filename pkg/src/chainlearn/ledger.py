"""Deterministic single-writer ledger.

Accounts hold integer micro-coin balances. Transactions are queued with
``submit`` and executed in submission order by ``seal_block``. Each block
records the digest of its parent's encoding and of the post-state encoding,
so a journal of blocks can be replayed and checked bit for bit.

There are no fees: every unit of currency is always in an account balance,
a contract escrow or a contract reward pool.
"""

from __future__ import annotations

import csv
import json
import logging
import threading
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Any, Callable, Iterable

from .cas import ContentHash, digest

logger = logging.getLogger(__name__)

COIN = 1_000_000
DEFAULT_BLOCKTIME = 15
STATE_FORMAT = "chainlearn-state/1"
BLOCK_FORMAT = "chainlearn-block/1"
ZERO_HASH = ContentHash("0" * 64)

TX_KINDS = (
    "Transfer",
    "DeployContract",
    "AddData",
    "AddDatasetHash",
    "Verify",
    "Adjudicate",
    "ClaimRefund",
    "UpdateModel",
)


def coins(amount) -> int:
    """Convert a coin amount (int, str or Decimal) to micro-units exactly."""
    try:
        micro = Decimal(str(amount)) * COIN
    except InvalidOperation:
        raise ValueError(f"not a coin amount: {amount!r}") from None
    if micro != micro.to_integral_value():
        raise ValueError(f"{amount} has more precision than one micro-coin")
    return int(micro)


def format_coins(micro: int) -> str:
    value = Decimal(micro) / COIN
    text = format(value.normalize(), "f")
    return text


def canonical_json(obj: Any) -> bytes:
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), allow_nan=False, ensure_ascii=True
    ).encode("ascii")


class Address(str):
    """``0x`` followed by 40 lowercase hex chars (20 bytes)."""

    __slots__ = ()

    def __new__(cls, value: str) -> Address:
        text = str(value).strip().lower()
        if text.startswith("0x"):
            text = text[2:]
        if len(text) != 40:
            raise ValueError(f"address must be 20 bytes of hex: {value!r}")
        bytes.fromhex(text)
        return super().__new__(cls, "0x" + text)

    @classmethod
    def from_label(cls, label: str) -> Address:
        return cls(digest(f"account:{label}".encode()).raw[:20].hex())


def contract_address(creator: str, nonce: int) -> Address:
    return Address(digest(f"contract:{creator}:{nonce}".encode()).raw[:20].hex())


class LedgerError(Exception):
    """Base for protocol errors; the class name is the wire-level reason."""

    @property
    def name(self) -> str:
        return type(self).__name__


class UnknownAccount(LedgerError):
    pass


class DuplicateAddress(LedgerError):
    pass


class BadNonce(LedgerError):
    pass


class InsufficientFunds(LedgerError):
    pass


class UnsupportedKind(LedgerError):
    pass


class MalformedTransaction(LedgerError):
    pass


class ChainCorruption(LedgerError):
    pass


@dataclass
class Account:
    address: Address
    balance: int
    nonce: int = 0


@dataclass(frozen=True)
class Transaction:
    sender: Address
    nonce: int
    kind: str
    payload: dict = field(default_factory=dict)
    value: int = 0

    def encode(self) -> dict:
        return {
            "sender": self.sender,
            "nonce": self.nonce,
            "kind": self.kind,
            "payload": self.payload,
            "value": self.value,
        }

    @classmethod
    def decode(cls, obj: dict) -> Transaction:
        return cls(Address(obj["sender"]), int(obj["nonce"]), obj["kind"],
                   obj.get("payload", {}), int(obj.get("value", 0)))


@dataclass
class TxReceipt:
    tx: Transaction
    status: str = "Queued"  # Queued | Applied | Rejected
    error: LedgerError | None = None
    result: Any = None
    height: int | None = None
    index: int | None = None

    @property
    def ok(self) -> bool:
        return self.status == "Applied"

    @property
    def reason(self) -> str | None:
        return self.error.name if self.error is not None else None


@dataclass(frozen=True)
class Block:
    height: int
    timestamp: int
    transactions: tuple[Transaction, ...]
    parent_digest: ContentHash
    state_digest: ContentHash

    def encode(self) -> bytes:
        return canonical_json({
            "format": BLOCK_FORMAT,
            "height": self.height,
            "timestamp": self.timestamp,
            "parent": self.parent_digest,
            "state": self.state_digest,
            "txs": [tx.encode() for tx in self.transactions],
        })

    @property
    def digest(self) -> ContentHash:
        return digest(self.encode())

    @classmethod
    def decode(cls, data: bytes | str) -> Block:
        obj = json.loads(data)
        if obj.get("format") != BLOCK_FORMAT:
            raise ChainCorruption(f"unknown block format {obj.get('format')!r}")
        return cls(
            int(obj["height"]),
            int(obj["timestamp"]),
            tuple(Transaction.decode(t) for t in obj["txs"]),
            ContentHash(obj["parent"]),
            ContentHash(obj["state"]),
        )


@dataclass(frozen=True)
class TxLogRow:
    height: int
    tx_index: int
    kind: str
    sender: str
    value: int
    status: str


@dataclass(frozen=True)
class ContractEvent:
    height: int
    contract: str
    event: str
    contribution_id: int | None
    amount: int


Handler = Callable[["Execution", Transaction], Any]
_HANDLERS: dict[str, Handler] = {}


def handles(kind: str):
    """Register the executor for a transaction kind."""
    if kind not in TX_KINDS:
        raise ValueError(f"unknown transaction kind {kind}")

    def register(fn: Handler) -> Handler:
        _HANDLERS[kind] = fn
        return fn

    return register


class Execution:
    """View of the ledger handed to a transaction executor.

    Executors validate everything first and mutate afterwards; events are
    buffered and only published when the executor returns normally.
    """

    def __init__(self, ledger: Ledger, tx: Transaction, height: int):
        self.ledger = ledger
        self.tx = tx
        self.height = height
        self.events: list[ContractEvent] = []

    @property
    def store(self):
        return self.ledger.store

    @property
    def contracts(self) -> dict:
        return self.ledger.contracts

    def account(self, addr: str) -> Account:
        try:
            return self.ledger.accounts[addr]
        except KeyError:
            raise UnknownAccount(addr) from None

    def require_funds(self, addr: str, amount: int) -> None:
        if self.account(addr).balance < amount:
            raise InsufficientFunds(f"{addr} holds less than {format_coins(amount)}")

    def debit(self, addr: str, amount: int) -> None:
        acct = self.account(addr)
        assert 0 <= amount <= acct.balance, "debit must be validated first"
        acct.balance -= amount

    def credit(self, addr: str, amount: int) -> None:
        assert amount >= 0
        self.account(addr).balance += amount

    def emit(self, contract: str, event: str, contribution_id: int | None, amount: int):
        self.events.append(ContractEvent(self.height, contract, event, contribution_id, amount))


@handles("Transfer")
def _transfer(ex: Execution, tx: Transaction):
    to = Address(tx.payload["to"])
    if to in ex.contracts:
        raise UnknownAccount(f"{to} is a contract, not an account")
    ex.require_funds(tx.sender, tx.value)
    if to not in ex.ledger.accounts:
        ex.ledger.accounts[to] = Account(to, 0)
    ex.debit(tx.sender, tx.value)
    ex.credit(to, tx.value)
    return None


class Ledger:
    def __init__(self, blocktime: int = DEFAULT_BLOCKTIME, store=None):
        if blocktime <= 0:
            raise ValueError("blocktime must be positive")
        self.blocktime = blocktime
        self.store = store
        self.accounts: dict[Address, Account] = {}
        self.contracts: dict[Address, Any] = {}
        self.blocks: list[Block] = []
        self.genesis_accounts: tuple[tuple[Address, int], ...] = ()
        self.total_supply = 0
        self.tx_log: list[TxLogRow] = []
        self.events: list[ContractEvent] = []
        self._queue: list[TxReceipt] = []
        self._lock = threading.RLock()

    @classmethod
    def genesis(cls, accounts: Iterable[tuple[str, int]] = (), blocktime: int = DEFAULT_BLOCKTIME,
                store=None) -> Ledger:
        ledger = cls(blocktime, store)
        entries = []
        for addr, balance in accounts:
            addr = Address(addr)
            if addr in ledger.accounts:
                raise DuplicateAddress(addr)
            if int(balance) < 0:
                raise ValueError("genesis balances must be non-negative")
            ledger.accounts[addr] = Account(addr, int(balance))
            entries.append((addr, int(balance)))
        ledger.genesis_accounts = tuple(entries)
        ledger.total_supply = sum(b for _, b in entries)
        ledger.blocks.append(Block(0, 0, (), ZERO_HASH, ledger.state_digest()))
        return ledger

    # -- reads -------------------------------------------------------------

    @property
    def height(self) -> int:
        return self.blocks[-1].height

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    def balance_of(self, addr: str) -> int:
        try:
            return self.accounts[Address(addr)].balance
        except KeyError:
            raise UnknownAccount(addr) from None

    def next_nonce(self, addr: str) -> int:
        addr = Address(addr)
        with self._lock:
            queued = sum(1 for r in self._queue if r.tx.sender == addr)
            return self.accounts[addr].nonce + queued

    def contract(self, addr: str):
        from .contract import UnknownContract

        try:
            return self.contracts[Address(addr)]
        except KeyError:
            raise UnknownContract(addr) from None

    def held_by_contracts(self) -> int:
        return sum(c.escrow + c.reward_pool for c in self.contracts.values())

    def circulating(self) -> int:
        return sum(a.balance for a in self.accounts.values()) + self.held_by_contracts()

    def encode_state(self) -> bytes:
        """Canonical JSON of all accounts and contracts, keys sorted, no spaces."""
        placeholder = "\x00contracts\x00"
        head = canonical_json({
            "format": STATE_FORMAT,
            "accounts": [[a.address, a.balance, a.nonce]
                         for _, a in sorted(self.accounts.items())],
            "contracts": placeholder,
        })
        body = b"[" + b",".join(c.encode_bytes() for _, c in sorted(self.contracts.items())) + b"]"
        return head.replace(canonical_json(placeholder), body)

    def state_digest(self) -> ContentHash:
        return digest(self.encode_state())

    # -- writes ------------------------------------------------------------

    def submit(self, tx: Transaction) -> TxReceipt:
        receipt = TxReceipt(tx)
        with self._lock:
            try:
                if tx.kind not in TX_KINDS:
                    raise UnsupportedKind(tx.kind)
                if tx.value < 0:
                    raise InsufficientFunds("negative value")
                acct = self.accounts.get(tx.sender)
                if acct is None:
                    raise UnknownAccount(tx.sender)
                expected = self.next_nonce(tx.sender)
                if tx.nonce != expected:
                    raise BadNonce(f"expected nonce {expected}, got {tx.nonce}")
                if acct.balance < tx.value:
                    raise InsufficientFunds(f"{tx.sender} cannot attach {format_coins(tx.value)}")
            except LedgerError as exc:
                receipt.status, receipt.error = "Rejected", exc
                return receipt
            self._queue.append(receipt)
        return receipt

    def transact(self, sender: str, kind: str, payload: dict | None = None,
                 value: int = 0) -> TxReceipt:
        """Submit with the sender's next nonce filled in."""
        sender = Address(sender)
        with self._lock:
            if sender not in self.accounts:
                tx = Transaction(sender, 0, kind, payload or {}, value)
            else:
                tx = Transaction(sender, self.next_nonce(sender), kind, payload or {}, value)
            return self.submit(tx)

    def execute(self, sender: str, kind: str, payload: dict | None = None, value: int = 0):
        """Submit, seal a block, and return the result or raise the rejection."""
        receipt = self.transact(sender, kind, payload, value)
        if receipt.status == "Queued":
            self.seal_block()
        if receipt.error is not None:
            raise receipt.error
        return receipt.result

    def _apply(self, receipt: TxReceipt, height: int) -> None:
        tx = receipt.tx
        ex = Execution(self, tx, height)
        try:
            acct = ex.account(tx.sender)
            if tx.nonce != acct.nonce:
                raise BadNonce(f"expected nonce {acct.nonce}, got {tx.nonce}")
            if acct.balance < tx.value:
                raise InsufficientFunds(f"{tx.sender} cannot attach {format_coins(tx.value)}")
            handler = _HANDLERS.get(tx.kind)
            if handler is None:
                raise UnsupportedKind(tx.kind)
            result = handler(ex, tx)
        except LedgerError as exc:
            receipt.status, receipt.error = "Rejected", exc
        except (KeyError, TypeError, ValueError) as exc:
            receipt.status, receipt.error = "Rejected", MalformedTransaction(str(exc))
        else:
            acct.nonce += 1
            receipt.status, receipt.result = "Applied", result
            self.events.extend(ex.events)

    def seal_block(self) -> Block:
        with self._lock:
            queue, self._queue = self._queue, []
            height = self.height + 1
            for index, receipt in enumerate(queue):
                receipt.height, receipt.index = height, index
                self._apply(receipt, height)
                tx = receipt.tx
                self.tx_log.append(TxLogRow(height, index, tx.kind, tx.sender, tx.value,
                                            receipt.status if receipt.ok else receipt.reason))
            if self.circulating() != self.total_supply:
                raise AssertionError("currency conservation violated")
            block = Block(
                height,
                height * self.blocktime,
                tuple(r.tx for r in queue),
                self.head.digest,
                self.state_digest(),
            )
            self.blocks.append(block)
            logger.debug("sealed block %d with %d txs", height, len(queue))
            return block

    @classmethod
    def replay(cls, genesis_accounts: Iterable[tuple[str, int]], blocks: Iterable[Block],
               blocktime: int = DEFAULT_BLOCKTIME, store=None) -> Ledger:
        ledger = cls.genesis(genesis_accounts, blocktime, store)
        for block in blocks:
            if block.height == 0:
                if block.state_digest != ledger.head.state_digest:
                    raise ChainCorruption("genesis state digest mismatch")
                continue
            if block.height != ledger.height + 1:
                raise ChainCorruption(f"expected height {ledger.height + 1}, got {block.height}")
            if block.parent_digest != ledger.head.digest:
                raise ChainCorruption(f"parent digest mismatch at height {block.height}")
            for tx in block.transactions:
                receipt = TxReceipt(tx)
                with ledger._lock:
                    ledger._queue.append(receipt)
            sealed = ledger.seal_block()
            if sealed.state_digest != block.state_digest:
                raise ChainCorruption(f"state digest mismatch at height {block.height}")
            if sealed.timestamp != block.timestamp:
                raise ChainCorruption(f"timestamp mismatch at height {block.height}")
        return ledger

    # -- export ------------------------------------------------------------

    def write_tx_log(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["height", "tx_index", "kind", "sender", "value", "status"])
        for row in self.tx_log:
            writer.writerow([row.height, row.tx_index, row.kind, row.sender, row.value, row.status])
