"""Marketplace contract: model hosting, deposit escrow, challenges and refunds.

Every state change is a ledger transaction; the functions at the bottom of
this module build and submit them. Executors validate first and mutate
afterwards, so a rejected transaction never leaves partial state behind.

Contribution lifecycle::

    Pending --verify--> Challenged --accept--> Forfeited
       |                    |
       |                    +--reject--> Pending (ages from its original block)
       +--claim_refund (after timeout)--> Refunded

A challenge is its own record: Open, then Accepted or CorrectionRejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from . import models
from .cas import ContentHash, digest
from .ledger import (
    COIN,
    Address,
    Execution,
    Ledger,
    LedgerError,
    Transaction,
    TxReceipt,
    canonical_json,
    contract_address,
    handles,
)
from .models import Sample

PENDING = "Pending"
CHALLENGED = "Challenged"
REFUNDED = "Refunded"
FORFEITED = "Forfeited"
TERMINAL = frozenset({REFUNDED, FORFEITED})

OPEN = "Open"
ACCEPTED = "Accepted"
CORRECTION_REJECTED = "CorrectionRejected"

# (from, to) pairs a contribution may take
LEGAL_TRANSITIONS = frozenset({
    (PENDING, CHALLENGED),
    (PENDING, REFUNDED),
    (CHALLENGED, FORFEITED),
    (CHALLENGED, PENDING),
})


class ContractError(LedgerError):
    pass


class UnknownContract(ContractError):
    pass


class InvalidParams(ContractError):
    pass


class MalformedModel(ContractError):
    pass


class SchemaError(ContractError):
    pass


class WrongDeposit(ContractError):
    pass


class UnknownContribution(ContractError):
    pass


class WrongStatus(ContractError):
    pass


class TimeoutElapsed(ContractError):
    pass


class TooEarly(ContractError):
    pass


class IdenticalCorrection(ContractError):
    pass


class SelfChallenge(ContractError):
    pass


class NotOwner(ContractError):
    pass


class WrongClaimant(ContractError):
    pass


class DigestMismatch(ContractError):
    pass


class DecodeFailure(ContractError):
    pass


@dataclass(frozen=True)
class IncentiveParams:
    deposit: int
    reward: int
    timeout: int

    def validate(self) -> None:
        if not (isinstance(self.deposit, int) and isinstance(self.reward, int)
                and isinstance(self.timeout, int)):
            raise InvalidParams("incentive parameters must be integers")
        if self.deposit <= 0:
            raise InvalidParams("deposit must be positive")
        if self.reward < 0:
            raise InvalidParams("reward must be non-negative")
        if self.timeout < 1:
            raise InvalidParams("timeout must be at least one block")
        if self.reward > self.deposit:
            raise InvalidParams("reward may not exceed the deposit")

    def encode(self) -> dict:
        return {"deposit": self.deposit, "reward": self.reward, "timeout": self.timeout}

    @classmethod
    def decode(cls, obj: dict) -> IncentiveParams:
        try:
            return cls(obj["deposit"], obj["reward"], obj["timeout"])
        except (KeyError, TypeError) as exc:
            raise InvalidParams(f"malformed incentive parameters: {exc}") from None


DEFAULT_PARAMS = IncentiveParams(deposit=1 * COIN, reward=COIN // 2, timeout=10)


@dataclass(frozen=True)
class DatasetHash:
    hash: ContentHash
    declared_count: int


DataRef = Union[Sample, DatasetHash]


def encode_ref(ref: DataRef) -> dict:
    if isinstance(ref, Sample):
        return {"type": "inline", "label": ref.label, "features": list(ref.features)}
    return {"type": "dataset", "hash": str(ref.hash), "count": ref.declared_count}


def decode_ref(obj: dict) -> DataRef:
    try:
        if obj["type"] == "inline":
            label = obj["label"]
            if not isinstance(label, int) or isinstance(label, bool):
                raise SchemaError("label must be an integer")
            return Sample(tuple(obj["features"]), label)
        if obj["type"] == "dataset":
            count = obj["count"]
            if not isinstance(count, int) or count < 1:
                raise SchemaError("declared count must be a positive integer")
            return DatasetHash(ContentHash(obj["hash"]), count)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed data reference: {exc}") from None
    raise SchemaError(f"unknown data reference type {obj.get('type')!r}")


def ref_size(ref: DataRef) -> int:
    return 1 if isinstance(ref, Sample) else ref.declared_count


_SPLICE_CONTRIBUTIONS = "\x00contributions\x00"
_SPLICE_CHALLENGES = "\x00challenges\x00"


def _join(fragments) -> bytes:
    return b"[" + b",".join(fragments) + b"]"


@dataclass
class ContributionRecord:
    id: int
    contributor: Address
    data: DataRef
    deposit_held: int
    submitted_at: int
    status: str = PENDING
    challenge: int | None = None
    forfeited_to: Address | None = None
    correction: DataRef | None = None
    trust: str | None = None  # dataset hashes: "verified" or "trusted"
    _cached: tuple = field(default=(), repr=False, compare=False)

    @property
    def effective(self) -> DataRef:
        return self.correction if self.status == FORFEITED else self.data

    def encode(self) -> list:
        return [
            self.id, self.contributor, encode_ref(self.data), self.deposit_held,
            self.submitted_at, self.status, self.challenge, self.forfeited_to,
            None if self.correction is None else encode_ref(self.correction), self.trust,
        ]

    def encode_bytes(self) -> bytes:
        key = (self.deposit_held, self.status, self.challenge, self.forfeited_to,
               self.correction, self.trust)
        if not self._cached or self._cached[0] != key:
            self._cached = (key, canonical_json(self.encode()))
        return self._cached[1]


@dataclass
class Challenge:
    id: int
    contribution_id: int
    verifier: Address
    correction: DataRef
    deposit: int
    opened_at: int
    status: str = OPEN
    _cached: tuple = field(default=(), repr=False, compare=False)

    def encode(self) -> list:
        return [self.id, self.contribution_id, self.verifier, encode_ref(self.correction),
                self.deposit, self.opened_at, self.status]

    def encode_bytes(self) -> bytes:
        if not self._cached or self._cached[0] != self.status:
            self._cached = (self.status, canonical_json(self.encode()))
        return self._cached[1]


@dataclass
class Settlement:
    paid_to: Address
    refund: int = 0
    forfeited: int = 0
    reward: int = 0
    to_pool: int = 0

    @property
    def total(self) -> int:
        return self.refund + self.forfeited + self.reward


@dataclass
class ModelContract:
    address: Address
    owner: Address
    model_kind: str
    feature_dim: int
    class_set: tuple[int, ...]
    initial_model: bytes
    model: bytes
    initial_data_hash: ContentHash
    initial_count: int
    test_digest: ContentHash
    params: IncentiveParams
    reward_pool: int
    deployed_at: int
    predecessor: Address | None = None
    contributions: list[ContributionRecord] = field(default_factory=list)
    challenges: list[Challenge] = field(default_factory=list)
    escrow: int = 0
    # models after each prefix of the contribution log; derived, never encoded
    _trail: list = field(default_factory=list, repr=False, compare=False)

    def encode_header(self) -> dict:
        return {
            "address": self.address,
            "owner": self.owner,
            "kind": self.model_kind,
            "dim": self.feature_dim,
            "classes": list(self.class_set),
            "initial_model": self.initial_model.decode("ascii"),
            "model": self.model.decode("ascii"),
            "initial_data": self.initial_data_hash,
            "initial_count": self.initial_count,
            "test_digest": self.test_digest,
            "params": self.params.encode(),
            "pool": self.reward_pool,
            "escrow": self.escrow,
            "deployed_at": self.deployed_at,
            "predecessor": self.predecessor,
        }

    def encode(self) -> dict:
        obj = self.encode_header()
        obj["contributions"] = [r.encode() for r in self.contributions]
        obj["challenges"] = [c.encode() for c in self.challenges]
        return obj

    def encode_bytes(self) -> bytes:
        """``canonical_json(self.encode())``, assembled from cached record fragments."""
        obj = self.encode_header()
        obj["contributions"] = _SPLICE_CONTRIBUTIONS
        obj["challenges"] = _SPLICE_CHALLENGES
        out = canonical_json(obj)
        out = out.replace(canonical_json(_SPLICE_CONTRIBUTIONS),
                          _join(r.encode_bytes() for r in self.contributions))
        return out.replace(canonical_json(_SPLICE_CHALLENGES),
                           _join(ch.encode_bytes() for ch in self.challenges))

    def current_model(self) -> models.OnlineModel:
        return self._trail_models()[-1]

    def _trail_models(self) -> list:
        if len(self._trail) != len(self.contributions) + 1:
            m = models.deserialize(self.initial_model)
            trail = [m]
            for rec in self.contributions:
                ref = rec.effective
                if isinstance(ref, Sample):
                    m = m.update(ref)
                trail.append(m)
            self._trail = trail
        return self._trail

    def _refold(self, contribution_id: int, ref: DataRef) -> list:
        """Trail with contribution ``contribution_id`` replaced by ``ref``."""
        trail = self._trail_models()
        m = trail[contribution_id]
        suffix = []
        for rec in self.contributions[contribution_id:]:
            r = ref if rec.id == contribution_id else rec.effective
            if isinstance(r, Sample):
                m = m.update(r)
            suffix.append(m)
        return trail[: contribution_id + 1] + suffix

    def effective_samples(self, substitute: dict[int, DataRef] | None = None) -> list[Sample]:
        substitute = substitute or {}
        out = []
        for rec in self.contributions:
            ref = substitute.get(rec.id, rec.effective)
            if isinstance(ref, Sample):
                out.append(ref)
        return out

    def replay_model(self, substitute: dict[int, DataRef] | None = None) -> bytes:
        """Fold the deployed model over the cleaned contribution log."""
        start = models.deserialize(self.initial_model)
        return models.fold(start, self.effective_samples(substitute)).serialize()

    def escrow_from_records(self) -> int:
        held = sum(r.deposit_held for r in self.contributions)
        return held + sum(c.deposit for c in self.challenges if c.status == OPEN)

    def dataset_size(self, at_height: int | None = None) -> int:
        return self.initial_count + sum(
            ref_size(r.effective) for r in self.contributions
            if at_height is None or r.submitted_at <= at_height
        )

    def record(self, contribution_id) -> ContributionRecord:
        if (not isinstance(contribution_id, int) or isinstance(contribution_id, bool)
                or not 0 <= contribution_id < len(self.contributions)):
            raise UnknownContribution(f"no contribution {contribution_id!r}")
        return self.contributions[contribution_id]


# -- executors ---------------------------------------------------------------


def _contract(ex: Execution, addr) -> ModelContract:
    try:
        return ex.contracts[Address(addr)]
    except (KeyError, ValueError):
        raise UnknownContract(str(addr)) from None


def _check_ref(c: ModelContract, ref: DataRef) -> None:
    if isinstance(ref, Sample):
        if ref.dim != c.feature_dim:
            raise SchemaError(f"expected {c.feature_dim} features, got {ref.dim}")
        if ref.label not in c.class_set:
            raise SchemaError(f"label {ref.label} not in class set {list(c.class_set)}")


def _dataset_trust(ex: Execution, c: ModelContract, ref: DatasetHash) -> str:
    store = ex.store
    if store is None or not store.has(ref.hash):
        return "trusted"
    try:
        samples = models.decode_dataset(store.get(ref.hash), c.feature_dim, c.class_set)
    except models.DecodeError as exc:
        raise SchemaError(f"dataset {ref.hash} does not match the schema: {exc}") from None
    if len(samples) != ref.declared_count:
        raise SchemaError(f"dataset holds {len(samples)} samples, declared {ref.declared_count}")
    return "verified"


def _require_deposit(ex: Execution, c: ModelContract) -> None:
    if ex.tx.value != c.params.deposit:
        raise WrongDeposit(f"attach exactly {c.params.deposit} micro-coins")
    ex.require_funds(ex.tx.sender, ex.tx.value)


def _parse_model(text, dim: int | None = None) -> models.OnlineModel:
    try:
        model = models.deserialize(str(text).encode("ascii"))
    except (models.ModelError, UnicodeEncodeError) as exc:
        raise MalformedModel(str(exc)) from None
    if dim is not None and model.dim != dim:
        raise SchemaError(f"model has {model.dim} features, contract needs {dim}")
    return model


def _new_contract(ex: Execution, p: dict, dim: int, classes, predecessor=None,
                  default_count: int | None = None) -> ModelContract:
    tx = ex.tx
    params = IncentiveParams.decode(p["params"])
    params.validate()
    model = _parse_model(p["model"], dim)
    if tuple(classes) != model.classes:
        raise SchemaError(f"{model.kind} models need class set {list(model.classes)}")
    count = p.get("initial_count", default_count)
    if not isinstance(count, int) or count < 0:
        raise SchemaError("initial count must be a non-negative integer")
    initial_data, test_digest = ContentHash(p["initial_data_hash"]), ContentHash(p["test_digest"])
    ex.require_funds(tx.sender, tx.value)
    blob = model.serialize()
    c = ModelContract(
        address=contract_address(tx.sender, tx.nonce),
        owner=tx.sender,
        model_kind=model.kind,
        feature_dim=dim,
        class_set=tuple(classes),
        initial_model=blob,
        model=blob,
        initial_data_hash=initial_data,
        initial_count=count,
        test_digest=test_digest,
        params=params,
        reward_pool=tx.value,
        deployed_at=ex.height,
        predecessor=predecessor,
    )
    ex.debit(tx.sender, tx.value)
    ex.contracts[c.address] = c
    return c


@handles("DeployContract")
def _deploy(ex: Execution, tx: Transaction):
    p = tx.payload
    dim = p["feature_dim"]
    if not isinstance(dim, int) or dim < 1:
        raise SchemaError("feature dimension must be a positive integer")
    c = _new_contract(ex, p, dim, p.get("class_set", list(models.BINARY_CLASSES)))
    ex.emit(c.address, "DEPLOY", None, tx.value)
    return c.address


@handles("UpdateModel")
def _update(ex: Execution, tx: Transaction):
    old = _contract(ex, tx.payload["predecessor"])
    c = _new_contract(ex, tx.payload, old.feature_dim, old.class_set,
                      predecessor=old.address, default_count=old.dataset_size())
    ex.emit(c.address, "UPDATE", None, tx.value)
    return c.address


@handles("AddData")
def _add_inline(ex: Execution, tx: Transaction):
    c = _contract(ex, tx.payload["contract"])
    sample = decode_ref(tx.payload["data"])
    if not isinstance(sample, Sample):
        raise SchemaError("AddData carries an inline sample")
    _check_ref(c, sample)
    _require_deposit(ex, c)
    trail = c._trail_models()
    trained = trail[-1].update(sample)

    rec = ContributionRecord(len(c.contributions), tx.sender, sample, tx.value, ex.height)
    ex.debit(tx.sender, tx.value)
    c.escrow += tx.value
    c.contributions.append(rec)
    trail.append(trained)
    c.model = trained.serialize()
    ex.emit(c.address, "ADD", rec.id, tx.value)
    return rec.id


@handles("AddDatasetHash")
def _add_dataset(ex: Execution, tx: Transaction):
    c = _contract(ex, tx.payload["contract"])
    ref = decode_ref(tx.payload["data"])
    if not isinstance(ref, DatasetHash):
        raise SchemaError("AddDatasetHash carries a dataset hash")
    _require_deposit(ex, c)
    trust = _dataset_trust(ex, c, ref)
    trail = c._trail_models()

    rec = ContributionRecord(len(c.contributions), tx.sender, ref, tx.value, ex.height,
                             trust=trust)
    ex.debit(tx.sender, tx.value)
    c.escrow += tx.value
    c.contributions.append(rec)
    trail.append(trail[-1])
    ex.emit(c.address, "ADD", rec.id, tx.value)
    return rec.id


@handles("Verify")
def _verify(ex: Execution, tx: Transaction):
    c = _contract(ex, tx.payload["contract"])
    rec = c.record(tx.payload["id"])
    if rec.status != PENDING:
        raise WrongStatus(f"contribution {rec.id} is {rec.status}")
    if ex.height >= rec.submitted_at + c.params.timeout:
        raise TimeoutElapsed(f"challenge window closed at block {rec.submitted_at + c.params.timeout}")
    if tx.sender == rec.contributor:
        raise SelfChallenge("contributors cannot challenge their own data")
    correction = decode_ref(tx.payload["correction"])
    if type(correction) is not type(rec.data):
        raise SchemaError("a correction must be the same kind of data as the original")
    _check_ref(c, correction)
    if correction == rec.data:
        raise IdenticalCorrection(f"correction equals contribution {rec.id}")
    _require_deposit(ex, c)

    ch = Challenge(len(c.challenges), rec.id, tx.sender, correction, tx.value, ex.height)
    ex.debit(tx.sender, tx.value)
    c.escrow += tx.value
    c.challenges.append(ch)
    rec.status, rec.challenge = CHALLENGED, ch.id
    ex.emit(c.address, "CHALLENGE", rec.id, tx.value)
    return ch.id


@handles("Adjudicate")
def _adjudicate(ex: Execution, tx: Transaction):
    c = _contract(ex, tx.payload["contract"])
    if tx.sender != c.owner:
        raise NotOwner(f"only {c.owner} adjudicates this contract")
    rec = c.record(tx.payload["id"])
    if rec.status != CHALLENGED:
        raise WrongStatus(f"contribution {rec.id} is {rec.status}")
    accept = tx.payload["accept"]
    if not isinstance(accept, bool):
        raise SchemaError("accept must be a boolean")
    ch = c.challenges[rec.challenge]

    if not accept:
        c.escrow -= ch.deposit
        c.reward_pool += ch.deposit
        ch.status = CORRECTION_REJECTED
        rec.status, rec.challenge = PENDING, None
        ex.emit(c.address, "REJECT", rec.id, ch.deposit)
        return Settlement(c.address, to_pool=ch.deposit)

    reward = min(c.params.reward, c.reward_pool)
    trail = c._refold(rec.id, ch.correction)
    settlement = Settlement(ch.verifier, refund=ch.deposit, forfeited=rec.deposit_held,
                            reward=reward)
    c.escrow -= ch.deposit + rec.deposit_held
    c.reward_pool -= reward
    ex.credit(ch.verifier, settlement.total)
    ch.status = ACCEPTED
    rec.status, rec.challenge = FORFEITED, None
    rec.forfeited_to, rec.correction, rec.deposit_held = ch.verifier, ch.correction, 0
    c._trail = trail
    c.model = trail[-1].serialize()
    ex.emit(c.address, "ACCEPT", rec.id, settlement.total)
    return settlement


@handles("ClaimRefund")
def _claim_refund(ex: Execution, tx: Transaction):
    c = _contract(ex, tx.payload["contract"])
    rec = c.record(tx.payload["id"])
    if tx.sender != rec.contributor:
        raise WrongClaimant(f"contribution {rec.id} belongs to {rec.contributor}")
    if rec.status != PENDING:
        raise WrongStatus(f"contribution {rec.id} is {rec.status}")
    due = rec.submitted_at + c.params.timeout
    if ex.height < due:
        raise TooEarly(f"refund available from block {due}")

    amount = rec.deposit_held
    c.escrow -= amount
    ex.credit(rec.contributor, amount)
    rec.status, rec.deposit_held = REFUNDED, 0
    ex.emit(c.address, "REFUND", rec.id, amount)
    return Settlement(rec.contributor, refund=amount)


# -- client side -------------------------------------------------------------


def _deposit_for(ledger: Ledger, contract: str) -> int:
    c = ledger.contracts.get(Address(contract))
    return c.params.deposit if c is not None else 0


def deploy(ledger: Ledger, owner: str, model: models.OnlineModel, *,
           initial_data_hash: str, test_digest: str, initial_count: int,
           params: IncentiveParams = DEFAULT_PARAMS, pool_funding: int = 0) -> TxReceipt:
    payload = {
        "model": model.serialize().decode("ascii"),
        "feature_dim": model.dim,
        "class_set": list(model.classes),
        "initial_data_hash": str(initial_data_hash),
        "initial_count": initial_count,
        "test_digest": str(test_digest),
        "params": params.encode(),
    }
    return ledger.transact(owner, "DeployContract", payload, pool_funding)


def add_data(ledger: Ledger, contributor: str, contract: str, data: DataRef) -> TxReceipt:
    kind = "AddData" if isinstance(data, Sample) else "AddDatasetHash"
    payload = {"contract": str(contract), "data": encode_ref(data)}
    return ledger.transact(contributor, kind, payload, _deposit_for(ledger, contract))


def verify(ledger: Ledger, verifier: str, contract: str, contribution_id: int,
           correction: DataRef) -> TxReceipt:
    payload = {"contract": str(contract), "id": contribution_id,
               "correction": encode_ref(correction)}
    return ledger.transact(verifier, "Verify", payload, _deposit_for(ledger, contract))


def adjudicate(ledger: Ledger, owner: str, contract: str, contribution_id: int,
               accept: bool) -> TxReceipt:
    payload = {"contract": str(contract), "id": contribution_id, "accept": bool(accept)}
    return ledger.transact(owner, "Adjudicate", payload)


def claim_refund(ledger: Ledger, contributor: str, contract: str,
                 contribution_id: int) -> TxReceipt:
    payload = {"contract": str(contract), "id": contribution_id}
    return ledger.transact(contributor, "ClaimRefund", payload)


def update_model(ledger: Ledger, author: str, old_contract: str, model: models.OnlineModel, *,
                 new_data_hash: str, test_digest: str, params: IncentiveParams = DEFAULT_PARAMS,
                 pool_funding: int = 0, initial_count: int | None = None) -> TxReceipt:
    payload = {
        "predecessor": str(old_contract),
        "model": model.serialize().decode("ascii"),
        "initial_data_hash": str(new_data_hash),
        "test_digest": str(test_digest),
        "params": params.encode(),
    }
    if initial_count is not None:
        payload["initial_count"] = initial_count
    return ledger.transact(author, "UpdateModel", payload, pool_funding)


def evaluate(ledger: Ledger, contract: str, test_payload: bytes) -> float:
    """Accuracy of the live model on a revealed test set; no state change."""
    c = ledger.contract(contract)
    if digest(test_payload) != c.test_digest:
        raise DigestMismatch("test payload does not match the committed digest")
    try:
        samples = models.decode_dataset(test_payload, c.feature_dim, c.class_set)
    except models.DecodeError as exc:
        raise DecodeFailure(str(exc)) from None
    if not samples:
        raise DecodeFailure("test set is empty")
    return models.evaluate(c.current_model(), samples)


@dataclass
class DatasetSnapshot:
    encoding: bytes  # effective inline samples in the dataset text encoding
    size: int
    series: list[tuple[int, int]]  # (height, size) from deployment to the head
    dataset_hashes: list[DatasetHash]


def snapshot_dataset(ledger: Ledger, contract: str) -> DatasetSnapshot:
    c = ledger.contract(contract)
    added = {}
    for rec in c.contributions:
        added[rec.submitted_at] = added.get(rec.submitted_at, 0) + ref_size(rec.effective)
    series, size = [], c.initial_count
    for h in range(c.deployed_at, ledger.height + 1):
        size += added.get(h, 0)
        series.append((h, size))
    hashes = [r.effective for r in c.contributions if isinstance(r.effective, DatasetHash)]
    return DatasetSnapshot(
        models.encode_dataset(c.effective_samples()), c.dataset_size(), series, hashes
    )


def lineage(ledger: Ledger, contract: str) -> list[Address]:
    """Predecessors of ``contract``, nearest first."""
    chain = []
    c = ledger.contract(contract)
    while c.predecessor is not None:
        chain.append(c.predecessor)
        c = ledger.contract(c.predecessor)
    return chain
