"""Deterministic simulation of a blockchain-backed collaborative learning marketplace."""

from . import cas, contract, ledger, models
from .cas import ContentHash, DirectoryStore, MemoryStore, digest
from .contract import (
    DEFAULT_PARAMS,
    DatasetHash,
    IncentiveParams,
    ModelContract,
    adjudicate,
    add_data,
    claim_refund,
    deploy,
    evaluate,
    lineage,
    snapshot_dataset,
    update_model,
    verify,
)
from .ledger import COIN, Address, Ledger, Transaction, coins, format_coins
from .models import LogisticRegression, Perceptron, Sample

__version__ = "0.1.0"
