"""Core data model: agreement documents, transactions, blocks, strategies.

Sizes follow the modeled application's wire format: a transaction carries
the agreement payload twice (once in the proposal, once in the read-write
set), the agreement metadata, a client and a peer certificate, and a fixed
envelope overhead.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

ENVELOPE_OVERHEAD_BYTES = 200
DEFAULT_CERT_BYTES = 800

# Transaction status values (pipeline progress; monotone non-decreasing).
# `responded` is absorbing: under fire-and-forget commit strategies the
# response precedes the commit, and later commit stamps do not move the
# status backward. ABORTED is reserved; nothing in the modeled pipeline
# aborts transactions today.
PENDING = 0
ENDORSED = 1
ORDERED = 2
COMMITTED = 3
RESPONDED = 4
ABORTED = 5

STATUS_NAMES = {
    PENDING: "pending",
    ENDORSED: "endorsed",
    ORDERED: "ordered",
    COMMITTED: "committed",
    RESPONDED: "responded",
    ABORTED: "aborted",
}


class CommitStrategy(str, Enum):
    NULL = "NULL"
    NETWORK_ANY = "NETWORK_ANY"
    NETWORK_ALL = "NETWORK_ALL"
    MSP_ANY = "MSP_ANY"
    MSP_ALL = "MSP_ALL"
    ASYNC_SPLIT = "ASYNC_SPLIT"


class IdStrategy(str, Enum):
    RANDOM = "RANDOM"
    MONOTONIC_TIMESTAMP = "MONOTONIC_TIMESTAMP"


@dataclass(frozen=True)
class AgreementDoc:
    """One agreement document: opaque payload plus indexed metadata."""

    doc_id: str
    payload_bytes: int = 2730
    metadata_bytes: int = 402


def tx_wire_size(doc: AgreementDoc, cert_bytes: int = DEFAULT_CERT_BYTES) -> int:
    """Serialized transaction size: payload appears in both the proposal
    and the read-write set, plus metadata, two certs, and envelope."""
    return (doc.payload_bytes + doc.metadata_bytes + doc.payload_bytes
            + cert_bytes + cert_bytes + ENVELOPE_OVERHEAD_BYTES)


class MonotonicIdGen:
    """Zero-padded decimal microsecond counter with a same-tick sequence
    suffix. Fixed widths keep lexicographic order equal to generation
    order, which is what makes these IDs append-friendly downstream."""

    __slots__ = ("last_us", "seq")

    def __init__(self):
        self.last_us = -1
        self.seq = 0

    def next(self, now_us: int) -> str:
        if now_us < self.last_us:
            raise ValueError("monotonic id clock moved backwards")
        if now_us == self.last_us:
            self.seq += 1
        else:
            self.last_us = now_us
            self.seq = 0
        return f"{now_us:016d}{self.seq:06d}"


class Transaction:
    """In-flight request state. Hot path: plain slots, no dataclass."""

    __slots__ = (
        "tx_id", "doc", "kind", "result_count", "created_at", "status",
        "phase_stamps", "wire_size", "client_thread", "server_id",
        "block_num",
    )

    def __init__(self, tx_id: int, doc: AgreementDoc, kind: str,
                 created_at: int, result_count: int = 0, wire_size: int = 0):
        self.tx_id = tx_id
        self.doc = doc
        self.kind = kind            # "insert" | "query"
        self.result_count = result_count
        self.created_at = created_at
        self.status = PENDING
        self.phase_stamps: dict[str, int] = {"created": created_at}
        self.wire_size = wire_size
        self.client_thread = -1
        self.server_id = ""
        self.block_num = -1

    def stamp(self, phase: str, now: int) -> None:
        self.phase_stamps[phase] = now

    def advance_status(self, status: int) -> None:
        if status > self.status:
            self.status = status


class Block:
    __slots__ = ("block_num", "tx_ids", "doc_ids", "cut_reason", "cut_at",
                 "opened_at", "byte_size", "persist_done_at")

    def __init__(self, block_num: int, tx_ids: list[int], doc_ids: list[str],
                 cut_reason: str, cut_at: int, opened_at: int, byte_size: int):
        self.block_num = block_num
        self.tx_ids = tx_ids
        self.doc_ids = doc_ids
        self.cut_reason = cut_reason    # "size" | "timeout"
        self.cut_at = cut_at
        self.opened_at = opened_at
        self.byte_size = byte_size
        self.persist_done_at = -1

    @property
    def tx_count(self) -> int:
        return len(self.tx_ids)

    def fill(self, block_size: int) -> float:
        return len(self.tx_ids) / block_size
