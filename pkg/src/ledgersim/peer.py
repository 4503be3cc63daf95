"""Peer model: endorsement pipeline and the four-stage block commit.

Endorsement runs proposals through three CPU steps on the peer VM —
proposal check, chaincode execution (under a shared state-database lock),
and signing. Concurrency is bounded by scheduler slots (default: the VM's
virtual cores); a proposal blocked on the lock keeps its slot, which
bounds the wakeup herd when a commit releases the exclusive lock.

Commit applies one block at a time per peer, in four serial stages:
  1. signature validation over all txs, fanned out across
     min(pool, core_cap) parallel wave tasks;
  2. serial read/write-set conflict checking;
  3. serial ledger storage append (header + per-KB cost);
  4. state-database update: per-doc prep CPU, then the batch call under
     the exclusive lock (the call itself is an I/O-bound delay, not VM
     CPU — peers idle their cores while the store churns).
The committed total is the exact sum of the four stage durations; the
stage boundaries are contiguous, so it equals wall time from commit start.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass

from .engine import SimulationError
from .model import ENDORSED

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1


@dataclass
class PeerCostModel:
    proposal_check_us: int = 3000
    chaincode_exec_us: int = 12000
    endorse_sign_us: int = 5000
    per_tx_vscc_us: int = 3400
    per_tx_mvcc_us: int = 180
    block_header_us: int = 2000
    block_storage_per_kb_us: int = 17
    per_doc_read_us: int = 2500
    per_doc_statedb_prep_us: int = 250
    vscc_contention_us: int = 0


@dataclass
class PeerConfig:
    id: str
    org: str = "org1"
    endorser: bool = False
    event_source: bool = False
    validator_pool_size: int | None = None   # default: VM virtual cores
    scheduler_core_cap: int | None = None    # default: VM virtual cores
    validation_channel: str = "unbuffered"   # "buffered" disables contention
    # committer role is always on; there is no committer-less peer here.


class Peer:
    def __init__(self, kernel, cfg: PeerConfig, costs: PeerCostModel,
                 vm, statedb, lock, link_delay_us: int, metrics):
        self.kernel = kernel
        self.cfg = cfg
        self.costs = costs
        self.vm = vm
        self.statedb = statedb
        self.lock = lock
        self.link = link_delay_us
        self.metrics = metrics
        self.pool_size = cfg.validator_pool_size or vm.vcores
        self.slots = cfg.scheduler_core_cap or vm.vcores
        self.p_validation = max(1, min(self.pool_size, self.slots))
        self.free_slots = self.slots
        self.pending: deque = deque()
        self.subscribers: list = []      # app servers listening for commits
        self.servers: dict = {}          # server id -> AppServer (reply routing)
        self.next_block = 1
        self.commit_queue: deque = deque()
        self.committing = False
        self.committed_txs = 0
        self.committed_hash = FNV_OFFSET
        # scratch for the in-flight commit state machine
        self._blk = None
        self._stage_t0 = 0
        self._commit_t0 = 0
        self._vscc_left = 0
        self._stages: dict[str, int] = {}

    # -- endorsement -----------------------------------------------------

    def handle_proposal(self, tx) -> None:
        tx.phase_stamps["proposal_received"] = self.kernel.now
        if self.free_slots:
            self.free_slots -= 1
            self._admit(tx)
        else:
            self.pending.append(tx)

    def _admit(self, tx) -> None:
        if tx.kind == "query":
            self._query_start(tx)
        else:
            self.vm.run(self.costs.proposal_check_us, self._check_done, tx)

    def _check_done(self, tx) -> None:
        self.lock.acquire_shared(("e", tx.tx_id), self._exec_start, tx)

    def _exec_start(self, tx) -> None:
        self.vm.run(self.costs.chaincode_exec_us, self._exec_done, tx)

    def _exec_done(self, tx) -> None:
        self.lock.release_shared(("e", tx.tx_id))
        self.vm.run(self.costs.endorse_sign_us, self._sign_done, tx)

    def _sign_done(self, tx) -> None:
        now = self.kernel.now
        tx.phase_stamps["proposal"] = now
        tx.advance_status(ENDORSED)
        self.metrics.phase("proposal_complete",
                           now - tx.phase_stamps["proposal_received"])
        self.kernel.note("endorsed", self.cfg.id, tx.tx_id)
        self._release_slot()
        self.kernel.schedule(self.link,
                             self.servers[tx.server_id].handle_endorsement, tx)

    def _release_slot(self) -> None:
        if self.pending:
            self._admit(self.pending.popleft())
        else:
            self.free_slots += 1

    # -- queries ---------------------------------------------------------
    # A query proposal simulates the chaincode under the shared lock and
    # charges a flat indexed lookup plus a per-result-document read; there
    # is no ordering or commit leg.

    def _query_start(self, tx) -> None:
        self.lock.acquire_shared(("q", tx.tx_id), self._query_exec, tx)

    def _query_exec(self, tx) -> None:
        self.vm.run(self.costs.chaincode_exec_us, self._query_lookup, tx)

    def _query_lookup(self, tx) -> None:
        self.kernel.schedule(self.statedb.call_overhead_us, self._query_read, tx)

    def _query_read(self, tx) -> None:
        self.vm.run(self.costs.per_doc_read_us * tx.result_count,
                    self._query_done, tx)

    def _query_done(self, tx) -> None:
        self.lock.release_shared(("q", tx.tx_id))
        now = self.kernel.now
        tx.phase_stamps["proposal"] = now
        tx.advance_status(ENDORSED)
        self.metrics.phase("proposal_complete",
                           now - tx.phase_stamps["proposal_received"])
        self._release_slot()
        self.kernel.schedule(self.link,
                             self.servers[tx.server_id].handle_endorsement, tx)

    # -- commit ----------------------------------------------------------

    def handle_block(self, block) -> None:
        if block.block_num != self.next_block:
            raise SimulationError(
                f"{self.cfg.id}: block {block.block_num} delivered out of order "
                f"(expected {self.next_block})")
        self.next_block += 1
        self.commit_queue.append((block, self.kernel.now))
        if not self.committing:
            self._start_commit()

    def _start_commit(self) -> None:
        block, delivered_at = self.commit_queue.popleft()
        self.committing = True
        self._blk = block
        now = self.kernel.now
        self._commit_t0 = now
        self._stage_t0 = now
        self._stages = {}
        self.metrics.block_commit_start(block.block_num, self.cfg.id,
                                        now, now - delivered_at)
        # Stage 1: parallel signature validation waves.
        n = block.tx_count
        p = min(self.p_validation, n) if n else 1
        base, extra = divmod(n, p)
        shares = [base + 1] * extra + [base] * (p - extra)
        shares = [s for s in shares if s]
        if not shares:
            self._vscc_left = 1
            self._vscc_part_done(None)
            return
        contention = 0
        if (self.cfg.validation_channel == "unbuffered"
                and self.costs.vscc_contention_us and len(shares) > 1):
            contention = self.costs.vscc_contention_us
        # Wave tasks with identical shares drain the (unbuffered) results
        # channel at the same instants and pay a send penalty per tx.
        sizes = Counter(shares) if contention else None
        self._vscc_left = len(shares)
        for s in shares:
            extra_us = contention * s if (contention and sizes[s] > 1) else 0
            self.vm.run(s * self.costs.per_tx_vscc_us + extra_us,
                        self._vscc_part_done, None)

    def _vscc_part_done(self, _arg) -> None:
        self._vscc_left -= 1
        if self._vscc_left:
            return
        now = self.kernel.now
        self._stages["vscc"] = now - self._stage_t0
        self._stage_t0 = now
        self.vm.run(self._blk.tx_count * self.costs.per_tx_mvcc_us,
                    self._mvcc_done, None)

    def _mvcc_done(self, _arg) -> None:
        now = self.kernel.now
        self._stages["mvcc"] = now - self._stage_t0
        self._stage_t0 = now
        work = (self.costs.block_header_us
                + self._blk.byte_size * self.costs.block_storage_per_kb_us // 1024)
        self.vm.run(work, self._storage_done, None)

    def _storage_done(self, _arg) -> None:
        now = self.kernel.now
        self._stages["storage"] = now - self._stage_t0
        self._stage_t0 = now
        self.vm.run(self._blk.tx_count * self.costs.per_doc_statedb_prep_us,
                    self._prep_done, None)

    def _prep_done(self, _arg) -> None:
        self.lock.acquire_exclusive(("c", self.cfg.id), self._lock_got, None)

    def _lock_got(self, _arg) -> None:
        service = self.statedb.batch_update_block(self._blk.block_num,
                                                  self._blk.doc_ids)
        self.metrics.phase("statedb_batch_call", service)
        self.kernel.schedule(service, self._batch_done, None)

    def _batch_done(self, _arg) -> None:
        self.lock.release_exclusive(("c", self.cfg.id))
        now = self.kernel.now
        self._stages["statedb"] = now - self._stage_t0
        block = self._blk
        total = now - self._commit_t0
        # The four stages are serial and contiguous, so their sum is the
        # wall-clock commit time by construction; keep the check cheap.
        assert total == sum(self._stages.values())
        m = self.metrics
        m.phase("block_validate", self._stages["vscc"])
        m.phase("ledger_processing", self._stages["mvcc"])
        m.phase("commit_storage", self._stages["storage"])
        m.phase("commit_statedb", self._stages["statedb"])
        m.phase("commit_total", total)
        m.block_commit_done(block.block_num, self.cfg.id, now)
        h = self.committed_hash
        for tx_id in block.tx_ids:
            h = ((h ^ tx_id) * FNV_PRIME) & MASK64
        self.committed_hash = h
        self.committed_txs += block.tx_count
        self.kernel.note("committed", self.cfg.id, block.block_num)
        if self.cfg.event_source:
            for server in self.subscribers:
                self.kernel.schedule(self.link, server.handle_commit_event,
                                     (self.cfg.id, block))
        self.committing = False
        self._blk = None
        if self.commit_queue:
            self._start_commit()
