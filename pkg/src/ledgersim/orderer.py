"""Ordering service: leader selection, batching, block cutting, delivery.

Clients connect to the cluster leader, chosen a priori from the channel
name: FNV-1a 64 of the channel id, mod cluster size, plus one. Submitting
to a follower instead costs a fixed redirect penalty. Each transaction is
validated and enqueued on the leader's VM (per-connection handlers, so
concurrency is bounded by that VM's cores); the batch cuts when it
reaches the block size or when the batch timeout — armed when the first
transaction enters an empty batch — fires. Empty blocks are never cut.
A cut block incurs the consensus persist delay, then is delivered to
every committing peer after the per-link delay.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .model import Block, ORDERED

MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def select_leader(channel_id: str, cluster_size: int) -> int:
    """1-based leader index, fixed for the life of the channel."""
    if cluster_size < 1:
        raise ValueError("cluster size must be >= 1")
    return fnv1a64(channel_id.encode()) % cluster_size + 1


@dataclass
class OrdererConfig:
    cluster_size: int = 3
    block_size: int = 500
    batch_timeout_us: int = 2_000_000
    channel_id: str = "mychannel"
    submit_target: str = "leader"     # or "follower"
    validate_us: int = 1000
    enqueue_us: int = 1200
    persist_us: int = 9500
    follower_redirect_us: int = 2000


class OrderingService:
    def __init__(self, kernel, cfg: OrdererConfig, vm, committers: list,
                 link_delay_us: int, metrics):
        self.kernel = kernel
        self.cfg = cfg
        self.vm = vm                      # the leader's VM
        self.committers = committers
        self.link = link_delay_us
        self.metrics = metrics
        self.leader = select_leader(cfg.channel_id, cfg.cluster_size)
        self.servers: dict = {}
        self.free_slots = vm.vcores
        self.pending: deque = deque()
        self.batch: list = []
        self.batch_opened_at = 0
        self.timer_token = 0
        self.next_block_num = 1
        self.blocks_cut = 0

    def submit(self, tx) -> None:
        if self.cfg.submit_target == "follower":
            # Wrong node: pay the redirect before the leader sees it.
            self.kernel.schedule(self.cfg.follower_redirect_us, self._arrive, tx)
        else:
            self._arrive(tx)

    def _arrive(self, tx) -> None:
        tx.phase_stamps["orderer_received"] = self.kernel.now
        if self.free_slots:
            self.free_slots -= 1
            self._start(tx)
        else:
            self.pending.append(tx)

    def _start(self, tx) -> None:
        self.vm.run(self.cfg.validate_us + self.cfg.enqueue_us, self._done, tx)

    def _done(self, tx) -> None:
        now = self.kernel.now
        dur = now - tx.phase_stamps["orderer_received"]
        # One CPU task covers both steps; split the measured duration in
        # proportion to the configured costs, queue wait folded into enqueue.
        total_us = self.cfg.validate_us + self.cfg.enqueue_us
        v = dur * self.cfg.validate_us // total_us if total_us else 0
        self.metrics.phase("orderer_validate", v)
        self.metrics.phase("orderer_enqueue", dur - v)
        tx.phase_stamps["enqueued"] = now
        tx.advance_status(ORDERED)
        self.kernel.note("ordered", tx.tx_id)
        # pull the next waiting submission into the freed slot
        if self.pending:
            self._start(self.pending.popleft())
        else:
            self.free_slots += 1
        batch = self.batch
        batch.append(tx)
        if len(batch) == 1:
            self.batch_opened_at = now
            self.timer_token += 1
            self.kernel.schedule(self.cfg.batch_timeout_us, self._timeout,
                                 self.timer_token)
        if len(batch) >= self.cfg.block_size:
            self._cut("size")
        # ack after enqueue; fire-and-forget strategies respond on this
        self.kernel.schedule(self.link,
                             self.servers[tx.server_id].handle_orderer_ack, tx)

    def _timeout(self, token: int) -> None:
        if token != self.timer_token or not self.batch:
            return
        self._cut("timeout")

    def _cut(self, reason: str) -> None:
        now = self.kernel.now
        txs = self.batch
        self.batch = []
        self.timer_token += 1
        block = Block(
            block_num=self.next_block_num,
            tx_ids=[t.tx_id for t in txs],
            doc_ids=[t.doc.doc_id for t in txs],
            cut_reason=reason,
            cut_at=now,
            opened_at=self.batch_opened_at,
            byte_size=sum(t.wire_size for t in txs),
        )
        self.next_block_num += 1
        self.blocks_cut += 1
        for t in txs:
            t.block_num = block.block_num
            t.phase_stamps["cut"] = now
        self.metrics.phase("block_cut", now - self.batch_opened_at)
        self.metrics.block_cut(block)
        self.kernel.note("cut", block.block_num, len(txs), reason)
        self.kernel.schedule(self.cfg.persist_us, self._persist_done, (block, txs))

    def _persist_done(self, args) -> None:
        block, txs = args
        now = self.kernel.now
        block.persist_done_at = now
        for t in txs:
            t.phase_stamps["persisted"] = now
        self.metrics.phase("raft_persist", self.cfg.persist_us)
        for peer in self.committers:
            self.kernel.schedule(self.link, peer.handle_block, block)
