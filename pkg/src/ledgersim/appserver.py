"""Application server model: dispatch, commit-wait strategies, event load.

A server dispatches incoming requests to its worker pool in strict
round-robin order; each worker is a serial queue that roughly saturates
one virtual core at full load. Request handling charges a per-request
CPU overhead (plus a connection-setup cost in legacy mode, where the
client SDK reconnects per request). Once a transaction is endorsed the
server submits it to the ordering service and then resolves the response
according to its commit-wait strategy:

  NULL          respond at the orderer ack, never wait for commits
  NETWORK_ANY   first commit event from any subscribed peer
  NETWORK_ALL   commit events from all subscribed peers
  MSP_ANY/ALL   same, restricted to the primary org's subscribed peers
  ASYNC_SPLIT   respond at the ack; a separate listener service on its
                own VM consumes the block events instead of the workers

Every worker consumes block-event processing CPU for every block from
every subscribed peer (the duplicated-listener behavior this model is
built to expose); under NULL that work is skipped entirely.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .model import COMMITTED, RESPONDED, CommitStrategy


@dataclass
class AppServerConfig:
    id: str
    workers: int = 12
    mapped_endorser: str = ""
    event_sources: list[str] = field(default_factory=list)
    strategy: CommitStrategy = CommitStrategy.NETWORK_ANY
    legacy_mode: bool = False
    listener_vm: str | None = None
    request_overhead_us: int = 15000
    block_event_cost_us_per_tx: int = 300
    legacy_connection_us: int = 15000


class AppServer:
    def __init__(self, kernel, cfg: AppServerConfig, vm, endorser,
                 orderer, primary_org_peers: set[str],
                 link_delay_us: int, metrics, listener_vm=None):
        self.kernel = kernel
        self.cfg = cfg
        self.vm = vm
        self.endorser = endorser
        self.orderer = orderer
        self.link = link_delay_us
        self.metrics = metrics
        self.listener_vm = listener_vm
        self.strategy = cfg.strategy
        wait_sources = list(cfg.event_sources)
        if self.strategy in (CommitStrategy.MSP_ANY, CommitStrategy.MSP_ALL):
            wait_sources = [p for p in wait_sources if p in primary_org_peers]
        self.wait_set = set(wait_sources)
        self.wait_all = self.strategy in (CommitStrategy.NETWORK_ALL,
                                          CommitStrategy.MSP_ALL)
        self.waits_for_commit = self.strategy not in (CommitStrategy.NULL,
                                                      CommitStrategy.ASYNC_SPLIT)
        self.request_work = cfg.request_overhead_us
        if cfg.legacy_mode:
            self.request_work += cfg.legacy_connection_us
        # workers: parallel serial queues, round-robin dispatch
        self.worker_busy = [False] * cfg.workers
        self.worker_q: list[deque] = [deque() for _ in range(cfg.workers)]
        self.rr = 0
        self.busy_workers = 0
        self.worker_busy_us = 0
        self._busy_mark = 0
        # tx_id -> [tx, remaining commit events]
        self.waiting: dict[int, list] = {}
        self.on_response = None          # wired to the workload generator
        self._listener_busy = False
        self._listener_q: deque = deque()

    # -- worker pool -------------------------------------------------------

    def _worker_account(self, delta: int) -> None:
        now = self.kernel.now
        self.worker_busy_us += self.busy_workers * (now - self._busy_mark)
        self._busy_mark = now
        self.busy_workers += delta

    def _enqueue_worker(self, idx: int, work_us: int, cb, arg) -> None:
        if self.worker_busy[idx]:
            self.worker_q[idx].append((work_us, cb, arg))
        else:
            self.worker_busy[idx] = True
            self._worker_account(1)
            self.vm.run(work_us, self._worker_done, (idx, cb, arg))

    def _worker_done(self, packed) -> None:
        idx, cb, arg = packed
        q = self.worker_q[idx]
        if q:
            work_us, ncb, narg = q.popleft()
            self.vm.run(work_us, self._worker_done, (idx, ncb, narg))
        else:
            self.worker_busy[idx] = False
            self._worker_account(-1)
        cb(arg)

    # -- request lifecycle ---------------------------------------------------

    def handle_request(self, tx) -> None:
        now = self.kernel.now
        tx.phase_stamps["dispatched"] = now
        tx.server_id = self.cfg.id
        idx = self.rr
        self.rr = (idx + 1) % self.cfg.workers
        self._enqueue_worker(idx, self.request_work, self._request_ready, tx)

    def _request_ready(self, tx) -> None:
        tx.phase_stamps["processed"] = self.kernel.now
        self.kernel.schedule(self.link, self.endorser.handle_proposal, tx)

    def handle_endorsement(self, tx) -> None:
        tx.phase_stamps["endorsed"] = self.kernel.now
        if tx.kind == "query":
            self._respond(tx)
            return
        self.kernel.schedule(self.link, self.orderer.submit, tx)

    def handle_orderer_ack(self, tx) -> None:
        tx.phase_stamps["acked"] = self.kernel.now
        if self.waits_for_commit and self.wait_set:
            need = len(self.wait_set) if self.wait_all else 1
            self.waiting[tx.tx_id] = [tx, need]
        else:
            self._respond(tx)

    def handle_commit_event(self, packed) -> None:
        peer_id, block = packed
        now = self.kernel.now
        if self.waits_for_commit and peer_id in self.wait_set:
            waiting = self.waiting
            for tx_id in block.tx_ids:
                entry = waiting.get(tx_id)
                if entry is None:
                    continue
                entry[1] -= 1
                if entry[1] == 0:
                    del waiting[tx_id]
                    tx = entry[0]
                    tx.advance_status(COMMITTED)
                    tx.phase_stamps["committed"] = now
                    self._respond(tx, commit_peer=peer_id)
        # Block-event processing load: every worker replays the block's
        # events; under NULL nothing subscribes, under ASYNC_SPLIT the
        # listener service takes the hit on its own VM.
        if self.strategy == CommitStrategy.NULL:
            return
        cost = self.cfg.block_event_cost_us_per_tx * block.tx_count
        if cost <= 0:
            return
        if self.strategy == CommitStrategy.ASYNC_SPLIT:
            if self.listener_vm is not None:
                self._listener_enqueue(cost)
            return
        for idx in range(self.cfg.workers):
            self._enqueue_worker(idx, cost, _noop, None)

    def _listener_enqueue(self, cost: int) -> None:
        if self._listener_busy:
            self._listener_q.append(cost)
        else:
            self._listener_busy = True
            self.listener_vm.run(cost, self._listener_done, None)

    def _listener_done(self, _arg) -> None:
        if self._listener_q:
            self.listener_vm.run(self._listener_q.popleft(),
                                 self._listener_done, None)
        else:
            self._listener_busy = False

    def _respond(self, tx, commit_peer: str | None = None) -> None:
        now = self.kernel.now
        tx.phase_stamps["responded"] = now
        tx.advance_status(RESPONDED)
        self.kernel.note("responded", tx.tx_id)
        self.metrics.record_response(tx, commit_peer)
        self.on_response(tx)

    def worker_busy_fraction(self, duration_us: int) -> float:
        if duration_us <= 0 or not self.cfg.workers:
            return 0.0
        # flush accounting up to now
        self._worker_account(0)
        return self.worker_busy_us / (self.cfg.workers * duration_us)


def _noop(_arg) -> None:
    return None
