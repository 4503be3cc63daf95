"""Workload generators: closed-loop client threads and open-loop arrivals.

Closed loop mirrors the measured system's load driver: `clients` driver
instances, each running `threads_per_client` threads, each thread
issuing `loops` requests one at a time (next request only after the
previous response, plus optional think time). Threads bind to app
servers round-robin by thread index. Total requests = clients x
threads_per_client x loops, exactly.

Open loop: requests arrive at a fixed rate regardless of completions,
round-robin across servers; arrival i fires at i * 1e6 // rate_tps.
Useful for driving the batching logic at a known rate.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import (AgreementDoc, IdStrategy, MonotonicIdGen, Transaction,
                    tx_wire_size)


@dataclass
class WorkloadSpec:
    mode: str = "closed"               # "closed" | "open"
    clients: int = 1
    threads_per_client: int = 40
    loops: int = 25
    think_time_us: int = 0
    rate_tps: int = 0                  # open mode only
    total_requests: int = 0            # open mode only
    kind: str = "insert"               # "insert" | "query"
    query_fraction: float = 0.0        # mixed workloads; 1.0 == all queries
    result_count: int = 1
    payload_bytes: int = 2730
    metadata_bytes: int = 402
    id_strategy: IdStrategy = IdStrategy.RANDOM
    ramp_us: int = 0

    @property
    def threads(self) -> int:
        return self.clients * self.threads_per_client

    @property
    def planned_requests(self) -> int:
        if self.mode == "open":
            return self.total_requests
        return self.threads * self.loops


class Workload:
    """Drives the servers; owns transaction creation and ids."""

    def __init__(self, kernel, spec: WorkloadSpec, servers, metrics):
        self.kernel = kernel
        self.spec = spec
        self.servers = list(servers)
        self.metrics = metrics
        self.issued = 0
        self.responded = 0
        self.next_tx_id = 1
        self.idgen = MonotonicIdGen()
        self.id_rng = kernel.rng("workload-ids")
        self.mix_rng = kernel.rng("workload-mix")
        for s in self.servers:
            s.on_response = self._on_response
        n = spec.threads if spec.mode == "closed" else spec.clients
        self.loops_left = [spec.loops] * n
        self._thread_server = [self.servers[i % len(self.servers)]
                               for i in range(n)]

    # -- setup -------------------------------------------------------------

    def start(self) -> None:
        spec = self.spec
        if spec.mode == "open":
            if spec.rate_tps <= 0:
                raise ValueError("open workload needs rate_tps > 0")
            if spec.total_requests > 0:
                self.kernel.schedule_at(0, self._open_arrival, 0)
            return
        for i in range(spec.threads):
            start_at = i * spec.ramp_us // spec.threads if spec.ramp_us else 0
            self.kernel.schedule_at(start_at, self._issue_for_thread, i)

    # -- transaction factory -------------------------------------------------

    def _make_tx(self, thread: int):
        spec = self.spec
        if spec.id_strategy is IdStrategy.MONOTONIC_TIMESTAMP:
            doc_id = self.idgen.next(self.kernel.now)
        else:
            doc_id = self.id_rng.hex128()
        doc = AgreementDoc(doc_id, spec.payload_bytes, spec.metadata_bytes)
        kind = spec.kind
        if spec.query_fraction > 0.0:
            threshold = int(spec.query_fraction * 1_000_000)
            roll = self.mix_rng.next_u64() % 1_000_000
            kind = "query" if roll < threshold else "insert"
        tx = Transaction(self.next_tx_id, doc, kind, self.kernel.now,
                         result_count=spec.result_count,
                         wire_size=tx_wire_size(doc))
        tx.client_thread = thread
        self.next_tx_id += 1
        self.issued += 1
        self.metrics.record_issue(tx)
        return tx

    # -- closed loop ---------------------------------------------------------

    def _issue_for_thread(self, thread: int) -> None:
        if self.loops_left[thread] <= 0:
            return
        self.loops_left[thread] -= 1
        tx = self._make_tx(thread)
        self._thread_server[thread].handle_request(tx)

    def _on_response(self, tx) -> None:
        self.responded += 1
        if self.spec.mode == "open":
            return
        think = self.spec.think_time_us
        if think > 0:
            self.kernel.schedule(think, self._issue_for_thread,
                                 tx.client_thread)
        else:
            self._issue_for_thread(tx.client_thread)

    # -- open loop -----------------------------------------------------------

    def _open_arrival(self, i: int) -> None:
        spec = self.spec
        tx = self._make_tx(i % spec.clients)
        self.servers[i % len(self.servers)].handle_request(tx)
        nxt = i + 1
        if nxt >= spec.total_requests:
            return
        fire_at = nxt * 1_000_000 // spec.rate_tps
        self.kernel.schedule_at(fire_at, self._open_arrival, nxt)
