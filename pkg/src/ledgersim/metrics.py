"""Run instrumentation: phase samples, block ledger, CSV/JSON emission.

All samples are integer microseconds in append-only int64 arrays; the
derived statistics (nearest-rank percentiles, floor means) and the
formatted outputs are computed with integer arithmetic only, so a run's
artifacts are bit-identical across platforms for the same event stream.

Per-request latency is attributed to four contiguous buckets that
partition [created, responded] exactly:

    app_processing   created   -> processed  (worker queue + overhead)
    proposal_phase   processed -> endorsed   (endorsement round trip)
    ordering_phase   endorsed  -> acked      (ordering round trip)
    commit_wait      acked     -> responded  (strategy-dependent wait)

Component code contributes additional named phase series (vscc waves,
storage, statedb batches, block cut intervals, ...) via phase().
"""

from __future__ import annotations

import json
import os
from array import array


def fmt_ms(us: int) -> str:
    """Microseconds -> milliseconds with 3 decimals, integer math."""
    q, r = divmod(us, 1000)
    return f"{q}.{r:03d}"


def fmt_milli(value_milli: int) -> str:
    q, r = divmod(value_milli, 1000)
    return f"{q}.{r:03d}"


def percentile(sorted_samples, pct: int) -> int:
    """Nearest-rank percentile of a pre-sorted sequence."""
    n = len(sorted_samples)
    if not n:
        return 0
    rank = (pct * n + 99) // 100      # ceil(pct/100 * n)
    return sorted_samples[max(rank, 1) - 1]


class PhaseStats:
    __slots__ = ("name", "count", "total", "mean", "p50", "p95", "p99", "vmax")

    def __init__(self, name: str, samples) -> None:
        self.name = name
        self.count = len(samples)
        self.total = sum(samples)
        srt = sorted(samples)
        self.mean = self.total // self.count if self.count else 0
        self.p50 = percentile(srt, 50)
        self.p95 = percentile(srt, 95)
        self.p99 = percentile(srt, 99)
        self.vmax = srt[-1] if srt else 0

    def row(self):
        return [self.name, "ms", fmt_ms(self.mean), fmt_ms(self.p50),
                fmt_ms(self.p95), fmt_ms(self.p99), str(self.count)]


class MetricsCollector:
    def __init__(self) -> None:
        self.samples: dict[str, array] = {}
        self.issued = 0
        self.responded = 0
        self.error_count = 0
        self.responded_by_kind = {"insert": 0, "query": 0}
        self.first_issue_at: int | None = None
        self.last_response_at = 0
        # concurrency accounting for the Little's-law cross-check
        self._inflight = 0
        self._flight_mark = 0
        self.concurrency_integral = 0   # integral of in-flight count, tx*us
        self.blocks: list = []                      # Block objects, cut order
        self.block_size = 0                         # set by the harness
        self._commit_open: dict = {}                # (peer, num) -> start
        self.commit_spans: dict[tuple, tuple] = {}  # (peer, num) -> (start, end)

    # -- ingestion (hot paths) --------------------------------------------

    def phase(self, name: str, us: int) -> None:
        arr = self.samples.get(name)
        if arr is None:
            arr = self.samples[name] = array("q")
        arr.append(us)

    def _flight(self, now: int, delta: int) -> None:
        self.concurrency_integral += self._inflight * (now - self._flight_mark)
        self._flight_mark = now
        self._inflight += delta

    def record_issue(self, tx) -> None:
        self.issued += 1
        self._flight(tx.created_at, 1)
        if self.first_issue_at is None:
            self.first_issue_at = tx.created_at

    def record_response(self, tx, commit_peer=None) -> None:
        self.responded += 1
        self.responded_by_kind[tx.kind] += 1
        stamps = tx.phase_stamps
        created = tx.created_at
        responded = stamps["responded"]
        self._flight(responded, -1)
        if responded > self.last_response_at:
            self.last_response_at = responded
        processed = stamps.get("processed", created)
        endorsed = stamps.get("endorsed", processed)
        acked = stamps.get("acked", endorsed)
        self.phase("request_latency", responded - created)
        self.phase(f"{tx.kind}_latency", responded - created)
        self.phase("app_processing", processed - created)
        self.phase("proposal_phase", endorsed - processed)
        self.phase("ordering_phase", acked - endorsed)
        self.phase("commit_wait", responded - acked)
        # Finer split of the commit wait, when the run produced the stamps
        # (fire-and-forget strategies respond before the block exists).
        cut = stamps.get("cut")
        persisted = stamps.get("persisted")
        if cut is not None and persisted is not None and cut >= acked:
            self.phase("ordering_cut_wait", cut - acked)
            self.phase("raft_persist_wait", persisted - cut)
            span = self.commit_spans.get((commit_peer, tx.block_num))
            if span is not None:
                self.phase("commit_execution", span[1] - span[0])

    def block_cut(self, block) -> None:
        self.blocks.append(block)

    def block_commit_start(self, block_num: int, peer_id: str,
                           now: int, queue_wait: int) -> None:
        self._commit_open[(peer_id, block_num)] = now
        self.phase("commit_queue_wait", queue_wait)

    def block_commit_done(self, block_num: int, peer_id: str, now: int) -> None:
        start = self._commit_open.pop((peer_id, block_num))
        self.commit_spans[(peer_id, block_num)] = (start, now)

    # -- summary -------------------------------------------------------------

    def duration_us(self) -> int:
        if self.first_issue_at is None:
            return 0
        return self.last_response_at - self.first_issue_at

    def throughput_milli_tps(self, kind: str | None = None) -> int:
        dur = self.duration_us()
        if dur <= 0:
            return 0
        n = self.responded if kind is None else self.responded_by_kind[kind]
        return n * 1_000_000_000 // dur

    def throughput_tps(self, kind: str | None = None) -> float:
        return self.throughput_milli_tps(kind) / 1000.0

    def phase_stats(self) -> dict[str, PhaseStats]:
        return {name: PhaseStats(name, arr)
                for name, arr in sorted(self.samples.items())}

    def mean_latency_us(self) -> int:
        arr = self.samples.get("request_latency")
        if not arr:
            return 0
        return sum(arr) // len(arr)

    def mean_concurrency(self) -> float:
        dur = self.duration_us()
        return self.concurrency_integral / dur if dur > 0 else 0.0

    def block_fill_stats(self):
        """(mean_fill_milli, bfr_milli): fill in thousandths of a block."""
        if not self.blocks or not self.block_size:
            return 0, 0
        fills = [b.tx_count * 1000 // self.block_size for b in self.blocks]
        mean_fill = sum(fills) // len(fills)
        return mean_fill, mean_fill

    def cut_intervals_us(self) -> list[int]:
        return [b.cut_at - b.opened_at for b in self.blocks]

    def summary(self) -> dict:
        stats = self.phase_stats()
        mean_fill, bfr = self.block_fill_stats()
        out = {
            "issued": self.issued,
            "responded": self.responded,
            "error_count": self.error_count,
            "responded_insert": self.responded_by_kind["insert"],
            "responded_query": self.responded_by_kind["query"],
            "mean_concurrency": round(self.mean_concurrency(), 3),
            "duration_us": self.duration_us(),
            "throughput_tps": fmt_milli(self.throughput_milli_tps()),
            "mean_latency_ms": fmt_ms(self.mean_latency_us()),
            "blocks_cut": len(self.blocks),
            "block_fill_mean": fmt_milli(mean_fill),
            "block_fill_ratio": fmt_milli(bfr),
            "phases": {name: {"mean_ms": fmt_ms(s.mean),
                              "p95_ms": fmt_ms(s.p95),
                              "count": s.count}
                       for name, s in stats.items()},
        }
        return out

    # -- artifacts -------------------------------------------------------------

    def metrics_csv_text(self) -> str:
        rows = [["metric", "unit", "mean", "p50", "p95", "p99", "count"]]
        for _, stats in sorted(self.phase_stats().items()):
            rows.append(stats.row())
        rows.append(["throughput", "tps",
                     fmt_milli(self.throughput_milli_tps()), "", "", "",
                     str(self.responded)])
        return "\n".join(",".join(r) for r in rows) + "\n"

    def blocks_csv_text(self) -> str:
        rows = [["block_num", "opened_at_us", "cut_at_us", "tx_count",
                 "cut_reason", "byte_size", "fill"]]
        size = self.block_size
        for b in self.blocks:
            fill = fmt_milli(b.tx_count * 1000 // size) if size else "0.000"
            rows.append([str(b.block_num), str(b.opened_at), str(b.cut_at),
                         str(b.tx_count), b.cut_reason, str(b.byte_size),
                         fill])
        return "\n".join(",".join(r) for r in rows) + "\n"

    def run_json_text(self, extra: dict | None = None) -> str:
        doc = self.summary()
        if extra:
            doc.update(extra)
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def write_metrics_csv(self, path: str) -> None:
        _atomic_write(path, self.metrics_csv_text())

    def write_blocks_csv(self, path: str) -> None:
        _atomic_write(path, self.blocks_csv_text())

    def write_run_json(self, path: str, extra: dict | None = None) -> None:
        _atomic_write(path, self.run_json_text(extra))


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
