"""Build a runnable system from (scenario, profile) and drive it.

The harness owns all cross-component wiring: shared state databases for
identically configured peers, reply routing from peers and orderer back
to the issuing app server, and commit-event subscriptions. It returns a
RunResult whose artifacts (metrics.csv / blocks.csv / run.json) are
plain strings, so determinism checks can compare bytes without touching
the filesystem.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .appserver import AppServer, AppServerConfig
from .calibration import Profile
from .engine import Kernel, LparSpec, SimulationError, Topology, VmSpec
from .metrics import MetricsCollector, fmt_milli, fmt_ms
from .model import CommitStrategy, IdStrategy
from .orderer import OrdererConfig, OrderingService
from .peer import Peer, PeerConfig, PeerCostModel
from .scenario import apply_changes, load_bundled, load_scenario
from .statedb import DocStoreCosts, EmbeddedKvCosts, RwLock, StateDb
from .workload import Workload, WorkloadSpec

SWEEP_MAX_RUNS = 256


@dataclass
class RunResult:
    scenario_name: str
    seed: int
    metrics: MetricsCollector
    duration_us: int
    vm_utilization: dict[str, float]
    peer_commits: dict[str, tuple[int, int]]   # peer -> (fnv hash, tx count)
    server_busy: dict[str, float]
    config: dict = field(repr=False, default_factory=dict)
    sim: "Sim" = field(repr=False, default=None)

    @property
    def throughput_tps(self) -> float:
        return self.metrics.throughput_tps()

    @property
    def mean_latency_us(self) -> int:
        return self.metrics.mean_latency_us()

    def phase_mean_us(self, name: str) -> int:
        arr = self.metrics.samples.get(name)
        return sum(arr) // len(arr) if arr else 0

    def artifacts(self) -> dict[str, str]:
        extra = {
            "scenario": self.scenario_name,
            "seed": self.seed,
            "vm_utilization": {k: round(v, 6)
                               for k, v in sorted(self.vm_utilization.items())},
            "server_worker_busy": {k: round(v, 6)
                                   for k, v in sorted(self.server_busy.items())},
            "peer_commits": {k: {"state_hash": f"{h:016x}", "tx_count": n}
                             for k, (h, n) in sorted(self.peer_commits.items())},
            "config": self.config,
        }
        return {
            "metrics.csv": self.metrics.metrics_csv_text(),
            "blocks.csv": self.metrics.blocks_csv_text(),
            "run.json": self.metrics.run_json_text(extra),
        }

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, text in sorted(self.artifacts().items()):
            h.update(name.encode())
            h.update(b"\0")
            h.update(text.encode())
        return h.hexdigest()

    def write_artifacts(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in self.artifacts().items():
            tmp = out / (name + ".tmp")
            with open(tmp, "w", encoding="ascii", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, out / name)


def resolve_profile(ref: str) -> Profile:
    """Bundled profile name, or a path to a profile JSON file."""
    if os.path.exists(ref):
        return Profile.load(ref)
    return Profile.bundled(ref)


class Sim:
    """One wired system, ready to run once."""

    def __init__(self, scenario: dict, profile: Profile | None = None,
                 seed: int | None = None):
        self.scenario = scenario
        if profile is None:
            profile = resolve_profile(scenario["profile"])
        self.profile = profile
        self.seed = scenario["seed"] if seed is None else seed

        hw = scenario["hardware"]
        lpars = tuple(LparSpec(lp["id"], int(lp["physical_cores"]))
                      for lp in hw["lpars"])
        vms = tuple(VmSpec(vm["id"], vm["lpar"], int(vm["vcores"]),
                           int(vm.get("memory_gb", 16)))
                    for vm in hw["vms"])
        placements: dict[str, str] = {}
        for p in scenario["peers"]:
            placements[p["id"]] = p["vm"]
        placements["orderer"] = scenario["orderer"]["vm"]
        for s in scenario["app_servers"]:
            placements[s["id"]] = s["vm"]
            if s.get("listener_vm"):
                placements[s["id"] + "-listener"] = s["listener_vm"]
        topology = Topology(lpars, vms, placements)
        self.kernel = Kernel(topology, seed=self.seed,
                             max_sim_time_us=int(scenario["max_sim_us"]))

        self.metrics = MetricsCollector()
        self.metrics.block_size = int(scenario["channel"]["block_size"])
        link = int(scenario["network"]["link_delay_us"])

        # State databases: identically configured peers share one instance
        # (same blocks, same order => identical tree evolution and cost).
        doc_costs = DocStoreCosts(**profile.doc["statedb"]["doc_store"])
        kv_costs = EmbeddedKvCosts(**profile.doc["statedb"]["embedded_kv"])
        statedbs: dict[tuple, StateDb] = {}
        peer_costs = PeerCostModel(**profile.doc["peer"])

        self.peers: dict[str, Peer] = {}
        for pdoc in scenario["peers"]:
            db = pdoc["statedb"]
            key = (db["backend"], int(db["chunk_size_bytes"]),
                   int(db["cache_entries"]))
            statedb = statedbs.get(key)
            if statedb is None:
                statedb = statedbs[key] = StateDb(
                    db["backend"], chunk_size_bytes=int(db["chunk_size_bytes"]),
                    doc_store_costs=doc_costs, embedded_costs=kv_costs,
                    cache_entries=int(db["cache_entries"]))
            cfg = PeerConfig(
                id=pdoc["id"], org=pdoc["org"], endorser=bool(pdoc["endorser"]),
                event_source=bool(pdoc["event_source"]),
                validator_pool_size=pdoc["validator_pool_size"],
                scheduler_core_cap=pdoc["scheduler_core_cap"],
                validation_channel=pdoc["validation_channel"])
            self.peers[cfg.id] = Peer(self.kernel, cfg, peer_costs,
                                      self.kernel.vms[pdoc["vm"]], statedb,
                                      RwLock(), link, self.metrics)
        self.statedbs = statedbs

        och = scenario["channel"]
        odoc = scenario["orderer"]
        ocfg = OrdererConfig(
            cluster_size=int(odoc["cluster_size"]),
            block_size=int(och["block_size"]),
            batch_timeout_us=int(och["batch_timeout_us"]),
            channel_id=och["id"], submit_target=odoc["submit_target"],
            **profile.doc["orderer"])
        committers = [self.peers[p["id"]] for p in scenario["peers"]]
        self.orderer = OrderingService(self.kernel, ocfg,
                                       self.kernel.vms[odoc["vm"]],
                                       committers, link, self.metrics)

        self.servers: dict[str, AppServer] = {}
        for sdoc in scenario["app_servers"]:
            endorser = self.peers[sdoc["endorser"]]
            org = sdoc.get("org") or endorser.cfg.org
            primary = {p.cfg.id for p in self.peers.values() if p.cfg.org == org}
            scfg = AppServerConfig(
                id=sdoc["id"], workers=int(sdoc["workers"]),
                mapped_endorser=sdoc["endorser"],
                event_sources=list(sdoc["event_sources"]),
                strategy=CommitStrategy(sdoc["strategy"]),
                legacy_mode=bool(sdoc["legacy_mode"]),
                listener_vm=sdoc.get("listener_vm"),
                **profile.doc["appserver"])
            listener_vm = (self.kernel.vms[sdoc["listener_vm"]]
                           if sdoc.get("listener_vm") else None)
            server = AppServer(self.kernel, scfg, self.kernel.vms[sdoc["vm"]],
                               endorser, self.orderer, primary, link,
                               self.metrics, listener_vm)
            self.servers[scfg.id] = server

        # reply routing and commit-event subscriptions
        for peer in self.peers.values():
            peer.servers = self.servers
        self.orderer.servers = self.servers
        for server in self.servers.values():
            if server.strategy is CommitStrategy.NULL:
                continue
            for pid in server.cfg.event_sources:
                peer = self.peers[pid]
                if peer.cfg.event_source:
                    peer.subscribers.append(server)

        wdoc = scenario["workload"]
        wspec = WorkloadSpec(
            mode=wdoc["mode"], clients=int(wdoc["clients"]),
            threads_per_client=int(wdoc["threads_per_client"]),
            loops=int(wdoc["loops"]),
            think_time_us=int(wdoc["think_time_us"]),
            rate_tps=int(wdoc["rate_tps"]),
            total_requests=int(wdoc["total_requests"]), kind=wdoc["kind"],
            query_fraction=float(wdoc["query_fraction"]),
            result_count=int(wdoc["result_count"]),
            payload_bytes=int(wdoc["payload_bytes"]),
            metadata_bytes=int(wdoc["metadata_bytes"]),
            id_strategy=IdStrategy(wdoc["id_strategy"]),
            ramp_us=int(wdoc["ramp_us"]))
        self.workload = Workload(self.kernel, wspec,
                                 list(self.servers.values()), self.metrics)
        prefill = int(wdoc.get("prefill_docs", 0))
        if prefill:
            for statedb in statedbs.values():
                statedb.prefill(prefill)

    def run(self) -> RunResult:
        self.workload.start()
        self.kernel.run()
        duration = self.metrics.duration_us()
        peer_commits = {pid: (p.committed_hash, p.committed_txs)
                        for pid, p in self.peers.items()}
        states = set(peer_commits.values())
        if len(states) > 1:
            raise SimulationError(
                f"peers diverged after replay: {sorted(peer_commits.items())}")
        return RunResult(
            scenario_name=self.scenario["name"], seed=self.seed,
            metrics=self.metrics, duration_us=duration,
            vm_utilization={vid: vm.utilization(duration)
                            for vid, vm in self.kernel.vms.items()},
            peer_commits=peer_commits,
            server_busy={sid: s.worker_busy_fraction(duration)
                         for sid, s in self.servers.items()},
            config=self.scenario,
            sim=self)


def run_scenario(scenario: dict, profile: Profile | None = None,
                 seed: int | None = None) -> RunResult:
    return Sim(scenario, profile, seed=seed).run()


def load_any_scenario(name_or_path: str) -> dict:
    """Bundled scenario name, or a path to a scenario JSON file."""
    if os.path.exists(name_or_path):
        return load_scenario(name_or_path)
    return load_bundled(name_or_path)


# ---------------------------------------------------------------------------
# sweeps

SUMMARY_COLUMNS = ["run_id", "throughput_tps", "mean_latency_ms",
                   "p95_latency_ms", "blocks_cut", "block_fill_ratio",
                   "commit_total_mean_ms", "responded"]


def expand_sweep(sweep: dict) -> list[dict]:
    """Cross product of the sweep's axes -> list of {path: value} rows.
    No axes means a single unmodified run."""
    axes = sweep.get("axes") or []
    rows = [{}]
    for axis in axes:
        path, values = axis["path"], axis["values"]
        if not values:
            raise ValueError(f"sweep axis {path!r} has no values")
        rows = [dict(r, **{path: v}) for r in rows for v in values]
    if len(rows) > SWEEP_MAX_RUNS:
        raise ValueError(
            f"sweep expands to {len(rows)} runs (max {SWEEP_MAX_RUNS})")
    return rows


def _sweep_worker(args) -> list[str]:
    run_id, scen_doc, prof_doc, axis_values, out_dir = args
    result = run_scenario(scen_doc, Profile(prof_doc))
    if out_dir:
        result.write_artifacts(Path(out_dir) / run_id)
    m = result.metrics
    stats = m.phase_stats()
    lat = stats.get("request_latency")
    commit = stats.get("commit_total")
    _, bfr = m.block_fill_stats()
    row = [run_id]
    row.extend(str(axis_values[k]) for k in sorted(axis_values))
    row.extend([
        fmt_milli(m.throughput_milli_tps()),
        fmt_ms(lat.mean if lat else 0),
        fmt_ms(lat.p95 if lat else 0),
        str(len(m.blocks)),
        fmt_milli(bfr),
        fmt_ms(commit.mean if commit else 0),
        str(m.responded),
    ])
    return row


def run_sweep(sweep: dict, base_scenario: dict, profile: Profile,
              out_dir: str | Path | None = None, jobs: int = 1) -> list[list[str]]:
    """Run the sweep; returns summary rows (header first), ordered by run id."""
    rows = expand_sweep(sweep)
    axis_paths = sorted({p for r in rows for p in r})
    header = (["run_id"] + axis_paths + SUMMARY_COLUMNS[1:])
    width = len(str(len(rows) - 1))
    tasks = []
    for i, axis_values in enumerate(rows):
        changes = [{"path": p, "value": v} for p, v in axis_values.items()]
        scen = apply_changes(base_scenario, changes)
        run_id = f"run_{i:0{width}d}"
        tasks.append((run_id, scen, profile.to_dict(), axis_values,
                      str(out_dir) if out_dir else None))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out_rows = list(pool.map(_sweep_worker, tasks))
    else:
        out_rows = [_sweep_worker(t) for t in tasks]
    summary = [header] + out_rows
    if out_dir:
        path = Path(out_dir) / "summary.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = str(path) + ".tmp"
        with open(tmp, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(",".join(r) for r in summary) + "\n")
        os.replace(tmp, path)
    return summary


def load_sweep(path: str | Path) -> dict:
    """Sweep spec: {"scenario": bundled name or file path, "axes": [...]}."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("scenario", "axes"):
        if key not in doc:
            raise ValueError(f"{path}: sweep file needs a {key!r} field")
    return doc
