"""Rules engine that automates the tuning methodology over finished runs.

The advisor never measures anything itself: it consumes a finished run
(the scenario echo plus the collected metrics) and walks the same staged
checklist an engineer would — static solution assessment, a health
check, component isolation via latency attribution, then parameter and
architecture tuning. Every action finding cites an entry in the bundled
guidance table, and where the fix is expressible as a scenario patch it
carries one that ``scenario.apply_changes`` accepts verbatim. Identical
inputs always produce identical findings.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .scenario import DATA_DIR, get_path

STAGES = ("assessment", "health", "isolation", "tuning", "architecture")
SEVERITIES = ("info", "warn", "action")
# Cheapest change class first: plain configuration, then adding
# instances, then bigger machines.
PATCH_ORDER = {"parameter": 0, "horizontal": 1, "vertical": 2}

POLICY_PATH = DATA_DIR / "advisor_policy.json"
CITATIONS_PATH = DATA_DIR / "citations.json"


class AdvisorError(Exception):
    """Unusable advisor input (missing artifacts, malformed metrics)."""


def load_policy(path: str | Path | None = None) -> dict:
    with open(path or POLICY_PATH, encoding="utf-8") as fh:
        return json.load(fh)


def load_citations(path: str | Path | None = None) -> dict[str, str]:
    with open(path or CITATIONS_PATH, encoding="utf-8") as fh:
        return json.load(fh)


@dataclass
class Finding:
    stage: str
    severity: str
    message: str
    citation: str
    recommendation: dict | None = None  # {"parameter", "current", "suggested"}
    patch: dict | None = None           # {"class", "changes": [{"path","value"}]}

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown finding stage {self.stage!r}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown finding severity {self.severity!r}")
        if self.severity == "action" and self.recommendation is None:
            raise ValueError("action findings must carry a recommendation")
        if self.patch is not None and self.patch["class"] not in PATCH_ORDER:
            raise ValueError(f"unknown patch class {self.patch['class']!r}")

    def to_dict(self) -> dict:
        doc = {"stage": self.stage, "severity": self.severity,
               "message": self.message, "citation": self.citation}
        if self.recommendation is not None:
            doc["recommendation"] = self.recommendation
        if self.patch is not None:
            doc["patch"] = self.patch
        return doc


@dataclass
class PhaseAttribution:
    """Fractions of mean end-to-end latency, one per pipeline stage.

    ``ordering`` folds in the block-cut wait and the consensus persist;
    ``commit`` is the committing peer's validate/ledger/storage/statedb
    pipeline; ``commit_wait`` is the residual wait around it (delivery
    links, the committer's queue, waiting out slower event sources).
    The five fractions sum to 1 up to per-phase rounding.
    """

    app_server: float
    proposal: float
    ordering: float
    commit: float
    commit_wait: float

    _LABELS = {
        "app_server": "app-server queueing/processing",
        "proposal": "endorsement proposal",
        "ordering": "ordering (cut wait + persist)",
        "commit": "commit pipeline",
        "commit_wait": "residual commit wait",
    }

    def fractions(self) -> dict[str, float]:
        return {"app_server": self.app_server, "proposal": self.proposal,
                "ordering": self.ordering, "commit": self.commit,
                "commit_wait": self.commit_wait}

    def total(self) -> float:
        return sum(self.fractions().values())

    def dominant(self) -> tuple[str, float]:
        name = max(self.fractions(), key=lambda k: self.fractions()[k])
        return name, self.fractions()[name]

    def to_dict(self) -> dict:
        return {k: round(v, 4) for k, v in self.fractions().items()}

    @classmethod
    def from_phases(cls, phases: dict) -> "PhaseAttribution":
        def total_us(name: str) -> int:
            entry = phases.get(name)
            return entry[0] * entry[1] if entry else 0

        if "request_latency" not in phases:
            raise AdvisorError(
                "metrics are missing the required metric 'request_latency'")
        latency = total_us("request_latency")
        if latency <= 0:
            raise AdvisorError("metrics contain no completed requests")
        cut_wait = total_us("ordering_cut_wait")
        persist = total_us("raft_persist_wait")
        execution = total_us("commit_execution")
        commit_wait = total_us("commit_wait")
        return cls(
            app_server=total_us("app_processing") / latency,
            proposal=total_us("proposal_phase") / latency,
            ordering=(total_us("ordering_phase") + cut_wait + persist) / latency,
            commit=execution / latency,
            commit_wait=(commit_wait - cut_wait - persist - execution) / latency,
        )


@dataclass
class RunView:
    """What the advisor needs to know about one finished run."""

    config: dict
    phases: dict[str, tuple[int, int]]  # metric -> (mean_us, count)
    throughput_tps: float
    blocks_cut: int
    block_fill_ratio: float
    vm_utilization: dict[str, float]
    server_busy: dict[str, float]

    @classmethod
    def from_result(cls, result) -> "RunView":
        m = result.metrics
        phases = {name: (s.mean, s.count)
                  for name, s in m.phase_stats().items()}
        _, bfr = m.block_fill_stats()
        return cls(config=result.config, phases=phases,
                   throughput_tps=result.throughput_tps,
                   blocks_cut=len(m.blocks),
                   block_fill_ratio=bfr / 1000.0,
                   vm_utilization=dict(result.vm_utilization),
                   server_busy=dict(result.server_busy))

    @classmethod
    def from_run_dir(cls, run_dir: str | Path) -> "RunView":
        run_dir = Path(run_dir)
        run_path = run_dir / "run.json"
        metrics_path = run_dir / "metrics.csv"
        for path in (run_path, metrics_path):
            if not path.exists():
                raise AdvisorError(f"{path} not found")
        doc = json.loads(run_path.read_text(encoding="utf-8"))
        config = doc.get("config")
        if not config:
            raise AdvisorError(f"{run_path} has no 'config' echo")

        phases: dict[str, tuple[int, int]] = {}
        throughput = 0.0
        with open(metrics_path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for col in ("metric", "unit", "mean", "count"):
                if col not in header:
                    raise AdvisorError(
                        f"{metrics_path} is missing required column {col!r}")
            for row in reader:
                if row["metric"] == "throughput":
                    throughput = float(row["mean"])
                    continue
                phases[row["metric"]] = (round(float(row["mean"]) * 1000),
                                         int(row["count"]))
        return cls(config=config, phases=phases, throughput_tps=throughput,
                   blocks_cut=int(doc.get("blocks_cut", 0)),
                   block_fill_ratio=float(doc.get("block_fill_ratio", 0.0)),
                   vm_utilization=doc.get("vm_utilization", {}),
                   server_busy=doc.get("server_worker_busy", {}))


# ---------------------------------------------------------------------------
# static assessment

def _unused_vms(config: dict) -> list[str]:
    used = {p["vm"] for p in config["peers"]}
    used.add(config["orderer"]["vm"])
    for s in config["app_servers"]:
        used.add(s["vm"])
        if s.get("listener_vm"):
            used.add(s["listener_vm"])
    return [v["id"] for v in config["hardware"]["vms"] if v["id"] not in used]


def _endorser_scaling_patch(config: dict) -> dict | None:
    """Promote spare peers to endorsers and spread the servers across
    them, one endorser per server where the peer count allows."""
    peers = config["peers"]
    servers = config["app_servers"]
    endorser_ids = [p["id"] for p in peers if p["endorser"]]
    changes = []
    for i, p in enumerate(peers):
        if len(endorser_ids) >= len(servers):
            break
        if not p["endorser"]:
            changes.append({"path": f"peers[{i}].endorser", "value": True})
            endorser_ids.append(p["id"])
    for i, s in enumerate(servers):
        target = endorser_ids[i % len(endorser_ids)]
        if s["endorser"] != target:
            changes.append({"path": f"app_servers[{i}].endorser",
                            "value": target})
    if not changes:
        return None
    return {"class": "horizontal", "changes": changes}


def assess(config: dict) -> list[Finding]:
    """Static review of the deployed shape; no metrics required."""
    findings: list[Finding] = []
    peers = config["peers"]
    servers = config["app_servers"]
    endorsers = [p for p in peers if p["endorser"]]

    if len(endorsers) < len(servers):
        findings.append(Finding(
            stage="architecture", severity="action",
            message=(f"{len(servers)} app servers share "
                     f"{len(endorsers)} endorsing peer(s); endorsement "
                     f"saturates before the app tier does"),
            citation="guide:endorser-scaling",
            recommendation={"parameter": "peers[*].endorser",
                            "current": len(endorsers),
                            "suggested": len(servers)},
            patch=_endorser_scaling_patch(config)))

    vm_of_peer = {p["id"]: p["vm"] for p in peers}
    for i, s in enumerate(servers):
        if vm_of_peer.get(s["endorser"]) != s["vm"]:
            continue
        free = _unused_vms(config)
        patch = None
        if free:
            patch = {"class": "parameter",
                     "changes": [{"path": f"app_servers[{i}].vm",
                                  "value": free[0]}]}
        findings.append(Finding(
            stage="assessment", severity="action" if patch else "warn",
            message=(f"app server {s['id']} shares VM {s['vm']} with its "
                     f"endorser {s['endorser']}"),
            citation="guide:placement-isolation",
            recommendation={"parameter": f"app_servers[{i}].vm",
                            "current": s["vm"],
                            "suggested": free[0] if free else
                            "a machine without the endorser"},
            patch=patch))

    endorser_ids = {p["id"] for p in endorsers}
    for s in servers:
        overlap = sorted(set(s["event_sources"]) & endorser_ids)
        if overlap:
            findings.append(Finding(
                stage="assessment", severity="warn",
                message=(f"app server {s['id']} listens for commit events "
                         f"on endorsing peer(s) {', '.join(overlap)}"),
                citation="guide:event-source-separation"))

    for i, s in enumerate(servers):
        if s["legacy_mode"]:
            findings.append(Finding(
                stage="health", severity="action",
                message=(f"app server {s['id']} opens a fresh connection "
                         f"per request (legacy mode)"),
                citation="guide:connection-churn",
                recommendation={"parameter": f"app_servers[{i}].legacy_mode",
                                "current": True, "suggested": False},
                patch={"class": "parameter",
                       "changes": [{"path": f"app_servers[{i}].legacy_mode",
                                    "value": False}]}))
    return findings


# ---------------------------------------------------------------------------
# metrics-driven diagnosis

def diagnose(view: RunView,
             policy: dict | None = None) -> tuple[PhaseAttribution, list[Finding]]:
    pol = policy or load_policy()
    attribution = PhaseAttribution.from_phases(view.phases)
    config = view.config
    findings: list[Finding] = []

    name, frac = attribution.dominant()
    findings.append(Finding(
        stage="isolation", severity="info",
        message=(f"latency attribution: "
                 + ", ".join(f"{k} {v:.0%}"
                             for k, v in attribution.fractions().items())
                 + f"; dominant: {PhaseAttribution._LABELS[name]}"),
        citation="guide:phase-attribution"))

    block_size = int(get_path(config, "channel.block_size"))
    bfr = view.block_fill_ratio
    if view.blocks_cut and bfr < pol["bfr_floor"]:
        suggested = max(1, round(block_size * bfr))
        findings.append(Finding(
            stage="tuning", severity="action",
            message=(f"block fill ratio {bfr:.2f} is below "
                     f"{pol['bfr_floor']:.2f}: blocks are cut by timeout, "
                     f"so block size/timeout are mismatched to the load"),
            citation="guide:block-fill-target",
            recommendation={"parameter": "channel.block_size",
                            "current": block_size, "suggested": suggested},
            patch={"class": "parameter",
                   "changes": [{"path": "channel.block_size",
                                "value": suggested}]}))
    elif (view.blocks_cut and bfr >= 0.999
          and attribution.commit >= pol["commit_dominance_share"]):
        findings.append(Finding(
            stage="tuning", severity="info",
            message=(f"every block is cut at the size limit and the commit "
                     f"pipeline takes {attribution.commit:.0%} of latency; "
                     f"a larger block would amortize per-block overhead"),
            citation="guide:block-size-amortization",
            recommendation={"parameter": "channel.block_size",
                            "current": block_size,
                            "suggested": block_size * 2}))

    commit = view.phases.get("commit_total")
    statedb = view.phases.get("statedb_batch_call")
    doc_idx = [i for i, p in enumerate(config["peers"])
               if p["statedb"]["backend"] == "doc_store"]
    if commit and statedb and commit[0] > 0 and doc_idx:
        share = statedb[0] / commit[0]
        if share > pol["statedb_share_ceiling"]:
            chunk = int(config["peers"][doc_idx[0]]
                        ["statedb"]["chunk_size_bytes"])
            preferred = pol["preferred_chunk_bytes"]
            if chunk < preferred:
                rec = {"parameter": "peers[*].statedb.chunk_size_bytes",
                       "current": chunk, "suggested": preferred}
                changes = [{"path": f"peers[{i}].statedb.chunk_size_bytes",
                            "value": preferred} for i in doc_idx]
            elif get_path(config, "workload.id_strategy") == "RANDOM":
                rec = {"parameter": "workload.id_strategy",
                       "current": "RANDOM",
                       "suggested": "MONOTONIC_TIMESTAMP"}
                changes = [{"path": "workload.id_strategy",
                            "value": "MONOTONIC_TIMESTAMP"}]
            else:
                rec = {"parameter": "peers[*].statedb.backend",
                       "current": "doc_store", "suggested": "embedded_kv"}
                changes = [{"path": f"peers[{i}].statedb.backend",
                            "value": "embedded_kv"} for i in doc_idx]
            findings.append(Finding(
                stage="tuning", severity="action",
                message=(f"the state database takes {share:.0%} of commit "
                         f"time on the document store"),
                citation="guide:statedb-tuning",
                recommendation=rec,
                patch={"class": "parameter", "changes": changes}))

    vcores_of = {v["id"]: int(v["vcores"])
                 for v in config["hardware"]["vms"]}
    for i, s in enumerate(config["app_servers"]):
        util = view.vm_utilization.get(s["vm"], 0.0)
        busy = view.server_busy.get(s["id"], 0.0)
        if max(util, busy) <= pol["utilization_ceiling"]:
            continue
        vcores = vcores_of[s["vm"]]
        workers = int(s["workers"])
        if workers < vcores:
            findings.append(Finding(
                stage="tuning", severity="action",
                message=(f"app server {s['id']} is saturated "
                         f"(VM {util:.0%}, workers {busy:.0%} busy) with "
                         f"{workers} workers on {vcores} vcores"),
                citation="guide:app-tier-scaling",
                recommendation={"parameter": f"app_servers[{i}].workers",
                                "current": workers, "suggested": vcores},
                patch={"class": "parameter",
                       "changes": [{"path": f"app_servers[{i}].workers",
                                    "value": vcores}]}))
        else:
            findings.append(Finding(
                stage="architecture", severity="action",
                message=(f"app server {s['id']} is saturated "
                         f"(VM {util:.0%}, workers {busy:.0%} busy) with "
                         f"workers already at the core count"),
                citation="guide:app-tier-scaling",
                recommendation={"parameter": "app_servers",
                                "current": len(config["app_servers"]),
                                "suggested": len(config["app_servers"]) + 1}))

    latency = view.phases.get("request_latency")
    commit_wait = view.phases.get("commit_wait")
    if latency and commit_wait and latency[0] * latency[1] > 0:
        share = (commit_wait[0] * commit_wait[1]) / (latency[0] * latency[1])
        waiting = [s["id"] for s in config["app_servers"]
                   if s["strategy"] not in ("NULL", "ASYNC_SPLIT")]
        if share > pol["commit_wait_share_ceiling"] and waiting:
            findings.append(Finding(
                stage="architecture", severity="info",
                message=(f"clients spend {share:.0%} of their latency "
                         f"waiting for commit confirmation; a "
                         f"fire-and-forget or split-listener strategy "
                         f"would reclaim it at the cost of confirmation"),
                citation="guide:commit-wait-tradeoff"))

    for i, p in enumerate(config["peers"]):
        pool = p["validator_pool_size"]
        vcores = vcores_of[p["vm"]]
        if pool is not None and int(pool) < vcores:
            findings.append(Finding(
                stage="tuning", severity="action",
                message=(f"peer {p['id']} validates with a pool of {pool} "
                         f"on {vcores} vcores"),
                citation="guide:validator-pool",
                recommendation={
                    "parameter": f"peers[{i}].validator_pool_size",
                    "current": int(pool), "suggested": vcores},
                patch={"class": "parameter",
                       "changes": [{
                           "path": f"peers[{i}].validator_pool_size",
                           "value": vcores}]}))

    return attribution, findings


def recommend_sweep(findings: list[Finding]) -> list[dict]:
    """Machine-applyable patches from the action findings, cheapest
    change class first (parameter < horizontal < vertical), stable
    within a class."""
    patches = [{"class": f.patch["class"], "changes": f.patch["changes"],
                "reason": f.message}
               for f in findings if f.severity == "action" and f.patch]
    patches.sort(key=lambda p: PATCH_ORDER[p["class"]])
    return patches


# ---------------------------------------------------------------------------
# entry points and report rendering

@dataclass
class AdvisorReport:
    attribution: PhaseAttribution
    findings: list[Finding]
    patches: list[dict]
    citations: dict[str, str] = field(repr=False, default_factory=dict)

    def findings_json_text(self) -> str:
        doc = {"attribution": self.attribution.to_dict(),
               "findings": [f.to_dict() for f in self.findings],
               "patches": self.patches}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def report_markdown_text(self) -> str:
        lines = ["# Tuning report", "", "## Latency attribution", ""]
        lines.append("| phase | fraction |")
        lines.append("| --- | --- |")
        for key, value in self.attribution.fractions().items():
            lines.append(f"| {PhaseAttribution._LABELS[key]} | {value:.1%} |")
        lines += ["", "## Findings", ""]
        any_findings = False
        for stage in STAGES:
            staged = [f for f in self.findings if f.stage == stage]
            if not staged:
                continue
            any_findings = True
            lines.append(f"### {stage}")
            lines.append("")
            for f in staged:
                lines.append(f"- **{f.severity}**: {f.message}.")
                guidance = self.citations.get(f.citation, f.citation)
                lines.append(f"  - {guidance}")
                if f.recommendation:
                    rec = f.recommendation
                    lines.append(f"  - `{rec['parameter']}`: "
                                 f"{rec['current']} -> {rec['suggested']}")
            lines.append("")
        if not any_findings:
            lines += ["nothing to report", ""]
        lines += ["## Suggested changes, cheapest first", ""]
        if self.patches:
            for n, patch in enumerate(self.patches, 1):
                lines.append(f"{n}. ({patch['class']}) {patch['reason']}:")
                for change in patch["changes"]:
                    lines.append(f"   - `{change['path']} = "
                                 f"{json.dumps(change['value'])}`")
        else:
            lines.append("none")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in (("findings.json", self.findings_json_text()),
                           ("report.md", self.report_markdown_text())):
            tmp = out / (name + ".tmp")
            with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, out / name)


def advise(view: RunView, policy: dict | None = None) -> AdvisorReport:
    citations = load_citations()
    findings = assess(view.config)
    attribution, diagnosed = diagnose(view, policy)
    findings.extend(diagnosed)
    for f in findings:
        if f.citation not in citations:
            raise AdvisorError(f"finding cites unknown key {f.citation!r}")
    return AdvisorReport(attribution=attribution, findings=findings,
                         patches=recommend_sweep(findings),
                         citations=citations)


def advise_run_dir(run_dir: str | Path,
                   policy: dict | None = None) -> AdvisorReport:
    return advise(RunView.from_run_dir(run_dir), policy)
