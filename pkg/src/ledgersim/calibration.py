"""Cost profiles and the measurement-fitting loop.

A profile is the full set of service-time constants for one hardware
generation, stored as JSON. Each constant carries a provenance tag:

  anchored  taken directly from measurements of the real system;
            the fit loop never moves it, it only reports the residual
  free      inferred; the fit loop may rescale it

Fitting is damped proportional coordinate descent: run the target
scenario, compare each phase's mean against its target, and scale the
phase's knobs by (target/measured)**0.5. Phase means are (near) linear
in their knobs, so a handful of rounds converges; the square root damps
oscillation when two phases share a bottleneck.
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .scenario import PROFILE_DIR, get_path, set_path

# phase name -> profile knobs that scale it (empty: emergent, report-only)
PHASE_KNOBS: dict[str, list[str]] = {
    "proposal_complete": ["peer.proposal_check_us", "peer.chaincode_exec_us",
                          "peer.endorse_sign_us"],
    "block_validate": ["peer.per_tx_vscc_us"],
    "ledger_processing": ["peer.per_tx_mvcc_us"],
    "commit_storage": ["peer.block_header_us", "peer.block_storage_per_kb_us"],
    "commit_statedb": ["peer.per_doc_statedb_prep_us"],
    "statedb_batch_call": ["statedb.doc_store.per_call_overhead_us",
                           "statedb.doc_store.per_doc_write_us",
                           "statedb.doc_store.per_node_append_us"],
    "raft_persist": ["orderer.persist_us"],
    "orderer_validate": ["orderer.validate_us"],
    "orderer_enqueue": ["orderer.enqueue_us"],
    "block_cut": [],
}

MAX_STEP = 4.0          # clamp per-round knob scaling
ANCHOR_TOLERANCE = 0.50  # anchored phase off by more than this: model is wrong


class Profile:
    """Nested dict of cost constants plus per-knob provenance."""

    GROUPS = ("peer", "orderer", "appserver", "statedb")

    def __init__(self, doc: dict):
        self.name = doc.get("name", "unnamed")
        self.description = doc.get("description", "")
        self.doc = {g: copy.deepcopy(doc.get(g, {})) for g in self.GROUPS}
        self.provenance = dict(doc.get("provenance", {}))

    @classmethod
    def load(cls, path: str | Path) -> "Profile":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    @classmethod
    def bundled(cls, name: str) -> "Profile":
        p = PROFILE_DIR / f"{name}.json"
        if not p.exists():
            raise FileNotFoundError(f"no bundled profile named {name!r}")
        return cls.load(p)

    @staticmethod
    def bundled_names() -> list[str]:
        return sorted(p.stem for p in PROFILE_DIR.glob("*.json"))

    def to_dict(self) -> dict:
        out = {"name": self.name, "description": self.description}
        out.update(copy.deepcopy(self.doc))
        out["provenance"] = dict(self.provenance)
        return out

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def copy(self) -> "Profile":
        return Profile(self.to_dict())

    def get(self, key: str) -> int:
        return get_path(self.doc, key)

    def set(self, key: str, value: int) -> None:
        set_path(self.doc, key, value)

    def is_anchored(self, key: str) -> bool:
        return self.provenance.get(key, "free") == "anchored"


# ---------------------------------------------------------------------------
# fitting

@dataclass
class PhaseFit:
    scenario: str
    phase: str
    target_us: int
    measured_us: int
    anchored: bool

    @property
    def residual(self) -> float:
        if self.target_us <= 0:
            return 0.0
        return abs(self.measured_us - self.target_us) / self.target_us


@dataclass
class FitReport:
    profile: Profile
    rounds: int
    fits: list[PhaseFit] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(f.residual <= ANCHOR_TOLERANCE for f in self.fits
                   if f.anchored) and all(
            f.residual <= 0.30 for f in self.fits if not f.anchored)

    def worst(self) -> PhaseFit | None:
        return max(self.fits, key=lambda f: f.residual, default=None)


def load_targets(path: str | Path) -> list[tuple[str, str, int]]:
    """CSV rows (scenario, phase, mean_ms) -> [(scenario, phase, us)]."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append((row["scenario"], row["phase"],
                         int(float(row["mean_ms"]) * 1000)))
    if not rows:
        raise ValueError(f"no calibration targets in {path}")
    return rows


def calibrate(targets: list[tuple[str, str, int]], profile: Profile,
              rounds: int = 6, scenario_loader=None) -> FitReport:
    """Fit the profile's free knobs to the target phase means."""
    from . import harness  # local import: harness builds on this module
    from .scenario import load_bundled

    loader = scenario_loader or load_bundled
    prof = profile.copy()
    by_scenario: dict[str, list[tuple[str, int]]] = {}
    for scen, phase, target in targets:
        if phase not in PHASE_KNOBS:
            raise ValueError(f"no such calibration phase {phase!r}")
        by_scenario.setdefault(scen, []).append((phase, target))

    scen_docs = {name: loader(name) for name in by_scenario}

    def measure() -> dict[tuple[str, str], int]:
        out = {}
        for name, phase_targets in by_scenario.items():
            result = harness.run_scenario(scen_docs[name], prof)
            stats = result.metrics.phase_stats()
            for phase, _tgt in phase_targets:
                ps = stats.get(phase)
                out[(name, phase)] = ps.mean if ps else 0
        return out

    for _ in range(rounds):
        measured = measure()
        moved = False
        for scen, phase_targets in by_scenario.items():
            for phase, target in phase_targets:
                knobs = [k for k in PHASE_KNOBS[phase]
                         if not prof.is_anchored(k)]
                got = measured[(scen, phase)]
                if not knobs or got <= 0 or target <= 0:
                    continue
                factor = (target / got) ** 0.5
                factor = min(MAX_STEP, max(1.0 / MAX_STEP, factor))
                if abs(factor - 1.0) < 0.005:
                    continue
                for knob in knobs:
                    prof.set(knob, max(1, int(round(prof.get(knob) * factor))))
                moved = True
        if not moved:
            break

    final = measure()
    fits = [PhaseFit(scen, phase, target, final[(scen, phase)],
                     anchored=all(prof.is_anchored(k)
                                  for k in PHASE_KNOBS[phase])
                     or not PHASE_KNOBS[phase])
            for scen, phase_targets in by_scenario.items()
            for phase, target in phase_targets]
    return FitReport(profile=prof, rounds=rounds, fits=fits)
