"""Deterministic discrete-event simulator for permissioned-ledger stacks.

The pipeline under simulation: closed- or open-loop clients drive app
servers, which collect endorsements from peers, submit to a Raft
ordering service, and wait out block commit on the peers according to a
commit-seen strategy. Every run is reproducible bit-for-bit from
(scenario, seed).
"""

from .advisor import AdvisorError, AdvisorReport, Finding, PhaseAttribution, RunView, advise, advise_run_dir
from .calibration import FitReport, Profile, calibrate, load_targets
from .engine import Kernel, Rng, SimulationError, Topology
from .harness import RunResult, Sim, expand_sweep, load_sweep, resolve_profile, run_scenario, run_sweep
from .scenario import (
    ScenarioError,
    apply_changes,
    bundled_scenario_path,
    bundled_scenarios,
    load_bundled,
    load_scenario,
    validate_scenario,
)

__all__ = [
    "AdvisorError",
    "AdvisorReport",
    "Finding",
    "FitReport",
    "Kernel",
    "PhaseAttribution",
    "Profile",
    "Rng",
    "RunResult",
    "RunView",
    "ScenarioError",
    "Sim",
    "SimulationError",
    "Topology",
    "advise",
    "advise_run_dir",
    "apply_changes",
    "bundled_scenario_path",
    "bundled_scenarios",
    "calibrate",
    "expand_sweep",
    "load_bundled",
    "load_scenario",
    "load_sweep",
    "load_targets",
    "resolve_profile",
    "run_scenario",
    "run_sweep",
    "validate_scenario",
]

__version__ = "0.1.0"
