"""Scenario documents: load, validate, and patch.

A scenario is a plain JSON document describing one deployment and one
workload. Validation is strict about references (every component must
land on a declared VM, every VM on a declared LPAR) and about enum
fields, and errors name the offending JSON path so a broken sweep axis
points at itself.

Patches are (path, value) pairs with dotted paths and list indices,
e.g. ``peers[2].endorser`` or ``hardware.vms[0].vcores``. Paths must
resolve to an existing key: patches tune a scenario, they never grow
new structure.
"""

from __future__ import annotations

import copy
import json
import re
from pathlib import Path

from .model import CommitStrategy, IdStrategy

DATA_DIR = Path(__file__).parent / "data"
SCENARIO_DIR = DATA_DIR / "scenarios"
PROFILE_DIR = DATA_DIR / "profiles"

_STRATEGIES = {s.value for s in CommitStrategy}
_ID_STRATEGIES = {s.value for s in IdStrategy}
_BACKENDS = {"doc_store", "embedded_kv"}

_TOKEN_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)((?:\[\d+\])*)$")


class ScenarioError(ValueError):
    """Scenario fails validation; message names the JSON path."""


# ---------------------------------------------------------------------------
# loading

def load_scenario(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    _fill_defaults(doc)
    validate_scenario(doc)
    return doc


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))


def bundled_scenario_path(name: str) -> Path:
    p = SCENARIO_DIR / f"{name}.json"
    if not p.exists():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return p


def load_bundled(name: str) -> dict:
    return load_scenario(bundled_scenario_path(name))


SCHEMA_VERSION = 1


def _fill_defaults(doc: dict) -> None:
    doc.setdefault("schema_version", SCHEMA_VERSION)
    doc.setdefault("seed", 1)
    doc.setdefault("profile", "default")
    doc.setdefault("max_sim_us", 4 * 3600 * 1_000_000)
    doc.setdefault("network", {}).setdefault("link_delay_us", 300)
    ch = doc.setdefault("channel", {})
    ch.setdefault("id", "mychannel")
    ch.setdefault("block_size", 500)
    ch.setdefault("batch_timeout_us", 2_000_000)
    od = doc.setdefault("orderer", {})
    od.setdefault("cluster_size", 3)
    od.setdefault("submit_target", "leader")
    for vm in doc.get("hardware", {}).get("vms", []):
        vm.setdefault("memory_gb", 16)
    for peer in doc.get("peers", []):
        peer.setdefault("org", "org1")
        peer.setdefault("endorser", False)
        peer.setdefault("event_source", False)
        peer.setdefault("validator_pool_size", None)
        peer.setdefault("scheduler_core_cap", None)
        peer.setdefault("validation_channel", "unbuffered")
        db = peer.setdefault("statedb", {})
        db.setdefault("backend", "doc_store")
        db.setdefault("chunk_size_bytes", 1279)
        db.setdefault("cache_entries", 1)
    for srv in doc.get("app_servers", []):
        srv.setdefault("workers", 12)
        srv.setdefault("strategy", "NETWORK_ANY")
        srv.setdefault("legacy_mode", False)
        srv.setdefault("listener_vm", None)
        srv.setdefault("org", None)
        srv.setdefault("event_sources", [])
    wl = doc.setdefault("workload", {})
    wl.setdefault("mode", "closed")
    wl.setdefault("clients", 1)
    wl.setdefault("threads_per_client", 40)
    wl.setdefault("loops", 25)
    wl.setdefault("think_time_us", 0)
    wl.setdefault("rate_tps", 0)
    wl.setdefault("total_requests", 0)
    wl.setdefault("kind", "insert")
    wl.setdefault("query_fraction", 0.0)
    wl.setdefault("result_count", 1)
    wl.setdefault("payload_bytes", 2730)
    wl.setdefault("metadata_bytes", 402)
    wl.setdefault("id_strategy", "RANDOM")
    wl.setdefault("ramp_us", 0)
    wl.setdefault("prefill_docs", 0)


# ---------------------------------------------------------------------------
# validation

def validate_scenario(doc: dict) -> None:
    errors: list[str] = []

    def need(cond: bool, path: str, msg: str) -> None:
        if not cond:
            errors.append(f"{path}: {msg}")

    need(isinstance(doc.get("name"), str) and doc.get("name"), "name",
         "scenario needs a non-empty name")
    need(doc.get("schema_version") == SCHEMA_VERSION, "schema_version",
         f"must be {SCHEMA_VERSION}")
    need(isinstance(doc.get("profile"), str) and doc.get("profile"),
         "profile", "calibration profile name required")
    hw = doc.get("hardware") or {}
    lpars = hw.get("lpars") or []
    vms = hw.get("vms") or []
    need(bool(lpars), "hardware.lpars", "at least one lpar required")
    need(bool(vms), "hardware.vms", "at least one vm required")
    lpar_ids = set()
    for i, lp in enumerate(lpars):
        path = f"hardware.lpars[{i}]"
        need(isinstance(lp.get("id"), str), path + ".id", "string id required")
        need(int(lp.get("physical_cores", 0)) >= 1, path + ".physical_cores",
             "must be >= 1")
        if lp.get("id") in lpar_ids:
            errors.append(f"{path}.id: duplicate lpar id {lp.get('id')!r}")
        lpar_ids.add(lp.get("id"))
    vm_ids = set()
    for i, vm in enumerate(vms):
        path = f"hardware.vms[{i}]"
        need(isinstance(vm.get("id"), str), path + ".id", "string id required")
        need(vm.get("lpar") in lpar_ids, path + ".lpar",
             f"unknown lpar {vm.get('lpar')!r}")
        need(int(vm.get("vcores", 0)) >= 1, path + ".vcores", "must be >= 1")
        if vm.get("id") in vm_ids:
            errors.append(f"{path}.id: duplicate vm id {vm.get('id')!r}")
        vm_ids.add(vm.get("id"))

    ch = doc["channel"]
    need(int(ch["block_size"]) >= 1, "channel.block_size", "must be >= 1")
    need(int(ch["batch_timeout_us"]) >= 1, "channel.batch_timeout_us",
         "must be >= 1")
    od = doc["orderer"]
    need(int(od["cluster_size"]) >= 1, "orderer.cluster_size", "must be >= 1")
    need(od.get("vm") in vm_ids, "orderer.vm",
         f"unknown vm {od.get('vm')!r}")
    need(od["submit_target"] in ("leader", "follower"),
         "orderer.submit_target", "must be 'leader' or 'follower'")

    peers = doc.get("peers") or []
    need(bool(peers), "peers", "at least one peer required")
    peer_ids = set()
    endorsers = []
    for i, p in enumerate(peers):
        path = f"peers[{i}]"
        pid = p.get("id")
        need(isinstance(pid, str) and pid, path + ".id", "string id required")
        if pid in peer_ids:
            errors.append(f"{path}.id: duplicate peer id {pid!r}")
        peer_ids.add(pid)
        need(p.get("vm") in vm_ids, path + ".vm", f"unknown vm {p.get('vm')!r}")
        if p.get("endorser"):
            endorsers.append(pid)
        db = p["statedb"]
        need(db["backend"] in _BACKENDS, path + ".statedb.backend",
             f"must be one of {sorted(_BACKENDS)}")
        need(int(db["chunk_size_bytes"]) > 32, path + ".statedb.chunk_size_bytes",
             "must exceed the 32-byte node header")
        need(p["validation_channel"] in ("unbuffered", "buffered"),
             path + ".validation_channel", "must be 'unbuffered' or 'buffered'")
        for field in ("validator_pool_size", "scheduler_core_cap"):
            v = p.get(field)
            if v is not None:
                need(int(v) >= 1, f"{path}.{field}", "must be >= 1 or null")
    need(bool(endorsers), "peers", "at least one endorsing peer required")

    servers = doc.get("app_servers") or []
    need(bool(servers), "app_servers", "at least one app server required")
    server_ids = set()
    for i, s in enumerate(servers):
        path = f"app_servers[{i}]"
        sid = s.get("id")
        need(isinstance(sid, str) and sid, path + ".id", "string id required")
        if sid in server_ids:
            errors.append(f"{path}.id: duplicate server id {sid!r}")
        server_ids.add(sid)
        need(s.get("vm") in vm_ids, path + ".vm", f"unknown vm {s.get('vm')!r}")
        need(int(s.get("workers", 0)) >= 1, path + ".workers", "must be >= 1")
        need(s.get("endorser") in peer_ids, path + ".endorser",
             f"unknown peer {s.get('endorser')!r}")
        need(s["strategy"] in _STRATEGIES, path + ".strategy",
             f"must be one of {sorted(_STRATEGIES)}")
        for j, es in enumerate(s["event_sources"]):
            need(es in peer_ids, f"{path}.event_sources[{j}]",
                 f"unknown peer {es!r}")
        if s["strategy"] == "ASYNC_SPLIT":
            need(s.get("listener_vm") in vm_ids, path + ".listener_vm",
                 "ASYNC_SPLIT requires a listener vm")
        elif s.get("listener_vm") is not None:
            need(s["listener_vm"] in vm_ids, path + ".listener_vm",
                 f"unknown vm {s['listener_vm']!r}")

    wl = doc["workload"]
    need(wl["mode"] in ("closed", "open"), "workload.mode",
         "must be 'closed' or 'open'")
    need(int(wl["clients"]) >= 1, "workload.clients", "must be >= 1")
    if wl["mode"] == "open":
        need(int(wl["rate_tps"]) >= 1, "workload.rate_tps",
             "open mode needs rate_tps >= 1")
        need(int(wl["total_requests"]) >= 1, "workload.total_requests",
             "open mode needs total_requests >= 1")
    else:
        need(int(wl["threads_per_client"]) >= 1, "workload.threads_per_client",
             "must be >= 1")
        need(int(wl["loops"]) >= 0, "workload.loops", "must be >= 0")
    need(wl["kind"] in ("insert", "query"), "workload.kind",
         "must be 'insert' or 'query'")
    need(wl["id_strategy"] in _ID_STRATEGIES, "workload.id_strategy",
         f"must be one of {sorted(_ID_STRATEGIES)}")
    need(0.0 <= float(wl["query_fraction"]) <= 1.0, "workload.query_fraction",
         "must be in [0, 1]")
    need(int(wl["prefill_docs"]) >= 0, "workload.prefill_docs",
         "must be >= 0")

    if errors:
        raise ScenarioError("; ".join(errors))


# ---------------------------------------------------------------------------
# patching

def apply_changes(doc: dict, changes: list[dict]) -> dict:
    """Return a patched deep copy; each change is {'path':..., 'value':...}."""
    out = copy.deepcopy(doc)
    for change in changes:
        set_path(out, change["path"], change["value"])
    _fill_defaults(out)
    validate_scenario(out)
    return out


def set_path(doc, path: str, value) -> None:
    node = doc
    steps = _parse_path(path)
    for kind, key in steps[:-1]:
        node = _step(node, kind, key, path)
    kind, key = steps[-1]
    if kind == "key":
        if not isinstance(node, dict) or key not in node:
            raise ScenarioError(f"{path}: no such key to patch")
        node[key] = value
    else:
        if not isinstance(node, list) or not (0 <= key < len(node)):
            raise ScenarioError(f"{path}: list index out of range")
        node[key] = value


def get_path(doc, path: str):
    node = doc
    for kind, key in _parse_path(path):
        node = _step(node, kind, key, path)
    return node


def _step(node, kind: str, key, path: str):
    if kind == "key":
        if not isinstance(node, dict) or key not in node:
            raise ScenarioError(f"{path}: no such key {key!r}")
        return node[key]
    if not isinstance(node, list) or not (0 <= key < len(node)):
        raise ScenarioError(f"{path}: list index {key} out of range")
    return node[key]


def _parse_path(path: str) -> list[tuple[str, object]]:
    steps: list[tuple[str, object]] = []
    for token in path.split("."):
        m = _TOKEN_RE.match(token)
        if not m:
            raise ScenarioError(f"{path}: malformed path segment {token!r}")
        steps.append(("key", m.group(1)))
        for idx in re.findall(r"\[(\d+)\]", m.group(2)):
            steps.append(("idx", int(idx)))
    return steps
