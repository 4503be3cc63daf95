import json

import pytest

from ledgersim.harness import run_scenario
from ledgersim.scenario import apply_changes, load_bundled

_CACHE = {}


def _run_cached(name, seed=None, changes=None):
    key = (name, seed, json.dumps(changes, sort_keys=True) if changes else None)
    if key not in _CACHE:
        doc = load_bundled(name)
        if changes:
            doc = apply_changes(doc, changes)
        _CACHE[key] = run_scenario(doc, seed=seed)
    return _CACHE[key]


@pytest.fixture(scope="session")
def cached_run():
    """Run a bundled scenario (optionally patched) once per session."""
    return _run_cached
