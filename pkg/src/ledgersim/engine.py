"""Deterministic discrete-event kernel with a two-level shared-CPU model.

Time is integer microseconds everywhere. Events are ordered by
(fire_at, insertion seq), so runs are bit-reproducible for a fixed
scenario and seed. CPU capacity is modeled at two levels: tasks share a
VM's virtual cores equally, and VMs share their LPAR's physical cores in
proportion to demanded virtual cores. Per-task speed is

    min(1, vcores / n_tasks) * min(1, physical / demanded_vcores)

with demanded_vcores = sum over VMs of min(n_tasks, vcores). Speeds are
piecewise constant between task starts/finishes, so each VM keeps a
virtual service clock that only needs advancing when its own speed
changes. The clock is kept in integer units of 1/SCALE microseconds of
work (floor-rounded per advance), which keeps the whole kernel in exact
integer arithmetic.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from fractions import Fraction

# Virtual-clock resolution: 1/SCALE us of work. Floor rounding loses at
# most 1/SCALE us per speed change, far below the 1 us event grid.
SCALE = 1 << 20

INFINITY = 1 << 62

MASK64 = (1 << 64) - 1


class SimulationError(Exception):
    """Fatal modeling error (scheduling in the past, broken invariant)."""


class SimTimeLimitExceeded(SimulationError):
    """The simulated-time cap was hit before the scenario drained."""


def splitmix64(state: int) -> tuple[int, int]:
    """One step of the splitmix64 generator: (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class Rng:
    """Counter-based splitmix64 stream, independently seedable per component."""

    __slots__ = ("state",)

    def __init__(self, root_seed: int, component_id: str):
        # Mix the component id into the root seed so streams never overlap.
        h = 0xCBF29CE484222325
        for b, in [(c,) for c in component_id.encode()]:
            h = ((h ^ b) * 0x100000001B3) & MASK64
        state = (root_seed & MASK64) ^ h
        # Burn one step so nearby seeds decorrelate.
        self.state, _ = splitmix64(state)

    def next_u64(self) -> int:
        self.state, out = splitmix64(self.state)
        return out

    def hex128(self) -> str:
        return f"{self.next_u64():016x}{self.next_u64():016x}"


@dataclass(frozen=True)
class LparSpec:
    id: str
    physical_cores: int


@dataclass(frozen=True)
class VmSpec:
    id: str
    lpar_id: str
    virtual_cores: int
    memory_gb: int = 16


@dataclass(frozen=True)
class Topology:
    """Static placement description: LPARs, VMs, and component->VM map."""

    lpars: tuple[LparSpec, ...]
    vms: tuple[VmSpec, ...]
    placements: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        lpar_ids = {l.id for l in self.lpars}
        if len(lpar_ids) != len(self.lpars):
            raise SimulationError("duplicate lpar id")
        vm_ids = set()
        for vm in self.vms:
            if vm.id in vm_ids:
                raise SimulationError(f"duplicate vm id {vm.id!r}")
            vm_ids.add(vm.id)
            if vm.lpar_id not in lpar_ids:
                raise SimulationError(f"vm {vm.id!r} references unknown lpar {vm.lpar_id!r}")
            if vm.virtual_cores < 1:
                raise SimulationError(f"vm {vm.id!r} needs at least one virtual core")
        for component, vm_id in self.placements.items():
            if vm_id not in vm_ids:
                raise SimulationError(f"placement {component!r} references unknown vm {vm_id!r}")


class Lpar:
    __slots__ = ("id", "physical_cores", "vms", "demand")

    def __init__(self, spec: LparSpec):
        self.id = spec.id
        self.physical_cores = spec.physical_cores
        self.vms: list[Vm] = []
        self.demand = 0  # sum of min(n_tasks, vcores) over member VMs


class Vm:
    """Runtime CPU state for one VM. Hot path: keep it lean."""

    __slots__ = (
        "id", "vcores", "lpar", "kernel", "n", "svc", "last_t",
        "num", "den", "heap", "hseq", "token", "armed_t",
        "consumed", "bucket_marks", "memory_gb",
    )

    def __init__(self, spec: VmSpec, lpar: Lpar, kernel: "Kernel"):
        self.id = spec.id
        self.vcores = spec.virtual_cores
        self.memory_gb = spec.memory_gb
        self.lpar = lpar
        self.kernel = kernel
        self.n = 0              # runnable tasks
        self.svc = 0            # virtual service clock, SCALE units
        self.last_t = 0
        self.num = 1            # current per-task speed = num/den
        self.den = 1
        self.heap: list = []    # (svc target, seq, callback, arg)
        self.hseq = 0
        self.token = 0          # invalidates stale arm events
        self.armed_t = INFINITY
        self.consumed = 0       # total work done, SCALE*us units
        self.bucket_marks: list = []  # (bucket_idx, consumed) at bucket crossings

    # -- integrator ------------------------------------------------------

    def _advance(self, now: int) -> None:
        dt = now - self.last_t
        if dt:
            if self.n:
                ds = dt * self.num * SCALE // self.den
                self.svc += ds
                self.consumed += self.n * ds
                bucket = now // self.kernel.util_bucket_us
                marks = self.bucket_marks
                if not marks or marks[-1][0] != bucket:
                    marks.append((bucket, self.consumed))
                else:
                    marks[-1] = (bucket, self.consumed)
            self.last_t = now

    def _recompute_speed(self) -> None:
        n = self.n
        if not n:
            return
        if n > self.vcores:
            num, den = self.vcores, n
        else:
            num, den = 1, 1
        lpar = self.lpar
        if lpar.demand > lpar.physical_cores:
            num *= lpar.physical_cores
            den *= lpar.demand
        self.num = num
        self.den = den

    def _rearm(self, now: int) -> None:
        if not self.heap:
            self.token += 1
            self.armed_t = INFINITY
            if not self.n:
                self.svc = 0  # rebase when idle: keeps integers small
            return
        target = self.heap[0][0]
        gap = target - self.svc
        if gap <= 0:
            t_next = now
        else:
            step = self.num * SCALE
            t_next = now + (gap * self.den + step - 1) // step
        if t_next < self.armed_t:
            self.token += 1
            self.armed_t = t_next
            self.kernel.schedule_at(t_next, self._fire, self.token)

    def _fire(self, token: int) -> None:
        if token != self.token:
            return
        self.token += 1
        self.armed_t = INFINITY
        now = self.kernel.now
        self._advance(now)
        ready = []
        heap = self.heap
        while heap and heap[0][0] <= self.svc:
            ready.append(heapq.heappop(heap))
        if ready:
            self._change_n(-len(ready), now)
        else:
            # Speed dropped since arming; nothing is due yet.
            self._rearm(now)
            return
        for _target, _seq, cb, arg in ready:
            cb(arg)

    def _change_n(self, delta: int, now: int) -> None:
        lpar = self.lpar
        old_d = self.n if self.n < self.vcores else self.vcores
        new_n = self.n + delta
        new_d = new_n if new_n < self.vcores else self.vcores
        if old_d == new_d:
            # LPAR demand unchanged: only this VM's share moves.
            self._advance(now)
            self.n = new_n
            self._recompute_speed()
            self._rearm(now)
            return
        new_demand = lpar.demand + new_d - old_d
        # Sibling speeds move only when the LPAR factor min(1, P/D) does.
        siblings_change = (lpar.demand > lpar.physical_cores
                           or new_demand > lpar.physical_cores)
        if siblings_change:
            for vm in lpar.vms:
                if vm.n and vm is not self:
                    vm._advance(now)
        self._advance(now)
        self.n = new_n
        lpar.demand = new_demand
        self._recompute_speed()
        self._rearm(now)
        if siblings_change:
            for vm in lpar.vms:
                if vm.n and vm is not self:
                    vm._recompute_speed()
                    vm._rearm(now)

    # -- public ----------------------------------------------------------

    def run(self, work_us: int, cb, arg) -> None:
        """Start a CPU task of `work_us` microseconds of nominal work."""
        if work_us <= 0:
            cb(arg)
            return
        now = self.kernel.now
        self._advance(now)
        target = self.svc + work_us * SCALE
        self.hseq += 1
        heapq.heappush(self.heap, (target, self.hseq, cb, arg))
        self._change_n(1, now)

    def effective_speed(self) -> Fraction:
        """Instantaneous per-task speed (prospective if currently idle)."""
        n = max(1, self.n)
        share = Fraction(min(self.vcores, n), n)
        lpar = self.lpar
        demand = lpar.demand if self.n else lpar.demand + min(n, self.vcores)
        if demand > lpar.physical_cores:
            share *= Fraction(lpar.physical_cores, demand)
        return share

    def cpu_consumed_us(self) -> int:
        return self.consumed // SCALE

    def utilization(self, duration_us: int) -> float:
        if duration_us <= 0:
            return 0.0
        return self.consumed / (SCALE * self.vcores * duration_us)

    def utilization_buckets(self, duration_us: int) -> list[float]:
        """Coarse per-bucket utilization series (consumption attributed to
        the bucket in which each speed-change boundary lands)."""
        width = self.kernel.util_bucket_us
        n_buckets = max(1, -(-duration_us // width))
        series = [0] * n_buckets
        prev = 0
        for bucket, consumed in self.bucket_marks:
            if bucket < n_buckets:
                series[bucket] += consumed - prev
            prev = consumed
        cap = SCALE * self.vcores * width
        return [s / cap for s in series]


class Kernel:
    """Single-threaded event loop over an integer-microsecond clock."""

    def __init__(self, topology: Topology, seed: int = 0,
                 max_sim_time_us: int = 8 * 3600 * 1_000_000,
                 util_bucket_us: int = 1_000_000):
        topology.validate()
        self.now = 0
        self.seed = seed
        self.max_sim_time_us = max_sim_time_us
        self.util_bucket_us = util_bucket_us
        self._events: list = []
        self._seq = 0
        self.trace: list | None = None  # set to [] to capture component notes
        self.lpars: dict[str, Lpar] = {}
        self.vms: dict[str, Vm] = {}
        for lspec in topology.lpars:
            self.lpars[lspec.id] = Lpar(lspec)
        for vspec in topology.vms:
            lpar = self.lpars[vspec.lpar_id]
            vm = Vm(vspec, lpar, self)
            lpar.vms.append(vm)
            self.vms[vspec.id] = vm
        self._rngs: dict[str, Rng] = {}

    def rng(self, component_id: str) -> Rng:
        r = self._rngs.get(component_id)
        if r is None:
            r = self._rngs[component_id] = Rng(self.seed, component_id)
        return r

    def schedule_at(self, fire_at: int, fn, arg=None) -> None:
        if fire_at < self.now:
            raise SimulationError(
                f"event scheduled in the past: {fire_at} < now {self.now}")
        self._seq += 1
        heapq.heappush(self._events, (fire_at, self._seq, fn, arg))

    def schedule(self, delay_us: int, fn, arg=None) -> None:
        self.schedule_at(self.now + delay_us, fn, arg)

    def note(self, kind: str, *info) -> None:
        if self.trace is not None:
            self.trace.append((self.now, kind) + info)

    def run(self) -> None:
        events = self._events
        limit = self.max_sim_time_us
        while events:
            fire_at, _seq, fn, arg = heapq.heappop(events)
            if fire_at > limit:
                raise SimTimeLimitExceeded(
                    f"simulated time cap {limit} us exceeded")
            self.now = fire_at
            fn(arg)

    def step(self) -> bool:
        """Process a single event; returns False when the queue is empty."""
        if not self._events:
            return False
        fire_at, _seq, fn, arg = heapq.heappop(self._events)
        if fire_at > self.max_sim_time_us:
            raise SimTimeLimitExceeded(
                f"simulated time cap {self.max_sim_time_us} us exceeded")
        self.now = fire_at
        fn(arg)
        return True
