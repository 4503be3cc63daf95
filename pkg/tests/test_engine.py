from fractions import Fraction

import pytest

from ledgersim.engine import (INFINITY, Kernel, LparSpec, Rng,
                              SimTimeLimitExceeded, SimulationError, Topology,
                              VmSpec, splitmix64)


def _kernel(vcores=4, cores=8, **kw):
    topo = Topology(lpars=(LparSpec(id="l1", physical_cores=cores),),
                    vms=(VmSpec(id="v1", lpar_id="l1", virtual_cores=vcores),))
    return Kernel(topo, **kw)


def test_splitmix64_sequence():
    assert splitmix64(0) == (11400714819323198485, 16294208416658607535)
    assert splitmix64(1) == (11400714819323198486, 10451216379200822465)


def test_rng_stream_is_frozen():
    r = Rng(7, "workload-ids")
    assert [r.next_u64() for _ in range(3)] == [
        16622987964413764941, 7262693763661109844, 17703980907487419645]


def test_rng_hex128():
    assert Rng(7, "workload-ids").hex128() == \
        "e6b0b77b3479e54d64ca457fa7771a54"


def test_rng_streams_differ_by_component_and_seed():
    a = Rng(7, "workload-ids").next_u64()
    assert Rng(7, "workload-mix").next_u64() != a
    assert Rng(8, "workload-ids").next_u64() != a


def test_kernel_rng_is_memoized():
    k = _kernel()
    assert k.rng("x") is k.rng("x")
    assert k.rng("x") is not k.rng("y")


def test_schedule_orders_by_time_then_seq():
    k = _kernel()
    log = []
    k.schedule_at(50, log.append, "b")
    k.schedule_at(50, log.append, "c")
    k.schedule_at(10, log.append, "a")
    k.run()
    assert log == ["a", "b", "c"]
    assert k.now == 50


def test_schedule_in_the_past_raises():
    k = _kernel()
    k.schedule_at(10, lambda a: k.schedule_at(5, lambda b: None, None), None)
    with pytest.raises(SimulationError):
        k.run()


def test_time_limit_exceeded():
    k = _kernel(max_sim_time_us=100)
    k.schedule_at(101, lambda a: None, None)
    with pytest.raises(SimTimeLimitExceeded):
        k.run()


def test_step_advances_one_event():
    k = _kernel()
    log = []
    k.schedule_at(10, log.append, 1)
    k.schedule_at(20, log.append, 2)
    assert k.step()
    assert log == [1] and k.now == 10
    assert k.step()
    assert not k.step()


def test_trace_note_capture():
    k = _kernel()
    k.note("dropped", 1)          # trace off: no-op
    k.trace = []
    k.schedule_at(7, lambda a: k.note("fired", "x", 3), None)
    k.run()
    assert k.trace == [(7, "fired", "x", 3)]


def test_vm_run_zero_work_completes_inline():
    k = _kernel()
    done = []
    k.vms["v1"].run(0, done.append, "now")
    assert done == ["now"]


def test_processor_sharing_oversubscribed_vm():
    # 8 equal tasks on 4 vcores: each runs at half speed.
    k = _kernel(vcores=4, cores=8)
    ends = []
    for _ in range(8):
        k.vms["v1"].run(100, lambda a: ends.append(k.now), None)
    k.run()
    assert ends == [200] * 8


def test_processor_sharing_join_mid_flight():
    k = _kernel(vcores=1, cores=8)
    out = []
    vm = k.vms["v1"]
    vm.run(300, lambda a: out.append(("A", k.now)), None)
    k.schedule(100, lambda a: vm.run(100, lambda b: out.append(("B", k.now)),
                                     None), None)
    k.run()
    assert out == [("B", 300), ("A", 400)]


def test_processor_sharing_lpar_contention():
    # Two 12-vcore VMs on a 16-core LPAR: each gets 16/24 of demand.
    topo = Topology(lpars=(LparSpec(id="l1", physical_cores=16),),
                    vms=(VmSpec(id="a", lpar_id="l1", virtual_cores=12),
                         VmSpec(id="b", lpar_id="l1", virtual_cores=12)))
    k = Kernel(topo)
    ends = []
    for vid in ("a", "b"):
        for _ in range(12):
            k.vms[vid].run(600, lambda arg: ends.append(k.now), None)
    k.run()
    assert set(ends) == {900}


def test_vm_utilization_and_cpu_accounting():
    k = _kernel(vcores=4, cores=8)
    for _ in range(8):
        k.vms["v1"].run(100, lambda a: None, None)
    k.run()
    vm = k.vms["v1"]
    assert vm.cpu_consumed_us() == 800
    assert vm.utilization(200) == 1.0
    assert vm.utilization(400) == 0.5


def test_vm_utilization_buckets():
    # consumption is attributed to the bucket each boundary lands in
    k = _kernel(vcores=2, cores=8, util_bucket_us=100)
    k.vms["v1"].run(100, lambda a: None, None)
    k.schedule_at(200, lambda a: k.vms["v1"].run(50, lambda b: None, None),
                  None)
    k.run()
    buckets = k.vms["v1"].utilization_buckets(300)
    assert buckets == [0.0, 0.5, 0.25]


def test_effective_speed_is_exact_fraction():
    topo = Topology(lpars=(LparSpec(id="l1", physical_cores=16),),
                    vms=(VmSpec(id="a", lpar_id="l1", virtual_cores=12),
                         VmSpec(id="b", lpar_id="l1", virtual_cores=12)))
    k = Kernel(topo)
    k.vms["a"].run(600, lambda a: None, None)
    k.vms["b"].run(600, lambda a: None, None)
    assert k.vms["a"].effective_speed() == Fraction(1)
    for _ in range(11):
        k.vms["a"].run(600, lambda a: None, None)
    for _ in range(11):
        k.vms["b"].run(600, lambda a: None, None)
    # 12 runnable on each 12-vcore VM: demand 24 on 16 physical cores
    assert k.vms["a"].effective_speed() == Fraction(2, 3)


def test_topology_validation():
    with pytest.raises(SimulationError):
        Topology(lpars=(LparSpec(id="l1", physical_cores=8),),
                 vms=(VmSpec(id="v1", lpar_id="nope", virtual_cores=4),)
                 ).validate()
    with pytest.raises(SimulationError):
        Topology(lpars=(LparSpec(id="l1", physical_cores=8),),
                 vms=(VmSpec(id="v1", lpar_id="l1", virtual_cores=0),)
                 ).validate()
    with pytest.raises(SimulationError):
        Topology(lpars=(LparSpec(id="l1", physical_cores=8),
                        LparSpec(id="l1", physical_cores=8)),
                 vms=(VmSpec(id="v1", lpar_id="l1", virtual_cores=1),)
                 ).validate()


def test_infinity_is_far_future():
    assert INFINITY == 1 << 62
