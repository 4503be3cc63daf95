import pytest

from ledgersim.engine import Kernel, LparSpec, Topology, VmSpec
from ledgersim.metrics import MetricsCollector
from ledgersim.model import AgreementDoc, Transaction
from ledgersim.orderer import (OrdererConfig, OrderingService, fnv1a64,
                               select_leader)


def test_fnv1a64_reference_values():
    assert fnv1a64(b"") == 14695981039346656037
    assert fnv1a64(b"a") == 12638187200555641996
    assert fnv1a64(b"mychannel") == 1067475121258508506


def test_leader_is_fixed_by_channel_name():
    assert select_leader("mychannel", 3) == 2
    assert select_leader("channel1", 5) == 3
    with pytest.raises(ValueError):
        select_leader("mychannel", 0)


class _StubServer:
    def __init__(self, kernel):
        self.kernel = kernel
        self.acks = []

    def handle_orderer_ack(self, tx):
        self.acks.append((tx.tx_id, self.kernel.now))


class _StubPeer:
    def __init__(self, kernel):
        self.kernel = kernel
        self.blocks = []

    def handle_block(self, block):
        self.blocks.append((block.block_num, self.kernel.now,
                            block.cut_reason, list(block.tx_ids)))


def _ordering(block_size=3, timeout=1000, target="leader"):
    topo = Topology(lpars=(LparSpec(id="l1", physical_cores=8),),
                    vms=(VmSpec(id="ord", lpar_id="l1", virtual_cores=1),))
    kernel = Kernel(topo)
    metrics = MetricsCollector()
    cfg = OrdererConfig(cluster_size=3, block_size=block_size,
                        batch_timeout_us=timeout, validate_us=100,
                        enqueue_us=200, persist_us=500,
                        submit_target=target, follower_redirect_us=77)
    peer = _StubPeer(kernel)
    svc = OrderingService(kernel, cfg, kernel.vms["ord"], [peer], 50, metrics)
    server = _StubServer(kernel)
    svc.servers["s1"] = server
    return kernel, svc, server, peer, metrics


def _tx(i, now=0):
    tx = Transaction(i, AgreementDoc(f"d{i}", 10, 10), "insert", now,
                     wire_size=100)
    tx.server_id = "s1"
    return tx


def test_size_cut_then_timeout_cut():
    kernel, svc, server, peer, metrics = _ordering()
    for i in range(1, 6):
        svc.submit(_tx(i))
    kernel.run()
    # one vcore serializes enqueues at 300 us apiece; ack follows the link
    assert server.acks == [(1, 350), (2, 650), (3, 950), (4, 1250), (5, 1550)]
    # block 1 cut at the size limit, block 2 by the batch timer
    assert peer.blocks == [(1, 1450, "size", [1, 2, 3]),
                           (2, 2750, "timeout", [4, 5])]
    assert svc.blocks_cut == 2
    stats = metrics.phase_stats()
    assert stats["block_cut"].count == 2
    assert stats["block_cut"].vmax == 1000
    assert stats["raft_persist"].mean == 500


def test_queue_wait_folds_into_phase_split():
    kernel, svc, server, peer, metrics = _ordering()
    for i in range(1, 6):
        svc.submit(_tx(i))
    kernel.run()
    stats = metrics.phase_stats()
    # durations 300..1500 split 1:2 between validate and enqueue
    assert stats["orderer_validate"].mean == 300
    assert stats["orderer_enqueue"].mean == 600


def test_block_records_doc_ids_and_bytes():
    kernel, svc, server, peer, metrics = _ordering()
    for i in range(1, 4):
        svc.submit(_tx(i))
    kernel.run()
    blk = metrics.blocks[0]
    assert blk.doc_ids == ["d1", "d2", "d3"]
    assert blk.byte_size == 300
    assert blk.opened_at == 300 and blk.cut_at == 900


def test_follower_submission_pays_redirect():
    kernel, svc, server, peer, metrics = _ordering(block_size=10,
                                                   timeout=10**6,
                                                   target="follower")
    svc.submit(_tx(1))
    kernel.run()
    assert server.acks == [(1, 427)]   # 77 redirect + 300 cpu + 50 link


def test_empty_batch_never_cuts():
    kernel, svc, server, peer, metrics = _ordering(block_size=10, timeout=400)
    kernel.run()
    assert peer.blocks == []
    svc.submit(_tx(1))
    kernel.run()
    assert [b[0] for b in peer.blocks] == [1]


def test_stale_timer_is_ignored_after_size_cut():
    kernel, svc, server, peer, metrics = _ordering(block_size=3, timeout=1000)
    for i in range(1, 4):
        svc.submit(_tx(i))
    kernel.run()
    # the timer armed at 300 fires at 1300 after the size cut at 900;
    # it must not produce an empty second block
    assert len(peer.blocks) == 1


def test_orderer_concurrency_bounded_by_vcores():
    topo = Topology(lpars=(LparSpec(id="l1", physical_cores=8),),
                    vms=(VmSpec(id="ord", lpar_id="l1", virtual_cores=2),))
    kernel = Kernel(topo)
    cfg = OrdererConfig(block_size=100, batch_timeout_us=10**6,
                        validate_us=100, enqueue_us=200, persist_us=500)
    svc = OrderingService(kernel, cfg, kernel.vms["ord"], [], 50,
                          MetricsCollector())
    server = _StubServer(kernel)
    svc.servers["s1"] = server
    for i in range(1, 5):
        svc.submit(_tx(i))
    kernel.run()
    # two slots: txs 1-2 finish at 300, txs 3-4 queue and finish at 600
    assert server.acks == [(1, 350), (2, 350), (3, 650), (4, 650)]
