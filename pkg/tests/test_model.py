import pytest

from ledgersim.model import (COMMITTED, ENDORSED, ENVELOPE_OVERHEAD_BYTES,
                             PENDING, RESPONDED, AgreementDoc, Block,
                             CommitStrategy, IdStrategy, MonotonicIdGen,
                             Transaction, tx_wire_size)


def test_default_tx_wire_size():
    doc = AgreementDoc("d1")
    assert tx_wire_size(doc) == 7662   # 2730*2 + 402 + 800*2 + 200


def test_small_payload_wire_size():
    doc = AgreementDoc("d1", payload_bytes=1000, metadata_bytes=402)
    assert tx_wire_size(doc) == 4202


def test_envelope_overhead_constant():
    assert ENVELOPE_OVERHEAD_BYTES == 200


def test_transaction_initial_state():
    tx = Transaction(1, AgreementDoc("d1"), "insert", 42)
    assert tx.status == PENDING
    assert tx.phase_stamps == {"created": 42}
    assert tx.block_num == -1


def test_status_only_moves_forward():
    tx = Transaction(1, AgreementDoc("d1"), "insert", 0)
    tx.advance_status(COMMITTED)
    tx.advance_status(ENDORSED)        # stale update arrives late
    assert tx.status == COMMITTED
    tx.advance_status(RESPONDED)
    assert tx.status == RESPONDED


def test_monotonic_ids_are_ordered_and_fixed_width():
    gen = MonotonicIdGen()
    a = gen.next(5)
    b = gen.next(5)
    c = gen.next(17)
    assert a == "0000000000000005000000"
    assert b == "0000000000000005000001"
    assert c == "0000000000000017000000"
    assert len(a) == 22
    assert a < b < c


def test_monotonic_id_clock_backwards_raises():
    gen = MonotonicIdGen()
    gen.next(10)
    with pytest.raises(ValueError):
        gen.next(9)


def test_block_fill_and_tx_count():
    blk = Block(3, [1, 2, 3], ["a", "b", "c"], "timeout", 900, 300, 999)
    assert blk.tx_count == 3
    assert blk.fill(5) == 0.6
    assert blk.persist_done_at == -1


def test_strategy_enums_round_trip_as_strings():
    assert CommitStrategy("NETWORK_ANY") is CommitStrategy.NETWORK_ANY
    assert IdStrategy("MONOTONIC_TIMESTAMP") is IdStrategy.MONOTONIC_TIMESTAMP
    assert CommitStrategy.NULL.value == "NULL"
