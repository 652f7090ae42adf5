import threading
from fractions import Fraction

import pytest

from fresco.errors import DomainError, LedgerError
from fresco.infra import Tier
from fresco.ledger import (SCALE, Batched, FixedRep, GasSchedule, Ledger, TransactionRecord, incentive, incentive_raw,
                           reputation_step, to_micros)


def fresh(n=3, **kw):
    led = Ledger(**kw)
    for i in range(n):
        led.register_node(i, Tier.EDGE)
    led.gas_meter = 0
    return led


def test_register_gas_and_count():
    led = Ledger()
    led.register_node(7)
    assert led.gas_meter == 21_503
    before = led.get_node_count()
    led.register_node(8)
    assert led.get_node_count() == before + 1


def test_duplicate_register_leaves_gas():
    led = Ledger()
    led.register_node(1)
    g = led.gas_meter
    with pytest.raises(LedgerError):
        led.register_node(1)
    assert led.gas_meter == g


def test_incentive_examples():
    assert incentive(150, 100).raw == 0
    assert incentive(100, 100).raw == 0
    assert incentive(25, 100).raw == 750_000
    assert incentive(25, 100, failed=True).raw == 0
    assert incentive(0, 100).raw == SCALE
    with pytest.raises(DomainError):
        incentive(10, 0)


def test_quantization():
    assert to_micros(1.0) == 1000
    assert to_micros(0.0005) == 1  # half rounds up
    assert to_micros(0.0004) == 0


def test_reputation_step_examples():
    assert reputation_step(500_000, SCALE, 300_000) == 650_000
    for inc in (0, 123_456, SCALE):
        assert reputation_step(654_321, inc, 0) == 654_321


def test_batched_update_gas():
    led = fresh()
    led.update_node_reputation([TransactionRecord(10, 0)], {Tier.EDGE: 100}, now=0)
    assert led.gas_meter == 21_638
    led.gas_meter = 0
    led.update_node_reputation([TransactionRecord(10, i % 3) for i in range(30)], {Tier.EDGE: 100}, now=0)
    assert led.gas_meter == 29_984


def test_gas_formula_and_cap():
    b = Batched(21_638, 287.8, 29_984)
    assert [b.cost(n) for n in (1, 2, 3)] == [21_638, 21_926, 22_214]
    assert b.cost(30) == 29_984 and b.cost(100) == 29_984
    with pytest.raises(DomainError):
        b.cost(0)


def test_read_gas():
    led = fresh()
    led.get_reputation_score(0, 0)
    assert led.gas_meter == 21_204
    led.gas_meter = 0
    quiet = fresh(charge_reads=False)
    quiet.get_reputation_score(0, 0)
    assert quiet.gas_meter == 0


def test_consensus_visibility():
    led = fresh()
    assert led.get_reputation_score(0, 0) == FixedRep(SCALE)
    led.update_node_reputation([TransactionRecord(0, 0, failed=True)], {Tier.EDGE: 100}, now=1000)
    assert led.get_reputation_score(0, 1000).raw == SCALE
    assert led.get_reputation_score(0, 4999.999).raw == SCALE
    assert led.get_reputation_score(0, 5000).raw == 700_000


def test_reads_in_the_past_see_old_value():
    led = fresh()
    led.update_node_reputation([TransactionRecord(0, 0, failed=True)], {Tier.EDGE: 100}, now=0)
    assert led.get_reputation_score(0, 10_000).raw == 700_000
    assert led.get_reputation_score(0, 1_000).raw == SCALE


def test_never_updated_node_initial():
    led = Ledger(initial=500_000)
    led.register_node(3)
    assert led.get_node(3).raw == 500_000


def test_batch_is_atomic():
    led = fresh()
    g = led.gas_meter
    with pytest.raises(LedgerError):
        led.update_node_reputation([TransactionRecord(1, 0), TransactionRecord(1, 99)], {Tier.EDGE: 100}, now=0)
    assert led.gas_meter == g and led.pending_count() == 0
    with pytest.raises(LedgerError):
        led.update_node_reputation([], {Tier.EDGE: 100}, now=0)
    with pytest.raises(LedgerError):
        led.update_node_reputation([TransactionRecord(1, 0)], {Tier.CLOUD: 100}, now=0)


def test_nabla_by_node_id():
    led = fresh()
    led.update_node_reputation([TransactionRecord(25, 1)], {1: 100}, now=0)
    assert led.get_node(1, 4000).raw == reputation_step(SCALE, 750_000, 300_000)


def test_unregister_and_reset():
    led = fresh()
    led.update_node_reputation([TransactionRecord(0, 0, failed=True)], {Tier.EDGE: 100}, now=0)
    led.unregister_node(1)
    assert led.registered() == [0, 2]
    with pytest.raises(LedgerError):
        led.get_node(1)
    assert led.get_node(0, 5000).raw == 700_000
    led.gas_meter = 0
    led.reset_reputation([0, 2], now=6000)
    assert led.gas_meter == 21_484 + 140
    assert led.get_node(0, 6000).raw == SCALE


def test_pending_block_for_unregistered_node_is_skipped():
    led = fresh()
    led.update_node_reputation([TransactionRecord(10, 0), TransactionRecord(10, 1)], {Tier.EDGE: 100}, now=0)
    led.unregister_node(0)
    led.commit_until(10_000)
    assert led.get_node(1, 10_000).raw < SCALE


def test_commit_order_is_monotone():
    led = fresh(consensus_delay=4000)
    a = led.update_node_reputation([TransactionRecord(10, 0)], {Tier.EDGE: 100}, now=5000)
    b = led.update_node_reputation([TransactionRecord(10, 0)], {Tier.EDGE: 100}, now=3000)
    assert b >= a


def test_round_trip_json():
    led = fresh()
    led.update_node_reputation([TransactionRecord(25, 0)], {Tier.EDGE: 100}, now=0)
    led.commit_until(4000)
    led.update_node_reputation([TransactionRecord(50, 1)], {Tier.EDGE: 100}, now=5000)
    copy = Ledger.loads(led.dumps())
    assert copy.dumps() == led.dumps()
    assert copy.get_node(1, 9000) == led.get_node(1, 9000)


def test_gas_schedule_file(tmp_path):
    p = tmp_path / "gas.yaml"
    p.write_text("registerNode: 100\nupdateNodeReputation: {base: 10, step: 1, max: 12}\n")
    gas = GasSchedule.load(p)
    assert gas.register == 100 and gas.update.cost(5) == 12 and gas.get_score == 21_204


def test_concurrent_updates_serialize():
    led = fresh(n=1)

    def worker():
        for _ in range(50):
            led.update_node_reputation([TransactionRecord(10, 0)], {Tier.EDGE: 100}, now=0)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert led.pending_count() == 200
    assert led.gas_meter == 200 * 21_638


def closed_form(initial: Fraction, incs, omega: Fraction) -> Fraction:
    n = len(incs)
    total = (1 - omega) ** n * initial
    for i, inc in enumerate(incs, start=1):
        total += omega * (1 - omega) ** (n - i) * inc
    return total


def test_closed_form_oracle_small():
    w = Fraction(3, 10)
    r = Fraction(1)
    incs = [Fraction(1, 2), Fraction(0), Fraction(3, 4)]
    for inc in incs:
        r = (1 - w) * r + w * inc
    assert r == closed_form(Fraction(1), incs, w)


def test_fixed_point_rejects_out_of_range():
    with pytest.raises(DomainError):
        FixedRep(SCALE + 1)
    assert FixedRep.from_float(0.25).raw == 250_000
    assert float(FixedRep(500_000)) == 0.5
    with pytest.raises(DomainError):
        incentive_raw(1, 0)
