import math

import numpy as np
import pytest

from fresco.decision import (UNSAT, Candidate, ConstraintSet, Demand, Engine, ExecResult, Policy, Prediction,
                             ScoreUnits, ScoreWeights, fresco_offload, local_optima, minlp_select, offload,
                             reputation_threshold, score, score_all, smt_select, sq_select, violations)
from fresco.errors import ConfigurationError
from fresco.infra import Tier
from fresco.ledger import SCALE, FixedRep, TransactionRecord

from oracles import oracle_select, oracle_sq, random_instance

UNIT = ScoreUnits(1.0, 1.0, 1.0)
NABLA = {Tier.EDGE: 100.0, Tier.CLOUD: 100.0, Tier.MOBILE: 100.0}


def cand(i, rt, energy=0.0, cost=0.0, tier=Tier.EDGE, wait=0.0):
    return Candidate(i, tier, Prediction(rt, energy, cost, wait))


def reps_of(cands, value=SCALE):
    return {c.node_id: FixedRep(value) for c in cands}


def test_optima_single_and_mixed():
    assert local_optima([cand(1, 5, 2, 3)]) == (5, 2, 3)
    assert local_optima([cand(1, 5, 9, 9), cand(2, 9, 1, 9), cand(3, 9, 9, 0.5)]) == (5, 1, 0.5)
    assert local_optima([Candidate(1, Tier.EDGE, None)]) is None


def test_optima_match_scan():
    rng = np.random.default_rng(0)
    cs = [cand(i, *rng.random(3)) for i in range(5)]
    scan = tuple(min(getattr(c.predicted, f) for c in cs) for f in ("rt", "energy", "cost"))
    assert local_optima(cs) == scan


def test_score_zero_at_optimum():
    c = cand(1, 5, 2, 3)
    assert score(c, (5, 2, 3), ScoreWeights()) == 0


def test_pure_latency_ranking():
    cs = [cand(1, 30, 0, 9), cand(2, 10, 5, 0), cand(3, 20, 1, 1)]
    s = score_all(cs, ScoreWeights(1, 0, 0))
    assert sorted(s, key=s.get) == [2, 3, 1]


def test_four_candidates_hand_computed():
    cs = [cand(1, 10, 0.5, 2), cand(2, 12, 0.2, 1), cand(3, 20, 0.1, 0), cand(4, 11, 0.4, 3)]
    s = score_all(cs, ScoreWeights(0.5, 0.4, 0.1), UNIT)
    # optima (10, 0.1, 0)
    assert s[1] == pytest.approx(0.5 * 0 + 0.4 * 0.4 + 0.1 * 2)
    assert s[2] == pytest.approx(0.5 * 2 + 0.4 * 0.1 + 0.1 * 1)
    assert s[3] == pytest.approx(0.5 * 10 + 0 + 0)
    assert s[4] == pytest.approx(0.5 * 1 + 0.4 * 0.3 + 0.1 * 3)


def test_default_units_read_energy_in_millijoules():
    cs = [cand(1, 10, 0.001, 0), cand(2, 10, 0.0, 0)]
    assert score_all(cs, ScoreWeights(0, 1, 0))[1] == pytest.approx(1.0)


def test_weights_validation():
    with pytest.raises(ConfigurationError):
        ScoreWeights(0.5, 0.5, 0.5)
    with pytest.raises(ConfigurationError):
        ScoreWeights(1.2, -0.2, 0)


def test_reputation_threshold_examples():
    reps = {i: FixedRep.from_float(v) for i, v in enumerate([0.9, 0.8, 0.7, 0.6])}
    assert reputation_threshold(reps, 3) == 700_000
    assert reputation_threshold(reps, 1) == 900_000
    assert reputation_threshold(reps, 10) == 600_000
    assert reputation_threshold({}, 3) == 0
    with pytest.raises(ConfigurationError):
        reputation_threshold(reps, 0)


def test_smt_single_within_timing():
    cs = [cand(1, 150), cand(2, 90), cand(3, 120)]
    cons = ConstraintSet(NABLA, deadline=1000)
    v = smt_select({1: 0, 2: 5, 3: 1}, cs, reps_of(cs), cons)
    assert v.node_id == 2 and v.sat


def test_smt_unsat_on_reputation():
    cs = [cand(1, 10), cand(2, 10)]
    cons = ConstraintSet(NABLA, deadline=1000, rep_threshold=900_000)
    assert smt_select({1: 0, 2: 0}, cs, reps_of(cs, 500_000), cons) == UNSAT


def test_smt_tie_breaks_on_id():
    cs = [cand(5, 10), cand(3, 10), cand(9, 10)]
    assert smt_select({5: 1, 3: 1, 9: 1}, cs, reps_of(cs), ConstraintSet(NABLA, 1000)).node_id == 3


def test_unstable_never_selected():
    cs = [Candidate(1, Tier.EDGE, None), cand(2, 50)]
    cons = ConstraintSet(NABLA, 1000)
    assert smt_select({2: 9}, cs, reps_of(cs), cons).node_id == 2
    assert violations(cs[0], FixedRep(SCALE), cons) == ["stability"]


def test_violation_names():
    c = Candidate(1, Tier.CLOUD, Prediction(50, 3, 9), cpu=1, mem=1, stor=1, demand=Demand(2, 2, 2))
    cons = ConstraintSet({Tier.CLOUD: 10}, deadline=40, price_cap=5, rep_threshold=500_000, battery=1,
                         task_ready=False)
    assert violations(c, FixedRep(0), cons) == ["reputation", "battery", "storage", "cpu", "memory", "ready",
                                                 "timing", "price", "deadline"]


def test_constraint_validation():
    with pytest.raises(ConfigurationError):
        ConstraintSet(NABLA, deadline=0)
    with pytest.raises(ConfigurationError):
        ConstraintSet(NABLA, deadline=5, rep_threshold=SCALE + 1)
    with pytest.raises(ConfigurationError):
        ConstraintSet({Tier.EDGE: 0}, deadline=5)


def test_input_checks():
    cs = [cand(1, 10), cand(1, 10)]
    with pytest.raises(ConfigurationError):
        smt_select({1: 0}, cs, reps_of(cs), ConstraintSet(NABLA, 100))
    with pytest.raises(ConfigurationError):
        smt_select({}, [cand(1, 10)], {1: FixedRep(0)}, ConstraintSet(NABLA, 100))


def test_minlp_ignores_reputation():
    cs = [cand(1, 10), cand(2, 10)]
    cons = ConstraintSet(NABLA, 1000, rep_threshold=SCALE)
    assert minlp_select({1: 2, 2: 1}, cs, cons).node_id == 2


def test_sq_examples():
    cs = [cand(1, 10, tier=Tier.EDGE, wait=9), cand(2, 10, tier=Tier.EDGE, wait=1),
          cand(3, 10, tier=Tier.CLOUD, wait=0), cand(4, 10, tier=Tier.MOBILE, wait=5)]
    reps = {1: FixedRep(900_000), 2: FixedRep(800_000), 3: FixedRep(SCALE), 4: FixedRep(700_000)}
    assert sq_select(cs, reps, 1) == 1
    assert sq_select(cs, reps, 3) == 2
    for k in range(1, 5):
        assert sq_select(cs, reps, k) != 3
    assert sq_select([cand(3, 1, tier=Tier.CLOUD)], {3: FixedRep(1)}, 2) is None


def test_sq_six_candidates_oracle():
    rng = np.random.default_rng(4)
    for _ in range(200):
        cs = [cand(i, 10, tier=[Tier.EDGE, Tier.MOBILE, Tier.CLOUD][int(rng.integers(3))],
                   wait=float(rng.integers(0, 4))) for i in range(6)]
        reps = {c.node_id: FixedRep(int(rng.integers(0, 4)) * 250_000) for c in cs}
        assert sq_select(cs, reps, 3) == oracle_sq(cs, reps, 3)


def test_randomized_against_oracle():
    rng = np.random.default_rng(123)
    for _ in range(2000):
        scores, cands, reps, cons = random_instance(rng)
        assert smt_select(scores, cands, reps, cons).node_id == oracle_select(scores, cands, reps, cons)
        assert minlp_select(scores, cands, cons).node_id == oracle_select(scores, cands, reps, cons, use_rep=False)
        k = int(rng.integers(1, 5))
        assert sq_select(cands, reps, k) == oracle_sq(cands, reps, k)


# --- Algorithm 1 --------------------------------------------------------------

def _run(cands, results, tasks=("t",), k=3, engine=Engine.FRESCO):
    calls = []

    def executor(task, c):
        calls.append(c.node_id)
        return results[c.node_id]

    out = offload(list(tasks), lambda t: cands, reps_of(cands), lambda t, rp: ConstraintSet(NABLA, 1000, rep_threshold=rp),
                  executor, Policy(engine, ScoreWeights(1, 0, 0), k))
    return out, calls


def test_all_succeed_one_record_per_task():
    cs = [cand(1, 10), cand(2, 20)]
    out, _ = _run(cs, {1: ExecResult(True, 11), 2: ExecResult(True, 21)}, tasks=("a", "b", "c"))
    assert len(out.transactions) == 3
    assert all(tx == TransactionRecord(11, 1) for tx in out.transactions)


def test_failure_then_success():
    cs = [cand(1, 10), cand(2, 20)]
    out, calls = _run(cs, {1: ExecResult(False), 2: ExecResult(True, 21)})
    assert out.transactions == [TransactionRecord(0, 1, failed=True), TransactionRecord(21, 2)]
    assert calls == [1, 2]
    d = out.decisions[0]
    assert d.chosen == 2 and not d.fallback and d.attempts == [(1, False), (2, True)]


def test_empty_candidates():
    out, calls = _run([], {})
    assert out.transactions == [] and calls == []
    assert out.decisions[0].fallback


def test_all_fail_falls_back():
    cs = [cand(1, 10), cand(2, 20)]
    out, _ = _run(cs, {1: ExecResult(False), 2: ExecResult(False)})
    assert [t.failed for t in out.transactions] == [True, True]
    assert out.decisions[0].fallback and out.decisions[0].chosen is None


def test_threshold_ignores_infeasible_servers():
    # an untried infeasible server must not push the only feasible one out of the top-k pool
    cs = [cand(1, 500), cand(2, 500), cand(3, 10, tier=Tier.CLOUD)]
    reps = {1: FixedRep(SCALE), 2: FixedRep(SCALE), 3: FixedRep(400_000)}
    out = offload(["t"], lambda t: cs, reps, lambda t, rp: ConstraintSet(NABLA, 1000, rep_threshold=rp),
                  lambda t, c: ExecResult(True, 10), Policy(Engine.FRESCO, ScoreWeights(), k=1))
    assert out.decisions[0].chosen == 3


def test_fresco_wrapper_and_engines():
    cs = [cand(1, 10, tier=Tier.CLOUD), cand(2, 20, wait=0)]
    out = fresco_offload(["t"], lambda t: cs, reps_of(cs), lambda t, rp: ConstraintSet(NABLA, 1000, rep_threshold=rp),
                         lambda t, c: ExecResult(True, 5))
    assert out.decisions[0].chosen == 1
    out, _ = _run(cs, {1: ExecResult(True, 5), 2: ExecResult(True, 5)}, engine=Engine.SQ)
    assert out.decisions[0].chosen == 2
    assert out.decisions[0].decision_ms >= 0
