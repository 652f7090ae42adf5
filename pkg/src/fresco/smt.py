"""Optional z3 backend for the selection problem.

Same contract as :func:`fresco.decision.smt_select`: one boolean per candidate,
exactly one chosen, each choice implies its constraint rows, and the objective
is lexicographic (score, then node id). Numbers enter z3 as exact rationals.
"""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Mapping, Sequence

from .decision import UNSAT, Candidate, ConstraintSet, SolverVerdict, _check_inputs
from .ledger import FixedRep

try:
    import z3
except ImportError:  # pragma: no cover - optional extra
    z3 = None


def available() -> bool:
    return z3 is not None


def _q(x: float):
    f = Fraction(x)
    return z3.RealVal(f"{f.numerator}/{f.denominator}")


def _le(a: float, b: float):
    """``a <= b`` as a z3 term; infinities fold to constants."""
    if math.isinf(b):
        return z3.BoolVal(b > 0 or a == b)
    if math.isinf(a):
        return z3.BoolVal(a < 0)
    return _q(a) <= _q(b)


def z3_select(scores: Mapping[int, float], candidates: Sequence[Candidate], reps: Mapping[int, FixedRep],
              constraints: ConstraintSet) -> SolverVerdict:
    if z3 is None:
        raise RuntimeError("z3-solver is not installed")
    _check_inputs(scores, candidates, reps, True)
    cons = constraints
    opt = z3.Optimize()
    picks = []
    for c in candidates:
        if not c.stable:
            continue
        x = z3.Bool(f"x{c.node_id}")
        p = c.predicted
        rows = [
            z3.IntVal(reps[c.node_id].raw) >= z3.IntVal(cons.rep_threshold),
            _le(p.energy, cons.battery),
            _le(c.demand.data, c.stor),
            _le(c.demand.mi, c.cpu),
            _le(c.demand.mem, c.mem),
            z3.BoolVal(cons.task_ready),
            _le(p.rt, cons.nabla[c.tier]) if c.tier in cons.nabla else z3.BoolVal(False),
            _le(p.cost, cons.price_cap),
            _le(cons.app_elapsed + p.rt, cons.deadline),
        ]
        opt.add(z3.Implies(x, z3.And(*rows)))
        picks.append((c, x))
    if not picks:
        return UNSAT
    opt.add(z3.PbEq([(x, 1) for _, x in picks], 1))
    opt.minimize(z3.Sum([z3.If(x, _q(scores[c.node_id]), 0) for c, x in picks]))
    opt.minimize(z3.Sum([z3.If(x, z3.IntVal(c.node_id), 0) for c, x in picks]))
    if opt.check() != z3.sat:
        return UNSAT
    model = opt.model()
    for c, x in picks:
        if z3.is_true(model.eval(x)):
            return SolverVerdict(c.node_id, scores[c.node_id])
    return UNSAT  # pragma: no cover
