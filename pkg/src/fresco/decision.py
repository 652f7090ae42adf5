"""Candidate scoring, constraint feasibility, server selection and the retry loop.

Three selection policies share one retry loop (:func:`offload`):

* ``FRESCO``: reputation-constrained feasibility, then minimum weighted score.
* ``MINLP``: the same problem without the reputation constraint.
* ``SQ``: top-k reputation among edge and local candidates, then the shortest queue.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping, Sequence, TypeVar

from .errors import ConfigurationError
from .infra import Tier
from .ledger import SCALE, FixedRep, TransactionRecord

log = logging.getLogger("fresco.decision")

T = TypeVar("T")


class Engine(str, Enum):
    FRESCO = "FRESCO"
    MINLP = "MINLP"
    SQ = "SQ"


@dataclass(frozen=True)
class Prediction:
    rt: float  # ms
    energy: float  # J
    cost: float
    wait: float = 0.0  # ms of queueing inside rt (used by SQ)


@dataclass(frozen=True)
class Demand:
    """Resources the app would hold on a node if this task lands there (already placed + this task)."""

    mi: float = 0.0
    mem: float = 0.0  # GB
    data: float = 0.0  # KB


@dataclass(frozen=True)
class Candidate:
    node_id: int
    tier: Tier
    predicted: Prediction | None  # None: some queue on the path is unstable
    cpu: float = math.inf  # MI budget
    mem: float = math.inf  # GB
    stor: float = math.inf  # KB
    demand: Demand = Demand()

    @property
    def stable(self) -> bool:
        return self.predicted is not None


@dataclass(frozen=True)
class ScoreWeights:
    alpha: float = 0.5
    beta: float = 0.4
    gamma: float = 0.1

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0 or abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-9:
            raise ConfigurationError("score weights must be non-negative and sum to 1")


@dataclass(frozen=True)
class ConstraintSet:
    nabla: Mapping[Tier, float]  # ms per tier
    deadline: float  # ms, D
    app_elapsed: float = 0.0  # ms, AP so far
    price_cap: float = math.inf
    rep_threshold: int = 0  # raw fixed point
    battery: float = math.inf  # J left on the device
    task_ready: bool = True

    def __post_init__(self):
        if not 0 <= self.rep_threshold <= SCALE:
            raise ConfigurationError("reputation threshold must lie in [0, 1]")
        if self.deadline <= 0 or self.app_elapsed < 0 or self.price_cap < 0:
            raise ConfigurationError("deadline must be positive; elapsed time and price cap non-negative")
        if any(v <= 0 for v in self.nabla.values()):
            raise ConfigurationError("timing constraints must be positive")


@dataclass(frozen=True)
class SolverVerdict:
    node_id: int | None
    score: float | None = None

    @property
    def sat(self) -> bool:
        return self.node_id is not None


UNSAT = SolverVerdict(None)


def local_optima(candidates: Sequence[Candidate]) -> tuple[float, float, float] | None:
    preds = [c.predicted for c in candidates if c.stable]
    if not preds:
        return None
    return min(p.rt for p in preds), min(p.energy for p in preds), min(p.cost for p in preds)


@dataclass(frozen=True)
class ScoreUnits:
    """Multipliers applied to the raw gaps (ms, J, cost units) before weighting."""

    rt: float = 1.0  # per ms
    energy: float = 1000.0  # per J, i.e. gaps in mJ
    cost: float = 1.0


def score(candidate: Candidate, optima: tuple[float, float, float], weights: ScoreWeights,
          units: ScoreUnits = ScoreUnits()) -> float:
    """Weighted gap to the component-wise optima."""
    p = candidate.predicted
    opt_rt, opt_ec, opt_pr = optima
    return (weights.alpha * units.rt * (p.rt - opt_rt) + weights.beta * units.energy * (p.energy - opt_ec)
            + weights.gamma * units.cost * (p.cost - opt_pr))


def score_all(candidates: Sequence[Candidate], weights: ScoreWeights,
              units: ScoreUnits = ScoreUnits()) -> dict[int, float]:
    optima = local_optima(candidates)
    if optima is None:
        return {}
    return {c.node_id: score(c, optima, weights, units) for c in candidates if c.stable}


def reputation_threshold(reps: Mapping[int, FixedRep], k: int) -> int:
    if k < 1:
        raise ConfigurationError("k must be at least 1")
    if not reps:
        return 0
    ranked = sorted((r.raw for r in reps.values()), reverse=True)
    return ranked[min(k, len(ranked)) - 1]


def violations(c: Candidate, rep: FixedRep | None, cons: ConstraintSet, use_reputation: bool = True) -> list[str]:
    """Names of the constraints ``c`` breaks (empty when feasible)."""
    if not c.stable:
        return ["stability"]
    p, out = c.predicted, []
    if use_reputation and (rep is None or rep.raw < cons.rep_threshold):
        out.append("reputation")
    if cons.battery - p.energy < 0:
        out.append("battery")
    if c.demand.data > c.stor:
        out.append("storage")
    if c.demand.mi > c.cpu:
        out.append("cpu")
    if c.demand.mem > c.mem:
        out.append("memory")
    if not cons.task_ready:
        out.append("ready")
    if c.tier not in cons.nabla or p.rt > cons.nabla[c.tier]:
        out.append("timing")
    if p.cost > cons.price_cap:
        out.append("price")
    if cons.app_elapsed + p.rt > cons.deadline:
        out.append("deadline")
    return out


def _check_inputs(scores: Mapping[int, float], candidates: Sequence[Candidate], reps, use_reputation: bool) -> None:
    ids = [c.node_id for c in candidates]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate candidate ids")
    for c in candidates:
        if c.stable and c.node_id not in scores:
            raise ConfigurationError(f"no score for candidate {c.node_id}")
        if use_reputation and c.node_id not in reps:
            raise ConfigurationError(f"no reputation for candidate {c.node_id}")


def _argmin(scores: Mapping[int, float], feasible: Sequence[Candidate]) -> SolverVerdict:
    if not feasible:
        return UNSAT
    best = min(feasible, key=lambda c: (scores[c.node_id], c.node_id))
    return SolverVerdict(best.node_id, scores[best.node_id])


def smt_select(scores: Mapping[int, float], candidates: Sequence[Candidate], reps: Mapping[int, FixedRep],
               constraints: ConstraintSet) -> SolverVerdict:
    _check_inputs(scores, candidates, reps, True)
    return _argmin(scores, [c for c in candidates if not violations(c, reps.get(c.node_id), constraints)])


def minlp_select(scores: Mapping[int, float], candidates: Sequence[Candidate],
                 constraints: ConstraintSet) -> SolverVerdict:
    _check_inputs(scores, candidates, {}, False)
    return _argmin(scores, [c for c in candidates if not violations(c, None, constraints, use_reputation=False)])


def sq_select(candidates: Sequence[Candidate], reps: Mapping[int, FixedRep], k: int) -> int | None:
    """Shortest predicted queue among the ``k`` most reputable edge/local candidates."""
    if k < 1:
        raise ConfigurationError("k must be at least 1")
    pool = [c for c in candidates if c.tier in (Tier.EDGE, Tier.MOBILE) and c.stable]
    pool.sort(key=lambda c: (-reps[c.node_id].raw, c.node_id))
    top = pool[:k]
    if not top:
        return None
    return min(top, key=lambda c: (c.predicted.wait, c.node_id)).node_id


# --- Algorithm 1 --------------------------------------------------------------

@dataclass(frozen=True)
class ExecResult:
    ok: bool
    rt: float = 0.0  # measured ms on success


@dataclass
class TaskDecision:
    task: object
    attempts: list[tuple[int, bool]] = field(default_factory=list)  # (node, success)
    chosen: int | None = None  # node that ran the task; None means local fallback
    fallback: bool = False
    solver_calls: int = 0
    decision_ms: float = 0.0  # wall time spent scoring and solving


@dataclass
class OffloadOutcome:
    transactions: list[TransactionRecord] = field(default_factory=list)
    decisions: list[TaskDecision] = field(default_factory=list)


Selector = Callable[[Mapping[int, float], Sequence[Candidate], Mapping[int, FixedRep], ConstraintSet], SolverVerdict]


@dataclass
class Policy:
    engine: Engine = Engine.FRESCO
    weights: ScoreWeights = ScoreWeights()
    k: int = 3
    solver: Selector = smt_select  # FRESCO backend
    units: ScoreUnits = ScoreUnits()

    def choose(self, scores, candidates, reps, cons: ConstraintSet) -> int | None:
        if self.engine is Engine.FRESCO:
            return self.solver(scores, candidates, reps, cons).node_id
        if self.engine is Engine.MINLP:
            return minlp_select(scores, candidates, cons).node_id
        return sq_select(candidates, reps, self.k)


def offload(tasks: Sequence[T], candidates_for: Callable[[T], Sequence[Candidate]], reps: Mapping[int, FixedRep],
            constraints_for: Callable[[T, int], ConstraintSet], executor: Callable[[T, Candidate], ExecResult],
            policy: Policy = Policy()) -> OffloadOutcome:
    """Run the decide/offload/retry loop for each task in order.

    The reputation threshold is the k-th highest reputation among the remote
    candidates that meet every other constraint, so only servers able to serve
    the task compete for the top-k pool. A failed attempt is recorded as ``(0, node, failed)``
    and the node is dropped before the solver is asked again; an empty list or an
    unsatisfiable residue ends the loop with the local fallback.
    """
    out = OffloadOutcome()
    for task in tasks:
        t0 = time.perf_counter()
        cands = list(candidates_for(task))
        scores = score_all(cands, policy.weights, policy.units)
        cons = constraints_for(task, 0)
        eligible = {c.node_id: reps[c.node_id] for c in cands
                    if c.tier is not Tier.MOBILE and not violations(c, None, cons, use_reputation=False)}
        cons = replace(cons, rep_threshold=reputation_threshold(eligible, policy.k))
        dec = TaskDecision(task)
        spent = time.perf_counter() - t0
        while cands:
            t0 = time.perf_counter()
            sel = policy.choose(scores, cands, reps, cons)
            dec.solver_calls += 1
            spent += time.perf_counter() - t0
            if sel is None:
                break
            cand = next(c for c in cands if c.node_id == sel)
            res = executor(task, cand)
            dec.attempts.append((sel, res.ok))
            if res.ok:
                out.transactions.append(TransactionRecord(res.rt, sel))
                dec.chosen = sel
                break
            out.transactions.append(TransactionRecord(0.0, sel, failed=True))
            cands = [c for c in cands if c.node_id != sel]
            scores.pop(sel, None)
        dec.fallback = dec.chosen is None
        dec.decision_ms = spent * 1000.0
        out.decisions.append(dec)
        log.debug("task=%s engine=%s candidates=%d attempts=%s verdict=%s decision_ms=%.3f",
                  getattr(task, "name", task), policy.engine.value, len(scores), dec.attempts,
                  "LOCAL" if dec.fallback else dec.chosen, dec.decision_ms)
    return out


def fresco_offload(tasks, candidates_for, reps, constraints_for, executor,
                   weights: ScoreWeights = ScoreWeights(), k: int = 3, solver: Selector = smt_select) -> OffloadOutcome:
    return offload(tasks, candidates_for, reps, constraints_for, executor,
                   Policy(Engine.FRESCO, weights, k, solver))
