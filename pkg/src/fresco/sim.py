"""Seeded discrete-event simulation of one mobile device offloading a sequence of apps.

Apps arrive at a fixed interval while the device walks through the cells, one
dwell period each. Per task the device reads reputations, snapshots the load
of the candidates in its cell, decides, offloads (possibly failing on an
unavailable node and retrying), and submits the attempt records to the ledger,
which makes them visible one consensus delay later.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping

import numpy as np

from .decision import (Candidate, ConstraintSet, Demand, Engine, ExecResult, Policy, Prediction, ScoreWeights,
                       offload, smt_select)
from .errors import ConfigurationError, UnstableQueue
from .infra import KB_BITS, InfrastructureMap, Node, Tier, attach_availability
from .ledger import SCALE, FixedRep, Ledger, TransactionRecord
from .perf import (CostSchedule, EnergyState, LatencyBreakdown, NodeLoad, comm_service, exec_service, response_time,
                   task_energy, tx_power, utilization_cost)
from .workload import (CATALOG_PROFILE, RANDOM_PROFILE, AppDag, TaskSpec, WorkloadProfile, build_app, ready_tasks,
                       sample_background_load, sample_random_app)


class EventKind(str, Enum):
    ARRIVAL = "ARRIVAL"
    DECISION = "DECISION"
    OFFLOAD_DONE = "OFFLOAD_DONE"
    EXEC_DONE = "EXEC_DONE"
    DELIVER_DONE = "DELIVER_DONE"
    FAILURE = "FAILURE"
    LEDGER_COMMIT = "LEDGER_COMMIT"
    CELL_MOVE = "CELL_MOVE"
    PEER_REPORT = "PEER_REPORT"


@dataclass(frozen=True)
class Event:
    time: float  # ms
    kind: EventKind
    detail: tuple = ()


class EventQueue:
    """Min-heap on time; FIFO among equal timestamps."""

    def __init__(self):
        self._heap: list[tuple[float, int, Event]] = []
        self._seq = itertools.count()

    def push(self, ev: Event) -> None:
        heapq.heappush(self._heap, (ev.time, next(self._seq), ev))

    def pop(self) -> Event:
        return heapq.heappop(self._heap)[2]

    def __len__(self) -> int:
        return len(self._heap)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    run: int = 0
    apps: int = 100
    app: str = "RANDOM"  # INTRASAFED | MOBIAR | NAVIAR | RANDOM
    engine: Engine = Engine.FRESCO
    weights: ScoreWeights = ScoreWeights()
    k: int = 3
    consensus_delay: float = 4000.0  # ms
    app_interval: float = 10_000.0  # ms between app arrivals
    cells: int | None = None  # cells visited; default: every cell of the map
    profile: WorkloadProfile | None = None  # default: RANDOM workload for RANDOM apps, catalog otherwise
    max_exec_sources: int = 3
    max_chan_sources: int = 2
    cost: CostSchedule = CostSchedule()
    price_cap: float = math.inf
    solver: str = "builtin"  # or "z3"
    charge_reads: bool = True
    reshuffle_availability: bool = True
    catalog: Mapping | None = None
    # other devices sharing the ledger: every peer_interval ms each server is
    # tried by a peer with probability peer_share (0 disables)
    peer_interval: float = 2000.0
    peer_share: float = 0.5

    def __post_init__(self):
        if self.apps < 1 or self.app_interval <= 0 or self.k < 1:
            raise ConfigurationError("apps, app_interval and k must be positive")
        if self.cells is not None and self.cells < 1:
            raise ConfigurationError("cells must be positive")
        if self.max_exec_sources < 0 or self.max_chan_sources < 0:
            raise ConfigurationError("source counts must be non-negative")
        if self.peer_interval < 0 or not 0.0 <= self.peer_share <= 1.0:
            raise ConfigurationError("peer_interval must be >= 0 and peer_share in [0, 1]")
        if self.solver not in ("builtin", "z3"):
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        object.__setattr__(self, "engine", Engine(self.engine))

    @property
    def workload(self) -> WorkloadProfile:
        if self.profile is not None:
            return self.profile
        return RANDOM_PROFILE if self.app.upper() == "RANDOM" else CATALOG_PROFILE

    @property
    def span(self) -> float:
        return self.apps * self.app_interval


@dataclass(frozen=True)
class MetricsRecord:
    run: int
    app_index: int
    workload: str  # configured selection (RANDOM or a catalog app)
    app: str  # app actually simulated
    engine: str
    rt_ms: float
    battery_pct: float
    cost: float
    violated: bool
    failures: int
    gas_wei: int
    edge: int  # successful placements per tier
    cloud: int
    mobile: int
    fallbacks: int


@dataclass(frozen=True)
class PlacementRecord:
    run: int
    app_index: int
    task: str
    offloadable: bool
    tier: str
    node: int
    attempts: int
    fallback: bool
    rt_ms: float
    predicted_u: float  # highest stage utilization on the chosen path


@dataclass
class EpisodeResult:
    records: list[MetricsRecord] = field(default_factory=list)
    placements: list[PlacementRecord] = field(default_factory=list)
    decision_ms: list[float] = field(default_factory=list)  # per offload decision, wall clock
    events: list[Event] = field(default_factory=list)


def advance_mobility(now: float, span: float, cells: int) -> int:
    """Cell index for time ``now``: equal dwell in each of ``cells`` cells across ``span``."""
    return min(int(now // (span / cells)), cells - 1)


def record_violation(app: AppDag, ap: float) -> bool:
    return ap > app.deadline


def attempt_offload(node: Node, lat: LatencyBreakdown, now: float, span: float) -> tuple[bool, float]:
    """``(True, rt)`` if the node stays up for the whole attempt, else ``(False, offload-stage penalty)``."""
    t0 = min(now / span, 1.0)
    t1 = min((now + lat.rt) / span, 1.0)
    if node.availability.covers(t0, t1):
        return True, lat.rt
    return False, lat.t_offload


def _sample_loads(infra: InfrastructureMap, cell: int, cfg: SimConfig) -> dict[int, NodeLoad]:
    """Background load of every server reachable from ``cell``; seeded by (run seed, cell)."""
    rng = np.random.default_rng([cfg.seed, 1, cell])
    prof = cfg.workload
    loads = {}
    for node in sorted(infra.edge_nodes_in(cell) + [infra.node(infra.cloud_id)], key=lambda n: n.id):
        exec_src = []
        for _ in range(int(rng.integers(0, cfg.max_exec_sources + 1))):
            rate, _ = sample_background_load(prof, rng)
            exec_src.append((rate, float(rng.exponential(prof.bg_mi))))
        chans = []
        for _ in range(2):
            src = []
            for _ in range(int(rng.integers(0, cfg.max_chan_sources + 1))):
                rate, kb = sample_background_load(prof, rng)
                src.append((rate, kb * KB_BITS))
            base = infra.channel_for(node)
            chans.append((base.with_util(sum(r * b for r, b in src)), tuple(src)))
        loads[node.id] = NodeLoad(tuple(exec_src), chans[0][0], chans[0][1], chans[1][0], chans[1][1])
    return loads


def _max_utilization(node: Node, load: NodeLoad) -> float:
    u = sum(r * mi for r, mi in load.exec_sources) / node.spec.mips
    if node.tier is Tier.MOBILE:
        return u
    for ch, src in ((load.uplink, load.uplink_sources), (load.downlink, load.downlink_sources)):
        u = max(u, sum(r * b for r, b in src) / ch.bw_total)
    return u


def register_all(ledger: Ledger, infra: InfrastructureMap) -> None:
    for n in sorted(infra.remote_nodes, key=lambda n: n.id):
        ledger.register_node(n.id, n.tier)


def run_episode(cfg: SimConfig, infra: InfrastructureMap, ledger: Ledger | None = None,
                record_events: bool = False) -> EpisodeResult:
    """Simulate ``cfg.apps`` apps; deterministic given ``cfg.seed`` apart from the wall-clock timings."""
    if ledger is None:
        ledger = Ledger(consensus_delay=cfg.consensus_delay, charge_reads=cfg.charge_reads)
        register_all(ledger, infra)
    missing = [n.id for n in infra.remote_nodes if n.id not in set(ledger.registered())]
    if missing:
        raise ConfigurationError(f"nodes not registered on the ledger: {missing[:5]}")
    if cfg.reshuffle_availability:
        edge = sorted((n for n in infra.nodes if n.tier is Tier.EDGE), key=lambda n: n.id)
        infra = attach_availability(infra, {str(n.id): n.availability for n in edge}, cfg.seed)
    n_cells = cfg.cells or len(infra.cells)
    if n_cells > len(infra.cells):
        raise ConfigurationError(f"{n_cells} cells requested, map has {len(infra.cells)}")

    solver = smt_select
    if cfg.solver == "z3":
        from .smt import z3_select
        solver = z3_select
    policy = Policy(cfg.engine, cfg.weights, cfg.k, solver)
    app_rng = np.random.default_rng([cfg.seed, 0])
    span = cfg.span
    mobile = infra.mobile
    energy = EnergyState()
    result = EpisodeResult()
    loads_by_cell: dict[int, dict[int, NodeLoad]] = {}
    queue = EventQueue()
    last_time = -math.inf

    def emit(ev: Event) -> None:
        queue.push(ev)

    for i in range(cfg.apps):
        emit(Event(i * cfg.app_interval, EventKind.ARRIVAL, (i,)))
    for c in range(n_cells):
        emit(Event(c * span / n_cells, EventKind.CELL_MOVE, (c,)))
    if cfg.peer_interval > 0 and cfg.peer_share > 0:
        for tick in range(int(span // cfg.peer_interval) + 1):
            emit(Event(tick * cfg.peer_interval, EventKind.PEER_REPORT, (tick,)))
    servers_all = sorted(infra.remote_nodes, key=lambda n: n.id)

    pending_apps: list[tuple[int, AppDag, float]] = []
    state: dict = {"app": None}

    def loads_for(cell: int) -> dict[int, NodeLoad]:
        if cell not in loads_by_cell:
            loads_by_cell[cell] = _sample_loads(infra, cell, cfg)
        return loads_by_cell[cell]

    def predict(task: TaskSpec, node: Node, load: NodeLoad) -> tuple[LatencyBreakdown, Prediction] | None:
        try:
            lat = response_time(task, node.spec, load)
        except UnstableQueue:
            return None
        if not all(math.isfinite(x) for x in (lat.t_offload, lat.t_exec, lat.t_deliver)):
            return None
        ch = load.uplink if node.tier is not Tier.MOBILE else None
        ej = task_energy(energy, mobile.spec.cores, node.tier, lat, ch)
        cost = utilization_cost(node.tier, task, lat.t_exec, cfg.cost)
        service = exec_service(node.spec, task.mi)
        if node.tier is not Tier.MOBILE:
            service += comm_service(load.uplink, task.data_in * KB_BITS) + comm_service(load.downlink, task.data_out * KB_BITS)
        return lat, Prediction(lat.rt, ej, cost, max(lat.rt - service, 0.0))

    def local_latency(task: TaskSpec) -> LatencyBreakdown:
        return response_time(task, mobile.spec, NodeLoad())

    def start_next_app(now: float) -> None:
        if state["app"] is None and pending_apps:
            idx, dag, arrived = pending_apps.pop(0)
            state["app"] = {
                "index": idx, "dag": dag, "start": arrived, "done": set(), "placed": {}, "failures": 0,
                "cost": 0.0, "tiers": {Tier.EDGE: 0, Tier.CLOUD: 0, Tier.MOBILE: 0}, "fallbacks": 0,
                "gas": 0,
            }
            emit(Event(max(now, arrived), EventKind.DECISION, (idx,)))

    def finish_app(now: float) -> None:
        app = state["app"]
        dag = app["dag"]
        ap = now - app["start"]
        t = app["tiers"]
        result.records.append(MetricsRecord(
            cfg.run, app["index"], cfg.app.upper(), dag.name, cfg.engine.value, ap, 100.0 * energy.battery_lifetime,
            app["cost"], record_violation(dag, ap), app["failures"], app["gas"],
            t[Tier.EDGE], t[Tier.CLOUD], t[Tier.MOBILE], app["fallbacks"],
        ))
        state["app"] = None
        start_next_app(now)

    def run_local(task: TaskSpec, now: float, fallback: bool) -> float:
        app = state["app"]
        lat = local_latency(task)
        energy.charge(task_energy(energy, mobile.spec.cores, Tier.MOBILE, lat))
        app["tiers"][Tier.MOBILE] += 1
        app["fallbacks"] += int(fallback)
        end = now + lat.rt
        emit(Event(end, EventKind.EXEC_DONE, (app["index"], task.name, mobile.id)))
        result.placements.append(PlacementRecord(cfg.run, app["index"], task.name, task.offloadable,
                                                 Tier.MOBILE.value, mobile.id, 0, fallback, lat.rt,
                                                 0.0))
        return end

    def peer_reports(now: float, tick: int) -> None:
        """Other devices offload to a random subset of servers and report to the same ledger."""
        rng = np.random.default_rng([cfg.seed, 2, tick])
        txs, nabla = [], {}
        for node in servers_all:
            if rng.random() >= cfg.peer_share:
                continue
            dag = sample_random_app(cfg.workload, rng, cfg.catalog)
            offl = [t for t in dag.tasks if t.offloadable]
            task = offl[int(rng.integers(len(offl)))]
            cell = node.cell if node.tier is Tier.EDGE else advance_mobility(now, span, n_cells)
            load = loads_for(min(cell, len(infra.cells) - 1)).get(node.id)
            if load is None:
                continue
            try:
                lat = response_time(task, node.spec, load)
            except UnstableQueue:
                continue
            ok, _ = attempt_offload(node, lat, now, span)
            txs.append(TransactionRecord(lat.rt if ok else 0.0, node.id, failed=not ok))
            nabla[node.id] = dag.nabla(node.tier)
        if txs:
            commit = ledger.update_node_reputation(txs, nabla, now)
            emit(Event(commit, EventKind.LEDGER_COMMIT, (len(txs),)))

    def decide(now: float) -> None:
        app = state["app"]
        dag: AppDag = app["dag"]
        ready = ready_tasks(dag, app["done"])
        ti = min(ready)
        task = dag.tasks[ti]
        if not task.offloadable:
            end = run_local(task, now, fallback=False)
        else:
            gas0 = ledger.gas_meter
            cell = advance_mobility(now, span, n_cells)
            loads = loads_for(cell)
            servers = sorted(infra.edge_nodes_in(cell), key=lambda n: n.id) + [infra.node(infra.cloud_id)]
            lats: dict[int, LatencyBreakdown] = {}
            reps: dict[int, FixedRep] = {mobile.id: FixedRep(SCALE)}
            clock = {"t": now, "attempts": 0}

            def candidates_for(task: TaskSpec) -> list[Candidate]:
                out = []
                for node in servers + [mobile]:
                    load = loads.get(node.id, NodeLoad())
                    pr = predict(task, node, load)
                    if pr is not None:
                        lats[node.id] = pr[0]
                    if node.tier is not Tier.MOBILE:
                        reps[node.id] = ledger.get_reputation_score(node.id, now)
                    held = app["placed"].get(node.id, Demand())
                    out.append(Candidate(
                        node.id, node.tier, pr[1] if pr else None,
                        cpu=node.spec.mips * 1.0, mem=node.spec.ram, stor=node.spec.storage * 1e6,
                        demand=Demand(held.mi + task.mi, held.mem + task.ram, held.data + task.data),
                    ))
                return out

            def constraints_for(task: TaskSpec, rp: int) -> ConstraintSet:
                return ConstraintSet(
                    nabla={tier: dag.nabla(tier) for tier in Tier}, deadline=dag.deadline,
                    app_elapsed=now - app["start"], price_cap=cfg.price_cap, rep_threshold=rp,
                    battery=energy.remaining,
                )

            def executor(task: TaskSpec, cand: Candidate) -> ExecResult:
                node = infra.node(cand.node_id)
                lat = lats[cand.node_id]
                clock["attempts"] += 1
                ok, dt = attempt_offload(node, lat, clock["t"], span)
                t0 = clock["t"]
                clock["t"] += dt
                if not ok:
                    app["failures"] += 1
                    energy.charge(tx_power(loads[node.id].uplink) * lat.t_offload / 1000.0)
                    emit(Event(clock["t"], EventKind.FAILURE, (app["index"], task.name, node.id)))
                    return ExecResult(False)
                energy.charge(task_energy(energy, mobile.spec.cores, node.tier, lat,
                                          loads[node.id].uplink if node.tier is not Tier.MOBILE else None))
                if node.tier is not Tier.MOBILE:
                    emit(Event(t0 + lat.t_offload, EventKind.OFFLOAD_DONE, (app["index"], task.name, node.id)))
                    emit(Event(t0 + lat.t_offload + lat.t_exec, EventKind.EXEC_DONE, (app["index"], task.name, node.id)))
                    emit(Event(clock["t"], EventKind.DELIVER_DONE, (app["index"], task.name, node.id)))
                else:
                    emit(Event(clock["t"], EventKind.EXEC_DONE, (app["index"], task.name, node.id)))
                return ExecResult(True, lat.rt)

            outcome = offload([task], candidates_for, reps, constraints_for, executor, policy)
            dec = outcome.decisions[0]
            result.decision_ms.append(dec.decision_ms)
            end = clock["t"]
            if dec.chosen is None:
                end = run_local(task, end, fallback=True)
            else:
                node = infra.node(dec.chosen)
                lat = lats[dec.chosen]
                app["tiers"][node.tier] += 1
                app["cost"] += utilization_cost(node.tier, task, lat.t_exec, cfg.cost)
                held = app["placed"].get(node.id, Demand())
                app["placed"][node.id] = Demand(held.mi + task.mi, held.mem + task.ram, held.data + task.data)
                result.placements.append(PlacementRecord(
                    cfg.run, app["index"], task.name, True, node.tier.value, node.id, clock["attempts"], False,
                    lat.rt, _max_utilization(node, loads.get(node.id, NodeLoad())),
                ))
            txs = [tx for tx in outcome.transactions if infra.node(tx.node_id).tier is not Tier.MOBILE]
            if txs:
                commit = ledger.update_node_reputation(txs, {t: dag.nabla(t) for t in (Tier.EDGE, Tier.CLOUD)}, end)
                emit(Event(commit, EventKind.LEDGER_COMMIT, (len(txs),)))
            app["gas"] += ledger.gas_meter - gas0
        app["done"].add(ti)
        if len(app["done"]) == len(dag.tasks):
            finish_app(end)
        else:
            emit(Event(end, EventKind.DECISION, (app["index"],)))

    while queue:
        ev = queue.pop()
        if ev.time < last_time:
            raise RuntimeError("event time went backwards")  # pragma: no cover
        last_time = ev.time
        if record_events:
            result.events.append(ev)
        if ev.kind is EventKind.ARRIVAL:
            dag = (sample_random_app(cfg.workload, app_rng, cfg.catalog) if cfg.app.upper() == "RANDOM"
                   else build_app(cfg.app, app_rng, cfg.catalog))
            pending_apps.append((ev.detail[0], dag, ev.time))
            start_next_app(ev.time)
        elif ev.kind is EventKind.DECISION:
            decide(ev.time)
        elif ev.kind is EventKind.LEDGER_COMMIT:
            ledger.commit_until(ev.time)
        elif ev.kind is EventKind.PEER_REPORT:
            peer_reports(ev.time, ev.detail[0])
    return result
