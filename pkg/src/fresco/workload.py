"""Typed tasks, the DAG application catalog and stochastic workload generators."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .errors import ConfigurationError
from .infra import Tier


class TaskKind(str, Enum):
    DI = "DI"
    CI = "CI"
    MODERATE = "MODERATE"


# (MI, input KB, output KB) ranges per kind; "M cycles" are read as MI.
KIND_RANGES: dict[TaskKind, tuple[tuple[float, float], tuple[float, float], tuple[float, float]]] = {
    TaskKind.DI: ((100, 200), (15, 20), (25, 30)),
    TaskKind.CI: ((550, 650), (4, 8), (4, 8)),
    TaskKind.MODERATE: ((100, 200), (4, 8), (4, 8)),
}


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: TaskKind
    mi: float
    data_in: float  # KB
    data_out: float  # KB
    ram: float  # GB
    offloadable: bool = True

    def __post_init__(self):
        (mi_lo, mi_hi), (in_lo, in_hi), (out_lo, out_hi) = KIND_RANGES[self.kind]
        if not (mi_lo <= self.mi <= mi_hi and in_lo <= self.data_in <= in_hi and out_lo <= self.data_out <= out_hi):
            raise ConfigurationError(f"task {self.name}: values outside the {self.kind.value} ranges")
        if self.ram <= 0:
            raise ConfigurationError(f"task {self.name}: ram must be positive")

    @property
    def data(self) -> float:
        """Total KB moved for the task (input plus output)."""
        return self.data_in + self.data_out


class AppName(str, Enum):
    INTRASAFED = "INTRASAFED"
    MOBIAR = "MOBIAR"
    NAVIAR = "NAVIAR"


@dataclass(frozen=True)
class TierConstraint:
    proc: float  # ms
    net: float  # ms

    @property
    def total(self) -> float:
        return self.proc + self.net


@dataclass(frozen=True)
class AppDag:
    name: str
    tasks: tuple[TaskSpec, ...]
    edges: tuple[tuple[int, int], ...]
    deadline: float  # ms, D
    constraints: Mapping[Tier, TierConstraint]

    def __post_init__(self):
        n = len(self.tasks)
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise ConfigurationError(f"{self.name}: bad edge ({a}, {b})")
        if topological_order(n, self.edges) is None:
            raise ConfigurationError(f"{self.name}: edges contain a cycle")
        if n and self.predecessors(0):
            raise ConfigurationError(f"{self.name}: first task must have no predecessors")

    def predecessors(self, i: int) -> set[int]:
        return {a for a, b in self.edges if b == i}

    def nabla(self, tier: Tier) -> float:
        """Timing constraint fed to the incentive: proc + net remotely, proc only locally."""
        c = self.constraints[tier]
        return c.proc if tier is Tier.MOBILE else c.total


def topological_order(n: int, edges: Sequence[tuple[int, int]]) -> list[int] | None:
    indeg = [0] * n
    succ: list[list[int]] = [[] for _ in range(n)]
    for a, b in edges:
        indeg[b] += 1
        succ[a].append(b)
    ready = sorted(i for i in range(n) if indeg[i] == 0)
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in succ[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
        ready.sort()
    return order if len(order) == n else None


def ready_tasks(dag: AppDag, completed: set[int]) -> set[int]:
    """Tasks whose predecessors are all completed and which are not completed themselves."""
    if not completed <= set(range(len(dag.tasks))):
        raise ConfigurationError("completed set references unknown tasks")
    return {i for i in range(len(dag.tasks)) if i not in completed and dag.predecessors(i) <= completed}


# Catalog: (task name, kind, RAM GB, offloadable) in pipeline order, deadline, and
# (proc, net) constraints per tier. Ranged constraint entries resolve to midpoints.
def _mid(lo: float, hi: float) -> float:
    return (lo + hi) / 2.0


CATALOG: dict[AppName, dict] = {
    AppName.INTRASAFED: {
        "tasks": [
            ("LOAD_MODEL", TaskKind.MODERATE, 1, False),
            ("UPLOAD", TaskKind.DI, 1, True),
            ("ANALYZE", TaskKind.CI, 4, True),
            ("AGGREGATE", TaskKind.CI, 2, True),
            ("SEND_ALERT", TaskKind.MODERATE, 1, True),
        ],
        "deadline": 108.0,
        "constraints": {Tier.EDGE: (18, 15), Tier.CLOUD: (_mid(2, 20), 90), Tier.MOBILE: (300, 0)},
    },
    AppName.MOBIAR: {
        "tasks": [
            ("UPLOAD", TaskKind.MODERATE, 1, False),
            ("EXTRACT", TaskKind.CI, 2, True),
            ("PROCESS", TaskKind.CI, 2, True),
            ("DATA", TaskKind.DI, 1, True),
            ("DOWNLOAD", TaskKind.DI, 1, False),
        ],
        "deadline": 400.0,
        "constraints": {Tier.EDGE: (_mid(2, 20), 15), Tier.CLOUD: (1, 300), Tier.MOBILE: (300, 0)},
    },
    AppName.NAVIAR: {
        "tasks": [
            ("MAP", TaskKind.DI, 1, True),
            ("GUI", TaskKind.MODERATE, 1, False),
            ("COORDINATION", TaskKind.CI, 4, True),
            ("SHORTEST_PATH", TaskKind.CI, 2, True),
            ("MOTION_COMMAND", TaskKind.CI, 1, True),
            ("VIRTUAL_GUIDANCE", TaskKind.MODERATE, 1, False),
            ("RUNTIME_LOCATION", TaskKind.CI, 1, True),
            ("DISPLAY", TaskKind.MODERATE, 1, False),
        ],
        "deadline": 800.0,
        "constraints": {Tier.EDGE: (_mid(250, 300), _mid(300, 400)), Tier.CLOUD: (_mid(2, 20), _mid(1000, 1500)),
                        Tier.MOBILE: (800, 0)},
    },
}


def _sample_task(name: str, kind: TaskKind, ram: float, offloadable: bool,
                 rng: np.random.Generator | None) -> TaskSpec:
    ranges = KIND_RANGES[kind]
    if rng is None:
        mi, din, dout = (_mid(*r) for r in ranges)
    else:
        mi, din, dout = (float(rng.uniform(*r)) for r in ranges)
    return TaskSpec(name, kind, mi, din, dout, float(ram), offloadable)


def _from_entry(name: str, entry: Mapping, rng: np.random.Generator | None) -> AppDag:
    tasks = tuple(_sample_task(t[0], TaskKind(t[1]), t[2], t[3], rng) for t in entry["tasks"])
    edges = entry.get("edges")
    if edges is None:
        edges = [(i, i + 1) for i in range(len(tasks) - 1)]
    constraints = {Tier(k): TierConstraint(float(p), float(n)) for k, (p, n) in entry["constraints"].items()}
    return AppDag(name, tasks, tuple((int(a), int(b)) for a, b in edges), float(entry["deadline"]), constraints)


def build_app(name: str | AppName, rng: np.random.Generator | None = None,
              catalog: Mapping | None = None) -> AppDag:
    """Catalog application; with ``rng`` the per-task MI and data sizes are sampled from their kind ranges."""
    catalog = catalog if catalog is not None else CATALOG
    key = name.value if isinstance(name, AppName) else str(name).upper()
    entries = {(k.value if isinstance(k, AppName) else str(k).upper()): v for k, v in catalog.items()}
    if key not in entries:
        raise ConfigurationError(f"unknown application {name!r}")
    return _from_entry(key, entries[key], rng)


def load_app_catalog(path: str | Path) -> dict[str, dict]:
    """Read an application catalog override file (YAML).

    Each app maps to ``tasks`` (``[name, kind, ram_gb, offloadable]`` rows), optional
    ``edges`` (index pairs, default: chain in row order), ``deadline`` in ms and
    ``constraints`` as ``{edge|cloud|mobile: [proc_ms, net_ms]}``.
    """
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict) or not doc:
        raise ConfigurationError(f"{path}: expected a mapping of applications")
    out = {}
    for name, entry in doc.items():
        try:
            _from_entry(str(name).upper(), entry, None)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"{path}: application {name}: {exc}") from None
        out[str(name).upper()] = entry
    return out


@dataclass(frozen=True)
class WorkloadProfile:
    lambda_range: tuple[float, float] = (10.0, 20.0)  # background tasks/s per source
    task_size_kb: float = 1.0  # mean of the exponential background task size
    task_size_range: tuple[float, float] | None = None  # when set, the mean itself is drawn from this range
    bg_mi: float = 150.0  # mean background task MI
    app_mix: Mapping[str, float] = field(default_factory=lambda: {"MOBIAR": 0.763, "INTRASAFED": 0.2, "NAVIAR": 0.037})

    def __post_init__(self):
        lo, hi = self.lambda_range
        if not 0 < lo <= hi:
            raise ConfigurationError("lambda_range must be positive and ordered")
        if abs(sum(self.app_mix.values()) - 1.0) > 1e-9 or any(p < 0 for p in self.app_mix.values()):
            raise ConfigurationError("app_mix must be a probability distribution")
        if self.task_size_kb <= 0 or self.bg_mi <= 0:
            raise ConfigurationError("background sizes must be positive")

    def with_mix(self, mix: Mapping[str, float]) -> "WorkloadProfile":
        return replace(self, app_mix=dict(mix))


CATALOG_PROFILE = WorkloadProfile()
# heavier mix-driven workload; sizes in the [10, 20] range are read as kilobits
RANDOM_PROFILE = WorkloadProfile(lambda_range=(60.0, 70.0), task_size_kb=15.0 / 8.192,
                                 task_size_range=(10.0 / 8.192, 20.0 / 8.192))


def sample_random_app(profile: WorkloadProfile, rng: np.random.Generator,
                      catalog: Mapping | None = None) -> AppDag:
    names = sorted(profile.app_mix)
    probs = np.array([profile.app_mix[n] for n in names], dtype=float)
    pick = names[int(np.searchsorted(np.cumsum(probs), rng.random(), side="right").clip(max=len(names) - 1))]
    return build_app(pick, rng, catalog)


def sample_background_load(profile: WorkloadProfile, rng: np.random.Generator) -> tuple[float, float]:
    """One background source: ``(arrival rate tasks/s, task size KB)``."""
    rate = float(rng.uniform(*profile.lambda_range))
    mean = profile.task_size_kb if profile.task_size_range is None else float(rng.uniform(*profile.task_size_range))
    return rate, float(rng.exponential(mean))
