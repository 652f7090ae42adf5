"""Emulated hybrid smart contract holding server reputation.

On-chain arithmetic is integer-only: reputations and incentives are fixed point
at scale 1e6, measurements are quantized to whole microseconds before they
reach the contract. Writes become visible after a consensus delay; reads are
served from the last committed state and never wait on pending blocks.
"""
from __future__ import annotations

import bisect
import json
import threading
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import yaml

from .errors import ConfigurationError, DomainError, LedgerError
from .infra import Tier

SCALE = 1_000_000


def _div_half_up(num: int, den: int) -> int:
    return (2 * num + den) // (2 * den)


@dataclass(frozen=True, order=True)
class FixedRep:
    raw: int

    def __post_init__(self):
        if not 0 <= self.raw <= SCALE:
            raise DomainError(f"reputation raw value {self.raw} outside [0, {SCALE}]")

    @classmethod
    def from_float(cls, x: float) -> "FixedRep":
        return cls(int(round(x * SCALE)))

    def __float__(self) -> float:
        return self.raw / SCALE


@dataclass(frozen=True)
class TransactionRecord:
    measurement: float  # ms; 0 for a failed attempt
    node_id: int
    failed: bool = False

    def __post_init__(self):
        if self.measurement < 0:
            raise DomainError("measurement must be non-negative")


def to_micros(ms: float) -> int:
    return int(_div_half_up(int(round(ms * 1_000_000)), 1000))


def incentive_raw(measurement_us: int, nabla_us: int, failed: bool = False) -> int:
    """``max((nabla - RT) / nabla, 0)`` in fixed point, integers only."""
    if nabla_us <= 0:
        raise DomainError("timing constraint must be positive")
    if failed or measurement_us >= nabla_us:
        return 0
    return min(SCALE, _div_half_up((nabla_us - measurement_us) * SCALE, nabla_us))


def incentive(measurement: float, nabla: float, failed: bool = False) -> FixedRep:
    if nabla <= 0:
        raise DomainError("timing constraint must be positive")
    return FixedRep(incentive_raw(to_micros(measurement), to_micros(nabla), failed))


def reputation_step(old_raw: int, inc_raw: int, omega_raw: int) -> int:
    """``old*(1-w) + w*inc`` at scale 1e6 with round-half-up."""
    return _div_half_up(old_raw * (SCALE - omega_raw) + omega_raw * inc_raw, SCALE)


DEFAULT_GAS = {
    "registerNode": 21_503,
    "unregisterNode": 21_204,
    "getNodeCount": 21_604,
    "getNode": 21_204,
    "getReputationScore": 21_204,
    "updateNodeReputation": {"base": 21_638, "step": 287.8, "max": 29_984},
    "resetReputation": {"base": 21_484, "step": 140, "max": 25_544},
}


@dataclass(frozen=True)
class Batched:
    """Gas of a batched call: ``base + round(step * (n - 1))``, capped at ``max``."""

    base: int
    step: float
    max: int

    def cost(self, n: int) -> int:
        if n < 1:
            raise DomainError("batched call needs at least one item")
        extra = int(Fraction(str(self.step)) * (n - 1) + Fraction(1, 2))
        return min(self.base + extra, self.max)


@dataclass(frozen=True)
class GasSchedule:
    """Per-call gas in Wei."""

    register: int = 21_503
    unregister: int = 21_204
    node_count: int = 21_604
    get_node: int = 21_204
    get_score: int = 21_204
    update: Batched = Batched(21_638, 287.8, 29_984)
    reset: Batched = Batched(21_484, 140, 25_544)

    @classmethod
    def from_mapping(cls, m: Mapping) -> "GasSchedule":
        d = {**DEFAULT_GAS, **m}
        try:
            return cls(
                register=int(d["registerNode"]), unregister=int(d["unregisterNode"]),
                node_count=int(d["getNodeCount"]), get_node=int(d["getNode"]),
                get_score=int(d["getReputationScore"]),
                update=Batched(int(d["updateNodeReputation"]["base"]), float(d["updateNodeReputation"]["step"]),
                               int(d["updateNodeReputation"]["max"])),
                reset=Batched(int(d["resetReputation"]["base"]), float(d["resetReputation"]["step"]),
                              int(d["resetReputation"]["max"])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad gas schedule: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "GasSchedule":
        doc = yaml.safe_load(Path(path).read_text())
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{path}: gas schedule must be a mapping")
        return cls.from_mapping(doc)


@dataclass
class _Pending:
    commit_time: float
    records: list[TransactionRecord]
    nabla_us: dict[int, int]  # per node


@dataclass
class Ledger:
    """Serialized contract state machine (one call at a time, thread safe)."""

    omega: int = 300_000
    initial: int = SCALE
    consensus_delay: float = 4000.0  # ms
    gas: GasSchedule = field(default_factory=GasSchedule)
    charge_reads: bool = True
    gas_meter: int = 0
    _tiers: dict[int, Tier] = field(default_factory=dict)
    _history: dict[int, list[tuple[float, int]]] = field(default_factory=dict)
    _pending: list[_Pending] = field(default_factory=list)
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    def __post_init__(self):
        if not 0 <= self.omega <= SCALE or not 0 <= self.initial <= SCALE:
            raise ConfigurationError("omega and initial reputation must be fixed-point fractions")

    # -- internals --

    def _charge(self, wei: int) -> None:
        self.gas_meter += wei

    def _settle(self, now: float) -> None:
        while self._pending and self._pending[0].commit_time <= now:
            block = self._pending.pop(0)
            for rec in block.records:
                if rec.node_id not in self._history:
                    continue  # unregistered while the block was pending
                hist = self._history[rec.node_id]
                inc = incentive_raw(to_micros(rec.measurement), block.nabla_us[rec.node_id], rec.failed)
                new = reputation_step(hist[-1][1], inc, self.omega)
                if hist[-1][0] == block.commit_time:
                    hist[-1] = (block.commit_time, new)
                else:
                    hist.append((block.commit_time, new))

    def _require(self, node_id: int) -> None:
        if node_id not in self._history:
            raise LedgerError(f"node {node_id} is not registered")

    # -- contract functions --

    def register_node(self, node_id: int, tier: Tier = Tier.EDGE, now: float = 0.0) -> None:
        with self._lock:
            if node_id in self._history:
                raise LedgerError(f"node {node_id} already registered")
            self._tiers[node_id] = Tier(tier)
            self._history[node_id] = [(float("-inf"), self.initial)]
            self._charge(self.gas.register)

    def unregister_node(self, node_id: int) -> None:
        with self._lock:
            self._require(node_id)
            del self._history[node_id]
            del self._tiers[node_id]
            self._charge(self.gas.unregister)

    def get_node_count(self) -> int:
        with self._lock:
            if self.charge_reads:
                self._charge(self.gas.node_count)
            return len(self._history)

    def get_node(self, node_id: int, now: float = float("inf")) -> FixedRep:
        with self._lock:
            self._require(node_id)
            if self.charge_reads:
                self._charge(self.gas.get_node)
            return self._read(node_id, now)

    def get_reputation_score(self, node_id: int, now: float) -> FixedRep:
        with self._lock:
            self._require(node_id)
            if self.charge_reads:
                self._charge(self.gas.get_score)
            return self._read(node_id, now)

    def _read(self, node_id: int, now: float) -> FixedRep:
        self._settle(now)
        hist = self._history[node_id]
        i = bisect.bisect_right(hist, (now, SCALE + 1)) - 1
        return FixedRep(hist[max(i, 0)][1])

    def update_node_reputation(self, transactions: Iterable[TransactionRecord],
                               nabla_of: Mapping[Tier, float] | Mapping[int, float], now: float) -> float:
        """Queue a batch; returns its commit time. ``nabla_of`` maps tier (or node id) to ms."""
        records = list(transactions)
        if not records:
            raise LedgerError("empty transaction batch")
        with self._lock:
            nabla_us = {}
            for rec in records:
                self._require(rec.node_id)
                key = rec.node_id if rec.node_id in nabla_of else self._tiers[rec.node_id]
                if key not in nabla_of:
                    raise LedgerError(f"no timing constraint for node {rec.node_id}")
                n_us = to_micros(float(nabla_of[key]))
                if n_us <= 0:
                    raise DomainError("timing constraint must be positive")
                nabla_us[rec.node_id] = n_us
            self._settle(now)
            commit = now + self.consensus_delay
            if self._pending and commit < self._pending[-1].commit_time:
                commit = self._pending[-1].commit_time  # blocks commit in submission order
            self._pending.append(_Pending(commit, records, nabla_us))
            self._charge(self.gas.update.cost(len(records)))
            return commit

    def reset_reputation(self, node_ids: Iterable[int], now: float = 0.0) -> None:
        ids = list(node_ids)
        if not ids:
            raise LedgerError("empty reset batch")
        with self._lock:
            for i in ids:
                self._require(i)
            self._settle(now)
            for i in ids:
                self._history[i].append((now, self.initial))
                self._history[i].sort(key=lambda p: p[0])
            self._charge(self.gas.reset.cost(len(ids)))

    # -- off-chain helpers (no gas) --

    def commit_until(self, now: float) -> None:
        with self._lock:
            self._settle(now)

    def pending_count(self) -> int:
        return len(self._pending)

    def registered(self) -> list[int]:
        return sorted(self._history)

    def tier_of(self, node_id: int) -> Tier:
        return self._tiers[node_id]

    def dumps(self) -> str:
        """Ledger state as JSON text (restorable with :meth:`loads`)."""
        with self._lock:
            doc = {
                "omega": self.omega,
                "initial": self.initial,
                "consensus_delay": self.consensus_delay,
                "charge_reads": self.charge_reads,
                "gas_meter": self.gas_meter,
                "nodes": {
                    str(i): {"tier": self._tiers[i].value,
                             "history": [[None if t == float("-inf") else t, v] for t, v in self._history[i]]}
                    for i in sorted(self._history)
                },
                "pending": [
                    {"commit_time": p.commit_time,
                     "records": [[r.measurement, r.node_id, r.failed] for r in p.records],
                     "nabla_us": {str(k): v for k, v in sorted(p.nabla_us.items())}}
                    for p in self._pending
                ],
            }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def loads(cls, text: str, gas: GasSchedule | None = None) -> "Ledger":
        doc = json.loads(text)
        led = cls(omega=doc["omega"], initial=doc["initial"], consensus_delay=doc["consensus_delay"],
                  gas=gas or GasSchedule(), charge_reads=doc["charge_reads"], gas_meter=doc["gas_meter"])
        for key, node in doc["nodes"].items():
            led._tiers[int(key)] = Tier(node["tier"])
            led._history[int(key)] = [(float("-inf") if t is None else t, v) for t, v in node["history"]]
        for p in doc["pending"]:
            led._pending.append(_Pending(p["commit_time"], [TransactionRecord(m, n, f) for m, n, f in p["records"]],
                                         {int(k): v for k, v in p["nabla_us"].items()}))
        return led
