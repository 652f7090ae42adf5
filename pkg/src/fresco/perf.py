"""Analytic latency (M/M/1 channels and servers), mobile energy and utilization cost models.

Units: data in bits, CPU demand in MI, capacities in MIPS, rates in tasks/s.
Latencies are returned in milliseconds, energy in joules. All functions are pure
except :meth:`EnergyState.charge`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import UnstableQueue
from .infra import KB_BITS, Channel, NodeSpec, Tier
from .workload import TaskSpec

Generators = Sequence[tuple[float, float]]

# Execution waiting sums rate*MI over the sources; the sum is read in
# milliseconds once rates are expressed per millisecond.
EXEC_WAIT_MS_PER_UNIT = 1e-3


@dataclass(frozen=True)
class LatencyBreakdown:
    t_offload: float
    t_exec: float
    t_deliver: float

    @property
    def rt(self) -> float:
        return self.t_offload + self.t_exec + self.t_deliver


# --- communication ------------------------------------------------------------

def comm_utilization(channel: Channel, generators: Generators) -> float:
    return sum(rate * data for rate, data in generators) / channel.bw_total


def comm_waiting(channel: Channel, generators: Generators) -> float:
    if channel.bw_util >= channel.bw_total:
        raise UnstableQueue("channel", channel.bw_util / channel.bw_total)
    u = comm_utilization(channel, generators)
    if u >= 1.0:
        raise UnstableQueue("channel", u)
    return 1000.0 * sum(rate * data for rate, data in generators) / (channel.bw_total - channel.bw_util)


def comm_service(channel: Channel, data: float) -> float:
    if data == 0:
        return 0.0
    bw = channel.bw_avail
    if bw <= 0:
        raise UnstableQueue("channel", 1.0)
    return 1000.0 * data / (bw * math.log2(1.0 + channel.p_c / (channel.n0 * bw)))


def comm_latency(channel: Channel, data: float, generators: Generators) -> float:
    return comm_service(channel, data) + comm_waiting(channel, generators)


# --- execution ----------------------------------------------------------------

def exec_utilization(node: NodeSpec, assigned: Generators) -> float:
    return sum(rate * mi for rate, mi in assigned) / node.mips


def exec_waiting(node: NodeSpec, assigned: Generators, task_mi: float) -> float:
    """Waiting behind the sources in ``assigned``: ``sum(rate) * MI(task) / (1 - U)``.

    The rate-times-instructions numerator is not a time; it is read in
    milliseconds (see ``EXEC_WAIT_MS_PER_UNIT``).
    """
    u = exec_utilization(node, assigned)
    if u >= 1.0:
        raise UnstableQueue("execution", u)
    return EXEC_WAIT_MS_PER_UNIT * sum(rate for rate, _ in assigned) * task_mi / (1.0 - u)


def exec_service(node: NodeSpec, task_mi: float) -> float:
    return 1000.0 * task_mi / node.mips


def exec_latency(node: NodeSpec, assigned: Generators, task_mi: float) -> float:
    return exec_waiting(node, assigned, task_mi) + exec_service(node, task_mi)


@dataclass(frozen=True)
class NodeLoad:
    """Off-chain load snapshot for one candidate.

    ``exec_sources`` are ``(rate, MI)`` background sources on the server;
    ``uplink_sources``/``downlink_sources`` are ``(rate, bits)`` generators sharing
    each direction, whose occupied bandwidth the channel objects carry as
    ``bw_util``. ``device_rate`` adds the offloading device's own task stream.
    """

    exec_sources: tuple[tuple[float, float], ...] = ()
    uplink: Channel | None = None
    uplink_sources: tuple[tuple[float, float], ...] = ()
    downlink: Channel | None = None
    downlink_sources: tuple[tuple[float, float], ...] = ()
    device_rate: float = 0.0


def response_time(task: TaskSpec, node: NodeSpec, load: NodeLoad) -> LatencyBreakdown:
    """Offload + execution + delivery latency in ms; raises ``UnstableQueue`` on saturation."""
    own = ((load.device_rate, task.mi),) if load.device_rate > 0 else ()
    t_exec = exec_latency(node, load.exec_sources + own, task.mi)
    if node.cls.tier is Tier.MOBILE:
        return LatencyBreakdown(0.0, t_exec, 0.0)
    bits_in, bits_out = task.data_in * KB_BITS, task.data_out * KB_BITS
    up, down = list(load.uplink_sources), list(load.downlink_sources)
    if load.device_rate > 0:
        up.append((load.device_rate, bits_in))
        down.append((load.device_rate, bits_out))
    t_off = comm_latency(load.uplink, bits_in, up)
    t_del = comm_latency(load.downlink, bits_out, down)
    return LatencyBreakdown(t_off, t_exec, t_del)


# --- energy -------------------------------------------------------------------

@dataclass
class EnergyState:
    bcap: float = 1000.0  # J
    consumed: float = 0.0
    beta_base: float = 625.25e-3
    beta_u: float = 6.9305e-3
    p_cores_coeff: float = 0.073e-3
    t_idle: float = 1.0  # s
    c_transitions: int = 10
    inclusive_sum: bool = True  # sum over i = 0..cores (cores + 1 terms)
    history: list[float] = field(default_factory=list)

    @property
    def battery_lifetime(self) -> float:
        return (self.bcap - self.consumed) / self.bcap

    @property
    def remaining(self) -> float:
        return self.bcap - self.consumed

    def charge(self, joules: float) -> float:
        if joules < 0:
            raise ValueError("negative energy charge")
        self.consumed += joules
        self.history.append(joules)
        return self.battery_lifetime


def exec_power(device: EnergyState, cores: int, u_per_core: float, t_idle: float | None = None) -> float:
    t_idle = device.t_idle if t_idle is None else t_idle
    terms = cores + 1 if device.inclusive_sum else cores
    baseline = device.p_cores_coeff * cores
    return baseline + terms * device.beta_u * u_per_core + device.beta_base * t_idle / device.c_transitions


def tx_power(channel: Channel) -> float:
    if channel.capacity == 0:
        return 0.0
    bw = channel.bw_avail
    if bw <= 0:
        raise UnstableQueue("channel", 1.0)
    return channel.n0 * bw * (2.0 ** (channel.capacity / bw) - 1.0)


def task_energy(device: EnergyState, cores: int, tier: Tier, latency: LatencyBreakdown,
                channel: Channel | None = None) -> float:
    """Energy the mobile device spends on one task placement (J).

    Local runs pay busy execution power over the execution time. Remote runs pay
    transmission power over offload + delivery and idle-state power while the
    server executes.
    """
    if tier is Tier.MOBILE:
        return exec_power(device, cores, 1.0) * latency.t_exec / 1000.0
    p_tx = tx_power(channel)
    return (p_tx * (latency.t_offload + latency.t_deliver) + exec_power(device, cores, 0.0) * latency.t_exec) / 1000.0


def energy_and_battery(device: EnergyState, cores: int, tier: Tier, latency: LatencyBreakdown,
                       channel: Channel | None = None) -> tuple[float, float]:
    joules = task_energy(device, cores, tier, latency, channel)
    return joules, device.charge(joules)


# --- cost ---------------------------------------------------------------------

@dataclass(frozen=True)
class CostSchedule:
    cost_cores: float = 0.023  # per MI
    cost_stor: float = 0.776  # per KB
    cost_edge_penalty: float = 5.0  # per second of edge execution

    def __post_init__(self):
        if min(self.cost_cores, self.cost_stor, self.cost_edge_penalty) < 0:
            raise ValueError("cost coefficients must be non-negative")


def utilization_cost(tier: Tier, task: TaskSpec, t_exec_ms: float, schedule: CostSchedule = CostSchedule()) -> float:
    if tier is Tier.MOBILE:
        return 0.0
    t = t_exec_ms / 1000.0
    cost_r = schedule.cost_cores * task.mi + schedule.cost_stor * task.data
    if tier is Tier.CLOUD:
        return t * cost_r
    return t * (cost_r + schedule.cost_edge_penalty)
