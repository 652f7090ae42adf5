"""Edge-cloud topology: node catalog, cell clustering, availability traces, channels."""
from __future__ import annotations

import bisect
import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, RowError

log = logging.getLogger(__name__)

KB_BITS = 8192


class Tier(str, Enum):
    EDGE = "edge"
    CLOUD = "cloud"
    MOBILE = "mobile"


class NodeClass(str, Enum):
    ED = "ED"
    EC = "EC"
    ER = "ER"
    CD = "CD"
    MOBILE = "MOBILE"

    @property
    def tier(self) -> Tier:
        if self is NodeClass.CD:
            return Tier.CLOUD
        if self is NodeClass.MOBILE:
            return Tier.MOBILE
        return Tier.EDGE


EDGE_CLASSES = (NodeClass.ED, NodeClass.EC, NodeClass.ER)


@dataclass(frozen=True)
class NodeSpec:
    cls: NodeClass
    cores: int
    clock: float  # MHz
    ram: float  # GB
    storage: float  # GB

    def __post_init__(self):
        for name in ("cores", "clock", "ram", "storage"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"NodeSpec.{name} must be positive")

    @property
    def mips(self) -> float:
        # one instruction per cycle per core
        return self.cores * self.clock


# Computing infrastructure catalog (clock column is MHz).
DEFAULT_CATALOG: dict[NodeClass, NodeSpec] = {
    NodeClass.ED: NodeSpec(NodeClass.ED, 8, 2100, 8, 300),
    NodeClass.EC: NodeSpec(NodeClass.EC, 16, 2800, 16, 150),
    NodeClass.ER: NodeSpec(NodeClass.ER, 4, 1800, 8, 150),
    NodeClass.CD: NodeSpec(NodeClass.CD, 64, 2400, 128, 1000),
    NodeClass.MOBILE: NodeSpec(NodeClass.MOBILE, 2, 1800, 8, 16),
}


@dataclass(frozen=True)
class AvailabilityTrace:
    """Up-intervals ``[start, end)`` on the normalized ``[0, 1]`` timeline."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        prev_end = 0.0
        for start, end in self.intervals:
            if not (0.0 <= start < end <= 1.0):
                raise ConfigurationError(f"interval [{start}, {end}) outside [0, 1] or empty")
            if start < prev_end:
                raise ConfigurationError("intervals must be sorted and non-overlapping")
            prev_end = end
        object.__setattr__(self, "_starts", [s for s, _ in self.intervals])

    @property
    def ratio(self) -> float:
        return sum(e - s for s, e in self.intervals)

    def _index(self, t: float) -> int:
        i = bisect.bisect_right(self._starts, t) - 1
        if i >= 0 and t < self.intervals[i][1]:
            return i
        # the always-on trace ends exactly at 1.0; treat t == 1.0 as inside it
        if i >= 0 and t == 1.0 and self.intervals[i][1] == 1.0:
            return i
        return -1

    def is_available(self, t: float) -> bool:
        if not 0.0 <= t <= 1.0:
            raise DomainError(f"trace time {t} outside [0, 1]")
        return self._index(t) >= 0

    def covers(self, t0: float, t1: float) -> bool:
        """True iff a single up-interval contains the whole span ``[t0, t1]``."""
        if t1 < t0:
            raise DomainError("span end before start")
        i = self._index(min(max(t0, 0.0), 1.0))
        if i < 0:
            return False
        return min(t1, 1.0) <= self.intervals[i][1]


ALWAYS_ON = AvailabilityTrace(((0.0, 1.0),))


def is_available(node: "Node", t: float) -> bool:
    return node.availability.is_available(t)


def synth_availability(ratio: float, mean_interval: float, rng: np.random.Generator) -> AvailabilityTrace:
    """Alternating renewal trace with exponential up/down periods.

    ``mean_interval`` is the mean up-period length; down periods have mean
    ``mean_interval * (1 - ratio) / ratio`` so the expected up fraction is ``ratio``.
    """
    if not 0.0 < ratio <= 1.0:
        raise DomainError(f"availability ratio {ratio} not in (0, 1]")
    if mean_interval <= 0:
        raise DomainError("mean_interval must be positive")
    if ratio == 1.0:
        return ALWAYS_ON
    mean_down = mean_interval * (1.0 - ratio) / ratio
    up = rng.random() < ratio  # stationary start state
    t = 0.0
    out: list[tuple[float, float]] = []
    while t < 1.0:
        dur = rng.exponential(mean_interval if up else mean_down)
        end = min(1.0, t + dur)
        if up and end > t:
            out.append((t, end))
        t = end
        up = not up
    return AvailabilityTrace(tuple(out))


def parse_traces(text: str) -> dict[str, AvailabilityTrace]:
    """Parse ``node_id: s1-e1, s2-e2, ...`` lines (blank lines and ``#`` comments skipped)."""
    traces: dict[str, AvailabilityTrace] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        if not sep or not key.strip():
            raise RowError(lineno, "expected 'node_id: s-e, ...'")
        intervals = []
        for chunk in filter(None, (c.strip() for c in rest.split(","))):
            try:
                s, e = (float(x) for x in chunk.split("-"))
            except ValueError:
                raise RowError(lineno, f"bad interval {chunk!r}") from None
            intervals.append((s, e))
        try:
            traces[key.strip()] = AvailabilityTrace(tuple(intervals))
        except ConfigurationError as exc:
            raise RowError(lineno, str(exc)) from None
    if not traces:
        raise ConfigurationError("trace file contains no traces")
    return traces


def format_traces(traces: Mapping[str, AvailabilityTrace]) -> str:
    lines = []
    for key, tr in traces.items():
        body = ", ".join(f"{s!r}-{e!r}" for s, e in tr.intervals)
        lines.append(f"{key}: {body}")
    return "\n".join(lines) + "\n"


def synth_trace_store(n: int, ratio: float, mean_interval: float, seed: int,
                      conc: float | None = None) -> dict[str, AvailabilityTrace]:
    """``n`` synthetic traces with mean availability ``ratio``.

    With ``conc`` set, each node draws its own ratio from a Beta distribution
    with mean ``ratio`` and concentration ``conc`` (smaller is more diverse);
    otherwise every node shares ``ratio``.
    """
    if conc is not None and conc <= 0:
        raise DomainError("concentration must be positive")
    rng = np.random.default_rng(seed)
    out = {}
    for i in range(n):
        r = ratio
        if conc is not None and ratio < 1.0:
            r = float(np.clip(rng.beta(ratio * conc, (1.0 - ratio) * conc), 0.01, 1.0))
        out[f"synth{i}"] = synth_availability(r, mean_interval, rng)
    return out


def load_traces(source: str, n_needed: int, seed: int) -> dict[str, AvailabilityTrace]:
    """Trace store from a file path or a ``synth:ratio=0.65[,mean=0.05][,conc=2]`` spec.

    ``conc=inf`` gives every node the same ratio.
    """
    if source.startswith("synth:"):
        params = {"ratio": 0.65, "mean": 0.05, "conc": 2.0}
        for item in filter(None, source[len("synth:"):].split(",")):
            k, _, v = item.partition("=")
            if k not in params:
                raise ConfigurationError(f"unknown synth parameter {k!r}")
            try:
                params[k] = float(v)
            except ValueError:
                raise ConfigurationError(f"synth parameter {k} needs a number, got {v!r}") from None
        conc = None if params["conc"] is None or math.isinf(params["conc"]) else params["conc"]
        return synth_trace_store(n_needed, params["ratio"], params["mean"], seed, conc)
    path = Path(source)
    if not path.exists():
        raise ConfigurationError(f"trace file {source} not found")
    return parse_traces(path.read_text())


@dataclass(frozen=True)
class Channel:
    bw_total: float  # bits/s
    bw_util: float  # bits/s
    p_c: float  # W
    n0: float  # W/Hz
    capacity: float  # bits/s, "Ch"

    def __post_init__(self):
        if self.n0 <= 0:
            raise ConfigurationError("noise density n0 must be positive")
        if self.bw_total <= 0 or self.bw_util < 0 or self.bw_util > self.bw_total:
            raise ConfigurationError("require 0 <= bw_util <= bw_total, bw_total > 0")

    @property
    def bw_avail(self) -> float:
        return self.bw_total - self.bw_util

    def with_util(self, bw_util: float) -> "Channel":
        return replace(self, bw_util=min(bw_util, self.bw_total))


def shannon_rate(bw: float, p_c: float, n0: float) -> float:
    return bw * math.log2(1.0 + p_c / (n0 * bw))


def calibrate_channel(rtt_ms: float, payload_bits: float, p_c: float, bw: float) -> Channel:
    """Channel of bandwidth ``bw`` whose unloaded service time for ``payload_bits`` is ``rtt_ms``.

    Solves ``bw * log2(1 + p_c / (n0 * bw)) = payload / rtt`` for the noise density.
    """
    if rtt_ms <= 0 or payload_bits <= 0 or p_c <= 0 or bw <= 0:
        raise ConfigurationError("channel calibration needs positive rtt, payload, power and bandwidth")
    need = payload_bits / (rtt_ms / 1000.0)
    n0 = p_c / (bw * math.expm1(need / bw * math.log(2)))
    return Channel(bw_total=bw, bw_util=0.0, p_c=p_c, n0=n0, capacity=shannon_rate(bw, p_c, n0))


@dataclass(frozen=True)
class Node:
    id: int
    spec: NodeSpec
    location: tuple[float, float]
    availability: AvailabilityTrace = ALWAYS_ON
    cell: int | None = None

    @property
    def cls(self) -> NodeClass:
        return self.spec.cls

    @property
    def tier(self) -> Tier:
        return self.spec.cls.tier


@dataclass(frozen=True)
class CellCluster:
    id: int
    centroid: tuple[float, float]
    members: tuple[int, ...]
    cloud_id: int | None = None


@dataclass
class InfraConfig:
    """Knobs for :func:`build_infrastructure`; defaults reproduce the evaluation setup."""

    catalog: dict[NodeClass, NodeSpec] = field(default_factory=lambda: dict(DEFAULT_CATALOG))
    per_cell_min: dict[NodeClass, int] = field(default_factory=lambda: {c: 1 for c in EDGE_CLASSES})
    # unloaded round trip of the reference payload, from the "Net" column of the constraint table
    net_rtt_ms: dict[NodeClass, float] = field(
        default_factory=lambda: {NodeClass.ED: 15.0, NodeClass.EC: 15.0, NodeClass.ER: 15.0, NodeClass.CD: 90.0}
    )
    # reference payload = midpoint input + output of a data-intensive task
    ref_payload_kb: float = 17.5 + 27.5
    p_c: float = 0.5
    bw_hz: float = 100e6
    kmeans_iter: int = 300
    kmeans_tol: float = 1e-6


@dataclass(frozen=True)
class InfrastructureMap:
    nodes: tuple[Node, ...]
    cells: tuple[CellCluster, ...]
    channels: Mapping[NodeClass, Channel]
    mobile_id: int
    cloud_id: int

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate node ids")
        object.__setattr__(self, "_by_id", {n.id: n for n in self.nodes})

    def node(self, node_id: int) -> Node:
        return self._by_id[node_id]

    @property
    def mobile(self) -> Node:
        return self._by_id[self.mobile_id]

    @property
    def remote_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.tier is not Tier.MOBILE]

    def edge_nodes_in(self, cell: int) -> list[Node]:
        return [self._by_id[i] for i in self.cells[cell].members if self._by_id[i].tier is Tier.EDGE]

    def channel_for(self, node: Node) -> Channel:
        return self.channels[node.cls]

    def to_dict(self) -> dict:
        return {
            "mobile_id": self.mobile_id,
            "cloud_id": self.cloud_id,
            "nodes": [
                {
                    "id": n.id,
                    "class": n.cls.value,
                    "location": list(n.location),
                    "cell": n.cell,
                    "availability": [list(iv) for iv in n.availability.intervals],
                }
                for n in self.nodes
            ],
            "cells": [
                {"id": c.id, "centroid": list(c.centroid), "members": list(c.members), "cloud_id": c.cloud_id}
                for c in self.cells
            ],
            "channels": {
                k.value: {"bw_total": ch.bw_total, "bw_util": ch.bw_util, "p_c": ch.p_c, "n0": ch.n0, "capacity": ch.capacity}
                for k, ch in sorted(self.channels.items(), key=lambda kv: kv[0].value)
            },
            "catalog": {
                n.cls.value: {"cores": n.spec.cores, "clock": n.spec.clock, "ram": n.spec.ram, "storage": n.spec.storage}
                for n in sorted({n.cls: n for n in self.nodes}.values(), key=lambda n: n.cls.value)
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "InfrastructureMap":
        catalog = {NodeClass(k): NodeSpec(NodeClass(k), v["cores"], v["clock"], v["ram"], v["storage"]) for k, v in d["catalog"].items()}
        nodes = tuple(
            Node(
                id=n["id"],
                spec=catalog[NodeClass(n["class"])],
                location=tuple(n["location"]),
                availability=AvailabilityTrace(tuple(tuple(iv) for iv in n["availability"])),
                cell=n["cell"],
            )
            for n in d["nodes"]
        )
        cells = tuple(CellCluster(c["id"], tuple(c["centroid"]), tuple(c["members"]), c["cloud_id"]) for c in d["cells"])
        channels = {NodeClass(k): Channel(**v) for k, v in d["channels"].items()}
        return cls(nodes, cells, channels, d["mobile_id"], d["cloud_id"])

    @classmethod
    def loads(cls, text: str) -> "InfrastructureMap":
        return cls.from_dict(json.loads(text))


# --- cell sites -------------------------------------------------------------

_LAT_COLS = ("lat", "latitude")
_LON_COLS = ("lon", "lng", "longitude")


def ingest_cell_sites(path: str | Path) -> list[tuple[float, float]]:
    """Read ``(lat, lon)`` pairs from a header-bearing CSV (OpenCellID exports work as-is)."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"cell-site file {path} not found")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigurationError(f"{path} is empty")
        header = {h.strip().lower(): h for h in reader.fieldnames}
        lat_col = next((header[c] for c in _LAT_COLS if c in header), None)
        lon_col = next((header[c] for c in _LON_COLS if c in header), None)
        if lat_col is None or lon_col is None:
            raise ConfigurationError(f"{path}: header needs lat and lon columns")
        sites = []
        for row in reader:
            line = reader.line_num
            try:
                lat, lon = float(row[lat_col]), float(row[lon_col])
            except (TypeError, ValueError):
                raise RowError(line, f"cannot parse coordinates {row.get(lat_col)!r}, {row.get(lon_col)!r}") from None
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0) or math.isnan(lat) or math.isnan(lon):
                raise RowError(line, f"coordinates out of range ({lat}, {lon})")
            sites.append((lat, lon))
    if not sites:
        raise ConfigurationError(f"{path} contains no cell sites")
    log.info("ingested %d cell sites from %s", len(sites), path)
    return sites


def filter_sites(sites: Sequence[tuple[float, float]], n: int, seed: int) -> list[tuple[float, float]]:
    """Random subset of ``n`` sites, kept in file order."""
    if n > len(sites):
        raise ConfigurationError(f"cannot keep {n} of {len(sites)} sites")
    keep = np.sort(np.random.default_rng(seed).choice(len(sites), size=n, replace=False))
    return [sites[i] for i in keep]


def synth_cell_sites(n: int, groups: int, seed: int, spread: float = 0.02) -> list[tuple[float, float]]:
    """Clustered synthetic tower coordinates around ``groups`` town centres."""
    rng = np.random.default_rng(seed)
    centres = np.column_stack([rng.uniform(45.0, 46.0, groups), rng.uniform(15.0, 17.0, groups)])
    which = np.arange(n) % groups
    pts = centres[which] + rng.normal(0.0, spread, size=(n, 2))
    return [(round(float(a), 6), round(float(b), 6)) for a, b in pts]


def write_cell_sites(path: str | Path, sites: Iterable[tuple[float, float]]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "lat", "lon"])
        for i, (lat, lon) in enumerate(sites):
            w.writerow([i, lat, lon])


# --- clustering -------------------------------------------------------------

def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centres = [x[rng.integers(len(x))]]
    d2 = ((x - centres[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total == 0.0:
            idx = rng.integers(len(x))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, len(x) - 1)
        centres.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centres)


def kmeans(x: np.ndarray, k: int, seed: int, max_iter: int = 300, tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding; returns ``(labels, centroids)``."""
    rng = np.random.default_rng(seed)
    centres = _kmeans_pp(x, k, rng)
    labels = np.zeros(len(x), dtype=int)
    for _ in range(max_iter):
        dist = ((x[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        new = centres.copy()
        for j in range(k):
            mask = labels == j
            if mask.any():
                new[j] = x[mask].mean(axis=0)
            else:
                # reseed an empty cluster at the point farthest from its centre
                far = int(dist[np.arange(len(x)), labels].argmax())
                new[j] = x[far]
                labels[far] = j
        shift = float(np.sqrt(((new - centres) ** 2).sum(axis=1)).max())
        centres = new
        if shift <= tol:
            break
    dist = ((x[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
    labels = dist.argmin(axis=1)
    return labels, centres


def cluster_cells(sites: Sequence[tuple[float, float]], k: int, seed: int,
                  max_iter: int = 300, tol: float = 1e-6) -> list[CellCluster]:
    """Partition sites into ``k`` cells; member ids are site indices.

    Distance is Euclidean on raw degrees.
    """
    if k < 1:
        raise ConfigurationError("need at least one cluster")
    if k > len(sites):
        raise ConfigurationError(f"k={k} exceeds the number of sites ({len(sites)})")
    x = np.asarray(sites, dtype=float)
    labels, centres = kmeans(x, k, seed, max_iter, tol)
    if len(set(labels.tolist())) < k:
        raise ConfigurationError("k-means produced an empty cluster; reduce k")
    return [
        CellCluster(j, (float(centres[j][0]), float(centres[j][1])), tuple(int(i) for i in np.flatnonzero(labels == j)))
        for j in range(k)
    ]


def assign_classes(clusters: Sequence[CellCluster], per_cell_min: Mapping[NodeClass, int],
                   seed: int) -> dict[int, NodeClass]:
    """Class per site: the per-cell minimum of each edge class first, the rest uniform at random."""
    rng = np.random.default_rng(seed)
    classes = [c for c in EDGE_CLASSES if per_cell_min.get(c, 0) >= 0 and c in per_cell_min]
    out: dict[int, NodeClass] = {}
    for cell in clusters:
        required = [c for c in classes for _ in range(per_cell_min[c])]
        if len(cell.members) < len(required):
            raise ConfigurationError(
                f"cell {cell.id} has {len(cell.members)} sites, needs {len(required)} for the class minimum"
            )
        order = list(rng.permutation(cell.members))
        for site, cls in zip(order, required):
            out[int(site)] = cls
        for site in order[len(required):]:
            out[int(site)] = classes[int(rng.integers(len(classes)))]
    return out


def attach_availability(infra: InfrastructureMap, traces: Mapping[str, AvailabilityTrace],
                        seed: int) -> InfrastructureMap:
    """One-to-one shuffled trace assignment for edge nodes; the cloud and the mobile device are always on."""
    remote = sorted((n for n in infra.nodes if n.tier is Tier.EDGE), key=lambda n: n.id)
    if len(traces) < len(remote):
        raise ConfigurationError(f"{len(traces)} traces for {len(remote)} nodes")
    keys = list(traces)
    perm = np.random.default_rng(seed).permutation(len(keys))
    assigned = {n.id: traces[keys[perm[i]]] for i, n in enumerate(remote)}
    nodes = tuple(
        replace(n, availability=assigned.get(n.id, ALWAYS_ON)) for n in infra.nodes
    )
    return replace(infra, nodes=nodes)


def default_channels(cfg: InfraConfig) -> dict[NodeClass, Channel]:
    payload = cfg.ref_payload_kb * KB_BITS
    return {cls: calibrate_channel(rtt, payload, cfg.p_c, cfg.bw_hz) for cls, rtt in cfg.net_rtt_ms.items()}


def build_infrastructure(sites: Sequence[tuple[float, float]], k: int, seed: int,
                         traces: Mapping[str, AvailabilityTrace] | None = None,
                         cfg: InfraConfig | None = None) -> InfrastructureMap:
    """Cluster sites into cells, give every site an edge class, add one cloud and the mobile device."""
    cfg = cfg or InfraConfig()
    clusters = cluster_cells(sites, k, seed, cfg.kmeans_iter, cfg.kmeans_tol)
    classes = assign_classes(clusters, cfg.per_cell_min, seed + 1)
    cell_of = {i: c.id for c in clusters for i in c.members}
    n = len(sites)
    cloud_id, mobile_id = n, n + 1
    centre = tuple(float(v) for v in np.asarray(sites, dtype=float).mean(axis=0))
    cloud_cell = int(np.argmin([(c.centroid[0] - centre[0]) ** 2 + (c.centroid[1] - centre[1]) ** 2 for c in clusters]))
    nodes = [Node(i, cfg.catalog[classes[i]], tuple(sites[i]), cell=cell_of[i]) for i in range(n)]
    nodes.append(Node(cloud_id, cfg.catalog[NodeClass.CD], centre, cell=cloud_cell))
    nodes.append(Node(mobile_id, cfg.catalog[NodeClass.MOBILE], tuple(clusters[0].centroid), cell=None))
    cells = tuple(
        CellCluster(c.id, c.centroid, c.members + ((cloud_id,) if c.id == cloud_cell else ()), cloud_id)
        for c in clusters
    )
    infra = InfrastructureMap(tuple(nodes), cells, default_channels(cfg), mobile_id, cloud_id)
    if traces is not None:
        infra = attach_availability(infra, traces, seed + 2)
    return infra
