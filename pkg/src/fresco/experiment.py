"""Experiment specs, batch runs, weight sweeps and summary reports.

Raw outputs of a run directory:

``metrics.csv``     one row per simulated app (deterministic given the seeds)
``placements.csv``  one row per task placement (deterministic)
``timing.csv``      wall-clock decision times (not reproducible by nature)
``failures.json``   jobs that raised, if any

Summaries are a pure fold over ``metrics.csv`` and ``timing.csv``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import yaml
from scipy import stats

from .decision import Engine, ScoreWeights
from .errors import ConfigurationError
from .infra import InfrastructureMap, build_infrastructure, ingest_cell_sites, load_traces, synth_cell_sites
from .sim import MetricsRecord, PlacementRecord, SimConfig, run_episode

APPS = ("INTRASAFED", "MOBIAR", "NAVIAR", "RANDOM")
SEED_ENV = "FRESCO_SEED"

# --- spec loading --------------------------------------------------------------


def _resolve_includes(node: Any, base: Path, seen: tuple[Path, ...] = ()) -> Any:
    if isinstance(node, dict):
        if set(node) == {"include"}:
            path = (base / node["include"]).resolve()
            if path in seen:
                raise ConfigurationError(f"include cycle through {path}")
            if not path.exists():
                raise ConfigurationError(f"included file {path} not found")
            return _resolve_includes(yaml.safe_load(path.read_text()), path.parent, seen + (path,))
        return {k: _resolve_includes(v, base, seen) for k, v in node.items()}
    if isinstance(node, list):
        return [_resolve_includes(v, base, seen) for v in node]
    return node


@dataclass(frozen=True)
class InfraSource:
    """Either a saved map (``path``) or build parameters."""

    path: str | None = None
    cells: str = "synth:60/10"  # CSV path or synth:<sites>/<groups>
    clusters: int = 10
    traces: str = "synth:ratio=0.65,mean=0.05,conc=2"
    seed: int = 3

    def build(self, base: Path) -> InfrastructureMap:
        if self.path is not None:
            p = base / self.path
            if not p.exists():
                raise ConfigurationError(f"infrastructure file {p} not found")
            return InfrastructureMap.loads(p.read_text())
        sites = load_sites(self.cells, self.seed, base)
        return build_infrastructure(sites, self.clusters, self.seed,
                                    traces=load_traces(self.traces, len(sites), self.seed + 7))


def load_sites(source: str, seed: int, base: Path = Path(".")) -> list[tuple[float, float]]:
    if source.startswith("synth:"):
        try:
            n, groups = (int(x) for x in source[len("synth:"):].split("/"))
        except ValueError:
            raise ConfigurationError(f"bad synthetic site spec {source!r}; expected synth:<sites>/<groups>") from None
        return synth_cell_sites(n, groups, seed)
    return ingest_cell_sites(base / source)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "experiment"
    infra: InfraSource = InfraSource()
    apps: tuple[str, ...] = ("RANDOM",)
    engines: tuple[Engine, ...] = (Engine.FRESCO, Engine.MINLP, Engine.SQ)
    seeds: tuple[int, ...] = (1,)
    apps_per_run: int = 20
    weights: ScoreWeights = ScoreWeights()
    sim: Mapping[str, Any] = field(default_factory=dict)  # extra SimConfig fields
    grid: tuple[tuple[float, float, float], ...] = ()
    base: Path = Path(".")

    def __post_init__(self):
        bad = [a for a in self.apps if a.upper() not in APPS]
        if bad or not self.apps:
            raise ConfigurationError(f"unknown or empty app selection: {bad or 'none'}")
        if not self.engines or not self.seeds:
            raise ConfigurationError("engines and seeds must be non-empty")
        allowed = {f.name for f in fields(SimConfig)} - {"seed", "run", "apps", "app", "engine", "weights"}
        extra = set(self.sim) - allowed
        if extra:
            raise ConfigurationError(f"unknown sim settings: {sorted(extra)}")

    def with_env_seed(self) -> "ExperimentSpec":
        raw = os.environ.get(SEED_ENV)
        if raw is None or raw == "":
            return self
        try:
            seed = int(raw)
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
        return _replace(self, seeds=(seed,))

    def sim_config(self, app: str, engine: Engine, seed: int, run: int,
                   weights: ScoreWeights | None = None) -> SimConfig:
        return SimConfig(seed=seed, run=run, apps=self.apps_per_run, app=app.upper(), engine=engine,
                         weights=weights or self.weights, **self.sim)


def _replace(spec: ExperimentSpec, **kw) -> ExperimentSpec:
    d = {f.name: getattr(spec, f.name) for f in fields(spec)}
    d.update(kw)
    return ExperimentSpec(**d)


def _weights(doc: Mapping) -> ScoreWeights:
    return ScoreWeights(float(doc.get("alpha", 0.5)), float(doc.get("beta", 0.4)), float(doc.get("gamma", 0.1)))


def weight_grid(gammas: Sequence[float], step: float) -> list[tuple[float, float, float]]:
    """All (alpha, beta, gamma) with alpha on a ``step`` lattice and alpha + beta + gamma = 1."""
    out = []
    for g in gammas:
        n = int(round((1.0 - g) / step))
        for i in range(n + 1):
            a = round(i * step, 10)
            b = round(1.0 - g - a, 10)
            if b >= 0:
                out.append((a, b, g))
    return out


def parse_spec(doc: Mapping, base: Path = Path(".")) -> ExperimentSpec:
    doc = _resolve_includes(dict(doc), base)
    try:
        infra_doc = doc.get("infra", {})
        if isinstance(infra_doc, str):
            infra_doc = {"path": infra_doc}
        seeds = doc.get("seeds", [1])
        if isinstance(seeds, Mapping):
            seeds = list(range(int(seeds["start"]), int(seeds["start"]) + int(seeds["count"])))
        grid_doc = doc.get("grid") or []
        if isinstance(grid_doc, Mapping):
            grid = weight_grid([float(g) for g in grid_doc.get("gammas", [0.2, 0.4, 0.6])],
                               float(grid_doc.get("step", 0.2)))
        else:
            grid = [tuple(float(x) for x in row) for row in grid_doc]
        for row in grid:
            ScoreWeights(*row)
        return ExperimentSpec(
            name=str(doc.get("name", "experiment")),
            infra=InfraSource(**infra_doc),
            apps=tuple(str(a).upper() for a in doc.get("apps", ["RANDOM"])),
            engines=tuple(Engine(str(e).upper()) for e in doc.get("engines", ["FRESCO", "MINLP", "SQ"])),
            seeds=tuple(int(s) for s in seeds),
            apps_per_run=int(doc.get("apps_per_run", 20)),
            weights=_weights(doc.get("weights", {})),
            sim=dict(doc.get("sim", {})),
            grid=tuple(grid),
            base=base,
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigurationError(f"bad experiment spec: {exc}") from None


def load_spec(path: str | Path) -> ExperimentSpec:
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"spec file {p} not found")
    doc = yaml.safe_load(p.read_text())
    if not isinstance(doc, Mapping):
        raise ConfigurationError(f"{p}: experiment spec must be a mapping")
    return parse_spec(doc, p.parent)


# --- running ------------------------------------------------------------------

METRIC_COLUMNS = [f.name for f in fields(MetricsRecord)]
PLACEMENT_COLUMNS = [f.name for f in fields(PlacementRecord)]
TIMING_COLUMNS = ["run", "engine", "app", "decision", "decision_ms"]


@dataclass(frozen=True)
class Job:
    key: tuple[str, str, int, str]  # (app, engine, run, grid label)
    cfg: SimConfig


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if not math.isfinite(v):
            return repr(v)
        return f"{v:.6f}"
    return str(v)


def _run_job(job: Job, infra_text: str) -> tuple[tuple, list, list, list, str | None]:
    try:
        res = run_episode(job.cfg, InfrastructureMap.loads(infra_text))
    except Exception:  # noqa: BLE001 - reported in the failure manifest
        return job.key, [], [], [], traceback.format_exc()
    timing = [(job.cfg.run, job.cfg.engine.value, job.cfg.app, i, ms) for i, ms in enumerate(res.decision_ms)]
    return job.key, [asdict(r) for r in res.records], [asdict(p) for p in res.placements], timing, None


def execute(jobs: Sequence[Job], infra: InfrastructureMap, n_workers: int = 1) -> list[tuple]:
    """Run jobs (optionally in a process pool); results come back sorted by job key."""
    text = infra.dumps()
    if n_workers <= 1 or len(jobs) <= 1:
        results = [_run_job(j, text) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run_job, jobs, [text] * len(jobs)))
    return sorted(results, key=lambda r: r[0])


def _write_csv(path: Path, columns: Sequence[str], rows: Iterable[Mapping | Sequence]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            vals = [row[c] for c in columns] if isinstance(row, Mapping) else list(row)
            w.writerow([_fmt(v) for v in vals])


def _write_raw(out: Path, results: Sequence[tuple], extra_cols: Mapping[str, Any] | None = None) -> list[dict]:
    out.mkdir(parents=True, exist_ok=True)
    metrics, placements, timing, failures = [], [], [], []
    for key, recs, places, times, err in results:
        if err is not None:
            failures.append({"app": key[0], "engine": key[1], "run": key[2], "label": key[3], "error": err})
            continue
        metrics.extend(recs)
        placements.extend(places)
        timing.extend(times)
    _write_csv(out / "metrics.csv", METRIC_COLUMNS, metrics)
    _write_csv(out / "placements.csv", PLACEMENT_COLUMNS, placements)
    _write_csv(out / "timing.csv", TIMING_COLUMNS, timing)
    manifest = out / "failures.json"
    if failures:
        manifest.write_text(json.dumps(failures, indent=1) + "\n")
    elif manifest.exists():
        manifest.unlink()
    return failures


def experiment_jobs(spec: ExperimentSpec) -> list[Job]:
    jobs = []
    for app in spec.apps:
        for engine in spec.engines:
            for run, seed in enumerate(spec.seeds):
                jobs.append(Job((app, engine.value, run, ""), spec.sim_config(app, engine, seed, run)))
    return jobs


@dataclass
class RunOutcome:
    report: "SummaryReport"
    failures: list[dict]
    out_dir: Path


def run_experiment(spec: ExperimentSpec, out_dir: str | Path, jobs: int = 1) -> RunOutcome:
    spec = spec.with_env_seed()
    infra = spec.infra.build(spec.base)
    out = Path(out_dir)
    failures = _write_raw(out, execute(experiment_jobs(spec), infra, jobs))
    return RunOutcome(summarize(out), failures, out)


# --- summaries ----------------------------------------------------------------

SUMMARY_COLUMNS = ["engine", "app", "apps", "rt_mean_ms", "rt_std_ms", "rt_min_ms", "rt_max_ms", "battery_pct",
                   "cost", "violation_pct", "edge_pct", "cloud_pct", "mobile_pct", "decision_ms", "gas_wei"]


@dataclass
class SummaryReport:
    rows: list[dict]

    def row(self, engine: str, app: str) -> dict:
        for r in self.rows:
            if r["engine"] == engine and r["app"] == app:
                return r
        raise KeyError((engine, app))


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        raise ConfigurationError(f"raw file {path} not found")
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(raw_dir: str | Path) -> SummaryReport:
    """Fold raw per-run files into per (engine, app) statistics."""
    raw = Path(raw_dir)
    metrics = _read_csv(raw / "metrics.csv")
    timing = _read_csv(raw / "timing.csv") if (raw / "timing.csv").exists() else []
    groups: dict[tuple[str, str], list[dict]] = {}
    for m in metrics:
        groups.setdefault((m["engine"], m["workload"]), []).append(m)
    dec: dict[str, list[float]] = {}
    for t in timing:
        dec.setdefault(t["engine"], []).append(float(t["decision_ms"]))
    rows = []
    for (engine, app), ms in sorted(groups.items()):
        rt = [float(m["rt_ms"]) for m in ms]
        tiers = [sum(int(m[t]) for m in ms) for t in ("edge", "cloud", "mobile")]
        total = sum(tiers) or 1
        rows.append({
            "engine": engine, "app": app, "apps": len(ms),
            "rt_mean_ms": statistics.fmean(rt),
            "rt_std_ms": statistics.stdev(rt) if len(rt) > 1 else 0.0,
            "rt_min_ms": min(rt), "rt_max_ms": max(rt),
            "battery_pct": statistics.fmean(float(m["battery_pct"]) for m in ms),
            "cost": statistics.fmean(float(m["cost"]) for m in ms),
            "violation_pct": 100.0 * sum(int(m["violated"]) for m in ms) / len(ms),
            "edge_pct": 100.0 * tiers[0] / total, "cloud_pct": 100.0 * tiers[1] / total,
            "mobile_pct": 100.0 * tiers[2] / total,
            "decision_ms": statistics.fmean(dec[engine]) if dec.get(engine) else 0.0,
            "gas_wei": sum(int(m["gas_wei"]) for m in ms),
        })
    return SummaryReport(rows)


def per_run_means(raw_dir: str | Path, column: str) -> dict[tuple[str, str], dict[int, float]]:
    """``{(engine, app): {run: mean of column}}`` from ``metrics.csv``."""
    acc: dict[tuple[str, str], dict[int, list[float]]] = {}
    for m in _read_csv(Path(raw_dir) / "metrics.csv"):
        acc.setdefault((m["engine"], m["workload"]), {}).setdefault(int(m["run"]), []).append(float(m[column]))
    return {k: {run: statistics.fmean(v) for run, v in sorted(d.items())} for k, d in acc.items()}


def sign_test(a: Sequence[float], b: Sequence[float]) -> tuple[int, int, float]:
    """One-sided paired sign test that ``a`` tends to be smaller than ``b`` (ties dropped)."""
    if len(a) != len(b):
        raise ValueError("paired samples must have equal length")
    wins = sum(x < y for x, y in zip(a, b))
    losses = sum(x > y for x, y in zip(a, b))
    if wins + losses == 0:
        return 0, 0, 1.0
    return wins, losses, float(stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    return float(stats.spearmanr(x, y).statistic)


def _table(columns: Sequence[str], rows: Sequence[Mapping]) -> list[list[str]]:
    out = []
    for r in rows:
        out.append([f"{r[c]:.3f}" if isinstance(r[c], float) else str(r[c]) for c in columns])
    return out


def render(columns: Sequence[str], rows: Sequence[Mapping], fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        w.writerows(_table(columns, rows))
        return buf.getvalue()
    if fmt == "json":
        return json.dumps([{c: r[c] for c in columns} for r in rows], indent=1) + "\n"
    if fmt == "md":
        lines = ["| " + " | ".join(columns) + " |", "|" + "|".join("---" for _ in columns) + "|"]
        lines += ["| " + " | ".join(row) + " |" for row in _table(columns, rows)]
        return "\n".join(lines) + "\n"
    raise ConfigurationError(f"unknown report format {fmt!r}")


def emit_report(report: SummaryReport, fmt: str, path: str | Path | None = None) -> str:
    text = render(SUMMARY_COLUMNS, report.rows, fmt)
    if path is not None:
        Path(path).write_text(text)
    return text


# --- sensitivity sweep ---------------------------------------------------------

SWEEP_COLUMNS = ["alpha", "beta", "gamma", "rt_mean_ms", "cost", "battery_pct", "violation_pct"]


def sensitivity_sweep(spec: ExperimentSpec, out_dir: str | Path, jobs: int = 1) -> list[dict]:
    """FRESCO over every weight triple of the grid; one summary row per triple."""
    if not spec.grid:
        raise ConfigurationError("sweep needs a non-empty weight grid")
    spec = spec.with_env_seed()
    infra = spec.infra.build(spec.base)
    out = Path(out_dir)
    job_list = []
    for a, b, g in spec.grid:
        label = f"{a:.4f}-{b:.4f}-{g:.4f}"
        w = ScoreWeights(a, b, g)
        for app in spec.apps:
            for run, seed in enumerate(spec.seeds):
                job_list.append(Job((app, Engine.FRESCO.value, run, label),
                                    spec.sim_config(app, Engine.FRESCO, seed, run, w)))
    results = execute(job_list, infra, jobs)
    rows, by_label = [], {}
    for res in results:
        by_label.setdefault(res[0][3], []).append(res)
    for a, b, g in spec.grid:
        label = f"{a:.4f}-{b:.4f}-{g:.4f}"
        cell_dir = out / f"w_{label}"
        failures = _write_raw(cell_dir, by_label.get(label, []))
        if failures:
            continue
        s = summarize(cell_dir).rows
        n = sum(r["apps"] for r in s)
        rows.append({
            "alpha": a, "beta": b, "gamma": g,
            "rt_mean_ms": sum(r["rt_mean_ms"] * r["apps"] for r in s) / n,
            "cost": sum(r["cost"] * r["apps"] for r in s) / n,
            "battery_pct": sum(r["battery_pct"] * r["apps"] for r in s) / n,
            "violation_pct": sum(r["violation_pct"] * r["apps"] for r in s) / n,
        })
    (out / "sweep.csv").write_text(render(SWEEP_COLUMNS, rows, "csv"))
    return rows
