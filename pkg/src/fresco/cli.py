"""``fresco`` command line.

Each verb runs in-process by default. With ``--url`` (or ``FRESCO_URL``) it
becomes a thin client of a running ``fresco serve`` instance and only ships
the request; file paths are then resolved on the server side.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import httpx
import yaml

from . import experiment as ex
from .errors import FrescoError

URL_OPTION = click.option("--url", envvar="FRESCO_URL", default=None, help="service base URL (thin-client mode)")


def _post(url: str, path: str, payload: dict) -> dict:
    try:
        resp = httpx.post(url.rstrip("/") + path, json=payload, timeout=None)
    except httpx.HTTPError as exc:
        raise click.ClickException(f"service unreachable: {exc}") from None
    if resp.status_code >= 400:
        raise click.ClickException(f"service error {resp.status_code}: {resp.json().get('detail', resp.text)}")
    return resp.json()


def _get(url: str, path: str, params: dict | None = None) -> dict:
    try:
        resp = httpx.get(url.rstrip("/") + path, params=params, timeout=30)
    except httpx.HTTPError as exc:
        raise click.ClickException(f"service unreachable: {exc}") from None
    if resp.status_code >= 400:
        raise click.ClickException(f"service error {resp.status_code}: {resp.json().get('detail', resp.text)}")
    return resp.json()


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for info, -vv for per-decision debug logs")
def main(verbose: int) -> None:
    """Edge offloading simulator."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s %(message)s")


@main.group()
def infra() -> None:
    """Infrastructure maps."""


@infra.command("build")
@click.option("--cells", default="synth:60/10", show_default=True, help="cell-site CSV or synth:<sites>/<groups>")
@click.option("--traces", default="synth:ratio=0.65", show_default=True,
              help="availability trace file or synth:ratio=..[,mean=..][,conc=..]")
@click.option("--clusters", default=30, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@URL_OPTION
def infra_build(cells: str, traces: str, clusters: int, seed: int, out: str, url: str | None) -> None:
    """Cluster cell sites and write the infrastructure map as JSON."""
    from .schemas import InfraBuildRequest

    req = InfraBuildRequest(cells=cells, traces=traces, clusters=clusters, seed=seed)
    try:
        if url:
            text = json.dumps(_post(url, "/infra/build", req.model_dump())["map"], sort_keys=True, indent=1) + "\n"
        else:
            from .service import build_infra
            text = build_infra(req).dumps()
    except FrescoError as exc:
        raise click.ClickException(str(exc)) from None
    Path(out).write_text(text)
    click.echo(f"wrote {out}")


def _spec_doc(path: str) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise click.ClickException(f"cannot read spec {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise click.ClickException(f"{path}: experiment spec must be a mapping")
    return doc


def _default_out(spec_path: str, suffix: str) -> str:
    return str(Path("runs") / f"{Path(spec_path).stem}{suffix}")


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--jobs", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--out", default=None, help="raw output directory [runs/<spec name>]")
@click.option("--format", "fmt", type=click.Choice(["csv", "json", "md"]), default="md", show_default=True)
@URL_OPTION
def run(spec_path: str, jobs: int, out: str | None, fmt: str, url: str | None) -> None:
    """Run every engine x app x seed of an experiment and print the summary."""
    out = out or _default_out(spec_path, "")
    try:
        if url:
            doc = _post(url, "/experiments/run", {"spec": _spec_doc(spec_path), "out_dir": out, "jobs": jobs,
                                                  "base_dir": str(Path(spec_path).parent.resolve())})
            report, failures = ex.SummaryReport(doc["rows"]), doc["failures"]
        else:
            res = ex.run_experiment(ex.load_spec(spec_path), out, jobs)
            report, failures = res.report, res.failures
    except FrescoError as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(ex.emit_report(report, fmt), nl=False)
    if failures:
        click.echo(f"{len(failures)} run(s) failed; see {Path(out) / 'failures.json'}", err=True)
        sys.exit(1)


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--jobs", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--out", default=None, help="output directory [runs/<spec name>-sweep]")
@click.option("--format", "fmt", type=click.Choice(["csv", "json", "md"]), default="md", show_default=True)
@URL_OPTION
def sweep(spec_path: str, jobs: int, out: str | None, fmt: str, url: str | None) -> None:
    """Score-weight sensitivity grid (FRESCO only)."""
    out = out or _default_out(spec_path, "-sweep")
    try:
        if url:
            rows = _post(url, "/experiments/sweep", {"spec": _spec_doc(spec_path), "out_dir": out, "jobs": jobs,
                                                     "base_dir": str(Path(spec_path).parent.resolve())})["rows"]
        else:
            rows = ex.sensitivity_sweep(ex.load_spec(spec_path), out, jobs)
    except FrescoError as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(ex.render(ex.SWEEP_COLUMNS, rows, fmt), nl=False)


@main.command()
@click.option("--raw", "raw_dir", type=click.Path(file_okay=False), required=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json", "md"]), default="md", show_default=True)
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="write to a file instead of stdout")
@URL_OPTION
def report(raw_dir: str, fmt: str, out: str | None, url: str | None) -> None:
    """Summarize a raw output directory."""
    try:
        if url:
            text = _post(url, "/reports", {"raw_dir": raw_dir, "format": fmt})["text"]
        else:
            text = ex.emit_report(ex.summarize(raw_dir), fmt)
    except FrescoError as exc:
        raise click.ClickException(str(exc)) from None
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host: str, port: int) -> None:
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run("fresco.service:app", host=host, port=port)


@main.group()
def ledger() -> None:
    """Client for the service's shared reputation ledger."""


def _need(url: str | None) -> str:
    if not url:
        raise click.UsageError("ledger commands need --url or FRESCO_URL")
    return url


@ledger.command("status")
@URL_OPTION
def ledger_status(url: str | None) -> None:
    click.echo(json.dumps(_get(_need(url), "/ledger"), indent=1))


@ledger.command("register")
@click.argument("node_id", type=int)
@click.option("--tier", type=click.Choice(["edge", "cloud", "mobile"]), default="edge", show_default=True)
@URL_OPTION
def ledger_register(node_id: int, tier: str, url: str | None) -> None:
    click.echo(json.dumps(_post(_need(url), "/ledger/nodes", {"node_id": node_id, "tier": tier}), indent=1))


@ledger.command("reputation")
@click.argument("node_id", type=int)
@click.option("--now", type=float, required=True, help="simulated ms")
@URL_OPTION
def ledger_reputation(node_id: int, now: float, url: str | None) -> None:
    click.echo(json.dumps(_get(_need(url), f"/ledger/nodes/{node_id}/reputation", {"now": now}), indent=1))


@ledger.command("update")
@click.argument("node_id", type=int)
@click.option("--measurement", type=float, required=True, help="ms")
@click.option("--nabla", type=float, required=True, help="timing constraint in ms")
@click.option("--now", type=float, required=True)
@click.option("--failed", is_flag=True)
@URL_OPTION
def ledger_update(node_id: int, measurement: float, nabla: float, now: float, failed: bool, url: str | None) -> None:
    payload = {"transactions": [{"measurement": measurement, "node_id": node_id, "failed": failed}],
               "nabla": {str(node_id): nabla}, "now": now}
    click.echo(json.dumps(_post(_need(url), "/ledger/updates", payload), indent=1))


if __name__ == "__main__":  # pragma: no cover
    main()
