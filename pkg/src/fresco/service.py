"""FastAPI service around the core package: infrastructure builds, experiments, reports and a shared ledger."""
from __future__ import annotations

from collections import Counter
from pathlib import Path

from fastapi import FastAPI, HTTPException

from . import experiment as ex
from .errors import ConfigurationError, DomainError, LedgerError
from .infra import Tier, build_infrastructure, load_traces
from .ledger import Ledger, TransactionRecord
from .schemas import (CommitReceipt, ExperimentRequest, ExperimentResponse, InfraBuildRequest, InfraSummary,
                      LedgerStatus, NodeRegistration, ReportRequest, ReportResponse, ReputationReset,
                      ReputationUpdate, ReputationView, SweepResponse)


def build_infra(req: InfraBuildRequest):
    sites = ex.load_sites(req.cells, req.seed)
    return build_infrastructure(sites, req.clusters, req.seed, traces=load_traces(req.traces, len(sites), req.seed + 7))


def create_app(ledger: Ledger | None = None) -> FastAPI:
    app = FastAPI(title="fresco", version="0.1.0")
    app.state.ledger = ledger or Ledger()

    def bad_request(exc: Exception) -> HTTPException:
        return HTTPException(status_code=422, detail=str(exc))

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/infra/build", response_model=InfraSummary)
    def infra_build(req: InfraBuildRequest):
        try:
            infra = build_infra(req)
        except ConfigurationError as exc:
            raise bad_request(exc)
        tiers = Counter(n.tier.value for n in infra.nodes)
        return InfraSummary(cells=len(infra.cells), nodes=dict(sorted(tiers.items())), map=infra.to_dict())

    @app.post("/experiments/run", response_model=ExperimentResponse)
    def run(req: ExperimentRequest):
        try:
            spec = ex.parse_spec(req.spec, Path(req.base_dir))
            res = ex.run_experiment(spec, req.out_dir, req.jobs)
        except ConfigurationError as exc:
            raise bad_request(exc)
        return ExperimentResponse(out_dir=str(res.out_dir), rows=res.report.rows, failures=res.failures)

    @app.post("/experiments/sweep", response_model=SweepResponse)
    def sweep(req: ExperimentRequest):
        try:
            spec = ex.parse_spec(req.spec, Path(req.base_dir))
            rows = ex.sensitivity_sweep(spec, req.out_dir, req.jobs)
        except ConfigurationError as exc:
            raise bad_request(exc)
        return SweepResponse(out_dir=req.out_dir, rows=rows)

    @app.post("/reports", response_model=ReportResponse)
    def report(req: ReportRequest):
        try:
            text = ex.emit_report(ex.summarize(req.raw_dir), req.format)
        except ConfigurationError as exc:
            raise bad_request(exc)
        return ReportResponse(format=req.format, text=text)

    # -- ledger --

    @app.get("/ledger", response_model=LedgerStatus)
    def ledger_status():
        led = app.state.ledger
        return LedgerStatus(nodes=led.registered(), pending=led.pending_count(), gas_meter=led.gas_meter)

    @app.post("/ledger/nodes", status_code=201, response_model=LedgerStatus)
    def register(req: NodeRegistration):
        led = app.state.ledger
        try:
            led.register_node(req.node_id, req.tier, req.now)
        except LedgerError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return ledger_status()

    @app.delete("/ledger/nodes/{node_id}", response_model=LedgerStatus)
    def unregister(node_id: int):
        try:
            app.state.ledger.unregister_node(node_id)
        except LedgerError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return ledger_status()

    @app.get("/ledger/nodes/{node_id}/reputation", response_model=ReputationView)
    def reputation(node_id: int, now: float):
        try:
            rep = app.state.ledger.get_reputation_score(node_id, now)
        except LedgerError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return ReputationView(node_id=node_id, raw=rep.raw, value=float(rep), now=now)

    @app.post("/ledger/updates", response_model=CommitReceipt)
    def update(req: ReputationUpdate):
        led = app.state.ledger
        try:
            nabla = {int(k) if k.isdigit() else Tier(k.lower()): ms for k, ms in req.nabla.items()}
            txs = [TransactionRecord(t.measurement, t.node_id, t.failed) for t in req.transactions]
            commit = led.update_node_reputation(txs, nabla, req.now)
        except (LedgerError, DomainError, ValueError) as exc:
            raise bad_request(exc)
        return CommitReceipt(commit_time=commit, gas_meter=led.gas_meter)

    @app.post("/ledger/resets", response_model=LedgerStatus)
    def reset(req: ReputationReset):
        try:
            app.state.ledger.reset_reputation(req.node_ids, req.now)
        except LedgerError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return ledger_status()

    return app


app = create_app()
