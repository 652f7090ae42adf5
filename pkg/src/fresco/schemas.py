"""Request and response models of the HTTP service."""
from __future__ import annotations

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from .infra import Tier

ReportFormat = Literal["csv", "json", "md"]


class InfraBuildRequest(BaseModel):
    cells: str = Field("synth:60/10", description="cell-site CSV path or synth:<sites>/<groups>")
    traces: str = Field("synth:ratio=0.65", description="trace file path or synth:ratio=..[,mean=..][,conc=..]")
    clusters: int = Field(30, ge=1)
    seed: int = 0


class InfraSummary(BaseModel):
    cells: int
    nodes: Dict[str, int]  # per tier
    map: Dict[str, Any]


class ExperimentRequest(BaseModel):
    spec: Dict[str, Any] = Field(..., description="experiment document (same schema as the YAML file)")
    out_dir: str
    jobs: int = Field(1, ge=1)
    base_dir: str = "."


class ReportRequest(BaseModel):
    raw_dir: str
    format: ReportFormat = "md"


class ExperimentResponse(BaseModel):
    out_dir: str
    rows: List[Dict[str, Any]]
    failures: List[Dict[str, Any]] = []


class SweepResponse(BaseModel):
    out_dir: str
    rows: List[Dict[str, Any]]


class ReportResponse(BaseModel):
    format: ReportFormat
    text: str


class NodeRegistration(BaseModel):
    node_id: int = Field(..., ge=0)
    tier: Tier = Tier.EDGE
    now: float = 0.0


class Transaction(BaseModel):
    measurement: float = Field(..., ge=0, description="ms")
    node_id: int
    failed: bool = False


class ReputationUpdate(BaseModel):
    transactions: List[Transaction] = Field(..., min_length=1)
    nabla: Dict[str, float] = Field(..., description="ms keyed by node id or tier name")
    now: float


class ReputationReset(BaseModel):
    node_ids: List[int] = Field(..., min_length=1)
    now: float = 0.0


class ReputationView(BaseModel):
    node_id: int
    raw: int
    value: float
    now: Optional[float] = None


class LedgerStatus(BaseModel):
    nodes: List[int]
    pending: int
    gas_meter: int


class CommitReceipt(BaseModel):
    commit_time: float
    gas_meter: int
