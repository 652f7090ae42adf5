"""Reputation-aware edge offloading: models, ledger, decision engines and a seeded simulator."""
from .decision import Engine, ScoreWeights, fresco_offload, minlp_select, smt_select, sq_select
from .errors import ConfigurationError, DomainError, FrescoError, LedgerError, UnstableQueue
from .experiment import ExperimentSpec, emit_report, load_spec, run_experiment, sensitivity_sweep, summarize
from .infra import InfrastructureMap, Tier, build_infrastructure
from .ledger import FixedRep, GasSchedule, Ledger, TransactionRecord
from .sim import SimConfig, run_episode

__version__ = "0.1.0"
