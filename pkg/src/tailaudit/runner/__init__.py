from .config import AuditOptions, ExperimentConfig, default_config, load_config, parse_config
from .pipeline import audit, audit_predictions, run_experiment, run_sweep, strip_timestamp

__all__ = [
    "AuditOptions",
    "ExperimentConfig",
    "audit",
    "audit_predictions",
    "default_config",
    "load_config",
    "parse_config",
    "run_experiment",
    "run_sweep",
    "strip_timestamp",
]
