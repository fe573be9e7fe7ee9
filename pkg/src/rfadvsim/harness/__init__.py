from .config import ExperimentConfig, load_config, parse_config
from .sweep import CSV_HEADER, CurvePoint, run_broadcast, run_certify, run_sweep, write_csv

__all__ = ["CSV_HEADER", "CurvePoint", "ExperimentConfig", "load_config", "parse_config", "run_broadcast",
           "run_certify", "run_sweep", "write_csv"]
