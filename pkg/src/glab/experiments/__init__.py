from .config import ConfigError, load_config, params_from_config, parse_config
from .record import Check, RunRecord, load_record, save_record
from .runners import RUNNERS, ExperimentResult, run_named
from .stats import WeightedNorm, holder_time_exponent, ks_distance, norm_eval

__all__ = [
    "ConfigError", "load_config", "params_from_config", "parse_config",
    "Check", "RunRecord", "load_record", "save_record",
    "RUNNERS", "ExperimentResult", "run_named",
    "WeightedNorm", "holder_time_exponent", "ks_distance", "norm_eval",
]
