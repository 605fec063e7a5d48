from .config import EXPERIMENTS, ExperimentConfig, default_config
from .runners import RUNNERS, RunResult, run_experiment, write_outputs

__all__ = ["EXPERIMENTS", "ExperimentConfig", "default_config", "RUNNERS", "RunResult", "run_experiment", "write_outputs"]
