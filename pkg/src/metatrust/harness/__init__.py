from metatrust.harness.config import ExperimentConfig, load_config
from metatrust.harness.runner import run_ablation, run_experiment, run_single

__all__ = ["ExperimentConfig", "load_config", "run_ablation", "run_experiment", "run_single"]
