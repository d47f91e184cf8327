"""Active user detection for near-field IoT uplinks with and without user
location information."""

from .admm import DetectionResult, admm_baseline_solve, admm_li_solve, decide_active
from .experiments import ExperimentPlan, Scenario, SweepResult, run_sweep, run_trial
from .solver_core import AdmmConfig

__all__ = [
    "AdmmConfig",
    "DetectionResult",
    "ExperimentPlan",
    "Scenario",
    "SweepResult",
    "admm_baseline_solve",
    "admm_li_solve",
    "decide_active",
    "run_sweep",
    "run_trial",
]
__version__ = "0.1.0"
