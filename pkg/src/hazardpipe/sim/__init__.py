from .scenario import ImageDescriptor, Scenario, ScenarioParams, generate_scenario
from .mock_detector import MockDetector
from .validators import ValidatorPool
from .runner import SimulationResult, run_scenario

__all__ = [
    "ImageDescriptor",
    "Scenario",
    "ScenarioParams",
    "generate_scenario",
    "MockDetector",
    "ValidatorPool",
    "SimulationResult",
    "run_scenario",
]
