"""Ready-to-run scenarios."""
from .objectives import Objective, lemma1_check, quadratic_objective, soft_quadratic_objective, wavy_objective
from .planar import (
    ScenarioBundle,
    example1_c0_sweep,
    example1_certificate,
    example1_scenario,
    feedback_optimization_scenario,
    integral_control_scenario,
)
from .source_seeking import (
    SourceSeekingScenario,
    build_reduced_network,
    equilibrium_map,
    shipped_source_seeking,
    source_seeking_scenario,
)

__all__ = [
    "Objective", "lemma1_check", "quadratic_objective", "soft_quadratic_objective", "wavy_objective",
    "ScenarioBundle", "example1_c0_sweep", "example1_certificate", "example1_scenario",
    "feedback_optimization_scenario", "integral_control_scenario",
    "SourceSeekingScenario", "build_reduced_network", "equilibrium_map", "shipped_source_seeking",
    "source_seeking_scenario",
]
