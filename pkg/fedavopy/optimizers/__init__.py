from .avo import (
    AvoConfig,
    Population,
    Vulture,
    avo_generation,
    avo_optimize,
    develop_stage1_step,
    develop_stage2_step,
    exploration_step,
    levy_flight,
    select_reference_vulture,
    selection_probabilities,
    starvation_rate,
)
from .common import OptimizeResult
from .gwo import gwo_optimize
from .pso import PsoConfig, pso_optimize
