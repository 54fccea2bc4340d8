from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import tools
from ..space import SearchSpace
from .common import (
    OptimizeResult,
    _validate_optimize,
    accept_finite,
    evaluate_positions,
    initial_fitness,
    leader_indices,
)


@dataclass(frozen=True)
class PsoConfig:
    """
    Constants of global-best particle swarm optimization (constriction-equivalent defaults).
    """

    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    max_iterations: int = 100

    def __post_init__(self):
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 0:
            raise ValueError("PSO max_iterations must be a non-negative integer.")
        if self.inertia < 0 or self.cognitive < 0 or self.social < 0:
            raise ValueError("PSO coefficients must be non-negative.")


def pso_optimize(
    space: SearchSpace,
    objective: Callable,
    cfg: PsoConfig = None,
    population_size: int = 50,
    seed: int = None,
    map_fn: Callable = map,
) -> OptimizeResult:
    """
    Minimize an objective over a box with global-best particle swarm optimization.
    Velocities are clamped to the box width per dimension and positions to the box.

    Parameters
    ----------
    space : SearchSpace
        Search box.
    objective : Callable
        Maps a position to a fitness value. Non-finite values reject the move.
    cfg : PsoConfig
        Swarm constants. Defaults to `PsoConfig()`.
    population_size : int
        Number of particles, at least 2.
    seed : int
        Used to seed the random number generator. Randomly generated if left undefined.
    map_fn : Callable
        Used to evaluate each generation.

    Returns
    -------
    OptimizeResult
        Same contract as `avo_optimize`.
    """
    cfg = cfg if cfg is not None else PsoConfig()
    _validate_optimize(space, objective, population_size, cfg.max_iterations)
    seed = tools.gen_seed() if seed is None else seed

    args = locals()
    return _Pso(**args).run()


@dataclass
class _Pso:
    space: SearchSpace
    objective: Callable
    cfg: PsoConfig
    population_size: int
    seed: int
    map_fn: Callable = map
    _trace: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self._rng = tools.gen_rng(self.seed)
        self._vmax = self.space.ub - self.space.lb

    def _step(self, positions, velocities, personal, gbest):
        shape = positions.shape
        r1 = self._rng.random(shape)
        r2 = self._rng.random(shape)
        velocities = (
            self.cfg.inertia * velocities
            + self.cfg.cognitive * r1 * (personal - positions)
            + self.cfg.social * r2 * (gbest - positions)
        )
        velocities = np.clip(velocities, -self._vmax, self._vmax)
        moves = np.array([self.space.clip(p) for p in positions + velocities])
        return moves, velocities

    def run(self) -> OptimizeResult:
        positions = self.space.sample(self._rng, self.population_size)
        velocities = np.zeros_like(positions)
        fitness, rejected = initial_fitness(self.objective, positions, self.map_fn)
        personal, personal_fitness = positions.copy(), fitness.copy()
        best = leader_indices(fitness, 1)[0]
        gbest, gbest_fitness = positions[best].copy(), float(fitness[best])
        self._trace.append(gbest_fitness)

        for _ in range(self.cfg.max_iterations):
            moves, velocities = self._step(positions, velocities, personal, gbest)
            new_fitness = evaluate_positions(self.objective, moves, self.map_fn)
            positions, fitness, dropped = accept_finite(positions, fitness, moves, new_fitness)
            rejected += dropped

            improved = fitness < personal_fitness
            personal[improved] = positions[improved]
            personal_fitness[improved] = fitness[improved]

            best = leader_indices(personal_fitness, 1)[0]
            if personal_fitness[best] < gbest_fitness:
                gbest, gbest_fitness = personal[best].copy(), float(personal_fitness[best])
            self._trace.append(gbest_fitness)

        return OptimizeResult(
            position=self.space.clip(gbest),
            fitness=gbest_fitness,
            trace=np.array(self._trace),
            evaluations=self.population_size * (1 + self.cfg.max_iterations),
            rejected=rejected,
        )
