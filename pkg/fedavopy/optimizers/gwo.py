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


def gwo_optimize(
    space: SearchSpace,
    objective: Callable,
    population_size: int = 50,
    max_iterations: int = 100,
    seed: int = None,
    map_fn: Callable = map,
) -> OptimizeResult:
    """
    Minimize an objective over a box with the Grey Wolf Optimizer. Each wolf moves to the
    average of its pulls towards the alpha, beta and delta leaders while the encircling
    coefficient `a` decays linearly from 2 to 0.

    Parameters
    ----------
    space : SearchSpace
        Search box.
    objective : Callable
        Maps a position to a fitness value. Non-finite values reject the move.
    population_size : int
        Number of wolves, at least 2. With two wolves the delta leader repeats beta.
    max_iterations : int
        Number of generations.
    seed : int
        Used to seed the random number generator. Randomly generated if left undefined.
    map_fn : Callable
        Used to evaluate each generation.

    Returns
    -------
    OptimizeResult
        Same contract as `avo_optimize`.
    """
    _validate_optimize(space, objective, population_size, max_iterations)
    seed = tools.gen_seed() if seed is None else seed

    args = locals()
    return _Gwo(**args).run()


@dataclass
class _Gwo:
    space: SearchSpace
    objective: Callable
    population_size: int
    max_iterations: int
    seed: int
    map_fn: Callable = map
    _trace: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self._rng = tools.gen_rng(self.seed)

    def _elect(self, leaders, leader_fitness, positions, fitness):
        # Incumbents come first so only strictly better wolves displace them.
        pool = np.vstack([leaders, positions]) if len(leaders) else positions
        pool_fitness = np.concatenate([leader_fitness, fitness])
        idx = leader_indices(pool_fitness, 3)
        while len(idx) < 3:
            idx.append(idx[-1])
        return pool[idx].copy(), pool_fitness[idx].copy()

    def _step(self, positions, leaders, iteration):
        a = 2 - 2 * iteration / self.max_iterations
        pulls = []
        for leader in leaders:
            r1 = self._rng.random(positions.shape)
            r2 = self._rng.random(positions.shape)
            A = 2 * a * r1 - a
            C = 2 * r2
            D = np.abs(C * leader - positions)
            pulls.append(leader - A * D)
        moves = sum(pulls) / len(pulls)
        return np.array([self.space.clip(p) for p in moves])

    def run(self) -> OptimizeResult:
        positions = self.space.sample(self._rng, self.population_size)
        fitness, rejected = initial_fitness(self.objective, positions, self.map_fn)
        leaders, leader_fitness = self._elect(
            np.empty((0, self.space.dims)), np.empty(0), positions, fitness
        )
        self._trace.append(float(leader_fitness[0]))

        for iteration in range(self.max_iterations):
            moves = self._step(positions, leaders, iteration)
            new_fitness = evaluate_positions(self.objective, moves, self.map_fn)
            positions, fitness, dropped = accept_finite(positions, fitness, moves, new_fitness)
            rejected += dropped
            leaders, leader_fitness = self._elect(leaders, leader_fitness, positions, fitness)
            self._trace.append(float(leader_fitness[0]))

        return OptimizeResult(
            position=self.space.clip(leaders[0]),
            fitness=float(leader_fitness[0]),
            trace=np.array(self._trace),
            evaluations=self.population_size * (1 + self.max_iterations),
            rejected=rejected,
        )
