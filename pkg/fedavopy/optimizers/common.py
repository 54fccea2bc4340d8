import logging
from typing import Callable, NamedTuple

import numpy as np

from ..space import SearchSpace

logger = logging.getLogger(__name__)


class OptimizeResult(NamedTuple):
    """
    Outcome of a population-based minimization.

    Attributes
    ----------
    position : numpy.ndarray
        All-time best position, with integer dimensions rounded.
    fitness : float
        Objective value at `position`.
    trace : numpy.ndarray
        Best fitness after initialization (index 0) and after each generation. Monotone
        nonincreasing.
    evaluations : int
        Number of objective evaluations performed.
    rejected : int
        Number of evaluations that returned a non-finite value and were discarded.
    """

    position: np.ndarray
    fitness: float
    trace: np.ndarray
    evaluations: int
    rejected: int


def evaluate_positions(
    objective: Callable, positions: np.ndarray, map_fn: Callable = map
) -> np.ndarray:
    """
    Evaluate every row of `positions`. Results come back in row order regardless of how
    `map_fn` schedules the calls, so any `Executor.map` may be passed in.
    """
    values = list(map_fn(objective, [np.array(p) for p in positions]))
    return np.array([_as_float(v) for v in values], dtype=float)


def accept_finite(
    old_positions: np.ndarray,
    old_fitness: np.ndarray,
    new_positions: np.ndarray,
    new_fitness: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, int]:
    """
    Keep the previous position and fitness wherever the new evaluation is not finite.
    """
    accepted = np.isfinite(new_fitness)
    positions = np.where(accepted[:, None], new_positions, old_positions)
    fitness = np.where(accepted, new_fitness, old_fitness)
    rejected = int((~accepted).sum())
    if rejected:
        logger.debug(f"Rejected {rejected} non-finite fitness evaluations.")
    return positions, fitness, rejected


def initial_fitness(objective: Callable, positions: np.ndarray, map_fn: Callable = map):
    fitness = evaluate_positions(objective, positions, map_fn)
    rejected = int((~np.isfinite(fitness)).sum())
    # Unusable starting points rank last until a finite move replaces them.
    fitness = np.where(np.isfinite(fitness), fitness, np.inf)
    return fitness, rejected


def _as_float(value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        return float("nan")


def _validate_optimize(
    space: SearchSpace, objective: Callable, population_size: int, max_iterations: int
) -> bool:
    if not isinstance(space, SearchSpace):
        raise ValueError("space must be a SearchSpace.")
    if not callable(objective):
        raise ValueError("objective is not callable.")
    if int(population_size) != population_size or population_size < 2:
        raise ValueError("Population size must be an integer of at least 2.")
    if int(max_iterations) != max_iterations or max_iterations < 0:
        raise ValueError("max_iterations must be a non-negative integer.")
    return True


def leader_indices(fitness: np.ndarray, count: int) -> list[int]:
    """
    Indices of the `count` lowest fitness values, best first. Ties resolve to the earlier
    index, so incumbents listed first are only displaced by strictly better candidates.
    """
    order = np.argsort(np.asarray(fitness, dtype=float), kind="stable")
    return [int(i) for i in order[:count]]
