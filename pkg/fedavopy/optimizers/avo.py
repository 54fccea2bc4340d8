from dataclasses import dataclass, field
from math import pi
from typing import Callable

import numpy as np
from scipy.special import gamma

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

DENOMINATOR_FLOOR = 1e-12
LEADER_SELECTIONS = ("fixed", "roulette")


@dataclass(frozen=True)
class AvoConfig:
    """
    Constants of the African Vulture Optimizer.

    Attributes
    ----------
    p1 : float
        Probability threshold choosing the leader-relative exploration move over the random
        box move.
    p2 : float
        Probability threshold choosing the siege-fight move over spiral flight in the first
        development stage.
    p3 : float
        Probability threshold choosing leader aggregation over the Levy-flight attack in the
        final stage.
    l1, l2 : float
        Probabilities of following the best and second-best vulture. Must sum to 1.
    omega : float
        Exponent of the starvation disturbance term. Larger values favour exploration.
    levy_beta : float
        Stability index of the Levy flight, in (1, 2].
    max_iterations : int
        Number of generations.
    leader_selection : str
        `fixed` draws best1 with probability `l1`. `roulette` weights the two leaders by
        `selection_probabilities` of their fitnesses.
    """

    p1: float = 0.6
    p2: float = 0.4
    p3: float = 0.6
    l1: float = 0.8
    l2: float = 0.2
    omega: float = 2.5
    levy_beta: float = 1.5
    max_iterations: int = 100
    leader_selection: str = "fixed"

    def __post_init__(self):
        _validate_avo_config(self)


@dataclass
class Vulture:
    position: np.ndarray
    fitness: float


@dataclass
class Population:
    """
    Vulture positions and fitnesses plus the two retained leaders. Leaders are copies and
    are only replaced by strictly better vultures, so their fitness never worsens.
    """

    positions: np.ndarray
    fitness: np.ndarray
    best1: Vulture = None
    best2: Vulture = None
    rejected: int = 0

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float)
        self.fitness = np.array(self.fitness, dtype=float)
        if self.best1 is None or self.best2 is None:
            self._elect_leaders(include_incumbents=False)

    def __len__(self):
        return self.positions.shape[0]

    @property
    def vultures(self) -> list[Vulture]:
        return [Vulture(p.copy(), float(f)) for p, f in zip(self.positions, self.fitness)]

    def _elect_leaders(self, include_incumbents: bool = True) -> None:
        if len(self) < 2:
            raise ValueError("Population too small: need two leaders.")
        positions = self.positions
        fitness = self.fitness
        if include_incumbents:
            positions = np.vstack([self.best1.position, self.best2.position, positions])
            fitness = np.concatenate([[self.best1.fitness, self.best2.fitness], fitness])
        first, second = leader_indices(fitness, 2)
        self.best1 = Vulture(positions[first].copy(), float(fitness[first]))
        self.best2 = Vulture(positions[second].copy(), float(fitness[second]))


def selection_probabilities(fitnesses: np.ndarray) -> np.ndarray:
    """
    Roulette-wheel probabilities for a minimized objective. Each fitness is mapped to
    `1 / (1 + f - min(f))` and normalized, so the best candidate gets the largest share and
    every candidate a strictly positive one.

    Parameters
    ----------
    fitnesses : numpy.ndarray
        Objective values, lower is better.

    Returns
    -------
    numpy.ndarray
        Probabilities summing to one.
    """
    fitnesses = np.asarray(fitnesses, dtype=float).ravel()
    if fitnesses.size == 0:
        raise ValueError("Cannot compute selection probabilities of an empty population.")
    tools._validate_finite(fitnesses, "Selection requires non-finite fitness to be excluded.")
    weights = 1.0 / (1.0 + fitnesses - fitnesses.min())
    return weights / weights.sum()


def select_reference_vulture(
    pop: Population, cfg: AvoConfig, rng: np.random.Generator
) -> np.ndarray:
    """
    Choose the leader a vulture moves relative to. Returns a copy of either the best or the
    second-best vulture's position.
    """
    if len(pop) < 2:
        raise ValueError("Population too small: need two leaders.")
    draw = rng.random()
    if cfg.leader_selection == "roulette" and np.isfinite(pop.best2.fitness):
        threshold = selection_probabilities([pop.best1.fitness, pop.best2.fitness])[0]
    elif cfg.leader_selection == "roulette":
        # Leaders without a usable fitness never win the wheel.
        threshold = 1.0
    else:
        threshold = cfg.l1
    leader = pop.best1 if draw < threshold else pop.best2
    return np.array(leader.position, dtype=float)


def starvation_rate(iteration: int, cfg: AvoConfig, rng: np.random.Generator) -> float:
    """
    Starvation rate of a vulture at a given iteration. It decays towards zero as the run
    progresses, with a disturbance term that vanishes at the first and last iteration.
    Draws (rand, h, z) from `rng` in that order, with h in [-1, 1] and z in [-2, 2].
    """
    if cfg.max_iterations < 1:
        raise ValueError("max_iterations must be at least 1.")
    if iteration < 0 or iteration > cfg.max_iterations:
        raise ValueError(f"Starvation iteration out of range: {iteration}.")
    rand = rng.random()
    h = 2.0 * rng.random() - 1.0
    z = 4.0 * rng.random() - 2.0
    ratio = iteration / cfg.max_iterations
    # cos(x) written as sin(pi/2 - x) so both endpoints evaluate exactly.
    rising = np.sin(pi / 2 * ratio) ** cfg.omega
    falling = np.sin(pi / 2 * (1 - ratio)) ** cfg.omega
    t = z * (rising + falling - 1)
    return float((2.0 * rand + 1.0) * h * (1.0 - ratio) + t)


def exploration_step(
    v: Vulture,
    ref_pos: np.ndarray,
    S: float,
    space: SearchSpace,
    cfg: AvoConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Exploration move for a satiated vulture (|S| >= 1). With probability `p1` it moves
    against the reference by its random distance, otherwise it jumps to a random point of the
    box offset by S.
    """
    if abs(S) < 1:
        raise ValueError(f"Exploration requires |S| >= 1, got {S}.")
    position, ref_pos = _validate_move(v, ref_pos, space)
    if cfg.p1 >= rng.random():
        new = ref_pos - _distance(position, ref_pos, rng) * S
    else:
        rand2 = rng.random()
        rand3 = rng.random()
        new = ref_pos - S + rand2 * ((space.ub - space.lb) * rand3 + space.lb)
    return space.clip(new)


def develop_stage1_step(
    v: Vulture,
    ref_pos: np.ndarray,
    S: float,
    cfg: AvoConfig,
    rng: np.random.Generator,
    space: SearchSpace,
) -> np.ndarray:
    """
    First development stage (0.5 <= |S| < 1): siege-fight with probability `p2`, otherwise
    spiral flight around the reference.
    """
    if not 0.5 <= abs(S) < 1:
        raise ValueError(f"First development stage requires 0.5 <= |S| < 1, got {S}.")
    position, ref_pos = _validate_move(v, ref_pos, space)
    if cfg.p2 >= rng.random():
        distance = _distance(position, ref_pos, rng)
        rand4 = rng.random()
        new = distance * (S + rand4) - (ref_pos - position)
    else:
        rand5 = rng.random(space.dims)
        rand6 = rng.random(space.dims)
        q1 = ref_pos * (rand5 * position / (2 * pi)) * np.cos(position)
        q2 = ref_pos * (rand6 * position / (2 * pi)) * np.sin(position)
        new = ref_pos - (q1 + q2)
    return space.clip(new)


def develop_stage2_step(
    v: Vulture,
    pop: Population,
    S: float,
    cfg: AvoConfig,
    rng: np.random.Generator,
    space: SearchSpace,
) -> np.ndarray:
    """
    Final development stage (|S| < 0.5): with probability `p3` the vulture moves to the
    midpoint of its pulls towards both leaders, otherwise it attacks a freshly selected
    leader with a Levy-flight step.
    """
    if abs(S) >= 0.5:
        raise ValueError(f"Final development stage requires |S| < 0.5, got {S}.")
    position, _ = _validate_move(v, pop.best1.position, space)
    if cfg.p3 >= rng.random():
        a1 = _leader_pull(np.asarray(pop.best1.position, dtype=float), position, S)
        a2 = _leader_pull(np.asarray(pop.best2.position, dtype=float), position, S)
        new = (a1 + a2) / 2
    else:
        ref_pos = select_reference_vulture(pop, cfg, rng)
        new = ref_pos - np.abs(ref_pos - position) * S * levy_flight(
            space.dims, cfg.levy_beta, rng
        )
    return space.clip(new)


def levy_flight(dims: int, levy_beta: float, rng: np.random.Generator) -> np.ndarray:
    """
    Heavy-tailed step vector generated with Mantegna's algorithm, scaled by 0.01.

    Parameters
    ----------
    dims : int
        Number of components.
    levy_beta : float
        Stability index in (1, 2].
    rng : numpy.random.Generator
        Random stream. `u` is drawn for all components first, then `v`.

    Returns
    -------
    numpy.ndarray
        Step of length `dims`.
    """
    if dims < 1:
        raise ValueError("Levy flight needs at least one dimension.")
    if not 1 < levy_beta <= 2:
        raise ValueError(f"levy_beta must lie in (1, 2], got {levy_beta}.")
    u = rng.standard_normal(dims) * mantegna_sigma(levy_beta)
    v = rng.standard_normal(dims)
    tiny = np.abs(v) < 1e-300
    while tiny.any():
        v[tiny] = rng.standard_normal(int(tiny.sum()))
        tiny = np.abs(v) < 1e-300
    return 0.01 * u / np.abs(v) ** (1 / levy_beta)


def mantegna_sigma(levy_beta: float) -> float:
    numerator = gamma(1 + levy_beta) * np.sin(pi * levy_beta / 2)
    denominator = gamma((1 + levy_beta) / 2) * levy_beta * 2 ** ((levy_beta - 1) / 2)
    return float((numerator / denominator) ** (1 / levy_beta))


def avo_generation(
    pop: Population,
    objective: Callable,
    iteration: int,
    cfg: AvoConfig,
    space: SearchSpace,
    rng: np.random.Generator,
    map_fn: Callable = map,
) -> Population:
    """
    Advance the population by one generation. Every vulture moves against the leaders as
    they stood at the start of the generation; all moves are drawn in vulture order before
    any evaluation, then evaluated with `map_fn`, then the leaders are updated.

    Parameters
    ----------
    pop : Population
        Evaluated population.
    objective : Callable
        Maps a position to a fitness value (lower is better).
    iteration : int
        Zero-based generation index, less than `cfg.max_iterations`.
    cfg : AvoConfig
        Optimizer constants.
    space : SearchSpace
        Bounds every new position is clamped into.
    rng : numpy.random.Generator
        Random stream.
    map_fn : Callable
        Used to evaluate the generation, e.g. `ThreadPoolExecutor().map`.

    Returns
    -------
    Population
        The updated population. Non-finite evaluations leave the vulture where it was and
        are counted in `Population.rejected`.
    """
    if iteration < 0 or iteration >= cfg.max_iterations:
        raise ValueError(f"Generation iteration out of range: {iteration}.")
    moves = np.empty_like(pop.positions)
    for i, vulture in enumerate(pop.vultures):
        ref_pos = select_reference_vulture(pop, cfg, rng)
        S = starvation_rate(iteration, cfg, rng)
        if abs(S) >= 1:
            moves[i] = exploration_step(vulture, ref_pos, S, space, cfg, rng)
        elif abs(S) >= 0.5:
            moves[i] = develop_stage1_step(vulture, ref_pos, S, cfg, rng, space)
        else:
            moves[i] = develop_stage2_step(vulture, pop, S, cfg, rng, space)

    fitness = evaluate_positions(objective, moves, map_fn)
    positions, fitness, rejected = accept_finite(pop.positions, pop.fitness, moves, fitness)
    new_pop = Population(
        positions, fitness, best1=pop.best1, best2=pop.best2, rejected=pop.rejected + rejected
    )
    new_pop._elect_leaders()
    return new_pop


def avo_optimize(
    space: SearchSpace,
    objective: Callable,
    cfg: AvoConfig = None,
    population_size: int = 50,
    seed: int = None,
    map_fn: Callable = map,
) -> OptimizeResult:
    """
    Minimize an objective over a box with the African Vulture Optimizer.

    Example
    -------
    ```python
    from fedavopy import SearchSpace, avo_optimize

    result = avo_optimize(
        SearchSpace(lower=[-5, -5], upper=[5, 5]),
        objective=lambda x: float((x**2).sum()),
        seed=12345,
    )
    ```

    Parameters
    ----------
    space : SearchSpace
        Search box. Integer dimensions are rounded after every move.
    objective : Callable
        Maps a position (numpy array) to a fitness value. Non-finite values reject the move.
    cfg : AvoConfig
        Optimizer constants. Defaults to `AvoConfig()`.
    population_size : int
        Number of vultures, at least 2.
    seed : int
        Used to seed the random number generator so that runs are reproducible. Randomly
        generated if left undefined.
    map_fn : Callable
        Used to evaluate each generation. Results do not depend on the scheduling.

    Returns
    -------
    OptimizeResult
        All-time best position and fitness, the per-generation best-fitness trace, the
        evaluation count (`population_size * (1 + max_iterations)`) and rejected moves.
    """
    cfg = cfg if cfg is not None else AvoConfig()
    _validate_optimize(space, objective, population_size, cfg.max_iterations)
    seed = tools.gen_seed() if seed is None else seed

    args = locals()
    return _Avo(**args).run()


def _validate_avo_config(cfg: AvoConfig) -> bool:
    for name in ("p1", "p2", "p3", "l1", "l2"):
        if not 0 <= getattr(cfg, name) <= 1:
            raise ValueError(f"AVO parameter {name} must lie in [0, 1].")
    if abs(cfg.l1 + cfg.l2 - 1) > 1e-12:
        raise ValueError("AVO parameters l1 and l2 must sum to 1.")
    if cfg.omega <= 0:
        raise ValueError("AVO parameter omega must be positive.")
    if not 1 < cfg.levy_beta <= 2:
        raise ValueError("AVO parameter levy_beta must lie in (1, 2].")
    if int(cfg.max_iterations) != cfg.max_iterations or cfg.max_iterations < 0:
        raise ValueError("AVO max_iterations must be a non-negative integer.")
    if cfg.leader_selection not in LEADER_SELECTIONS:
        raise ValueError(f"Unknown leader selection '{cfg.leader_selection}'.")
    return True


def _validate_move(v: Vulture, ref_pos: np.ndarray, space: SearchSpace):
    position = tools._validate_vector(v.position, space.dims, "position")
    ref_pos = tools._validate_vector(ref_pos, space.dims, "reference position")
    return position, ref_pos


def _distance(position: np.ndarray, ref_pos: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    X = 2 * rng.random(position.shape[0])
    return np.abs(X * ref_pos - position)


def _leader_pull(leader: np.ndarray, position: np.ndarray, S: float) -> np.ndarray:
    denominator = leader - position**2
    small = np.abs(denominator) < DENOMINATOR_FLOOR
    denominator = np.where(small, np.copysign(DENOMINATOR_FLOOR, denominator), denominator)
    return leader - (leader * position) / denominator * S


@dataclass
class _Avo:
    space: SearchSpace
    objective: Callable
    cfg: AvoConfig
    population_size: int
    seed: int
    map_fn: Callable = map
    _trace: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self._rng = tools.gen_rng(self.seed)

    def run(self) -> OptimizeResult:
        positions = self.space.sample(self._rng, self.population_size)
        fitness, rejected = initial_fitness(self.objective, positions, self.map_fn)
        pop = Population(positions, fitness, rejected=rejected)
        self._trace.append(pop.best1.fitness)

        for iteration in range(self.cfg.max_iterations):
            pop = avo_generation(
                pop, self.objective, iteration, self.cfg, self.space, self._rng, self.map_fn
            )
            self._trace.append(pop.best1.fitness)

        return OptimizeResult(
            position=self.space.clip(pop.best1.position),
            fitness=pop.best1.fitness,
            trace=np.array(self._trace),
            evaluations=self.population_size * (1 + self.cfg.max_iterations),
            rejected=pop.rejected,
        )
