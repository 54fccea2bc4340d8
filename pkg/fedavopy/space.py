from dataclasses import dataclass, field

import numpy as np

# Hyperparameter order is (learning rate, momentum, weight decay, local epochs).
HYPERPARAMETER_NAMES = ("eta", "beta", "lambda", "epochs")
EPOCH_DIM = 3

IID_BOUNDS = {
    "lower": (1e-5, 0.1, 1e-4, 1.0),
    "upper": (1e-2, 0.9, 1e-2, 5.0),
}

NONIID_BOUNDS = {
    "lower": (1e-2, 1e-10, 1e-10, 1.0),
    "upper": (1e-1, 1e-9, 1e-8, 5.0),
}


@dataclass(frozen=True)
class SearchSpace:
    """
    A box-bounded continuous search space, optionally with dimensions that are forced to
    integer values.

    Attributes
    ----------
    lower : tuple[float]
        Lower bound of each dimension.
    upper : tuple[float]
        Upper bound of each dimension. Must be strictly greater than `lower`.
    integer_dims : frozenset[int]
        Indices of dimensions that are rounded (half up) to integers after clamping. Their
        bounds must be integers.
    """

    lower: tuple
    upper: tuple
    integer_dims: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        lower = tuple(float(x) for x in np.ravel(self.lower))
        upper = tuple(float(x) for x in np.ravel(self.upper))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "integer_dims", frozenset(int(i) for i in self.integer_dims))
        _validate_space(self)

    @property
    def dims(self) -> int:
        return len(self.lower)

    @property
    def lb(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def ub(self) -> np.ndarray:
        return np.array(self.upper)

    def clip(self, position: np.ndarray) -> np.ndarray:
        """
        Clamp a position into the box and round integer dimensions half up.
        """
        position = np.clip(np.asarray(position, dtype=float), self.lb, self.ub)
        for i in self.integer_dims:
            position[i] = min(max(np.floor(position[i] + 0.5), self.lower[i]), self.upper[i])
        return position

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """
        Draw `size` positions uniformly at random within the bounds.
        """
        positions = self.lb + rng.random((size, self.dims)) * (self.ub - self.lb)
        return np.array([self.clip(p) for p in positions])

    def contains(self, position: np.ndarray) -> bool:
        position = np.asarray(position, dtype=float)
        inside = bool(np.all(position >= self.lb) and np.all(position <= self.ub))
        integral = all(float(position[i]).is_integer() for i in self.integer_dims)
        return inside and integral


def hyperparameter_space(distribution: str = "iid") -> SearchSpace:
    """
    Return the default hyperparameter search space for a data distribution. IID runs use
    the wider momentum/decay box, Non-IID runs the higher learning rates with negligible
    momentum and decay.

    Parameters
    ----------
    distribution : str
        Either `iid` or `noniid`.

    Returns
    -------
    SearchSpace
        A 4-D space ordered (eta, beta, lambda, epochs) with epochs as an integer dimension.
    """
    if distribution == "iid":
        bounds = IID_BOUNDS
    elif distribution == "noniid":
        bounds = NONIID_BOUNDS
    else:
        raise ValueError(f"Unknown distribution '{distribution}'.")
    return SearchSpace(bounds["lower"], bounds["upper"], integer_dims=frozenset({EPOCH_DIM}))


def _validate_space(space: SearchSpace) -> bool:
    if len(space.lower) < 1:
        raise ValueError("Search space must have at least one dimension.")
    if len(space.lower) != len(space.upper):
        raise ValueError("Lower and upper bounds have different lengths.")
    if not all(np.isfinite(space.lower)) or not all(np.isfinite(space.upper)):
        raise ValueError("Search space bounds must be finite.")
    if any(lo >= hi for lo, hi in zip(space.lower, space.upper)):
        raise ValueError("Each lower bound must be strictly less than its upper bound.")
    if any(i < 0 or i >= len(space.lower) for i in space.integer_dims):
        raise ValueError("Integer dimension index out of range.")
    if any(
        int(space.lower[i]) != space.lower[i] or int(space.upper[i]) != space.upper[i]
        for i in space.integer_dims
    ):
        raise ValueError("Integer dimension bounds must be integers.")
    return True
