import logging
import warnings
from dataclasses import dataclass, field, replace
from math import ceil, floor
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import tools
from .data import Dataset
from .nn import HyperParams, ModelSpec, evaluate, init_params, train_local
from .optimizers import AvoConfig, OptimizeResult, PsoConfig, avo_optimize, gwo_optimize
from .optimizers import pso_optimize
from .space import EPOCH_DIM, SearchSpace, hyperparameter_space

logger = logging.getLogger(__name__)

ALGORITHMS = ("fedavg", "fedavo", "fedpso", "fedgwo")
VALIDATION_FRACTION = 0.2

# Independent random streams derived from the run seed.
_PARTITION_STREAM = 0
_SPLIT_STREAM = 1
_SELECT_STREAM = 2
_TRAIN_STREAM = 3
_TUNE_STREAM = 4


@dataclass(frozen=True)
class ClientShard:
    """
    A client's local data with a disjoint train/validation split. The validation part holds
    `ceil(20%)` of the rows and is used only to score candidate hyperparameters.
    """

    client_id: int
    data: Dataset
    train_idx: np.ndarray
    val_idx: np.ndarray

    @classmethod
    def split(cls, client_id: int, data: Dataset, seed: int) -> "ClientShard":
        if len(data) < 2:
            raise ValueError(f"Client {client_id} needs at least two samples.")
        order = tools.gen_rng(seed, _SPLIT_STREAM, client_id).permutation(len(data))
        n_val = ceil(VALIDATION_FRACTION * len(data))
        return cls(client_id, data, np.sort(order[n_val:]), np.sort(order[:n_val]))

    def __len__(self):
        return len(self.data)

    @property
    def train(self) -> Dataset:
        return self.data.take(self.train_idx)

    @property
    def val(self) -> Dataset:
        return self.data.take(self.val_idx)


@dataclass(frozen=True)
class FLConfig:
    """
    Settings of a federated run.

    Attributes
    ----------
    num_clients : int
        Number of clients K.
    client_fraction : float
        Fraction p of clients selected each round; at least one client always participates.
    batch_size : int
        Local mini-batch size.
    rounds : int
        Number of communication rounds.
    algorithm : str
        One of `fedavg`, `fedavo`, `fedpso`, `fedgwo`.
    tuning_epochs : int
        Optimizer generations per client update for the tuning algorithms.
    population_size : int
        Candidates per tuning population.
    search_space : SearchSpace
        Hyperparameter box ordered (eta, beta, lambda, epochs). Defaults to the IID bounds.
    fixed_hp : HyperParams
        Hyperparameters for `fedavg` and the fallback of the tuners. Defaults to eta=0.01,
        E=5 without momentum or decay. Under the `literal` update mode the defaults are
        momentum 1.0 and decay 0.991: the commonly quoted FedAvg momentum of 0.9 would scale
        every parameter by 0.9 on each literal step, so 1.0 is used instead.
    seed : int
        Seed every random stream of the run is derived from.
    update_mode : str
        `velocity` or `literal`, see `nn.sgd_step`.
    avo : AvoConfig
        AVO constants; `max_iterations` is replaced by `tuning_epochs`.
    """

    num_clients: int = 10
    client_fraction: float = 1.0
    batch_size: int = 16
    rounds: int = 20
    algorithm: str = "fedavo"
    tuning_epochs: int = 3
    population_size: int = 50
    search_space: SearchSpace = None
    fixed_hp: HyperParams = None
    seed: int = 0
    update_mode: str = "velocity"
    avo: AvoConfig = field(default_factory=AvoConfig)

    def __post_init__(self):
        if self.search_space is None:
            object.__setattr__(self, "search_space", hyperparameter_space("iid"))
        if self.fixed_hp is None:
            if self.update_mode == "literal":
                fixed = HyperParams(0.01, momentum=1.0, weight_decay=0.991, epochs=5)
            else:
                fixed = HyperParams(0.01, momentum=0.0, weight_decay=0.0, epochs=5)
            object.__setattr__(self, "fixed_hp", fixed)
        _validate_fl_config(self)

    @property
    def clients_per_round(self) -> int:
        return max(floor(self.num_clients * self.client_fraction), 1)


class ClientRecord(NamedTuple):
    client_id: int
    local_accuracy: float
    local_loss: float
    hyperparams: HyperParams
    tuning_evaluations: int


@dataclass
class RoundMetrics:
    """
    Outcome of one communication round. Round 0 describes the initial model.
    """

    round: int
    global_accuracy: float
    global_loss: float
    per_client: list = field(default_factory=list)
    selected_clients: list = field(default_factory=list)
    bytes_communicated: int = 0


class ClientUpdate(NamedTuple):
    params: np.ndarray
    num_samples: int
    hyperparams: HyperParams
    tuning_evaluations: int


def partition_iid(dataset: Dataset, K: int, shard_size: int, seed: int) -> list[ClientShard]:
    """
    Give each of `K` clients a disjoint slice of `shard_size` rows of a seeded shuffle, so
    each shard's class mix approximates the global one.
    """
    if K < 1 or shard_size < 1:
        raise ValueError("Need at least one client and a positive shard size.")
    if K * shard_size > len(dataset):
        raise ValueError(
            f"Insufficient data: {K} shards of {shard_size} need {K * shard_size} rows, "
            f"dataset has {len(dataset)}."
        )
    order = tools.gen_rng(seed, _PARTITION_STREAM).permutation(len(dataset))
    return [
        ClientShard.split(k, dataset.take(order[k * shard_size : (k + 1) * shard_size]), seed)
        for k in range(K)
    ]


def partition_noniid(
    dataset: Dataset, K: int, classes_per_client: int, shard_size: int, seed: int
) -> list[ClientShard]:
    """
    Label-skewed partition: each client holds samples of only `classes_per_client` labels.

    Labels are handed out by walking a seeded permutation of the classes cyclically, so
    labels within a client are distinct, every class is used by the same number of clients
    (to within one), and overlap between clients is inevitable once
    `K * classes_per_client` exceeds the class count. No sample is given to two clients.

    Each class pool is divided up front among the clients that use it, so an early client
    never starves a later one. A shard is balanced across its labels to within one sample
    whenever those allowances permit; otherwise a short label is topped up from the
    client's other labels.

    Parameters
    ----------
    dataset : Dataset
        Source data.
    K : int
        Number of clients.
    classes_per_client : int
        Labels per client, at most the class count.
    shard_size : int
        Samples per client.
    seed : int
        Seed of the assignment and sampling.

    Returns
    -------
    list[ClientShard]
    """
    M = dataset.num_classes
    if not 1 <= classes_per_client <= M:
        raise ValueError(f"classes_per_client must lie in [1, {M}].")
    if K < 1 or shard_size < classes_per_client:
        raise ValueError("Need at least one client and one sample per assigned class.")

    rng = tools.gen_rng(seed, _PARTITION_STREAM)
    labels = rng.permutation(M)
    pools = {c: list(rng.permutation(np.flatnonzero(dataset.labels == c))) for c in range(M)}
    slots = np.arange(classes_per_client)
    assignments = [
        sorted(int(c) for c in labels[(k * classes_per_client + slots) % M]) for k in range(K)
    ]
    users = np.bincount(np.concatenate(assignments), minlength=M)
    sizes = {c: len(pool) for c, pool in pools.items()}
    seen = np.zeros(M, dtype=int)
    quota, extra = divmod(shard_size, classes_per_client)

    shards = []
    for k, assigned in enumerate(assignments):
        allowance = []
        for c in assigned:
            share, rest = divmod(sizes[c], users[c])
            allowance.append(int(share) + (1 if seen[c] < rest else 0))
            seen[c] += 1
        take = [min(quota + (1 if j < extra else 0), a) for j, a in enumerate(allowance)]
        while (missing := shard_size - sum(take)) > 0:
            spare = [j for j in range(classes_per_client) if take[j] < allowance[j]]
            if not spare:
                short = assigned[int(np.argmin(allowance))]
                raise ValueError(f"Class {short} exhausted while filling client {k}.")
            for j in spare[:missing]:
                take[j] += 1
        idx = []
        for c, n in zip(assigned, take):
            idx.extend(pools[c][:n])
            pools[c] = pools[c][n:]
        shards.append(ClientShard.split(k, dataset.take(np.array(idx)), seed))
    return shards


def select_clients(K: int, p: float, round: int, seed: int) -> list[int]:
    """
    Choose `max(floor(K * p), 1)` distinct clients for a round, sorted ascending. The draw
    depends only on (seed, round).
    """
    if K < 1:
        raise ValueError("Need at least one client.")
    if not 0 < p <= 1:
        raise ValueError("Client fraction must lie in (0, 1].")
    q = max(floor(K * p), 1)
    rng = tools.gen_rng(seed, _SELECT_STREAM, round)
    return sorted(int(k) for k in rng.choice(K, size=q, replace=False))


def aggregate(updates: Sequence[tuple[np.ndarray, int]]) -> np.ndarray:
    """
    Sample-weighted average of client parameters, summed in the order given.

    Parameters
    ----------
    updates : list of (params, n_k)
        Client parameters and sample counts, in ascending client order.

    Returns
    -------
    numpy.ndarray
        `sum(n_k / n * params_k)` with `n = sum(n_k)`.
    """
    if len(updates) == 0:
        raise ValueError("Cannot aggregate an empty set of updates.")
    length = np.asarray(updates[0][0]).shape[0]
    n = 0
    for params, n_k in updates:
        if np.asarray(params).shape != (length,):
            raise ValueError("Parameter length mismatch between client updates.")
        if n_k < 1:
            raise ValueError("Every client update needs at least one sample.")
        n += n_k
    total = np.zeros(length)
    for params, n_k in updates:
        total += (n_k / n) * np.asarray(params, dtype=float)
    return total


def client_update_fedavg(
    spec: ModelSpec,
    global_params: np.ndarray,
    shard: ClientShard,
    hp: HyperParams,
    batch_size: int,
    seed: int | Sequence[int],
    mode: str = "velocity",
) -> tuple[np.ndarray, int]:
    """
    Train the global model on the whole shard with fixed hyperparameters.
    """
    params = train_local(spec, global_params, shard.data, hp, batch_size, mode, seed)
    return params, len(shard)


def client_update_fedavo(
    spec: ModelSpec, global_params: np.ndarray, shard: ClientShard, cfg: FLConfig, round: int,
    client_id: int,
) -> ClientUpdate:
    """
    Tune a client's hyperparameters with a population optimizer, then train with the best.

    Each candidate position is decoded into `HyperParams`, a copy of the global model is
    trained on the shard's training split, and the candidate scores its validation
    cross-entropy. One population is initialized and evolved for `cfg.tuning_epochs`
    generations, so a call costs `population_size * (1 + tuning_epochs)` trainings. The
    all-time best candidate then trains the global model on the full shard. `cfg.algorithm`
    picks the optimizer (`fedavo`, `fedpso` or `fedgwo`); all share the same objective and
    budget.

    Parameters
    ----------
    spec : ModelSpec
        Model layout.
    global_params : numpy.ndarray
        Round-start global parameters; not modified.
    shard : ClientShard
        The client's data.
    cfg : FLConfig
        Run settings.
    round : int
        Current round, used to derive random streams.
    client_id : int
        Client identifier, used to derive random streams.

    Returns
    -------
    ClientUpdate
        Trained parameters, shard size, chosen hyperparameters and the evaluation count.
    """
    _validate_tuning_space(cfg.search_space)
    train_keys = (cfg.seed, _TRAIN_STREAM, round, client_id)
    train, val = shard.train, shard.val

    def fitness(position: np.ndarray) -> float:
        hp = HyperParams.from_position(position, cfg.search_space)
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                params = train_local(
                    spec, global_params, train, hp, cfg.batch_size, cfg.update_mode, train_keys
                )
            except ValueError:
                return float("nan")
            if not np.all(np.isfinite(params)):
                return float("nan")
            return evaluate(spec, params, val)[0]

    result = _tune(fitness, cfg, tools.derive_seed(cfg.seed, _TUNE_STREAM, round, client_id))

    if np.isfinite(result.fitness):
        chosen = HyperParams.from_position(result.position, cfg.search_space)
    else:
        warnings.warn(
            f"Every candidate diverged for client {client_id} in round {round}; "
            "falling back to the fixed hyperparameters."
        )
        chosen = cfg.fixed_hp
    logger.debug(f"Round {round}, client {client_id}: chose {chosen} (val loss {result.fitness})")

    params = train_local(
        spec, global_params, shard.data, chosen, cfg.batch_size, cfg.update_mode, train_keys
    )
    return ClientUpdate(params, len(shard), chosen, result.evaluations)


def run_federated(
    spec: ModelSpec,
    dataset_train: Dataset | Sequence[ClientShard],
    dataset_test: Dataset,
    cfg: FLConfig,
    map_fn: Callable = map,
) -> list[RoundMetrics]:
    """
    Run the server loop: initialize the global model, then for each round select clients,
    run their updates, aggregate and evaluate on the test set.

    Parameters
    ----------
    spec : ModelSpec
        Model layout.
    dataset_train : Dataset or list[ClientShard]
        Client shards, or a dataset that is split IID into `num_clients` equal shards.
    dataset_test : Dataset
        Held-out data for the global model.
    cfg : FLConfig
        Run settings.
    map_fn : Callable
        Used to run the selected clients' updates. Updates are independent and aggregated
        in ascending client order, so an `Executor.map` gives identical results.

    Returns
    -------
    list[RoundMetrics]
        One record per round, starting with round 0 for the initial model.
    """
    shards = _as_shards(dataset_train, cfg)
    if len(shards) != cfg.num_clients:
        raise ValueError(f"Expected {cfg.num_clients} client shards, got {len(shards)}.")

    global_params = init_params(spec, tools.derive_seed(cfg.seed, _TRAIN_STREAM))
    loss, accuracy = evaluate(spec, global_params, dataset_test)
    history = [RoundMetrics(round=0, global_accuracy=accuracy, global_loss=loss)]
    logger.info(f"Round 0: accuracy {accuracy:.4f}, loss {loss:.4f}")

    for r in range(1, cfg.rounds + 1):
        selected = select_clients(cfg.num_clients, cfg.client_fraction, r, cfg.seed)

        def work(k: int) -> ClientUpdate:
            try:
                return _client_update(spec, global_params, shards[k], cfg, r)
            except Exception as e:
                raise RuntimeError(f"Round {r}, client {k}: {e}") from e

        updates = list(map_fn(work, selected))
        records = []
        for k, update in zip(selected, updates):
            local_loss, local_accuracy = evaluate(spec, update.params, shards[k].data)
            records.append(
                ClientRecord(
                    k, local_accuracy, local_loss, update.hyperparams, update.tuning_evaluations
                )
            )

        global_params = aggregate([(u.params, u.num_samples) for u in updates])
        loss, accuracy = evaluate(spec, global_params, dataset_test)
        sent = 2 * len(selected) * global_params.nbytes
        history.append(RoundMetrics(r, accuracy, loss, records, list(selected), sent))
        logger.info(f"Round {r}: accuracy {accuracy:.4f}, loss {loss:.4f}, {sent} bytes")
    return history


def _client_update(spec, global_params, shard, cfg, round) -> ClientUpdate:
    if cfg.algorithm == "fedavg":
        keys = (cfg.seed, _TRAIN_STREAM, round, shard.client_id)
        params, n = client_update_fedavg(
            spec, global_params, shard, cfg.fixed_hp, cfg.batch_size, keys, cfg.update_mode
        )
        return ClientUpdate(params, n, cfg.fixed_hp, 0)
    return client_update_fedavo(spec, global_params, shard, cfg, round, shard.client_id)


def _tune(objective: Callable, cfg: FLConfig, seed: int) -> OptimizeResult:
    if cfg.algorithm == "fedavo":
        avo = replace(cfg.avo, max_iterations=cfg.tuning_epochs)
        return avo_optimize(cfg.search_space, objective, avo, cfg.population_size, seed)
    elif cfg.algorithm == "fedpso":
        pso = PsoConfig(max_iterations=cfg.tuning_epochs)
        return pso_optimize(cfg.search_space, objective, pso, cfg.population_size, seed)
    elif cfg.algorithm == "fedgwo":
        return gwo_optimize(
            cfg.search_space, objective, cfg.population_size, cfg.tuning_epochs, seed
        )
    raise ValueError(f"Algorithm '{cfg.algorithm}' does not tune hyperparameters.")


def _as_shards(dataset_train, cfg: FLConfig) -> list[ClientShard]:
    if isinstance(dataset_train, Dataset):
        return partition_iid(
            dataset_train, cfg.num_clients, len(dataset_train) // cfg.num_clients, cfg.seed
        )
    return list(dataset_train)


def _validate_tuning_space(space: SearchSpace) -> bool:
    if space.dims != 4 or EPOCH_DIM not in space.integer_dims:
        raise ValueError(
            "Hyperparameter search space must have 4 dimensions (eta, beta, lambda, epochs) "
            "with epochs as an integer dimension."
        )
    if space.lower[0] < 0 or space.lower[1] < 0 or space.lower[2] < 0:
        raise ValueError("Hyperparameter bounds for eta, beta and lambda must be non-negative.")
    if space.lower[EPOCH_DIM] < 1:
        raise ValueError("Local epoch lower bound must be at least 1.")
    return True


def _validate_fl_config(cfg: FLConfig) -> bool:
    if cfg.num_clients < 1:
        raise ValueError("num_clients must be at least 1.")
    if not 0 < cfg.client_fraction <= 1:
        raise ValueError("client_fraction must lie in (0, 1].")
    if cfg.batch_size < 1:
        raise ValueError("batch_size must be at least 1.")
    if cfg.rounds < 0:
        raise ValueError("rounds must be non-negative.")
    if cfg.algorithm not in ALGORITHMS:
        raise ValueError(f"Unknown algorithm '{cfg.algorithm}'.")
    if cfg.update_mode not in ("velocity", "literal"):
        raise ValueError(f"Unknown update mode '{cfg.update_mode}'.")
    if cfg.algorithm != "fedavg":
        if cfg.tuning_epochs < 1:
            raise ValueError("tuning_epochs must be at least 1 for tuning algorithms.")
        if cfg.population_size < 2:
            raise ValueError("population_size must be at least 2.")
        _validate_tuning_space(cfg.search_space)
    tools._validate_seed(cfg.seed)
    return True
