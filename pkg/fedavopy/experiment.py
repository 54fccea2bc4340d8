import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from timeit import default_timer
from typing import Callable

import numpy as np
from pandas import DataFrame

from . import analysis, tools
from .data import Dataset, load_idx, subsample, synthetic_classification
from .federated import ALGORITHMS, FLConfig, partition_iid, partition_noniid, run_federated
from .nn import HyperParams, ModelSpec
from .optimizers import AvoConfig
from .space import EPOCH_DIM, SearchSpace, hyperparameter_space

logger = logging.getLogger(__name__)

SUMMARY_FILENAME = "summary.csv"


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything needed to reproduce a set of federated runs. Parsed from a flat JSON object by
    `parse_config`; every field below is an accepted key.

    Attributes
    ----------
    algorithms : list[str]
        Algorithms to run, each for every seed.
    seeds : list[int]
        Seeds of the independent repetitions.
    dataset : str
        `synthetic` or `mnist_idx`.
    distribution : str
        `iid` or `noniid`. Selects the partitioner and the default search space.
    classes_per_client : int
        Labels per client under `noniid`.
    shard_size : int
        Samples per client.
    threshold : float
        Accuracy threshold used for rounds-to-threshold, in (0, 1).
    output_path : str
        Directory the CSV files are written to.
    hidden_layers : list[int]
        Hidden layer widths of the MLP. Empty for logistic regression.
    fixed_eta, fixed_beta, fixed_lambda, fixed_epochs : float, float, float, int
        Hyperparameters of `fedavg` and of the tuner fallback. Undefined values take the
        defaults of the chosen `update_mode`.
    search_lower, search_upper : list[float]
        Override of the (eta, beta, lambda, epochs) search bounds.
    train_images, train_labels, test_images, test_labels : str
        IDX file paths for `mnist_idx`.
    train_subsample, test_subsample : int
        Optional stratified subsample sizes for `mnist_idx`.
    n_train, n_test, num_classes, dims, spread
        Parameters of the `synthetic` generator.
    """

    algorithms: list = field(default_factory=lambda: ["fedavo"])
    seeds: list = field(default_factory=lambda: [1])
    num_clients: int = 10
    client_fraction: float = 1.0
    batch_size: int = 16
    rounds: int = 20
    tuning_epochs: int = 3
    population_size: int = 50
    update_mode: str = "velocity"
    leader_selection: str = "fixed"
    fixed_eta: float = None
    fixed_beta: float = None
    fixed_lambda: float = None
    fixed_epochs: int = None
    search_lower: list = None
    search_upper: list = None
    dataset: str = "synthetic"
    distribution: str = "iid"
    classes_per_client: int = 3
    shard_size: int = 500
    threshold: float = 0.9
    output_path: str = "results"
    hidden_layers: list = field(default_factory=lambda: [64])
    train_images: str = None
    train_labels: str = None
    test_images: str = None
    test_labels: str = None
    train_subsample: int = None
    test_subsample: int = None
    n_train: int = 6000
    n_test: int = 1000
    num_classes: int = 10
    dims: int = 20
    spread: float = 1.0

    def __post_init__(self):
        _validate_experiment(self)

    def search_space(self) -> SearchSpace:
        if self.search_lower is None and self.search_upper is None:
            return hyperparameter_space(self.distribution)
        default = hyperparameter_space(self.distribution)
        return SearchSpace(
            self.search_lower if self.search_lower is not None else default.lower,
            self.search_upper if self.search_upper is not None else default.upper,
            integer_dims={EPOCH_DIM},
        )

    def fixed_hp(self) -> HyperParams:
        default = FLConfig(algorithm="fedavg", update_mode=self.update_mode).fixed_hp
        return HyperParams(
            learning_rate=default.learning_rate if self.fixed_eta is None else self.fixed_eta,
            momentum=default.momentum if self.fixed_beta is None else self.fixed_beta,
            weight_decay=default.weight_decay if self.fixed_lambda is None else self.fixed_lambda,
            epochs=default.epochs if self.fixed_epochs is None else self.fixed_epochs,
        )

    def fl_config(self, algorithm: str, seed: int) -> FLConfig:
        return FLConfig(
            num_clients=self.num_clients,
            client_fraction=self.client_fraction,
            batch_size=self.batch_size,
            rounds=self.rounds,
            algorithm=algorithm,
            tuning_epochs=self.tuning_epochs,
            population_size=self.population_size,
            search_space=self.search_space(),
            fixed_hp=self.fixed_hp(),
            seed=seed,
            update_mode=self.update_mode,
            avo=AvoConfig(leader_selection=self.leader_selection),
        )


_KEY_TYPES = {
    "algorithms": list,
    "seeds": list,
    "num_clients": int,
    "client_fraction": float,
    "batch_size": int,
    "rounds": int,
    "tuning_epochs": int,
    "population_size": int,
    "update_mode": str,
    "leader_selection": str,
    "fixed_eta": float,
    "fixed_beta": float,
    "fixed_lambda": float,
    "fixed_epochs": int,
    "search_lower": list,
    "search_upper": list,
    "dataset": str,
    "distribution": str,
    "classes_per_client": int,
    "shard_size": int,
    "threshold": float,
    "output_path": str,
    "hidden_layers": list,
    "train_images": str,
    "train_labels": str,
    "test_images": str,
    "test_labels": str,
    "train_subsample": int,
    "test_subsample": int,
    "n_train": int,
    "n_test": int,
    "num_classes": int,
    "dims": int,
    "spread": float,
}
_NULLABLE_KEYS = {f.name for f in fields(ExperimentConfig) if f.default is None}


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse a flat JSON object into a validated `ExperimentConfig`. Parsing is strict: unknown
    keys and values of the wrong type are rejected with an error naming the key. Missing keys
    take their defaults; `null` is accepted only for keys whose default is undefined.

    Example
    -------
    ```python
    from fedavopy.experiment import parse_config

    cfg = parse_config('{"distribution": "noniid", "algorithms": ["fedavo", "fedavg"]}')
    ```

    Parameters
    ----------
    text : str
        JSON text.

    Returns
    -------
    ExperimentConfig
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"Config is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ValueError("Config must be a JSON object.")

    known = {f.name for f in fields(ExperimentConfig)}
    for key, value in raw.items():
        if key not in known:
            raise ValueError(f"Unknown config key '{key}'.")
        if value is None and key not in _NULLABLE_KEYS:
            raise ValueError(f"Config key '{key}' expects {_KEY_TYPES[key].__name__}, got null.")
        if value is not None and not _matches(value, _KEY_TYPES[key]):
            raise ValueError(
                f"Config key '{key}' expects {_KEY_TYPES[key].__name__}, "
                f"got {type(value).__name__}."
            )
    raw = {k: float(v) if _KEY_TYPES[k] is float and v is not None else v for k, v in raw.items()}
    return ExperimentConfig(**raw)


def load_config(path: Path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


@dataclass
class Experiment:
    """
    Runs every (algorithm, seed) pair of an `ExperimentConfig`, writes one metric CSV per run
    and keeps a record of each: its parameters, checksum and summary statistics.

    Example
    -------
    ```python
    from fedavopy import Experiment, parse_config

    experiment = Experiment(parse_config('{"rounds": 5, "algorithms": ["fedavg"]}'))
    experiment.run_all()
    experiment.as_df()
    ```

    Attributes
    ----------
    config : ExperimentConfig
        The experiment to run.
    runs : list[dict]
        Records of finished runs.
    """

    config: ExperimentConfig
    runs: list = field(default_factory=list)

    def __post_init__(self):
        self.output_dir = Path(self.config.output_path)

    def __getitem__(self, idx):
        return self.runs[idx]

    def __len__(self):
        return len(self.runs)

    def run(self, algorithm: str, seed: int) -> dict:
        """
        Run one algorithm for one seed, write its per-round CSV and record the outcome.

        Parameters
        ----------
        algorithm : str
            One of `fedavg`, `fedavo`, `fedpso`, `fedgwo`.
        seed : int
            Seed of data generation, partitioning and training.

        Returns
        -------
        dict
            The run record that was appended to `Experiment.runs`.
        """
        cfg = self.config
        train, test = load_datasets(cfg, seed)
        spec = ModelSpec((train.inputs.shape[1], *cfg.hidden_layers, train.num_classes))
        shards = partition(cfg, train, seed)

        time_start = default_timer()
        history = run_federated(spec, shards, test, cfg.fl_config(algorithm, seed))
        execution_time = default_timer() - time_start

        df = analysis.metrics_frame(history)
        path = self.output_dir / f"{algorithm}_seed{seed}.csv"
        write_csv(df, path)

        record = {
            "algorithm": algorithm,
            "seed": seed,
            "file": path.name,
            "checksum": tools.checksum(df),
            **analysis.summarize_run(history, cfg.threshold),
            "execution_time": round(execution_time, 3),
        }
        logger.info(
            f"{algorithm} seed {seed}: final accuracy {record['final_accuracy']:.4f}, "
            f"rounds to {cfg.threshold}: {record['rounds_to_threshold']}, wrote {path}"
        )
        self.runs.append(record)
        return record

    def run_all(self, map_fn: Callable = map) -> DataFrame:
        """
        Run every configured (algorithm, seed) pair and write the summary CSV.

        Parameters
        ----------
        map_fn : Callable
            Used to run the pairs. Each run writes only its own file, so an `Executor.map`
            may run seeds concurrently.

        Returns
        -------
        DataFrame
            One summary row per algorithm.
        """
        self.output_dir.mkdir(parents=True, exist_ok=True)
        jobs = [(a, s) for a in self.config.algorithms for s in self.config.seeds]
        list(map_fn(lambda job: self.run(*job), jobs))
        return self.summarize()

    def summarize(self) -> DataFrame:
        """
        Write and return the per-algorithm summary of all recorded runs: mean and sample
        standard deviation of final accuracy, mean rounds and bytes to threshold, and the
        checksums of the per-seed CSVs.
        """
        df = self.as_df()
        summary = analysis.summarize_seeds(df)
        summary["threshold"] = self.config.threshold
        summary["checksums"] = [
            " ".join(df.loc[df["algorithm"] == a, "checksum"]) for a in summary["algorithm"]
        ]
        write_csv(summary, self.output_dir / SUMMARY_FILENAME)
        return summary

    def as_df(self) -> DataFrame:
        """
        Return a pandas DataFrame describing each run, ordered by algorithm then seed.
        """
        df = DataFrame(data=self.runs)
        order = {a: i for i, a in enumerate(self.config.algorithms)}
        df = df.assign(_order=df["algorithm"].map(order)).sort_values(["_order", "seed"])
        return df.drop(columns="_order").reset_index(drop=True)


def run_experiment(cfg: ExperimentConfig, map_fn: Callable = map) -> DataFrame:
    """
    Run a full experiment: for each algorithm and seed, build the data, partition it, run the
    federated simulation and write `<algorithm>_seed<seed>.csv` into `cfg.output_path`, then
    write `summary.csv`.

    Parameters
    ----------
    cfg : ExperimentConfig
        A validated configuration.
    map_fn : Callable
        Used to run the (algorithm, seed) pairs.

    Returns
    -------
    DataFrame
        The summary table, one row per algorithm.
    """
    return Experiment(cfg).run_all(map_fn)


def load_datasets(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset]:
    """
    Build the training and test sets for one seed. Synthetic train and test rows come from a
    single draw, so they share class centres. IDX train and test sets share the class count
    inferred from the larger label of the two files.
    """
    if cfg.dataset == "synthetic":
        full = synthetic_classification(
            cfg.n_train + cfg.n_test, cfg.num_classes, cfg.dims, cfg.spread, seed
        )
        return full.take(np.arange(cfg.n_train)), full.take(np.arange(cfg.n_train, len(full)))

    train = load_idx(cfg.train_images, cfg.train_labels)
    test = load_idx(cfg.test_images, cfg.test_labels)
    M = max(train.num_classes, test.num_classes)
    train, test = (Dataset(ds.inputs, ds.labels, M) for ds in (train, test))
    if cfg.train_subsample is not None:
        train = subsample(train, cfg.train_subsample, stratified=True, seed=seed)
    if cfg.test_subsample is not None:
        test = subsample(test, cfg.test_subsample, stratified=True, seed=seed)
    return train, test


def partition(cfg: ExperimentConfig, train: Dataset, seed: int) -> list:
    if cfg.distribution == "noniid":
        return partition_noniid(
            train, cfg.num_clients, cfg.classes_per_client, cfg.shard_size, seed
        )
    return partition_iid(train, cfg.num_clients, cfg.shard_size, seed)


def write_csv(df: DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    logger.info(f"Wrote {len(df)} rows to {path}")


def _matches(value, expected: type) -> bool:
    if isinstance(value, bool):
        return False
    if expected is float:
        return isinstance(value, (int, float))
    return isinstance(value, expected)


def _validate_experiment(cfg: ExperimentConfig) -> bool:
    if not cfg.algorithms:
        raise ValueError("algorithms must list at least one algorithm.")
    for algorithm in cfg.algorithms:
        if algorithm not in ALGORITHMS:
            raise ValueError(f"algorithms: unknown algorithm '{algorithm}'.")
    if not cfg.seeds:
        raise ValueError("seeds must list at least one seed.")
    for seed in cfg.seeds:
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ValueError(f"seeds: expected non-negative integers, got {seed!r}.")
    if not 0 < cfg.threshold < 1:
        raise ValueError(f"threshold out of range: {cfg.threshold} must lie in (0, 1).")
    if cfg.dataset not in ("synthetic", "mnist_idx"):
        raise ValueError(f"dataset must be 'synthetic' or 'mnist_idx', got '{cfg.dataset}'.")
    if cfg.distribution not in ("iid", "noniid"):
        raise ValueError(f"distribution must be 'iid' or 'noniid', got '{cfg.distribution}'.")
    if cfg.dataset == "mnist_idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if getattr(cfg, key) is None:
                raise ValueError(f"{key} is required for the mnist_idx dataset.")
    if cfg.classes_per_client < 1:
        raise ValueError("classes_per_client must be at least 1.")
    if cfg.shard_size < 2:
        raise ValueError("shard_size must be at least 2.")
    if any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in cfg.hidden_layers):
        raise ValueError("hidden_layers must list positive integers.")
    for key in ("search_lower", "search_upper"):
        bounds = getattr(cfg, key)
        if bounds is not None and len(bounds) != 4:
            raise ValueError(f"{key} must hold 4 values (eta, beta, lambda, epochs).")
    if cfg.leader_selection not in ("fixed", "roulette"):
        raise ValueError("leader_selection must be 'fixed' or 'roulette'.")

    # Surfaces FLConfig, SearchSpace and HyperParams errors at parse time.
    for algorithm in cfg.algorithms:
        cfg.fl_config(algorithm, cfg.seeds[0])
    return True
