import os
from pathlib import Path

import pytest

from fedavopy import analysis
from fedavopy.experiment import ExperimentConfig, load_datasets, partition
from fedavopy.federated import run_federated
from fedavopy.nn import ModelSpec

SEEDS = list(range(1, 11))
MNIST_DIR = Path(os.environ.get("FEDAVOPY_MNIST_DIR", "data/mnist"))
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def run(cfg: ExperimentConfig, algorithm: str, seed: int) -> list:
    train, test = load_datasets(cfg, seed)
    spec = ModelSpec((train.inputs.shape[1], *cfg.hidden_layers, train.num_classes))
    return run_federated(spec, partition(cfg, train, seed), test, cfg.fl_config(algorithm, seed))


def mnist_paths():
    paths = {}
    for key, name in MNIST_FILES.items():
        candidates = [MNIST_DIR / name, MNIST_DIR / f"{name}.gz"]
        found = [p for p in candidates if p.exists()]
        if not found:
            return None
        paths[key] = str(found[0])
    return paths


@pytest.mark.slow
def test_fedavg_separable_blobs():
    cfg = ExperimentConfig(
        algorithms=["fedavg"],
        num_clients=10,
        shard_size=500,
        rounds=20,
        n_train=5000,
        n_test=1000,
        num_classes=3,
        dims=10,
        spread=0.5,
        fixed_eta=0.01,
        fixed_epochs=5,
    )
    reached = 0
    for seed in SEEDS:
        history = run(cfg, "fedavg", seed)
        reached += max(m.global_accuracy for m in history) >= 0.95
    assert reached >= 9


@pytest.mark.slow
def test_fedavo_beats_fedavg_noniid():
    cfg = ExperimentConfig(
        algorithms=["fedavo", "fedavg"],
        distribution="noniid",
        classes_per_client=3,
        num_clients=10,
        shard_size=500,
        rounds=20,
        tuning_epochs=3,
        population_size=10,
        n_train=6000,
        n_test=1000,
        num_classes=10,
        spread=1.0,
        threshold=0.8,
        fixed_eta=0.01,
        fixed_epochs=5,
    )
    wins = 0
    for seed in SEEDS:
        crossed = {}
        for algorithm in cfg.algorithms:
            history = run(cfg, algorithm, seed)
            crossed[algorithm] = analysis.summarize_run(history, cfg.threshold)[
                "rounds_to_threshold"
            ]
        fedavg = crossed["fedavg"] if crossed["fedavg"] is not None else cfg.rounds + 1
        wins += crossed["fedavo"] is not None and crossed["fedavo"] < fedavg
    assert wins >= 7


@pytest.mark.slow
def test_mnist_noniid():
    paths = mnist_paths()
    if paths is None:
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR}")
    cfg = ExperimentConfig(
        algorithms=["fedavo", "fedavg"],
        dataset="mnist_idx",
        distribution="noniid",
        num_clients=10,
        shard_size=450,
        rounds=30,
        tuning_epochs=3,
        population_size=10,
        train_subsample=5000,
        test_subsample=1000,
        threshold=0.9,
        **paths,
    )
    reached, not_slower = 0, 0
    for seed in SEEDS:
        summaries = {
            a: analysis.summarize_run(run(cfg, a, seed), cfg.threshold) for a in cfg.algorithms
        }
        fedavo = summaries["fedavo"]["rounds_to_threshold"]
        fedavg = summaries["fedavg"]["rounds_to_threshold"]
        reached += fedavo is not None
        not_slower += fedavo is not None and (fedavg is None or fedavo <= fedavg)
    assert reached >= 7
    assert not_slower >= 7
