from typing import Sequence

import numpy as np
from pandas import DataFrame

from .space import HYPERPARAMETER_NAMES


def rounds_to_threshold(series: Sequence, threshold: float) -> int | None:
    """
    Find the first communication round at which accuracy reaches `threshold`. Fewer rounds
    means faster convergence.

    Parameters
    ----------
    series : list
        Accuracies ordered by round, either plain values or `(round, accuracy)` pairs. The
        first entry counts as round 1.
    threshold : float
        Accuracy to reach. Equality counts as crossing.

    Returns
    -------
    int or None
        1-based index of the first entry with accuracy `>= threshold`, or None if the
        threshold is never reached.
    """
    if len(series) == 0:
        raise ValueError("Cannot compute rounds-to-threshold of an empty series.")
    for i, entry in enumerate(series, start=1):
        accuracy = entry[1] if isinstance(entry, (tuple, list)) else entry
        if accuracy >= threshold:
            return i
    return None


def metrics_frame(history: list) -> DataFrame:
    """
    Flatten `RoundMetrics` records into one row per round.

    The columns are `round`, `global_accuracy`, `global_loss`, then for each selected client
    slot `j`: `client_id_j`, `local_accuracy_j`, `local_loss_j`, `eta_j`, `beta_j`,
    `lambda_j`, `epochs_j`, `tuning_evaluations_j`. Round 0 and rounds with fewer clients
    leave the client slots empty.

    Parameters
    ----------
    history : list[RoundMetrics]
        Output of `federated.run_federated`.

    Returns
    -------
    DataFrame
    """
    slots = max((len(m.per_client) for m in history), default=0)
    columns = ["round", "global_accuracy", "global_loss"]
    for j in range(slots):
        columns += [f"client_id_{j}", f"local_accuracy_{j}", f"local_loss_{j}"]
        columns += [f"{name}_{j}" for name in HYPERPARAMETER_NAMES]
        columns += [f"tuning_evaluations_{j}"]

    rows = []
    for m in history:
        row = {
            "round": m.round,
            "global_accuracy": m.global_accuracy,
            "global_loss": m.global_loss,
        }
        for j, record in enumerate(m.per_client):
            hp = record.hyperparams
            row.update(
                {
                    f"client_id_{j}": record.client_id,
                    f"local_accuracy_{j}": record.local_accuracy,
                    f"local_loss_{j}": record.local_loss,
                    f"eta_{j}": hp.learning_rate,
                    f"beta_{j}": hp.momentum,
                    f"lambda_{j}": hp.weight_decay,
                    f"epochs_{j}": hp.epochs,
                    f"tuning_evaluations_{j}": record.tuning_evaluations,
                }
            )
        rows.append(row)

    df = DataFrame(rows, columns=columns)
    for j in range(slots):
        for col in (f"client_id_{j}", f"epochs_{j}", f"tuning_evaluations_{j}"):
            df[col] = df[col].astype("Int64")
    return df


def bytes_to_threshold(history: list, threshold: float) -> int | None:
    """
    Cumulative bytes exchanged between server and clients up to and including the round that
    first reaches `threshold`, or None if it is never reached.
    """
    rounds = [m for m in history if m.round >= 1]
    if not rounds:
        return None
    crossing = rounds_to_threshold([m.global_accuracy for m in rounds], threshold)
    if crossing is None:
        return None
    return int(sum(m.bytes_communicated for m in rounds[:crossing]))


def summarize_run(history: list, threshold: float) -> dict:
    """
    Headline numbers of one run: final accuracy and loss, rounds and bytes needed to reach
    `threshold`.

    Parameters
    ----------
    history : list[RoundMetrics]
        Output of `federated.run_federated`.
    threshold : float
        Accuracy threshold.

    Returns
    -------
    dict
        A dictionary containing summary statistics.
    """
    rounds = [m.global_accuracy for m in history if m.round >= 1]
    return {
        "final_accuracy": float(history[-1].global_accuracy),
        "final_loss": float(history[-1].global_loss),
        "rounds_to_threshold": rounds_to_threshold(rounds, threshold) if rounds else None,
        "bytes_to_threshold": bytes_to_threshold(history, threshold),
    }


def summarize_seeds(runs: DataFrame) -> DataFrame:
    """
    Aggregate per-seed run summaries into one row per algorithm.

    Parameters
    ----------
    runs : DataFrame
        One row per (algorithm, seed) with at least `algorithm`, `final_accuracy`,
        `rounds_to_threshold` and `bytes_to_threshold` columns.

    Returns
    -------
    DataFrame
        Per algorithm: number of seeds, mean and sample standard deviation (n - 1
        denominator) of the final accuracy, mean rounds and bytes to threshold over the seeds
        that reached it, and how many did. A single seed has an undefined (NaN) deviation.
    """
    rows = []
    for algorithm, group in runs.groupby("algorithm", sort=False):
        accuracy = group["final_accuracy"].astype(float).to_numpy()
        crossed = group["rounds_to_threshold"].dropna().astype(float)
        traffic = group["bytes_to_threshold"].dropna().astype(float)
        rows.append(
            {
                "algorithm": algorithm,
                "seeds": len(group),
                "final_accuracy_mean": float(accuracy.mean()),
                "final_accuracy_std": float(accuracy.std(ddof=1)) if len(accuracy) > 1 else np.nan,
                "rounds_to_threshold_mean": float(crossed.mean()) if len(crossed) else np.nan,
                "bytes_to_threshold_mean": float(traffic.mean()) if len(traffic) else np.nan,
                "seeds_reaching_threshold": len(crossed),
            }
        )
    return DataFrame(rows)


def trace_frame(trace: np.ndarray) -> DataFrame:
    """
    Convert an optimizer's best-fitness trace into a `(generation, best_fitness)` table.
    Generation 0 is the initial population.
    """
    trace = np.asarray(trace, dtype=float)
    return DataFrame({"generation": np.arange(trace.shape[0]), "best_fitness": trace})
