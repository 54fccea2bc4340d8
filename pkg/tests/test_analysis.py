import numpy as np
import pytest
from pandas import DataFrame

from fedavopy import analysis, tools
from fedavopy.federated import ClientRecord, RoundMetrics
from fedavopy.nn import HyperParams


@pytest.fixture
def history():
    hp = HyperParams(0.01, momentum=0.5, weight_decay=0.001, epochs=2)
    return [
        RoundMetrics(0, 0.1, 2.3),
        RoundMetrics(1, 0.6, 1.1, [ClientRecord(0, 0.7, 0.9, hp, 12)], [0], 100),
        RoundMetrics(
            2,
            0.92,
            0.4,
            [ClientRecord(0, 0.9, 0.3, hp, 12), ClientRecord(3, 0.95, 0.2, hp, 12)],
            [0, 3],
            200,
        ),
        RoundMetrics(3, 0.95, 0.3, [ClientRecord(1, 0.96, 0.1, hp, 12)], [1], 100),
    ]


def test_rounds_to_threshold_examples():
    assert analysis.rounds_to_threshold([0.5, 0.8, 0.9, 0.95], 0.9) == 3
    assert analysis.rounds_to_threshold([0.5, 0.8], 0.9) is None
    assert analysis.rounds_to_threshold([0.9], 0.9) == 1
    assert analysis.rounds_to_threshold([(1, 0.2), (2, 0.91), (3, 0.5)], 0.9) == 2
    assert analysis.rounds_to_threshold([0.95, 0.1], 0.9) == 1


def test_rounds_to_threshold_empty():
    with pytest.raises(ValueError):
        analysis.rounds_to_threshold([], 0.9)


def test_rounds_to_threshold_matches_scan():
    rng = tools.gen_rng(12345)
    for _ in range(200):
        series = rng.random(int(rng.integers(1, 30))).round(2).tolist()
        threshold = float(rng.choice(series)) if rng.random() < 0.5 else float(rng.random())
        hits = [i + 1 for i, a in enumerate(series) if a >= threshold]
        expected = hits[0] if hits else None
        assert analysis.rounds_to_threshold(series, threshold) == expected


def test_metrics_frame(history):
    df = analysis.metrics_frame(history)
    assert df.shape == (4, 3 + 2 * 8)
    assert list(df.columns[:11]) == [
        "round",
        "global_accuracy",
        "global_loss",
        "client_id_0",
        "local_accuracy_0",
        "local_loss_0",
        "eta_0",
        "beta_0",
        "lambda_0",
        "epochs_0",
        "tuning_evaluations_0",
    ]
    assert df["round"].tolist() == [0, 1, 2, 3]
    assert df["client_id_0"].isna().tolist() == [True, False, False, False]
    assert df.loc[2, "client_id_1"] == 3
    assert df["client_id_1"].isna().sum() == 3
    assert df.loc[1, "eta_0"] == 0.01
    assert df.loc[1, "epochs_0"] == 2


def test_metrics_frame_initial_round_only():
    df = analysis.metrics_frame([RoundMetrics(0, 0.1, 2.3)])
    assert list(df.columns) == ["round", "global_accuracy", "global_loss"]


def test_bytes_to_threshold(history):
    assert analysis.bytes_to_threshold(history, 0.9) == 300
    assert analysis.bytes_to_threshold(history, 0.5) == 100
    assert analysis.bytes_to_threshold(history, 0.99) is None
    assert analysis.bytes_to_threshold(history[:1], 0.05) is None


def test_summarize_run(history):
    summary = analysis.summarize_run(history, 0.9)
    assert summary == {
        "final_accuracy": 0.95,
        "final_loss": 0.3,
        "rounds_to_threshold": 2,
        "bytes_to_threshold": 300,
    }
    # The initial model is not a communication round, even when it already crosses.
    assert analysis.summarize_run(history, 0.05)["rounds_to_threshold"] == 1
    assert analysis.summarize_run(history[:1], 0.05)["rounds_to_threshold"] is None


def test_summarize_seeds():
    runs = DataFrame(
        {
            "algorithm": ["fedavo", "fedavo", "fedavo", "fedavg"],
            "seed": [1, 2, 3, 1],
            "final_accuracy": [0.90, 0.92, 0.94, 0.8],
            "rounds_to_threshold": [3, None, 5, None],
            "bytes_to_threshold": [300, None, 500, None],
        }
    )
    summary = analysis.summarize_seeds(runs).set_index("algorithm")
    assert summary.loc["fedavo", "seeds"] == 3
    assert summary.loc["fedavo", "final_accuracy_mean"] == pytest.approx(0.92)
    assert summary.loc["fedavo", "final_accuracy_std"] == pytest.approx(0.02)
    assert summary.loc["fedavo", "rounds_to_threshold_mean"] == pytest.approx(4.0)
    assert summary.loc["fedavo", "bytes_to_threshold_mean"] == pytest.approx(400.0)
    assert summary.loc["fedavo", "seeds_reaching_threshold"] == 2
    assert np.isnan(summary.loc["fedavg", "final_accuracy_std"])
    assert np.isnan(summary.loc["fedavg", "rounds_to_threshold_mean"])
    assert list(summary.index) == ["fedavo", "fedavg"]


def test_trace_frame():
    df = analysis.trace_frame([3.0, 2.0, 2.0, 0.5])
    assert df["generation"].tolist() == [0, 1, 2, 3]
    assert df["best_fitness"].tolist() == [3.0, 2.0, 2.0, 0.5]
