"""Smoke tests for the _core extension module."""

import json

import numpy as np
import pytest

import _core as csai


def small_batch(n=4, t=6, d=3, seed=0, missing=0.3):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(n, t, d))
    mask = (rng.random(size=(n, t, d)) >= missing).astype(float)
    mask[:, 0, :] = 1.0  # anchor the first step
    values = values * mask
    timestamps = np.cumsum(0.5 + rng.random(size=(n, t)), axis=1)
    labels = [i % 2 for i in range(n)]
    return csai.TimeSeriesBatch(values, mask, timestamps, labels)


def test_compute_delta_worked_example():
    delta = csai.compute_delta([0, 4, 5, 7, 9], [1, 0, 0, 0, 1])
    assert delta == [0, 4, 5, 7, 9]


def test_batch_indicators_shapes():
    b = small_batch()
    assert b.n_samples == 4 and b.n_steps == 6 and b.n_features == 3
    assert b.delta.shape == (4, 6, 3)
    assert np.all(b.delta[:, 0, :] == 0.0)
    assert b.last_obs.shape == (4, 6, 3)


def test_non_increasing_timestamps_raise():
    values = np.zeros((1, 2, 1))
    mask = np.ones((1, 2, 1))
    timestamps = np.array([[1.0, 1.0]])
    with pytest.raises(ValueError):
        csai.TimeSeriesBatch(values, mask, timestamps)


def test_uniform_mask_exact_count_and_replay():
    b = small_batch(n=6, t=8, d=4, seed=1)
    n_obs = int(b.mask.sum())
    plan = csai.plan_uniform_mask(b.mask, 0.2, seed=7)
    assert len(plan.cells) == round(0.2 * n_obs)
    again = csai.MaskPlan.from_json(plan.to_json())
    assert again.cells == plan.cells

    view, targets = csai.apply_mask_plan(b, plan)
    assert len(targets) == len(plan.cells)
    for (n, t, d, truth) in targets:
        assert view.mask[n, t, d] == 0.0
        assert b.mask[n, t, d] == 1.0
        assert truth == b.values[n, t, d]


def test_normalizer_round_trip():
    b = small_batch(seed=2)
    mean, std, warnings = csai.fit_normalizer(b)
    assert len(mean) == 3 and len(std) == 3 and not warnings
    norm = csai.apply_normalizer(b, mean, std)
    observed = norm.values[norm.mask == 1.0]
    assert abs(observed.mean()) < 0.5  # standardized pooled over features
    back = norm.values * np.asarray(std) + np.asarray(mean)
    np.testing.assert_allclose(back[b.mask == 1.0], b.values[b.mask == 1.0], rtol=0, atol=1e-12)


def test_generate_synthetic_is_deterministic():
    cfg = json.dumps({"n_samples": 8, "n_steps": 5, "n_features": 2, "missing_rates": [0.2, 0.5]})
    batch1, truth1 = csai.generate_synthetic(cfg, seed=3)
    batch2, truth2 = csai.generate_synthetic(cfg, seed=3)
    np.testing.assert_array_equal(batch1.values, batch2.values)
    np.testing.assert_array_equal(truth1, truth2)
    assert truth1.shape == (8, 5, 2)


def test_train_and_report_beats_nothing_burger():
    experiment = {
        "seed": 11,
        "dataset": {
            "synthetic": {
                "n_samples": 40,
                "n_steps": 8,
                "n_features": 3,
                "missing_rates": [0.2, 0.35, 0.5],
            }
        },
        "split": {"train": 0.7, "val": 0.15, "test": 0.15},
        "training": {
            "epochs": 2,
            "batch_size": 16,
            "learning_rate": 0.003,
            "mask_rate": 0.1,
            "model": {"d_model": 4, "n_heads": 2, "d_hidden": 6},
        },
    }
    result = csai.train_and_report(json.dumps(experiment))
    assert result["best_epoch"] >= 0
    assert result["test_mae"] > 0.0
    assert result["baseline_mean_mae"] > 0.0


def test_cli_round_trip(tmp_path):
    cfg = {
        "seed": 5,
        "dataset": {"synthetic": {"n_samples": 10, "n_steps": 5, "n_features": 2}},
        "training": {"epochs": 1, "model": {"d_model": 4, "n_heads": 2, "d_hidden": 4}},
        "output_dir": str(tmp_path / "out"),
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert csai.run_cli(["generate", "--config", str(cfg_path)]) == 0
    loaded = csai.load_table(str(tmp_path / "out" / "data.csv"))
    assert loaded.n_samples == 10
    assert csai.run_cli(["train", "--config", "/does/not/exist.json"]) == 1
