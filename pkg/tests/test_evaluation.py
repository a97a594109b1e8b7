import math

import numpy as np
import pandas as pd
import pytest

from errors import ConfigError, SplitError
from evaluation import (CSV_COLUMNS, BenchmarkScan, ExperimentConfig, ExperimentResult, _splits,
                        benchmark_train_config, build_benchmark, check_orderings, compare_pairs,
                        fixed_length_default, load_grid, run_ablation, run_experiment, weighted_dice_score)
from geometry import FrameRecord, ImageGeometry, Pose
from losses import w_dice_loss
from runconfig import RunConfig

TOY_OVERRIDES = ["net.base_channels=2", "net.depth=1", "train.epochs=1", "eval.frames_per_sweep=3"]


def toy_scan(anatomy, seed, n_sweeps=4, per_sweep=3, size=16):
    rng = np.random.default_rng(seed)
    geo = ImageGeometry(0.005, 0.037, 0.8, size, size)
    frames = [FrameRecord(s * per_sweep + i, s, "forward", 0.0, 0.0, Pose.identity())
              for s in range(n_sweeps) for i in range(per_sweep)]
    labels, inputs = [], []
    for _ in frames:
        label = np.zeros((size, size))
        label[rng.integers(4, 12)] = 1.0
        labels.append(label)
        inputs.append(np.stack([rng.random((size, size)), label * 0.9]))
    return BenchmarkScan(anatomy, geo, frames, inputs, labels)


@pytest.fixture
def toy_config():
    return RunConfig.load(None, TOY_OVERRIDES)


def result(exp_id, dice, status="ok"):
    return ExperimentResult(ExperimentConfig(exp_id), dice, [], 0, 0.0, status)


def test_weighted_dice_score(rng):
    label = rng.random((16, 16))
    pred = rng.random((16, 16))
    assert weighted_dice_score(label, label) == pytest.approx(1.0)
    assert weighted_dice_score(pred, label) == pytest.approx(1.0 - w_dice_loss(pred, label)[0])
    assert weighted_dice_score(np.zeros((4, 4)), np.ones((4, 4))) < 1e-6

def test_experiment_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig("x", network="cnn", reset="align_with_scan")
    with pytest.raises(ConfigError):
        ExperimentConfig("x", loss="focal")
    with pytest.raises(ConfigError):
        ExperimentConfig("x", reset="sometimes")
    with pytest.raises(ConfigError):
        ExperimentConfig("x", input_channels="rgb")
    exp = ExperimentConfig("x", network="cnn", reset="none", input_channels="bmode_only")
    spec = exp.unet_spec(RunConfig.load(None, []).unet_spec())
    assert spec.in_channels == 1 and not spec.use_convgru


@pytest.mark.parametrize("frames, k", [(1, 1), (3, 4), (10, 8), (13, 16)])
def test_fixed_length_default(frames, k):
    assert fixed_length_default(frames) == k


def test_reset_labels():
    assert ExperimentConfig("a", reset="fixed_length").reset_policy(10).label() == "fixed_length(8)"
    assert ExperimentConfig("b", reset="fixed_length:5").reset_policy(10).label() == "fixed_length(5)"
    assert ExperimentConfig("c").reset_policy(10).label() == "align_with_scan"


def test_default_grid():
    grid = load_grid()
    assert [e.experiment_id for e in grid] == [f"exp{i}" for i in range(1, 7)]
    by_id = {e.experiment_id: e for e in grid}
    assert by_id["exp3"].network == "cnn" and by_id["exp3"].reset == "none"
    assert by_id["exp5"].test_split == "unseen_anatomy"
    assert by_id["exp6"].in_channels == 1


def test_grid_file(tmp_path):
    path = tmp_path / "grid.ini"
    path.write_text("[a]\nloss = w_ce\nreset = fixed_length:4\n\n[b]\nnetwork = cnn\nreset = none\n"
                    "input_channel = bmode_only\n", encoding="utf-8")
    grid = load_grid(path)
    assert [(e.experiment_id, e.loss, e.network, e.in_channels) for e in grid] == \
        [("a", "w_ce", "rnn", 2), ("b", "w_dice", "cnn", 1)]
    path.write_text("[a]\nlearning_rate = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_grid(path)
    path.write_text("# nothing\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_grid(path)
    with pytest.raises(FileNotFoundError):
        load_grid(tmp_path / "missing.ini")


def test_splits_hold_out_the_last_anatomy():
    scans = [toy_scan("wedge", 0), toy_scan("cylinder", 1)]
    train, test = _splits(scans, ExperimentConfig("a"), 0.5, 0)
    assert len(train) == 1 and len(test) == 1
    assert len(train[0].inputs) + len(test[0].inputs) == 12
    assert not set(train[0].sweep_ids) & set(test[0].sweep_ids)

    train, test = _splits(scans, ExperimentConfig("b", test_split="unseen_anatomy"), 0.5, 0)
    assert len(test) == 1 and len(test[0].inputs) == 12
    assert test[0].labels[0] is scans[1].labels[0]

    one_channel = _splits(scans, ExperimentConfig("c", input_channels="bmode_only"), 0.5, 0)[0]
    assert one_channel[0].inputs[0].shape == (1, 16, 16)

    with pytest.raises(SplitError):
        _splits(scans[:1], ExperimentConfig("d", test_split="unseen_anatomy"), 0.5, 0)


def test_benchmark_steps_per_window():
    config = RunConfig.load(None, [])
    assert config.train_config().step_per == "epoch"
    assert benchmark_train_config(config).step_per == "window"
    assert benchmark_train_config(RunConfig.load(None, ["eval.step_per=epoch"])).step_per == "epoch"
    with pytest.raises(ConfigError):
        RunConfig.load(None, ["eval.step_per=frame"])

def test_run_experiment(toy_config):
    scans = [toy_scan("wedge", 0), toy_scan("cylinder", 1)]
    outcome = run_experiment(ExperimentConfig("a"), scans, toy_config, seed=3)
    assert outcome.status == "ok"
    assert 0.0 <= outcome.avg_dice <= 1.0
    assert outcome.avg_dice == pytest.approx(np.mean(outcome.per_frame_dice))
    assert len(outcome.loss_trace) == 1 and outcome.seed == 3


def test_ablation_table(tmp_path, toy_config):
    scans = [toy_scan("plate", 0)]
    grid = [ExperimentConfig("ok1"), ExperimentConfig("bad", test_split="unseen_anatomy"),
            ExperimentConfig("ok2", network="cnn", reset="none")]
    out = tmp_path / "results" / "results.csv"
    results = run_ablation(grid, scans, toy_config, seed=0, out_csv=out)
    assert [r.status for r in results][0] == "ok"
    assert results[1].status.startswith("failed:") and math.isnan(results[1].avg_dice)

    df = pd.read_csv(out)
    assert list(df.columns) == CSV_COLUMNS
    assert list(df["experiment_id"]) == ["ok1", "bad", "ok2"]
    assert df.loc[0, "reset_type"] == "align_with_scan" and df.loc[2, "network_type"] == "cnn"
    assert np.isnan(df.loc[1, "avg_dice"])

    again = run_ablation(grid, scans, toy_config, seed=0, out_csv=tmp_path / "again.csv")
    other = pd.read_csv(tmp_path / "again.csv")
    pd.testing.assert_frame_equal(df.drop(columns="runtime_s"), other.drop(columns="runtime_s"))
    assert [r.avg_dice for r in again][::2] == [r.avg_dice for r in results][::2]


def test_ablation_excel_export(tmp_path, toy_config):
    pytest.importorskip("xlsxwriter")
    target = tmp_path / "results.xlsx"
    run_ablation([ExperimentConfig("a")], [toy_scan("plate", 0)], toy_config, seed=0, export_xlsx=target)
    assert target.is_file() and target.stat().st_size > 0


def test_empty_grid(toy_config):
    with pytest.raises(ConfigError):
        run_ablation([], [toy_scan("plate", 0)], toy_config, seed=0)


def test_check_orderings():
    results = [result("exp1", 0.40), result("exp3", 0.30), result("exp4", 0.40), result("exp6", 0.45)]
    assert check_orderings(results) == {
        "feature_channel_helps": False,
        "temporal_model_helps": True,
        "align_with_scan_not_worse": True,
    }
    results[0] = result("exp1", float("nan"), "failed: diverged")
    assert check_orderings(results) == {"feature_channel_helps": False}
    assert compare_pairs(results) == {("exp4", "exp6"): False}


def test_build_small_benchmark():
    config = RunConfig.load(None, [
        "geometry.n_rays=16", "geometry.n_samples=16", "geometry.depth_max_m=0.037",
        "phantom.shape_depth_m=0.02", "phantom.shape_size_m=0.006",
        "eval.frames_per_sweep=2", "eval.n_sweeps=2", "eval.anatomies=flat_plate, wedge",
    ])
    scans = build_benchmark(config)
    assert [s.anatomy for s in scans] == ["flat_plate", "wedge"]
    for scan in scans:
        assert len(scan.frames) == len(scan.inputs) == len(scan.labels) == 4
        assert scan.inputs[0].shape == (2, 16, 16)
        assert scan.labels[0].shape == (16, 16)
        assert all(0.0 <= x.min() and x.max() <= 1.0 for x in scan.inputs)
        assert [f.sweep_id for f in scan.frames] == [0, 0, 1, 1]


@pytest.mark.slow
def test_benchmark_reproduces_orderings(tmp_path):
    config = RunConfig.load(None, [])
    scans = build_benchmark(config, workers=2)
    results = run_ablation(load_grid(), scans, config, seed=0, out_csv=tmp_path / "results.csv")
    assert all(r.status == "ok" for r in results)
    assert all(check_orderings(results).values())
