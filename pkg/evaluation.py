"""
File name: evaluation.py

Description: Weighted Dice scoring and the controlled-variable ablation
harness. A seeded synthetic benchmark is simulated per anatomy (phantom mesh
family), pushed through scan conversion and the feature pipeline, split at
sweep granularity, and every experiment of the grid is trained and scored on
its test split. Results go to a CSV (optionally an Excel sheet) and a console
table with the reference scores alongside.

Goal: Check that the benchmark reproduces the direction of each comparison in
the reference scores: feature channel over B-mode only, ConvGRU over a plain
CNN, and sweep-aligned resets over fixed-length resets.
"""

import configparser
import dataclasses
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from config.experiments import COMPARED_PAIRS, EXPERIMENTS, ORDERING_CLAIMS, REFERENCE_DICE
from errors import ConfigError, SpineSurfError, SplitError
from features import feature_batch
from geometry import FrameRecord, ImageGeometry
from helpers import (FEATURE_FILE, FRAME_FILE, FRAMES_CSV, LABEL_FILE, load_image, print_table, read_frames_csv,
                     read_scan_meta)
from losses import dice_score
from phantom import PhantomSpec, ScanPlan, simulate_scan, split_train_test
from runconfig import RunConfig
from scan_conversion import polar_to_cartesian
from training import ResetPolicy, Sequence, TrainConfig, frame_inputs, infer_sequence, train
from unet import UNetSpec

LOSSES = ("w_dice", "w_ce")
NETWORKS = ("rnn", "cnn")
TEST_SPLITS = ("unseen_image", "unseen_anatomy")
INPUT_CHANNELS = {"bmode_plus_feature": 2, "bmode_only": 1}
CSV_COLUMNS = ["experiment_id", "loss_type", "network_type", "reset_type", "test_data", "input_channel",
               "avg_dice", "runtime_s", "seed", "status"]


def weighted_dice_score(pred: np.ndarray, label: np.ndarray, mask: np.ndarray | None = None) -> float:
    """(2 sum(p g) + eps) / (sum(p^2) + sum(g^2) + eps), the complement of the w-Dice loss."""
    return dice_score(pred, label, mask)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str
    loss: str = "w_dice"
    network: str = "rnn"
    reset: str = "align_with_scan"
    test_split: str = "unseen_image"
    input_channels: str = "bmode_plus_feature"

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"{self.experiment_id}: unknown loss '{self.loss}'")
        if self.network not in NETWORKS:
            raise ConfigError(f"{self.experiment_id}: unknown network '{self.network}'")
        if self.test_split not in TEST_SPLITS:
            raise ConfigError(f"{self.experiment_id}: unknown test split '{self.test_split}'")
        if self.input_channels not in INPUT_CHANNELS:
            raise ConfigError(f"{self.experiment_id}: unknown input channel set '{self.input_channels}'")
        kind = self.reset.split(":")[0].split("(")[0]
        if kind not in ("fixed_length", "align_with_scan", "none"):
            raise ConfigError(f"{self.experiment_id}: unknown reset '{self.reset}'")
        if self.network == "cnn" and kind != "none":
            raise ConfigError(f"{self.experiment_id}: a CNN has no recurrent state, reset must be 'none'")

    @property
    def in_channels(self) -> int:
        return INPUT_CHANNELS[self.input_channels]

    def reset_policy(self, frames_per_sweep: int) -> ResetPolicy:
        """A bare 'fixed_length' resets every 2^round(log2(frames_per_sweep)) frames."""
        if self.reset == "fixed_length":
            return ResetPolicy("fixed_length", fixed_length_default(frames_per_sweep))
        return ResetPolicy.parse(self.reset)

    def unet_spec(self, base: UNetSpec) -> UNetSpec:
        return dataclasses.replace(base, in_channels=self.in_channels, use_convgru=self.network == "rnn")


@dataclass
class ExperimentResult:
    experiment: ExperimentConfig
    avg_dice: float
    per_frame_dice: list[float]
    seed: int
    runtime_s: float
    status: str = "ok"
    loss_trace: list[float] = field(default_factory=list)

    @property
    def experiment_id(self) -> str:
        return self.experiment.experiment_id

    def to_row(self, frames_per_sweep: int) -> dict:
        exp = self.experiment
        return {
            "experiment_id": exp.experiment_id,
            "loss_type": exp.loss,
            "network_type": exp.network,
            "reset_type": exp.reset_policy(frames_per_sweep).label(),
            "test_data": exp.test_split,
            "input_channel": exp.input_channels,
            "avg_dice": self.avg_dice,
            "runtime_s": round(self.runtime_s, 3),
            "seed": self.seed,
            "status": self.status,
        }


@dataclass
class BenchmarkScan:
    """One simulated scan, ready for the network: two-channel inputs and polar labels per frame."""

    anatomy: str
    geo: ImageGeometry
    frames: list[FrameRecord]
    inputs: list[np.ndarray]
    labels: list[np.ndarray]

    def sequence(self, frame_ids: list[int], in_channels: int) -> Sequence:
        index = {f.frame_id: i for i, f in enumerate(self.frames)}
        rows = [index[i] for i in frame_ids]
        return Sequence([self.inputs[r][:in_channels] for r in rows], [self.labels[r] for r in rows],
                        [self.frames[r].sweep_id for r in rows])


def fixed_length_default(frames_per_sweep: int) -> int:
    return max(1, int(2 ** round(np.log2(max(1, frames_per_sweep)))))


def benchmark_train_config(config: RunConfig) -> TrainConfig:
    """[train] settings with the benchmark's own stepping ([eval] step_per)."""
    return dataclasses.replace(config.train_config(), step_per=config.get("eval", "step_per"))


def load_grid(path: str | Path | None = None) -> list[ExperimentConfig]:
    """
    Experiment grid from an INI file, one section per experiment with keys
    loss, network, reset, test_data and input_channel. Without a path the six
    ablation experiments are returned.
    """
    if path is None:
        return [ExperimentConfig(name, *values) for name, values in EXPERIMENTS.items()]
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Grid file does not exist: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.read(path, encoding="utf-8")
    grid = []
    allowed = {"loss", "network", "reset", "test_data", "input_channel"}
    for name in parser.sections():
        section = dict(parser.items(name))
        unknown = set(section) - allowed
        if unknown:
            raise ConfigError(f"[{name}] unknown grid keys {sorted(unknown)}")
        grid.append(ExperimentConfig(
            experiment_id=name,
            loss=section.get("loss", "w_dice"),
            network=section.get("network", "rnn"),
            reset=section.get("reset", "align_with_scan"),
            test_split=section.get("test_data", "unseen_image"),
            input_channels=section.get("input_channel", "bmode_plus_feature"),
        ))
    if not grid:
        raise ConfigError(f"Grid file {path} defines no experiments")
    return grid


# ---------------------------------------------------------------- benchmark data

def benchmark_plan(config: RunConfig) -> ScanPlan:
    """Scan plan of the benchmark: [eval] sweep and frame counts over the phantom's angle range."""
    angles = config.get("phantom", "sweep_angles_rad")
    n_sweeps = config.get("eval", "n_sweeps")
    if len(angles) == n_sweeps:
        sweep_angles = list(angles)
    else:
        sweep_angles = np.linspace(min(angles), max(angles), n_sweeps).tolist()
    return dataclasses.replace(config.scan_plan(), n_sweeps=n_sweeps, sweep_angles_rad=sweep_angles,
                               frames_per_sweep=config.get("eval", "frames_per_sweep"))


def _prepare_scan(config: RunConfig, anatomy: str, geo: ImageGeometry, frames: list[FrameRecord], bmodes: list,
                  labels: list[np.ndarray], features: list | None, workers: int, verbose: bool) -> BenchmarkScan:
    if features is None:
        f = config["features"]
        results = feature_batch(bmodes, geo, config.log_gabor(), config.confidence(), f["sobel_threshold"],
                                f["blur_kernel_px"], workers, verbose)
        features = [r.image for r in results]
    inputs = [frame_inputs(b, feat, geo, 2) for b, feat in zip(bmodes, features)]
    return BenchmarkScan(anatomy, geo, frames, inputs, labels)


def build_benchmark(config: RunConfig, workers: int = 1, verbose: bool = False) -> list[BenchmarkScan]:
    """Simulate one scan per anatomy in [eval] anatomies; the phantom seed is offset by the anatomy index."""
    geo = config.geometry()
    kin = config.kinematics()
    plan = benchmark_plan(config)
    pixel_size = config.get("geometry", "pixel_size_m")
    scans = []
    for index, anatomy in enumerate(config.get("eval", "anatomies")):
        spec = PhantomSpec.from_config(config["phantom"], config["labelgen"], shape=anatomy)
        spec = dataclasses.replace(spec, seed=spec.seed + index)
        print(f"[INFO] Simulating {plan.n_sweeps * plan.frames_per_sweep} frames of the {anatomy} phantom",
              file=sys.stderr)
        sim = simulate_scan(spec, kin, plan, geo, workers)
        bmodes = [polar_to_cartesian(img, pixel_size) for img in sim.images]
        scans.append(_prepare_scan(config, anatomy, geo, sim.frames, bmodes, sim.labels, None, workers, verbose))
    return scans


def load_scan(scan_dir: str | Path, config: RunConfig, feature_dir: str | Path | None = None,
              label_dir: str | Path | None = None, workers: int = 1, verbose: bool = False) -> BenchmarkScan:
    """
    Read one frame directory. Features and labels are looked up in their own
    directories when given, else next to the frames; missing features are
    computed, missing labels become all-zero maps.
    """
    scan_dir = Path(scan_dir)
    geo, _, _, anatomy = read_scan_meta(scan_dir)
    frames = read_frames_csv(scan_dir)
    bmodes = [load_image(scan_dir / FRAME_FILE.format(f.frame_id))[0] for f in frames]
    label_paths = [Path(label_dir or scan_dir) / LABEL_FILE.format(f.frame_id) for f in frames]
    labels = [load_image(p)[0].data if p.is_file() else np.zeros(geo.shape) for p in label_paths]
    feature_paths = [Path(feature_dir or scan_dir) / FEATURE_FILE.format(f.frame_id) for f in frames]
    features = [load_image(p)[0] for p in feature_paths] if all(p.is_file() for p in feature_paths) else None
    return _prepare_scan(config, anatomy, geo, frames, bmodes, labels, features, workers, verbose)


def load_benchmark(directory: str | Path, config: RunConfig, workers: int = 1,
                   verbose: bool = False) -> list[BenchmarkScan]:
    """
    Read simulated frame directories: `directory` itself or each of its
    subdirectories holding a frames.csv, in name order.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Data directory does not exist: {directory}")
    scan_dirs = [directory] if (directory / FRAMES_CSV).is_file() else sorted(
        p for p in directory.iterdir() if (p / FRAMES_CSV).is_file())
    if not scan_dirs:
        raise FileNotFoundError(f"No frame directories under {directory}")
    return [load_scan(scan_dir, config, workers=workers, verbose=verbose) for scan_dir in scan_dirs]


def _splits(scans: list[BenchmarkScan], exp: ExperimentConfig, train_fraction: float, split_seed: int):
    """
    Training and test sequences. The last anatomy is held out: training always
    uses the train sweeps of the other anatomies; 'unseen_image' tests on their
    test sweeps and 'unseen_anatomy' on every frame of the held-out scan.
    """
    seen = scans[:-1] if len(scans) > 1 else scans
    if exp.test_split == "unseen_anatomy" and len(scans) < 2:
        raise SplitError("An unseen-anatomy test needs at least two anatomies")
    train_seqs, test_seqs = [], []
    for scan in seen:
        train_ids, test_ids = split_train_test(scan.frames, train_fraction, split_seed)
        train_seqs.append(scan.sequence(train_ids, exp.in_channels))
        if exp.test_split == "unseen_image":
            test_seqs.append(scan.sequence(test_ids, exp.in_channels))
    if exp.test_split == "unseen_anatomy":
        held_out = scans[-1]
        test_seqs.append(held_out.sequence([f.frame_id for f in held_out.frames], exp.in_channels))
    return train_seqs, test_seqs


def run_experiment(exp: ExperimentConfig, scans: list[BenchmarkScan], config: RunConfig, seed: int,
                   verbose: bool = False) -> ExperimentResult:
    """Train one grid entry and score it per frame on its test split."""
    frames_per_sweep = config.get("eval", "frames_per_sweep")
    policy = exp.reset_policy(frames_per_sweep)
    spec = exp.unet_spec(config.unet_spec())
    train_config = dataclasses.replace(benchmark_train_config(config), loss=exp.loss, reset_policy=policy,
                                       seed=seed)
    start = time.perf_counter()
    train_seqs, test_seqs = _splits(scans, exp, config.get("eval", "train_fraction"), config.get("eval", "split_seed"))
    result = train(spec, train_config, train_seqs, verbose=verbose)
    scores = []
    for seq in test_seqs:
        preds = infer_sequence(spec, result.params, seq.inputs, seq.sweep_ids, policy)
        scores += [weighted_dice_score(p, g) for p, g in zip(preds, seq.labels)]
    runtime = time.perf_counter() - start
    return ExperimentResult(exp, float(np.mean(scores)), scores, seed, runtime, "ok", result.loss_trace)


def run_ablation(grid: list[ExperimentConfig], scans: list[BenchmarkScan], config: RunConfig, seed: int,
                 out_csv: str | Path | None = None, export_xlsx: str | Path | None = None,
                 verbose: bool = False) -> list[ExperimentResult]:
    """
    Run every experiment of the grid on the same benchmark.

    A failing experiment is reported with status 'failed: <reason>' and a NaN
    score; the remaining rows still run.

    Args:
        grid (list[ExperimentConfig]): Experiments in report order.
        scans (list[BenchmarkScan]): Benchmark from `build_benchmark` or `load_benchmark`.
        config (RunConfig): Network, training and split settings.
        seed (int): Parameter initialization seed shared by every experiment.
        out_csv (str | Path, optional): Where to write the result table.
        export_xlsx (str | Path, optional): Also write the table as an Excel sheet.
        verbose (bool): Training progress on standard error.

    Returns:
        list[ExperimentResult]: One result per grid entry, in grid order.
    """
    if not grid:
        raise ConfigError("The experiment grid is empty")
    results = []
    for exp in grid:
        print(f"[INFO] Running {exp.experiment_id}", file=sys.stderr)
        start = time.perf_counter()
        try:
            result = run_experiment(exp, scans, config, seed, verbose)
        except SpineSurfError as e:
            print(f"[WARN] {exp.experiment_id} failed: {e}", file=sys.stderr)
            result = ExperimentResult(exp, float("nan"), [], seed, time.perf_counter() - start, f"failed: {e}")
        results.append(result)

    frames_per_sweep = config.get("eval", "frames_per_sweep")
    df = pd.DataFrame([r.to_row(frames_per_sweep) for r in results], columns=CSV_COLUMNS)
    if out_csv:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(out_csv, index=False, float_format="%.6f")
        print(f"[RESULT] Ablation table saved to: {out_csv}", file=sys.stderr)
    if export_xlsx:
        df.to_excel(export_xlsx, index=False, engine="xlsxwriter")
        print(f"[RESULT] Exported ablation table to: {export_xlsx}", file=sys.stderr)
    report_ablation(results, frames_per_sweep)
    return results


def report_ablation(results: list[ExperimentResult], frames_per_sweep: int) -> None:
    rows = []
    for result in results:
        row = result.to_row(frames_per_sweep)
        row["reference"] = REFERENCE_DICE.get(result.experiment_id, "")
        rows.append(row)
    print_table(rows, ["experiment_id", "loss_type", "network_type", "reset_type", "test_data", "input_channel",
                       "avg_dice", "reference", "status"], [8, 7, 6, 16, 15, 19, 9, 9, 8])
    orderings = check_orderings(results)
    for name, holds in orderings.items():
        print(f"[RESULT] {name}: {'holds' if holds else 'does not hold'}", file=sys.stderr)
    for (better, worse), agrees in compare_pairs(results).items():
        print(f"[INFO] {better} vs {worse}: {'same direction as' if agrees else 'reverses'} the reference",
              file=sys.stderr)


def check_orderings(results: list[ExperimentResult]) -> dict[str, bool]:
    """
    Evaluate the directional claims on a result set. Claims whose experiments
    are missing or failed are left out.
    """
    scores = {r.experiment_id: r.avg_dice for r in results if r.status == "ok"}
    checks = {}
    for name, (higher, lower, strict) in ORDERING_CLAIMS.items():
        if higher in scores and lower in scores:
            a, b = scores[higher], scores[lower]
            checks[name] = bool(a > b if strict else a >= b)
    return checks


def compare_pairs(results: list[ExperimentResult]) -> dict[tuple[str, str], bool]:
    """For each reference pair (better, worse) present in `results`: does the measured score agree?"""
    scores = {r.experiment_id: r.avg_dice for r in results if r.status == "ok"}
    return {(better, worse): bool(scores[better] >= scores[worse])
            for better, worse in COMPARED_PAIRS if better in scores and worse in scores}
