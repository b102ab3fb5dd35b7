"""End-to-end orchestration: test pipeline, training regimes, evaluation, timing."""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from . import metrics
from .augment import AugmentationSpec, augment_dataset
from .decimate import decimate
from .features import build_adjacency, build_features, default_radii
from .features import RADIUS_LARGE_FRACTION, RADIUS_SMALL_FRACTION
from .graphcut.refine import DEFAULT_LAMBDA, DEFAULT_SIGMA, refine
from .io import LabelField
from .mesh import TriangleMesh, compute_cell_geometry
from .segnet import checkpoint as ckpt
from .segnet.model import GraphInput, ModelParameters, Widths, forward
from .segnet.train import SMALL_BATCH, Hyperparameters, Sample, TrainingLog, make_sample, train
from .upsample import TransferSpec, knn_transfer

log = logging.getLogger(__name__)

PHASES = ("compress", "predict", "postprocess", "decompress")
REGIMES = (
    "isolated_with_aug",
    "isolated_without_aug",
    "continuous_with_aug",
    "continuous_without_aug",
)
BENCH_BUCKETS = (10_000, 20_000, 30_000, 40_000, 50_000, 60_000, 70_000)
DEFAULT_RATE = 0.1


class StageError(RuntimeError):
    """Failure inside a named stage; ``str()`` is ``"[stage] message"``."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as e:  # noqa: BLE001 - re-tagged with the stage name
        raise StageError(name, str(e) or type(e).__name__) from e


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class RunConfig:
    checkpoint: str | None = None
    output_dir: str = "out"
    rate: float = DEFAULT_RATE
    lam: float = DEFAULT_LAMBDA
    sigma: float = DEFAULT_SIGMA
    radius_small: float = RADIUS_SMALL_FRACTION  # fractions of the bbox diagonal
    radius_large: float = RADIUS_LARGE_FRACTION
    regime: str = "isolated_with_aug"
    seed: int = 0
    transfer: TransferSpec = field(default_factory=TransferSpec)
    hp: Hyperparameters = field(default_factory=Hyperparameters)
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    widths: Widths = field(default_factory=Widths)

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {', '.join(REGIMES)}")
        if not (0.0 < self.rate <= 1.0):
            raise ValueError(f"rate must lie in (0, 1], got {self.rate}")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (0 < self.radius_small <= self.radius_large):
            raise ValueError("need 0 < radius_small <= radius_large")
        self.transfer.validate()
        self.augmentation.validate()

    @property
    def radius_fractions(self) -> tuple[float, float]:
        return self.radius_small, self.radius_large

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data)


def _build(kind, data: dict):
    known = {f.name: f for f in fields(kind)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown {kind.__name__} field(s): {', '.join(sorted(unknown))}")
    defaults = kind()
    kwargs = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value)
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        elif isinstance(current, frozenset):
            kwargs[name] = frozenset(value)
        else:
            kwargs[name] = value
    return kind(**kwargs)


def _coerce(current, text: str):
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        return tuple(float(x) for x in text.split(","))
    if current is None:
        return None if text.lower() in ("", "none", "null") else text
    return text


def apply_overrides(config: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Apply ``{"hp.learning_rate": "1e-3", ...}`` (values as strings)."""
    data = config.to_dict()
    for key, text in overrides.items():
        parts = key.split(".")
        node, obj = data, config
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ValueError(f"unknown config field {key!r}")
            node, obj = node[p], getattr(obj, p)
        leaf = parts[-1]
        if leaf not in node or isinstance(node[leaf], dict):
            raise ValueError(f"unknown config field {key!r}")
        node[leaf] = _coerce(getattr(obj, leaf), text)
    return RunConfig.from_dict(data)


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = RunConfig.from_dict(json.loads(Path(path).read_text()))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- pipeline


@dataclass
class PhaseTimings:
    """Mean seconds per phase, one column per bucket (input size)."""

    buckets: list[int]
    means: dict[str, list[float]]
    repetitions: int = 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["phase", "bucket", "mean_seconds", "repetitions"])
            for ph in PHASES:
                for b, m in zip(self.buckets, self.means[ph]):
                    w.writerow([ph, b, f"{m:.6f}", self.repetitions])

    @classmethod
    def from_csv(cls, path) -> "PhaseTimings":
        buckets: list[int] = []
        means = {ph: [] for ph in PHASES}
        reps = 1
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                b = int(r["bucket"])
                if b not in buckets:
                    buckets.append(b)
                means[r["phase"]].append(float(r["mean_seconds"]))
                reps = int(r["repetitions"])
        return cls(buckets, means, reps)


@dataclass
class PipelineResult:
    labels: LabelField
    coarse_mesh: TriangleMesh
    coarse_labels: LabelField
    probabilities: np.ndarray
    seconds: dict[str, float]

    def timings(self) -> PhaseTimings:
        return PhaseTimings([self.coarse_mesh.n_cells], {p: [self.seconds[p]] for p in PHASES})


def graph_input(mesh: TriangleMesh, geometry, radius_fractions, dtype=np.float32) -> GraphInput:
    feats = build_features(mesh, geometry)
    rs, rl = default_radii(geometry, *radius_fractions)
    a_s, a_l = build_adjacency(geometry, rs, rl)
    return GraphInput.build(feats, a_s, a_l, dtype)


def predict(params: ModelParameters, mesh: TriangleMesh, geometry, radius_fractions) -> np.ndarray:
    g = graph_input(mesh, geometry, radius_fractions, params.dtype.type)
    return forward(params, g, training=False)


def run_pipeline(mesh: TriangleMesh, params: ModelParameters, config: RunConfig) -> PipelineResult:
    """Decimate, predict, refine, and transfer labels back to ``mesh``.

    Each phase is timed around in-memory work only.
    """
    sec = {}
    with stage("compress"):
        t = time.perf_counter()
        coarse, _ = decimate(mesh, config.rate)
        sec["compress"] = time.perf_counter() - t
    with stage("predict"):
        t = time.perf_counter()
        cgeom = compute_cell_geometry(coarse)
        prob = predict(params, coarse, cgeom, config.radius_fractions)
        sec["predict"] = time.perf_counter() - t
    with stage("postprocess"):
        t = time.perf_counter()
        clab = refine(prob, coarse, cgeom, config.lam, config.sigma)
        sec["postprocess"] = time.perf_counter() - t
    with stage("decompress"):
        t = time.perf_counter()
        if coarse is mesh:
            labels = LabelField(clab.labels.copy())
        else:
            labels = knn_transfer(cgeom, clab, compute_cell_geometry(mesh), config.transfer)
        sec["decompress"] = time.perf_counter() - t
    return PipelineResult(labels, coarse, clab, prob, sec)


def decimate_labeled(mesh: TriangleMesh, labels: LabelField, rate: float, k: int = 3):
    """Decimate a labeled mesh; coarse labels are voted from the fine cells."""
    coarse, _ = decimate(mesh, rate)
    if coarse is mesh:
        return mesh, labels
    spec = TransferSpec(k=k, cell_ceiling=max(coarse.n_cells, 1))
    return coarse, knn_transfer(compute_cell_geometry(mesh), labels, compute_cell_geometry(coarse), spec)


def load_model(config: RunConfig) -> ModelParameters:
    with stage("checkpoint"):
        if config.checkpoint is None:
            raise ValueError("no checkpoint given")
        return ckpt.load_params(config.checkpoint)


# ---------------------------------------------------------------- training


def regime_parts(regime: str) -> tuple[str, bool]:
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {', '.join(REGIMES)}")
    mode, _, aug = regime.partition("_")
    return mode, aug == "with_aug"


def training_set(arches, config: RunConfig, with_aug: bool) -> list[Sample]:
    """Samples for one regime; with augmentation only the generated copies are used."""
    with stage("augment"):
        if with_aug:
            items = [(m, l) for m, l, _ in augment_dataset(arches, config.augmentation)]
        else:
            items = list(arches)
    with stage("featurize"):
        return [make_sample(m, l, config.radius_fractions) for m, l in items]


def run_regime(
    arches,
    config: RunConfig,
    base_checkpoint=None,
    checkpoint_path=None,
    dataset: list[Sample] | None = None,
) -> tuple[ModelParameters, TrainingLog]:
    """Train under ``config.regime``.

    Continuous regimes resume parameters, Adam moments and random stream from
    ``base_checkpoint``; isolated ones start from a fresh initialisation.
    Without augmentation the batch size drops to 2.
    """
    mode, with_aug = regime_parts(config.regime)
    hp = config.hp if with_aug else replace(config.hp, batch_size=SMALL_BATCH)
    if dataset is None:
        dataset = training_set(arches, config, with_aug)
    with stage("train"):
        if mode == "continuous":
            if base_checkpoint is None:
                raise ValueError(f"regime {config.regime} needs a base checkpoint")
            return train(dataset, hp, init="checkpoint", resume_from=base_checkpoint,
                         checkpoint_path=checkpoint_path)
        return train(dataset, hp, init="fresh", widths=config.widths, checkpoint_path=checkpoint_path)


# ---------------------------------------------------------------- evaluation


def evaluate_pairs(pairs, mode: str = "micro") -> dict:
    """Metrics report over (pred LabelField, truth LabelField) pairs."""
    with stage("eval"):
        counts = []
        for pred, truth in pairs:
            if len(pred) != len(truth):
                raise ValueError(f"prediction has {len(pred)} labels, truth has {len(truth)}")
            counts.append(metrics.confusion(pred.labels, truth.labels))
        return metrics.report(counts, mode)


# ---------------------------------------------------------------- benchmark


def bench(
    mesh: TriangleMesh,
    params: ModelParameters,
    config: RunConfig,
    buckets=BENCH_BUCKETS,
    repetitions: int = 3,
    warmup: bool = True,
) -> PhaseTimings:
    """Per-phase mean seconds when ``mesh`` is compressed to each bucket size."""
    if repetitions < 1:
        raise ValueError("need at least one repetition")
    n = mesh.n_cells
    for b in buckets:
        if not (0 < b <= n):
            raise ValueError(f"bucket {b} outside (0, {n}] cells of the input mesh")
    if warmup:
        # compile the numba kernels outside the timed region
        small = min(buckets)
        run_pipeline(mesh, params, replace(config, rate=small / n))
    means = {p: [] for p in PHASES}
    for b in buckets:
        cfg = replace(config, rate=b / n)
        acc = {p: 0.0 for p in PHASES}
        for _ in range(repetitions):
            res = run_pipeline(mesh, params, cfg)
            for p in PHASES:
                acc[p] += res.seconds[p]
        for p in PHASES:
            means[p].append(acc[p] / repetitions)
        log.info("bucket %d: %s", b, {p: round(means[p][-1], 3) for p in PHASES})
    return PhaseTimings(list(buckets), means, repetitions)
