"""Mini-batch Adam training with per-epoch training-set metrics."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import metrics
from ..io import LabelField
from . import checkpoint as ckpt
from .model import (
    DROPOUT_RATE,
    GraphInput,
    ModelParameters,
    Widths,
    backward,
    cce_loss,
    dropout_mask,
    forward,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperparameters:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 10
    epochs: int = 200
    dropout_rate: float = DROPOUT_RATE
    seed: int = 0


# batch size used when training on the raw, un-augmented set
SMALL_BATCH = 2


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Sample:
    graph: GraphInput
    labels: np.ndarray

    @classmethod
    def of(cls, graph: GraphInput, labels) -> "Sample":
        lab = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
        if lab.shape[0] != graph.n_cells:
            raise ValueError(f"{lab.shape[0]} labels for {graph.n_cells} cells")
        return cls(graph, lab)


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("epoch", "loss", "dsc", "sen", "ppv")

    def append(self, **row) -> None:
        self.rows.append(row)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [f"{r[c]:.10g}" for c in self.COLUMNS[1:]])

    @classmethod
    def from_csv(cls, path) -> "TrainingLog":
        with open(path, newline="") as fh:
            rows = [
                {"epoch": int(r["epoch"]), **{c: float(r[c]) for c in cls.COLUMNS[1:]}}
                for r in csv.DictReader(fh)
            ]
        return cls(rows)

    @property
    def final(self) -> dict:
        return self.rows[-1]


class Adam:
    """Adam with bias correction; weight decay adds ``wd * w`` to the gradient."""

    def __init__(self, hp: Hyperparameters, m=None, v=None, step: int = 0):
        self.hp = hp
        self.m = m
        self.v = v
        self.t = step

    def step(self, params: ModelParameters, grads: dict[str, np.ndarray]) -> None:
        hp = self.hp
        if self.m is None:
            self.m = {k: np.zeros_like(w) for k, w in params.tensors()}
            self.v = {k: np.zeros_like(w) for k, w in params.tensors()}
        self.t += 1
        bc1 = 1.0 - hp.beta1**self.t
        bc2 = 1.0 - hp.beta2**self.t
        for name, w in params.tensors():
            g = grads[name].astype(w.dtype, copy=False)
            if hp.weight_decay:
                g = g + hp.weight_decay * w
            m, v = self.m[name], self.v[name]
            m *= hp.beta1
            m += (1.0 - hp.beta1) * g
            v *= hp.beta2
            v += (1.0 - hp.beta2) * (g * g)
            w -= (hp.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + hp.eps)).astype(w.dtype)


def evaluate(params: ModelParameters, dataset: list[Sample]) -> dict[str, float]:
    """Mean loss and pooled macro DSC/SEN/PPV with dropout off."""
    losses = []
    total = None
    for s in dataset:
        p = forward(params, s.graph, training=False)
        losses.append(cce_loss(p, s.labels))
        c = metrics.confusion(p.argmax(axis=1), s.labels)
        total = c if total is None else total + c
    scores = metrics.macro(total)
    return {"loss": float(np.mean(losses)), **scores}


def train(
    dataset: list[Sample],
    hp: Hyperparameters = Hyperparameters(),
    init: str = "fresh",
    widths: Widths = Widths(),
    resume_from=None,
    checkpoint_path=None,
    dtype=np.float32,
) -> tuple[ModelParameters, TrainingLog]:
    """Train for ``hp.epochs`` epochs.

    ``init="checkpoint"`` continues from ``resume_from`` (a path), keeping its
    parameters, Adam moments, step counter and random stream; otherwise
    parameters are freshly initialised from ``hp.seed``. When
    ``checkpoint_path`` is set the state is written there after every epoch.
    """
    if not dataset:
        raise TrainingError("empty training set")
    if init == "fresh":
        rng = np.random.default_rng(hp.seed)
        params = ModelParameters.init(widths, seed=int(rng.integers(2**31)), dtype=dtype)
        opt = Adam(hp)
        epoch0 = 0
    elif init == "checkpoint":
        if resume_from is None:
            raise TrainingError("init='checkpoint' needs a checkpoint to resume from")
        state = ckpt.load(resume_from, dtype=dtype)
        params = state.params
        rng = np.random.default_rng()
        rng.bit_generator.state = state.rng_state
        opt = Adam(hp, state.m, state.v, state.step)
        epoch0 = state.epoch
    else:
        raise ValueError(f"unknown init {init!r}")

    out = TrainingLog()
    n = len(dataset)
    bs = max(1, min(hp.batch_size, n))
    fusion = params.widths.fusion
    for epoch in range(epoch0 + 1, epoch0 + hp.epochs + 1):
        order = rng.permutation(n)
        for bi, start in enumerate(range(0, n, bs)):
            batch = order[start : start + bs]
            acc = None
            for idx in batch:
                s = dataset[idx]
                mask = None
                if hp.dropout_rate > 0:
                    mask = dropout_mask(rng, (s.graph.n_cells, fusion), hp.dropout_rate, params.dtype.type)
                loss, grads, _ = backward(params, s.graph, s.labels, mask)
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
                if acc is None:
                    acc = grads
                else:
                    for k in acc:
                        acc[k] += grads[k]
            for k in acc:
                acc[k] /= len(batch)
            opt.step(params, acc)
        ev = evaluate(params, dataset)
        if not np.isfinite(ev["loss"]):
            raise TrainingError(f"non-finite loss at epoch {epoch}, evaluation pass")
        out.append(epoch=epoch, **ev)
        log.debug("epoch %d loss %.4f dsc %.4f", epoch, ev["loss"], ev["dsc"])
        if checkpoint_path is not None:
            ckpt.save(ckpt.TrainState(params, opt.m, opt.v, opt.t, epoch,
                                      rng.bit_generator.state, asdict(hp)), checkpoint_path)
    return params, out


def make_sample(mesh, labels: LabelField, radius_fractions=None, dtype=np.float32) -> Sample:
    """Geometry, features and adjacency for one labeled mesh."""
    from ..features import build_adjacency, build_features, default_radii
    from ..mesh import compute_cell_geometry

    geom = compute_cell_geometry(mesh)
    feats = build_features(mesh, geom)
    rs, rl = default_radii(geom, *(radius_fractions or ()))
    a_s, a_l = build_adjacency(geom, rs, rl)
    return Sample.of(GraphInput.build(feats, a_s, a_l, dtype), labels)


def save_log(log_: TrainingLog, path) -> Path:
    p = Path(path)
    log_.to_csv(p)
    return p
