"""Graph-constrained multi-scale cell classifier, numpy forward and backward.

Layout (default widths in brackets)::

    x [15] -> enc1 -> enc2 = e [64]
    c1 = ctx1([e, S e])     [128]     S = rownorm(A_small + I)
    c2 = ctx2([c1, L c1])   [128]     L = rownorm(A_large + I)
    g  = max_cells glob([e, c1, c2])  [256], broadcast to every cell
    f  = fuse([e, c1, c2, g])         [256], dropout here when training
    p  = softmax(cls(f))              [15]

All hidden layers are affine + ReLU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..features import N_FEATURES
from ..io import N_CLASSES

PROB_FLOOR = 1e-12
DROPOUT_RATE = 0.5


@dataclass(frozen=True)
class Widths:
    encoder: int = 64
    context1: int = 128
    context2: int = 128
    holistic: int = 256
    fusion: int = 256

    @classmethod
    def uniform(cls, w: int) -> "Widths":
        return cls(w, w, w, w, w)


LAYERS = ("enc1", "enc2", "ctx1", "ctx2", "glob", "fuse", "cls")


def layer_shapes(w: Widths) -> dict[str, tuple[int, int]]:
    local = w.encoder + w.context1 + w.context2
    return {
        "enc1": (N_FEATURES, w.encoder),
        "enc2": (w.encoder, w.encoder),
        "ctx1": (2 * w.encoder, w.context1),
        "ctx2": (2 * w.context1, w.context2),
        "glob": (local, w.holistic),
        "fuse": (local + w.holistic, w.fusion),
        "cls": (w.fusion, N_CLASSES),
    }


class ShapeError(ValueError):
    pass


@dataclass
class ModelParameters:
    """Weights ``W[layer]`` (fan_in x fan_out) and biases ``b[layer]``."""

    widths: Widths
    W: dict[str, np.ndarray]
    b: dict[str, np.ndarray]

    @classmethod
    def init(cls, widths: Widths = Widths(), seed: int = 0, dtype=np.float32) -> "ModelParameters":
        rng = np.random.default_rng(seed)
        W, b = {}, {}
        for name, (fin, fout) in layer_shapes(widths).items():
            # He-normal for ReLU layers, plain Glorot for the classifier
            std = np.sqrt(2.0 / fin) if name != "cls" else np.sqrt(1.0 / fin)
            W[name] = (rng.standard_normal((fin, fout)) * std).astype(dtype)
            b[name] = np.zeros(fout, dtype=dtype)
        return cls(widths, W, b)

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name in LAYERS:
            out.append((f"{name}.W", self.W[name]))
            out.append((f"{name}.b", self.b[name]))
        return out

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            self.widths,
            {k: v.copy() for k, v in self.W.items()},
            {k: v.copy() for k, v in self.b.items()},
        )

    def astype(self, dtype) -> "ModelParameters":
        return ModelParameters(
            self.widths,
            {k: v.astype(dtype) for k, v in self.W.items()},
            {k: v.astype(dtype) for k, v in self.b.items()},
        )

    @property
    def dtype(self):
        return self.W["cls"].dtype

    def check(self) -> None:
        shapes = layer_shapes(self.widths)
        for name in LAYERS:
            if self.W[name].shape != shapes[name] or self.b[name].shape != (shapes[name][1],):
                raise ShapeError(f"layer {name}: bad parameter shape {self.W[name].shape}")
            if not (np.isfinite(self.W[name]).all() and np.isfinite(self.b[name]).all()):
                raise ShapeError(f"layer {name}: non-finite parameters")


@dataclass(frozen=True)
class GraphInput:
    """Features plus the two smoothing operators of one mesh, ready to run."""

    x: np.ndarray
    small: sp.csr_matrix
    large: sp.csr_matrix
    small_t: sp.csr_matrix
    large_t: sp.csr_matrix

    @classmethod
    def build(cls, features, a_small, a_large, dtype=np.float32) -> "GraphInput":
        x = np.asarray(getattr(features, "matrix", features), dtype=dtype)
        n = x.shape[0]
        if x.ndim != 2 or x.shape[1] != N_FEATURES:
            raise ShapeError(f"input stage: expected (N, {N_FEATURES}) features, got {x.shape}")
        for tag, a in (("small-radius context", a_small), ("large-radius context", a_large)):
            if a.n != n:
                raise ShapeError(f"{tag} stage: adjacency has {a.n} cells, features have {n}")
        s = a_small.smoothing(dtype)
        l = s if a_large is a_small else a_large.smoothing(dtype)
        return cls(x, s, l, s.T.tocsr(), l.T.tocsr())

    @property
    def n_cells(self) -> int:
        return int(self.x.shape[0])


def _relu(z):
    return np.maximum(z, 0)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def dropout_mask(rng: np.random.Generator, shape, rate: float, dtype) -> np.ndarray:
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype(1.0 - rate)


def _forward(params: ModelParameters, g: GraphInput, mask):
    W, b = params.W, params.b
    h1 = _relu(g.x @ W["enc1"] + b["enc1"])
    e = _relu(h1 @ W["enc2"] + b["enc2"])
    in1 = np.concatenate([e, g.small @ e], axis=1)
    c1 = _relu(in1 @ W["ctx1"] + b["ctx1"])
    in2 = np.concatenate([c1, g.large @ c1], axis=1)
    c2 = _relu(in2 @ W["ctx2"] + b["ctx2"])
    loc = np.concatenate([e, c1, c2], axis=1)
    gp = _relu(loc @ W["glob"] + b["glob"])
    arg = np.argmax(gp, axis=0)
    hol = gp[arg, np.arange(gp.shape[1])]
    fin = np.concatenate([loc, np.broadcast_to(hol, (loc.shape[0], hol.shape[0]))], axis=1)
    f = _relu(fin @ W["fuse"] + b["fuse"])
    fd = f * mask if mask is not None else f
    logits = fd @ W["cls"] + b["cls"]
    cache = dict(h1=h1, e=e, in1=in1, c1=c1, in2=in2, c2=c2, loc=loc, gp=gp, arg=arg,
                 fin=fin, f=f, fd=fd, mask=mask)
    return softmax(logits), cache


def forward(
    params: ModelParameters,
    g: GraphInput,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout: float = DROPOUT_RATE,
) -> np.ndarray:
    """Per-cell class posteriors, (N, 15), rows summing to one."""
    mask = None
    if training and dropout > 0:
        if rng is None:
            raise ValueError("training forward pass needs an rng for dropout")
        mask = dropout_mask(rng, (g.n_cells, params.widths.fusion), dropout, params.dtype.type)
    p, _ = _forward(params, g, mask)
    return p


def cce_loss(pred: np.ndarray, truth) -> float:
    truth = np.asarray(getattr(truth, "labels", truth))
    if pred.shape[0] != truth.shape[0]:
        raise ShapeError(f"loss: {pred.shape[0]} predictions for {truth.shape[0]} labels")
    picked = pred[np.arange(truth.shape[0]), truth].astype(np.float64)
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def backward(
    params: ModelParameters,
    g: GraphInput,
    truth,
    mask: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Loss, gradients keyed ``"<layer>.W"`` / ``"<layer>.b"``, and posteriors.

    ``mask`` is the dropout mask (already scaled by 1/keep); None disables
    dropout.
    """
    truth = np.asarray(getattr(truth, "labels", truth))
    n = g.n_cells
    if truth.shape[0] != n:
        raise ShapeError(f"loss: {n} cells but {truth.shape[0]} labels")
    W = params.W
    p, c = _forward(params, g, mask)
    rows = np.arange(n)
    loss = cce_loss(p, truth)

    dz = p.copy()
    dz[rows, truth] -= 1
    dz[p[rows, truth] < PROB_FLOOR] = 0  # floored cells contribute a constant
    dz /= n
    grads = {}
    grads["cls.W"] = c["fd"].T @ dz
    grads["cls.b"] = dz.sum(axis=0)
    df = dz @ W["cls"].T
    if c["mask"] is not None:
        df *= c["mask"]
    df *= c["f"] > 0
    grads["fuse.W"] = c["fin"].T @ df
    grads["fuse.b"] = df.sum(axis=0)
    dfin = df @ W["fuse"].T

    w = params.widths
    nloc = w.encoder + w.context1 + w.context2
    dloc = dfin[:, :nloc].copy()
    dhol = dfin[:, nloc:].sum(axis=0)
    dgp = np.zeros_like(c["gp"])
    dgp[c["arg"], np.arange(dgp.shape[1])] = dhol
    dgp *= c["gp"] > 0
    grads["glob.W"] = c["loc"].T @ dgp
    grads["glob.b"] = dgp.sum(axis=0)
    dloc += dgp @ W["glob"].T

    de = dloc[:, : w.encoder]
    dc1 = dloc[:, w.encoder : w.encoder + w.context1]
    dc2 = dloc[:, w.encoder + w.context1 :]

    dc2 = dc2 * (c["c2"] > 0)
    grads["ctx2.W"] = c["in2"].T @ dc2
    grads["ctx2.b"] = dc2.sum(axis=0)
    din2 = dc2 @ W["ctx2"].T
    dc1 = dc1 + din2[:, : w.context1] + g.large_t @ din2[:, w.context1 :]

    dc1 = dc1 * (c["c1"] > 0)
    grads["ctx1.W"] = c["in1"].T @ dc1
    grads["ctx1.b"] = dc1.sum(axis=0)
    din1 = dc1 @ W["ctx1"].T
    de = de + din1[:, : w.encoder] + g.small_t @ din1[:, w.encoder :]

    de = de * (c["e"] > 0)
    grads["enc2.W"] = c["h1"].T @ de
    grads["enc2.b"] = de.sum(axis=0)
    dh1 = (de @ W["enc2"].T) * (c["h1"] > 0)
    grads["enc1.W"] = g.x.T @ dh1
    grads["enc1.b"] = dh1.sum(axis=0)
    return loss, grads, p
