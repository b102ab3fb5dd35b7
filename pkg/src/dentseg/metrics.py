"""Per-class segmentation scores: DSC, SEN, PPV and corpus MAP.

Multi-class handling is one-vs-rest per class. Macro averages run over the
classes present in the ground truth only.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .io import N_CLASSES


@dataclass(frozen=True)
class ConfusionCounts:
    matrix: np.ndarray  # (15, 15), rows = truth, cols = prediction

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.matrix).copy()

    @property
    def fp(self) -> np.ndarray:
        return self.matrix.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.matrix.sum(axis=1) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.n - self.tp - self.fp - self.fn

    @property
    def n(self) -> int:
        return int(self.matrix.sum())

    @property
    def present(self) -> np.ndarray:
        """Classes with at least one truth cell."""
        return self.matrix.sum(axis=1) > 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.matrix + other.matrix)

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, c: int = 1) -> "ConfusionCounts":
        """Counts with the given TP/FP/FN for class ``c`` (helper for tests and reports)."""
        m = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
        other = 0 if c != 0 else 1
        m[c, c] = tp
        m[other, c] = fp
        m[c, other] = fn
        return cls(m)


def _as_labels(x) -> np.ndarray:
    return np.asarray(getattr(x, "labels", x), dtype=np.int64).reshape(-1)


def confusion(pred, truth) -> ConfusionCounts:
    p, t = _as_labels(pred), _as_labels(truth)
    if p.shape != t.shape:
        raise ValueError(f"prediction has {p.size} cells, truth has {t.size}")
    m = np.bincount(t * N_CLASSES + p, minlength=N_CLASSES * N_CLASSES)
    return ConfusionCounts(m.reshape(N_CLASSES, N_CLASSES).astype(np.int64))


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def dsc(counts: ConfusionCounts, c: int) -> float:
    return float(_ratio(2 * counts.tp[c], 2 * counts.tp[c] + counts.fp[c] + counts.fn[c]))


def sen(counts: ConfusionCounts, c: int) -> float:
    return float(_ratio(counts.tp[c], counts.tp[c] + counts.fn[c]))


def ppv(counts: ConfusionCounts, c: int) -> float:
    return float(_ratio(counts.tp[c], counts.tp[c] + counts.fp[c]))


def per_class(counts: ConfusionCounts) -> dict[str, np.ndarray]:
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    return {
        "dsc": _ratio(2 * tp, 2 * tp + fp + fn),
        "sen": _ratio(tp, tp + fn),
        "ppv": _ratio(tp, tp + fp),
    }


def undefined_flags(counts: ConfusionCounts) -> dict[str, np.ndarray]:
    """Which per-class scores were forced to 0 by a zero denominator."""
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    return {
        "dsc": (2 * tp + fp + fn) == 0,
        "sen": (tp + fn) == 0,
        "ppv": (tp + fp) == 0,
    }


def macro(counts: ConfusionCounts) -> dict[str, float]:
    present = counts.present
    if not present.any():
        raise ValueError("no truth cells")
    return {k: float(v[present].mean()) for k, v in per_class(counts).items()}


def macro_dsc(counts):
    return macro(counts)["dsc"]


def macro_sen(counts):
    return macro(counts)["sen"]


def macro_ppv(counts):
    return macro(counts)["ppv"]


def average_precision(counts: ConfusionCounts, mode: str = "micro") -> float:
    if mode == "micro":
        tp = counts.tp.sum()
        return float(_ratio(tp, tp + counts.fp.sum()))
    if mode == "macro":
        return float(per_class(counts)["ppv"][counts.present].mean())
    raise ValueError(f"unknown AP mode {mode!r}")


def mean_average_precision(per_example: list[ConfusionCounts], mode: str = "micro") -> float:
    if not per_example:
        raise ValueError("MAP needs at least one example")
    return float(np.mean([average_precision(c, mode) for c in per_example]))


def report(per_example: list[ConfusionCounts], mode: str = "micro") -> dict:
    """Per-class rows over the pooled counts, the macro row, and corpus MAP."""
    total = per_example[0]
    for c in per_example[1:]:
        total = total + c
    pc = per_class(total)
    flags = undefined_flags(total)
    rows = []
    for k in range(N_CLASSES):
        rows.append({
            "class": k,
            "present": bool(total.present[k]),
            "tp": int(total.tp[k]), "fp": int(total.fp[k]),
            "fn": int(total.fn[k]), "tn": int(total.tn[k]),
            "dsc": float(pc["dsc"][k]), "sen": float(pc["sen"][k]), "ppv": float(pc["ppv"][k]),
            "ppv_undefined": bool(flags["ppv"][k]),
        })
    return {
        "classes": rows,
        "macro": macro(total),
        "map": mean_average_precision(per_example, mode),
        "map_mode": mode,
        "examples": len(per_example),
    }


def report_csv(rep: dict) -> str:
    buf = io.StringIO()
    cols = ["class", "present", "tp", "fp", "fn", "tn", "dsc", "sen", "ppv"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rep["classes"]:
        w.writerow([r[c] for c in cols])
    m = rep["macro"]
    w.writerow(["macro", "", "", "", "", "", m["dsc"], m["sen"], m["ppv"]])
    w.writerow(["map", "", "", "", "", "", "", "", rep["map"]])
    return buf.getvalue()


def report_json(rep: dict) -> str:
    return json.dumps(rep, indent=2, sort_keys=True) + "\n"
