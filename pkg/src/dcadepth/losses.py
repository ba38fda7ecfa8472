"""Training losses, evaluation metrics and cross-illumination consistency."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, fields

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    abs_,
    add_const,
    log,
    masked_select,
    mean_all,
    mul_scalar,
    narrow,
    safe_sqrt,
    square,
    sub,
    sum_all,
    tensor_new,
)

MIN_DEPTH = 1e-3
MAX_DEPTH = 10.0


class EmptyMaskError(ValueError):
    """No valid ground-truth pixels to evaluate."""


@dataclass
class ValidMask:
    mask: np.ndarray

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def valid_mask(gt, min_depth: float = MIN_DEPTH, max_depth: float = MAX_DEPTH) -> ValidMask:
    """Pixels with ground truth in (min_depth, max_depth]."""
    g = gt.data if isinstance(gt, Tensor) else np.asarray(gt)
    return ValidMask((g > min_depth) & (g <= max_depth))


@dataclass
class LossWeights:
    l1: float = 0.0
    si: float = 1.0
    grad: float = 0.1
    alpha: float = 10.0
    lam: float = 0.85

    def __post_init__(self):
        if self.alpha <= 0 or not 0 <= self.lam <= 1 or min(self.l1, self.si, self.grad) < 0:
            raise ValueError(f"invalid loss weights {self}")


LOSS_PROFILES = {
    "vari": LossWeights(0.0, 1.0, 0.1),
    "nyu": LossWeights(1.0, 0.02, 0.1),
}


def _gt_array(gt, like: Tensor) -> np.ndarray:
    g = gt.data if isinstance(gt, Tensor) else np.asarray(gt)
    if g.shape != like.shape:
        raise ShapeError(f"prediction {like.shape} and ground truth {g.shape} differ")
    return g.astype(like.dtype)


def _require_valid(mask: ValidMask, shape) -> None:
    if mask.mask.shape != tuple(shape):
        raise ShapeError(f"mask {mask.mask.shape} does not match {shape}")
    if mask.count == 0:
        raise EmptyMaskError("no valid pixels")


def l1_loss(pred: Tensor, gt, mask: ValidMask) -> Tensor:
    """Mean absolute error over valid pixels."""
    g = _gt_array(gt, pred)
    _require_valid(mask, pred.shape)
    diff = add_const(masked_select(pred, mask.mask), -g[mask.mask])
    return mean_all(abs_(diff))


def si_loss(pred: Tensor, gt, mask: ValidMask, alpha: float = 10.0, lam: float = 0.85) -> Tensor:
    """alpha * sqrt(mean(g^2) - lam * mean(g)^2) with g = ln(pred) - ln(gt)."""
    g_arr = _gt_array(gt, pred)
    _require_valid(mask, pred.shape)
    p_sel = masked_select(pred, mask.mask)
    gt_sel = g_arr[mask.mask]
    if (p_sel.data <= 0).any() or (gt_sel <= 0).any():
        raise ValueError("si_loss needs positive prediction and ground truth on the mask")
    t = mask.count
    g = add_const(log(p_sel), -np.log(gt_sel))
    radicand = sub(mul_scalar(sum_all(square(g)), 1.0 / t), mul_scalar(square(sum_all(g)), lam / (t * t)))
    return mul_scalar(safe_sqrt(radicand), alpha)


def _pair_terms(pred: Tensor, g: np.ndarray, mask: np.ndarray, axis: int):
    n = pred.shape[axis]
    if n < 2:
        return None, 0
    idx_hi = [slice(None)] * 4
    idx_lo = [slice(None)] * 4
    idx_hi[axis] = slice(1, None)
    idx_lo[axis] = slice(0, n - 1)
    pair = mask[tuple(idx_hi)] & mask[tuple(idx_lo)]
    if not pair.any():
        return None, 0
    d_pred = sub(narrow(pred, axis, 1, n - 1), narrow(pred, axis, 0, n - 1))
    d_gt = g[tuple(idx_hi)] - g[tuple(idx_lo)]
    term = abs_(add_const(masked_select(d_pred, pair), -d_gt[pair]))
    return sum_all(term), int(pair.sum())


def grad_loss(pred: Tensor, gt, mask: ValidMask) -> Tensor:
    """Mean |forward-difference mismatch| over pixel pairs whose both ends are valid.

    Horizontal and vertical pairs are pooled and divided by their combined
    count. With no valid pair at all the loss is a constant 0.
    """
    g = _gt_array(gt, pred)
    if mask.mask.shape != pred.shape:
        raise ShapeError(f"mask {mask.mask.shape} does not match {pred.shape}")
    total, count = None, 0
    for axis in (3, 2):
        s, c = _pair_terms(pred, g, mask.mask, axis)
        if s is not None:
            total = s if total is None else total + s
            count += c
    if total is None:
        return tensor_new((1,), 0.0, dtype=pred.dtype)
    return mul_scalar(total, 1.0 / count)


def loss_terms(pred: Tensor, gt, mask: ValidMask, w: LossWeights) -> dict[str, Tensor]:
    terms = {}
    if w.l1:
        terms["l1"] = l1_loss(pred, gt, mask)
    if w.si:
        terms["si"] = si_loss(pred, gt, mask, w.alpha, w.lam)
    if w.grad:
        terms["grad"] = grad_loss(pred, gt, mask)
    return terms


def total_loss(pred: Tensor, gt, mask: ValidMask, w: LossWeights, terms: dict | None = None) -> Tensor:
    """Weighted sum of the L1, scale-invariant and gradient losses.

    Terms with a zero weight are skipped entirely. Pass a dict as ``terms`` to
    receive the individual components.
    """
    parts = loss_terms(pred, gt, mask, w)
    if terms is not None:
        terms.update(parts)
    weights = {"l1": w.l1, "si": w.si, "grad": w.grad}
    total = None
    for name, t in parts.items():
        t = mul_scalar(t, weights[name])
        total = t if total is None else total + t
    if total is None:
        return tensor_new((1,), 0.0, dtype=pred.dtype)
    return total


# -- metrics -------------------------------------------------------------------

METRICS_HEADER = "delta1,delta2,delta3,absrel,rmse,log10,valid_count"


@dataclass
class MetricsReport:
    delta1: float
    delta2: float
    delta3: float
    absrel: float
    rmse: float
    log10: float
    valid_count: int

    def to_csv_row(self) -> str:
        vals = [f"{getattr(self, f.name):.6f}" for f in fields(self)[:-1]]
        return ",".join(vals + [str(self.valid_count)])

    @classmethod
    def mean(cls, reports: list["MetricsReport"]) -> "MetricsReport":
        """Unweighted average over frames; valid counts are summed."""
        if not reports:
            raise EmptyMaskError("no reports to average")
        names = [f.name for f in fields(cls)[:-1]]
        avg = {k: float(np.mean([getattr(r, k) for r in reports])) for k in names}
        return cls(**avg, valid_count=sum(r.valid_count for r in reports))


def compute_metrics(pred, gt, mask: ValidMask | None = None,
                    min_depth: float = MIN_DEPTH, max_depth: float = MAX_DEPTH) -> MetricsReport:
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    g = gt.data if isinstance(gt, Tensor) else np.asarray(gt)
    if mask is None:
        mask = valid_mask(g, min_depth, max_depth)
    if mask.count == 0:
        raise EmptyMaskError("no valid pixels")
    y = np.clip(p[mask.mask].astype(np.float64), min_depth, max_depth)
    ys = g[mask.mask].astype(np.float64)
    ratio = np.maximum(y / ys, ys / y)
    return MetricsReport(
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        absrel=float(np.mean(np.abs(y - ys) / ys)),
        rmse=float(np.sqrt(np.mean((y - ys) ** 2))),
        log10=float(np.mean(np.abs(np.log10(y) - np.log10(ys)))),
        valid_count=mask.count,
    )


def consistency_score(preds: list) -> tuple[float, list[tuple[tuple[int, int], np.ndarray]]]:
    """Mean pairwise relative difference |a - b| / ((a + b) / 2) over unordered pairs.

    Returns the scalar score and one difference map per pair.
    """
    arrs = [np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in preds]
    if len(arrs) < 2:
        raise ValueError("consistency_score needs at least two predictions")
    if any(a.shape != arrs[0].shape for a in arrs):
        raise ShapeError("all predictions must share a shape")
    maps = []
    for i, j in itertools.combinations(range(len(arrs)), 2):
        a, b = arrs[i], arrs[j]
        denom = 0.5 * (a + b)
        diff = np.divide(np.abs(a - b), denom, out=np.zeros_like(a), where=denom > 0)
        maps.append(((i, j), diff))
    score = float(np.mean([m.mean() for _, m in maps]))
    return score, maps
