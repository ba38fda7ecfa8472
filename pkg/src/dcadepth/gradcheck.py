"""Finite-difference checks for every differentiable op, keyed by name.

Each check builds small random float64 inputs from a seed, reduces the op's
output to a scalar through a fixed random projection and returns the worst
relative error over inputs and parameters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import blocks, losses, nn
from . import tensor as T
from .model import DepthModel, ModelConfig, _walk, build_model, model_forward
from .tensor import Tensor, finite_diff_check, precision

COORDS = 10


def to_float64(obj):
    """Convert every tensor reachable from a params dataclass in place."""
    for _, t in _walk(obj, "p"):
        t.data = t.data.astype(np.float64)
    return obj


def _project(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    r = Tensor(rng.standard_normal(out.shape))
    return lambda y: T.sum_all(T.elementwise_mul(y, r))


def _check_input(fn: Callable[[Tensor], Tensor], x: np.ndarray, rng, coords: int = COORDS, eps: float = 1e-5) -> float:
    with precision(np.float64):
        proj = _project(fn(Tensor(x)), rng)
    return finite_diff_check(lambda t: proj(fn(t)), Tensor(x), eps=eps, coords=coords, rng=rng)


def _rms(a: np.ndarray) -> float:
    r = float(np.sqrt(np.mean(np.square(a))))
    return r if r > 0 else 1.0


def _check_params(fn: Callable[[], Tensor], holders: list[tuple[object, str]], rng,
                  coords: int = COORDS, eps: float = 1e-5, relative_eps: bool = False) -> float:
    """Swap each ``getattr(holder, attr)`` for the probe tensor while checking it.

    With ``relative_eps`` the step is scaled by each tensor's RMS value.
    """
    with precision(np.float64):
        proj = _project(fn(), rng)
    worst = 0.0
    for holder, attr in holders:
        orig = getattr(holder, attr)

        def f(w, holder=holder, attr=attr):
            setattr(holder, attr, w)
            return proj(fn())

        step = eps * _rms(orig.data) if relative_eps else eps
        try:
            worst = max(worst, finite_diff_check(f, orig, eps=step, coords=coords, rng=rng))
        finally:
            setattr(holder, attr, orig)
    return worst


def _randn(rng, *shape) -> np.ndarray:
    return rng.standard_normal(shape)


def _conv_case(stride: int, dilation: int, depthwise: bool, k: int = 3, grouped: bool = False):
    def check(seed: int) -> float:
        rng = np.random.default_rng(seed)
        c = int(rng.integers(2, 4)) * (2 if grouped else 1)
        cout = c if depthwise else int(rng.integers(2, 5)) * (2 if grouped else 1)
        groups = c if depthwise else (2 if grouped else 1)
        p = to_float64(nn.init_conv(rng, c, cout, k, stride=stride, dilation=dilation, groups=groups))
        p.bias.data = rng.standard_normal(p.bias.shape)
        size = int(rng.integers(2 * dilation + 3, 2 * dilation + 7))
        x = _randn(rng, 2, c, size, size + 1)
        fn = lambda t: nn.conv2d(t, p)  # noqa: E731
        e = _check_input(fn, x, rng)
        return max(e, _check_params(lambda: nn.conv2d(Tensor(x), p), [(p, "weight"), (p, "bias")], rng))
    return check


def _gelu(seed: int) -> float:
    rng = np.random.default_rng(seed)
    return _check_input(nn.gelu, _randn(rng, 2, 3, 4, 5) * 2, rng)


def _bn(training: bool):
    def check(seed: int) -> float:
        rng = np.random.default_rng(seed)
        c = 3
        p = to_float64(nn.init_bn(c))
        p.gamma.data = 1 + 0.3 * rng.standard_normal(c)
        p.beta.data = rng.standard_normal(c)
        p.running_mean.data = rng.standard_normal(c)
        p.running_var.data = rng.uniform(0.5, 2, c)
        p.training = training
        x = _randn(rng, 2, c, 3, 4) * 1.5 + 0.5
        e = _check_input(lambda t: nn.batch_norm(t, p), x, rng)
        return max(e, _check_params(lambda: nn.batch_norm(Tensor(x), p), [(p, "gamma"), (p, "beta")], rng))
    return check


def _upsample(seed: int) -> float:
    rng = np.random.default_rng(seed)
    return _check_input(nn.upsample_bilinear_x2, _randn(rng, 2, 2, 3, 4), rng)


def _flip(seed: int) -> float:
    rng = np.random.default_rng(seed)
    return _check_input(nn.horizontal_flip, _randn(rng, 1, 2, 3, 4), rng)


def _block_holders(params, names: list[str]) -> list[tuple[object, str]]:
    out = []
    for name in names:
        *path, attr = name.split(".")
        obj = params
        for part in path:
            obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
        out.append((obj, attr))
    return out


def _dsdc(seed: int) -> float:
    rng = np.random.default_rng(seed)
    p = to_float64(blocks.init_dsdc(rng, 3))
    x = _randn(rng, 2, 3, 8, 9)
    e = _check_input(lambda t: blocks.dsdc_forward(t, p), x, rng)
    holders = _block_holders(p, ["branches.3.conv.weight", "pointwise.conv.weight", "pointwise.bn.gamma"])
    return max(e, _check_params(lambda: blocks.dsdc_forward(Tensor(x), p), holders, rng))


def _attention(with_encoded: bool):
    def check(seed: int) -> float:
        rng = np.random.default_rng(seed)
        c_prev, c_enc, c_out = 3, (4 if with_encoded else None), 4
        p = to_float64(blocks.init_attention_layer(rng, c_prev, c_enc, c_out))
        prev = _randn(rng, 2, c_prev, 8, 8)
        enc = Tensor(_randn(rng, 2, c_enc, 8, 8)) if with_encoded else None
        e = _check_input(lambda t: blocks.attention_layer(t, enc, p), prev, rng)
        if with_encoded:
            e = max(e, _check_input(lambda t: blocks.attention_layer(Tensor(prev), t, p), enc.data, rng))
        names = ["down.conv.weight", "conv2.conv.bias", "dsdc.pointwise.conv.weight"]
        if with_encoded:
            names.append("project.weight")
        holders = _block_holders(p, names)
        return max(e, _check_params(lambda: blocks.attention_layer(Tensor(prev), enc, p), holders, rng))
    return check


def _dca(seed: int) -> float:
    rng = np.random.default_rng(seed)
    p = to_float64(blocks.init_dsdc(rng, 3))
    fe, fpa = _randn(rng, 2, 3, 8, 8), _randn(rng, 2, 3, 8, 8)
    e = _check_input(lambda t: blocks.dilated_cross_attention(t, Tensor(fpa), p), fe, rng)
    e = max(e, _check_input(lambda t: blocks.dilated_cross_attention(Tensor(fe), t, p), fpa, rng))
    holders = _block_holders(p, ["branches.1.conv.weight", "pointwise.conv.weight"])
    return max(e, _check_params(lambda: blocks.dilated_cross_attention(Tensor(fe), Tensor(fpa), p), holders, rng))


def _decoder(dca: bool):
    def check(seed: int) -> float:
        rng = np.random.default_rng(seed)
        p = to_float64(blocks.init_decoder_stage(rng, 4, 3, 3, dca=dca))
        prev, fe, fpa = _randn(rng, 2, 4, 4, 4), _randn(rng, 2, 3, 8, 8), _randn(rng, 2, 3, 8, 8)
        pa = Tensor(fpa) if dca else None
        e = _check_input(lambda t: blocks.decoder_stage(t, Tensor(fe), pa, p), prev, rng)
        e = max(e, _check_input(lambda t: blocks.decoder_stage(Tensor(prev), t, pa, p), fe, rng))
        if dca:
            e = max(e, _check_input(lambda t: blocks.decoder_stage(Tensor(prev), Tensor(fe), t, p), fpa, rng))
        names = ["conv1.conv.weight", "conv2.bn.beta"] + (["dsdc.pointwise.conv.weight"] if dca else [])
        holders = _block_holders(p, names)
        return max(e, _check_params(lambda: blocks.decoder_stage(Tensor(prev), Tensor(fe), pa, p), holders, rng))
    return check


MODEL_PROBES = (
    "encoder.0.down.conv.weight",
    "encoder.3.conv.bn.gamma",
    "refine.1.conv.weight",
    "attention.2.project.weight",
    "attention.0.dsdc.branches.2.conv.weight",
    "bottleneck.conv.weight",
    "decoder.1.dsdc.pointwise.conv.weight",
    "decoder.3.conv2.conv.weight",
    "head.0.conv.weight",
    "head_out.weight",
    "head_out.bias",
)


# Whole-network probes step by a fraction of each tensor's RMS. In inference
# mode the projected output sums thousands of pixels and gradients near 1e-6
# (BN scales deep in the encoder) drown in rounding noise unless the step is
# wide. Batch statistics add curvature in training mode, where the step must be
# narrow to keep truncation error down; those gradients are also far larger.
MODEL_EPS = {False: 1e-3, True: 3e-5}
MODEL_COORDS = 3


def calibrate_running_stats(m: DepthModel, rng: np.random.Generator, batch: int = 16) -> DepthModel:
    """Set running stats from one training-mode pass over random images, jitter them, switch to inference mode.

    Arbitrary running stats let activations shrink or grow layer after layer
    until the output no longer measurably depends on the early layers. The
    calibration batch is large so the 1x1 deepest levels get usable variances.
    """
    c = m.config
    x = rng.standard_normal((batch, 3, c.input_h, c.input_w))
    bns = list(m.batch_norms())
    momenta = [bn.momentum for bn in bns]
    for bn in bns:
        bn.momentum = 1.0
    with T.no_grad():
        model_forward(Tensor(x), m.train())
    for bn, momentum in zip(bns, momenta):
        bn.momentum = momentum
        shape = bn.running_mean.shape
        bn.running_mean.data = bn.running_mean.data + 0.1 * np.sqrt(bn.running_var.data) * rng.standard_normal(shape)
        bn.running_var.data = bn.running_var.data * rng.uniform(0.8, 1.25, shape)
    return m.eval()


def _full_model(dca: bool, training: bool, size: int = 32, batch: int = 2):
    def check(seed: int) -> float:
        rng = np.random.default_rng(seed)
        m = build_model(ModelConfig(input_h=size, input_w=size, dca_enabled=dca, seed=seed))
        m = m.astype(np.float64)
        x = _randn(rng, batch, 3, size, size)
        if training:
            m.train()
        else:
            calibrate_running_stats(m, rng)
        eps = MODEL_EPS[training]
        e = _check_input(lambda t: model_forward(t, m), x, rng, 2 * MODEL_COORDS, eps)
        names = [n for n in MODEL_PROBES if dca or not (n.startswith("attention") or ".dsdc." in n)]
        holders = _block_holders(m, names)
        fn = lambda: model_forward(Tensor(x), m)  # noqa: E731
        return max(e, _check_params(fn, holders, rng, MODEL_COORDS, eps, relative_eps=True))
    return check


# Loss inputs live on a 2**-20 grid and the step is a power of two, so the
# piecewise-linear terms are evaluated exactly. Interior pixels of the gradient
# loss often have an exactly zero derivative, and rounding noise in the central
# difference would otherwise dominate the relative error.
LOSS_GRID = 2.0 ** -20
LOSS_EPS = 2.0 ** -17


def _loss_inputs(rng):
    gt = np.round(rng.uniform(0.5, 8.0, (2, 1, 6, 7)) / LOSS_GRID) * LOSS_GRID
    gt[0, 0, 0, :3] = 0.0  # a few invalid pixels
    pred = np.round(gt * rng.uniform(0.6, 1.6, gt.shape) / LOSS_GRID) * LOSS_GRID
    pred[0, 0, 0, :3] = 1.0
    return pred, gt, losses.valid_mask(gt)


def _loss(fn):
    def check(seed: int) -> float:
        rng = np.random.default_rng(seed)
        pred, gt, mask = _loss_inputs(rng)
        return finite_diff_check(lambda t: fn(t, gt, mask), Tensor(pred), eps=LOSS_EPS, coords=2 * COORDS, rng=rng)
    return check


def _total(seed: int) -> float:
    return _loss(lambda p, g, m: losses.total_loss(p, g, m, losses.LOSS_PROFILES["nyu"]))(seed)


def _unary(fn, low: float = -2.0, high: float = 2.0):
    def check(seed: int) -> float:
        rng = np.random.default_rng(seed)
        return _check_input(fn, rng.uniform(low, high, (2, 3, 4)), rng)
    return check


OP_CHECKS: dict[str, Callable[[int], float]] = {
    "log": _unary(T.log, 0.2, 3.0),
    "exp": _unary(T.exp),
    "square": _unary(T.square),
    "sigmoid": _unary(T.sigmoid),
    "safe_sqrt": _unary(T.safe_sqrt, 0.2, 3.0),
    "conv2d": _conv_case(1, 1, False),
    "conv2d_strided": _conv_case(2, 1, False),
    "conv2d_dilated": _conv_case(1, 3, False),
    "conv2d_strided_dilated": _conv_case(2, 2, False),
    "conv2d_grouped": _conv_case(1, 1, False, grouped=True),
    "conv2d_depthwise": _conv_case(1, 1, True),
    "conv2d_depthwise_dilated": _conv_case(1, 5, True),
    "conv2d_depthwise_strided": _conv_case(2, 1, True),
    "conv2d_pointwise": _conv_case(1, 1, False, k=1),
    "conv2d_4x4_stride2": _conv_case(2, 1, False, k=4),
    "gelu": _gelu,
    "batch_norm_train": _bn(True),
    "batch_norm_eval": _bn(False),
    "upsample_bilinear_x2": _upsample,
    "horizontal_flip": _flip,
    "dsdc_forward": _dsdc,
    "attention_layer_first": _attention(False),
    "attention_layer": _attention(True),
    "dilated_cross_attention": _dca,
    "decoder_stage": _decoder(True),
    "decoder_stage_no_dca": _decoder(False),
    "l1_loss": _loss(losses.l1_loss),
    "si_loss": _loss(losses.si_loss),
    "grad_loss": _loss(losses.grad_loss),
    "total_loss": _total,
    "model_eval": _full_model(True, False),
    "model_train": _full_model(True, True, batch=4),
    "model_no_dca": _full_model(False, False),
}


@dataclass
class CheckResult:
    op: str
    seeds: int
    max_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


TOLERANCE = 1e-4


def run_checks(ops: list[str] | None = None, seeds: int = 20, base_seed: int = 0) -> list[CheckResult]:
    results = []
    for op in ops or list(OP_CHECKS):
        if op not in OP_CHECKS:
            raise KeyError(f"unknown op {op!r}; known: {', '.join(OP_CHECKS)}")
        t0 = time.perf_counter()
        worst = max(OP_CHECKS[op](base_seed + s) for s in range(seeds))
        results.append(CheckResult(op, seeds, worst, time.perf_counter() - t0))
    return results
