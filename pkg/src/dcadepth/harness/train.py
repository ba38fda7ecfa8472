"""Training, evaluation and ablation loops."""

from __future__ import annotations

import hashlib
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..config import ConfigError, as_bool, load_kv
from ..losses import (
    LOSS_PROFILES,
    LossWeights,
    MetricsReport,
    compute_metrics,
    consistency_score,
    total_loss,
    valid_mask,
)
from ..model import DepthModel, ModelConfig, build_model, model_forward, param_count, predict_flip_averaged
from ..synth.augment import AugmentConfig, augment
from ..synth.dataset import load_frame, read_manifest
from ..synth.lighting import ILLUMINATION_IDS
from ..synth.render import Frame
from ..tensor import Tensor, backward, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import OptimizerState, adamw_step, lr_at_epoch

log = logging.getLogger("dcadepth")


class NonFiniteLossError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


class EmptyDatasetError(RuntimeError):
    pass


def kv_line(**items) -> str:
    parts = []
    for k, v in items.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={v}")
    return " ".join(parts)


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 6
    base_lr: float = 1e-4
    lr_decay: float = 0.97
    weight_decay: float = 0.01
    loss_profile: str = "vari"
    seed: int = 0
    manifest: str = ""
    model_config: str = ""
    split: str = "train"
    val_split: str = "test"
    max_steps: int = 0  # 0 means no cap
    augment: bool = True
    crop_h: int = 64
    crop_w: int = 96

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not 0 < self.lr_decay <= 1:
            raise ConfigError(f"invalid training config: epochs={self.epochs} "
                              f"batch_size={self.batch_size} lr_decay={self.lr_decay}")
        if self.loss_profile not in LOSS_PROFILES:
            raise ConfigError(f"unknown loss profile {self.loss_profile!r}")

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "TrainConfig":
        conv = {
            "epochs": int, "batch_size": int, "base_lr": float, "lr_decay": float,
            "weight_decay": float, "loss_profile": str, "seed": int, "manifest": str,
            "model_config": str, "split": str, "val_split": str, "max_steps": int,
            "augment": as_bool, "crop_h": int, "crop_w": int,
        }
        return cls(**{k: f(kv[k]) for k, f in conv.items() if k in kv})

    @property
    def loss_weights(self) -> LossWeights:
        return LOSS_PROFILES[self.loss_profile]


def load_configs(path: str | Path | None) -> tuple[TrainConfig, ModelConfig]:
    """Training and model config from one key = value file.

    Model keys may live in the same file or in the file named by ``model_config``
    (resolved relative to the config file). Keys in the main file win.
    """
    if path is None:
        return TrainConfig(), ModelConfig()
    path = Path(path)
    kv = load_kv(path)
    model_kv = {}
    if kv.get("model_config"):
        mpath = Path(kv["model_config"])
        if not mpath.is_absolute():
            mpath = path.parent / mpath
        model_kv = load_kv(mpath)
    model_kv.update(kv)
    tcfg = TrainConfig.from_kv(kv)
    if tcfg.manifest and not Path(tcfg.manifest).is_absolute():
        tcfg.manifest = str(path.parent / tcfg.manifest)
    return tcfg, ModelConfig.from_kv(model_kv)


def rgb_to_input(rgb: np.ndarray) -> np.ndarray:
    """H x W x 3 bytes (or a batch of them) to NCHW floats in [-1, 1]."""
    x = np.asarray(rgb, dtype=np.float32) / 127.5 - 1.0
    return np.moveaxis(x, -1, -3)


def frame_hash(frame: Frame) -> str:
    h = hashlib.sha1()
    h.update(frame.rgb.tobytes())
    h.update(frame.depth.tobytes())
    return h.hexdigest()[:12]


def load_split(manifest: str | Path, split: str) -> list[Frame]:
    manifest = Path(manifest)
    if not manifest.exists():
        raise EmptyDatasetError(f"manifest {manifest} does not exist")
    records = [r for r in read_manifest(manifest) if r.split == split]
    if not records:
        raise EmptyDatasetError(f"no frames with split {split!r} in {manifest}")
    return [load_frame(r, manifest.parent) for r in records]


@dataclass
class TrainResult:
    checkpoint: Path
    model: DepthModel
    history: list[dict] = field(default_factory=list)
    batch_hashes: list[str] = field(default_factory=list)


def _sample_seed(seed: int, epoch: int, step: int, slot: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, step, slot]).generate_state(1)[0])


def train(cfg: TrainConfig, model_cfg: ModelConfig, out_dir: str | Path,
          frames: list[Frame] | None = None, val_frames: list[Frame] | None = None) -> TrainResult:
    """Run the training loop; checkpoints land in ``out_dir`` after every epoch.

    ``frames`` / ``val_frames`` bypass the manifest (used by tests and the
    ablation runner to share one in-memory dataset).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if frames is None:
        frames = load_split(cfg.manifest, cfg.split)
        if val_frames is None:
            try:
                val_frames = load_split(cfg.manifest, cfg.val_split)
            except EmptyDatasetError:
                val_frames = []
    if not frames:
        raise EmptyDatasetError("training set is empty")

    model = build_model(model_cfg).train()
    params = model.named_parameters()
    opt = OptimizerState(lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    weights = cfg.loss_weights
    aug_cfg = AugmentConfig(crop_h=cfg.crop_h, crop_w=cfg.crop_w)
    log.info(kv_line(event="start", frames=len(frames), lambda1=weights.l1, lambda2=weights.si,
                     lambda3=weights.grad, seed=cfg.seed, dca_enabled=str(model_cfg.dca_enabled).lower()))

    result = TrainResult(out / "latest.dcac", model)
    step = 0
    done = False
    for epoch in range(cfg.epochs):
        opt.lr = lr_at_epoch(epoch, cfg.base_lr, cfg.lr_decay)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(frames))
        sums: dict[str, float] = defaultdict(float)
        nb = 0
        for b0 in range(0, len(order), cfg.batch_size):
            batch = [frames[i] for i in order[b0:b0 + cfg.batch_size]]
            if cfg.augment:
                batch = [augment(f, _sample_seed(cfg.seed, epoch, step, k), aug_cfg) for k, f in enumerate(batch)]
            h = hashlib.sha1("".join(frame_hash(f) for f in batch).encode()).hexdigest()[:12]
            result.batch_hashes.append(h)
            x = Tensor(rgb_to_input(np.stack([f.rgb for f in batch])))
            gt = np.stack([f.depth[None] for f in batch])
            pred = model_forward(x, model)
            terms: dict = {}
            loss = total_loss(pred, gt, valid_mask(gt, max_depth=model_cfg.max_depth), weights, terms)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLossError(step, value)
            model.zero_grad()
            backward(loss)
            adamw_step(params, opt)
            step += 1
            nb += 1
            sums["loss"] += value
            for k, t in terms.items():
                sums[k] += t.item()
            if cfg.max_steps and step >= cfg.max_steps:
                done = True
                break
        record = {"event": "epoch", "epoch": epoch + 1, "step": step, "lr": opt.lr}
        record.update({k: v / nb for k, v in sums.items()})
        if val_frames:
            rep = evaluate_frames(model, val_frames).metrics
            record.update({f"val_{k}": v for k, v in vars(rep).items()})
            model.train()
        log.info(kv_line(**record))
        result.history.append(record)
        save_checkpoint(out / f"epoch_{epoch + 1:03d}.dcac", model, opt, epoch + 1)
        save_checkpoint(result.checkpoint, model, opt, epoch + 1)
        if done:
            break
    return result


@dataclass
class EvalResult:
    metrics: MetricsReport
    per_frame: list[MetricsReport]
    consistency: float | None
    per_group: dict[tuple[int, int], float]
    skipped_groups: int
    predictions: list[np.ndarray]
    frames: list[Frame]
    pair_maps: dict[tuple[int, int], list] = field(default_factory=dict)


def evaluate_frames(model: DepthModel, frames: list[Frame], inject_gt: bool = False,
                    keep_maps: bool = False, flip_average: bool = True) -> EvalResult:
    """Inference per frame, per-frame metrics, per-viewpoint consistency.

    Predictions are flip-averaged unless ``flip_average`` is off, in which case
    the plain inference-mode forward pass is scored.
    """
    if not frames:
        raise EmptyDatasetError("nothing to evaluate")
    model.eval()
    max_depth = model.config.max_depth
    preds, reports = [], []
    groups: dict[tuple[int, int], dict[str, np.ndarray]] = defaultdict(dict)
    with no_grad():
        for f in frames:
            if inject_gt:
                p = f.depth.astype(np.float32)
            else:
                x = Tensor(rgb_to_input(f.rgb)[None])
                p = (predict_flip_averaged(x, model) if flip_average else model_forward(x, model)).data[0, 0]
            preds.append(p)
            reports.append(compute_metrics(p, f.depth, valid_mask(f.depth, max_depth=max_depth), max_depth=max_depth))
            groups[(f.scene_id, f.viewpoint_id)][f.illumination_id] = p
    per_group, maps, skipped = {}, {}, 0
    for key, by_illum in sorted(groups.items()):
        if set(by_illum) != set(ILLUMINATION_IDS):
            skipped += 1
            continue
        score, pair_maps = consistency_score([by_illum[i] for i in ILLUMINATION_IDS])
        per_group[key] = score
        if keep_maps:
            maps[key] = pair_maps
    if skipped:
        log.warning(kv_line(event="consistency_skipped", groups=skipped))
    consistency = float(np.mean(list(per_group.values()))) if per_group else None
    return EvalResult(MetricsReport.mean(reports), reports, consistency, per_group, skipped, preds, frames, maps)


def evaluate(checkpoint: str | Path, manifest: str | Path, split: str = "test", inject_gt: bool = False,
             model_cfg: ModelConfig | None = None, keep_maps: bool = False, flip_average: bool = True) -> EvalResult:
    ck = load_checkpoint(checkpoint, model_cfg)
    return evaluate_frames(ck.model, load_split(manifest, split), inject_gt, keep_maps, flip_average)


@dataclass
class AblationRow:
    arm: str
    metrics: MetricsReport
    consistency: float | None
    params: int
    batch_hashes: list[str]


ABLATION_HEADER = "arm,delta1,delta2,delta3,absrel,rmse,log10,valid_count,consistency,params"

# Full-scale figures quoted for orientation only; desk-scale runs are not expected to match.
REFERENCE_DELTA1 = {"base": 0.777, "base+dca": 0.797}


def run_ablation(cfg: TrainConfig, model_cfg: ModelConfig, out_dir: str | Path,
                 frames: list[Frame] | None = None, eval_frames: list[Frame] | None = None) -> list[AblationRow]:
    """Train the base and the DCA network on identical data and compare them."""
    out = Path(out_dir)
    if frames is None:
        frames = load_split(cfg.manifest, cfg.split)
    if eval_frames is None:
        try:
            eval_frames = load_split(cfg.manifest, cfg.val_split) if cfg.manifest else frames
        except EmptyDatasetError:
            eval_frames = frames
    rows = []
    for arm, enabled in (("base", False), ("base+dca", True)):
        mcfg = replace(model_cfg, dca_enabled=enabled)
        res = train(cfg, mcfg, out / arm, frames=frames, val_frames=[])
        ev = evaluate_frames(res.model, eval_frames)
        rows.append(AblationRow(arm, ev.metrics, ev.consistency, param_count(res.model)["total"], res.batch_hashes))
        log.info(kv_line(event="ablation_arm", arm=arm, delta1=ev.metrics.delta1, absrel=ev.metrics.absrel,
                         consistency=ev.consistency if ev.consistency is not None else "nan"))
    return rows


def ablation_table(rows: list[AblationRow]) -> str:
    lines = [ABLATION_HEADER]
    for r in rows:
        cons = f"{r.consistency:.6f}" if r.consistency is not None else "nan"
        lines.append(f"{r.arm},{r.metrics.to_csv_row()},{cons},{r.params}")
    return "\n".join(lines) + "\n"


def reference_footnote() -> str:
    return "# reference full-scale delta1 (not reproduced at desk scale): " + " ".join(
        f"{k}={v}" for k, v in REFERENCE_DELTA1.items())
