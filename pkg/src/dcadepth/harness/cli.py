"""Command-line entry point: ``dcadepth <subcommand> [--config PATH] [--seed N] ...``.

Tables go to stdout as comma-separated text, logs go to stderr as key=value
lines, and figures are written as PNG files next to the other outputs. Any
failure prints ``error=<ClassName> message=<text>`` and exits with status 1.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..losses import METRICS_HEADER
from ..model import ModelConfig, predict_flip_averaged
from ..synth.dataset import GeneratorConfig, generate_dataset
from ..synth.imageio import load_ppm, save_pfm, save_ppm
from ..synth.lighting import ILLUMINATION_IDS
from ..tensor import Tensor
from .checkpoint import load_checkpoint
from .train import (
    TrainConfig,
    ablation_table,
    evaluate,
    kv_line,
    load_configs,
    reference_footnote,
    rgb_to_input,
    run_ablation,
    train,
)

log = logging.getLogger("dcadepth")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")


def _train_configs(args) -> tuple[TrainConfig, ModelConfig]:
    tcfg, mcfg = load_configs(args.config)
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
        mcfg = replace(mcfg, seed=args.seed)
    if getattr(args, "manifest", None):
        tcfg = replace(tcfg, manifest=str(args.manifest))
    if getattr(args, "epochs", None):
        tcfg = replace(tcfg, epochs=args.epochs)
    if getattr(args, "max_steps", None):
        tcfg = replace(tcfg, max_steps=args.max_steps)
    return tcfg, mcfg


def cmd_generate_data(args) -> None:
    cfg = GeneratorConfig.load(args.config) if args.config else GeneratorConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    manifest = generate_dataset(cfg, args.out)
    print(kv_line(manifest=manifest, scenes=cfg.scenes, viewpoints=cfg.viewpoints,
                  frames=cfg.scenes * cfg.viewpoints * len(ILLUMINATION_IDS)))


def cmd_train(args) -> None:
    from .report import plot_loss_curve

    tcfg, mcfg = _train_configs(args)
    res = train(tcfg, mcfg, args.out)
    fig = plot_loss_curve(res.history, Path(args.out) / "loss_curve.png")
    print(kv_line(checkpoint=res.checkpoint, epochs=len(res.history), figure=fig))


def _model_config(args) -> ModelConfig | None:
    if args.config is None:
        return None
    return load_configs(args.config)[1]


def cmd_eval(args) -> None:
    from .report import plot_depth_comparison

    res = evaluate(args.checkpoint, args.manifest, args.split, inject_gt=args.inject_gt, model_cfg=_model_config(args),
                   flip_average=not args.no_flip)
    print("frame," + METRICS_HEADER)
    for f, r in zip(res.frames, res.per_frame):
        print(f"s{f.scene_id}v{f.viewpoint_id}{f.illumination_id}," + r.to_csv_row())
    print("mean," + res.metrics.to_csv_row())
    cons = "nan" if res.consistency is None else f"{res.consistency:.6f}"
    print(kv_line(consistency=cons, groups=len(res.per_group), skipped_groups=res.skipped_groups))
    if args.figures:
        f, p = res.frames[0], res.predictions[0]
        out = plot_depth_comparison(f.rgb, f.depth, p, Path(args.figures) / "depth_comparison.png")
        print(kv_line(figure=out))


def cmd_consistency(args) -> None:
    from .report import plot_consistency_matrix

    res = evaluate(args.checkpoint, args.manifest, args.split, inject_gt=args.inject_gt,
                   model_cfg=_model_config(args), keep_maps=bool(args.figures), flip_average=not args.no_flip)
    print("scene_id,viewpoint_id,consistency")
    for (s, v), score in res.per_group.items():
        print(f"{s},{v},{score:.6f}")
    cons = "nan" if res.consistency is None else f"{res.consistency:.6f}"
    print(kv_line(consistency=cons, groups=len(res.per_group), skipped_groups=res.skipped_groups))
    if args.figures:
        for (s, v), maps in res.pair_maps.items():
            out = plot_consistency_matrix(maps, Path(args.figures) / f"consistency_s{s}_v{v}.png")
            print(kv_line(figure=out))


def cmd_ablation(args) -> None:
    from .report import plot_ablation

    tcfg, mcfg = _train_configs(args)
    rows = run_ablation(tcfg, mcfg, args.out)
    sys.stdout.write(ablation_table(rows))
    print(reference_footnote())
    same = rows[0].batch_hashes == rows[1].batch_hashes
    print(kv_line(identical_batches=str(same).lower(), figure=plot_ablation(rows, Path(args.out) / "ablation.png")))


def cmd_gradcheck(args) -> int:
    from ..gradcheck import TOLERANCE, run_checks

    ops = args.ops.split(",") if args.ops else None
    results = run_checks(ops, seeds=args.seeds, base_seed=args.seed or 0)
    for r in results:
        print(kv_line(op=r.op, seeds=r.seeds, max_rel_error=f"{r.max_error:.3e}", tolerance=TOLERANCE,
                      passed=str(r.passed).lower(), seconds=round(r.seconds, 2)))
    failed = [r.op for r in results if not r.passed]
    if failed:
        print(f"error=GradientCheckError message=failed ops: {','.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_predict(args) -> None:
    from .report import colorize_depth

    ck = load_checkpoint(args.checkpoint, _model_config(args))
    model = ck.model.eval()
    rgb = load_ppm(args.input)
    depth = predict_flip_averaged(Tensor(rgb_to_input(rgb)[None]), model).data[0, 0].astype(np.float32)
    save_pfm(args.output, depth)
    vis = args.vis or Path(args.output).with_suffix(".ppm")
    save_ppm(vis, colorize_depth(depth, model.config.max_depth))
    print(kv_line(depth=args.output, visualization=vis, min=float(depth.min()), max=float(depth.max())))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcadepth", description="Depth estimation with dilated cross attention: data, training, evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render the multi-illumination dataset")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train a model, checkpointing every epoch")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "flip-averaged metrics on a split"),
                                 ("consistency", cmd_consistency, "per-viewpoint illumination consistency")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        p.add_argument("--checkpoint", type=Path, required=True)
        p.add_argument("--manifest", type=Path, required=True)
        p.add_argument("--split", default="test")
        p.add_argument("--inject-gt", action="store_true", help="score ground truth as the prediction")
        p.add_argument("--no-flip", action="store_true", help="score the plain forward pass instead of the flip average")
        p.add_argument("--figures", type=Path, help="directory for PNG figures")
        p.set_defaults(func=func)

    p = sub.add_parser("ablation", help="train base and base+dca on identical data")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    _add_common(p)
    p.add_argument("--ops", help="comma-separated subset of op names")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("predict", help="depth for one PPM image")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True, help="PFM depth output")
    p.add_argument("--vis", type=Path, help="colormapped PPM (default: output path with .ppm)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="level=%(levelname)s %(message)s", stream=sys.stderr)
    try:
        status = args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
        message = str(exc).replace("\n", " ")
        print(f"error={type(exc).__name__} message={message}", file=sys.stderr)
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
