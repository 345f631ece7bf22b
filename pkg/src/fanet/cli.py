"""Command-line entry point.

Subcommands: gen-data, train, eval, ablate, gradcheck, enhance,
dump-features. Exit codes are a stable contract: 0 success, 1 validation
error, 2 runtime/numerical error.

Heavy modules are imported lazily inside the command handlers so the
FANET_THREADS cap can be applied to the BLAS thread pools before numpy
loads (default 1, which keeps artifacts bit-deterministic).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from .errors import (
    ConfigError,
    DimensionError,
    FanetError,
    NumericalError,
    ParseError,
    ValidationError,
)

GRADCHECK_TOLERANCE = 1e-4


def _cap_threads() -> None:
    n = os.environ.get("FANET_THREADS", "1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, n)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems follow the exit-code contract
        raise ValidationError(message)


# ---------------------------------------------------------------------------
# config-file plumbing


def _section_dict(cls, values: dict, section: str) -> dict:
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ValidationError(f"unknown key {key!r} in config section {section!r}")
    return dict(values)


def _load_config(path, command: str, known_keys: set[str]) -> dict:
    """Read a JSON config; enforce known keys unless it belongs to another command."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError(f"config {path} must hold a JSON object")
    file_command = raw.get("command")
    if file_command is not None and file_command != command:
        # a config written by another command: only reuse the model sections
        return {k: raw[k] for k in ("model", "head") if k in raw}
    for key in raw:
        if key != "command" and key not in known_keys:
            raise ValidationError(f"unknown key {key!r} in config {path}")
    return raw


def _write_resolved(out_dir: Path, name: str, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _pick(flag_value, file_value, default):
    if flag_value is not None:
        return flag_value
    if file_value is not None:
        return file_value
    return default


def _build_model_head(cfg: dict, toggles: dict):
    from .backbone import FANetConfig
    from .head import HeadConfig

    model_values = _section_dict(FANetConfig, cfg.get("model", {}), "model")
    for key, value in toggles.items():
        if value is not None:
            model_values[key] = value
    model_cfg = FANetConfig(**model_values)
    head_values = _section_dict(HeadConfig, cfg.get("head", {}), "head")
    head_values.setdefault("num_classes", model_cfg.num_classes)
    return model_cfg, HeadConfig(**head_values)


def _model_config_for_checkpoint(checkpoint: str, explicit_config: str | None, command: str):
    """Locate the model/head sections for an existing checkpoint."""
    if explicit_config is not None:
        return _load_config(explicit_config, command, {"model", "head"})
    sibling = Path(checkpoint).parent / "resolved_train.json"
    if not sibling.exists():
        raise ValidationError(
            f"no --config given and {sibling} not found next to the checkpoint"
        )
    return _load_config(sibling, command, {"model", "head"})


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen_data(args) -> int:
    from .synth import SceneSpec, generate_split

    known = {"scene", "counts", "out"}
    cfg = _load_config(args.config, "gen-data", known) if args.config else {}
    counts_cfg = cfg.get("counts", {})
    scene_values = _section_dict(SceneSpec, cfg.get("scene", {}), "scene")
    if args.seed is not None:
        scene_values["seed"] = args.seed
    if args.size is not None:
        scene_values["size"] = args.size
    spec = SceneSpec(**scene_values)
    out = _pick(args.out, cfg.get("out"), None)
    if out is None:
        raise ValidationError("gen-data requires --out")
    n_train = _pick(args.train, counts_cfg.get("train"), 200)
    n_val = _pick(args.val, counts_cfg.get("val"), 40)
    n_test = _pick(args.test, counts_cfg.get("test"), 60)
    manifest = generate_split(spec, out, n_train, n_val, n_test)
    _write_resolved(
        Path(out),
        "resolved_gen_data.json",
        {
            "command": "gen-data",
            "out": str(out),
            "counts": {"train": n_train, "val": n_val, "test": n_test},
            "scene": asdict(spec),
        },
    )
    for split, entry in manifest["splits"].items():
        print(f"{split}: {entry['count']} samples")
    return 0


def _cmd_train(args) -> int:
    from dataclasses import replace

    from .model import SegModel
    from .synth import load_split
    from .train import TrainConfig, train

    known = {"model", "head", "train", "data", "out"}
    cfg = _load_config(args.config, "train", known) if args.config else {}
    data = _pick(args.data, cfg.get("data"), None)
    out = _pick(args.out, cfg.get("out"), None)
    if data is None or out is None:
        raise ValidationError("train requires --data and --out (flags or config)")
    toggles = {
        "scm_enabled": False if args.no_scm else None,
        "frm_high_freq": False if args.no_frm_high else None,
        "frm_low_freq": False if args.no_frm_low else None,
    }
    model_cfg, head_cfg = _build_model_head(cfg, toggles)
    train_values = _section_dict(TrainConfig, cfg.get("train", {}), "train")
    if args.seed is not None:
        train_values["seed"] = args.seed
    train_cfg = TrainConfig(**train_values)

    images, masks = load_split(data, "train")
    model = SegModel(model_cfg, head_cfg, seed=train_cfg.seed)
    out_dir = Path(out)
    _write_resolved(
        out_dir,
        "resolved_train.json",
        {
            "command": "train",
            "data": str(data),
            "out": str(out),
            "model": asdict(model_cfg),
            "head": asdict(head_cfg),
            "train": asdict(train_cfg),
        },
    )
    losses = train(model, images, masks, train_cfg, out_dir)
    print(
        f"trained {train_cfg.max_iters} iterations; "
        f"first-100 mean loss {sum(losses[:100]) / min(100, len(losses)):.4f}, "
        f"last-100 mean loss {sum(losses[-100:]) / min(100, len(losses)):.4f}"
    )
    print(f"checkpoint: {out_dir / 'model.fant'}")
    return 0


def _print_report(report) -> None:
    print(f"{'class':>8}  {'iou':>10}")
    for k, iou in enumerate(report.per_class_iou):
        shown = "absent" if iou is None else f"{iou:.6f}"
        print(f"{k:>8}  {shown:>10}")
    print(f"{'mIoU':>8}  {report.miou:>10.6f}")
    print(f"{'pix acc':>8}  {report.pixel_acc:>10.6f}")
    print(f"{'pixels':>8}  {int(report.confusion.sum()):>10d}")


def _cmd_eval(args) -> int:
    from .model import SegModel
    from .netpbm import pgm_write
    from .synth import load_split
    from .train import evaluate, predict_masks

    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise ValidationError(f"checkpoint not found: {checkpoint}")
    cfg = _model_config_for_checkpoint(args.checkpoint, args.config, "eval")
    model_cfg, head_cfg = _build_model_head(cfg, {})
    model = SegModel(model_cfg, head_cfg, seed=0)
    model.load(checkpoint)
    images, masks = load_split(args.data, args.split)
    report = evaluate(model, images, masks)
    _print_report(report)
    out_dir = Path(args.out) if args.out else checkpoint.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    report_payload = dict(report.to_dict(), split=args.split, checkpoint=str(checkpoint))
    (out_dir / f"metrics_{args.split}.json").write_text(
        json.dumps(report_payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    if args.dump_masks:
        preds = predict_masks(model, images)
        for i, pred in enumerate(preds):
            pgm_write(out_dir / f"pred_{args.split}_{i:04d}.pgm", pred.astype("uint8"))
    _write_resolved(
        out_dir,
        "resolved_eval.json",
        {
            "command": "eval",
            "checkpoint": str(checkpoint),
            "data": str(args.data),
            "split": args.split,
            "out": str(out_dir),
            "dump_masks": bool(args.dump_masks),
            "model": asdict(model_cfg),
            "head": asdict(head_cfg),
        },
    )
    return 0


def _cmd_ablate(args) -> int:
    from .synth import load_split
    from .train import TrainConfig, run_ablation

    known = {"model", "head", "train", "data", "out", "seeds"}
    cfg = _load_config(args.config, "ablate", known) if args.config else {}
    data = _pick(args.data, cfg.get("data"), None)
    out = _pick(args.out, cfg.get("out"), None)
    if data is None or out is None:
        raise ValidationError("ablate requires --data and --out (flags or config)")
    if args.seeds is not None:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    else:
        seeds = [int(s) for s in cfg.get("seeds", [0, 1, 2])]
    if not seeds:
        raise ValidationError("ablate requires at least one seed")
    model_cfg, head_cfg = _build_model_head(cfg, {})
    train_values = _section_dict(TrainConfig, cfg.get("train", {}), "train")
    train_cfg = TrainConfig(**train_values)
    train_data = load_split(data, "train")
    val_data = load_split(data, "val")
    out_dir = Path(out)
    _write_resolved(
        out_dir,
        "resolved_ablate.json",
        {
            "command": "ablate",
            "data": str(data),
            "out": str(out),
            "seeds": seeds,
            "model": asdict(model_cfg),
            "head": asdict(head_cfg),
            "train": asdict(train_cfg),
        },
    )
    results = run_ablation(
        model_cfg, head_cfg, train_cfg, seeds, train_data, val_data, out_dir
    )
    print(f"{'config':>10}  {'miou':>16}  {'pixacc':>16}")
    for row in results:
        print(
            f"{row['config']:>10}  {row['miou_mean']:.4f} +- {row['miou_std']:.4f}"
            f"  {row['pixacc_mean']:.4f} +- {row['pixacc_std']:.4f}"
        )
    print(f"table: {out_dir / 'ablation.csv'}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .verify import run_scope

    results = run_scope(args.scope)
    worst = 0.0
    for name, err in results:
        print(f"{name:>24}  max relative error {err:.3e}")
        worst = max(worst, err)
    if worst >= GRADCHECK_TOLERANCE:
        raise NumericalError(
            f"gradient check failed: worst relative error {worst:.3e} >= {GRADCHECK_TOLERANCE}"
        )
    print(f"all gradients within {GRADCHECK_TOLERANCE}")
    return 0


def _read_image_any(path):
    import numpy as np

    from .netpbm import pgm_read, ppm_read

    magic = Path(path).read_bytes()[:2]
    if magic == b"P6":
        return ppm_read(path).astype(np.float64) / 255.0, "ppm"
    if magic == b"P5":
        return pgm_read(path).astype(np.float64) / 255.0, "pgm"
    raise ParseError(f"unsupported image magic {magic!r}; expected P5 or P6", offset=0)


def _cmd_enhance(args) -> int:
    import numpy as np

    from .enhance import EnhanceParams, contrast_enhance, contrast_map, enhance_combine, sharpen
    from .netpbm import pgm_write, ppm_write

    params = EnhanceParams(c=args.c, alpha=args.alpha, beta=args.beta, gamma=args.gamma)
    img, kind = _read_image_any(args.input)
    channels = [img] if img.ndim == 2 else [img[:, :, i] for i in range(3)]

    def per_channel(fn):
        outs = [fn(ch) for ch in channels]
        return outs[0] if img.ndim == 2 else np.stack(outs, axis=2)

    sharpened = per_channel(lambda ch: np.clip(sharpen(ch, params.c), 0.0, 1.0))
    # the map is signed; shift so the neutral response lands on mid gray
    cmap = per_channel(
        lambda ch: np.clip(contrast_map(ch, params.alpha, params.beta, params.gamma) + 0.5, 0.0, 1.0)
    )
    enhanced = per_channel(lambda ch: np.clip(contrast_enhance(ch, params), 0.0, 1.0))
    combined = per_channel(lambda ch: enhance_combine(ch, params))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = ppm_write if kind == "ppm" else pgm_write
    for name, data in (
        ("sharpened", sharpened),
        ("contrast_map", cmap),
        ("contrast_enhanced", enhanced),
        ("combined", combined),
    ):
        writer(out_dir / f"{name}.{kind}", data)
    _write_resolved(
        out_dir,
        "resolved_enhance.json",
        {
            "command": "enhance",
            "in": str(args.input),
            "out": str(out_dir),
            "params": {"c": params.c, "alpha": params.alpha, "beta": params.beta, "gamma": params.gamma},
            "display": "outputs clamped to [0,1]; contrast map shifted by +0.5 so zero is mid gray",
        },
    )
    print(f"wrote 4 panels to {out_dir}")
    return 0


def _cmd_dump_features(args) -> int:
    import numpy as np

    from .model import SegModel
    from .netpbm import pgm_write
    from .tensor import Tensor

    if not 1 <= args.stage <= 4:
        raise ValidationError(f"--stage must be in 1..4, got {args.stage}")
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise ValidationError(f"checkpoint not found: {checkpoint}")
    cfg = _model_config_for_checkpoint(args.checkpoint, args.config, "dump-features")
    model_cfg, head_cfg = _build_model_head(cfg, {})
    model = SegModel(model_cfg, head_cfg, seed=0)
    model.load(checkpoint)
    img, _ = _read_image_any(args.input)
    if img.ndim == 2:
        img = np.stack([img, img, img], axis=2)
    x = Tensor(img.transpose(2, 0, 1)[None].astype(np.float32))
    _, capture = model.forward(x, frm_capture_stage=args.stage)
    if capture is None:
        raise ValidationError(f"stage {args.stage} has no FRM")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("f", "r", "s", "fbar"):
        if name not in capture:
            continue
        # magnitude heatmap: a signed channel mean would cancel the detail
        # branch's oscillations and show nothing
        heat = np.abs(capture[name][0]).mean(axis=0)
        lo, hi = float(heat.min()), float(heat.max())
        norm = np.zeros_like(heat) if hi == lo else (heat - lo) / (hi - lo)
        pgm_write(out_dir / f"{name}.pgm", norm)
        written.append(f"{name}.pgm")
    _write_resolved(
        out_dir,
        "resolved_dump_features.json",
        {
            "command": "dump-features",
            "checkpoint": str(checkpoint),
            "in": str(args.input),
            "stage": args.stage,
            "out": str(out_dir),
            "model": asdict(model_cfg),
            "head": asdict(head_cfg),
            "reduction": "channel mean of absolute values, then min-max normalized to [0,1]",
        },
    )
    print(f"wrote {', '.join(written)} to {out_dir}")
    return 0


# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="fanet", description="Feature-amplification segmentation toolkit")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--train", type=int, default=None)
    p.add_argument("--val", type=int, default=None)
    p.add_argument("--test", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-scm", action="store_true", default=None)
    p.add_argument("--no-frm-high", action="store_true", default=None)
    p.add_argument("--no-frm-low", action="store_true", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--dump-masks", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the toggle ablation grid")
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seeds", default=None, help="comma-separated list, e.g. 0,1,2")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--scope", required=True, choices=("ops", "block", "model"))
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("enhance", help="classical sharpening / contrast enhancement")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=4.0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=2.0)
    p.set_defaults(func=_cmd_enhance)

    p = sub.add_parser("dump-features", help="write FRM heatmaps for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--stage", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_dump_features)

    return parser


def main(argv=None) -> int:
    _cap_threads()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValidationError, ConfigError, DimensionError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except FanetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
