"""Deterministic training loop, evaluation and the ablation runner.

Training follows the reference recipe where it transfers to CPU desk scale:
AdamW with decoupled weight decay 0.05, a polynomial learning-rate schedule
decaying from 9e-5 to zero with power 1.0, batch size 2, random crop plus
horizontal flip. Iteration count and crop size are desk-scaled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .backbone import FANetConfig
from .errors import ConfigError, NumericalError, ValidationError
from .head import HeadConfig, cross_entropy_loss, predict
from .metrics import MetricsReport, confusion_matrix, report_from_confusion
from .model import SegModel
from .rng import Rng
from .tensor import Tensor

_SHUFFLE_STREAM = 0x53485546
_AUG_STREAM = 0x41554731


@dataclass
class TrainConfig:
    base_lr: float = 9e-5
    max_iters: int = 2000
    poly_power: float = 1.0
    batch_size: int = 2
    crop: int = 64
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    eval_interval: int = 500

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.base_lr <= 0:
            raise ConfigError("TrainConfig: base_lr must be positive")
        if self.max_iters < 1:
            raise ConfigError("TrainConfig: max_iters must be >= 1")
        if self.crop < 32 or self.crop % 32 != 0:
            raise ConfigError("TrainConfig: crop must be a positive multiple of 32")
        if self.batch_size < 1:
            raise ConfigError("TrainConfig: batch_size must be >= 1")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError("TrainConfig: betas must be two values in [0, 1)")
        if self.eval_interval < 1:
            raise ConfigError("TrainConfig: eval_interval must be >= 1")


def poly_lr(iteration: int, config: TrainConfig) -> float:
    """base_lr * (1 - iter/max_iters) ** poly_power."""
    if not 0 <= iteration <= config.max_iters:
        raise ValidationError(
            f"poly_lr: iteration {iteration} outside [0, {config.max_iters}]"
        )
    return config.base_lr * (1.0 - iteration / config.max_iters) ** config.poly_power


def adamw_step(
    param: np.ndarray, grad: np.ndarray, state: dict, lr: float, config: TrainConfig
) -> None:
    """One decoupled-weight-decay Adam update, in place.

    ``state`` carries first/second moments ``m``/``v`` and the step counter;
    decay multiplies the parameter by (1 - lr * wd) before the moment update.
    """
    b1, b2 = config.betas
    state["step"] += 1
    t = state["step"]
    if config.weight_decay:
        param *= 1.0 - lr * config.weight_decay
    m, v = state["m"], state["v"]
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + config.eps)


class AdamW:
    """Optimizer over a model's named parameters, registration order fixed."""

    def __init__(self, named_params, config: TrainConfig):
        self.config = config
        self.params = list(named_params)
        self.state = {
            name: {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "step": 0}
            for name, p in self.params
        }

    def step(self, lr: float) -> None:
        # validate every gradient before mutating anything, so a non-finite
        # gradient leaves the parameters in their last good state
        grads = {}
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
            grads[name] = g
        for name, p in self.params:
            adamw_step(p.data, grads[name], self.state[name], lr, self.config)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def _crop_flip(image, mask, crop: int, rng: Rng):
    _, h, w = image.shape
    if h < crop or w < crop:
        raise ValidationError(f"crop {crop} larger than image {h}x{w}")
    oy = rng.randint(h - crop + 1)
    ox = rng.randint(w - crop + 1)
    img = image[:, oy : oy + crop, ox : ox + crop]
    msk = mask[oy : oy + crop, ox : ox + crop]
    if rng.chance(0.5):
        img = img[:, :, ::-1]
        msk = msk[:, ::-1]
    return np.ascontiguousarray(img), np.ascontiguousarray(msk)


def train(
    model: SegModel,
    images: np.ndarray,
    masks: np.ndarray,
    config: TrainConfig,
    out_dir,
    log_every: int = 1,
) -> list[float]:
    """Run the full schedule; writes loss.csv, periodic and final checkpoints.

    Returns the per-iteration loss values. Deterministic for a fixed seed:
    reruns produce byte-identical artifacts.
    """
    if len(images) == 0:
        raise ValidationError("train: dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shuffle_rng = Rng(config.seed, _SHUFFLE_STREAM)
    aug_rng = Rng(config.seed, _AUG_STREAM)
    optimizer = AdamW(model.named_params(), config)
    ignore_index = model.head_config.ignore_index

    queue: list[int] = []

    def next_indices(count: int) -> list[int]:
        picked = []
        while len(picked) < count:
            if not queue:
                fresh = list(range(len(images)))
                shuffle_rng.shuffle(fresh)
                queue.extend(fresh)
            picked.append(queue.pop(0))
        return picked

    losses: list[float] = []
    rows: list[tuple[int, float, float]] = []
    for it in range(config.max_iters):
        batch = next_indices(config.batch_size)
        xs, ys = [], []
        for idx in batch:
            img, msk = _crop_flip(images[idx], masks[idx], config.crop, aug_rng)
            xs.append(img)
            ys.append(msk)
        x = Tensor(np.stack(xs))
        target = np.stack(ys)
        logits = model.forward(x)
        loss = cross_entropy_loss(logits, target, ignore_index)
        loss_value = float(loss.data)
        if not np.isfinite(loss_value):
            model.save(out_dir / "checkpoint.fant")
            _write_loss_csv(out_dir / "loss.csv", rows)
            raise NumericalError(
                f"non-finite loss at iteration {it}; last good checkpoint saved"
            )
        lr = poly_lr(it, config)
        loss.backward()
        optimizer.step(lr)
        optimizer.zero_grad()
        losses.append(loss_value)
        if it % log_every == 0 or it == config.max_iters - 1:
            rows.append((it, lr, loss_value))
        if (it + 1) % config.eval_interval == 0:
            model.save(out_dir / "checkpoint.fant")
    model.save(out_dir / "model.fant")
    _write_loss_csv(out_dir / "loss.csv", rows)
    return losses


def _write_loss_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "lr", "loss"])
        for it, lr, loss_value in rows:
            writer.writerow([it, f"{lr:.12g}", f"{loss_value:.12g}"])


def evaluate(
    model: SegModel,
    images: np.ndarray,
    masks: np.ndarray,
    iters_seen: int = 0,
    batch: int = 4,
) -> MetricsReport:
    """Full-image evaluation; accumulates one confusion matrix over the split."""
    if len(images) == 0:
        raise ValidationError("evaluate: split is empty")
    k = model.head_config.num_classes
    ignore = model.head_config.ignore_index
    total = np.zeros((k, k), dtype=np.int64)
    for lo in range(0, len(images), batch):
        chunk = images[lo : lo + batch]
        logits = model.forward(Tensor(chunk))
        pred = predict(logits)
        total += confusion_matrix(pred, masks[lo : lo + batch], k, ignore)
    return report_from_confusion(total, iters_seen)


def predict_masks(model: SegModel, images: np.ndarray, batch: int = 4) -> np.ndarray:
    preds = []
    for lo in range(0, len(images), batch):
        logits = model.forward(Tensor(images[lo : lo + batch]))
        preds.append(predict(logits))
    return np.concatenate(preds)


# Toggle rows in the reference ablation order: baseline, spatial context
# only, each refinement branch alone, both branches, and the full model.
ABLATION_GRID = (
    ("baseline", False, False, False),
    ("scm", True, False, False),
    ("frm_high", False, True, False),
    ("frm_low", False, False, True),
    ("frm_both", False, True, True),
    ("full", True, True, True),
)


def run_ablation(
    base_config: FANetConfig,
    head_config: HeadConfig,
    train_config: TrainConfig,
    seeds: list[int],
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    out_dir,
    grid=ABLATION_GRID,
) -> list[dict]:
    """Train and evaluate every toggle configuration for every seed.

    Writes ``ablation.csv`` with mean and population std of val mIoU and
    pixel accuracy per configuration, plus per-run artifacts under ``runs/``.
    """
    if not seeds:
        raise ValidationError("run_ablation: at least one seed is required")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for name, scm, frm_high, frm_low in grid:
        mious, pixaccs = [], []
        for seed in seeds:
            cfg = replace(
                base_config,
                scm_enabled=scm,
                frm_high_freq=frm_high,
                frm_low_freq=frm_low,
            )
            model = SegModel(cfg, head_config, seed=seed)
            run_dir = out_dir / "runs" / f"{name}-seed{seed}"
            tcfg = replace(train_config, seed=seed)
            train(model, train_data[0], train_data[1], tcfg, run_dir)
            report = evaluate(model, val_data[0], val_data[1], iters_seen=tcfg.max_iters)
            mious.append(report.miou)
            pixaccs.append(report.pixel_acc)
        results.append(
            {
                "config": name,
                "miou_mean": float(np.mean(mious)),
                "miou_std": float(np.std(mious)),
                "pixacc_mean": float(np.mean(pixaccs)),
                "pixacc_std": float(np.std(pixaccs)),
                "miou_per_seed": mious,
            }
        )
    with open(out_dir / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "miou_mean", "miou_std", "pixacc_mean", "pixacc_std"])
        for row in results:
            writer.writerow(
                [
                    row["config"],
                    f"{row['miou_mean']:.6f}",
                    f"{row['miou_std']:.6f}",
                    f"{row['pixacc_mean']:.6f}",
                    f"{row['pixacc_std']:.6f}",
                ]
            )
    return results
