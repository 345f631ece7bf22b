"""Gradient-check batteries for single ops, one block, and the full model.

Everything runs in float64 with central differences at h=1e-5; each battery
returns (name, max relative error) pairs so callers can print or assert.
"""

from __future__ import annotations

import numpy as np

from .backbone import AFEBlock, FANetConfig
from .gradcheck import grad_check
from .head import HeadConfig, cross_entropy_loss
from .model import SegModel
from .rng import Rng
from .tensor import (
    ConvSpec,
    Tensor,
    adaptive_avg_pool,
    add,
    bilinear_resize,
    concat_channels,
    conv2d,
    gelu,
    layer_norm,
    mul,
    slice_channels,
    sum_all,
)

TOLERANCE = 1e-4
STEP = 1e-5


def _rand(rng: Rng, shape) -> np.ndarray:
    flat = np.array([rng.uniform(-1.0, 1.0) for _ in range(int(np.prod(shape)))])
    return flat.reshape(shape)


def _spec(rng, cin, cout, k, stride=1, padding=0, groups=1):
    spec = ConvSpec.create(
        cin, cout, k, stride=stride, padding=padding, groups=groups, dtype=np.float64
    )
    spec.weight.data = _rand(rng, spec.weight.shape)
    spec.bias.data = _rand(rng, spec.bias.shape)
    return spec


def gradcheck_ops(seed: int = 11) -> list[tuple[str, float]]:
    rng = Rng(seed)
    results = []

    x = Tensor(_rand(rng, (1, 4, 6, 6)), requires_grad=True)
    dense = _spec(rng, 4, 3, 3, stride=1, padding=1)
    results.append(("conv2d_dense", grad_check(lambda t: sum_all(conv2d(t, dense)), x, STEP)))

    grouped = _spec(rng, 4, 4, 3, stride=2, padding=1, groups=2)
    results.append(("conv2d_grouped", grad_check(lambda t: sum_all(conv2d(t, grouped)), x, STEP)))

    depthwise = _spec(rng, 4, 4, 3, padding=1, groups=4)
    results.append(
        ("conv2d_depthwise", grad_check(lambda t: sum_all(conv2d(t, depthwise)), x, STEP))
    )

    pointwise = _spec(rng, 4, 6, 1)
    results.append(
        ("conv2d_pointwise", grad_check(lambda t: sum_all(conv2d(t, pointwise)), x, STEP))
    )

    # weight gradients: treat the kernel as the checked tensor
    x_fixed = Tensor(_rand(rng, (2, 4, 5, 5)))
    w = Tensor(_rand(rng, (4, 2, 3, 3)), requires_grad=True)

    def conv_by_weight(t):
        spec = ConvSpec(4, 4, 3, 3, stride=1, padding=1, groups=2, weight=t)
        return sum_all(conv2d(x_fixed, spec))

    results.append(("conv2d_weight", grad_check(conv_by_weight, w, STEP)))

    results.append(
        ("bilinear_resize", grad_check(lambda t: sum_all(bilinear_resize(t, 9, 5)), x, STEP))
    )
    results.append(
        ("adaptive_avg_pool", grad_check(lambda t: sum_all(adaptive_avg_pool(t, 3, 2)), x, STEP))
    )

    gamma = Tensor(_rand(rng, (4,)), requires_grad=True)
    beta = Tensor(_rand(rng, (4,)), requires_grad=True)
    results.append(
        ("layer_norm", grad_check(lambda t: sum_all(layer_norm(t, gamma, beta)), x, STEP))
    )
    results.append(
        (
            "layer_norm_gamma",
            grad_check(
                lambda t: sum_all(layer_norm(x, t, beta)),
                Tensor(_rand(rng, (4,)), requires_grad=True),
                STEP,
            ),
        )
    )
    results.append(("gelu", grad_check(lambda t: sum_all(gelu(t)), x, STEP)))
    other = Tensor(_rand(rng, (1, 4, 6, 6)))
    results.append(("mul", grad_check(lambda t: sum_all(mul(t, other)), x, STEP)))
    results.append(("add", grad_check(lambda t: sum_all(add(t, other)), x, STEP)))
    results.append(
        (
            "concat_slice",
            grad_check(
                lambda t: sum_all(mul(slice_channels(concat_channels([t, other]), 2, 6), other)),
                x,
                STEP,
            ),
        )
    )

    # random affine so the channel sum of the normalized output does not
    # cancel to an identically-zero objective
    chain_spec = _spec(rng, 4, 4, 3, padding=1)
    cg = Tensor(_rand(rng, (4,)), requires_grad=True)
    cb = Tensor(_rand(rng, (4,)), requires_grad=True)
    results.append(
        (
            "conv_gelu_layernorm",
            grad_check(
                lambda t: sum_all(layer_norm(gelu(conv2d(t, chain_spec)), cg, cb)), x, STEP
            ),
        )
    )

    target = np.array([[rng.randint(3) for _ in range(4)] for _ in range(4)])[None]
    logits = Tensor(_rand(rng, (1, 3, 4, 4)), requires_grad=True)
    results.append(
        ("cross_entropy", grad_check(lambda t: cross_entropy_loss(t, target), logits, STEP))
    )
    return results


def gradcheck_block(seed: int = 12) -> list[tuple[str, float]]:
    rng = Rng(seed)
    config = FANetConfig(
        stage_channels=(8, 8, 8, 8),
        stage_depths=(1, 1, 1, 1),
        scm_enabled=True,
        frm_high_freq=True,
        frm_low_freq=True,
    )
    block = AFEBlock(8, config, Rng(seed, 1), dtype=np.float64)
    # exercise the mixer paths: zero-init projections would hide them
    for _, p in block.named_params("b"):
        p.data = _rand(rng, p.shape) * 0.5
    x = Tensor(_rand(rng, (1, 8, 6, 6)), requires_grad=True)
    err = grad_check(lambda t: sum_all(block.forward(t)), x, STEP)
    return [("afe_block", err)]


def _per_sample_ce(logits: np.ndarray, target_hw: np.ndarray) -> np.ndarray:
    """Mean cross entropy per batch row, computed directly in numpy."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = np.take_along_axis(shifted, target_hw[None, None].repeat(len(logits), 0), axis=1)[:, 0]
    return (lse - picked).mean(axis=(1, 2))


def gradcheck_model(seed: int = 13, chunk: int = 192) -> list[tuple[str, float]]:
    """End-to-end input gradient of loss(head(backbone(x))) at 1x3x32x32.

    The analytic side is one reverse-mode sweep. The numeric side is the same
    central-difference stencil as :func:`grad_check` but with the probe
    evaluations batched along the N axis, which the model treats
    independently per sample.
    """
    rng = Rng(seed)
    config = FANetConfig(stage_channels=(8, 16, 32, 64), stage_depths=(1, 1, 1, 1))
    head = HeadConfig(fpn_channels=32, num_classes=5)
    model = SegModel(config, head, seed=seed, dtype=np.float64)
    # replace the tiny default init so every pixel's gradient clears the
    # finite-difference noise floor; zero-init projections would hide paths
    for name, p in model.named_params():
        if name.endswith(".gamma"):
            p.data = 1.0 + 0.3 * _rand(rng, p.shape)
        elif name.endswith(".beta") or name.endswith(".bias"):
            p.data = 0.1 * _rand(rng, p.shape)
        else:
            p.data = 0.25 * _rand(rng, p.shape)
    model.set_requires_grad(False)  # only the input gradient is checked
    target_hw = np.array(
        [[rng.randint(5) for _ in range(32)] for _ in range(32)], dtype=np.int64
    )
    x = Tensor(_rand(rng, (1, 3, 32, 32)), requires_grad=True)

    loss = cross_entropy_loss(model.forward(x), target_hw[None])
    loss.backward()
    analytic = x.grad.reshape(-1).copy()
    x.requires_grad = False

    n_coords = x.data.size
    base = x.data.reshape(1, -1)
    worst = 0.0
    for lo in range(0, n_coords, chunk):
        idx = np.arange(lo, min(lo + chunk, n_coords))
        probes = np.repeat(base, 2 * len(idx), axis=0)
        rows = np.arange(len(idx))
        probes[2 * rows, idx] += STEP
        probes[2 * rows + 1, idx] -= STEP
        logits = model.forward(Tensor(probes.reshape(-1, 3, 32, 32)))
        losses = _per_sample_ce(logits.data, target_hw)
        numeric = (losses[0::2] - losses[1::2]) / (2.0 * STEP)
        denom = np.maximum(np.maximum(np.abs(analytic[idx]), np.abs(numeric)), 1e-8)
        worst = max(worst, float(np.max(np.abs(analytic[idx] - numeric) / denom)))
    x.requires_grad = True
    model.set_requires_grad(True)
    return [("model", worst)]


def run_scope(scope: str) -> list[tuple[str, float]]:
    if scope == "ops":
        return gradcheck_ops()
    if scope == "block":
        return gradcheck_block()
    if scope == "model":
        return gradcheck_model()
    raise ValueError(f"unknown gradcheck scope {scope!r}")
