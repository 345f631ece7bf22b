"""Dense NCHW tensors with reverse-mode automatic differentiation.

Every value flowing through the network is a :class:`Tensor`: a contiguous
row-major numpy buffer plus an optional gradient buffer of the same shape.
Differentiable operations record a backward closure and their parent tensors;
``Tensor.backward()`` replays the closures in reverse topological order and
then frees the graph.

Layout is NCHW with the width axis fastest. Activations default to float32;
verification paths build float64 tensors and every op preserves the input
dtype, which keeps finite-difference checks meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import DimensionError, NumericalError

# When true, every op asserts its output is finite. Off by default: the
# checks cost a full pass over each activation.
check_finite = False

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """N-dimensional array with optional gradient storage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # 0-d arrays are already trivially contiguous
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Reverse-mode sweep from this tensor; frees the graph afterwards."""
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise DimensionError(
                    f"backward seed shape {grad.shape} does not match tensor shape {self.data.shape}"
                )
        order = _topo_order(self)
        _accumulate(self, grad)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
        # free closures and activation references so memory is reclaimed
        for node in order:
            node._parents = ()
            node._backward_fn = None

    # Operator sugar; the free functions below do the work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS over the recorded graph."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if check_finite and not np.all(np.isfinite(data)):
        raise NumericalError("non-finite value produced by a forward operation")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _check_same_shape(opname: str, x: Tensor, y: Tensor) -> None:
    if x.shape == y.shape:
        return
    if len(x.shape) != len(y.shape):
        raise DimensionError(
            f"{opname}: rank mismatch {len(x.shape)} vs {len(y.shape)}"
        )
    for axis, (a, b) in enumerate(zip(x.shape, y.shape)):
        if a != b:
            raise DimensionError(f"{opname}: axis {axis} has extent {a} vs {b}")


# ---------------------------------------------------------------------------
# elementwise ops


def add(x: Tensor, y: Tensor) -> Tensor:
    _check_same_shape("add", x, y)

    def backward(g):
        _accumulate(x, g)
        _accumulate(y, g)

    return _make(x.data + y.data, (x, y), backward)


def sub(x: Tensor, y: Tensor) -> Tensor:
    _check_same_shape("sub", x, y)

    def backward(g):
        _accumulate(x, g)
        _accumulate(y, -g)

    return _make(x.data - y.data, (x, y), backward)


def mul(x: Tensor, y: Tensor) -> Tensor:
    """Hadamard product of equal-shaped tensors."""
    _check_same_shape("mul", x, y)
    xd, yd = x.data, y.data

    def backward(g):
        _accumulate(x, g * yd)
        _accumulate(y, g * xd)

    return _make(xd * yd, (x, y), backward)


def scale(x: Tensor, s: float) -> Tensor:
    def backward(g):
        _accumulate(x, g * s)

    return _make(x.data * s, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit with the exact normal CDF."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def backward(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        _accumulate(x, g * (cdf + xd * pdf))

    return _make(xd * cdf, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    """Full reduction to a scalar (rank-0) tensor."""

    def backward(g):
        _accumulate(x, np.full_like(x.data, float(g)))

    return _make(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


def concat_channels(xs: list[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis, block order preserved."""
    if not xs:
        raise DimensionError("concat_channels: empty input list")
    first = xs[0]
    for i, t in enumerate(xs[1:], start=1):
        for axis in (0, 2, 3):
            if t.shape[axis] != first.shape[axis]:
                raise DimensionError(
                    f"concat_channels: input {i} axis {axis} has extent "
                    f"{t.shape[axis]} vs {first.shape[axis]}"
                )
    widths = [t.shape[1] for t in xs]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            _accumulate(t, g[:, lo:hi])

    return _make(np.concatenate([t.data for t in xs], axis=1), tuple(xs), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= x.shape[1]):
        raise DimensionError(
            f"slice_channels: range [{start}, {stop}) invalid for {x.shape[1]} channels"
        )

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, start:stop] = g
            _accumulate(x, full)

    return _make(x.data[:, start:stop].copy(), (x,), backward)


# ---------------------------------------------------------------------------
# convolution


@dataclass
class ConvSpec:
    """Convolution hyperparameters plus learned weights.

    ``weight`` has shape (out_channels, in_channels // groups, kernel_h,
    kernel_w); ``bias`` when present has length out_channels.
    """

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    weight: Tensor = field(default=None)
    bias: Tensor | None = None

    def __post_init__(self):
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise DimensionError("ConvSpec: channel counts must be positive")
        if self.kernel_h <= 0 or self.kernel_w <= 0:
            raise DimensionError("ConvSpec: kernel extents must be positive")
        if self.stride <= 0:
            raise DimensionError("ConvSpec: stride must be positive")
        if self.padding < 0:
            raise DimensionError("ConvSpec: padding must be non-negative")
        if self.in_channels % self.groups != 0:
            raise DimensionError(
                f"ConvSpec: in_channels {self.in_channels} not divisible by groups {self.groups}"
            )
        if self.out_channels % self.groups != 0:
            raise DimensionError(
                f"ConvSpec: out_channels {self.out_channels} not divisible by groups {self.groups}"
            )
        expected = (
            self.out_channels,
            self.in_channels // self.groups,
            self.kernel_h,
            self.kernel_w,
        )
        if self.weight is None:
            raise DimensionError("ConvSpec: weight tensor is required")
        if tuple(self.weight.shape) != expected:
            raise DimensionError(
                f"ConvSpec: weight shape {tuple(self.weight.shape)} != expected {expected}"
            )
        if self.bias is not None and tuple(self.bias.shape) != (self.out_channels,):
            raise DimensionError(
                f"ConvSpec: bias shape {tuple(self.bias.shape)} != ({self.out_channels},)"
            )

    @staticmethod
    def create(
        in_channels,
        out_channels,
        kernel,
        stride=1,
        padding=0,
        groups=1,
        rng=None,
        std=0.02,
        zero_weights=False,
        with_bias=True,
        dtype=np.float32,
    ) -> "ConvSpec":
        """Build a spec with truncated-normal weights (or zeros) and zero bias."""
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        shape = (out_channels, in_channels // groups, kh, kw)
        if zero_weights or rng is None:
            w = np.zeros(shape, dtype=dtype)
        else:
            flat = np.array(
                [rng.trunc_normal(std) for _ in range(int(np.prod(shape)))],
                dtype=dtype,
            )
            w = flat.reshape(shape)
        bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if with_bias else None
        return ConvSpec(
            in_channels,
            out_channels,
            kh,
            kw,
            stride,
            padding,
            groups,
            weight=Tensor(w, requires_grad=True),
            bias=bias,
        )


def _conv_out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, spec: ConvSpec) -> Tensor:
    """2-D convolution (cross-correlation) over NCHW input.

    Three execution paths share one contract: a reshape-matmul for 1x1
    stride-1 convs, a kernel-offset accumulation for depthwise convs, and
    per-group im2col GEMM for everything else.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d: expected rank-4 NCHW input, got rank {x.data.ndim}")
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise DimensionError(
            f"conv2d: channel axis has {c} channels, spec.in_channels is {spec.in_channels}"
        )
    out_h = _conv_out_extent(h, spec.kernel_h, spec.stride, spec.padding)
    out_w = _conv_out_extent(w, spec.kernel_w, spec.stride, spec.padding)
    if out_h < 1:
        raise DimensionError(
            f"conv2d: output height {out_h} < 1 for input height {h}, "
            f"kernel {spec.kernel_h}, stride {spec.stride}, padding {spec.padding}"
        )
    if out_w < 1:
        raise DimensionError(
            f"conv2d: output width {out_w} < 1 for input width {w}, "
            f"kernel {spec.kernel_w}, stride {spec.stride}, padding {spec.padding}"
        )

    if (
        spec.kernel_h == 1
        and spec.kernel_w == 1
        and spec.stride == 1
        and spec.padding == 0
        and spec.groups == 1
    ):
        return _conv_pointwise(x, spec)
    if spec.groups == spec.in_channels and spec.out_channels == spec.in_channels:
        return _conv_depthwise(x, spec, out_h, out_w)
    return _conv_grouped(x, spec, out_h, out_w)


def _conv_pointwise(x: Tensor, spec: ConvSpec) -> Tensor:
    n, c, h, w = x.shape
    o = spec.out_channels
    w2d = spec.weight.data.reshape(o, c)
    xr = x.data.reshape(n, c, h * w)
    out = np.matmul(w2d[None], xr)
    if spec.bias is not None:
        out = out + spec.bias.data.reshape(1, o, 1)
    out = out.reshape(n, o, h, w)
    weight, bias = spec.weight, spec.bias

    def backward(g):
        gr = g.reshape(n, o, h * w)
        if weight.requires_grad:
            gw = np.matmul(gr, xr.transpose(0, 2, 1)).sum(axis=0)
            _accumulate(weight, gw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, gr.sum(axis=(0, 2)))
        if x.requires_grad:
            gx = np.matmul(w2d.T[None], gr)
            _accumulate(x, gx.reshape(n, c, h, w))

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return _make(out, parents, backward)


def _conv_depthwise(x: Tensor, spec: ConvSpec, out_h: int, out_w: int) -> Tensor:
    n, c, h, w = x.shape
    s, p = spec.stride, spec.padding
    kh, kw = spec.kernel_h, spec.kernel_w
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    wdat = spec.weight.data  # (C, 1, kh, kw)
    out = np.zeros((n, c, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + (out_h - 1) * s + 1 : s, j : j + (out_w - 1) * s + 1 : s]
            out += wdat[:, 0, i, j].reshape(1, c, 1, 1) * patch
    if spec.bias is not None:
        out += spec.bias.data.reshape(1, c, 1, 1)
    weight, bias = spec.weight, spec.bias

    def backward(g):
        if weight.requires_grad:
            gw = np.zeros_like(wdat)
            for i in range(kh):
                for j in range(kw):
                    patch = xp[
                        :, :, i : i + (out_h - 1) * s + 1 : s, j : j + (out_w - 1) * s + 1 : s
                    ]
                    gw[:, 0, i, j] = (g * patch).sum(axis=(0, 2, 3))
            _accumulate(weight, gw)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[
                        :, :, i : i + (out_h - 1) * s + 1 : s, j : j + (out_w - 1) * s + 1 : s
                    ] += wdat[:, 0, i, j].reshape(1, c, 1, 1) * g
            _accumulate(x, gxp[:, :, p : p + h, p : p + w] if p else gxp)

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return _make(out, parents, backward)


def _im2col(xp: np.ndarray, kh: int, kw: int, s: int, out_h: int, out_w: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, C, kh, kw, out_h, out_w) gather via stride tricks."""
    n, c, hp, wp = xp.shape
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, out_h, out_w),
        strides=(sn, sc, sh, sw, sh * s, sw * s),
        writeable=False,
    )
    return np.ascontiguousarray(view)


def _conv_grouped(x: Tensor, spec: ConvSpec, out_h: int, out_w: int) -> Tensor:
    n, c, h, w = x.shape
    s, p, grp = spec.stride, spec.padding, spec.groups
    kh, kw = spec.kernel_h, spec.kernel_w
    cg = spec.in_channels // grp
    og = spec.out_channels // grp
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    col = _im2col(xp, kh, kw, s, out_h, out_w)  # (N, C, kh, kw, oh, ow)
    # fold groups: (grp, cg*kh*kw, N*oh*ow)
    colg = (
        col.reshape(n, grp, cg, kh, kw, out_h, out_w)
        .transpose(1, 2, 3, 4, 0, 5, 6)
        .reshape(grp, cg * kh * kw, n * out_h * out_w)
    )
    wg = spec.weight.data.reshape(grp, og, cg * kh * kw)
    outg = np.matmul(wg, colg)  # (grp, og, N*oh*ow)
    out = (
        outg.reshape(grp, og, n, out_h, out_w)
        .transpose(2, 0, 1, 3, 4)
        .reshape(n, spec.out_channels, out_h, out_w)
    )
    if spec.bias is not None:
        out = out + spec.bias.data.reshape(1, spec.out_channels, 1, 1)
    weight, bias = spec.weight, spec.bias

    def backward(g):
        gg = (
            g.reshape(n, grp, og, out_h, out_w)
            .transpose(1, 2, 0, 3, 4)
            .reshape(grp, og, n * out_h * out_w)
        )
        if weight.requires_grad:
            gw = np.matmul(gg, colg.transpose(0, 2, 1))
            _accumulate(weight, gw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcol = np.matmul(wg.transpose(0, 2, 1), gg)  # (grp, cg*kh*kw, N*oh*ow)
            gcol = (
                gcol.reshape(grp, cg, kh, kw, n, out_h, out_w)
                .transpose(4, 0, 1, 2, 3, 5, 6)
                .reshape(n, c, kh, kw, out_h, out_w)
            )
            gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[
                        :, :, i : i + (out_h - 1) * s + 1 : s, j : j + (out_w - 1) * s + 1 : s
                    ] += gcol[:, :, i, j]
            _accumulate(x, gxp[:, :, p : p + h, p : p + w] if p else gxp)

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return _make(out, parents, backward)


# ---------------------------------------------------------------------------
# resampling


def _resize_axis(n_in: int, n_out: int):
    """Half-pixel-center source coordinates for one axis.

    Returns (floor index, ceil index, fractional weight) arrays; the source
    coordinate (i + 0.5) * n_in / n_out - 0.5 is clamped to the valid range.
    """
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(np.intp)
    frac = pos - i0
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, frac


def _resize_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    i0, i1, frac = _resize_axis(n_in, n_out)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m.astype(dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resample with half-pixel centers.

    The forward pass uses the lerp form a + f*(b - a), which reproduces
    constant inputs exactly and is bit-identical when sizes are unchanged.
    """
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"bilinear_resize: target size {out_h}x{out_w} invalid")
    if x.data.ndim != 4:
        raise DimensionError("bilinear_resize: expected rank-4 NCHW input")
    n, c, h, w = x.shape
    y0, y1, fy = _resize_axis(h, out_h)
    x0, x1, fx = _resize_axis(w, out_w)
    fy_col = fy.astype(x.dtype).reshape(1, 1, out_h, 1)
    fx_row = fx.astype(x.dtype).reshape(1, 1, 1, out_w)

    rows0 = x.data[:, :, y0, :]
    rows1 = x.data[:, :, y1, :]
    rows = rows0 + fy_col * (rows1 - rows0)
    cols0 = rows[:, :, :, x0]
    cols1 = rows[:, :, :, x1]
    out = cols0 + fx_row * (cols1 - cols0)

    def backward(g):
        if not x.requires_grad:
            return
        ry = _resize_matrix(h, out_h, np.float64)
        rx = _resize_matrix(w, out_w, np.float64)
        gx = np.matmul(ry.T[None, None], g.astype(np.float64))
        gx = np.matmul(gx, rx[None, None])
        _accumulate(x, gx.astype(x.dtype))

    return _make(out, (x,), backward)


def _pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Rows average near-equal bins [floor(i*n/o), ceil((i+1)*n/o))."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)  # ceil division
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Average over a grid of near-equal rectangular bins."""
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"adaptive_avg_pool: target size {out_h}x{out_w} invalid")
    n, c, h, w = x.shape
    ay = _pool_matrix(h, out_h).astype(x.dtype)
    ax = _pool_matrix(w, out_w).astype(x.dtype)
    out = np.matmul(np.matmul(ay[None, None], x.data), ax.T[None, None])

    def backward(g):
        if x.requires_grad:
            gx = np.matmul(np.matmul(ay.T[None, None], g), ax[None, None])
            _accumulate(x, gx)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------------------
# normalization


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize across the channel axis independently at each position."""
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"layer_norm: gamma/beta must have length {c}, got {gamma.shape} and {beta.shape}"
        )
    mean = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mean
    var = np.mean(centered * centered, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(1, c, 1, 1)
            m1 = gxhat.mean(axis=1, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
            _accumulate(x, inv_std * (gxhat - m1 - xhat * m2))

    return _make(out, (x, gamma, beta), backward)
