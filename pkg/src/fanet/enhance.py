"""Classical spatial-domain image enhancement on [0, 1] grayscale arrays.

Two operators and their combination: Laplacian sharpening g = f - c * lap(f)
and sigmoid contrast stretching q = f * m(f) with
m(v) = gamma * (sigmoid(alpha * (v - beta)) - 0.5). These run on plain numpy
arrays; the learned network never calls into this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DimensionError

# 4-neighbor Laplacian stencil; the sharpening op subtracts c times this.
_LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class EnhanceParams:
    c: float = 1.0
    alpha: float = 4.0
    beta: float = 0.5
    gamma: float = 2.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("EnhanceParams: alpha must be > 0")
        if self.gamma < 0:
            raise ConfigError("EnhanceParams: gamma must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("EnhanceParams: beta must lie in [0, 1]")
        if self.c < 0:
            raise ConfigError("EnhanceParams: c must be >= 0")


def _laplacian(f: np.ndarray) -> np.ndarray:
    """4-neighbor Laplacian under replicate boundary padding."""
    fp = np.pad(f, 1, mode="edge")
    return fp[:-2, 1:-1] + fp[2:, 1:-1] + fp[1:-1, :-2] + fp[1:-1, 2:] - 4.0 * f


def sharpen(f: np.ndarray, c: float) -> np.ndarray:
    """g = f - c * lap(f); output is not clamped."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.size == 0:
        raise DimensionError("sharpen: expected a non-empty 2-D image")
    if c == 0.0:
        return f.copy()
    return f - c * _laplacian(f)


def contrast_map(f: np.ndarray, alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Pointwise gamma * (sigmoid(alpha * (v - beta)) - 0.5)."""
    f = np.asarray(f, dtype=np.float64)
    return gamma * (expit(alpha * (f - beta)) - 0.5)


def contrast_enhance(f: np.ndarray, params: EnhanceParams) -> np.ndarray:
    """q = f * m(f), the Hadamard product with the contrast map."""
    f = np.asarray(f, dtype=np.float64)
    return f * contrast_map(f, params.alpha, params.beta, params.gamma)


def enhance_combine(f: np.ndarray, params: EnhanceParams) -> np.ndarray:
    """Sharpened plus contrast-enhanced image, clamped to [0, 1] for display."""
    combined = sharpen(f, params.c) + contrast_enhance(f, params)
    return np.clip(combined, 0.0, 1.0)
