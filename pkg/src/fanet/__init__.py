"""Feature-amplification segmentation toolkit.

Modules are imported explicitly (``from fanet import tensor``) rather than
re-exported here, so the CLI can cap BLAS thread pools before numpy loads.
"""

__version__ = "0.1.0"

__all__ = [
    "backbone",
    "checkpoint",
    "cli",
    "enhance",
    "errors",
    "gradcheck",
    "head",
    "metrics",
    "model",
    "netpbm",
    "rng",
    "synth",
    "tensor",
    "train",
    "verify",
]
