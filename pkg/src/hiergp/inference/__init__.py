"""No-U-Turn sampling and convergence diagnostics."""
from hiergp.inference.diagnostics import Diagnostics, diagnose, ess_bulk, split_rhat
from hiergp.inference.io import load_draws, save_draws
from hiergp.inference.nuts import (
    DualAveraging,
    NutsChain,
    PosteriorDraws,
    SamplerConfig,
    initialize,
    sample,
    warmup_windows,
)

__all__ = [
    "Diagnostics", "DualAveraging", "NutsChain", "PosteriorDraws", "SamplerConfig",
    "diagnose", "ess_bulk", "initialize", "load_draws", "sample", "save_draws",
    "split_rhat", "warmup_windows",
]
