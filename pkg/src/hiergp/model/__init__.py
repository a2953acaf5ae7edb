"""Model graphs for the three pooling regimes."""
from hiergp.model.joint import (
    REGIMES,
    HyperParams,
    IntertaskParams,
    LatentNoiseField,
    ModelSpec,
    NoiseHypers,
    latent_gp_log_density,
    log_joint_mtl_a,
    log_joint_mtl_b,
    log_joint_stl,
    marginal_log_likelihood,
)
from hiergp.model.priors import PriorConstants, log_prior_stl, sample_prior_stl
from hiergp.model.targets import (
    MTLATarget,
    MTLBTarget,
    STLTarget,
    grad_log_joint,
    make_target,
)
from hiergp.model.transforms import (
    Identity,
    Log,
    ScaledLogit,
    constrain,
    sigmoid,
    softplus,
    unconstrain,
)


def sensor_separation(s_g, s_h):
    """Euclidean distance between two sensor positions."""
    import numpy as np

    return float(np.linalg.norm(np.asarray(s_g, dtype=float) - np.asarray(s_h, dtype=float)))


__all__ = [
    "REGIMES", "HyperParams", "IntertaskParams", "LatentNoiseField", "ModelSpec",
    "NoiseHypers", "PriorConstants", "MTLATarget", "MTLBTarget", "STLTarget",
    "Identity", "Log", "ScaledLogit", "constrain", "unconstrain", "softplus", "sigmoid",
    "grad_log_joint", "make_target", "latent_gp_log_density", "log_joint_mtl_a",
    "log_joint_mtl_b", "log_joint_stl", "log_prior_stl", "marginal_log_likelihood",
    "sample_prior_stl", "sensor_separation",
]
