"""Hierarchical multitask Gaussian-process regression.

Three pooling regimes for a population of related regression tasks
(independent, shared prior, hyperparameters modelled by intertask GPs over a
design covariate), fitted with a No-U-Turn sampler and scored by posterior
predictive log-likelihood.
"""
from hiergp._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
