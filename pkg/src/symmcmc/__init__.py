"""Symmetry-aware MCMC for small tanh multilayer perceptrons."""

from symmcmc.net import Architecture, ParamLayout, forward, param_dim

__all__ = ["Architecture", "ParamLayout", "forward", "param_dim"]
__version__ = "0.1.0"
