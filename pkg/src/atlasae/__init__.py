"""Mixture-of-autoencoders generative modeling on low-dimensional manifolds.

Local encoder/decoder pairs, one per element of a data-driven cover, are
glued into a single estimator by a partition of unity. Subpackages:

nn           reverse-mode MLP core, Adam, parameter counting
datasets     synthetic manifolds (spiral, torus, sphere) and CSV I/O
partition    K-means cover and partition-of-unity weights
discrepancy  kernels, MMD, exact / 1-D / sliced Wasserstein distances
model        the mixture model, priors, sampling, checkpoints
training     the training loop and data-driven prior refresh
evaluation   KDE baseline, Parzen log-likelihood, reports
cli          command-line entry points
"""

from ._flow import BACKEND as solver_backend

__version__ = "0.1.0"

__all__ = ["solver_backend", "__version__"]
