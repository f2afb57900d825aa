"""Shared data generators for the tests."""

import numpy as np

from cfda.funcdata import CurveSet, Grid, cosine_basis
from cfda.gmm import MixtureModel


def random_mixture(rng, K=2, p=2, spread=1.5):
    A = rng.normal(size=(K, p, p))
    covs = A @ np.swapaxes(A, 1, 2) + 0.3 * np.eye(p)
    means = rng.normal(scale=spread, size=(K, p))
    weights = rng.dirichlet(np.full(K, 3.0))
    return MixtureModel(weights, means, covs)


def planted_clusters(seed, n_per=(120, 100, 80), centers=(0.0, 3.0, 7.0), sd=0.7, m=40):
    """Three blobs along the second cosine function, spread 0.5 sd along the third."""
    rng = np.random.default_rng(seed)
    grid = Grid.uniform(m)
    basis = cosine_basis(grid, 3)
    coefs = []
    for n, c in zip(n_per, centers):
        z = rng.normal(scale=[sd, 0.5 * sd], size=(n, 2))
        z[:, 0] += c
        coefs.append(z)
    coefs = np.vstack(coefs)
    values = coefs[:, :1] * basis[1] + coefs[:, 1:] * basis[2]
    return CurveSet(grid, values)
