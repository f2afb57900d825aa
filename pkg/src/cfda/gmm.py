"""Gaussian mixtures over projection scores and the two conformity scores.

Densities are evaluated in log space throughout; the public density
functions exponentiate only on return.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class FitError(RuntimeError):
    """Raised when every EM restart collapses."""


def _as_points(xi, p: int) -> tuple[np.ndarray, bool]:
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    xi = np.atleast_2d(xi)
    if xi.shape[1] != p:
        raise ValueError(f"points have dimension {xi.shape[1]}, expected {p}")
    return xi, single


def _cholesky(sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("covariance matrix is not positive definite") from exc


def log_gaussian_density(xi, mu, sigma) -> np.ndarray:
    """Log of the multivariate normal density; ``xi`` may be ``(n, p)`` or ``(p,)``."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    p = mu.size
    if sigma.shape != (p, p):
        raise ValueError("covariance shape does not match mean")
    chol = _cholesky(sigma)
    pts, single = _as_points(xi, p)
    z = np.linalg.solve(chol, (pts - mu).T)
    maha = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = -0.5 * (p * LOG_2PI + logdet + maha)
    return out[0] if single else out


def gaussian_density(xi, mu, sigma):
    """Density of ``Norm(mu, sigma)`` at ``xi``."""
    return np.exp(log_gaussian_density(xi, mu, sigma))


@dataclass(frozen=True)
class MixtureModel:
    """A fitted ``K``-component Gaussian mixture in ``R^p``.

    Components are ordered by decreasing weight. Cholesky factors,
    log-determinants and inverses are precomputed at construction.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    loglik_history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).ravel()
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covariances, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        K, p = means.shape
        if weights.shape != (K,) or covs.shape != (K, p, p):
            raise ValueError("inconsistent mixture parameter shapes")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be positive and sum to one")
        covs = (covs + np.swapaxes(covs, 1, 2)) / 2
        chol = np.stack([_cholesky(c) for c in covs])
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        for name, value in (("weights", weights), ("means", means), ("covariances", covs)):
            value.flags.writeable = False
            object.__setattr__(self, name, value)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "logdet", logdet)
        object.__setattr__(self, "inverses", np.linalg.inv(covs))

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def p(self) -> int:
        return self.means.shape[1]

    def log_peaks(self) -> np.ndarray:
        """Log of each component's unweighted peak density."""
        return -0.5 * (self.p * LOG_2PI + self.logdet)

    def component_log_densities(self, xi) -> np.ndarray:
        """``log(pi_k phi(xi; mu_k, Sigma_k))`` as an ``(n, K)`` array."""
        pts, _ = _as_points(xi, self.p)
        out = np.empty((pts.shape[0], self.K))
        for k in range(self.K):
            z = np.linalg.solve(self.chol[k], (pts - self.means[k]).T)
            maha = np.sum(z * z, axis=0)
            out[:, k] = math.log(self.weights[k]) - 0.5 * (self.p * LOG_2PI + self.logdet[k] + maha)
        return out

    def mahalanobis2(self, xi) -> np.ndarray:
        """Squared Mahalanobis distance of each point to each component, ``(n, K)``."""
        pts, _ = _as_points(xi, self.p)
        out = np.empty((pts.shape[0], self.K))
        for k in range(self.K):
            z = np.linalg.solve(self.chol[k], (pts - self.means[k]).T)
            out[:, k] = np.sum(z * z, axis=0)
        return out

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "p": self.p,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MixtureModel":
        model = cls(data["weights"], data["means"], data["covariances"])
        if model.K != data.get("K", model.K) or model.p != data.get("p", model.p):
            raise ValueError("declared K/p disagree with parameter shapes")
        return model


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return np.squeeze(top, axis=axis) + np.log(np.sum(np.exp(a - top), axis=axis))


def log_mixture_density(model: MixtureModel, xi):
    comp = model.component_log_densities(xi)
    out = _logsumexp(comp, axis=1)
    return out[0] if np.asarray(xi).ndim == 1 else out


def mixture_density(model: MixtureModel, xi):
    """``sum_k pi_k phi(xi; mu_k, Sigma_k)``."""
    return np.exp(log_mixture_density(model, xi))


def log_max_component_score(model: MixtureModel, xi):
    comp = model.component_log_densities(xi)
    out = comp.max(axis=1)
    return out[0] if np.asarray(xi).ndim == 1 else out


def max_component_score(model: MixtureModel, xi):
    """``max_k pi_k phi(xi; mu_k, Sigma_k)``: the weighted density of the most likely component."""
    return np.exp(log_max_component_score(model, xi))


@dataclass(frozen=True)
class FitConfig:
    """EM settings. ``reg_floor=None`` means ``1e-6 * trace(cov(scores)) / p``."""

    K: int = 3
    restarts: int = 5
    max_iter: int = 500
    tol: float = 1e-10
    reg_floor: Optional[float] = None
    seed: int = 0
    collapse_retries: int = 3

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.reg_floor is not None and self.reg_floor <= 0:
            raise ValueError("reg_floor must be positive")


def kmeans_pp_centers(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new center drawn with probability proportional to D^2."""
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _floor_eigenvalues(cov: np.ndarray, floor: float) -> np.ndarray:
    # Clipping the spectrum at `floor` is the exact maximizer of the Gaussian
    # M-step objective over {Sigma >= floor * I}, which keeps EM monotone.
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def _m_step(x, resp, floor):
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    means = (resp.T @ x) / nk[:, None]
    covs = np.empty((resp.shape[1], x.shape[1], x.shape[1]))
    for k in range(resp.shape[1]):
        diff = x - means[k]
        covs[k] = _floor_eigenvalues((resp[:, k, None] * diff).T @ diff / nk[k], floor)
    return weights, means, covs


def _loglik_and_resp(x, weights, means, covs):
    K, p = means.shape
    comp = np.empty((x.shape[0], K))
    for k in range(K):
        comp[:, k] = math.log(weights[k]) + log_gaussian_density(x, means[k], covs[k])
    total = _logsumexp(comp, axis=1)
    return float(total.sum()), np.exp(comp - total[:, None])


def _single_run(x, config: FitConfig, floor: float, rng: np.random.Generator):
    """One EM run from k-means++ seeding; returns None if a component collapses."""
    n = x.shape[0]
    K = config.K
    centers = kmeans_pp_centers(x, K, rng)
    labels = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)
    resp = np.zeros((n, K))
    resp[np.arange(n), labels] = 1.0
    if np.any(resp.sum(axis=0) == 0):
        return None
    weights, means, covs = _m_step(x, resp, floor)

    min_weight = 1.0 / (10 * n)
    history = []
    for _ in range(config.max_iter):
        loglik, resp = _loglik_and_resp(x, weights, means, covs)
        history.append(loglik)
        if len(history) > 1 and abs(history[-1] - history[-2]) <= config.tol * abs(history[-2]):
            break
        if np.any(resp.sum(axis=0) / n < min_weight):
            return None
        weights, means, covs = _m_step(x, resp, floor)
    if np.any(weights < min_weight):
        return None
    return weights, means, covs, history


def fit_em(scores, config: FitConfig = FitConfig()) -> MixtureModel:
    """Fit a Gaussian mixture to ``scores`` by EM with k-means++ restarts.

    The run with the highest final log-likelihood is kept (lowest restart
    index on ties). A run in which some component weight drops below
    ``1 / (10 n)`` is retried from a fresh seed up to
    ``config.collapse_retries`` times. Every covariance has its eigenvalues
    floored at ``reg_floor``.

    Raises
    ------
    ValueError
        If ``n < K * (p + 1)``.
    FitError
        If every restart collapses.
    """
    x = np.atleast_2d(np.asarray(scores, dtype=float))
    n, p = x.shape
    K = config.K
    if n < K * (p + 1):
        raise ValueError(f"n={n} points cannot support K={K} components in p={p} dimensions")
    floor = config.reg_floor
    if floor is None:
        scale = float(np.trace(np.atleast_2d(np.cov(x.T, bias=True)))) / p
        floor = 1e-6 * scale if scale > 0 else 1e-12

    root = np.random.SeedSequence([config.seed, K, p])
    best = None
    for r, child in enumerate(root.spawn(config.restarts)):
        for attempt in child.spawn(1 + config.collapse_retries):
            result = _single_run(x, config, floor, np.random.default_rng(attempt))
            if result is not None:
                break
        else:
            logger.warning("EM restart %d collapsed on every attempt", r)
            continue
        if best is None or result[3][-1] > best[3][-1]:
            best = result
    if best is None:
        raise FitError("all EM restarts collapsed")

    weights, means, covs, history = best
    order = sorted(range(K), key=lambda k: (-weights[k], means[k, 0]))
    return MixtureModel(
        weights[order] / weights.sum(),
        means[order],
        covs[order],
        loglik_history=tuple(history),
    )


def bic(model: MixtureModel, scores) -> float:
    """Bayesian information criterion (lower is better); a convenience for choosing K."""
    x = np.atleast_2d(np.asarray(scores, dtype=float))
    loglik = float(log_mixture_density(model, x).sum())
    K, p = model.K, model.p
    n_params = (K - 1) + K * p + K * p * (p + 1) // 2
    return -2.0 * loglik + n_params * math.log(x.shape[0])
