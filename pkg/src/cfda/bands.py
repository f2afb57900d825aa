"""Split-conformal prediction bands from Gaussian-mixture level sets.

The calibrated level set of a mixture conformity score is covered by (or,
for the max-component score, equal to) a union of ellipsoids in score space.
Each ellipsoid maps to a band component through its support function in the
direction ``phi(t) = (phi_1(t), ..., phi_p(t))``.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .funcdata import Basis, CurveSet, DimensionError, Grid, fpca, project, reconstruct
from .gmm import (
    LOG_2PI,
    FitConfig,
    MixtureModel,
    fit_em,
    log_gaussian_density,
    max_component_score,
    mixture_density,
)

logger = logging.getLogger(__name__)

# Guards ceil/floor of products like 0.1 * 30 = 3.0000000000000004.
_INDEX_EPS = 1e-9


class ConvergenceError(RuntimeError):
    """Raised when a root search fails to converge."""


class BandMethod(str, enum.Enum):
    COARSE = "coarse"
    REFINED = "refined"
    MAX = "max"

    @classmethod
    def parse(cls, value) -> "BandMethod":
        if isinstance(value, cls):
            return value
        aliases = {"coarsesum": "coarse", "refinedsum": "refined", "maxscore": "max"}
        key = str(value).lower()
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class SplitIndex:
    train: np.ndarray
    calib: np.ndarray

    @property
    def n1(self) -> int:
        return self.train.size

    @property
    def n2(self) -> int:
        return self.calib.size


def split(n: int, n1: Optional[int] = None, seed: int = 0) -> SplitIndex:
    """Uniformly random partition of ``range(n)`` into a training and a calibration part.

    ``n1`` defaults to ``n // 2``. Both parts are returned sorted.
    """
    if n1 is None:
        n1 = n // 2
    if not 1 <= n1 < n:
        raise ValueError(f"n1={n1} must satisfy 1 <= n1 < n={n}")
    perm = np.random.default_rng(np.random.SeedSequence([seed, 1])).permutation(n)
    return SplitIndex(np.sort(perm[:n1]), np.sort(perm[n1:]))


def conformal_rank(n2: int, alpha: float) -> int:
    """1-based rank ``ceil((n2 + 1) alpha) - 1`` of the calibration threshold."""
    return math.ceil((n2 + 1) * alpha - _INDEX_EPS) - 1


def conformal_threshold(calib_scores, alpha: float) -> float:
    """Calibrated threshold: the ``ceil((n2+1) alpha) - 1``-th smallest score.

    Returns ``-inf`` (accept everything) when that rank is zero.
    """
    scores = np.asarray(calib_scores, dtype=float).ravel()
    if scores.size == 0:
        raise ValueError("no calibration scores")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    rank = conformal_rank(scores.size, alpha)
    if rank <= 0:
        warnings.warn(
            f"n2={scores.size} is too small for alpha={alpha}; the prediction set is everything",
            RuntimeWarning,
            stacklevel=2,
        )
        return -math.inf
    return float(np.sort(scores, kind="stable")[rank - 1])


@dataclass(frozen=True)
class Ellipsoid:
    """``{xi : (xi - center)' shape^{-1} (xi - center) <= radius2}``; empty when ``radius2 < 0``."""

    center: np.ndarray
    shape: np.ndarray
    radius2: float

    @property
    def empty(self) -> bool:
        return self.radius2 < 0

    def contains(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if self.empty:
            return np.zeros(xi.shape[0], dtype=bool)
        diff = xi - self.center
        maha = np.sum(diff * np.linalg.solve(self.shape, diff.T).T, axis=1)
        return maha <= self.radius2


def gaussian_level_set_log(mu, sigma, log_c: float) -> Ellipsoid:
    """Level set ``{phi(xi; mu, sigma) >= exp(log_c)}`` as an ellipsoid."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    p = mu.size
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        raise np.linalg.LinAlgError("covariance matrix is not positive definite")
    radius2 = -2.0 * log_c - p * LOG_2PI - logdet
    return Ellipsoid(mu, sigma, float(radius2))


def gaussian_level_set(mu, sigma, c: float) -> Ellipsoid:
    """Level set ``{phi(xi; mu, sigma) >= c}``; ``c`` must be positive."""
    if not c > 0:
        raise ValueError("density level must be positive")
    return gaussian_level_set_log(mu, sigma, math.log(c))


def ellipsoid_support(e: Ellipsoid, v) -> tuple:
    """Minimum and maximum of ``xi' v`` over the ellipsoid.

    ``v`` may be a single direction of length ``p`` or a ``(p, m)`` array of
    directions, one per column, in which case arrays of length ``m`` are
    returned.
    """
    if e.empty:
        raise ValueError("support function of an empty ellipsoid")
    v = np.asarray(v, dtype=float)
    centre = e.center @ v
    spread = np.einsum("i...,ij,j...->...", v, e.shape, v)
    half = np.sqrt(e.radius2 * np.maximum(spread, 0.0))
    return centre - half, centre + half


def _min_quadratic_on_ball(hess: np.ndarray, grad: np.ndarray) -> tuple:
    """Minimize ``z'Hz + 2 g'z`` over ``||z|| <= 1`` for positive definite ``H``.

    Returns ``(z, value)``. On the boundary the multiplier ``nu`` solves
    ``||(H + nu I)^{-1} g|| = 1``; the secular function ``1/||z(nu)|| - 1`` is
    concave and increasing in ``nu``, so safeguarded Newton from the left
    converges monotonically.
    """
    lam, q = np.linalg.eigh(hess)
    gq = q.T @ grad
    z_free = -gq / lam
    if np.sum(z_free**2) <= 1.0:
        z = q @ z_free
        return z, float(z @ hess @ z + 2 * grad @ z)

    def norm2(nu):
        return float(np.sum((gq / (lam + nu)) ** 2))

    lo, hi = 0.0, float(np.linalg.norm(gq))
    nu = lo
    for _ in range(200):
        n2 = norm2(nu)
        if abs(math.sqrt(n2) - 1.0) <= 1e-13:
            break
        if n2 > 1.0:
            lo = nu
        else:
            hi = nu
        # Newton step on 1/||z|| - 1.
        dn2 = -2.0 * float(np.sum(gq**2 / (lam + nu) ** 3))
        step = -(1.0 / math.sqrt(n2) - 1.0) / (-0.5 * n2**-1.5 * dn2)
        cand = nu + step
        nu = cand if lo < cand < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    else:
        raise ConvergenceError("trust-region multiplier search did not converge")
    zq = -gq / (lam + nu)
    z = q @ zq
    return z, float(z @ hess @ z + 2 * grad @ z)


def trust_region_max_log(mu_k, sigma_k, constraint: Ellipsoid) -> tuple:
    """Log of ``sup phi(xi; mu_k, sigma_k)`` over ``xi`` in ``constraint``, and the maximizer."""
    if constraint.empty:
        raise ValueError("empty constraint set")
    mu_k = np.atleast_1d(np.asarray(mu_k, dtype=float))
    sigma_k = np.atleast_2d(np.asarray(sigma_k, dtype=float))
    p = mu_k.size
    prec = np.linalg.inv(sigma_k)
    prec = (prec + prec.T) / 2
    _, logdet = np.linalg.slogdet(sigma_k)
    log_peak = -0.5 * (p * LOG_2PI + logdet)

    r = math.sqrt(constraint.radius2)
    offset = mu_k - constraint.center
    if r == 0.0:
        xi = constraint.center.copy()
        maha = float(offset @ prec @ offset)
        return log_peak - 0.5 * maha, xi
    # xi = center + r L z with shape = L L' maps the constraint to the unit ball.
    chol = np.linalg.cholesky(constraint.shape)
    hess = r * r * chol.T @ prec @ chol
    hess = (hess + hess.T) / 2
    grad = -r * chol.T @ prec @ offset
    z, value = _min_quadratic_on_ball(hess, grad)
    maha = max(value + float(offset @ prec @ offset), 0.0)
    xi = constraint.center + r * chol @ z
    return log_peak - 0.5 * maha, xi


def trust_region_max(mu_k, sigma_k, constraint: Ellipsoid) -> float:
    """``sup phi(xi; mu_k, sigma_k)`` subject to ``xi`` in ``constraint``."""
    return math.exp(trust_region_max_log(mu_k, sigma_k, constraint)[0])


def component_overlap_delta(
    model: MixtureModel,
    k: int,
    s: int,
    tol: float = 1e-12,
    trivial_at: str = "s",
    max_bisections: int = 200,
) -> float:
    """``sup_xi min(pi_k phi_k(xi), pi_s phi_s(xi))``.

    If component ``s`` is dominated at its own mode the answer is its
    weighted peak (and likewise for ``k``). Otherwise bisect, in log scale,
    on the level ``c`` of ``phi_s`` for the crossing ``pi_s c = pi_k eta(c)``
    where ``eta(c)`` is the largest value of ``phi_k`` over
    ``{phi_s >= c}``. ``trivial_at`` selects which mode the dominance test
    is tried at first (``"s"`` or ``"k"``); both are always checked, since
    either one being dominated settles the value.
    """
    if k == s:
        raise ValueError("overlap of a component with itself")
    if trivial_at not in ("s", "k"):
        raise ValueError("trivial_at must be 's' or 'k'")
    return math.exp(_log_overlap(model, k, s, tol, trivial_at, max_bisections))


def _log_overlap(model, k, s, tol, trivial_at, max_bisections) -> float:
    log_w = np.log(model.weights)
    log_peak = model.log_peaks()
    comp_at = model.component_log_densities(model.means[[k, s]])  # rows: at mu_k, at mu_s

    def dominated(a, b, row):
        # component a is dominated by b at mu_a
        return comp_at[row, a] <= comp_at[row, b]

    checks = [(s, k, 1), (k, s, 0)] if trivial_at == "s" else [(k, s, 0), (s, k, 1)]
    for a, b, row in checks:
        if dominated(a, b, row):
            return float(log_w[a] + log_peak[a])

    mu_k, sig_k = model.means[k], model.covariances[k]
    mu_s, sig_s = model.means[s], model.covariances[s]

    def gap(log_c):
        # increasing in c: log(pi_s c) - log(pi_k eta(c))
        level = gaussian_level_set_log(mu_s, sig_s, log_c)
        log_eta, _ = trust_region_max_log(mu_k, sig_k, level)
        return log_w[s] + log_c - (log_w[k] + log_eta), log_eta

    # eta(c) >= phi_k(mu_s) on (0, peak_s], so the gap is <= 0 at this level.
    lo = float(log_w[k] + log_gaussian_density(mu_s, mu_k, sig_k) - log_w[s])
    hi = float(log_peak[s])
    lo = min(lo, hi)
    for _ in range(max_bisections):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        g, _ = gap(mid)
        if g <= 0:
            lo = mid
        else:
            hi = mid
    else:
        raise ConvergenceError("overlap bisection did not converge")
    # At the crossing both sides agree; report the weighted s-level.
    _, log_eta = gap(lo)
    return float(min(log_w[s] + 0.5 * (lo + hi), log_w[k] + log_eta))


@dataclass(frozen=True)
class OverlapDeltas:
    pairwise: np.ndarray
    delta: np.ndarray


def overlap_deltas(model: MixtureModel, tol: float = 1e-12, trivial_at: str = "s") -> OverlapDeltas:
    """All pairwise overlaps ``delta_ks`` and their row sums ``delta_k``."""
    K = model.K
    pairwise = np.zeros((K, K))
    for k in range(K):
        for s in range(k + 1, K):
            value = component_overlap_delta(model, k, s, tol=tol, trivial_at=trivial_at)
            pairwise[k, s] = pairwise[s, k] = value
    return OverlapDeltas(pairwise, pairwise.sum(axis=1))


@dataclass(frozen=True)
class BandComponent:
    k: int
    ellipsoid: Ellipsoid
    lo: np.ndarray
    hi: np.ndarray


@dataclass(frozen=True)
class Band:
    """Per-grid-point union of intervals ``[lo_k(t), hi_k(t)]`` over nonempty components.

    A ``degenerate`` band (threshold ``-inf``) is the whole real line at every ``t``.
    """

    grid: Grid
    alpha: float
    method: BandMethod
    lam: float
    components: tuple
    fallback_components: tuple = ()
    degenerate: bool = False
    requested_method: Optional[BandMethod] = None

    def contains_curves(self, curves) -> np.ndarray:
        """Whether each curve lies inside one component at every grid point."""
        values = np.atleast_2d(np.asarray(curves, dtype=float))
        if values.shape[1] != self.grid.m:
            raise DimensionError("curves are not on the band grid")
        if self.degenerate:
            return np.ones(values.shape[0], dtype=bool)
        inside = np.zeros(values.shape[0], dtype=bool)
        for comp in self.components:
            inside |= np.all((values >= comp.lo) & (values <= comp.hi), axis=1)
        return inside

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "method": self.method.value,
            "grid": self.grid.points.tolist(),
            "components": [
                {"k": c.k, "lo": c.lo.tolist(), "hi": c.hi.tolist()} for c in self.components
            ],
            "fallback_components": list(self.fallback_components),
            "degenerate": self.degenerate,
        }


def band_from_dict(data: dict) -> Band:
    """Rebuild the interval structure of a band from its JSON form (ellipsoids are not stored)."""
    grid = Grid.from_points(data["grid"])
    comps = tuple(
        BandComponent(int(c["k"]), None, np.asarray(c["lo"], float), np.asarray(c["hi"], float))
        for c in data["components"]
    )
    return Band(
        grid,
        float(data["alpha"]),
        BandMethod.parse(data["method"]),
        math.nan,
        comps,
        tuple(data.get("fallback_components", ())),
        bool(data["degenerate"]),
    )


def component_level_sets(
    model: MixtureModel,
    lam: float,
    method,
    deltas: Optional[OverlapDeltas] = None,
) -> tuple:
    """Per-component ellipsoids for a threshold ``lam``.

    Returns ``(ellipsoids, method_used, fallback_components)``. The refined
    thresholds ``(lam - delta_k) / pi_k`` need every ``delta_k < lam``;
    otherwise the coarse thresholds ``lam / (K pi_k)`` are used and the
    offending components are reported.
    """
    method = BandMethod.parse(method)
    K = model.K
    log_w = np.log(model.weights)
    fallback: tuple = ()
    if method is BandMethod.REFINED:
        if deltas is None:
            deltas = overlap_deltas(model)
        bad = tuple(int(k) for k in np.flatnonzero(deltas.delta >= lam))
        if bad:
            logger.info("refined band falls back to coarse; delta_k >= lambda for %s", bad)
            fallback = bad
            method = BandMethod.COARSE
        else:
            log_levels = np.log(lam - deltas.delta) - log_w
    if method is BandMethod.COARSE:
        log_levels = math.log(lam) - math.log(K) - log_w
    elif method is BandMethod.MAX:
        log_levels = math.log(lam) - log_w
    ellipsoids = [
        gaussian_level_set_log(model.means[k], model.covariances[k], float(log_levels[k]))
        for k in range(K)
    ]
    return ellipsoids, method, fallback


def build_band(
    model: MixtureModel,
    basis: Basis,
    lam: float,
    method,
    alpha: float = math.nan,
    deltas: Optional[OverlapDeltas] = None,
) -> Band:
    """Map the component ellipsoids to band components on the basis grid.

    ``lam`` must come from :func:`conformal_threshold` applied to the
    matching conformity score: the mixture density for the coarse and
    refined methods, the max-component score for ``max``.
    """
    requested = BandMethod.parse(method)
    if lam == -math.inf:
        return Band(basis.grid, alpha, requested, lam, (), (), True, requested)
    if model.p != basis.p:
        raise DimensionError("mixture dimension differs from basis size")
    if not lam > 0:
        raise ValueError("threshold must be a positive density value or -inf")
    ellipsoids, used, fallback = component_level_sets(model, lam, requested, deltas)
    directions = basis.functions  # (p, m): column t is phi(t)
    comps = []
    for k, e in enumerate(ellipsoids):
        if e.empty:
            continue
        lo, hi = ellipsoid_support(e, directions)
        comps.append(BandComponent(k, e, basis.offset + lo, basis.offset + hi))
    return Band(basis.grid, alpha, used, lam, tuple(comps), fallback, False, requested)


def band_contains(band: Band, curve, basis: Basis):
    """Whether the projection of ``curve`` lies inside a single band component at every grid point.

    ``curve`` may be one curve or a stack; returns a bool or a bool array.
    """
    values = curve.values if isinstance(curve, CurveSet) else np.asarray(curve, dtype=float)
    projected = reconstruct(project(values, basis), basis)
    result = band.contains_curves(projected)
    return bool(result[0]) if np.ndim(values) == 1 else result


def empirical_coverage(band: Band, testset, basis: Basis) -> float:
    values = testset.values if isinstance(testset, CurveSet) else np.atleast_2d(testset)
    if values.shape[0] == 0:
        raise ValueError("empty test set")
    return float(np.mean(band_contains(band, values, basis)))


def conformity_scores(model: MixtureModel, scores, method) -> np.ndarray:
    """Conformity score matching a band method (mixture density or max-component score)."""
    method = BandMethod.parse(method)
    scores = np.atleast_2d(scores)
    if method is BandMethod.MAX:
        return max_component_score(model, scores)
    return mixture_density(model, scores)


@dataclass(frozen=True)
class BandFit:
    """Everything produced by one run of the split-conformal band pipeline."""

    split: SplitIndex
    basis: Basis
    model: Optional[MixtureModel]
    calib_scores: np.ndarray
    lam: float
    band: Band
    deltas: Optional[OverlapDeltas] = field(default=None)


def fit_band(
    curves: CurveSet,
    alpha: float = 0.1,
    p: int = 2,
    K: int = 3,
    method="max",
    seed: int = 0,
    n1: Optional[int] = None,
    basis: Optional[Basis] = None,
    restarts: int = 5,
) -> BandFit:
    """Split, fit FPCA and a mixture on the training half, calibrate on the other half, build the band.

    When ``basis`` is given (e.g. a fixed cosine basis) it is used instead of
    FPCA on the training half.
    """
    method = BandMethod.parse(method)
    idx = split(curves.n, n1, seed)
    train = curves.subset(idx.train)
    calib = curves.subset(idx.calib)
    if basis is None:
        basis = fpca(train, p)
    if conformal_rank(idx.n2, alpha) <= 0:
        # The band is everything whatever the score, so the mixture is not fitted.
        warnings.warn(
            f"n2={idx.n2} is too small for alpha={alpha}; the band is degenerate",
            RuntimeWarning,
            stacklevel=2,
        )
        band = build_band(None, basis, -math.inf, method, alpha)
        return BandFit(idx, basis, None, np.empty(0), -math.inf, band)
    model = fit_em(project(train, basis), FitConfig(K=K, restarts=restarts, seed=seed))
    calib_scores = conformity_scores(model, project(calib, basis), method)
    lam = conformal_threshold(calib_scores, alpha)
    deltas = overlap_deltas(model) if method is BandMethod.REFINED else None
    band = build_band(model, basis, lam, method, alpha, deltas)
    return BandFit(idx, basis, model, calib_scores, lam, band, deltas)
