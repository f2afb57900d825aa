"""Discretized functional data: grids, curve sets, distances and bases.

Curves are stored as rows of a 2-D array sampled on a shared :class:`Grid`.
Every integral over ``[0, 1]`` is a trapezoid quadrature with the grid's
weights, so the inner product of two curves is ``(f * g) @ grid.weights``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MAX_COSINE_TERMS = 200
_LOG_FLOAT_MAX = math.log(np.finfo(float).max)


class DimensionError(ValueError):
    """Raised when arrays that must share a grid have inconsistent shapes."""


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Trapezoid quadrature weights for a sorted, possibly non-uniform grid."""
    points = np.asarray(points, dtype=float)
    if points.size == 1:
        return np.ones(1)
    gaps = np.diff(points)
    weights = np.zeros_like(points)
    weights[:-1] += gaps / 2
    weights[1:] += gaps / 2
    return weights


@dataclass(frozen=True)
class Grid:
    """Sorted time points in ``[0, 1]`` with positive quadrature weights."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.ascontiguousarray(self.points, dtype=float)
        weights = np.ascontiguousarray(self.weights, dtype=float)
        if points.ndim != 1 or points.size < 2:
            raise ValueError("a grid needs at least two points")
        if weights.shape != points.shape:
            raise DimensionError("grid points and weights differ in length")
        if not np.all(np.isfinite(points)) or np.any(np.diff(points) <= 0):
            raise ValueError("grid points must be finite and strictly increasing")
        if points[0] < 0 or points[-1] > 1:
            raise ValueError("grid points must lie in [0, 1]")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be positive")
        points.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_points(cls, points) -> "Grid":
        points = np.asarray(points, dtype=float)
        return cls(points, trapezoid_weights(points))

    @classmethod
    def uniform(cls, m: int) -> "Grid":
        """``m`` equispaced points covering ``[0, 1]`` including both ends."""
        return cls.from_points(np.linspace(0.0, 1.0, m))

    @property
    def m(self) -> int:
        return self.points.size

    def same_as(self, other: "Grid") -> bool:
        return self is other or (
            self.m == other.m
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True)
class CurveSet:
    """``n`` curves sampled on a shared grid, one per row of ``values``."""

    grid: Grid
    values: np.ndarray
    ids: tuple = field(default=())

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.grid.m:
            raise DimensionError(
                f"curve values have shape {values.shape}, expected (n, {self.grid.m})"
            )
        if values.shape[0] < 1:
            raise ValueError("a curve set needs at least one curve")
        if not np.all(np.isfinite(values)):
            raise ValueError("curve values must be finite")
        ids = tuple(str(i) for i in self.ids) if self.ids else tuple(
            str(i) for i in range(values.shape[0])
        )
        if len(ids) != values.shape[0]:
            raise DimensionError("one id per curve is required")
        if len(set(ids)) != len(ids):
            raise ValueError("curve ids must be unique")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.n

    def subset(self, index) -> "CurveSet":
        index = np.asarray(index, dtype=int)
        return CurveSet(self.grid, self.values[index], tuple(self.ids[i] for i in index))


def _check_pair(f, g, grid: Grid):
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape[-1] != grid.m or g.shape[-1] != grid.m:
        raise DimensionError(
            f"curves of length {f.shape[-1]} and {g.shape[-1]} on a grid of {grid.m} points"
        )
    return f, g


def inner_product(f, g, grid: Grid):
    """Quadrature approximation of the integral of ``f * g`` over the grid.

    Broadcasts over leading axes, so a stack of curves against one curve
    returns one inner product per row.
    """
    f, g = _check_pair(f, g, grid)
    return np.sum(f * g * grid.weights, axis=-1)


def l2_distance(f, g, grid: Grid):
    """``L2`` distance between curves; broadcasts like :func:`inner_product`."""
    f, g = _check_pair(f, g, grid)
    diff = f - g
    return np.sqrt(np.sum(grid.weights * diff * diff, axis=-1))


def cosine_basis(grid: Grid, J: int) -> np.ndarray:
    """First ``J`` orthonormal cosine functions on ``[0, 1]``, shape ``(J, m)``.

    ``c_1 = 1`` and ``c_j(t) = sqrt(2) cos((j - 1) pi t)`` for ``j >= 2``.
    """
    j = np.arange(J)[:, None]
    funcs = math.sqrt(2.0) * np.cos(j * math.pi * grid.points[None, :])
    funcs[0] = 1.0
    return funcs


def cosine_coefficients(f, grid: Grid, J: int, max_terms: int = MAX_COSINE_TERMS) -> np.ndarray:
    """Inner products of ``f`` (or each row of ``f``) with the first ``J`` cosine functions."""
    if J < 1:
        raise ValueError("J must be at least 1")
    if J > max_terms:
        raise ValueError(f"J={J} exceeds the cap of {max_terms} cosine terms")
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != grid.m:
        raise DimensionError(f"curve of length {f.shape[-1]} on a grid of {grid.m} points")
    return (f * grid.weights) @ cosine_basis(grid, J).T


def analytic_weights(gamma: float, J: int) -> np.ndarray:
    """Per-coefficient weights ``exp(gamma * j)``, ``j = 1..J``."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if gamma * J >= _LOG_FLOAT_MAX:
        raise ValueError(f"exp(gamma * J) overflows for gamma={gamma}, J={J}")
    return np.exp(gamma * np.arange(1, J + 1))


def analytic_distance(f, g, grid: Grid, gamma: float, J: int):
    """Exponentially weighted distance between cosine coefficients.

    ``d(f, g)^2 = sum_j exp(gamma * j) (beta_j - theta_j)^2`` where ``beta`` and
    ``theta`` are the cosine coefficients of ``f`` and ``g``.  At ``gamma = 0``
    this is the ``L2`` distance of the truncated expansions.
    """
    weights = analytic_weights(gamma, J)
    f, g = _check_pair(f, g, grid)
    diff = cosine_coefficients(f, grid, J) - cosine_coefficients(g, grid, J)
    return np.sqrt(np.sum(weights * diff * diff, axis=-1))


class BasisKind(str, enum.Enum):
    FPCA = "fpca"
    COSINE = "cosine"


@dataclass(frozen=True)
class Basis:
    """``p`` functions orthonormal in the grid's quadrature inner product.

    For an FPCA basis ``mean`` holds the training mean curve, which is
    subtracted before projecting and added back when reconstructing.
    """

    kind: BasisKind
    grid: Grid
    functions: np.ndarray
    eigenvalues: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None

    def __post_init__(self):
        functions = np.atleast_2d(np.asarray(self.functions, dtype=float))
        if functions.shape[1] != self.grid.m:
            raise DimensionError("basis functions must live on the basis grid")
        object.__setattr__(self, "functions", functions)
        if self.mean is not None:
            mean = np.asarray(self.mean, dtype=float)
            if mean.shape != (self.grid.m,):
                raise DimensionError("mean curve must live on the basis grid")
            object.__setattr__(self, "mean", mean)

    @property
    def p(self) -> int:
        return self.functions.shape[0]

    @property
    def offset(self) -> np.ndarray:
        """Curve added back on reconstruction (zero for a fixed basis)."""
        return self.mean if self.mean is not None else np.zeros(self.grid.m)

    def gram(self) -> np.ndarray:
        return (self.functions * self.grid.weights) @ self.functions.T

    def flip(self, j: int) -> "Basis":
        """Same basis with the sign of function ``j`` reversed."""
        functions = self.functions.copy()
        functions[j] = -functions[j]
        return Basis(self.kind, self.grid, functions, self.eigenvalues, self.mean)


def cosine_fixed_basis(grid: Grid, p: int) -> Basis:
    return Basis(BasisKind.COSINE, grid, cosine_basis(grid, p))


def fpca(train: CurveSet, p: int) -> Basis:
    """Top ``p`` eigenfunctions of the empirical covariance operator.

    The operator is discretized as ``W^{1/2} C W^{1/2}`` with ``W`` the
    quadrature weights and ``C`` the (1/n) sample covariance of the centered
    training curves. Eigenvectors are mapped back with ``W^{-1/2}`` so the
    returned functions are orthonormal under :func:`inner_product`. Each
    function is signed so that its largest-magnitude entry is positive.
    """
    n, m = train.values.shape
    if p < 1:
        raise ValueError("p must be at least 1")
    if p > min(n, m):
        raise ValueError(f"p={p} exceeds min(n_train={n}, m={m})")

    grid = train.grid
    mean = train.values.mean(axis=0)
    centered = train.values - mean
    root_w = np.sqrt(grid.weights)
    scaled = centered * root_w
    operator = scaled.T @ scaled / n
    operator = (operator + operator.T) / 2

    eigvals, eigvecs = np.linalg.eigh(operator)
    order = np.argsort(eigvals)[::-1][:p]
    eigvals = np.clip(eigvals[order], 0.0, None)
    functions = (eigvecs[:, order] / root_w[:, None]).T

    peak = np.argmax(np.abs(functions), axis=1)
    signs = np.sign(functions[np.arange(p), peak])
    signs[signs == 0] = 1.0
    functions = functions * signs[:, None]
    return Basis(BasisKind.FPCA, grid, functions, eigvals, mean)


def project(curves, basis: Basis) -> np.ndarray:
    """Projection scores ``xi_ij = <X_i - mean, phi_j>``, shape ``(n, p)``.

    Accepts a :class:`CurveSet`, a 2-D array of curves, or a single curve
    (which yields a 1-D score vector).
    """
    if isinstance(curves, CurveSet):
        if not curves.grid.same_as(basis.grid):
            raise DimensionError("curves and basis are on different grids")
        values = curves.values
    else:
        values = np.asarray(curves, dtype=float)
    if values.shape[-1] != basis.grid.m:
        raise DimensionError(
            f"curves of length {values.shape[-1]} on a basis grid of {basis.grid.m} points"
        )
    centered = values - basis.offset
    return (centered * basis.grid.weights) @ basis.functions.T


def reconstruct(xi, basis: Basis) -> np.ndarray:
    """Evaluate ``mean + sum_j xi_j phi_j`` on the basis grid."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != basis.p:
        raise DimensionError(f"score vector of length {xi.shape[-1]} for a basis of size {basis.p}")
    return basis.offset + xi @ basis.functions


def stack_curves(curves: Sequence[np.ndarray]) -> np.ndarray:
    return np.vstack([np.asarray(c, dtype=float) for c in curves])
