"""Synthetic mixtures of Gaussian processes on a cosine basis.

Each curve picks a component, draws independent Gaussian scores on the
first ``J`` cosine functions around that component's mean coefficients, and
adds white noise on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .funcdata import CurveSet, Grid, cosine_basis


@dataclass(frozen=True)
class ComponentSpec:
    weight: float
    mean: tuple
    variances: tuple


@dataclass(frozen=True)
class SimSpec:
    n: int
    m: int
    J: int
    components: tuple
    noise_sd: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.m < 2 or self.J < 1:
            raise ValueError("need n >= 1, m >= 2 and J >= 1")
        if not self.components:
            raise ValueError("at least one component is required")
        weights = np.array([c.weight for c in self.components], dtype=float)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("component weights must be nonnegative and sum to one")
        for c in self.components:
            if len(c.mean) > self.J or len(c.variances) > self.J:
                raise ValueError("component has more coefficients than J")
            if any(v < 0 for v in c.variances):
                raise ValueError("score variances must be nonnegative")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components], dtype=float)

    def with_n(self, n: int) -> "SimSpec":
        return SimSpec(n, self.m, self.J, self.components, self.noise_sd)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "J": self.J,
            "noise_sd": self.noise_sd,
            "components": [
                {"weight": c.weight, "mean": list(c.mean), "variances": list(c.variances)}
                for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimSpec":
        try:
            comps = tuple(
                ComponentSpec(float(c["weight"]), tuple(map(float, c["mean"])), tuple(map(float, c["variances"])))
                for c in data["components"]
            )
            return cls(int(data["n"]), int(data["m"]), int(data["J"]), comps, float(data.get("noise_sd", 0.0)))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"invalid simulation spec: {exc}") from None


def _pad(values, J):
    out = np.zeros(J)
    out[: len(values)] = values
    return out


@dataclass(frozen=True)
class Simulated:
    curves: CurveSet
    labels: np.ndarray
    scores: np.ndarray = field(repr=False)


def simulate_labeled(spec: SimSpec, seed: int = 0, stream: int = 0) -> Simulated:
    """Draw ``spec.n`` curves; also returns component labels and cosine scores."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2, stream]))
    grid = Grid.uniform(spec.m)
    basis = cosine_basis(grid, spec.J)
    labels = rng.choice(len(spec.components), size=spec.n, p=spec.weights)
    means = np.array([_pad(c.mean, spec.J) for c in spec.components])
    sds = np.sqrt(np.array([_pad(c.variances, spec.J) for c in spec.components]))
    z = rng.standard_normal((spec.n, spec.J))
    scores = means[labels] + sds[labels] * z
    noise = spec.noise_sd * rng.standard_normal((spec.n, spec.m))
    values = scores @ basis + noise
    ids = tuple(f"c{i}" for i in range(spec.n))
    return Simulated(CurveSet(grid, values, ids), labels, scores)


def simulate(spec: SimSpec, seed: int = 0, stream: int = 0) -> CurveSet:
    """Deterministic given ``(seed, stream)``."""
    return simulate_labeled(spec, seed, stream).curves


def three_component_spec(n: int = 1000, m: int = 50, noise_sd: float = 0.1) -> SimSpec:
    """Three overlapping Gaussian-process components of unequal weight."""
    return SimSpec(
        n=n,
        m=m,
        J=6,
        noise_sd=noise_sd,
        components=(
            ComponentSpec(0.5, (0.0, 2.0, 0.0), (0.4, 0.3, 0.2, 0.05, 0.02, 0.01)),
            ComponentSpec(0.3, (0.0, -1.5, 1.5), (0.3, 0.2, 0.3, 0.05, 0.02, 0.01)),
            ComponentSpec(0.2, (1.5, 0.0, -1.5), (0.2, 0.3, 0.2, 0.05, 0.02, 0.01)),
        ),
    )
