"""Monte Carlo coverage of the band pipeline on simulated data."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bands import band_contains, fit_band
from .simulate import SimSpec, simulate


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("CFDA_THREADS", "1")))
    except ValueError:
        return 1


def derived_seed(seed: int, *keys: int) -> int:
    """Independent integer seed for a (seed, keys...) counter."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


@dataclass(frozen=True)
class CoverageReport:
    alpha: float
    replicates: int
    single: np.ndarray
    batch: np.ndarray
    degenerate: np.ndarray

    @property
    def mean_single(self) -> float:
        return float(self.single.mean())

    @property
    def mean_batch(self) -> float:
        return float(self.batch.mean())

    def single_ci(self, z: float = 1.96) -> tuple:
        m = self.replicates
        p = self.mean_single
        se = math.sqrt(max(p * (1 - p), 1e-300) / m)
        return p - z * se, p + z * se

    def to_dict(self) -> dict:
        lo, hi = self.single_ci()
        return {
            "alpha": self.alpha,
            "replicates": self.replicates,
            "mean_single_coverage": self.mean_single,
            "single_ci95": [lo, hi],
            "mean_batch_coverage": self.mean_batch,
            "batch_se": float(self.batch.std(ddof=1) / math.sqrt(self.replicates)) if self.replicates > 1 else None,
            "degenerate_replicates": int(self.degenerate.sum()),
            "single": self.single.astype(int).tolist(),
            "batch": self.batch.tolist(),
        }


def run_coverage(
    spec: SimSpec,
    alpha: float = 0.1,
    p: int = 2,
    K: int = 3,
    method="max",
    replicates: int = 200,
    seed: int = 0,
    n_test: int = 500,
    restarts: int = 2,
) -> CoverageReport:
    """Fit the band on fresh data ``replicates`` times and test it on fresh curves.

    ``single`` holds the indicator that the first test curve's projection is
    covered; ``batch`` is the covered fraction of all ``n_test`` test curves,
    a lower-variance estimate of the same coverage probability.
    """

    def one(r: int):
        curves = simulate(spec, seed, stream=2 * r)
        test = simulate(spec.with_n(n_test), seed, stream=2 * r + 1)
        fit = fit_band(curves, alpha, p, K, method, seed=derived_seed(seed, 3, r), restarts=restarts)
        hits = band_contains(fit.band, test.values, fit.basis)
        return bool(hits[0]), float(hits.mean()), fit.band.degenerate

    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, range(replicates)))
    else:
        results = [one(r) for r in range(replicates)]
    single, batch, degenerate = (np.array(x) for x in zip(*results))
    return CoverageReport(alpha, replicates, single, batch, degenerate)
