"""Command-line front end: ``cfda band|tree|modes|summary|simulate|coverage``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as cio
from .bands import BandMethod, ConvergenceError, band_contains, fit_band
from .coverage import run_coverage
from .funcdata import CurveSet
from .gmm import FitError
from .pdens import (
    Distance,
    PseudoDensityModel,
    conformal_tree,
    default_bandwidth,
    default_epsilon,
    mean_shift_modes,
    summary_sets,
)
from .simulate import SimSpec, simulate, three_component_spec

logger = logging.getLogger("cfda")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("band", "tree", "modes", "summary", "simulate", "coverage")


class ConfigError(ValueError):
    pass


def _auto_or_float(text: str):
    if text.lower() == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("value must be positive")
    return value


@dataclass(frozen=True)
class RunConfig:
    command: str
    input: Optional[Path]
    output: Path
    alpha: float
    p: int
    K: int
    method: BandMethod
    h: object
    epsilon: object
    gamma: Optional[float]
    J: int
    kernel: str
    seed: int
    min_size: int
    replicates: int
    n: Optional[int]
    n_test: int
    spec: Optional[Path]
    test: Optional[Path]
    newick: bool

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("--alpha must lie in (0, 1)")
        if self.p < 1 or self.K < 1:
            raise ConfigError("--p and --K must be positive")
        if self.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        if self.min_size < 1 or self.replicates < 1:
            raise ConfigError("--min-size and --replicates must be positive")
        if self.gamma is not None and self.gamma < 0:
            raise ConfigError("--gamma must be nonnegative")
        if self.command in ("band", "tree", "modes", "summary") and self.input is None:
            raise ConfigError(f"'{self.command}' needs --input")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", type=Path, help="curve CSV (header 't,t_1,...'; rows 'id,v_1,...')")
    common.add_argument("--output", type=Path, default=Path("."), help="output directory")
    common.add_argument("--alpha", type=float, default=0.1)
    common.add_argument("--p", type=int, default=2, help="number of basis functions")
    common.add_argument("--K", type=int, default=3, help="number of mixture components")
    common.add_argument("--method", default="max", choices=[m.value for m in BandMethod])
    common.add_argument("--h", type=_auto_or_float, default="auto", help="bandwidth or 'auto'")
    common.add_argument("--epsilon", type=_auto_or_float, default="auto", help="linkage radius or 'auto'")
    common.add_argument("--gamma", type=float, default=None, help="use the analytic distance with this gamma")
    common.add_argument("--J", type=int, default=30, help="cosine terms for the analytic distance")
    common.add_argument("--kernel", default="gaussian", choices=["gaussian", "epanechnikov"])
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--min-size", type=int, default=10)
    common.add_argument("--replicates", type=int, default=200)
    common.add_argument("--n", type=int, default=None, help="sample size for simulate/coverage")
    common.add_argument("--n-test", type=int, default=500, help="test curves per coverage replicate")
    common.add_argument("--spec", type=Path, default=None, help="simulation spec JSON")
    common.add_argument("--test", type=Path, default=None, help="test curve CSV for band coverage")
    common.add_argument("--newick", action="store_true", help="also write tree.nwk")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cfda", description="Conformal prediction bands and trees for functional data.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "band": "split-conformal prediction band",
        "tree": "conformal cluster tree",
        "modes": "mean-shift modes of the pseudo-density",
        "summary": "anomalies, median set and high-density curves",
        "simulate": "draw curves from a Gaussian-process mixture",
        "coverage": "Monte Carlo coverage of the band pipeline",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def config_from_args(args) -> RunConfig:
    return RunConfig(
        command=args.command,
        input=args.input,
        output=args.output,
        alpha=args.alpha,
        p=args.p,
        K=args.K,
        method=BandMethod.parse(args.method),
        h=args.h,
        epsilon=args.epsilon,
        gamma=args.gamma,
        J=args.J,
        kernel=args.kernel,
        seed=args.seed,
        min_size=args.min_size,
        replicates=args.replicates,
        n=args.n,
        n_test=args.n_test,
        spec=args.spec,
        test=args.test,
        newick=args.newick,
    )


def _sim_spec(config: RunConfig) -> SimSpec:
    if config.spec is not None:
        try:
            data = json.loads(config.spec.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise cio.ParseError(f"spec JSON: {exc.msg}", exc.lineno) from None
        spec = SimSpec.from_dict(data)
    else:
        spec = three_component_spec()
    return spec.with_n(config.n) if config.n is not None else spec


def run_band(config: RunConfig) -> dict:
    curves = cio.read_curves_csv(config.input)
    fit = fit_band(curves, config.alpha, config.p, config.K, config.method, seed=config.seed)
    band = fit.band
    report = {
        "alpha": config.alpha,
        "method_requested": config.method.value,
        "method_used": band.method.value,
        "lambda": fit.lam,
        "degenerate": band.degenerate,
        "n_train": fit.split.n1,
        "n_calib": fit.split.n2,
        "train_ids": [curves.ids[i] for i in fit.split.train],
        "basis_eigenvalues": fit.basis.eigenvalues,
        "model": None if fit.model is None else fit.model.to_dict(),
        "deltas": None if fit.deltas is None else fit.deltas.pairwise,
    }
    if config.test is not None:
        test = cio.read_curves_csv(config.test)
        if not test.grid.same_as(curves.grid):
            raise cio.ParseError("test curves use a different grid")
        hits = band_contains(band, test.values, fit.basis)
        report["test_coverage"] = float(np.mean(hits))
        report["test_covered"] = int(np.sum(hits))
        report["test_n"] = int(hits.size)
    return {
        "band.json": cio.dumps(band.to_dict()),
        "band_plot.csv": cio.band_plot_csv(band),
        "report.json": cio.dumps(report),
    }


def _pdens_model(config: RunConfig):
    curves = cio.read_curves_csv(config.input)
    distance = Distance() if config.gamma is None else Distance(config.gamma, config.J)
    model = PseudoDensityModel(curves, 1.0, config.kernel, distance)
    if config.h != "auto":
        model = model.with_bandwidth(config.h)
    else:
        model = model.with_bandwidth(default_bandwidth(model))
    epsilon = default_epsilon(model.distances) if config.epsilon == "auto" else config.epsilon
    return curves, model, epsilon


def run_tree(config: RunConfig) -> dict:
    curves, model, epsilon = _pdens_model(config)
    tree = conformal_tree(model, epsilon=epsilon, min_size=config.min_size)
    payload = tree.to_dict()
    payload["h"] = model.h
    payload["distance"] = str(model.distance)
    out = {"tree.json": cio.dumps(payload)}
    if config.newick:
        out["tree.nwk"] = tree.newick() + "\n"
    return out


def run_modes(config: RunConfig) -> dict:
    curves, model, _ = _pdens_model(config)
    starts = summary_sets(model).median_set
    result = mean_shift_modes(model, starts=starts)
    modes = CurveSet(curves.grid, result.modes, tuple(f"mode{j}" for j in range(len(result.modes))))
    info = {
        "h": model.h,
        "starts": [curves.ids[i] for i in result.starts],
        "assignment": result.assignment,
        "converged": result.converged,
    }
    return {"modes.csv": cio.curves_to_csv(modes), "modes.json": cio.dumps(info)}


def run_summary(config: RunConfig) -> dict:
    curves, model, _ = _pdens_model(config)
    sets = summary_sets(model)
    ids = curves.ids
    payload = {
        "h": model.h,
        "distance": str(model.distance),
        "anomalies": [ids[i] for i in sets.anomalies],
        "median_set": [ids[i] for i in sets.median_set],
        "high_density": [ids[i] for i in sets.high_density],
    }
    return {"summary.json": cio.dumps(payload)}


def run_simulate(config: RunConfig) -> dict:
    return {"curves.csv": cio.curves_to_csv(simulate(_sim_spec(config), config.seed))}


def run_coverage_command(config: RunConfig) -> dict:
    spec = _sim_spec(config)
    report = run_coverage(
        spec,
        config.alpha,
        config.p,
        config.K,
        config.method,
        config.replicates,
        config.seed,
        n_test=config.n_test,
    )
    payload = report.to_dict()
    payload.update({"p": config.p, "K": config.K, "method": config.method.value, "spec": spec.to_dict()})
    return {"coverage.json": cio.dumps(payload)}


RUNNERS = {
    "band": run_band,
    "tree": run_tree,
    "modes": run_modes,
    "summary": run_summary,
    "simulate": run_simulate,
    "coverage": run_coverage_command,
}


def _write_all(outputs: dict, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in outputs.items():
            fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{name}.")
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, directory / name))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        config = config_from_args(args)
        outputs = RUNNERS[config.command](config)
    except (cio.ParseError, ConfigError, OSError) as exc:
        print(f"cfda: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FitError, ConvergenceError, FloatingPointError) as exc:
        print(f"cfda: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"cfda: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _write_all(outputs, config.output)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
