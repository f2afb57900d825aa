"""Pseudo-density conformal sets, summaries, mean-shift modes and the conformal tree.

The pseudo-density of a curve ``u`` is ``p_h(u) = n^{-1} sum_i K(d(u, X_i) / h)``.
It is not a density on function space, but its level sets, enlarged by
``K(0) / n``, contain the exact conformal prediction set built from it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .funcdata import CurveSet, DimensionError, analytic_weights, cosine_coefficients

_INDEX_EPS = 1e-9


class Kernel(str, enum.Enum):
    GAUSSIAN = "gaussian"
    EPANECHNIKOV = "epanechnikov"

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self is Kernel.GAUSSIAN:
            return np.exp(-0.5 * z * z)
        return np.maximum(0.0, 1.0 - z * z)

    @property
    def peak(self) -> float:
        return 1.0


@dataclass(frozen=True)
class Distance:
    """``L2`` distance (``gamma is None``) or the analytic distance with parameters ``(gamma, J)``."""

    gamma: Optional[float] = None
    J: int = 30

    @property
    def is_l2(self) -> bool:
        return self.gamma is None

    def __str__(self) -> str:
        return "l2" if self.is_l2 else f"analytic(gamma={self.gamma}, J={self.J})"


L2 = Distance()


class PseudoDensityModel:
    """Pseudo-density over a fixed curve set with a cached pairwise distance matrix.

    Parameters
    ----------
    data : CurveSet
        The sample ``X_1, ..., X_n``.
    h : float
        Bandwidth, in the units of the distance.
    kernel : Kernel or str, default "gaussian"
        ``exp(-z^2/2)`` or ``max(0, 1 - z^2)``; both satisfy ``K(z) <= K(0)``.
    distance : Distance, default L2
    """

    def __init__(self, data: CurveSet, h: float, kernel="gaussian", distance: Distance = L2):
        if not h > 0:
            raise ValueError("bandwidth h must be positive")
        self.data = data
        self.h = float(h)
        self.kernel = Kernel(kernel)
        self.distance = distance
        if not distance.is_l2:
            self._coef_weights = analytic_weights(distance.gamma, distance.J)

    @property
    def n(self) -> int:
        return self.data.n

    def with_bandwidth(self, h: float) -> "PseudoDensityModel":
        """Same data and distance with another bandwidth, sharing the cached distances."""
        other = PseudoDensityModel(self.data, h, self.kernel, self.distance)
        if "distances" in self.__dict__:
            other.__dict__["distances"] = self.distances
        return other

    @cached_property
    def _features(self) -> np.ndarray:
        # Rows in a space where the distance is a weighted Euclidean norm.
        if self.distance.is_l2:
            return self.data.values
        return cosine_coefficients(self.data.values, self.data.grid, self.distance.J)

    @property
    def _feature_weights(self) -> np.ndarray:
        return self.data.grid.weights if self.distance.is_l2 else self._coef_weights

    def _row(self, feature: np.ndarray) -> np.ndarray:
        diff = self._features - feature
        return np.sqrt(np.sum(self._feature_weights * diff * diff, axis=1))

    def _to_features(self, curves) -> np.ndarray:
        curves = np.atleast_2d(np.asarray(curves, dtype=float))
        if curves.shape[1] != self.data.grid.m:
            raise DimensionError("curves are not on the data grid")
        if self.distance.is_l2:
            return curves
        return cosine_coefficients(curves, self.data.grid, self.distance.J)

    @cached_property
    def distances(self) -> np.ndarray:
        """``n x n`` distances; row ``i`` is computed exactly as for a new curve equal to ``X_i``."""
        feats = self._features
        return np.vstack([self._row(feats[i]) for i in range(self.n)])

    def distances_to(self, curves) -> np.ndarray:
        """Distances from each curve (rows) to every data curve (columns)."""
        feats = self._to_features(curves)
        return np.vstack([self._row(f) for f in feats])

    @cached_property
    def data_density(self) -> np.ndarray:
        """``p_h(X_i)`` for every data curve (each curve counts itself)."""
        return self.kernel(self.distances / self.h).mean(axis=1)

    def density(self, curves) -> np.ndarray:
        return self.kernel(self.distances_to(curves) / self.h).mean(axis=1)


def pseudo_density(model: PseudoDensityModel, u):
    """``p_h(u)`` for one curve (float) or a stack of curves (array)."""
    out = model.density(u)
    return float(out[0]) if np.ndim(u) == 1 else out


def conformal_pvalue(model: PseudoDensityModel, f):
    """Full-conformal p-value of ``f`` using the augmented pseudo-density.

    ``p^f(u) = n/(n+1) p_h(u) + K(d(u, f)/h)/(n+1)`` and
    ``pi(f) = (1 + #{i : p^f(X_i) <= p^f(f)}) / (n+1)``.
    """
    single = np.ndim(f) == 1
    d = model.distances_to(f)  # (q, n)
    n = model.n
    kf = model.kernel(d / model.h)
    aug_data = (n * model.data_density[None, :] + kf) / (n + 1)
    aug_self = (n * kf.mean(axis=1) + model.kernel.peak) / (n + 1)
    counts = np.sum(aug_data <= aug_self[:, None], axis=1)
    pv = (1.0 + counts) / (n + 1)
    return float(pv[0]) if single else pv


def level_index(n: int, alpha: float) -> int:
    """``floor(n alpha)``, the 1-based order statistic used for the level-set threshold."""
    return math.floor(n * alpha + _INDEX_EPS)


def cplus_threshold(model: PseudoDensityModel, alpha: float) -> float:
    """Membership threshold ``lambda - K(0)/n`` of the enlarged level set.

    ``lambda`` is the ``floor(n alpha)``-th smallest ``p_h(X_i)``; when that
    index is zero the threshold is ``-inf``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    idx = level_index(model.n, alpha)
    if idx < 1:
        return -math.inf
    lam = np.sort(model.data_density, kind="stable")[idx - 1]
    return float(lam - model.kernel.peak / model.n)


def data_subset(model: PseudoDensityModel, alpha: float) -> np.ndarray:
    """Indices of data curves inside the enlarged level set at ``alpha``."""
    return np.flatnonzero(model.data_density >= cplus_threshold(model, alpha))


@dataclass(frozen=True)
class SummarySets:
    anomalies: np.ndarray
    median_set: np.ndarray
    high_density: np.ndarray


def summary_sets(model: PseudoDensityModel, alpha_low: float = 0.05, alpha_high: float = 0.95) -> SummarySets:
    everyone = np.arange(model.n)
    kept = data_subset(model, alpha_low)
    return SummarySets(
        anomalies=np.setdiff1d(everyone, kept),
        median_set=data_subset(model, 0.5),
        high_density=data_subset(model, alpha_high),
    )


@dataclass(frozen=True)
class MeanShiftResult:
    """Distinct modes, and for each start the index of its mode."""

    modes: np.ndarray
    converged: np.ndarray
    assignment: np.ndarray
    starts: np.ndarray
    paths: Optional[list] = field(default=None, repr=False)


def _mean_shift_path(data, weights_q, u, h, tol, max_iter, keep_path):
    path = [u] if keep_path else None
    for _ in range(max_iter):
        diff = data - u
        d2 = np.sum(weights_q * diff * diff, axis=1)
        w = np.exp(-(d2 - d2.min()) / (2 * h * h))
        nxt = (w @ data) / w.sum()
        step = nxt - u
        u = nxt
        if keep_path:
            path.append(u)
        if math.sqrt(float(np.sum(weights_q * step * step))) < tol:
            return u, True, path
    return u, False, path


def mean_shift_modes(
    model: PseudoDensityModel,
    starts: Optional[Sequence[int]] = None,
    tol: Optional[float] = None,
    max_iter: int = 1000,
    merge_radius: Optional[float] = None,
    keep_paths: bool = False,
) -> MeanShiftResult:
    """Gaussian mean-shift from data curves toward local maxima of ``p_h``.

    Each iterate moves to the kernel-weighted mean of the data. Endpoints
    closer than ``merge_radius`` (default ``h / 4``) are merged, the earliest
    start naming the merged mode. ``tol`` defaults to ``1e-7 h``.
    """
    if model.kernel is not Kernel.GAUSSIAN or not model.distance.is_l2:
        raise ValueError("mean shift needs the Gaussian kernel and the L2 distance")
    h = model.h
    tol = 1e-7 * h if tol is None else tol
    merge_radius = h / 4 if merge_radius is None else merge_radius
    starts = np.arange(model.n) if starts is None else np.asarray(starts, dtype=int)
    data = model.data.values
    wq = model.data.grid.weights

    ends, converged, paths = [], [], []
    for i in starts:
        u, ok, path = _mean_shift_path(data, wq, data[i], h, tol, max_iter, keep_paths)
        ends.append(u)
        converged.append(ok)
        paths.append(None if path is None else np.array(path))
    ends = np.array(ends)

    uf = UnionFind(len(starts))
    for a in range(len(starts)):
        diff = ends[a + 1:] - ends[a]
        close = np.sqrt(np.sum(wq * diff * diff, axis=1)) < merge_radius
        for b in np.flatnonzero(close) + a + 1:
            uf.union(a, int(b))
    roots = np.array([uf.find(a) for a in range(len(starts))])
    mode_roots = np.unique(roots)
    lookup = {r: j for j, r in enumerate(mode_roots)}
    conv = np.array(converged)
    return MeanShiftResult(
        modes=ends[mode_roots],
        converged=np.array([conv[roots == r].all() for r in mode_roots]),
        assignment=np.array([lookup[r] for r in roots]),
        starts=starts,
        paths=paths if keep_paths else None,
    )


class UnionFind:
    """Disjoint sets over ``0..n-1`` whose root is always the smallest member."""

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        lo, hi = min(ra, rb), max(ra, rb)
        self.parent[hi] = lo
        return lo


@dataclass(frozen=True)
class LinkageGraph:
    nodes: np.ndarray
    edges: list
    labels: np.ndarray

    def components(self) -> list:
        """Member index arrays, ordered by their smallest member."""
        out = {}
        for node, label in zip(self.nodes, self.labels):
            out.setdefault(int(label), []).append(int(node))
        return [np.array(out[k]) for k in sorted(out)]


def build_linkage_graph(model: PseudoDensityModel, ids, epsilon: float) -> LinkageGraph:
    """Graph on the given data indices with an edge when ``d(X_i, X_j) <= epsilon``.

    ``labels[j]`` is the smallest index in the component of ``nodes[j]``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    nodes = np.sort(np.asarray(ids, dtype=int))
    sub = model.distances[np.ix_(nodes, nodes)]
    adjacent = np.minimum(sub, sub.T) <= epsilon
    np.fill_diagonal(adjacent, False)
    uf = UnionFind(nodes.size)
    edges = []
    for a, b in zip(*np.nonzero(np.triu(adjacent))):
        edges.append((int(nodes[a]), int(nodes[b])))
        uf.union(int(a), int(b))
    labels = np.array([nodes[uf.find(a)] for a in range(nodes.size)], dtype=int)
    return LinkageGraph(nodes, edges, labels)


@dataclass
class TreeNode:
    id: int
    alpha_born: float
    members: np.ndarray
    parent: Optional[int]
    representative: int
    displayed: bool
    alpha_died: float = 1.0
    children: list = field(default_factory=list)

    def to_dict(self, ids) -> dict:
        return {
            "id": self.id,
            "alpha_born": self.alpha_born,
            "alpha_died": self.alpha_died,
            "parent": self.parent,
            "children": list(self.children),
            "members": [ids[i] for i in self.members],
            "representative": ids[self.representative],
            "displayed": self.displayed,
        }


@dataclass(frozen=True)
class ConformalTree:
    """Clusters of the ``epsilon``-linkage graph on the retained data, tracked over ``alpha``.

    ``members`` of a node are its members at birth. Nodes smaller than
    ``min_size`` at birth are kept (``displayed=False``) so that nesting can
    be checked over every recorded cluster.
    """

    alpha_grid: np.ndarray
    nodes: list
    epsilon: float
    min_size: int
    ids: tuple

    def displayed_nodes(self) -> list:
        return [n for n in self.nodes if n.displayed]

    def displayed_children(self, node: TreeNode) -> list:
        return [self.nodes[c] for c in node.children if self.nodes[c].displayed]

    def split_events(self) -> list:
        """Displayed nodes that end in two or more displayed children."""
        return [n for n in self.displayed_nodes() if len(self.displayed_children(n)) >= 2]

    def leaves(self) -> list:
        return [n for n in self.displayed_nodes() if not self.displayed_children(n)]

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "min_size": self.min_size,
            "alpha_grid": self.alpha_grid.tolist(),
            "nodes": [n.to_dict(self.ids) for n in self.nodes],
        }

    def newick(self) -> str:
        """Displayed nodes as a Newick string; branch lengths are alpha spans."""
        if not self.nodes or not self.nodes[0].displayed:
            return ";"

        def render(node: TreeNode) -> str:
            kids = self.displayed_children(node)
            label = f"n{node.id}"
            length = repr(float(node.alpha_died - node.alpha_born))
            if not kids:
                return f"{label}:{length}"
            return "(" + ",".join(render(k) for k in kids) + f"){label}:{length}"

        return render(self.nodes[0]) + ";"


def default_alpha_grid(n: int) -> np.ndarray:
    return np.arange(1, n + 1) / (n + 1)


def conformal_tree(
    model: PseudoDensityModel,
    alpha_grid: Optional[Sequence[float]] = None,
    epsilon: Optional[float] = None,
    min_size: int = 10,
) -> ConformalTree:
    """Build the conformal cluster tree.

    The root holds every curve at ``alpha = 0``. At each grid level the
    retained curves of every live node are split into linkage components.
    A displayed node whose remainder has exactly one component of at least
    ``min_size`` curves continues through it; smaller components are
    recorded as suppressed children. Otherwise the node dies at this level
    and each component becomes a child. Suppressed nodes follow the same
    rule with ``min_size = 1``.
    """
    grid = default_alpha_grid(model.n) if alpha_grid is None else np.asarray(alpha_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("alpha grid must be strictly increasing")
    if grid[0] <= 0 or grid[-1] >= 1:
        raise ValueError("alpha grid must lie inside (0, 1)")
    if epsilon is None:
        epsilon = default_epsilon(model.distances)
    if min_size < 1:
        raise ValueError("min_size must be at least 1")

    dens = model.data_density
    nodes: list = []

    def new_node(alpha, members, parent):
        members = np.sort(members)
        rep = int(members[np.lexsort((members, -dens[members]))[0]])
        displayed = members.size >= min_size and (parent is None or nodes[parent].displayed)
        node = TreeNode(len(nodes), float(alpha), members, parent, rep, displayed)
        nodes.append(node)
        if parent is not None:
            nodes[parent].children.append(node.id)
        return node

    root = new_node(0.0, np.arange(model.n), None)
    live = {root.id: root.members}
    for alpha in grid:
        retained = data_subset(model, alpha)
        keep = np.zeros(model.n, dtype=bool)
        keep[retained] = True
        next_live = {}
        for node_id, current in live.items():
            node = nodes[node_id]
            remaining = current[keep[current]]
            if remaining.size == 0:
                node.alpha_died = float(alpha)
                continue
            comps = build_linkage_graph(model, remaining, epsilon).components()
            threshold = min_size if node.displayed else 1
            big = [c for c in comps if c.size >= threshold]
            if len(big) == 1:
                next_live[node_id] = big[0]
                for c in comps:
                    if c is not big[0]:
                        child = new_node(alpha, c, node_id)
                        next_live[child.id] = child.members
            else:
                node.alpha_died = float(alpha)
                for c in comps:
                    child = new_node(alpha, c, node_id)
                    next_live[child.id] = child.members
        live = next_live
    return ConformalTree(grid, nodes, float(epsilon), int(min_size), model.data.ids)


def default_bandwidth(model: PseudoDensityModel, candidates: Optional[Sequence[float]] = None) -> float:
    """Candidate bandwidth maximizing the sample variance of ``p_h(X_1..X_n)``; ties go to the smallest."""
    if candidates is None:
        candidates = bandwidth_candidates(model.distances)
    candidates = np.sort(np.asarray(candidates, dtype=float))
    if candidates.size == 0:
        raise ValueError("empty bandwidth grid")
    if np.any(candidates <= 0):
        raise ValueError("bandwidths must be positive")
    variances = [np.var(model.kernel(model.distances / h).mean(axis=1)) for h in candidates]
    return float(candidates[int(np.argmax(variances))])


def bandwidth_candidates(distances: np.ndarray, size: int = 40) -> np.ndarray:
    """Geometric grid from a tenth of the smallest to the largest positive pairwise distance."""
    pos = distances[distances > 0]
    if pos.size == 0:
        return np.array([1.0])
    return np.geomspace(pos.min() / 10, pos.max(), size)


def default_epsilon(distances: np.ndarray, subset: Optional[Sequence[int]] = None) -> float:
    """Half the largest nearest-neighbour distance within ``subset`` (default: all curves)."""
    d = np.asarray(distances, dtype=float)
    if subset is not None:
        subset = np.asarray(subset, dtype=int)
        d = d[np.ix_(subset, subset)]
    if d.shape[0] < 2:
        raise ValueError("need at least two curves")
    d = np.minimum(d, d.T).copy()
    np.fill_diagonal(d, np.inf)
    return float(0.5 * d.min(axis=1).max())
