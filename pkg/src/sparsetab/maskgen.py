"""Binary connectivity mask construction.

Three routes produce the feature-to-unit mask: user grouping files, biased
random walks on an unsupervised cosine feature graph, and k-means feature
clustering. Every mask reaching a network is guaranteed to have no all-zero
column; generators prune empty columns and record how many were dropped.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import make_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureGraph:
    """Undirected feature-similarity graph: symmetric 0/1 adjacency, zero diagonal."""

    adjacency: np.ndarray
    node_names: tuple[str, ...] = ()

    def __post_init__(self):
        a = np.asarray(self.adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if not np.all(np.isin(a, (0, 1))):
            raise ValueError("adjacency entries must be 0 or 1")
        object.__setattr__(self, "adjacency", a.astype(np.uint8))
        if not self.node_names:
            object.__setattr__(
                self, "node_names", tuple(f"f{i}" for i in range(a.shape[0]))
            )

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])


@dataclass(frozen=True)
class WalkSet:
    """Biased random walks: r walks of up to t steps from every node."""

    walks: tuple[tuple[int, ...], ...]
    r: int
    t: int
    p: float
    q: float
    seed: int

    def __post_init__(self):
        for w in self.walks:
            if len(w) < 1 or len(w) > self.t + 1:
                raise ValueError("each walk holds 1..t+1 nodes")


@dataclass(frozen=True)
class MaskMatrix:
    """Binary n_features x n_units connectivity with generator provenance."""

    a: np.ndarray
    provenance: str
    params: dict = field(default_factory=dict)
    feature_names: tuple[str, ...] = ()
    pruned_columns: int = 0

    def __post_init__(self):
        a = np.ascontiguousarray(self.a, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("mask must be 2-D")
        if not np.all(np.isin(a, (0.0, 1.0))):
            raise ValueError("mask entries must be 0 or 1")
        if a.shape[1] == 0 or np.any(a.sum(axis=0) == 0):
            raise ValueError("mask has an all-zero column")
        a.flags.writeable = False
        object.__setattr__(self, "a", a)
        if self.feature_names and len(self.feature_names) != a.shape[0]:
            raise ValueError("feature_names length must match mask rows")

    @property
    def n_features(self) -> int:
        return self.a.shape[0]

    @property
    def n_units(self) -> int:
        return self.a.shape[1]


def dense_mask(n_features: int, n_units: int,
               feature_names: tuple[str, ...] = ()) -> MaskMatrix:
    """All-ones mask: the layer reduces exactly to a dense layer."""
    return MaskMatrix(
        a=np.ones((n_features, n_units)),
        provenance="dense",
        params={"n_units": n_units},
        feature_names=feature_names,
    )


def _prune_empty_columns(a: np.ndarray) -> tuple[np.ndarray, int]:
    keep = a.sum(axis=0) > 0
    return a[:, keep], int((~keep).sum())


def cosine_similarity_features(x) -> np.ndarray:
    """Pairwise cosine similarity of feature columns.

    Zero-norm columns get similarity 0 against everything, themselves
    included.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError("need a 2-D matrix with at least 2 feature columns")
    norms = np.linalg.norm(x, axis=0)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = x / safe
    sim = unit.T @ unit
    zero = norms == 0.0
    sim[zero, :] = 0.0
    sim[:, zero] = 0.0
    np.clip(sim, -1.0, 1.0, out=sim)
    # exact 1 on the diagonal for nonzero columns
    d = np.ones(x.shape[1])
    d[zero] = 0.0
    np.fill_diagonal(sim, d)
    return sim


def build_feature_graph(sim, threshold: float = 0.5,
                        node_names: tuple[str, ...] = ()) -> FeatureGraph:
    """Edge (i, j) iff |sim_ij| > threshold and i != j.

    The comparison is strict: a similarity of exactly +-threshold produces
    no edge.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError("similarity matrix must be square")
    if not np.allclose(sim, sim.T):
        raise ValueError("similarity matrix must be symmetric")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    adj = (np.abs(sim) > threshold).astype(np.uint8)
    np.fill_diagonal(adj, 0)
    adj = np.maximum(adj, adj.T)  # guard against asymmetric float noise
    return FeatureGraph(adjacency=adj, node_names=node_names)


def _walk_from(g: FeatureGraph, start: int, t: int, p: float, q: float,
               rng: np.random.Generator) -> tuple[int, ...]:
    """One second-order biased walk of up to t steps.

    First step is uniform over neighbors. Later steps weight a candidate x
    given the previous node u: 1/p to return (x == u), 1 when x is adjacent
    to u, 1/q otherwise. Isolated start nodes yield the singleton walk.
    """
    adj = g.adjacency
    walk = [start]
    nbrs = np.flatnonzero(adj[start])
    if nbrs.size == 0:
        return (start,)
    walk.append(int(nbrs[rng.integers(nbrs.size)]))
    while len(walk) < t + 1:
        cur, prev = walk[-1], walk[-2]
        nbrs = np.flatnonzero(adj[cur])
        if nbrs.size == 0:
            break
        w = np.where(
            nbrs == prev, 1.0 / p, np.where(adj[nbrs, prev] == 1, 1.0, 1.0 / q)
        )
        probs = w / w.sum()
        walk.append(int(nbrs[rng.choice(nbrs.size, p=probs)]))
    return tuple(walk)


def node2vec_walks(g: FeatureGraph, r: int = 3, t: int = 5,
                   p: float = 1.0, q: float = 1.0, seed: int = 0) -> WalkSet:
    """r biased random walks of t steps for every node in the graph.

    p and q interpolate between breadth-first (q large) and depth-first
    (q small) exploration of a feature's neighbourhood. Bitwise reproducible
    for a fixed seed.
    """
    if r < 1 or t < 1:
        raise ValueError("r and t must be at least 1")
    if p <= 0 or q <= 0:
        raise ValueError("p and q must be positive")
    rng = make_rng(seed)
    walks = []
    for node in range(g.n_nodes):
        for _ in range(r):
            walks.append(_walk_from(g, node, t, p, q, rng))
    return WalkSet(walks=tuple(walks), r=r, t=t, p=p, q=q, seed=seed)


def walks_to_mask(w: WalkSet, n_features: int,
                  feature_names: tuple[str, ...] = ()) -> MaskMatrix:
    """Column j marks exactly the nodes visited by walk j.

    Visits are binary; revisiting a node inside one walk carries no extra
    weight. The start node is always marked, so no column is empty.
    """
    a = np.zeros((n_features, len(w.walks)))
    for j, walk in enumerate(w.walks):
        for node in walk:
            if node >= n_features:
                raise ValueError(f"walk node {node} out of range (n={n_features})")
            a[node, j] = 1.0
    return MaskMatrix(
        a=a,
        provenance="random_walk",
        params={"r": w.r, "t": w.t, "p": w.p, "q": w.q, "seed": w.seed},
        feature_names=feature_names,
    )


def random_walk_mask(x, r: int = 3, t: int = 5, p: float = 1.0,
                     q: float = 1.0, threshold: float = 0.5, seed: int = 0,
                     feature_names: tuple[str, ...] = ()) -> MaskMatrix:
    """Full unsupervised pipeline: cosine graph -> biased walks -> mask."""
    sim = cosine_similarity_features(x)
    g = build_feature_graph(sim, threshold=threshold, node_names=feature_names)
    walks = node2vec_walks(g, r=r, t=t, p=p, q=q, seed=seed)
    mask = walks_to_mask(walks, g.n_nodes, feature_names=feature_names)
    params = dict(mask.params)
    params["threshold"] = threshold
    return MaskMatrix(a=mask.a, provenance="random_walk", params=params,
                      feature_names=feature_names)


def groups_to_mask(groups, feature_names) -> MaskMatrix:
    """Mask from a many-to-many (feature, group) table.

    One column per group in first-appearance order; overlapping membership
    is allowed. Features absent from every group keep an all-zero row and
    are counted in params["uncovered_features"] with a logged warning.
    """
    feature_names = tuple(feature_names)
    index = {name: i for i, name in enumerate(feature_names)}
    group_order: list[str] = []
    members: dict[str, list[int]] = {}
    for feat, grp in groups:
        if feat not in index:
            raise ValueError(f"grouping references unknown feature {feat!r}")
        if grp not in members:
            group_order.append(grp)
            members[grp] = []
        members[grp].append(index[feat])
    if not group_order:
        raise ValueError("grouping table is empty")
    a = np.zeros((len(feature_names), len(group_order)))
    for j, grp in enumerate(group_order):
        a[members[grp], j] = 1.0
    uncovered = int((a.sum(axis=1) == 0).sum())
    if uncovered:
        log.warning("%d feature(s) belong to no group and keep zero rows",
                    uncovered)
    return MaskMatrix(
        a=a,
        provenance="grouping",
        params={"groups": list(group_order), "uncovered_features": uncovered},
        feature_names=feature_names,
    )


def load_grouping_csv(path) -> list[tuple[str, str]]:
    """Two-column CSV (feature_name, group_name), header required."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise ValueError(f"{path}: expected a two-column grouping CSV")
        return [(row[0].strip(), row[1].strip()) for row in reader if row]


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
            max_iter: int = 300, tol: float = 1e-6):
    """Lloyd's algorithm with k-means++ seeding.

    An empty cluster is re-seeded with the point farthest from its centroid
    assignment.
    """
    n = points.shape[0]
    # k-means++ seeding
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total == 0.0:
            centers[j] = points[rng.integers(n)]
        else:
            centers[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))

    assign = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = dist.argmin(axis=1)
        moved = 0.0
        for j in range(k):
            mine = points[assign == j]
            if mine.shape[0] == 0:
                far = dist.min(axis=1).argmax()
                new = points[far]
                assign[far] = j
            else:
                new = mine.mean(axis=0)
            moved = max(moved, float(np.abs(new - centers[j]).max()))
            centers[j] = new
        if moved <= tol:
            break
    wcss = 0.0
    for j in range(k):
        mine = points[assign == j]
        if mine.shape[0]:
            wcss += float(((mine - centers[j]) ** 2).sum())
    return assign, wcss


def kmeans_mask(x, k="elbow", seed: int = 0,
                feature_names: tuple[str, ...] = ()) -> MaskMatrix:
    """Disjoint mask from k-means on the transposed feature columns.

    Each feature lands in exactly one cluster, so rows have exactly one 1.
    k="elbow" picks the k in [2, min(n, 50)] maximizing the second
    difference of the within-cluster sum of squares.
    """
    x = np.asarray(x, dtype=np.float64)
    points = np.ascontiguousarray(x.T)
    n = points.shape[0]
    rng = make_rng(seed)
    if k == "elbow":
        ks = list(range(2, min(n, 50) + 1))
        if len(ks) < 3:
            chosen = ks[0]
        else:
            wcss = [_kmeans(points, kk, make_rng(seed + kk))[1] for kk in ks]
            second = [wcss[i - 1] - 2 * wcss[i] + wcss[i + 1]
                      for i in range(1, len(ks) - 1)]
            chosen = ks[1 + int(np.argmax(second))]
        assign, _ = _kmeans(points, chosen, rng)
        k = chosen
    else:
        k = int(k)
        if k < 1 or k > n:
            raise ValueError("k must lie in [1, n_features]")
        assign, _ = _kmeans(points, k, rng)
    a = np.zeros((n, k))
    a[np.arange(n), assign] = 1.0
    a, pruned = _prune_empty_columns(a)
    return MaskMatrix(
        a=a,
        provenance="kmeans",
        params={"k": int(k), "seed": seed},
        feature_names=tuple(feature_names),
        pruned_columns=pruned,
    )


def save_mask(mask: MaskMatrix, path) -> None:
    """CSV of 0/1 with feature-name row labels plus a JSON metadata sidecar."""
    names = mask.feature_names or tuple(f"f{i}" for i in range(mask.n_features))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["feature"] + [f"u{j}" for j in range(mask.n_units)])
        for i, name in enumerate(names):
            w.writerow([name] + [int(v) for v in mask.a[i]])
    meta = {
        "provenance": mask.provenance,
        "params": mask.params,
        "pruned_columns": mask.pruned_columns,
        "shape": [mask.n_features, mask.n_units],
    }
    with open(f"{path}.meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_mask(path) -> MaskMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        names, rows = [], []
        for row in reader:
            names.append(row[0])
            rows.append([float(v) for v in row[1:]])
    try:
        with open(f"{path}.meta.json", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        meta = {"provenance": "grouping", "params": {}, "pruned_columns": 0}
    return MaskMatrix(
        a=np.array(rows),
        provenance=meta["provenance"],
        params=meta.get("params", {}),
        feature_names=tuple(names),
        pruned_columns=meta.get("pruned_columns", 0),
    )
