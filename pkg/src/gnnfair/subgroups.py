"""Distances to the training set, centralities, subgroup partitions and near sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels
from .graph import CsrAdjacency

PAGERANK_DAMPING = 0.85
PAGERANK_TOL = 1e-12  # L1; 1e-8 leaves ~1e-8 error, too loose for 1e-9 agreement
PAGERANK_MAX_ITER = 10_000


class SplitKind(str, Enum):
    AGG_DISTANCE = "agg_distance"
    GEODESIC = "geodesic"
    DEGREE = "degree"
    CLOSENESS = "closeness"
    BETWEENNESS = "betweenness"
    PAGERANK = "pagerank"

    @property
    def is_distance(self) -> bool:
        return self in (SplitKind.AGG_DISTANCE, SplitKind.GEODESIC)

    @property
    def order(self) -> str:
        # group 1 = closest to training set, or highest centrality
        return "ascending" if self.is_distance else "descending"


class ConvergenceError(RuntimeError):
    pass


def _node_ids(nodes) -> np.ndarray:
    return np.asarray(sorted(set(int(v) for v in np.asarray(nodes).ravel())), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class SubgroupPartition:
    train: np.ndarray
    groups: list
    nodes: np.ndarray
    scores: np.ndarray
    split_kind: SplitKind

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def score_of(self, node: int) -> float:
        return float(self.scores[np.searchsorted(self.nodes, node)])


@dataclass(frozen=True, eq=False)
class NearSetStructure:
    epsilon_m: float
    near_sets: dict
    s_m: int | None
    assumption2_holds: bool
    # True if some test node lies within epsilon_m of more than one train node
    overlapping: bool = False
    nearest_distance: np.ndarray = field(default=None, repr=False)

    def sizes(self) -> dict:
        return {k: len(v) for k, v in self.near_sets.items()}


# --------------------------------------------------------------------------
# scores


def agg_distance_scores(Z, train, targets) -> np.ndarray:
    """Min L2 distance from each target row of ``Z`` to any training row.

    Returns scores aligned with ``targets`` in the order given.
    """
    Z = getattr(Z, "Z", Z)
    train = np.asarray(train, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if train.size == 0:
        raise ValueError("training set is empty")
    if np.intersect1d(train, targets).size:
        raise ValueError("targets must be disjoint from the training set")
    best, _ = kernels.nearest_rows(np.ascontiguousarray(Z[targets]), np.ascontiguousarray(Z[train]))
    return best


def geodesic_scores(adj: CsrAdjacency, train, targets) -> np.ndarray:
    """Hop distance to the nearest training node; ``inf`` when unreachable."""
    train = np.asarray(train, dtype=np.int64)
    if train.size == 0:
        raise ValueError("training set is empty")
    dist = kernels.multi_source_bfs(adj.indptr, adj.indices, train)
    out = dist[np.asarray(targets, dtype=np.int64)].astype(np.float64)
    out[out < 0] = np.inf
    return out


def pagerank_scores(adj: CsrAdjacency, damping=PAGERANK_DAMPING, tol=PAGERANK_TOL, max_iter=PAGERANK_MAX_ITER):
    x, it = kernels.pagerank(adj.indptr, adj.indices, float(damping), float(tol), int(max_iter))
    if it < 0:
        raise ConvergenceError(f"pagerank did not converge in {max_iter} iterations")
    return x


def centrality_scores(adj: CsrAdjacency, kind) -> np.ndarray:
    """Per-node centrality for all nodes (index = node id)."""
    kind = SplitKind(kind)
    if kind is SplitKind.DEGREE:
        return adj.degree.astype(np.float64)
    if kind is SplitKind.CLOSENESS:
        return kernels.harmonic_closeness(adj.indptr, adj.indices)
    if kind is SplitKind.BETWEENNESS:
        return kernels.brandes_betweenness(adj.indptr, adj.indices)
    if kind is SplitKind.PAGERANK:
        return pagerank_scores(adj)
    raise ValueError(f"{kind.value} is not a centrality")


# --------------------------------------------------------------------------
# partitioning


def split_into_groups(nodes, scores, M: int, order: str = "ascending") -> list:
    """Sort by (score, node id) and cut into ``M`` contiguous groups.

    Group sizes differ by at most one, extra nodes going to the earliest
    groups. ``descending`` reverses the score order but still breaks ties by
    ascending node id. ``inf`` scores sort last in ascending order.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if nodes.shape != scores.shape:
        raise ValueError("nodes and scores must align")
    if M < 1:
        raise ValueError("M must be at least 1")
    if M > nodes.size:
        raise ValueError(f"cannot split {nodes.size} nodes into {M} groups")
    if order == "ascending":
        key = scores
    elif order == "descending":
        key = -scores
    else:
        raise ValueError(f"unknown order {order!r}")
    perm = np.lexsort((nodes, key))
    return [np.asarray(g) for g in np.array_split(nodes[perm], M)]


def make_partition(train, nodes, scores, M: int, split_kind) -> SubgroupPartition:
    split_kind = SplitKind(split_kind)
    nodes = np.asarray(nodes, dtype=np.int64)
    order = np.argsort(nodes, kind="stable")
    groups = split_into_groups(nodes, scores, M, split_kind.order)
    return SubgroupPartition(
        train=np.sort(np.asarray(train, dtype=np.int64)),
        groups=groups,
        nodes=nodes[order],
        scores=np.asarray(scores, dtype=np.float64)[order],
        split_kind=split_kind,
    )


# --------------------------------------------------------------------------
# near sets


def build_near_sets(Z, train, test) -> NearSetStructure:
    """Distance from ``test`` to ``train`` and the nearest-train near sets.

    Each test node goes to its nearest training node (ties to the smaller
    train id), which gives disjoint near sets. Equal sizes across all train
    nodes means equal-sized disjoint near sets exist.
    """
    Z = getattr(Z, "Z", Z)
    train = _node_ids(train)
    test = _node_ids(test)
    if train.size == 0 or test.size == 0:
        raise ValueError("train and test sets must be non-empty")
    if np.intersect1d(train, test).size:
        raise ValueError("train and test sets must be disjoint")
    zt = np.ascontiguousarray(Z[test])
    z0 = np.ascontiguousarray(Z[train])
    best, arg = kernels.nearest_rows(zt, z0)
    eps = float(best.max())

    near = {int(i): [] for i in train}
    for j, a in zip(test.tolist(), arg.tolist()):
        near[int(train[a])].append(j)
    near = {k: np.asarray(v, dtype=np.int64) for k, v in near.items()}
    sizes = {len(v) for v in near.values()}
    holds = len(sizes) == 1 and min(sizes) > 0
    s_m = int(min(sizes)) if holds else None

    # Definition-style membership (dist <= eps) may overlap; report it
    counts = np.zeros(test.size, dtype=np.int64)
    for lo in range(0, test.size, 256):
        d = np.linalg.norm(zt[lo : lo + 256, None, :] - z0[None, :, :], axis=2)
        counts[lo : lo + 256] = (d <= eps).sum(axis=1)
    return NearSetStructure(
        epsilon_m=eps,
        near_sets=near,
        s_m=s_m,
        assumption2_holds=holds,
        overlapping=bool((counts > 1).any()),
        nearest_distance=best,
    )
