"""Feature aggregation schemes g(X, G)."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .graph import CsrAdjacency, GraphBundle


class AggregationKind(str, Enum):
    IDENTITY = "identity"
    ONE_STEP_MEAN = "one_step_mean"
    TWO_STEP_NORM = "two_step_norm"


@dataclass(frozen=True)
class AggregationSpec:
    kind: AggregationKind = AggregationKind.TWO_STEP_NORM

    def __post_init__(self):
        object.__setattr__(self, "kind", AggregationKind(self.kind))


@dataclass(frozen=True, eq=False)
class AggregatedFeatures:
    Z: np.ndarray
    spec: AggregationSpec
    row_norms: np.ndarray

    @classmethod
    def from_matrix(cls, Z, spec: AggregationSpec | None = None) -> "AggregatedFeatures":
        Z = np.ascontiguousarray(Z, dtype=np.float64)
        Z.setflags(write=False)
        norms = np.linalg.norm(Z, axis=1)
        norms.setflags(write=False)
        return cls(Z, spec or AggregationSpec(AggregationKind.IDENTITY), norms)

    @property
    def num_rows(self) -> int:
        return self.Z.shape[0]


def propagate(adj: CsrAdjacency, X: np.ndarray) -> np.ndarray:
    """One application of (D+I)^{-1}(A+I), as a sparse pass."""
    return kernels.propagate_mean(adj.indptr, adj.indices, np.ascontiguousarray(X, dtype=np.float64))


def aggregate_matrix(X: np.ndarray, adj: CsrAdjacency, spec: AggregationSpec) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != adj.num_nodes:
        raise ValueError("feature rows do not match adjacency size")
    kind = AggregationSpec(spec.kind).kind
    if kind is AggregationKind.IDENTITY:
        return X.copy()
    if kind is AggregationKind.ONE_STEP_MEAN:
        return propagate(adj, X)
    return propagate(adj, propagate(adj, X))


def aggregate(bundle: GraphBundle, adj: CsrAdjacency, spec: AggregationSpec) -> AggregatedFeatures:
    return AggregatedFeatures.from_matrix(aggregate_matrix(bundle.features, adj, spec), spec)


def row_operator_checksum(adj: CsrAdjacency) -> np.ndarray:
    """Row sums of the one-step operator; each should be 1."""
    return propagate(adj, np.ones((adj.num_nodes, 1)))[:, 0]
