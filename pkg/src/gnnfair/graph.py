"""Graph bundles: an undirected simple graph with node features and labels."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class BundleError(ValueError):
    """A bundle failed validation or its files are malformed."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def canonical_edges(edges, num_nodes: int) -> np.ndarray:
    """Return edges as a sorted, deduplicated (E, 2) array with ``src < dst``.

    Raises on self-loops and out-of-range endpoints.
    """
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    if (e < 0).any() or (e >= num_nodes).any():
        raise BundleError("edge endpoint out of range")
    if (e[:, 0] == e[:, 1]).any():
        raise BundleError("self-loop edges are not allowed")
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


@dataclass(frozen=True, eq=False)
class GraphBundle:
    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "bundle"

    def __post_init__(self):
        n = int(self.num_nodes)
        if n < 1:
            raise BundleError("num_nodes must be positive")
        if int(self.num_classes) < 2:
            raise BundleError("num_classes must be at least 2")
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != n:
            raise BundleError(f"features must have {n} rows, got shape {x.shape}")
        if not np.isfinite(x).all():
            raise BundleError("non-finite feature value")
        y = np.asarray(self.labels)
        if y.shape != (n,):
            raise BundleError(f"labels must have {n} entries, got shape {y.shape}")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise BundleError("labels must be integers")
        y = y.astype(np.int64)
        if (y < 0).any() or (y >= self.num_classes).any():
            raise BundleError("label out of range")
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "num_classes", int(self.num_classes))
        object.__setattr__(self, "edges", _frozen(canonical_edges(self.edges, n)))
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def with_features(self, features: np.ndarray) -> "GraphBundle":
        return GraphBundle(self.num_nodes, self.edges, features, self.labels, self.num_classes, self.name)

    def with_labels(self, labels: np.ndarray) -> "GraphBundle":
        return GraphBundle(self.num_nodes, self.edges, self.features, labels, self.num_classes, self.name)

    def __eq__(self, other):
        if not isinstance(other, GraphBundle):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.num_classes == other.num_classes
            and self.name == other.name
            and np.array_equal(self.edges, other.edges)
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class CsrAdjacency:
    """Symmetric CSR adjacency with sorted neighbour lists."""

    indptr: np.ndarray
    indices: np.ndarray
    degree: np.ndarray = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return self.indptr.shape[0] - 1

    @property
    def num_edges(self) -> int:
        return self.indices.shape[0] // 2

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def dense(self) -> np.ndarray:
        n = self.num_nodes
        a = np.zeros((n, n))
        rows = np.repeat(np.arange(n), self.degree)
        a[rows, self.indices] = 1.0
        return a


def csr_from_edges(num_nodes: int, edges) -> CsrAdjacency:
    e = canonical_edges(edges, num_nodes)
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    degree = np.bincount(src, minlength=num_nodes).astype(np.int64)
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(degree, out=indptr[1:])
    return CsrAdjacency(_frozen(indptr), _frozen(dst.astype(np.int64)), _frozen(degree))


def to_csr(bundle: GraphBundle) -> CsrAdjacency:
    return csr_from_edges(bundle.num_nodes, bundle.edges)


# --------------------------------------------------------------------------
# on-disk format

_FILES = ("meta.json", "edges.csv", "features.csv", "labels.csv")


def _check_name(name: str) -> None:
    if not name or "/" in name or "\\" in name or os.sep in name or name in (".", ".."):
        raise BundleError(f"invalid bundle name {name!r}: path separators are not allowed")


def save_bundle(bundle: GraphBundle, dir_path) -> None:
    """Write ``bundle`` as meta.json / edges.csv / features.csv / labels.csv."""
    if bundle.num_features < 1:
        raise BundleError("feature dimension must be positive")
    _check_name(bundle.name)
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": bundle.name,
        "num_nodes": bundle.num_nodes,
        "num_features": bundle.num_features,
        "num_classes": bundle.num_classes,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    with open(d / "edges.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst"])
        w.writerows(bundle.edges.tolist())
    # %.17g round-trips float64 exactly
    np.savetxt(d / "features.csv", bundle.features, fmt="%.17g", delimiter=",")
    np.savetxt(d / "labels.csv", bundle.labels, fmt="%d")


def load_bundle(dir_path) -> GraphBundle:
    d = Path(dir_path)
    for fname in _FILES:
        if not (d / fname).is_file():
            raise FileNotFoundError(f"bundle file missing: {d / fname}")
    meta = json.loads((d / "meta.json").read_text())
    try:
        name = str(meta["name"])
        n = int(meta["num_nodes"])
        dim = int(meta["num_features"])
        k = int(meta["num_classes"])
    except KeyError as exc:
        raise BundleError(f"meta.json missing key {exc}") from None
    if dim < 1:
        raise BundleError("feature dimension must be positive")

    with open(d / "edges.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["src", "dst"]:
        raise BundleError('edges.csv must start with the header "src,dst"')
    try:
        edges = np.array([[int(a), int(b)] for a, b in (r for r in rows[1:] if r)], dtype=np.int64)
    except ValueError as exc:
        raise BundleError(f"malformed edge row: {exc}") from None

    try:
        feats = np.loadtxt(d / "features.csv", delimiter=",", ndmin=2, dtype=np.float64)
        labels = np.loadtxt(d / "labels.csv", ndmin=1, dtype=np.float64)
    except ValueError as exc:
        raise BundleError(f"malformed numeric file: {exc}") from None
    if feats.shape[0] != n:
        raise BundleError(f"features.csv has {feats.shape[0]} rows, meta says {n}")
    if feats.shape[1] != dim:
        raise BundleError(f"features.csv has {feats.shape[1]} columns, meta says {dim}")
    if labels.shape[0] != n:
        raise BundleError(f"labels.csv has {labels.shape[0]} rows, meta says {n}")
    if not np.isfinite(feats).all():
        raise BundleError("non-finite feature value")
    if not np.all(np.equal(np.mod(labels, 1), 0)):
        raise BundleError("labels must be integers")
    return GraphBundle(n, edges, feats, labels.astype(np.int64), k, name)
