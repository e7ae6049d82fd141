"""Synthetic data: homophilous block-model graphs and worlds with a known label field."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregate import AggregatedFeatures, AggregationKind, AggregationSpec
from .graph import GraphBundle, load_bundle, save_bundle
from .model import check_label_field
from .subgroups import build_near_sets


class InfeasibleGeometry(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LabelField:
    eta: np.ndarray
    lipschitz_c: float

    def __post_init__(self):
        eta = check_label_field(self.eta).copy()
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)


@dataclass(frozen=True, eq=False)
class AssumptionWorld:
    bundle: GraphBundle
    Z: AggregatedFeatures
    eta: LabelField
    V_0: np.ndarray
    V_m: np.ndarray
    epsilon_m: float
    s_m: int
    c: float


def gen_homophilous(
    n_per_class: int,
    K: int,
    D: int,
    intra_p: float,
    inter_p: float,
    center_sep: float,
    noise_std: float,
    seed: int,
    degree_spread: float = 0.0,
    name: str = "synthetic_homophilous",
    noise_spread: float = 0.0,
) -> GraphBundle:
    """Stochastic block model with Gaussian class-centred features.

    ``degree_spread > 0`` turns it into a degree-corrected block model: each
    node gets a log-normal propensity (sigma = degree_spread, mean 1) that
    multiplies its edge probabilities, giving hubs and a skewed centrality.
    ``noise_spread > 0`` gives each node its own feature noise scale
    (log-normal, mean ``noise_std``), so some nodes are intrinsically harder.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    if not (0.0 <= inter_p < intra_p <= 1.0):
        raise ValueError("need 0 <= inter_p < intra_p <= 1")
    if n_per_class < 1 or D < 1:
        raise ValueError("n_per_class and D must be positive")
    if noise_std < 0 or degree_spread < 0 or noise_spread < 0:
        raise ValueError("noise_std, degree_spread and noise_spread must be non-negative")
    rng = np.random.default_rng(seed)
    n = n_per_class * K
    y = np.repeat(np.arange(K), n_per_class)

    centers = rng.standard_normal((K, D))
    centers *= center_sep / np.linalg.norm(centers, axis=1, keepdims=True)
    scale = np.full((n, 1), noise_std)
    if noise_spread > 0:
        scale *= rng.lognormal(-0.5 * noise_spread**2, noise_spread, size=(n, 1))
    X = centers[y] + scale * rng.standard_normal((n, D)) if noise_std > 0 else centers[y].copy()

    if degree_spread > 0:
        theta = rng.lognormal(-0.5 * degree_spread**2, degree_spread, size=n)
    else:
        theta = np.ones(n)
    src, dst = [], []
    for i in range(n - 1):
        j = np.arange(i + 1, n)
        p = np.where(y[j] == y[i], intra_p, inter_p) * theta[i] * theta[j]
        hit = j[rng.random(j.size) < np.minimum(p, 1.0)]
        src.append(np.full(hit.size, i))
        dst.append(hit)
    edges = np.stack([np.concatenate(src), np.concatenate(dst)], axis=1) if src else np.empty((0, 2))
    return GraphBundle(n, edges, X, y, K, name)


def sample_labels(eta, seed: int) -> np.ndarray:
    """One categorical draw per row of ``eta``."""
    eta = np.asarray(getattr(eta, "eta", eta), dtype=np.float64)
    u = np.random.default_rng(seed).random(eta.shape[0])
    labels = (np.cumsum(eta, axis=1) <= u[:, None]).sum(axis=1)
    return np.minimum(labels, eta.shape[1] - 1).astype(np.int64)


def lipschitz_estimate(Z, eta) -> float:
    """max_k max_{i != j} |eta_k(i) - eta_k(j)| / ||Z_i - Z_j||, over all row pairs."""
    Z = np.asarray(Z, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    best = 0.0
    for lo in range(0, Z.shape[0], 128):
        dz = np.linalg.norm(Z[lo : lo + 128, None, :] - Z[None, :, :], axis=2)
        de = np.abs(eta[lo : lo + 128, None, :] - eta[None, :, :]).max(axis=2)
        ok = dz > 0
        if ok.any():
            best = max(best, float((de[ok] / dz[ok]).max()))
    return best


def _grid(n: int, dim: int, spacing: float) -> np.ndarray:
    side = max(2, math.ceil(n ** (1.0 / dim) - 1e-9)) if n > 1 else 1
    idx = np.arange(n)
    coords = np.empty((n, dim))
    for a in range(dim):
        coords[:, a] = idx % side
        idx = idx // side
    return coords * spacing


def label_field(Z, c: float, K: int, rng) -> np.ndarray:
    """Clipped affine class scores, centred so each row sums to 1; c-Lipschitz."""
    Z = np.asarray(Z, dtype=np.float64)
    dirs = rng.standard_normal((K, Z.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    cap = 1.0 / (2 * K - 2)
    s = np.clip(0.5 * c * (Z - Z.mean(axis=0)) @ dirs.T, -cap, cap)
    eta = 1.0 / K + s - s.mean(axis=1, keepdims=True)
    return np.clip(eta, 0.0, 1.0)


def gen_assumption_world(
    N_0: int,
    s_m: int,
    D_prime: int,
    epsilon_m: float,
    c: float,
    K: int,
    spread: float,
    seed: int,
) -> AssumptionWorld:
    """Training rows on a grid of spacing ``spread``; ``s_m`` test rows within
    ``epsilon_m`` of each. The first test row of every near set sits exactly
    at distance ``epsilon_m``, pointing at the grid centroid.
    """
    if not spread > 2 * epsilon_m:
        raise InfeasibleGeometry("infeasible geometry: spread must exceed 2 * epsilon_m")
    if N_0 < 1 or s_m < 1 or D_prime < 1 or K < 2:
        raise ValueError("N_0, s_m, D_prime must be positive and K >= 2")
    if not epsilon_m > 0 or c < 0:
        raise ValueError("epsilon_m must be positive and c non-negative")
    rng = np.random.default_rng(seed)
    train = _grid(N_0, D_prime, spread)
    centroid = train.mean(axis=0)

    rows = [train]
    for i in range(N_0):
        toward = centroid - train[i]
        nrm = np.linalg.norm(toward)
        first = toward / nrm if nrm > 0 else np.eye(D_prime)[0]
        pts = [train[i] + epsilon_m * first]
        for _ in range(s_m - 1):
            u = rng.standard_normal(D_prime)
            u /= np.linalg.norm(u)
            pts.append(train[i] + epsilon_m * rng.uniform(0.1, 1.0) * u)
        rows.append(np.array(pts))
    Z = np.concatenate(rows)
    n = Z.shape[0]

    eta = label_field(Z, c, K, rng)
    lip = lipschitz_estimate(Z, eta)
    if lip > c + 1e-9:
        raise RuntimeError(f"label field is {lip:.3g}-Lipschitz, exceeds c={c}")
    labels = sample_labels(eta, int(rng.integers(2**31)))

    bundle = GraphBundle(n, np.empty((0, 2)), Z, labels, K, "synthetic_assumption_world")
    V_0 = np.arange(N_0)
    V_m = np.arange(N_0, n)
    ns = build_near_sets(Z, V_0, V_m)
    if not ns.assumption2_holds or ns.s_m != s_m or abs(ns.epsilon_m - epsilon_m) > 1e-9:
        raise RuntimeError("constructed world does not have equal-sized disjoint near sets")
    return AssumptionWorld(
        bundle=bundle,
        Z=AggregatedFeatures.from_matrix(Z, AggregationSpec(AggregationKind.IDENTITY)),
        eta=LabelField(eta, lip),
        V_0=V_0,
        V_m=V_m,
        epsilon_m=ns.epsilon_m,
        s_m=s_m,
        c=float(c),
    )


def save_world(world: AssumptionWorld, dir_path) -> None:
    d = Path(dir_path)
    save_bundle(world.bundle, d)
    np.savetxt(d / "eta.csv", world.eta.eta, fmt="%.17g", delimiter=",")
    meta = {
        "epsilon_m": world.epsilon_m,
        "s_m": world.s_m,
        "c": world.c,
        "lipschitz_c": world.eta.lipschitz_c,
        "V_0": world.V_0.tolist(),
        "V_m": world.V_m.tolist(),
    }
    (d / "world.json").write_text(json.dumps(meta, indent=2) + "\n")


def is_world_dir(dir_path) -> bool:
    d = Path(dir_path)
    return (d / "world.json").is_file() and (d / "eta.csv").is_file()


def load_world(dir_path) -> AssumptionWorld:
    d = Path(dir_path)
    bundle = load_bundle(d)
    meta = json.loads((d / "world.json").read_text())
    eta = np.loadtxt(d / "eta.csv", delimiter=",", ndmin=2)
    if eta.shape != (bundle.num_nodes, bundle.num_classes):
        raise ValueError("eta.csv shape does not match the bundle")
    return AssumptionWorld(
        bundle=bundle,
        Z=AggregatedFeatures.from_matrix(bundle.features, AggregationSpec(AggregationKind.IDENTITY)),
        eta=LabelField(eta, float(meta["lipschitz_c"])),
        V_0=np.asarray(meta["V_0"], dtype=np.int64),
        V_m=np.asarray(meta["V_m"], dtype=np.int64),
        epsilon_m=float(meta["epsilon_m"]),
        s_m=int(meta["s_m"]),
        c=float(meta["c"]),
    )
