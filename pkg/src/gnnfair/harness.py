"""Repeated seeded trials: accuracy disparity, noisy features, biased selection, bound audits.

Every random draw in trial ``t`` comes from ``default_rng([base_seed, t, k])``
with a fixed stream id ``k`` per purpose, so results do not depend on worker
count or scheduling order.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.stats import spearmanr

from .aggregate import AggregationKind, AggregationSpec, aggregate_matrix
from .graph import GraphBundle, to_csr
from .model import TrainConfig, predict, train
from .pac_bayes import BoundConfig, theorem3_concrete
from .subgroups import (
    SplitKind,
    agg_distance_scores,
    centrality_scores,
    geodesic_scores,
    split_into_groups,
)
from .synth import AssumptionWorld, sample_labels

# random stream ids inside a trial
_SPLIT, _NOISE, _INIT, _BIASED, _HOLDOUT, _LABELS = range(6)

BIASED_TIER_DRAW = 15


class ModelKind(str, Enum):
    SGC_FORM = "sgc_form"
    MLP = "mlp"


class InfeasibleSplit(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrialPlan:
    bundle: GraphBundle
    model: ModelKind = ModelKind.SGC_FORM
    aggregation: AggregationSpec = AggregationSpec()
    split: SplitKind = SplitKind.AGG_DISTANCE
    groups: int = 5
    trials: int = 40
    train_per_class: int = 20
    val_count: int = 500
    test_count: int = 1000
    seed: int = 0
    train_cfg: TrainConfig = TrainConfig()

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind(self.model))
        object.__setattr__(self, "split", SplitKind(self.split))
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.groups < 1:
            raise ValueError("groups must be at least 1")
        if self.train_per_class < 1 or self.val_count < 1 or self.test_count < 1:
            raise ValueError("train/val/test sizes must be positive")
        if self.groups > self.test_count:
            raise InfeasibleSplit(f"cannot split {self.test_count} test nodes into {self.groups} groups")

    def check_sizes(self) -> None:
        """Raise InfeasibleSplit unless uniform splits of the configured sizes exist."""
        counts = np.bincount(self.bundle.labels, minlength=self.bundle.num_classes)
        if counts.min() < self.train_per_class:
            raise InfeasibleSplit(
                f"class {int(counts.argmin())} has {int(counts.min())} nodes, fewer than {self.train_per_class}"
            )
        need = self.train_per_class * self.bundle.num_classes + self.val_count + self.test_count
        if need > self.bundle.num_nodes:
            raise InfeasibleSplit(f"split needs {need} nodes but the bundle has {self.bundle.num_nodes}")

    def describe(self) -> dict:
        return {
            "bundle": self.bundle.name,
            "model": self.model.value,
            "aggregation": self.aggregation.kind.value,
            "split": self.split.value,
            "groups": self.groups,
            "trials": self.trials,
            "train_per_class": self.train_per_class,
            "val_count": self.val_count,
            "test_count": self.test_count,
            "seed": self.seed,
        }


def _rng(plan: TrialPlan, trial: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([plan.seed, trial, stream])


def _sub_seed(plan: TrialPlan, trial: int, stream: int) -> int:
    return int(_rng(plan, trial, stream).integers(2**31))


def _mean_or_none(xs):
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def _sem(xs):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size < 2:
        return None
    return float(xs.std(ddof=1) / math.sqrt(xs.size))


def spearman_rho(accs) -> float | None:
    """Rank correlation between group index 1..M and accuracy; None if undefined."""
    accs = np.asarray(accs, dtype=np.float64)
    if accs.size < 2 or np.all(accs == accs[0]):
        return None
    rho = spearmanr(np.arange(1, accs.size + 1), accs).statistic
    return None if not np.isfinite(rho) else float(rho)


# --------------------------------------------------------------------------
# splits and trial execution


def uniform_split(plan: TrialPlan, trial: int):
    """Per-class uniform training nodes, then val and test from the rest."""
    rng = _rng(plan, trial, _SPLIT)
    y = plan.bundle.labels
    tr = []
    for k in range(plan.bundle.num_classes):
        members = np.flatnonzero(y == k)
        tr.append(rng.choice(members, size=plan.train_per_class, replace=False))
    tr = np.sort(np.concatenate(tr))
    rest = np.setdiff1d(np.arange(plan.bundle.num_nodes), tr)
    perm = rng.permutation(rest)
    val = np.sort(perm[: plan.val_count])
    test = np.sort(perm[plan.val_count : plan.val_count + plan.test_count])
    return tr, val, test


def inject_noise(X, alpha: float, U) -> np.ndarray:
    """X + alpha (||X||_F / ||U||_F) U."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    X = np.asarray(X, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if U.shape != X.shape:
        raise ValueError("noise matrix must match the feature shape")
    if alpha == 0:
        return X.copy()
    return X + alpha * (np.linalg.norm(X) / np.linalg.norm(U)) * U


@dataclass(frozen=True, eq=False)
class _Context:
    """Per-bundle data shared by all trials of a run."""

    plan: TrialPlan
    features: np.ndarray
    model_input: np.ndarray
    split_Z: np.ndarray
    adj: object
    centrality: np.ndarray | None


def _context(plan: TrialPlan, features=None) -> _Context:
    plan.check_sizes()
    X = plan.bundle.features if features is None else features
    adj = to_csr(plan.bundle)
    spec = AggregationSpec(AggregationKind.IDENTITY) if plan.model is ModelKind.MLP else plan.aggregation
    model_input = aggregate_matrix(X, adj, spec)
    # subgroup distances always use the two-step aggregated features
    split_Z = aggregate_matrix(X, adj, AggregationSpec(AggregationKind.TWO_STEP_NORM))
    cent = None if plan.split.is_distance else centrality_scores(adj, plan.split)
    return _Context(plan, X, model_input, split_Z, adj, cent)


def _test_scores(ctx: _Context, tr, test) -> np.ndarray:
    kind = ctx.plan.split
    if kind is SplitKind.AGG_DISTANCE:
        return agg_distance_scores(ctx.split_Z, tr, test)
    if kind is SplitKind.GEODESIC:
        return geodesic_scores(ctx.adj, tr, test)
    return ctx.centrality[test]


def _train_cfg(plan: TrialPlan, trial: int) -> TrainConfig:
    return replace(plan.train_cfg, seed=_sub_seed(plan, trial, _INIT))


def _disparity_trial(args) -> dict:
    ctx, trial = args
    plan = ctx.plan
    tr, val, test = uniform_split(plan, trial)
    y = plan.bundle.labels
    model = train(ctx.model_input, y, tr, val, _train_cfg(plan, trial), plan.bundle.num_classes)
    correct = predict(model, ctx.model_input[test]) == y[test]
    scores = _test_scores(ctx, tr, test)
    pos = {int(v): i for i, v in enumerate(test)}
    rows = []
    for g, members in enumerate(split_into_groups(test, scores, plan.groups, plan.split.order), start=1):
        idx = np.array([pos[int(v)] for v in members])
        s = scores[idx]
        rows.append(
            {
                "trial": trial,
                "group": g,
                "size": int(idx.size),
                "accuracy": float(correct[idx].mean()),
                "score_min": float(s.min()),
                "score_max": float(s.max()),
            }
        )
    return {"trial": trial, "rows": rows, "rho": spearman_rho([r["accuracy"] for r in rows])}


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# reports


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def dumps(obj) -> str:
    """Canonical JSON text used for every report file."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


@dataclass
class DisparityReport:
    plan: dict
    group_means: list
    group_sems: list
    group_sizes: list
    mean_rho: float | None
    frac_rho_negative: float | None
    trial_rhos: list
    rows: list = field(repr=False)
    metadata: dict = field(default_factory=dict)

    @property
    def num_groups(self) -> int:
        return len(self.group_means)

    def to_json(self) -> dict:
        return {
            "plan": self.plan,
            "groups": [
                {"group": g + 1, "mean_accuracy": m, "std_err": s, "size": n}
                for g, (m, s, n) in enumerate(zip(self.group_means, self.group_sems, self.group_sizes))
            ],
            "mean_rho": self.mean_rho,
            "frac_rho_negative": self.frac_rho_negative,
            "trial_rhos": self.trial_rhos,
            "trials": self.rows,
            "metadata": self.metadata,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()


CSV_COLUMNS = ["trial", "group", "size", "accuracy", "score_min", "score_max"]


def _fold(plan: TrialPlan, results: list, metadata=None) -> DisparityReport:
    results = sorted(results, key=lambda r: r["trial"])
    M = plan.groups
    accs = np.array([[row["accuracy"] for row in r["rows"]] for r in results])
    rhos = [r["rho"] for r in results]
    finite = [p for p in rhos if p is not None]
    return DisparityReport(
        plan=plan.describe(),
        group_means=[float(accs[:, g].mean()) for g in range(M)],
        group_sems=[_sem(accs[:, g]) for g in range(M)],
        group_sizes=[int(r["size"]) for r in results[0]["rows"]],
        mean_rho=float(np.mean(finite)) if finite else None,
        frac_rho_negative=None if M < 2 else float(np.mean([p is not None and p < 0 for p in rhos])),
        trial_rhos=rhos,
        rows=[row for r in results for row in r["rows"]],
        metadata=metadata or {},
    )


def run_disparity(plan: TrialPlan, threads: int = 1, features=None, log=None) -> DisparityReport:
    ctx = _context(plan, features)
    results = []
    for res in _map(_disparity_trial, [(ctx, t) for t in range(plan.trials)], threads):
        if log:
            log(f"trial {res['trial']}: rho={res['rho']}")
        results.append(res)
    return _fold(plan, results)


# --------------------------------------------------------------------------
# noisy features


def _noisy_trial(args) -> dict:
    ctx, trial, alpha, noise = args
    plan = ctx.plan
    X = plan.bundle.features
    U = noise if noise is not None else _rng(plan, trial, _NOISE).random(X.shape)
    noisy_ctx = _context(plan, inject_noise(X, alpha, U))
    return _disparity_trial((noisy_ctx, trial))


def run_noisy(plan: TrialPlan, alpha: float, threads: int = 1, noise=None, log=None) -> dict:
    """Clean and noisy runs with identical splits and initial weights per trial.

    ``noise`` fixes U for every trial (test hook); otherwise U is drawn per
    trial with entries uniform on [0, 1).
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    clean = run_disparity(plan, threads=threads, log=log)
    ctx = _context(plan)
    items = [(ctx, t, float(alpha), noise) for t in range(plan.trials)]
    noisy = _fold(plan, _map(_noisy_trial, items, threads), {"noise_alpha": float(alpha)})
    clean.metadata["noise_alpha"] = 0.0
    return {"clean": clean, "noisy": noisy}


# --------------------------------------------------------------------------
# biased training selection


def tier_size(class_size: int) -> int:
    return math.ceil(0.1 * class_size)


def biased_train_set(plan: TrialPlan, centrality, dominant_class: int, rng) -> np.ndarray:
    """Dominant class: 15 from its top-10% centrality tier plus the rest from
    the other class members. Every other class: 15 from its bottom-10% tier."""
    y = plan.bundle.labels
    extra = plan.train_per_class - BIASED_TIER_DRAW
    if extra < 0:
        raise InfeasibleSplit(f"train_per_class must be at least {BIASED_TIER_DRAW} for biased selection")
    out = []
    for k in range(plan.bundle.num_classes):
        members = np.flatnonzero(y == k)
        t = tier_size(members.size)
        if members.size < plan.train_per_class or t < BIASED_TIER_DRAW:
            raise InfeasibleSplit(
                f"class {k}: 10% tier has {t} nodes, need at least {BIASED_TIER_DRAW} to sample from"
            )
        c = centrality[members]
        key = -c if k == dominant_class else c
        ranked = members[np.lexsort((members, key))]
        tier, rest = ranked[:t], ranked[t:]
        out.append(rng.choice(tier, size=BIASED_TIER_DRAW, replace=False))
        out.append(rng.choice(rest, size=extra, replace=False))
    return np.sort(np.concatenate(out))


def false_positive_rates(pred, truth, K: int) -> list:
    """FPR_k = FP_k / (FP_k + TN_k); None when class k has no negatives."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    out = []
    for k in range(K):
        neg = truth != k
        n = int(neg.sum())
        out.append(None if n == 0 else float((pred[neg] == k).sum() / n))
    return out


def _ratio(a, b):
    if a is None or b is None:
        return None
    if b == 0:
        return None if a == 0 else math.inf
    return a / b


def _biased_trial(args) -> dict:
    ctx, trial, dominant = args
    plan = ctx.plan
    y = plan.bundle.labels
    K = plan.bundle.num_classes
    tr_uniform, _, _ = uniform_split(plan, trial)
    tr_biased = biased_train_set(plan, ctx.centrality, dominant, _rng(plan, trial, _BIASED))
    rest = np.setdiff1d(np.arange(plan.bundle.num_nodes), np.union1d(tr_uniform, tr_biased))
    if rest.size < plan.val_count + plan.test_count:
        raise InfeasibleSplit("not enough nodes left for val/test after both training draws")
    perm = _rng(plan, trial, _HOLDOUT).permutation(rest)
    val = np.sort(perm[: plan.val_count])
    test = np.sort(perm[plan.val_count : plan.val_count + plan.test_count])
    cfg = _train_cfg(plan, trial)
    fprs = {}
    for arm, tr in (("uniform", tr_uniform), ("biased", tr_biased)):
        model = train(ctx.model_input, y, tr, val, cfg, K)
        fprs[arm] = false_positive_rates(predict(model, ctx.model_input[test]), y[test], K)
    ratios = [_ratio(b, u) for b, u in zip(fprs["biased"], fprs["uniform"])]
    return {"trial": trial, "fpr_uniform": fprs["uniform"], "fpr_biased": fprs["biased"], "ratio": ratios}


def run_biased_selection(plan: TrialPlan, centrality, dominant_class: int, threads: int = 1, log=None) -> dict:
    """Per-class mean FPR ratio (biased / uniform) over trials.

    Ratios with a zero uniform FPR are excluded from the means: 0/0 is
    undefined, and x/0 is reported as inf in the per-trial table only.
    """
    kind = SplitKind(centrality)
    if kind.is_distance:
        raise ValueError(f"{kind.value} is not a centrality")
    K = plan.bundle.num_classes
    if not 0 <= dominant_class < K:
        raise ValueError(f"dominant class must be in [0, {K})")
    ctx = _context(replace(plan, split=kind))
    results = sorted(_map(_biased_trial, [(ctx, t, dominant_class) for t in range(plan.trials)], threads),
                     key=lambda r: r["trial"])
    if log:
        for r in results:
            log(f"trial {r['trial']}: ratios={r['ratio']}")
    per_class = []
    for k in range(K):
        vals = [r["ratio"][k] for r in results if r["ratio"][k] is not None and math.isfinite(r["ratio"][k])]
        per_class.append(
            {
                "class": k,
                "mean_ratio": _mean_or_none(vals),
                "num_defined": len(vals),
                "mean_fpr_uniform": _mean_or_none([r["fpr_uniform"][k] for r in results]),
                "mean_fpr_biased": _mean_or_none([r["fpr_biased"][k] for r in results]),
            }
        )
    return {
        "plan": replace(plan, split=kind).describe(),
        "centrality": kind.value,
        "dominant_class": dominant_class,
        "classes": per_class,
        "trials": results,
        "metadata": {"model_substitution": "aggregation+MLP form stands in for GCN/GAT"},
    }


# --------------------------------------------------------------------------
# bound audit


def _bound_trial(args) -> list:
    ctx, trial, cfg, world = args
    plan = ctx.plan
    if world is not None:
        Z = world.Z.Z
        y = sample_labels(world.eta, _sub_seed(plan, trial, _LABELS))
        tr, test, eta = world.V_0, world.V_m, world.eta.eta
        c = cfg.c if cfg.c is not None else world.c
        model = train(Z, y, tr, None, _train_cfg(plan, trial), world.bundle.num_classes)
        scores = agg_distance_scores(Z, tr, test)
        order = "ascending"
    else:
        Z = ctx.model_input
        y = plan.bundle.labels
        tr, val, test = uniform_split(plan, trial)
        eta, c = None, cfg.c
        model = train(Z, y, tr, val, _train_cfg(plan, trial), plan.bundle.num_classes)
        scores = _test_scores(ctx, tr, test)
        order = plan.split.order
    groups = split_into_groups(test, scores, plan.groups, order)
    # one covering bound for every group keeps the RHS comparable across groups
    B = float(np.linalg.norm(Z[np.concatenate([tr, test])], axis=1).max())
    seeded = replace(cfg, c=c, seed=_sub_seed(plan, trial, _LABELS + 1))
    reports = []
    for g, members in enumerate(groups, start=1):
        r = theorem3_concrete(model, Z, y, tr, members, seeded, eta=eta, feature_bound=B, group=g)
        r.trial = trial
        reports.append(r)
    return reports


def rhs_order_violations(reports, key: str = "theorem3_covered_rhs") -> int:
    """Pairs within a trial where a larger epsilon_m has a strictly smaller RHS."""
    by_trial = {}
    for r in reports:
        by_trial.setdefault(r.trial, []).append(r)
    bad = 0
    for rs in by_trial.values():
        rs = sorted(rs, key=lambda r: (r.epsilon_m, getattr(r, key)))
        vals = [getattr(r, key) for r in rs]
        bad += sum(b < a for a, b in zip(vals, vals[1:]))
    return bad


def run_bound_audit(plan: TrialPlan, cfg: BoundConfig, world: AssumptionWorld | None = None,
                    threads: int = 1, log=None) -> list:
    """theorem3_concrete for each subgroup of each trial, flattened in (trial, group) order.

    With ``world`` the training/test sets come from the world, labels are
    redrawn from its label field every trial, and the MLP sees Z directly.
    """
    if world is None and cfg.c is None:
        raise ValueError("c (Lipschitz constant of the label field) must be supplied for non-synthetic data")
    if world is not None and plan.groups > world.V_m.size:
        raise InfeasibleSplit(f"cannot split {world.V_m.size} test nodes into {plan.groups} groups")
    ctx = None if world is not None else _context(plan)
    if world is not None:
        ctx = _Context(plan, world.Z.Z, world.Z.Z, world.Z.Z, None, None)
    out = []
    for reports in _map(_bound_trial, [(ctx, t, cfg, world) for t in range(plan.trials)], threads):
        if log:
            log(f"trial {reports[0].trial}: rhs={[round(r.theorem3_covered_rhs, 4) for r in reports]}")
        out.extend(reports)
    return out


def world_plan(world: AssumptionWorld, groups: int, trials: int, seed: int, train_cfg=None) -> TrialPlan:
    """A plan for an assumption world; train and test sets come from the world itself."""
    return TrialPlan(
        bundle=world.bundle,
        model=ModelKind.MLP,
        aggregation=AggregationSpec(AggregationKind.IDENTITY),
        split=SplitKind.AGG_DISTANCE,
        groups=groups,
        trials=trials,
        train_per_class=1,
        val_count=1,
        test_count=world.V_m.size,
        seed=seed,
        train_cfg=train_cfg or TrainConfig(),
    )
