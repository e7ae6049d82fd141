"""Command-line entry point: ``gnnfair audit|bound|experiment|synth``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .aggregate import AggregationKind, AggregationSpec
from .graph import load_bundle, save_bundle
from .harness import (
    ModelKind,
    TrialPlan,
    dumps,
    rhs_order_violations,
    run_biased_selection,
    run_bound_audit,
    run_disparity,
    run_noisy,
    world_plan,
)
from .model import TrainConfig
from .pac_bayes import BoundConfig
from .subgroups import SplitKind
from .synth import gen_assumption_world, gen_homophilous, is_world_dir, load_world, save_world

SPLITS = {
    "agg": SplitKind.AGG_DISTANCE,
    "geodesic": SplitKind.GEODESIC,
    "degree": SplitKind.DEGREE,
    "closeness": SplitKind.CLOSENESS,
    "betweenness": SplitKind.BETWEENNESS,
    "pagerank": SplitKind.PAGERANK,
}
MODELS = {"sgc": ModelKind.SGC_FORM, "mlp": ModelKind.MLP}


class UsageError(Exception):
    def __init__(self, flag, msg):
        super().__init__(f"{flag}: {msg}")


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {s}")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be a non-negative integer, got {s}")
    return v


def _nonneg_float(s):
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {s}")
    return v


def _common(p, bundle_required=True):
    p.add_argument("--bundle", required=bundle_required, type=Path, help="graph bundle directory")
    p.add_argument("--out", required=True, type=Path, help="output JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)
    p.add_argument("-v", "--verbose", action="store_true", help="log one line per trial to stderr")


def _plan_flags(p, model_default="sgc"):
    p.add_argument("--model", choices=sorted(MODELS), default=model_default)
    p.add_argument("--aggregation", choices=[k.value for k in AggregationKind], default="two_step_norm")
    p.add_argument("--split", choices=list(SPLITS), default="agg")
    p.add_argument("--groups", type=_positive_int, default=5)
    p.add_argument("--trials", type=_positive_int, default=40)
    p.add_argument("--train-per-class", type=_positive_int, default=20)
    p.add_argument("--val", type=_positive_int, default=500)
    p.add_argument("--test", type=_positive_int, default=1000)
    p.add_argument("--epochs", type=_positive_int, default=400)
    p.add_argument("--patience", type=_positive_int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnnfair", description="Subgroup accuracy audits and PAC-Bayes bounds for GNNs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit", help="per-subgroup accuracy over repeated trials")
    _common(p)
    _plan_flags(p)

    p = sub.add_parser("bound", help="subgroup PAC-Bayes bound per test subgroup")
    _common(p)
    _plan_flags(p, model_default="mlp")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--c", type=float, default=None, help="Lipschitz constant of the label field")
    p.add_argument("--mc-samples", type=_nonneg_int, default=0)

    p = sub.add_parser("experiment", help="noisy-feature and biased-selection experiments")
    esub = p.add_subparsers(dest="experiment", required=True)
    e = esub.add_parser("noisy")
    _common(e)
    _plan_flags(e)
    e.add_argument("--alpha", type=_nonneg_float, default=5.0)
    e = esub.add_parser("biased")
    _common(e)
    _plan_flags(e)
    e.add_argument("--centrality", choices=["degree", "closeness", "betweenness", "pagerank"], default="pagerank")
    e.add_argument("--dominant-class", type=_nonneg_int, required=True)

    p = sub.add_parser("synth", help="write a synthetic bundle directory")
    ssub = p.add_subparsers(dest="kind", required=True)
    s = ssub.add_parser("homophily")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--force", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-per-class", type=_positive_int, default=400)
    s.add_argument("--classes", type=_positive_int, default=4)
    s.add_argument("--dim", type=_positive_int, default=16)
    s.add_argument("--intra-p", type=float, default=0.006)
    s.add_argument("--inter-p", type=float, default=0.0006)
    s.add_argument("--center-sep", type=_nonneg_float, default=2.0)
    s.add_argument("--noise-std", type=_nonneg_float, default=1.0)
    s.add_argument("--noise-spread", type=_nonneg_float, default=0.8)
    s.add_argument("--degree-spread", type=_nonneg_float, default=0.0)
    s = ssub.add_parser("assumption-world")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--force", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n0", type=_positive_int, required=True)
    s.add_argument("--sm", type=_positive_int, required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--spread", type=float, required=True)
    s.add_argument("--dim", type=_positive_int, default=2)
    s.add_argument("--c", type=_nonneg_float, default=0.5)
    s.add_argument("--classes", type=_positive_int, default=2)
    return parser


# --------------------------------------------------------------------------


def _log(args):
    if not getattr(args, "verbose", False):
        return None
    return lambda msg: print(msg, file=sys.stderr, flush=True)


def _check_out_file(args):
    parent = args.out.parent
    if parent and not parent.exists():
        raise UsageError("--out", f"directory {parent} does not exist")


def _load(args):
    if not args.bundle.is_dir():
        raise UsageError("--bundle", f"{args.bundle} is not a directory")
    return load_bundle(args.bundle)


def _plan(args, bundle, split=None) -> TrialPlan:
    try:
        plan = TrialPlan(
            bundle=bundle,
            model=MODELS[args.model],
            aggregation=AggregationSpec(args.aggregation),
            split=split or SPLITS[args.split],
            groups=args.groups,
            trials=args.trials,
            train_per_class=args.train_per_class,
            val_count=args.val,
            test_count=args.test,
            seed=args.seed,
            train_cfg=TrainConfig(max_epochs=args.epochs, patience=args.patience),
        )
        plan.check_sizes()
    except ValueError as exc:
        raise UsageError("--groups/--train-per-class/--val/--test", str(exc)) from None
    return plan


def _write(path: Path, text: str):
    path.write_text(text)


def cmd_audit(args) -> int:
    _check_out_file(args)
    plan = _plan(args, _load(args))
    report = run_disparity(plan, threads=args.threads, log=_log(args))
    _write(args.out, dumps(report.to_json()))
    _write(args.out.with_suffix(".csv"), report.to_csv())
    return 0


def cmd_bound(args) -> int:
    _check_out_file(args)
    try:
        cfg = BoundConfig(gamma=args.gamma, alpha=args.alpha, lam=args.lam, delta=args.delta, c=args.c,
                          mc_samples=args.mc_samples, seed=args.seed)
    except ValueError as exc:
        msg = str(exc)
        flag = next((f"--{n}" for n in ("alpha", "gamma", "delta", "lambda", "c", "mc_samples") if msg.startswith(n)), "--gamma")
        raise UsageError(flag.replace("lambda", "lam").replace("_", "-"), msg) from None
    if args.mc_samples and args.mc_samples < 100:
        raise UsageError("--mc-samples", "needs at least 100 samples when non-zero")
    if not args.bundle.is_dir():
        raise UsageError("--bundle", f"{args.bundle} is not a directory")
    if is_world_dir(args.bundle):
        world = load_world(args.bundle)
        tc = TrainConfig(max_epochs=args.epochs, patience=args.patience)
        try:
            plan = world_plan(world, args.groups, args.trials, args.seed, tc)
        except ValueError as exc:
            raise UsageError("--groups", str(exc)) from None
        if args.groups > world.V_m.size:
            raise UsageError("--groups", f"cannot split {world.V_m.size} test nodes into {args.groups} groups")
    else:
        if cfg.c is None:
            raise UsageError("--c", "required for bundles without a known label field")
        world = None
        plan = _plan(args, load_bundle(args.bundle))
    reports = run_bound_audit(plan, cfg, world=world, threads=args.threads, log=_log(args))
    out = {
        "plan": plan.describe(),
        "assumption_world": world is not None,
        "rhs_order_violations": rhs_order_violations(reports),
        "reports": [r.to_json() for r in reports],
    }
    _write(args.out, dumps(out))
    return 0


def cmd_experiment(args) -> int:
    _check_out_file(args)
    bundle = _load(args)
    if args.experiment == "noisy":
        plan = _plan(args, bundle)
        res = run_noisy(plan, args.alpha, threads=args.threads, log=_log(args))
        _write(args.out, dumps({"alpha": args.alpha, "clean": res["clean"].to_json(), "noisy": res["noisy"].to_json()}))
        return 0
    if args.dominant_class >= bundle.num_classes:
        raise UsageError("--dominant-class", f"must be below the class count {bundle.num_classes}")
    plan = _plan(args, bundle)
    res = run_biased_selection(plan, SPLITS[args.centrality], args.dominant_class, threads=args.threads, log=_log(args))
    _write(args.out, dumps(res))
    return 0


def _prepare_dir(args):
    d = args.out
    if d.exists() and not d.is_dir():
        raise UsageError("--out", f"{d} exists and is not a directory")
    if d.is_dir() and any(d.iterdir()) and not args.force:
        raise UsageError("--out", f"{d} is not empty; pass --force to overwrite")
    d.mkdir(parents=True, exist_ok=True)


def cmd_synth(args) -> int:
    if args.kind == "homophily":
        if not 0 <= args.inter_p < args.intra_p <= 1:
            raise UsageError("--intra-p/--inter-p", "need 0 <= inter-p < intra-p <= 1")
        if args.classes < 2:
            raise UsageError("--classes", "need at least 2 classes")
        _prepare_dir(args)
        b = gen_homophilous(args.n_per_class, args.classes, args.dim, args.intra_p, args.inter_p,
                            args.center_sep, args.noise_std, args.seed, degree_spread=args.degree_spread,
                            noise_spread=args.noise_spread)
        save_bundle(b, args.out)
        return 0
    if not args.eps > 0:
        raise UsageError("--eps", "must be positive")
    if not args.spread > 2 * args.eps:
        raise UsageError("--spread", "infeasible geometry: spread must exceed 2 * eps")
    if args.classes < 2:
        raise UsageError("--classes", "need at least 2 classes")
    _prepare_dir(args)
    w = gen_assumption_world(args.n0, args.sm, args.dim, args.eps, args.c, args.classes, args.spread, args.seed)
    save_world(w, args.out)
    return 0


COMMANDS = {"audit": cmd_audit, "bound": cmd_bound, "experiment": cmd_experiment, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad flags
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gnnfair: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 1
        print(f"gnnfair: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
