"""Command-line entry points.

Subcommands: synth (generate a synthetic corpus), approximate (fit the
compressed transition model), propagate (spread labels from a seeded labeled
subset), experiment (accuracy sweeps over labeled fractions and the timing
sweep over dataset sizes). Options may come from a key=value config file;
command-line flags win.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .anchor_tree import build_cluster_tree
from .dataset import (
    SyntheticSpec,
    block_topic_alphas,
    generate_synthetic,
    load_bow,
    load_labels,
    smooth,
    write_bow,
    write_labels,
)
from .divergence import COUNT_KINDS, KINDS, DivergenceSpec
from .model_io import load_model, save_model
from .partition import auto_refine, coarsest_partition, finest_partition
from .propagation import (
    PropagationConfig,
    TransitionModel,
    classify_one_vs_all,
    dense_transition_matrix,
    evaluate_accuracy,
    propagate_labels,
)
from .variational import exact_loglik, lower_bound, optimize_q

DEFAULT_EPSILON = 0.5  # additive count smoothing for positive-domain kinds
DEFAULT_ALPHA = 0.01
DEFAULT_ITERS = 300
DEFAULT_MAX_EXACT_N = 8192
SIGMA_STREAM = 0xD157  # fixed sub-stream for the bandwidth policy


def _float_list(text):
    return [float(t) for t in str(text).split(",") if t != ""]


def _int_list(text):
    return [int(t) for t in str(text).split(",") if t != ""]


def _str_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _read_config(path):
    out = {}
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{ln}: expected key=value")
        key, val = line.split("=", 1)
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def _merge_config(args, parser_types):
    if getattr(args, "config", None):
        cfg = _read_config(args.config)
        for key, conv in parser_types.items():
            if getattr(args, key, None) is None and key in cfg:
                setattr(args, key, conv(cfg[key]))
    return args


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def default_sigma(data, seed, pairs=1000):
    """Bandwidth policy: median Euclidean distance over seeded random pairs."""
    rng = np.random.default_rng([int(seed), SIGMA_STREAM])
    n = data.n_rows
    i = rng.integers(0, n, pairs)
    j = rng.integers(0, n - 1, pairs)
    j[j >= i] += 1
    xi = np.asarray(data.csr()[i].todense())
    xj = np.asarray(data.csr()[j].todense())
    med = float(np.median(np.linalg.norm(xi - xj, axis=1)))
    return med if med > 0 else 1.0


def make_divergence_spec(kind, data, sigma=None, epsilon=None, seed=0):
    """Resolve defaults: epsilon 0.5 for count kinds, sigma by the median
    policy for sq-euclidean. Returns (spec, notes)."""
    if kind not in KINDS:
        raise ValueError(f"unknown divergence {kind!r}; choose from {KINDS}")
    notes = {}
    if epsilon is None:
        epsilon = DEFAULT_EPSILON if kind in COUNT_KINDS else 0.0
    notes["epsilon"] = epsilon
    if kind == "sq-euclidean":
        if sigma is None:
            sigma = default_sigma(data, seed)
            notes["sigma_policy"] = "median-random-pairs"
        notes["sigma"] = sigma
    spec = DivergenceSpec(kind, data.n_cols, sigma=sigma or 1.0, epsilon=epsilon)
    return spec, notes


def build_model(data, spec, partition_mode, max_finest_n=2048):
    """Tree, partition, optimized parameters; returns model + report + timings."""
    timings = {}
    smoothed = smooth(data, spec.epsilon)
    t0 = time.perf_counter()
    tree = build_cluster_tree(smoothed, spec)
    timings["tree_seconds"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    if partition_mode == "coarsest":
        part = coarsest_partition(tree)
    elif partition_mode == "finest":
        part = finest_partition(tree, cap=max_finest_n)
    elif partition_mode.startswith("refine:"):
        rounds = int(partition_mode.split(":", 1)[1])
        part = auto_refine(coarsest_partition(tree), tree, rounds)
    else:
        raise ValueError(f"unknown partition mode {partition_mode!r}")
    timings["partition_seconds"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    params = optimize_q(tree, part, spec, smoothed)
    timings["optimize_seconds"] = time.perf_counter() - t0
    report = lower_bound(params, part, tree, spec, smoothed)
    model = TransitionModel(tree, part, params, spec)
    return model, report, smoothed, timings


def stratified_subset(ids, labels, fraction, rng):
    """Seeded stratified labeled subset, at least one id per class."""
    if not 0 < fraction < 1:
        raise ValueError("labeled fraction must be in (0, 1)")
    by_class = {}
    for rid in ids:
        by_class.setdefault(labels.assignments[rid], []).append(rid)
    chosen = []
    for cls in sorted(by_class):
        members = by_class[cls]
        k = min(len(members), max(1, round(fraction * len(members))))
        pick = rng.choice(len(members), size=k, replace=False)
        chosen.extend(members[p] for p in sorted(pick))
    if len(chosen) >= len(ids):
        raise ValueError("labeled subset covers all rows; nothing to predict")
    return set(chosen)


def one_hot_seed(ids, labels, labeled_ids):
    y0 = np.zeros((len(ids), labels.n_classes))
    for k, rid in enumerate(ids):
        if rid in labeled_ids:
            y0[k, labels.assignments[rid]] = 1.0
    return y0


def run_propagation(operator, ids, labels, labeled_ids, config):
    y0 = one_hot_seed(ids, labels, labeled_ids)
    scores = propagate_labels(operator, y0, config)
    classes, unreached = classify_one_vs_all(scores)
    accuracy = evaluate_accuracy(classes, labels, ids, labeled_ids)
    return scores, classes, unreached, accuracy


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args):
    k = args.classes
    lambdas = args.mean_length if args.mean_length else [80.0]
    if len(lambdas) == 1:
        lambdas = lambdas * k
    if len(lambdas) != k:
        raise ValueError("--mean-length must have 1 or --classes entries")
    alphas = block_topic_alphas(k, args.dim, args.overlap)
    spec = SyntheticSpec(alphas, np.array(lambdas), args.rows, args.seed)
    data, labels = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_bow(data, out / "data.bow")
    write_labels(out / "labels.csv", data.ids, labels)
    counts = np.bincount(
        [labels.assignments[r] for r in data.ids], minlength=k
    )
    print(f"wrote {out / 'data.bow'} and {out / 'labels.csv'}")
    print(f"N={data.n_rows} d={data.n_cols} K={k}")
    for cls in range(k):
        print(f"class {labels.names[cls]}: {counts[cls]} rows")
    return 0


# ---------------------------------------------------------------------------
# approximate
# ---------------------------------------------------------------------------


def cmd_approximate(args):
    t_load = time.perf_counter()
    data = load_bow(args.input, args.format)
    timings = {"load_seconds": time.perf_counter() - t_load}
    spec, notes = make_divergence_spec(
        args.divergence, data, sigma=args.sigma, epsilon=args.epsilon, seed=args.seed
    )
    model, report, smoothed, build_timings = build_model(
        data, spec, args.partition, max_finest_n=args.max_exact_n
    )
    timings.update(build_timings)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    extras = dict(notes)
    extras["input"] = str(args.input)
    extras["partition_mode"] = args.partition
    extras["counts_normalization"] = "raw"
    save_model(out, model, report, data.ids, extras=extras)
    build_report = {
        "n_points": data.n_rows,
        "dim": data.n_cols,
        "divergence": spec.kind,
        "epsilon": spec.epsilon,
        "sigma": spec.sigma if spec.kind == "sq-euclidean" else None,
        "partition": args.partition,
        "n_blocks": model.partition.n_blocks,
        "ell": report.ell,
        "constraint_residual": model.params.residual,
        "converged": model.params.converged,
        "optimizer_sweeps": model.params.sweeps,
        "timings": timings,
        "notes": extras,
    }
    if args.exact:
        if data.n_rows > args.max_exact_n:
            raise ValueError(
                f"--exact refused for N={data.n_rows} > --max-exact-n={args.max_exact_n}"
            )
        exact = exact_loglik(smoothed, spec, cap=args.max_exact_n)
        build_report["exact_loglik"] = exact
        build_report["bound_gap"] = exact - report.ell
    report_path = args.report or str(out) + ".report.json"
    Path(report_path).write_text(json.dumps(build_report, indent=2, sort_keys=True))
    print(f"model written to {out}")
    print(
        f"N={data.n_rows} blocks={model.partition.n_blocks} ell={report.ell:.6f} "
        f"residual={model.params.residual:.3e}"
    )
    if args.exact:
        print(f"exact={build_report['exact_loglik']:.6f} gap={build_report['bound_gap']:.6e}")
    if not model.params.converged:
        print("warning: optimizer did not reach the target residual", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# propagate
# ---------------------------------------------------------------------------


def cmd_propagate(args):
    model, report, meta = load_model(args.model)
    ids = meta["ids"]
    labels = load_labels(args.labels)
    missing = [rid for rid in ids if rid not in labels.assignments]
    if missing:
        raise ValueError(f"labels file is missing id {missing[0]!r}")
    rng = np.random.default_rng([args.seed, 0])
    labeled = stratified_subset(ids, labels, args.labeled_fraction, rng)
    config = PropagationConfig(alpha=args.alpha, iterations=args.iters)
    t0 = time.perf_counter()
    scores, classes, unreached, accuracy = run_propagation(
        model, ids, labels, labeled, config
    )
    prop_seconds = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "predictions.csv", "w", encoding="utf-8") as fh:
        fh.write("id,predicted_class,score\n")
        for k, rid in enumerate(ids):
            name = labels.names[classes[k]]
            fh.write(f"{rid},{name},{scores[k, classes[k]]:.12g}\n")
    per_class = {}
    for cls in range(labels.n_classes):
        rows = [
            k
            for k, rid in enumerate(ids)
            if rid not in labeled and labels.assignments[rid] == cls
        ]
        if rows:
            per_class[labels.names[cls]] = sum(
                1 for k in rows if classes[k] == cls
            ) / len(rows)
    metrics = {
        "accuracy": accuracy,
        "per_class_accuracy": per_class,
        "n_labeled": len(labeled),
        "n_unreached": int(unreached.sum()),
        "config": {
            "alpha": config.alpha,
            "iterations": config.iterations,
            "labeled_fraction": args.labeled_fraction,
            "seed": args.seed,
            "model": str(args.model),
        },
        "timings": {"propagate_seconds": prop_seconds},
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    print(f"accuracy over unlabeled rows: {accuracy:.4f}")
    print(f"predictions written to {out / 'predictions.csv'}")
    return 0


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


def _parse_methods(tokens):
    out = []
    for tok in tokens:
        if ":" not in tok:
            raise ValueError(f"method {tok!r} must look like bvdt:<kind> or exact:<kind>")
        family, kind = tok.split(":", 1)
        if family not in ("bvdt", "exact"):
            raise ValueError(f"unknown method family {family!r}")
        if kind not in KINDS:
            raise ValueError(f"unknown divergence {kind!r} in method {tok!r}")
        out.append((family, kind))
    return out


def _method_operator(family, kind, data, args, seed):
    """Build the transition operator for one method; returns (operator, ids,
    build_seconds)."""
    spec, _ = make_divergence_spec(
        kind, data, sigma=args.sigma, epsilon=args.epsilon, seed=seed
    )
    if family == "bvdt":
        model, _, _, timings = build_model(
            data, spec, args.partition, max_finest_n=args.max_exact_n
        )
        build_s = (
            timings["tree_seconds"]
            + timings["partition_seconds"]
            + timings["optimize_seconds"]
        )
        return model, build_s
    if data.n_rows > args.max_exact_n:
        raise ValueError(
            f"exact method refused for N={data.n_rows} > --max-exact-n={args.max_exact_n}"
        )
    t0 = time.perf_counter()
    base = dense_transition_matrix(
        smooth(data, spec.epsilon), spec, cap=args.max_exact_n, keep_w=False
    )
    return base, time.perf_counter() - t0


def _load_experiment_data(args):
    if args.input:
        if not args.labels:
            raise ValueError("--labels is required with --input")
        data = load_bow(args.input, args.format)
        labels = load_labels(args.labels)
        missing = [rid for rid in data.ids if rid not in labels.assignments]
        if missing:
            raise ValueError(f"labels file is missing id {missing[0]!r}")
        return data, labels
    return _synthesize(args, args.rows, args.seed)


def _synthesize(args, rows, seed):
    lambdas = args.mean_length if args.mean_length else [80.0]
    if len(lambdas) == 1:
        lambdas = lambdas * args.classes
    alphas = block_topic_alphas(args.classes, args.dim, args.overlap)
    spec = SyntheticSpec(alphas, np.array(lambdas), rows, seed)
    return generate_synthetic(spec)


def cmd_experiment(args):
    methods = _parse_methods(args.methods)
    config = PropagationConfig(alpha=args.alpha, iterations=args.iters)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.scaling_rows:
        rows_list = sorted(args.scaling_rows)
        lines = ["method,n_rows,build_seconds,propagate_seconds,total_seconds"]
        times = {m: [] for m in methods}
        for n in rows_list:
            data, labels = _synthesize(args, n, [args.seed, n])
            rng = np.random.default_rng([args.seed, n, 0])
            labeled = stratified_subset(data.ids, labels, args.labeled_fraction, rng)
            for family, kind in methods:
                op, build_s = _method_operator(family, kind, data, args, args.seed)
                t0 = time.perf_counter()
                _, _, _, acc = run_propagation(op, data.ids, labels, labeled, config)
                prop_s = time.perf_counter() - t0
                total = build_s + prop_s
                times[(family, kind)].append(total)
                lines.append(
                    f"{family}:{kind},{n},{build_s:.6f},{prop_s:.6f},{total:.6f}"
                )
                print(
                    f"{family}:{kind} N={n} build={build_s:.2f}s "
                    f"propagate={prop_s:.2f}s accuracy={acc:.4f}"
                )
        (out / "scaling.csv").write_text("\n".join(lines) + "\n")
        logn = np.log(np.asarray(rows_list, dtype=float))
        for (family, kind), ts in times.items():
            slope = float(np.polyfit(logn, np.log(np.maximum(ts, 1e-9)), 1)[0])
            print(f"{family}:{kind} log-log slope: {slope:.3f}")
        print(f"scaling table written to {out / 'scaling.csv'}")
        return 0

    data, labels = _load_experiment_data(args)
    fractions = sorted(args.fractions)
    operators = {}
    build_seconds = {}
    for family, kind in methods:
        operators[(family, kind)], build_seconds[(family, kind)] = _method_operator(
            family, kind, data, args, args.seed
        )
    lines = [
        "method,fraction,trials,mean_accuracy,ci95,mean_seconds,build_seconds"
    ]
    for fraction in fractions:
        for family, kind in methods:
            accs, secs = [], []
            for trial in range(args.trials):
                rng = np.random.default_rng([args.seed, trial])
                labeled = stratified_subset(data.ids, labels, fraction, rng)
                t0 = time.perf_counter()
                _, _, _, acc = run_propagation(
                    operators[(family, kind)], data.ids, labels, labeled, config
                )
                secs.append(time.perf_counter() - t0)
                accs.append(acc)
            mean = float(np.mean(accs))
            sd = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
            ci = 1.96 * sd / np.sqrt(len(accs))
            lines.append(
                f"{family}:{kind},{fraction:.10g},{args.trials},"
                f"{mean:.10g},{ci:.10g},{np.mean(secs):.6f},"
                f"{build_seconds[(family, kind)]:.6f}"
            )
            print(
                f"{family}:{kind} fraction={fraction:g} "
                f"accuracy={mean:.4f} +- {ci:.4f}"
            )
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    print(f"sweep table written to {out / 'sweep.csv'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", help="key=value config file; flags win")
    sub.add_argument("--seed", type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="blockwalk",
        description="Compressed transition-matrix approximation and label propagation",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--mean-length", dest="mean_length", type=_float_list, default=None)
    p.add_argument("--overlap", type=float, default=None)
    p.add_argument("--out", default=None)

    p = subs.add_parser("approximate", help="fit the compressed transition model")
    _add_common(p)
    p.add_argument("--input", default=None)
    p.add_argument("--format", choices=["uci-bow", "dense-csv"], default=None)
    p.add_argument("--divergence", default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--partition", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--exact", action="store_true", default=None)
    p.add_argument("--max-exact-n", dest="max_exact_n", type=int, default=None)

    p = subs.add_parser("propagate", help="spread labels from a seeded subset")
    _add_common(p)
    p.add_argument("--model", default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--labeled-fraction", dest="labeled_fraction", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--out", default=None)

    p = subs.add_parser("experiment", help="accuracy and timing sweeps")
    _add_common(p)
    p.add_argument("--input", default=None)
    p.add_argument("--format", choices=["uci-bow", "dense-csv"], default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--methods", type=_str_list, default=None)
    p.add_argument("--fractions", type=_float_list, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--labeled-fraction", dest="labeled_fraction", type=float, default=None)
    p.add_argument("--partition", default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--max-exact-n", dest="max_exact_n", type=int, default=None)
    p.add_argument("--scaling-rows", dest="scaling_rows", type=_int_list, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--mean-length", dest="mean_length", type=_float_list, default=None)
    p.add_argument("--overlap", type=float, default=None)
    p.add_argument("--out", default=None)
    return parser


_CONFIG_TYPES = {
    "classes": int,
    "dim": int,
    "rows": int,
    "mean_length": _float_list,
    "overlap": float,
    "out": str,
    "seed": int,
    "input": str,
    "format": str,
    "divergence": str,
    "sigma": float,
    "epsilon": float,
    "partition": str,
    "report": str,
    "exact": lambda s: s.lower() in ("1", "true", "yes"),
    "max_exact_n": int,
    "model": str,
    "labels": str,
    "labeled_fraction": float,
    "alpha": float,
    "iters": int,
    "methods": _str_list,
    "fractions": _float_list,
    "trials": int,
    "scaling_rows": _int_list,
}

_HARD_DEFAULTS = {
    "seed": 0,
    "format": "uci-bow",
    "partition": "coarsest",
    "alpha": DEFAULT_ALPHA,
    "iters": DEFAULT_ITERS,
    "max_exact_n": DEFAULT_MAX_EXACT_N,
    "trials": 1,
    "labeled_fraction": 0.05,
    "overlap": 0.3,
    "classes": 3,
    "dim": 200,
    "rows": 1500,
    "exact": False,
}

_REQUIRED = {
    "synth": ["out"],
    "approximate": ["input", "divergence", "out"],
    "propagate": ["model", "labels", "out"],
    "experiment": ["methods", "out"],
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args = _merge_config(args, _CONFIG_TYPES)
    for key, val in _HARD_DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, val)
    missing = [k for k in _REQUIRED[args.command] if getattr(args, k, None) is None]
    if missing:
        parser.error(f"{args.command}: missing required option --{missing[0].replace('_', '-')}")
    if args.command == "experiment" and not args.scaling_rows and args.fractions is None:
        parser.error("experiment: provide --fractions or --scaling-rows")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "approximate":
            return cmd_approximate(args)
        if args.command == "propagate":
            return cmd_propagate(args)
        return cmd_experiment(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
