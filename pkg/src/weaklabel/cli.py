"""Command-line interface.

Exit codes: 0 success, 1 domain failure, 2 input error.  Failures print one
line of JSON on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import InputError, NotIdentifiable, WeakLabelError
from .labelmodel import FitConfig, LabelModel
from .solver import SignPolicy, SolverConfig

EXIT_OK, EXIT_DOMAIN, EXIT_INPUT = 0, 1, 2


def _models():
    from . import synthetic as syn

    return {
        "default": syn.default_benchmark_model,
        "independent-3": lambda: syn.zoo()[0],
        "independent-5": lambda: syn.zoo()[1],
        "independent-8": lambda: syn.zoo()[2],
        "dependent-pair": syn.dependency_model,
        "hierarchical": syn.hierarchical_model,
        "skewed": lambda: syn.independent_model([0.7] * 5, balance=(0.8, 0.2), name="skewed"),
    }


def _config(args) -> FitConfig:
    anchors = tuple(a - 1 for a in (args.anchor or ()))
    solver = SolverConfig(learning_rate=args.lr, max_iters=args.max_iters, tolerance=args.tol,
                          restarts=args.restarts, seed=args.seed, method=args.method)
    return FitConfig(solver=solver, policy=SignPolicy(anchors=anchors), ridge=args.ridge,
                     diagnostics=getattr(args, "diagnostics", False))


def _load_model(args, cfg=None) -> LabelModel:
    tg = io.read_task_graph(args.tasks)
    sg = io.read_source_graph(args.sources)
    return LabelModel(tg, sg, cfg)


def _balance(args, model, L):
    if args.balance is not None:
        try:
            p = json.loads(Path(args.balance).read_text()) if os.path.exists(args.balance) else json.loads(args.balance)
        except json.JSONDecodeError:
            raise InputError(f"--balance: not a JSON list or file: {args.balance}") from None
        if isinstance(p, dict):
            p = p["p"]
        return np.asarray(p, dtype=float)
    if args.dev_gold is not None:
        y = io.read_gold_csv(args.dev_gold, model.fs)
        return np.bincount(y, minlength=model.r) / len(y)
    if L is None:
        raise InputError("a class balance is required when fitting from moments")
    from .balance import estimate_class_balance

    return estimate_class_balance(model, L, seed=args.seed).p


def _emit(obj, out):
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_check(args) -> int:
    model = _load_model(args)
    reports = model.check()
    ok = all(r.solvable for r in reports)
    _emit({"solvable": ok, "subproblems": [r.to_dict() for r in reports]}, args.out)
    if not ok:
        bad = [r.label for r in reports if not r.solvable]
        raise NotIdentifiable(f"rank-deficient subproblems: {bad}")
    return EXIT_OK


def cmd_fit(args) -> int:
    model = _load_model(args, _config(args))
    if args.moments:
        moments = io.moments_from_dict(io._read_json(args.moments), model)
        model.fit_moments(moments, _balance(args, model, None))
    else:
        if not args.labels:
            raise InputError("fit needs --labels or --moments")
        L = io.read_labels(args.labels, model.spaces, model.fs.t, args.format)
        model.fit(L, _balance(args, model, L), threads=args.threads)
    cfg = {"seed": args.seed, "lr": args.lr, "max_iters": args.max_iters, "tol": args.tol,
           "restarts": args.restarts, "ridge": args.ridge, "method": args.method}
    doc = io.model_to_dict(model, cfg)
    doc["report"] = model.fit_report()
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = io.read_model(args.model)
    L = io.read_labels(args.labels, model.spaces, model.fs.t, args.format)
    rows = model.predict(L, threads=args.threads)
    io.write_predictions(args.out, rows, model.fs)
    return EXIT_OK


def cmd_class_balance(args) -> int:
    from .balance import estimate_class_balance

    model = _load_model(args)
    L = io.read_labels(args.labels, model.spaces, model.fs.t, args.format)
    cb = estimate_class_balance(model, L, include_abstain=args.include_abstain, seed=args.seed)
    _emit({"p": cb.p.tolist(), "feasible_set": [list(v) for v in model.fs], **cb.info}, args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    makers = _models()
    if args.model not in makers:
        raise InputError(f"unknown model {args.model!r}; choose from {sorted(makers)}")
    gtm = makers[args.model]()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    L, y = gtm.sample(args.n, args.seed)
    t = gtm.fs.t
    Path(out / "tasks.json").write_text(json.dumps(io.task_graph_to_dict(gtm.task_graph), indent=2) + "\n")
    Path(out / "sources.json").write_text(json.dumps(io.source_graph_to_dict(gtm.source_graph), indent=2) + "\n")
    if args.format == "binary":
        io.write_labels_binary(out / "labels.bin", L, t)
    else:
        io.write_labels_csv(out / "labels.csv", L, t)
    io.write_gold_csv(out / "gold.csv", y, gtm.fs)
    Path(out / "balance.json").write_text(json.dumps({"p": gtm.balance.tolist()}) + "\n")
    model = LabelModel(gtm.task_graph, gtm.source_graph)
    moments = {sp.label: gtm.expected_moments(sp.layout) for sp in model.subproblems}
    Path(out / "moments.json").write_text(json.dumps(io.moments_to_dict(moments)) + "\n")
    truth = {"cliques": [[s + 1 for s in c] for c in gtm.cliques.maximal],
             "tables": [gtm.tables[c].tolist() for c in gtm.cliques.maximal]}
    Path(out / "truth.json").write_text(json.dumps(truth) + "\n")
    return EXIT_OK


def cmd_experiment(args) -> int:
    from . import synthetic as syn

    cfg = _config(args)
    if args.kind == "scaling":
        gtm = _models()[args.model]()
        grid = [int(float(x)) for x in args.n_grid.split(",")]
        res = syn.run_scaling_experiment(gtm, grid, args.trials, cfg, args.seed)
        fields = ["n", "trial", "err", "t_moments_ms", "t_solver_ms"]
        summary = res.summary
    else:
        counts = None if args.pairs is None else [int(x) for x in args.pairs.split(",")]
        res = syn.run_density_experiment(pair_counts=counts, trials=args.trials, n=args.n,
                                         rho=args.rho, seed=args.seed, cfg=cfg)
        fields = ["pairs", "trial", "err_aware", "err_independent"]
        summary = syn.density_summary(res)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(res.rows)
    _emit(summary, args.summary)
    return EXIT_OK


def _common(p, graphs=True, labels=True):
    if graphs:
        p.add_argument("--tasks", required=True, help="task graph JSON")
        p.add_argument("--sources", required=True, help="source graph JSON")
    if labels:
        p.add_argument("--labels", help="label matrix file")
        p.add_argument("--format", choices=("csv", "binary"), default="csv")


def _solver_flags(p):
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--ridge", type=float, default=1e-6)
    p.add_argument("--method", choices=("gd", "lm"), default="gd")
    p.add_argument("--anchor", type=int, action="append", help="source id known to be better than random")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="weaklabel", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=os.cpu_count())
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="identifiability report")
    _common(p, labels=False)
    p.add_argument("--out")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("fit", help="estimate source parameters")
    _common(p)
    _solver_flags(p)
    p.add_argument("--moments", help="precomputed moments JSON instead of labels")
    bal = p.add_mutually_exclusive_group()
    bal.add_argument("--balance", help="class balance as a JSON list or a JSON file")
    bal.add_argument("--dev-gold", help="gold labels CSV whose class frequencies give the balance")
    p.add_argument("--diagnostics", action="store_true", help="include error-bound terms")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posteriors and hard labels")
    p.add_argument("--model", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--format", choices=("csv", "binary"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("class-balance", help="estimate P(y) from agreement tensors")
    _common(p)
    p.add_argument("--include-abstain", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_class_balance)

    p = sub.add_parser("synth", help="sample a synthetic dataset")
    p.add_argument("--model", default="default")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--format", choices=("csv", "binary"), default="csv")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("experiment", help="scaling or dependency-density experiment")
    p.add_argument("--kind", choices=("scaling", "density"), default="scaling")
    p.add_argument("--model", default="default")
    p.add_argument("--n-grid", default="1000,4000,16000,64000")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--pairs", help="comma-separated dependency-pair counts")
    p.add_argument("--rho", type=float, default=0.8)
    p.add_argument("--trials", type=int, default=20)
    _solver_flags(p)
    p.add_argument("--out", required=True, help="per-trial CSV")
    p.add_argument("--summary", help="summary JSON (stdout if omitted)")
    p.set_defaults(func=cmd_experiment)
    return ap


def _fail(exc, code) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        return _fail(exc, EXIT_INPUT)
    except WeakLabelError as exc:
        return _fail(exc, EXIT_DOMAIN)
    except (OSError, KeyError, ValueError) as exc:
        return _fail(exc, EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
