"""``sparsa`` command line: simulate, fit, predict, loocv.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
import time

import numpy as np

from .classifiers import LabeledDataset
from .errors import InvalidSpec
from .pipeline import FittedPipeline, Recipe, read_dataset
from .preprocess import screen_by_t, standardize_expression
from .simbench import METHODS, ModelSpec, run_experiment
from .tuning import CvConfig, loocv_evaluate

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _positive_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _prior(s) -> float:
    v = float(s)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("prior must lie strictly between 0 and 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of option values; flags override it")
        p.add_argument("--seed", type=int, help="base seed for all randomness")
        p.add_argument("--strict", action="store_true", help="require --seed")
        p.add_argument("--folds", type=int, default=5, help="CV folds (default 5)")

    p = sub.add_parser("simulate", help="replicate a simulation model and report error rates")
    common(p)
    p.add_argument("--model", type=int, choices=(1, 2, 3, 4), help="simulation model (required)")
    p.add_argument("--p", type=_positive_int, default=100)
    p.add_argument("--n1", type=_positive_int, default=100)
    p.add_argument("--n2", type=_positive_int, default=100)
    p.add_argument("--reps", type=_positive_int, default=100)
    p.add_argument("--methods", default="tlda,nb,oracle",
                   help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--eval", choices=("analytic", "holdout"), default="analytic")
    p.add_argument("--holdout-size", type=_positive_int, default=10_000)
    p.add_argument("--workers", type=_positive_int, help="worker processes (capped by SPARSA_THREADS)")
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("fit", help="tune and fit TLDA on a labeled CSV")
    common(p)
    p.add_argument("--train", help="CSV, label in the first column (required)")
    p.add_argument("--out", help="model JSON to write (required)")
    p.add_argument("--transpose", action="store_true", help="samples are columns")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--standardize-order", choices=("row_first", "scale_first"), default="row_first")
    p.add_argument("--screen", type=_positive_int, help="keep the N largest |t| features")
    p.add_argument("--screen-threshold", type=float,
                   help="keep features with |mean difference| above this")
    p.add_argument("--prior", type=_prior, help="class-1 prior probability")
    p.add_argument("--lambda", dest="lam", type=float, help="fixed lambda (with --p0 skips CV)")
    p.add_argument("--p0", type=_positive_int, help="fixed number of selected features")

    p = sub.add_parser("predict", help="apply a model file to a CSV")
    p.add_argument("--model", help="model JSON (required)")
    p.add_argument("--data", help="CSV to classify (required)")
    p.add_argument("--out", help="predictions CSV (default: standard output)")
    p.add_argument("--transpose", action="store_true")
    p.add_argument("--config", help=argparse.SUPPRESS)

    p = sub.add_parser("loocv", help="leave-one-out evaluation of the full recipe")
    common(p)
    p.add_argument("--data", help="labeled CSV (required)")
    p.add_argument("--transpose", action="store_true")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--standardize-order", choices=("row_first", "scale_first"), default="row_first")
    p.add_argument("--screen", type=_positive_int, default=1000)
    p.add_argument("--screen-threshold", type=float)
    p.add_argument("--global-screen", action="store_true",
                   help="standardize and screen once on all samples instead of inside each split")
    p.add_argument("--out-dir", default=".")
    return parser


REQUIRED = {
    "simulate": ("model",),
    "fit": ("train", "out"),
    "predict": ("model", "data"),
    "loocv": ("data",),
}


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(cfg, dict):
            parser.error("config must be a JSON object")
        if cfg.pop("command", args.command) != args.command:
            parser.error("config is for a different subcommand")
        cfg.pop("config", None)
        known = set(vars(args))
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        for action in subparser._actions:
            if action.dest in cfg and action.type is not None and cfg[action.dest] is not None:
                try:
                    cfg[action.dest] = action.type(cfg[action.dest])
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    parser.error(f"config {action.dest}: {exc}")
            if action.dest in cfg and action.choices is not None and cfg[action.dest] not in action.choices:
                parser.error(f"config {action.dest}: {cfg[action.dest]!r} not in {list(action.choices)}")
        subparser.set_defaults(**cfg)
        args = parser.parse_args(argv)
    # required options are checked after merging so a config file can supply them
    missing = [f"--{d.replace('_', '-')}" for d in REQUIRED[args.command] if getattr(args, d) is None]
    if missing:
        parser.error(f"{args.command} requires {', '.join(missing)}")
    return parser, args


def _resolve_seed(parser, args):
    if not hasattr(args, "seed"):
        return
    if args.seed is None:
        if args.strict:
            parser.error("--seed is required with --strict")
        args.seed = secrets.randbits(63)
    if args.folds < 2:
        parser.error("--folds must be >= 2")


def _resolved(args) -> dict:
    d = {k: v for k, v in sorted(vars(args).items()) if k != "config"}
    return d


def _write(path: str, text: str):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _meta(t0: float) -> str:
    return _dump({"runtime_seconds": round(time.perf_counter() - t0, 3),
                  "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")})


def _load(path, transpose, expect_p=None):
    x, y = read_dataset(path, transpose=transpose, expect_p=expect_p)
    return x, y


def cmd_simulate(args, parser) -> int:
    raw = args.methods if isinstance(args.methods, list) else str(args.methods).split(",")
    methods = [str(m).strip() for m in raw if str(m).strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        parser.error(f"--methods must be a subset of {{{', '.join(METHODS)}}}; got {args.methods!r}")
    try:
        spec = ModelSpec(args.model, args.p, args.n1, args.n2)
    except InvalidSpec as exc:
        parser.error(str(exc))
    mode = "analytic" if args.eval == "analytic" else f"holdout({args.holdout_size})"
    t0 = time.perf_counter()
    report, trace = run_experiment(spec, methods, args.reps, args.seed, test_mode=mode,
                                   cv={"folds": args.folds}, workers=args.workers)
    out = args.out_dir
    _write(os.path.join(out, "report.json"), report.to_json())
    _write(os.path.join(out, "report.txt"), report.to_text())
    _write(os.path.join(out, "trace.csv"), trace.to_csv())
    _write(os.path.join(out, "report.meta.json"), _meta(t0))
    _write(os.path.join(out, "resolved_config.json"), _dump(_resolved(args)))
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _recipe(args, **over) -> Recipe:
    kw = dict(
        cv=CvConfig(folds=args.folds, seed=args.seed),
        standardize=args.standardize,
        standardize_order=args.standardize_order,
        screen=args.screen,
        screen_threshold=args.screen_threshold,
    )
    kw.update(over)
    return Recipe(**kw)


def cmd_fit(args, parser) -> int:
    if (args.lam is None) != (args.p0 is None):
        parser.error("--lambda and --p0 must be given together")
    t0 = time.perf_counter()
    x, y = _load(args.train, args.transpose)
    data = LabeledDataset(x, y)
    recipe = _recipe(args, prior=args.prior, lam=args.lam, p0=args.p0)
    fitted = recipe(data)
    _write(args.out, fitted.to_json())
    base = os.path.splitext(args.out)[0]
    _write(base + ".meta.json", _meta(t0))
    _write(os.path.join(os.path.dirname(args.out), "resolved_config.json"), _dump(_resolved(args)))
    wrong = int(np.sum(fitted.predict(x) != y))
    print(f"selected {fitted.n_features} features at positions "
          f"{' '.join(str(i) for i in fitted.selected_original + 1)}")
    print(f"training errors: {wrong}/{data.n}")
    return EXIT_OK


def cmd_predict(args, parser) -> int:
    with open(args.model) as fh:
        fitted = FittedPipeline.from_json(fh.read())
    x, y = _load(args.data, args.transpose, expect_p=fitted.p_input)
    pred = fitted.predict(x)
    text = "predicted\n" + "".join(f"{int(v)}\n" for v in pred)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    if y is not None:
        wrong = int(np.sum(pred != y))
        print(f"errors: {wrong}/{y.size} ({100.0 * wrong / y.size:.2f}%)",
              file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def cmd_loocv(args, parser) -> int:
    t0 = time.perf_counter()
    x, y = _load(args.data, args.transpose)
    data = LabeledDataset(x, y)
    if args.global_screen:
        if args.standardize:
            data, _ = standardize_expression(data, order=args.standardize_order)
        keep = None if args.screen is None else min(args.screen, data.p)
        data, _ = screen_by_t(data, keep=keep, mean_diff_threshold=args.screen_threshold)
        recipe = _recipe(args, standardize=False, screen=None, screen_threshold=None)
    else:
        recipe = _recipe(args)
    splits = []

    def log(i, pred, truth, nfeat):
        splits.append({"held_out": i + 1, "label": int(truth), "predicted": int(pred),
                       "n_features": int(nfeat)})
        print(f"split {i + 1}/{data.n}: label {truth} predicted {pred} with {nfeat} features",
              file=sys.stderr)

    res = loocv_evaluate(data, recipe, progress=log)
    report = {
        "n": data.n,
        "n_errors": res.n_errors,
        "error_pct": round(100.0 * res.error_rate, 2),
        "mean_features": round(res.mean_features, 2),
        "sd_features": round(res.sd_features, 2),
        "splits": splits,
    }
    out = args.out_dir
    _write(os.path.join(out, "loocv_report.json"), _dump(report))
    _write(os.path.join(out, "loocv_report.meta.json"), _meta(t0))
    _write(os.path.join(out, "resolved_config.json"), _dump(_resolved(args)))
    print(f"LOOCV error {report['error_pct']:.2f}% ({res.n_errors}/{data.n}), "
          f"features {res.mean_features:.2f} ({res.sd_features:.2f})")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict, "loocv": cmd_loocv}


def main(argv=None) -> int:
    try:
        parser, args = _parse(argv)
        _resolve_seed(parser, args)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args, parser)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except KeyboardInterrupt:
        print("sparsa: interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # every runtime failure maps to exit 1
        print(f"sparsa: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
