"""Command-line entry point.

Exit status is 0 on success.  On failure a JSON object
``{"error": <exception type>, "message": ...}`` is written to stderr and the
exit status is 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from hmrnn import __version__
from hmrnn.augmented import AugmentedModel, augmented_fit
from hmrnn.core import dataset_log_likelihood
from hmrnn.em import EmOptions, baum_welch_fit, init_from_observations
from hmrnn.errors import HmmError
from hmrnn.experiments import (
    Bench2Config,
    Study1Config,
    config_from_dict,
    load_config,
    run_benchmark2,
    run_study1,
)
from hmrnn.gd import GdOptions, gd_fit
from hmrnn.io import load_dataset, read_model, save_dataset, write_json, write_model
from hmrnn.metrics import wasserstein_rows
from hmrnn.simgen import ScenarioConfig, derive_seed, scenario_data

log = logging.getLogger("hmrnn")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _out_dir(args) -> Path:
    path = Path(args.out_dir or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _initial_model(args, data):
    if args.init:
        return read_model(args.init)
    k = args.k or max(data.n_symbols, 2)
    pi = None
    if args.freeze_pi:
        pi = [1.0] + [0.0] * (k - 1)
    return init_from_observations(data, k, args.init_psi_diag, pi=pi)


def cmd_simulate(args):
    cfg = ScenarioConfig(
        k=args.k, p_ii=args.pii, psi_ii=args.psii, T=args.T, N=args.N,
        seed=args.seed, transition_rule=args.rule,
    )
    truth, train, holdout = scenario_data(cfg)
    out = _out_dir(args)
    save_dataset(out, train, "sequences")
    save_dataset(out, holdout, "holdout")
    write_model(out / "truth.json", truth)
    write_json(out / "manifest.json", {
        "command": "simulate",
        "version": __version__,
        "config": cfg.to_dict(),
        "train_seed": derive_seed(cfg.seed, 0),
        "holdout_seed": derive_seed(cfg.seed, 1),
        "files": ["sequences.csv", "holdout.csv", "truth.json"],
    })
    return {"out_dir": str(out), "n_sequences": cfg.N}


def _write_report(args, report: dict, default_name: str):
    out = _out_dir(args)
    path = Path(args.out) if args.out else out / default_name
    write_json(path, report)
    return {"report": str(path)}


def cmd_fit_em(args):
    data = load_dataset(args.data)
    init = _initial_model(args, data)
    opts = EmOptions(
        max_iters=args.max_iters, param_tol=args.param_tol, rel_ll_tol=args.rel_ll_tol,
        criterion=args.criterion, freeze_pi=args.freeze_pi,
    )
    fit = baum_welch_fit(data, init, opts)
    report = fit.to_dict()
    report["seed"] = args.seed
    return _write_report(args, report, "fit_em.json")


def cmd_fit_gd(args):
    data = load_dataset(args.data)
    init = _initial_model(args, data)
    opts = GdOptions(
        learning_rate=args.lr, max_epochs=args.max_epochs, param_tol=args.param_tol,
        rel_ll_tol=args.rel_ll_tol, criterion=args.criterion, freeze_pi=args.freeze_pi,
    )
    fit = gd_fit(data, init, opts)
    report = fit.to_dict()
    report["seed"] = args.seed
    return _write_report(args, report, "fit_gd.json")


def cmd_fit_aug(args):
    data = load_dataset(args.data, args.covariates, args.aux)
    if args.folds > 1:
        cfg = config_from_dict(Bench2Config, {
            "master_seed": args.seed,
            "folds": args.folds,
            "init_psi_diag": args.init_psi_diag,
            "gd": {"learning_rate": args.lr, "max_epochs": args.max_epochs, "rel_ll_tol": args.rel_ll_tol},
        })
        report = run_benchmark2(cfg, _out_dir(args), data=data)
        return {"aug_better_folds": report["aug_better_folds"], "pooled": report["pooled"]}
    init = _initial_model(args, data)
    d = None if data.covariates is None else data.covariates.shape[1]
    start = AugmentedModel.from_params(init, d=d, auxiliary=data.aux_values is not None)
    fit = augmented_fit(data, start, GdOptions(
        learning_rate=args.lr, max_epochs=args.max_epochs, rel_ll_tol=args.rel_ll_tol,
        criterion="rel_ll",
    ))
    report = fit.to_dict()
    report["augmented_model"] = report.pop("model")
    report["model"] = fit.params.hmm_params().to_dict()
    report["seed"] = args.seed
    return _write_report(args, report, "fit_aug.json")


def cmd_evaluate(args):
    params = read_model(args.model)
    data = load_dataset(args.data)
    metrics = {"log_likelihood": dataset_log_likelihood(params, data), "n_sequences": len(data)}
    if args.holdout:
        metrics["holdout_log_likelihood"] = dataset_log_likelihood(params, load_dataset(args.holdout))
    if args.truth:
        truth = read_model(args.truth)
        metrics["wasserstein_P"] = wasserstein_rows(params.P, truth.P)
        metrics["wasserstein_Psi"] = wasserstein_rows(params.Psi, truth.Psi)
    return _write_report(args, metrics, "metrics.json")


def _config(args, cls):
    cfg = load_config(args.config, cls) if args.config else cls()
    if args.seed is not None:
        cfg.master_seed = args.seed
    if getattr(args, "threads", None) and hasattr(cfg, "threads"):
        cfg.threads = args.threads
    return cfg


def cmd_study1(args):
    cfg = _config(args, Study1Config)
    result = run_study1(cfg, _out_dir(args))
    return result["summary"]


def cmd_bench2(args):
    cfg = _config(args, Bench2Config)
    report = run_benchmark2(cfg, _out_dir(args))
    return {"aug_better_folds": report["aug_better_folds"], "pooled": report["pooled"]}


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress):
        # subcommands repeat the global flags; SUPPRESS keeps their defaults
        # from overwriting values given before the subcommand name
        g = _Parser(add_help=False)
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g.add_argument("--seed", type=int, default=d(None), help="master seed")
        g.add_argument("--threads", type=int, default=d(1))
        g.add_argument("--out-dir", default=d(None))
        g.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return g

    common = global_flags(suppress=True)
    parser = _Parser(prog="hmrnn", description=__doc__.splitlines()[0], parents=[global_flags(False)])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="generate a recovery scenario")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--pii", type=float, required=True)
    p.add_argument("--psii", type=float, required=True)
    p.add_argument("--T", type=int, default=60)
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--rule", choices=["next", "uniform"], default="next")
    p.set_defaults(func=cmd_simulate)

    def fit_args(p):
        p.add_argument("--data", required=True, help="sequences CSV")
        p.add_argument("--init", help="initial model JSON (default: count-based)")
        p.add_argument("--k", type=int, help="number of states for count-based init")
        p.add_argument("--init-psi-diag", type=float, default=0.95)
        p.add_argument("--param-tol", type=float, default=1e-3)
        p.add_argument("--rel-ll-tol", type=float, default=1e-5)
        p.add_argument("--criterion", choices=["param", "rel_ll"], default="param")
        p.add_argument("--freeze-pi", action="store_true",
                       help="hold pi fixed (count-based init pins it to state 0)")
        p.add_argument("--out", help="report path (default: <out-dir>/fit_*.json)")

    p = sub.add_parser("fit-em", parents=[common], help="Baum-Welch fit")
    fit_args(p)
    p.add_argument("--max-iters", type=int, default=500)
    p.set_defaults(func=cmd_fit_em)

    p = sub.add_parser("fit-gd", parents=[common], help="gradient-descent network fit")
    fit_args(p)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--max-epochs", type=int, default=5000)
    p.set_defaults(func=cmd_fit_gd)

    p = sub.add_parser("fit-aug", parents=[common], help="covariate-augmented network fit")
    p.add_argument("--data", required=True)
    p.add_argument("--covariates")
    p.add_argument("--aux")
    p.add_argument("--folds", type=int, default=1, help=">1 runs cross-validation against Baum-Welch")
    p.add_argument("--init")
    p.add_argument("--k", type=int)
    p.add_argument("--init-psi-diag", type=float, default=0.95)
    p.add_argument("--freeze-pi", action="store_true")
    p.add_argument("--lr", type=float, default=5.0)
    p.add_argument("--max-epochs", type=int, default=5000)
    p.add_argument("--rel-ll-tol", type=float, default=1e-5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit_aug)

    p = sub.add_parser("evaluate", parents=[common], help="score a model on data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--holdout")
    p.add_argument("--truth", help="ground-truth model JSON for Wasserstein distances")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    for name, func, helptext in (
        ("study1", cmd_study1, "parameter-recovery grid"),
        ("bench2", cmd_bench2, "cross-validated covariate benchmark"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--config", help="YAML/JSON config file")
        p.set_defaults(func=func)
    return parser


def _fail(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return _fail("UsageError", str(exc), 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is None and args.command in ("simulate", "fit-em", "fit-gd", "fit-aug"):
        args.seed = 0
    try:
        result = args.func(args)
    except (HmmError, OSError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    print(json.dumps(result, indent=2, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
