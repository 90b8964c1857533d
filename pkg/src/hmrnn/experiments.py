"""Experiment drivers: the parameter-recovery grid (``study1``) and the
cross-validated covariate benchmark (``bench2``).

Config files are YAML (or JSON) mappings; unknown keys are rejected.  All
randomness derives from ``master_seed``:

* scenario data: ``derive_seed(master_seed, k, round(1000 p_ii), round(1000 psi_ii), replicate)``,
  then training set ``(seed, 0)`` and holdout ``(seed, 1)``;
* benchmark data: ``derive_seed(master_seed, 2)``;
* fold assignment: ``derive_seed(master_seed, 3)``;
* bootstrap intervals: ``derive_seed(master_seed, 4)``.
"""

from __future__ import annotations

import csv
import dataclasses
import io as _io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from hmrnn import __version__
from hmrnn.augmented import AugmentedModel, augmented_fit, predict_final_category
from hmrnn.core import HmmParams, ObservationDataset
from hmrnn.em import EmOptions, baum_welch_fit, init_from_observations
from hmrnn.errors import HmmError, InvalidInputError
from hmrnn.gd import GdOptions, gd_fit
from hmrnn.io import write_json
from hmrnn.metrics import holdout_log_likelihood, paired_difference, wasserstein_rows, weighted_log_loss
from hmrnn.simgen import (
    GRID_K,
    GRID_PII,
    GRID_PSI,
    ScenarioConfig,
    build_covariate_benchmark,
    derive_seed,
    scenario_data,
)

log = logging.getLogger(__name__)


@dataclass
class EmSettings:
    max_iters: int = 500
    param_tol: float = 1e-3
    rel_ll_tol: float = 1e-5


@dataclass
class GdSettings:
    learning_rate: float = 10.0
    max_epochs: int = 5000
    param_tol: float = 1e-3
    rel_ll_tol: float = 1e-5


@dataclass
class Study1Config:
    master_seed: int = 0
    ks: list = field(default_factory=lambda: list(GRID_K))
    psi_values: list = field(default_factory=lambda: list(GRID_PSI))
    pii_values: list = field(default_factory=lambda: list(GRID_PII))
    replicates: int = 1
    T: int = 60
    N: int = 100
    init_psi_diag: float = 0.95
    transition_rule: str = "next"
    threads: int = 1
    em: EmSettings = field(default_factory=EmSettings)
    gd: GdSettings = field(default_factory=GdSettings)


@dataclass
class Bench2Config:
    master_seed: int = 0
    n_patients: int = 400
    d: int = 4
    effect_scale: float = 1.0
    folds: int = 10
    stratify: bool = True
    init_psi_diag: float = 0.95
    fit_full: bool = True
    em: EmSettings = field(default_factory=EmSettings)
    gd: GdSettings = field(default_factory=lambda: GdSettings(learning_rate=5.0))


def _coerce(value, typ, where):
    if dataclasses.is_dataclass(typ):
        return config_from_dict(typ, value, where)
    if typ is bool:
        if not isinstance(value, bool):
            raise InvalidInputError(f"{where}: expected true/false, got {value!r}")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidInputError(f"{where}: expected an integer, got {value!r}")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidInputError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise InvalidInputError(f"{where}: expected a string, got {value!r}")
        return value
    if typ is list:
        if not isinstance(value, list) or not value:
            raise InvalidInputError(f"{where}: expected a non-empty list, got {value!r}")
        return list(value)
    return value


def config_from_dict(cls, data: Optional[dict], where: str = "config"):
    """Build config dataclass ``cls`` from a mapping, rejecting unknown keys."""
    data = data or {}
    if not isinstance(data, dict):
        raise InvalidInputError(f"{where}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise InvalidInputError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    hints = {f.name: f.type for f in dataclasses.fields(cls)}
    types = {"int": int, "float": float, "str": str, "bool": bool, "list": list}
    for name, value in data.items():
        t = hints[name]
        t = types.get(t, globals().get(t, t)) if isinstance(t, str) else t
        kwargs[name] = _coerce(value, t, f"{where}.{name}")
    return cls(**kwargs)


def load_config(path, cls):
    text = Path(path).read_text()
    return config_from_dict(cls, yaml.safe_load(text))


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


# ---------------------------------------------------------------------------
# study1


def scenario_seed(master_seed: int, k: int, p_ii: float, psi_ii: float, replicate: int) -> int:
    return derive_seed(master_seed, k, round(1000 * p_ii), round(1000 * psi_ii), replicate)


def study1_scenarios(cfg: Study1Config):
    """Scenario list in deterministic order: replicate, k, psi_ii, p_ii."""
    out = []
    for rep in range(cfg.replicates):
        for k in cfg.ks:
            for psi in cfg.psi_values:
                for pii in cfg.pii_values:
                    seed = scenario_seed(cfg.master_seed, k, pii, psi, rep)
                    sc = ScenarioConfig(
                        k=int(k), p_ii=float(pii), psi_ii=float(psi), T=cfg.T, N=cfg.N,
                        seed=seed, transition_rule=cfg.transition_rule,
                    )
                    out.append((rep, sc))
    return out


def _scenario_name(rep, sc: ScenarioConfig):
    return f"k{sc.k}_pii{sc.p_ii:g}_psii{sc.psi_ii:g}_rep{rep}"


def run_scenario(rep: int, sc: ScenarioConfig, cfg: Study1Config) -> dict:
    """Fit both estimators on one scenario and score them."""
    truth, train, holdout = scenario_data(sc)
    init = init_from_observations(train, sc.k, cfg.init_psi_diag, pi=truth.pi)
    em = baum_welch_fit(train, init, EmOptions(
        max_iters=cfg.em.max_iters, param_tol=cfg.em.param_tol,
        rel_ll_tol=cfg.em.rel_ll_tol, criterion="param", freeze_pi=True,
    ))
    gd = gd_fit(train, init, GdOptions(
        learning_rate=cfg.gd.learning_rate, max_epochs=cfg.gd.max_epochs,
        param_tol=cfg.gd.param_tol, rel_ll_tol=cfg.gd.rel_ll_tol,
        criterion="param", freeze_pi=True,
    ))
    trace = np.asarray(em.log_likelihood_trace)
    record = {
        "name": _scenario_name(rep, sc),
        "replicate": rep,
        "scenario": sc.to_dict(),
        "truth": truth.to_dict(),
        "init": init.to_dict(),
        "holdout_ll_truth": holdout_log_likelihood(truth, holdout),
        "em_monotone": bool(np.all(np.diff(trace) >= -1e-8)),
    }
    timings = {}
    for tag, fit in (("em", em), ("gd", gd)):
        p = fit.params
        record[tag] = {
            "wasserstein_P": wasserstein_rows(p.P, truth.P),
            "wasserstein_Psi": wasserstein_rows(p.Psi, truth.Psi),
            "holdout_ll": holdout_log_likelihood(p, holdout),
            "mean_pii": float(np.mean(np.diag(p.P))),
            "mean_psii": float(np.mean(np.diag(p.Psi))),
            "iterations": fit.iterations,
            "converged": fit.converged,
            "reason": fit.reason,
            "train_ll_trace": fit.log_likelihood_trace,
            "model": p.to_dict(),
        }
        timings[tag] = fit.elapsed
    return record, timings


def _run_scenario_safe(args):
    rep, sc, cfg = args
    try:
        return run_scenario(rep, sc, cfg)
    except HmmError as exc:
        return {
            "name": _scenario_name(rep, sc),
            "replicate": rep,
            "scenario": sc.to_dict(),
            "error": f"{type(exc).__name__}: {exc}",
        }, {}


AGG_METRICS = [
    ("em_wasserstein_P", ("em", "wasserstein_P")),
    ("gd_wasserstein_P", ("gd", "wasserstein_P")),
    ("em_wasserstein_Psi", ("em", "wasserstein_Psi")),
    ("gd_wasserstein_Psi", ("gd", "wasserstein_Psi")),
    ("em_mean_pii", ("em", "mean_pii")),
    ("gd_mean_pii", ("gd", "mean_pii")),
    ("em_mean_psii", ("em", "mean_psii")),
    ("gd_mean_psii", ("gd", "mean_psii")),
    ("truth_holdout_ll", ("holdout_ll_truth",)),
    ("em_holdout_ll", ("em", "holdout_ll")),
    ("gd_holdout_ll", ("gd", "holdout_ll")),
]


def _get(record, path):
    for key in path:
        record = record[key]
    return record


def aggregate_csv(records) -> str:
    """Means of every metric grouped by each ground-truth parameter, plus
    an overall row."""
    ok = [r for r in records if "error" not in r]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "value", "n", *[name for name, _ in AGG_METRICS]])
    groups = [("all", None)]
    for key in ("k", "p_ii", "psi_ii"):
        for v in sorted({r["scenario"][key] for r in ok}):
            groups.append((key, v))
    for key, v in groups:
        sel = ok if key == "all" else [r for r in ok if r["scenario"][key] == v]
        means = [repr(float(np.mean([_get(r, path) for r in sel]))) if sel else "" for _, path in AGG_METRICS]
        w.writerow([key, "" if v is None else repr(v), len(sel), *means])
    return buf.getvalue()


def study1_summary(records, seed: int) -> dict:
    ok = [r for r in records if "error" not in r]
    out = {"n_scenarios": len(records), "n_failed": len(records) - len(ok)}
    if not ok:
        return out
    for name, path in AGG_METRICS:
        out[name] = float(np.mean([_get(r, path) for r in ok]))
    for metric in ("wasserstein_P", "wasserstein_Psi", "holdout_ll"):
        em = [r["em"][metric] for r in ok]
        gd = [r["gd"][metric] for r in ok]
        out[f"paired_em_minus_gd_{metric}"] = paired_difference(em, gd, seed=seed)
    out["em_monotone_all"] = all(r["em_monotone"] for r in ok)
    return out


def run_study1(cfg: Study1Config, out_dir) -> dict:
    """Run every scenario of the grid and write per-scenario JSON, the
    aggregate CSV, a summary and a manifest into ``out_dir``.

    Wall-clock times go to ``timings.json`` only, so every other artifact is
    byte-identical across reruns with the same config.
    """
    out_dir = Path(out_dir)
    (out_dir / "scenarios").mkdir(parents=True, exist_ok=True)
    scenarios = study1_scenarios(cfg)
    write_json(out_dir / "manifest.json", {
        "command": "study1",
        "version": __version__,
        "config": config_to_dict(cfg),
        "scenarios": [{"name": _scenario_name(rep, sc), **sc.to_dict()} for rep, sc in scenarios],
    })
    jobs = [(rep, sc, cfg) for rep, sc in scenarios]
    start = time.perf_counter()
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_run_scenario_safe, jobs))
    else:
        results = [_run_scenario_safe(j) for j in jobs]
    records = [r for r, _ in results]
    for record in records:
        if "error" in record:
            log.warning("scenario %s failed: %s", record["name"], record["error"])
        write_json(out_dir / "scenarios" / f"{record['name']}.json", record)
    (out_dir / "aggregate.csv").write_text(aggregate_csv(records))
    summary = study1_summary(records, derive_seed(cfg.master_seed, 4))
    write_json(out_dir / "summary.json", summary)
    write_json(out_dir / "timings.json", {
        "total_seconds": time.perf_counter() - start,
        "scenarios": {r["name"]: t for r, (_, t) in zip(records, results)},
    })
    return {"summary": summary, "records": records}


# ---------------------------------------------------------------------------
# bench2


def assign_folds(labels, n_folds: int, seed: int, stratify: bool = True) -> np.ndarray:
    """Fold index per item.  With ``stratify`` each label's items are
    shuffled and dealt round-robin, continuing where the previous label
    stopped."""
    labels = np.asarray(labels)
    if n_folds < 2 or n_folds > labels.size:
        raise InvalidInputError(f"need 2 <= folds <= {labels.size}, got {n_folds}")
    rng = np.random.Generator(np.random.PCG64(seed))
    folds = np.empty(labels.size, dtype=np.int64)
    if not stratify:
        folds[rng.permutation(labels.size)] = np.arange(labels.size) % n_folds
        return folds
    offset = 0
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (offset + np.arange(idx.size)) % n_folds
        offset += idx.size
    return folds


def _fit_pair(train: ObservationDataset, cfg: Bench2Config, k: int):
    init = init_from_observations(train, k, cfg.init_psi_diag)
    em = baum_welch_fit(train, init, EmOptions(
        max_iters=cfg.em.max_iters, param_tol=cfg.em.param_tol,
        rel_ll_tol=cfg.em.rel_ll_tol, criterion="rel_ll",
    ))
    d = None if train.covariates is None else train.covariates.shape[1]
    start = AugmentedModel.from_params(init, d=d, auxiliary=train.aux_values is not None)
    aug = augmented_fit(train, start, GdOptions(
        learning_rate=cfg.gd.learning_rate, max_epochs=cfg.gd.max_epochs,
        param_tol=cfg.gd.param_tol, rel_ll_tol=cfg.gd.rel_ll_tol, criterion="rel_ll",
    ))
    return em, aug


def _predict(model, data: ObservationDataset):
    preds = []
    for n, seq in enumerate(data.sequences):
        cov = None if data.covariates is None else data.covariates[n]
        if isinstance(model, HmmParams):
            cov = None
        preds.append(predict_final_category(model, int(seq[0]), seq.size - 1, cov))
    return np.array(preds)


def _table1(em: HmmParams, aug: AugmentedModel, data: ObservationDataset, L_em, L_aug) -> dict:
    hp = aug.hmm_params()
    if aug.covariate_head is not None:
        pi_aug = aug.initial_distribution(data.covariates).mean(axis=0)
    else:
        pi_aug = hp.pi
    return {
        "columns": ["baum_welch", "augmented_hmrnn"],
        "pi": [em.pi.tolist(), pi_aug.tolist()],
        "P": [em.P.tolist(), hp.P.tolist()],
        "Psi": [em.Psi.tolist(), hp.Psi.tolist()],
        "L": [L_em, L_aug],
        "p_bar": [float(np.exp(L_em)), float(np.exp(L_aug))],
    }


def format_table1(table: dict) -> str:
    """Plain-text rendering of the side-by-side parameter table."""
    lines = [f"{'':6}| {'Baum-Welch':<24}| {'augmented HMRNN':<24}"]

    def block(name, rows_a, rows_b):
        rows_a = rows_a if isinstance(rows_a[0], list) else [rows_a]
        rows_b = rows_b if isinstance(rows_b[0], list) else [rows_b]
        for i, (ra, rb) in enumerate(zip(rows_a, rows_b)):
            label = name if i == 0 else ""
            fa = " ".join(f"{v:.3f}" for v in ra)
            fb = " ".join(f"{v:.3f}" for v in rb)
            lines.append(f"{label:6}| {fa:<24}| {fb:<24}")

    for name in ("pi", "P", "Psi"):
        block(name, table[name][0], table[name][1])
    lines.append(f"{'L':6}| {table['L'][0]:<24.3f}| {table['L'][1]:<24.3f}")
    lines.append(f"{'p_bar':6}| {table['p_bar'][0]:<24.3f}| {table['p_bar'][1]:<24.3f}")
    return "\n".join(lines) + "\n"


def run_benchmark2(cfg: Bench2Config, out_dir, data: Optional[ObservationDataset] = None) -> dict:
    """Cross-validated comparison of Baum-Welch against the augmented
    network on final-category prediction.

    Without ``data`` the synthetic covariate benchmark is generated from the
    config.  Writes ``report.json``, ``folds.csv``, ``table1.txt`` and
    ``manifest.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_seed = derive_seed(cfg.master_seed, 2)
    if data is None:
        data = build_covariate_benchmark(
            cfg.n_patients, cfg.d, seed=data_seed, effect_scale=cfg.effect_scale
        ).data
        source = "synthetic"
    else:
        source = "provided"
    k = max(data.n_symbols, 2)
    finals = np.array([s[-1] for s in data.sequences])
    fold_seed = derive_seed(cfg.master_seed, 3)
    folds = assign_folds(finals, cfg.folds, fold_seed, cfg.stratify)
    write_json(out_dir / "manifest.json", {
        "command": "bench2",
        "version": __version__,
        "config": config_to_dict(cfg),
        "data_source": source,
        "data_seed": data_seed,
        "fold_seed": fold_seed,
        "folds": {sid: int(f) for sid, f in zip(data.ids, folds)},
    })

    fold_rows = []
    pooled = {"em": [], "aug": [], "actual": []}
    for f in range(cfg.folds):
        train = data.subset(np.flatnonzero(folds != f))
        test = data.subset(np.flatnonzero(folds == f))
        em, aug = _fit_pair(train, cfg, k)
        pe = _predict(em.params, test)
        pa = _predict(aug.params, test)
        actual = np.array([s[-1] for s in test.sequences])
        le = weighted_log_loss(pe, actual)
        la = weighted_log_loss(pa, actual)
        fold_rows.append({
            "fold": f,
            "n_test": len(test),
            "em_L": le.L, "em_p_bar": le.p_bar, "em_clipped": le.n_clipped,
            "aug_L": la.L, "aug_p_bar": la.p_bar, "aug_clipped": la.n_clipped,
            "em_iterations": em.iterations, "aug_epochs": aug.iterations,
            "aug_reason": aug.reason,
        })
        pooled["em"].append(pe)
        pooled["aug"].append(pa)
        pooled["actual"].append(actual)
    actual = np.concatenate(pooled["actual"])
    pe = weighted_log_loss(np.concatenate(pooled["em"]), actual)
    pa = weighted_log_loss(np.concatenate(pooled["aug"]), actual)
    em_L = [r["em_L"] for r in fold_rows]
    aug_L = [r["aug_L"] for r in fold_rows]
    report = {
        "config": config_to_dict(cfg),
        "n_patients": len(data),
        "folds": fold_rows,
        "pooled": {
            "em_L": pe.L, "em_p_bar": pe.p_bar, "em_per_category": pe.per_category,
            "aug_L": pa.L, "aug_p_bar": pa.p_bar, "aug_per_category": pa.per_category,
        },
        "aug_better_folds": int(sum(a > e for a, e in zip(aug_L, em_L))),
        "paired_aug_minus_em_L": paired_difference(aug_L, em_L, seed=derive_seed(cfg.master_seed, 4)),
    }
    if cfg.fit_full:
        em, aug = _fit_pair(data, cfg, k)
        report["table1"] = _table1(em.params, aug.params, data, pe.L, pa.L)
        report["full_fit"] = {"em": em.to_dict(include_timing=False), "augmented": aug.params.to_dict()}
        (out_dir / "table1.txt").write_text(format_table1(report["table1"]))
    write_json(out_dir / "report.json", report)
    with open(out_dir / "folds.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fold_rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(fold_rows)
    return report
