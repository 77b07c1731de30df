"""Grid runner: every (source, target, week, method, seed) cell of a config.

Cells are independent.  Methods that never look at the source (``no-transfer``,
``no-transfer-AE``, ``in-situ``) are trained once per (target, week, seed)
and their rows are repeated for each pair sharing that target.  All
randomness derives from the config seeds, so the output files do not depend
on worker count or scheduling order.
"""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing
import traceback
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import GROUP_METHOD, CohortSpec, ExperimentConfig
from .data import Cohort, EventVocabulary, filter_group, load_cohort, slice_for_week
from .errors import UndefinedMetricError
from .evaluation import (TransferResult, auc, pad_features, proxy_a_distance, read_results,
                         summarize, write_results)
from .synth import generate_cohort, generator_config_from_dict
from .transfer import METHODS, MethodConfig, TransferTask, WeeklyPredictor, train_no_transfer

log = logging.getLogger(__name__)

TARGET_ONLY = ("no-transfer", "no-transfer-AE", "in-situ")
RESEED_STRIDE = 7919


@dataclass(frozen=True, order=True)
class Unit:
    kind: str
    target: str
    week: int
    seed: int
    source: str = ""
    method: str = ""
    group: str = ""

    def label(self) -> str:
        parts = [self.kind, f"{self.source}->{self.target}" if self.source else self.target,
                 f"week={self.week}", f"seed={self.seed}"]
        if self.method:
            parts.append(self.method)
        if self.group:
            parts.append(f"group={self.group}")
        return " ".join(parts)


# --------------------------------------------------------------------------
# cohorts

def cohort_from_spec(spec: CohortSpec, seed: int = 0, reseed: bool = True) -> Cohort:
    vocab = EventVocabulary.from_file(spec.vocabulary) if spec.vocabulary else EventVocabulary.default()
    if spec.synth is not None:
        gen = generator_config_from_dict(spec.synth, vocab)
        gen = replace(gen, n_weeks=spec.n_weeks) if "n_weeks" not in spec.synth else gen
        if reseed:
            gen = replace(gen, seed=gen.seed + RESEED_STRIDE * seed)
        return generate_cohort(gen)
    return load_cohort(spec.path, vocab, spec.n_weeks, spec.format, course_id=spec.name,
                       demographics_path=spec.demographics, attribute=spec.attribute)


def build_cohorts(config: ExperimentConfig, seed: int) -> dict:
    """``{name: Cohort}`` for one seed.  File cohorts ignore the seed."""
    return {c.name: cohort_from_spec(c, seed, config.reseed_cohorts) for c in config.cohorts}


def group_values(cohort: Cohort) -> list:
    if cohort.demographics is None:
        return []
    return sorted({str(v) for v in cohort.demographics if v is not None})


def group_label(target: str, attribute: str, value: str) -> str:
    return f"{target}[{attribute}={value}]"


# --------------------------------------------------------------------------
# single cells

def method_config(config: ExperimentConfig, seed: int) -> MethodConfig:
    return replace(config.method, seed=config.method.seed + seed)


def train_cell(config: ExperimentConfig, cohorts: dict, source: str | None, target: str, week: int,
               method: str, seed: int, fold: int = 0, group: str | None = None) -> WeeklyPredictor:
    """Train one cell.  ``group`` restricts the target to one attribute value."""
    mc = method_config(config, seed)
    T = cohorts[target]
    if group:
        T = filter_group(T, group)
    if method in ("no-transfer", "no-transfer-AE"):
        pred, _ = train_no_transfer(T, week, mc, use_ae=method.endswith("AE"), fold=fold,
                                    n_folds=config.no_transfer_folds)
    else:
        base = "active" if method == GROUP_METHOD else method
        if base not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        S = cohorts[source] if source else T
        pred = METHODS[base](TransferTask(S, T, week, mc))
        pred.method = method
    pred.meta["cell"] = {"source": source or "", "target": target, "week": week, "method": method,
                         "seed": seed, "group": group or "", "fold": fold}
    return pred


def score(predictor: WeeklyPredictor, target: Cohort, week: int, at_risk_only: bool = True) -> float:
    """AUC on the labeled target (the stored held-out part for no-transfer)."""
    X, y, _ = slice_for_week(target, week, at_risk_only)
    if y is None:
        raise ValueError("scoring needs target labels for the predicted week")
    idx = predictor.meta.get("test_index")
    if idx is not None:
        X, y = X[np.asarray(idx, dtype=int)], y[np.asarray(idx, dtype=int)]
    return auc(predictor.predict(X), y)


def _safe_score(predictor, target, week, at_risk_only) -> float:
    try:
        return score(predictor, target, week, at_risk_only)
    except UndefinedMetricError:
        log.warning("AUC undefined (one label class) for %s week %d", target.name, week)
        return float("nan")


# --------------------------------------------------------------------------
# grid

_STATE: dict = {}


def plan(config: ExperimentConfig, cohorts_by_seed: dict) -> list:
    units = set()
    pairs = config.resolved_pairs()
    targets = sorted({t for _, t in pairs})
    for seed in config.seeds:
        for k in config.weeks:
            for s, t in pairs:
                units.add(Unit("pad", t, k, seed, s))
                for m in config.methods:
                    if m == GROUP_METHOD:
                        for g in group_values(cohorts_by_seed[seed][t]):
                            units.add(Unit("pad", t, k, seed, s, group=g))
                            units.add(Unit("method", t, k, seed, s, m, g))
                    elif m not in TARGET_ONLY:
                        units.add(Unit("method", t, k, seed, s, m))
            for t in targets:
                for m in config.methods:
                    if m in TARGET_ONLY:
                        units.add(Unit("method", t, k, seed, "", m))
    return sorted(units)


def _run_unit(unit: Unit):
    config: ExperimentConfig = _STATE["config"]
    cohorts = _STATE["cohorts"][unit.seed]
    at_risk = config.method.at_risk_only
    T = cohorts[unit.target]
    T_eval = filter_group(T, unit.group) if unit.group else T
    if unit.kind == "pad":
        XS = pad_features(cohorts[unit.source], unit.week, at_risk)
        XT = pad_features(T_eval, unit.week, at_risk)
        pc = replace(config.pad, seed=config.pad.seed + unit.seed)
        return {"pad": proxy_a_distance(XS, XT, pc).pad}
    if unit.method in ("no-transfer", "no-transfer-AE"):
        aucs = [_safe_score(train_cell(config, cohorts, None, unit.target, unit.week, unit.method,
                                       unit.seed, fold=f), T, unit.week, at_risk)
                for f in range(config.no_transfer_folds)]
        return {"auc": float(np.mean(aucs))}
    pred = train_cell(config, cohorts, unit.source or None, unit.target, unit.week, unit.method,
                      unit.seed, group=unit.group or None)
    out = {"auc": _safe_score(pred, T_eval, unit.week, at_risk)}
    if unit.method == "active" and config.group_attribute:
        # the whole-cohort model scored on each subgroup (compared against active-group)
        out["groups"] = {g: _safe_score(pred, filter_group(T, g), unit.week, at_risk)
                         for g in group_values(T)}
    return out


def _guarded(unit: Unit):
    try:
        return unit, _run_unit(unit), None
    except Exception as exc:  # a failing cell is recorded, not fatal
        log.error("cell failed: %s: %s", unit.label(), exc)
        return unit, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"


@dataclass
class RunOutcome:
    results: list
    failures: list
    out_dir: Path | None

    @property
    def exit_code(self) -> int:
        return 0 if not self.failures else 1


def _assemble(config: ExperimentConfig, cohorts_by_seed: dict, done: dict) -> list:
    rows = []
    attr = config.group_attribute or "group"
    for unit, out in done.items():
        if unit.kind != "method":
            continue
        cohorts = cohorts_by_seed[unit.seed]
        sources = ([unit.source] if unit.source else
                   sorted(s for s, t in config.resolved_pairs() if t == unit.target))
        for s in sources:
            pad = done.get(Unit("pad", unit.target, unit.week, unit.seed, s, group=unit.group))
            target_name = group_label(unit.target, attr, unit.group) if unit.group else unit.target
            T = cohorts[unit.target]
            n_t = filter_group(T, unit.group).n_students if unit.group else T.n_students
            ratio = n_t / cohorts[s].n_students
            rows.append(TransferResult(s, target_name, unit.week, unit.method, unit.seed, out["auc"],
                                       float("nan") if pad is None else pad["pad"], ratio))
            for g, a in sorted(out.get("groups", {}).items()):
                gpad = done.get(Unit("pad", unit.target, unit.week, unit.seed, s, group=g))
                rows.append(TransferResult(s, group_label(unit.target, attr, g), unit.week, unit.method,
                                           unit.seed, a, float("nan") if gpad is None else gpad["pad"],
                                           filter_group(T, g).n_students / cohorts[s].n_students))
    rows.sort(key=lambda r: (r.source, r.target, r.week, r.method, r.seed))
    return rows


def metadata(config: ExperimentConfig, cohorts_by_seed: dict | None = None) -> dict:
    meta = {"name": config.name, "package_version": __version__, "config": config.to_dict(),
            "overrides": config.overrides(), "seeds": [int(s) for s in config.seeds]}
    if cohorts_by_seed:
        meta["cohort_sizes"] = {str(seed): {n: c.n_students for n, c in sorted(cs.items())}
                                for seed, cs in sorted(cohorts_by_seed.items())}
    return meta


def run(config: ExperimentConfig, out_dir=None, parallel: int = 1) -> RunOutcome:
    """Train and score every cell; write results, summary and plot data to ``out_dir``."""
    cohorts_by_seed = {seed: build_cohorts(config, seed) for seed in config.seeds}
    if config.group_attribute:
        for t in {t for _, t in config.resolved_pairs()}:
            if not group_values(cohorts_by_seed[config.seeds[0]][t]):
                raise ValueError(f"target {t!r} has no values for group attribute "
                                 f"{config.group_attribute!r}")
    units = plan(config, cohorts_by_seed)
    _STATE.update(config=config, cohorts=cohorts_by_seed)
    log.info("running %d units with %d worker(s)", len(units), parallel)
    try:
        if parallel > 1:
            with multiprocessing.get_context("fork").Pool(parallel) as pool:
                outcomes = list(pool.imap_unordered(_guarded, units))
        else:
            outcomes = [_guarded(u) for u in units]
    finally:
        _STATE.clear()
    done = {u: out for u, out, err in outcomes if err is None}
    failures = sorted((u.label(), err) for u, out, err in outcomes if err is not None)
    results = _assemble(config, cohorts_by_seed, done)
    out = out_dir or config.output_dir
    if out is not None:
        write_outputs(out, config, results, failures, cohorts_by_seed)
    return RunOutcome(results, failures, Path(out) if out is not None else None)


# --------------------------------------------------------------------------
# outputs

def _write_csv(path, header, rows, meta=None):
    with open(path, "w", newline="") as fh:
        if meta is not None:
            for line in json.dumps(meta, sort_keys=True, indent=1).splitlines():
                fh.write("# " + line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(round(v, 12)) if isinstance(v, float) else v for v in r])


def write_plot_data(out_dir, summary: dict, meta: dict):
    """One CSV per figure analogue, each carrying the provenance header."""
    out = Path(out_dir)
    per_week = [(m, int(k), s["mean"], s["std"], s["n"])
                for m, weeks in summary["per_week"].items() for k, s in weeks.items()]
    _write_csv(out / "per_week.csv", ["method", "week", "mean_auc", "std_auc", "n"], per_week, meta)
    per_pair = [(p, m, s["mean"], s["std"], s["n"]) for p, ms in summary["per_pair"].items()
                for m, s in ms.items()]
    _write_csv(out / "per_pair.csv", ["pair", "method", "mean_auc", "std_auc", "n"], per_pair, meta)
    scatter = [(r["source"], r["target"], r["week"], r["seed"], r["pad"], r["size_ratio"], r["winner"],
                "" if r["auc_ratio_to_no_transfer"] is None else r["auc_ratio_to_no_transfer"])
               for r in summary["scatter"]]
    _write_csv(out / "scatter.csv", ["source", "target", "week", "seed", "pad", "size_ratio", "winner",
                                     "auc_ratio_to_no_transfer"], scatter, meta)
    if "dropout_percentages" in summary:
        rows = [(name, k + 1, v) for name, vals in summary["dropout_percentages"].items()
                for k, v in enumerate(vals)]
        _write_csv(out / "dropout_percentages.csv", ["cohort", "week", "percent"], rows, meta)
        rows = [(name, k + 1, e, v) for name, d in summary["event_frequencies"].items()
                for k, week in enumerate(d["weekly_totals"]) for e, v in zip(d["event_types"], week)]
        _write_csv(out / "event_frequencies.csv", ["cohort", "week", "event_type", "count"], rows, meta)


def write_outputs(out_dir, config, results, failures, cohorts_by_seed=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = metadata(config, cohorts_by_seed)
    write_results(out / "results.csv", results, meta)
    (out / "config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=1) + "\n")
    failed = out / "failed_cells.txt"
    if failures:
        failed.write_text("".join(f"{label}\n    {err.splitlines()[0]}\n" for label, err in failures))
    elif failed.exists():
        failed.unlink()
    if results:
        cohorts = None
        if cohorts_by_seed:
            first = min(cohorts_by_seed)
            cohorts = [replace(c, course_id=name, offering_id="")
                       for name, c in sorted(cohorts_by_seed[first].items())]
        summary = summarize(results, cohorts)
        summary["metadata"] = meta
        (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
        write_plot_data(out, summary, meta)


def report(results_path, out_dir=None) -> dict:
    """Summaries and plot data from an existing results file or directory."""
    p = Path(results_path)
    path = p / "results.csv" if p.is_dir() else p
    if not path.exists():
        raise FileNotFoundError(f"no results file at {path} (empty results directory?)")
    results, meta = read_results(path)
    if not results:
        raise ValueError(f"{path} holds no result rows")
    summary = summarize(results)
    summary["metadata"] = meta
    out = Path(out_dir) if out_dir is not None else path.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    write_plot_data(out, summary, meta)
    return summary
