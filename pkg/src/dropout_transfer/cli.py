"""Command line entry point: ``dropout-transfer <subcommand> ...``.

Subcommands: synth, ingest, pad, train, evaluate, weights, report, run.
Every file written carries the resolved configuration and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_from_dict, load_config
from .data import (EventVocabulary, IngestStats, aggregate_weekly, ingest_events, label_dropout,
                   write_demographics, write_weekly_counts)
from .errors import ConfigurationError
from .evaluation import (PadConfig, embedding_feature_weights, mds_embed, pad_features,
                         proxy_a_distance)
from .experiment import (build_cohorts, cohort_from_spec, metadata, report, run, score, train_cell)
from .representation import fit_nn_pca
from .synth import generate_cohort, generator_config_from_dict, write_ground_truth
from .transfer import TransferTask, WeeklyPredictor, train_active

log = logging.getLogger("dropout_transfer")


def _header(fh, meta: dict):
    for line in json.dumps(meta, sort_keys=True, indent=1).splitlines():
        fh.write("# " + line + "\n")


def _write_table(path, header, rows, meta):
    with open(path, "w", newline="") as fh:
        _header(fh, meta)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(round(float(v), 12)) if isinstance(v, (float, np.floating)) else v for v in r])


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace_seeds([args.seed])
    methods = getattr(args, "methods", None)
    weeks = getattr(args, "weeks", None)
    if methods or weeks:
        d = cfg.to_dict()
        if methods:
            d["methods"] = methods.split(",")
        if weeks:
            d["weeks"] = _parse_weeks(weeks)
        cfg = config_from_dict(d)
    return cfg


def _parse_weeks(text: str) -> list:
    """``"2-6"`` or ``"2,3,5"``."""
    out = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def _seed_of(cfg: ExperimentConfig, args) -> int:
    return args.seed if args.seed is not None else cfg.seeds[0]


# --------------------------------------------------------------------------
# subcommands

def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw = json.loads(Path(args.config).read_text()) if Path(args.config).exists() else None
    if raw is not None and "cohorts" not in raw:
        # a bare generator config
        gen = generator_config_from_dict(raw)
        if args.seed is not None:
            gen = replace(gen, seed=args.seed)
        cohorts = {args.name or gen.course_id: generate_cohort(gen)}
        meta = {"generator": raw, "seed": gen.seed, "package_version": __version__}
    else:
        cfg = _config(args)
        seed = _seed_of(cfg, args)
        specs = [c for c in cfg.cohorts if c.synth is not None]
        cohorts = {c.name: cohort_from_spec(c, seed, cfg.reseed_cohorts) for c in specs}
        meta = metadata(cfg)
        meta["seed"] = seed
    for name, c in cohorts.items():
        write_weekly_counts(out / f"{name}.counts.csv", c)
        write_ground_truth(out / f"{name}.truth.csv", c)
        if c.demographics is not None:
            write_demographics(out / f"{name}.demographics.csv", c, attribute="archetype")
    (out / "synth.json").write_text(json.dumps({**meta, "cohorts": sorted(cohorts)}, sort_keys=True,
                                               indent=1) + "\n")
    print(f"wrote {len(cohorts)} cohort(s) to {out}")
    return 0


def cmd_ingest(args):
    vocab = EventVocabulary.from_file(args.vocabulary) if args.vocabulary else EventVocabulary.default()
    start = datetime.fromisoformat(args.course_start) if args.course_start else None
    stats = IngestStats()
    mats = aggregate_weekly(ingest_events(args.events, args.format, vocab, args.n_weeks, start,
                                          stats=stats), vocab, args.n_weeks)
    ids = list(mats)
    counts = (np.stack([mats[s] for s in ids]) if ids
              else np.zeros((0, args.n_weeks, len(vocab)), dtype=np.int64))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_weekly_counts(out / "counts.csv", counts, ids, vocab)
    dw = label_dropout(counts, vocab) if ids else np.zeros(0, int)
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["student_id", "dropout_week"])
        w.writerows([s, int(d)] for s, d in zip(ids, dw))
    vocab.to_file(out / "vocabulary.txt")
    info = {"source": str(args.events), "format": args.format, "n_weeks": args.n_weeks,
            "course_start": args.course_start, "students": len(ids), "rows": stats.rows,
            "skipped_unknown_type": stats.unknown_type, "skipped_out_of_range": stats.out_of_range,
            "package_version": __version__}
    (out / "ingest.json").write_text(json.dumps(info, sort_keys=True, indent=1) + "\n")
    print(f"ingested {len(ids)} students ({stats.unknown_type} unknown-type and "
          f"{stats.out_of_range} out-of-range events skipped)")
    return 0


def cmd_pad(args):
    cfg = _config(args)
    seed = _seed_of(cfg, args)
    cohorts = build_cohorts(cfg, seed)
    names = sorted(cohorts)
    weeks = args.upto_week or min(c.n_weeks for c in cohorts.values())
    pc = replace(cfg.pad, mode=args.mode or cfg.pad.mode, seed=cfg.pad.seed + seed)
    feats = {n: pad_features(cohorts[n])[:, :weeks] for n in names}
    m = len(names)
    D = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            D[i, j] = D[j, i] = proxy_a_distance(feats[names[i]], feats[names[j]], pc).pad
    coords = mds_embed(D, 2)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {**metadata(cfg), "seed": seed, "pad": {"mode": pc.mode, "weeks": weeks}}
    _write_table(out / "pad_matrix.csv", ["cohort"] + names,
                 [[names[i]] + list(D[i]) for i in range(m)], meta)
    _write_table(out / "mds.csv", ["cohort", "x", "y"],
                 [[names[i], coords[i, 0], coords[i, 1]] for i in range(m)], meta)
    print(f"PAD matrix for {m} cohorts written to {out}")
    return 0


def cmd_train(args):
    cfg = _config(args)
    seed = _seed_of(cfg, args)
    cohorts = build_cohorts(cfg, seed)
    pred = train_cell(cfg, cohorts, args.source, args.target, args.week, args.method, seed,
                      fold=args.fold, group=args.group)
    pred.meta["provenance"] = {**metadata(cfg), "seed": seed}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    pred.save(args.out)
    print(f"saved {args.method} week-{args.week} predictor to {args.out}")
    return 0


def cmd_evaluate(args):
    pred = WeeklyPredictor.load(args.model)
    prov = pred.meta.get("provenance")
    cell = pred.meta.get("cell", {})
    if args.config:
        cfg = _config(args)
    elif prov:
        cfg = config_from_dict(prov["config"])
    else:
        raise ConfigurationError("model carries no provenance; pass --config")
    seed = args.seed if args.seed is not None else cell.get("seed", cfg.seeds[0])
    target = args.target or cell.get("target")
    cohorts = build_cohorts(cfg, seed)
    T = cohorts[target]
    group = cell.get("group") or None
    if group:
        from .data import filter_group
        T = filter_group(T, group)
    value = score(pred, T, pred.week, cfg.method.at_risk_only)
    result = {"auc": value, "method": pred.method, "week": pred.week, "target": target,
              "group": group or "", "seed": seed, "model": str(args.model), "provenance": prov}
    text = json.dumps(result, sort_keys=True, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(f"AUC {value:.6f}")
    return 0


def cmd_weights(args):
    cfg = _config(args)
    seed = _seed_of(cfg, args)
    cohorts = build_cohorts(cfg, seed)
    names = None
    weights = []
    if args.mode == "nn-pca":
        for name in sorted(cohorts):
            c = cohorts[name]
            X = c.series[:, :args.week - 1].reshape(-1, c.series.shape[2])
            model = fit_nn_pca(X, args.components, seed=seed)
            names = c.vocabulary.names
            weights.append(dict(embedding_feature_weights(model.projection, names)))
    else:
        mc = replace(cfg.method, active_autoencoder="linear", bottleneck=args.components, seed=seed)
        for s, t in cfg.resolved_pairs():
            pred = train_active(TransferTask(cohorts[s], cohorts[t], args.week, mc))
            conv = pred.autoencoder.encoder.layers[0]
            names = cohorts[s].vocabulary.names
            weights.append(dict(embedding_feature_weights(conv.W.reshape(len(names), -1).T, names)))
    mean = {n: float(np.mean([w[n] for w in weights])) for n in names}
    ranked = sorted(names, key=lambda n: (-mean[n], names.index(n)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = {**metadata(cfg), "seed": seed, "weights": {"mode": args.mode, "week": args.week,
                                                       "components": args.components}}
    _write_table(out, ["rank", "event_type", "weight"],
                 [[i + 1, n, mean[n]] for i, n in enumerate(ranked)], meta)
    print("\n".join(f"{i + 1:2d} {n:20s} {mean[n]:.4f}" for i, n in enumerate(ranked)))
    return 0


def cmd_report(args):
    summary = report(args.results, args.out)
    for m, s in summary["overall"].items():
        print(f"{m:16s} {s['mean']:.4f} ± {s['std']:.4f} (n={s['n']})")
    return 0


def cmd_run(args):
    cfg = _config(args)
    outcome = run(cfg, args.out, parallel=args.parallel)
    print(f"{len(outcome.results)} result rows written to {outcome.out_dir}")
    if outcome.failures:
        print(f"{len(outcome.failures)} cell(s) failed:", file=sys.stderr)
        for label, err in outcome.failures:
            print(f"  {label}: {err.splitlines()[0]}", file=sys.stderr)
    return outcome.exit_code


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dropout-transfer", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="JSON config file or preset name (benchmark, groups, smoke)")
        sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("synth", help="generate synthetic cohorts")
    common(sp)
    sp.add_argument("--name", default=None, help="cohort name for a bare generator config")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ingest", help="event CSV -> weekly counts, labels")
    sp.add_argument("events")
    sp.add_argument("--format", default="weekly_counts", choices=["weekly_counts", "raw_timestamped"])
    sp.add_argument("--vocabulary", default=None)
    sp.add_argument("--course-start", default=None, help="ISO datetime, required for raw logs")
    sp.add_argument("--n-weeks", type=int, default=9)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("pad", help="pairwise PAD matrix and MDS coordinates")
    common(sp)
    sp.add_argument("--mode", choices=["pooled", "per-slice"], default=None)
    sp.add_argument("--upto-week", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_pad)

    sp = sub.add_parser("train", help="train a single cell")
    common(sp)
    sp.add_argument("--source", default=None)
    sp.add_argument("--target", required=True)
    sp.add_argument("--week", type=int, required=True)
    sp.add_argument("--method", required=True)
    sp.add_argument("--fold", type=int, default=0)
    sp.add_argument("--group", default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a trained predictor against target labels")
    common(sp, config_required=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--target", default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("weights", help="embedding composition per raw event type")
    common(sp)
    sp.add_argument("--mode", choices=["nn-pca", "active-linear"], default="nn-pca")
    sp.add_argument("--week", type=int, default=6)
    sp.add_argument("--components", type=int, default=6)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_weights)

    sp = sub.add_parser("report", help="summary and plot data from results")
    sp.add_argument("results")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("run", help="run the whole experiment grid")
    common(sp)
    sp.add_argument("--out", default=None)
    sp.add_argument("--parallel", type=int, default=1)
    sp.add_argument("--methods", default=None, help="comma-separated subset")
    sp.add_argument("--weeks", default=None, help="e.g. 2-6 or 2,4")
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
