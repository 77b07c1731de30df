"""Metrics and reports: AUC, Proxy A-distance, classical MDS, embedding weights."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import nn
from .errors import ShapeError, UndefinedMetricError
from .representation import fix_signs, jacobi_eigh


def auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counted one half.

    Counts pairs exactly in integers before the single final division.
    """
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.size != y.size:
        raise ShapeError(f"{s.size} scores but {y.size} labels")
    pos, neg = s[y], np.sort(s[~y])
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("AUC needs both positive and negative labels")
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    twice = int(np.sum(2 * below + (upto - below), dtype=np.int64))
    return twice / (2 * pos.size * neg.size)


# --------------------------------------------------------------------------
# Proxy A-distance

@dataclass
class PadConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-2
    test_fraction: float = 0.2
    seed: int = 0
    mode: str = "pooled"


@dataclass
class PadResult:
    pad: float
    error: float
    n_source: int
    n_target: int


def pad_from_error(error: float) -> float:
    return float(np.clip(2.0 * (1.0 - 2.0 * error), 0.0, 2.0))


def _domain_error(XS, XT, config: PadConfig) -> float:
    X = np.concatenate([XS, XT])
    d = np.concatenate([np.zeros(len(XS)), np.ones(len(XT))])
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(X))
    n_test = int(round(config.test_fraction * len(X)))
    test, train = order[:n_test], order[n_test:]
    for part, name in ((train, "training"), (test, "held-out")):
        if len(np.unique(d[part])) < 2:
            raise ValueError(f"degenerate {name} split: both domains are needed")
    mu = X[train].mean(axis=0)
    sd = X[train].std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    net = nn.build_network([nn.Dense(1), nn.Sigmoid()], (X.shape[1],), config.seed)
    nn.fit(net, Z[train], d[train], "bce",
           nn.TrainingConfig(config.epochs, config.batch_size, config.learning_rate, config.seed))
    pred = net.forward(Z[test]).reshape(-1) >= 0.5
    truth = d[test].astype(bool)
    # balanced error: mean of the two per-domain error rates
    return 0.5 * (np.mean(pred[~truth]) + np.mean(~pred[truth]))


def proxy_a_distance(XS, XT, config: PadConfig = PadConfig()) -> PadResult:
    """PAD = 2(1 - 2 err) from a linear source-vs-target classifier, clipped to [0, 2].

    ``mode="pooled"`` flattens each student's features; ``mode="per-slice"``
    averages the PAD of every (week, event type) marginal.
    """
    XS = np.asarray(XS, dtype=float)
    XT = np.asarray(XT, dtype=float)
    if len(XS) == 0 or len(XT) == 0:
        raise ValueError("both cohorts must be nonempty")
    XS2, XT2 = XS.reshape(len(XS), -1), XT.reshape(len(XT), -1)
    if XS2.shape[1] != XT2.shape[1]:
        raise ShapeError("source and target features differ in dimension")
    if config.mode == "pooled":
        err = _domain_error(XS2, XT2, config)
        return PadResult(pad_from_error(err), float(err), len(XS), len(XT))
    if config.mode == "per-slice":
        errs = [_domain_error(XS2[:, [j]], XT2[:, [j]], config) for j in range(XS2.shape[1])]
        pads = [pad_from_error(e) for e in errs]
        return PadResult(float(np.mean(pads)), float(np.mean(errs)), len(XS), len(XT))
    raise ValueError(f"unknown PAD mode {config.mode!r}")


def pad_features(cohort, week: int | None = None, at_risk_only: bool = True) -> np.ndarray:
    """Cohort features for PAD: ``log1p`` weekly counts before per-course normalization.

    With ``week`` the rows and weeks match ``slice_for_week(cohort, week)``;
    without it every student and week is used.  The per-course maximum used
    by ``normalize`` differs between two samples of one population, and a
    pooled linear classifier detects that scale difference, so PAD compares
    the counts themselves.
    """
    from .data import slice_for_week

    counts = np.asarray(cohort.counts, dtype=float)
    if week is None:
        return np.log1p(counts)
    _, _, idx = slice_for_week(cohort, week, at_risk_only)
    return np.log1p(counts[idx, :week - 1])


# --------------------------------------------------------------------------
# MDS

def mds_embed(distances, dims: int = 2) -> np.ndarray:
    """Classical MDS: top eigenpairs of -1/2 J D^2 J, negative eigenvalues dropped."""
    D = np.asarray(distances, dtype=float)
    m = D.shape[0]
    if D.shape != (m, m):
        raise ShapeError("distance matrix must be square")
    if not np.allclose(D, D.T, atol=1e-12):
        raise ValueError("distance matrix is not symmetric")
    if (D < 0).any() or not np.allclose(np.diag(D), 0.0):
        raise ValueError("distances must be nonnegative with a zero diagonal")
    J = np.eye(m) - 1.0 / m
    Bm = -0.5 * J @ (D * D) @ J
    w, V = jacobi_eigh((Bm + Bm.T) / 2)
    k = min(dims, m)
    vecs = fix_signs(V[:, :k].T).T
    coords = vecs * np.sqrt(np.clip(w[:k], 0.0, None))
    if k < dims:
        coords = np.hstack([coords, np.zeros((m, dims - k))])
    return coords


def pairwise_distances(points) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    diff = P[:, None, :] - P[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def stress(distances, coords) -> float:
    """Kruskal stress-1 between target distances and embedded distances."""
    D = np.asarray(distances, float)
    E = pairwise_distances(coords)
    den = np.sum(D * D)
    return float(np.sqrt(np.sum((D - E) ** 2) / den)) if den > 0 else float(np.sqrt(np.sum(E * E)))


# --------------------------------------------------------------------------
# embedding composition

def embedding_feature_weights(projection, names) -> list:
    """Per-feature weight = norm of its projection column, normalized to sum 1.

    Returns ``[(name, weight), ...]`` sorted by decreasing weight.
    """
    P = np.asarray(projection, dtype=float)
    names = list(names)
    if P.shape[1] != len(names):
        raise ShapeError(f"projection has {P.shape[1]} columns for {len(names)} features")
    w = np.linalg.norm(P, axis=0)
    total = w.sum()
    if total > 0:
        w = w / total
    order = sorted(range(len(names)), key=lambda j: (-w[j], j))
    return [(names[j], float(w[j])) for j in order]


# --------------------------------------------------------------------------
# results and summaries

RESULT_FIELDS = ["source", "target", "week", "method", "seed", "auc", "pad", "size_ratio"]


@dataclass
class TransferResult:
    source: str
    target: str
    week: int
    method: str
    seed: int
    auc: float
    pad: float
    size_ratio: float

    def __post_init__(self):
        if not (np.isnan(self.auc) or 0.0 <= self.auc <= 1.0):
            raise ValueError(f"auc {self.auc} outside [0, 1]")


def _fmt(v):
    if isinstance(v, float):
        return "nan" if np.isnan(v) else repr(round(v, 12))
    return str(v)


def write_results(path, results, metadata: dict | None = None):
    """Results CSV; metadata (resolved config, seeds) goes in leading ``#`` lines."""
    with open(path, "w", newline="") as fh:
        if metadata is not None:
            for line in json.dumps(metadata, sort_keys=True, indent=1).splitlines():
                fh.write("# " + line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for r in results:
            w.writerow([_fmt(getattr(r, f)) for f in RESULT_FIELDS])


def read_results(path):
    """Returns ``(results, metadata)``."""
    meta_lines, body = [], []
    with open(path) as fh:
        for line in fh:
            (meta_lines if line.startswith("# ") else body).append(line[2:] if line.startswith("# ") else line)
    meta = json.loads("".join(meta_lines)) if meta_lines else None
    out = []
    for row in csv.DictReader(io.StringIO("".join(body))):
        out.append(TransferResult(row["source"], row["target"], int(row["week"]), row["method"],
                                  int(row["seed"]), float(row["auc"]), float(row["pad"]),
                                  float(row["size_ratio"])))
    return out, meta


def _mean_std(values):
    a = np.asarray(values, float)
    return {"mean": float(a.mean()), "std": float(a.std()), "n": int(a.size)}


def winner(auc_passive: float, auc_active: float, tie_fraction: float = 0.01) -> str:
    """'passive', 'active' or 'tie' (difference below 1% of their average)."""
    if abs(auc_passive - auc_active) < tie_fraction * 0.5 * (auc_passive + auc_active):
        return "tie"
    return "passive" if auc_passive > auc_active else "active"


def summarize(results, cohorts=None) -> dict:
    results = list(results)
    if not results:
        raise ValueError("no results to summarize")
    by_method = defaultdict(list)
    by_week = defaultdict(lambda: defaultdict(list))
    by_pair = defaultdict(lambda: defaultdict(list))
    for r in results:
        if np.isnan(r.auc):
            continue
        by_method[r.method].append(r.auc)
        by_week[r.method][r.week].append(r.auc)
        by_pair[f"{r.source}->{r.target}"][r.method].append(r.auc)

    idx = {(r.source, r.target, r.week, r.seed, r.method): r for r in results}
    scatter = []
    for (s, t, k, seed, m), r in sorted(idx.items()):
        if m != "passive" or (s, t, k, seed, "active") not in idx:
            continue
        a = idx[(s, t, k, seed, "active")]
        nt = [x for (s2, t2, k2, seed2, m2), x in idx.items()
              if m2 == "no-transfer" and t2 == t and k2 == k and seed2 == seed]
        best = max(r.auc, a.auc)
        scatter.append({"source": s, "target": t, "week": k, "seed": seed, "pad": r.pad,
                        "size_ratio": r.size_ratio, "winner": winner(r.auc, a.auc),
                        "auc_ratio_to_no_transfer": best / nt[0].auc if nt and nt[0].auc > 0 else None})

    summary = {
        "overall": {m: _mean_std(v) for m, v in sorted(by_method.items())},
        "per_week": {m: {str(k): _mean_std(v) for k, v in sorted(weeks.items())}
                     for m, weeks in sorted(by_week.items())},
        "per_pair": {p: {m: _mean_std(v) for m, v in sorted(ms.items())} for p, ms in sorted(by_pair.items())},
        "scatter": scatter,
        "flags": sorted({f"in-situ week {r.week}: constant majority-rate fallback"
                         for r in results if r.method == "in-situ" and r.week == 2}),
    }
    if cohorts:
        from .data import weekly_dropout_percentages, weekly_event_frequencies
        summary["dropout_percentages"] = {c.name: weekly_dropout_percentages(c).round(6).tolist()
                                          for c in cohorts}
        summary["event_frequencies"] = {c.name: {"event_types": list(c.vocabulary.names),
                                                 "weekly_totals": weekly_event_frequencies(c).tolist()}
                                        for c in cohorts}
    return summary
