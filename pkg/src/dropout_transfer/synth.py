"""Synthetic clickstream cohorts with controllable domain shift.

Each student has a latent engagement random walk.  Weekly counts are
Poisson with rate ``mean * decay**(k-1) * exp(loading * engagement)``; the
counts of one week are coupled through a Gaussian copula with the
configured correlation matrix.  Dropout happens with a weekly hazard that
falls with the previous week's engagement, after which video events stop.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import special, stats

from .data import Cohort, EventVocabulary
from .errors import ConfigurationError

N_WEEKS = 9


def factor_correlation(loadings: np.ndarray) -> np.ndarray:
    """Unit-diagonal PSD correlation matrix ``L L^T + diag(1 - rowsum(L^2))``."""
    L = np.asarray(loadings, dtype=float)
    C = L @ L.T
    np.fill_diagonal(C, 1.0)
    return C


def default_correlation(vocabulary: EventVocabulary) -> np.ndarray:
    # one factor for video, one for everything else
    video = np.asarray(vocabulary.video, dtype=bool)
    L = np.zeros((len(vocabulary), 2))
    L[video, 0] = 0.6
    L[~video, 1] = 0.5
    return factor_correlation(L)


_DEFAULT_MEANS = {
    "play_video": 6.0, "pause_video": 4.0, "seek_video": 2.0, "load_video": 5.0,
    "speed_change_video": 0.6, "stop_video": 1.2, "problem_check": 4.0,
    "problem_graded": 2.0, "problem_show": 1.0, "problem_save": 0.6,
    "seq_goto": 3.0, "seq_next": 3.0, "page_close": 2.0,
}


@dataclass
class Archetype:
    """A student subpopulation (also used as the demographic attribute value)."""
    name: str
    engagement_offset: float = 0.0
    frequency_scale: tuple | None = None
    loading: tuple | None = None  # overrides the cohort loading for this subpopulation


@dataclass
class ShiftConfig:
    frequency_scale: tuple | None = None
    correlation_perturbation: float = 0.0
    cohort_mixture_weights: tuple | None = None


@dataclass
class GeneratorConfig:
    n_students: int = 2000
    n_weeks: int = N_WEEKS
    vocabulary: EventVocabulary = field(default_factory=EventVocabulary.default)
    engagement_mean: tuple | None = None
    engagement_decay: tuple | None = None
    loading: tuple | None = None
    correlation: np.ndarray | None = None
    dropout_hazard: tuple = (0.0, 0.15, 0.1, 0.08, 0.07, 0.07, 0.07, 0.07, 0.07)
    hazard_coupling: float = 2.0
    engagement_sd: float = 0.6
    engagement_step_sd: float = 0.35
    engagement_trend: float = 0.05
    residual_activity: float = 0.1
    archetypes: tuple = (Archetype("default"),)
    shift: ShiftConfig = field(default_factory=ShiftConfig)
    course_id: str = "synth"
    offering_id: str = ""
    seed: int = 0

    def resolved(self):
        """Per-type arrays and the effective correlation matrix, validated."""
        E, T = len(self.vocabulary), self.n_weeks
        if self.n_students < 1:
            raise ConfigurationError("n_students must be >= 1")
        mean = (np.array([_DEFAULT_MEANS.get(n, 1.0) for n in self.vocabulary.names])
                if self.engagement_mean is None else np.asarray(self.engagement_mean, float))
        decay = np.full(E, 0.96) if self.engagement_decay is None else np.asarray(self.engagement_decay, float)
        loading = np.full(E, 0.5) if self.loading is None else np.asarray(self.loading, float)
        hazard = np.asarray(self.dropout_hazard, float)
        if hazard.shape != (T,):
            raise ConfigurationError(f"dropout_hazard needs {T} entries")
        if ((hazard < 0) | (hazard > 1)).any():
            raise ConfigurationError("hazards must lie in [0, 1]")
        for name, arr in (("engagement_mean", mean), ("engagement_decay", decay), ("loading", loading)):
            if arr.shape != (E,):
                raise ConfigurationError(f"{name} needs {E} entries")
        corr = default_correlation(self.vocabulary) if self.correlation is None else np.asarray(self.correlation, float)
        validate_correlation(corr, E)
        p = self.shift.correlation_perturbation
        if not 0.0 <= p <= 1.0:
            raise ConfigurationError("correlation_perturbation must lie in [0, 1]")
        corr = (1.0 - p) * corr + p * np.eye(E)
        scale = np.ones(E) if self.shift.frequency_scale is None else np.asarray(self.shift.frequency_scale, float)
        if scale.shape != (E,) or (scale < 0).any():
            raise ConfigurationError(f"frequency_scale needs {E} nonnegative entries")
        weights = (np.ones(len(self.archetypes)) if self.shift.cohort_mixture_weights is None
                   else np.asarray(self.shift.cohort_mixture_weights, float))
        if weights.shape != (len(self.archetypes),) or (weights < 0).any() or weights.sum() <= 0:
            raise ConfigurationError("cohort_mixture_weights must match archetypes and be nonnegative")
        for a in self.archetypes:
            for name, arr in (("frequency_scale", a.frequency_scale), ("loading", a.loading)):
                if arr is not None and np.shape(arr) != (E,):
                    raise ConfigurationError(f"archetype {a.name!r}: {name} needs {E} entries")
        return mean * scale, decay, loading, hazard, corr, weights / weights.sum()


_PER_TYPE = ("engagement_mean", "engagement_decay", "loading")


def _per_type(value, vocabulary: EventVocabulary, default: np.ndarray, name: str) -> tuple:
    """A per-type vector from a list, or from a ``{type: value}`` dict over ``default``."""
    if isinstance(value, dict):
        out = np.array(default, dtype=float)
        for key, v in value.items():
            if key not in vocabulary.names:
                raise ConfigurationError(f"{name}: unknown event type {key!r}")
            out[vocabulary.index(key)] = float(v)
        return tuple(float(x) for x in out)
    return tuple(float(v) for v in value)


def generator_config_from_dict(d: dict, vocabulary: EventVocabulary | None = None) -> GeneratorConfig:
    """Build a GeneratorConfig from JSON-style data; unknown keys are errors.

    Per-type fields accept a full list or a partial ``{event_type: value}``
    mapping; ``archetypes`` is a list of ``{name, engagement_offset,
    frequency_scale, loading}`` and ``shift`` mirrors :class:`ShiftConfig`.
    A partial archetype ``loading`` falls back to the cohort loading.
    """
    vocabulary = vocabulary or EventVocabulary.default()
    base = GeneratorConfig(vocabulary=vocabulary)
    mean0, decay0, loading0 = base.resolved()[:3]
    defaults = {"engagement_mean": mean0, "engagement_decay": decay0, "loading": loading0}
    allowed = {f.name for f in fields(GeneratorConfig)} - {"vocabulary"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"unknown generator keys: {sorted(unknown)}")
    kw = {}
    for key, value in d.items():
        if key in _PER_TYPE:
            kw[key] = _per_type(value, vocabulary, defaults[key], key)
        elif key == "correlation":
            kw[key] = np.asarray(value, dtype=float)
        elif key == "dropout_hazard":
            kw[key] = tuple(float(v) for v in value)
        elif key == "archetypes":
            arch = []
            for a in value:
                extra = set(a) - {"name", "engagement_offset", "frequency_scale", "loading"}
                if extra:
                    raise ConfigurationError(f"unknown archetype keys: {sorted(extra)}")
                scale = a.get("frequency_scale")
                if scale is not None:
                    scale = _per_type(scale, vocabulary, np.ones(len(vocabulary)), "frequency_scale")
                loading = a.get("loading")
                if loading is not None:
                    cohort_loading = _per_type(d.get("loading", loading0), vocabulary, loading0, "loading")
                    loading = _per_type(loading, vocabulary, np.asarray(cohort_loading), "loading")
                arch.append(Archetype(a["name"], float(a.get("engagement_offset", 0.0)), scale, loading))
            kw[key] = tuple(arch)
        elif key == "shift":
            extra = set(value) - {f.name for f in fields(ShiftConfig)}
            if extra:
                raise ConfigurationError(f"unknown shift keys: {sorted(extra)}")
            sh = dict(value)
            if sh.get("frequency_scale") is not None:
                sh["frequency_scale"] = _per_type(sh["frequency_scale"], vocabulary,
                                                  np.ones(len(vocabulary)), "frequency_scale")
            if sh.get("cohort_mixture_weights") is not None:
                sh["cohort_mixture_weights"] = tuple(float(v) for v in sh["cohort_mixture_weights"])
            kw[key] = ShiftConfig(**sh)
        else:
            kw[key] = value
    config = replace(base, **kw)
    config.resolved()
    return config


def validate_correlation(corr: np.ndarray, E: int):
    if corr.shape != (E, E):
        raise ConfigurationError(f"correlation must be {E}x{E}")
    if not np.allclose(corr, corr.T, atol=1e-12):
        raise ConfigurationError("correlation matrix is not symmetric")
    if not np.allclose(np.diag(corr), 1.0):
        raise ConfigurationError("correlation matrix needs a unit diagonal")
    lo = np.linalg.eigvalsh(corr).min()
    if lo < -1e-10:
        raise ConfigurationError(f"correlation matrix is not PSD (min eigenvalue {lo:.3g})")


def generate_cohort(config: GeneratorConfig) -> Cohort:
    """Sample a cohort; ``cohort.dropout_week`` equals the generator's own dropout draw."""
    mean, decay, loading, hazard, corr, weights = config.resolved()
    rng = np.random.default_rng(config.seed)
    n, T, E = config.n_students, config.n_weeks, len(config.vocabulary)
    video = np.asarray(config.vocabulary.video, bool)

    group = rng.choice(len(config.archetypes), size=n, p=weights)
    offsets = np.array([a.engagement_offset for a in config.archetypes])
    group_scale = np.stack([np.ones(E) if a.frequency_scale is None else np.asarray(a.frequency_scale, float)
                            for a in config.archetypes])
    group_loading = np.stack([loading if a.loading is None else np.asarray(a.loading, float)
                              for a in config.archetypes])

    steps = rng.normal(-config.engagement_trend, config.engagement_step_sd, size=(n, T))
    steps[:, 0] = rng.normal(offsets[group], config.engagement_sd)
    engagement = np.cumsum(steps, axis=1)

    # week k (1-based) hazard depends on engagement in week k-1
    dropout_week = np.full(n, T + 1)
    alive = np.ones(n, bool)
    draws = rng.random((n, T))
    for k in range(2, T + 1):
        h = np.clip(hazard[k - 1] * np.exp(-config.hazard_coupling * engagement[:, k - 2]), 0.0, 1.0)
        hit = alive & (draws[:, k - 1] < h)
        dropout_week[hit] = k
        alive &= ~hit

    weeks = np.arange(1, T + 1)
    rate = (mean * group_scale[group][:, None, :] * decay[None, None, :] ** (weeks[None, :, None] - 1)
            * np.exp(group_loading[group][:, None, :] * engagement[:, :, None]))
    after = weeks[None, :] >= dropout_week[:, None]
    rate = np.where(after[:, :, None] & video[None, None, :], 0.0, rate)
    rate = np.where(after[:, :, None] & ~video[None, None, :], rate * config.residual_activity, rate)

    # symmetric square root tolerates singular (e.g. perfectly correlated) matrices
    w, V = np.linalg.eigh(corr)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    z = rng.standard_normal((n, T, E)) @ root.T
    u = np.clip(special.ndtr(z), 1e-15, 1.0 - 1e-15)
    counts = stats.poisson.ppf(u, rate).astype(np.int64)

    # the last week before dropout must carry a video event so labels are recoverable
    last = dropout_week - 2
    rows = np.flatnonzero(last >= 0)
    no_video = counts[rows, last[rows]][:, video].sum(axis=1) == 0
    fix = rows[no_video]
    first_video = int(np.flatnonzero(video)[0])
    counts[fix, last[fix], first_video] += 1

    ids = np.array([f"{config.course_id}{config.offering_id}-{i:05d}" for i in range(n)], dtype=object)
    demo = np.array([config.archetypes[g].name for g in group], dtype=object)
    cohort = Cohort.from_counts(config.course_id, config.offering_id, ids, counts, config.vocabulary, demo)
    cohort.generator_dropout_week = dropout_week
    return cohort


def write_ground_truth(path, cohort: Cohort):
    truth = getattr(cohort, "generator_dropout_week", cohort.dropout_week)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["student_id", "dropout_week"])
        for sid, dw in zip(cohort.student_ids, truth):
            w.writerow([sid, int(dw)])


def read_ground_truth(path) -> dict:
    with open(path, newline="") as fh:
        return {row["student_id"]: int(row["dropout_week"]) for row in csv.DictReader(fh)}
