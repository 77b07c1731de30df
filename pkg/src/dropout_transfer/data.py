"""Event logs -> weekly normalized frequency series, dropout labels and cohorts."""

from __future__ import annotations

import csv
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptyGroupError, IngestError, ShapeError

log = logging.getLogger(__name__)

DEFAULT_EVENT_TYPES = (
    ("play_video", True),
    ("pause_video", True),
    ("seek_video", True),
    ("load_video", True),
    ("speed_change_video", True),
    ("stop_video", True),
    ("problem_check", False),
    ("problem_graded", False),
    ("problem_show", False),
    ("problem_save", False),
    ("seq_goto", False),
    ("seq_next", False),
    ("page_close", False),
)


@dataclass(frozen=True)
class EventVocabulary:
    names: tuple
    video: tuple

    def __post_init__(self):
        if len(self.names) != len(self.video):
            raise ValueError("names and video flags differ in length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("event type names must be unique")
        if not any(self.video):
            raise ValueError("vocabulary needs at least one video event type")

    @classmethod
    def default(cls) -> "EventVocabulary":
        return cls(tuple(n for n, _ in DEFAULT_EVENT_TYPES), tuple(v for _, v in DEFAULT_EVENT_TYPES))

    @classmethod
    def from_file(cls, path) -> "EventVocabulary":
        """One event type per line; a leading ``*`` marks a video event."""
        names, video = [], []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            flag = line.startswith("*")
            names.append(line.lstrip("*").strip())
            video.append(flag)
        return cls(tuple(names), tuple(video))

    def to_file(self, path):
        Path(path).write_text("".join(("*" if v else "") + n + "\n" for n, v in zip(self.names, self.video)))

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def video_indices(self) -> np.ndarray:
        return np.flatnonzero(self.video)


@dataclass(frozen=True)
class EventRecord:
    student_id: str
    week: int
    event_type: str
    count: int = 1


@dataclass
class IngestStats:
    rows: int = 0
    unknown_type: int = 0
    out_of_range: int = 0


def week_of(timestamp: datetime, course_start: datetime, week_length: timedelta = timedelta(days=7)) -> int:
    """Week index (1-based) on half-open intervals [start + (k-1)L, start + kL)."""
    return int((timestamp - course_start) // week_length) + 1


def ingest_events(path, format: str, vocabulary: EventVocabulary, n_weeks: int = 9,
                  course_start: datetime | None = None, week_length: timedelta = timedelta(days=7),
                  stats: IngestStats | None = None) -> Iterator[EventRecord]:
    """Stream EventRecords from a raw-timestamp or weekly-counts CSV.

    Unknown event types and events beyond ``n_weeks`` are skipped and counted
    in ``stats``; malformed rows raise :class:`IngestError` with the line number.
    """
    if format not in ("raw_timestamped", "weekly_counts"):
        raise ValueError(f"unknown format {format!r}")
    if format == "raw_timestamped" and course_start is None:
        raise ValueError("course_start is required for raw_timestamped logs")
    stats = stats if stats is not None else IngestStats()
    known = set(vocabulary.names)
    expected = (["student_id", "timestamp", "event_type"] if format == "raw_timestamped"
                else ["student_id", "week", "event_type", "count"])
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise IngestError(f"expected header {','.join(expected)}", line=1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise IngestError(f"expected {len(expected)} fields, got {len(row)}", line=line_no)
            stats.rows += 1
            sid, event_type = row[0].strip(), row[2].strip()
            if not sid or not event_type:
                raise IngestError("empty student_id or event_type", line=line_no)
            try:
                if format == "raw_timestamped":
                    ts = datetime.fromisoformat(row[1].strip())
                    if ts < course_start:
                        raise IngestError(f"timestamp {row[1]} precedes course start", line=line_no)
                    week, count = week_of(ts, course_start, week_length), 1
                else:
                    week, count = int(row[1]), int(row[3])
            except ValueError as exc:
                raise IngestError(str(exc), line=line_no) from None
            if count < 0 or week < 1:
                raise IngestError("negative count or week < 1", line=line_no)
            if event_type not in known:
                stats.unknown_type += 1
                continue
            if week > n_weeks:
                stats.out_of_range += 1
                continue
            yield EventRecord(sid, week, event_type, count)
    if stats.unknown_type or stats.out_of_range:
        log.warning("%s: skipped %d events of unknown type, %d beyond week %d",
                    path, stats.unknown_type, stats.out_of_range, n_weeks)


def aggregate_weekly(events: Iterable[EventRecord], vocabulary: EventVocabulary, n_weeks: int):
    """Per-student (n_weeks, E) count matrices, keyed by student id in sorted order."""
    col = {n: i for i, n in enumerate(vocabulary.names)}
    mats = defaultdict(lambda: np.zeros((n_weeks, len(vocabulary)), dtype=np.int64))
    for ev in events:
        if not 1 <= ev.week <= n_weeks:
            raise ValueError(f"week {ev.week} outside [1, {n_weeks}]")
        mats[ev.student_id][ev.week - 1, col[ev.event_type]] += ev.count
    return {sid: mats[sid] for sid in sorted(mats) if mats[sid].any()}


def normalize(counts: np.ndarray) -> np.ndarray:
    """Scale each event type by its maximum over all students and weeks of the course."""
    counts = np.asarray(counts, dtype=float)
    peak = counts.max(axis=(0, 1), keepdims=True) if counts.size else np.zeros((1, 1, counts.shape[-1]))
    return np.divide(counts, peak, out=np.zeros_like(counts), where=peak > 0)


def label_dropout(counts: np.ndarray, vocabulary: EventVocabulary) -> np.ndarray:
    """Dropout week per student: the week after the last video event, at least 2."""
    counts = np.asarray(counts)
    has_video = counts[:, :, vocabulary.video_indices].sum(axis=2) > 0
    n_weeks = counts.shape[1]
    # index of last True along weeks; students without video events -> 0
    last = np.where(has_video.any(axis=1), n_weeks - np.argmax(has_video[:, ::-1], axis=1), 0)
    return np.maximum(last + 1, 2)


def dropout_indicators(dropout_week: np.ndarray, n_weeks: int) -> np.ndarray:
    """Boolean (n, T) matrix with y[i, k-1] = k >= dropout_week[i]."""
    weeks = np.arange(1, n_weeks + 1)
    return weeks[None, :] >= np.asarray(dropout_week)[:, None]


@dataclass(frozen=True)
class DropoutLabels:
    dropout_week: int
    n_weeks: int

    @property
    def y(self) -> np.ndarray:
        return dropout_indicators(np.array([self.dropout_week]), self.n_weeks)[0]


@dataclass
class Cohort:
    """One course offering: raw counts, normalized series and dropout labels.

    ``label_horizon`` is the last week whose labels are visible; a target
    cohort handed to a transfer method at week k has ``label_horizon = k - 1``.
    """
    course_id: str
    offering_id: str
    student_ids: np.ndarray
    counts: np.ndarray
    series: np.ndarray
    dropout_week: np.ndarray
    vocabulary: EventVocabulary
    demographics: np.ndarray | None = None
    label_horizon: int | None = None

    def __post_init__(self):
        n = len(self.student_ids)
        if self.series.shape[0] != n or self.dropout_week.shape[0] != n:
            raise ShapeError("series, labels and student ids disagree in length")
        if self.series.shape[2] != len(self.vocabulary):
            raise ShapeError("series width does not match vocabulary size")
        if self.label_horizon is None:
            self.label_horizon = self.n_weeks

    @classmethod
    def from_counts(cls, course_id, offering_id, student_ids, counts, vocabulary,
                    demographics=None) -> "Cohort":
        counts = np.asarray(counts, dtype=np.int64)
        return cls(course_id, offering_id, np.asarray(student_ids, dtype=object), counts,
                   normalize(counts), label_dropout(counts, vocabulary), vocabulary,
                   None if demographics is None else np.asarray(demographics, dtype=object))

    @property
    def name(self) -> str:
        return f"{self.course_id}/{self.offering_id}" if self.offering_id else self.course_id

    @property
    def n_students(self) -> int:
        return len(self.student_ids)

    @property
    def n_weeks(self) -> int:
        return self.series.shape[1]

    @property
    def labels(self) -> np.ndarray:
        """(n, T) dropout indicators; weeks past ``label_horizon`` are not available."""
        y = dropout_indicators(self.dropout_week, self.n_weeks)
        return y[:, :self.label_horizon]

    def subset(self, idx) -> "Cohort":
        idx = np.asarray(idx)
        return replace(self, student_ids=self.student_ids[idx], counts=self.counts[idx],
                       series=self.series[idx], dropout_week=self.dropout_week[idx],
                       demographics=None if self.demographics is None else self.demographics[idx])

    def hide_labels_from(self, week: int) -> "Cohort":
        """Copy whose labels for ``week`` and later are withheld."""
        hidden = replace(self, label_horizon=min(self.label_horizon, week - 1))
        # labels beyond the horizon must not be recoverable from the copy
        censored = np.minimum(self.dropout_week, week)
        return replace(hidden, dropout_week=censored)


def slice_for_week(cohort: Cohort, k: int, at_risk_only: bool = True):
    """Features over weeks 1..k-1 and the week-k label.

    Returns ``(X, y, index)`` with X of shape (n_k, k-1, E).  With
    ``at_risk_only`` only students with y_{k-1} = False are kept.  ``y`` is
    None when week k lies beyond the cohort's label horizon.
    """
    if not 2 <= k <= cohort.n_weeks:
        raise ValueError(f"week {k} outside [2, {cohort.n_weeks}]")
    if at_risk_only:
        if cohort.label_horizon < k - 1:
            raise ValueError(f"at-risk filtering needs labels up to week {k - 1}")
        idx = np.flatnonzero(cohort.dropout_week > k - 1)
    else:
        idx = np.arange(cohort.n_students)
    X = cohort.series[idx, :k - 1]
    y = None if cohort.label_horizon < k else (cohort.dropout_week[idx] <= k)
    return X, y, idx


def filter_group(cohort: Cohort, value: str) -> Cohort:
    if cohort.demographics is None:
        raise ValueError(f"cohort {cohort.name} has no demographics")
    idx = np.flatnonzero(cohort.demographics == value)
    if idx.size == 0:
        raise EmptyGroupError(f"no students with attribute value {value!r} in {cohort.name}")
    log.info("group %r: %d of %d students", value, idx.size, cohort.n_students)
    return cohort.subset(idx)


def group_counts(cohort: Cohort) -> dict:
    if cohort.demographics is None:
        return {}
    return dict(sorted(Counter(v for v in cohort.demographics if v is not None).items()))


def weekly_dropout_percentages(cohort: Cohort) -> np.ndarray:
    """Share of students (in %) whose dropout happens in each week 1..T."""
    weeks = np.arange(1, cohort.n_weeks + 1)
    return 100.0 * (cohort.dropout_week[:, None] == weeks[None, :]).mean(axis=0)


def weekly_event_frequencies(cohort: Cohort) -> np.ndarray:
    """Total raw event counts per (week, type)."""
    return cohort.counts.sum(axis=0)


# --------------------------------------------------------------------------
# CSV interfaces

def write_weekly_counts(path, cohort_or_counts, student_ids=None, vocabulary=None):
    if isinstance(cohort_or_counts, Cohort):
        counts, student_ids, vocabulary = (cohort_or_counts.counts, cohort_or_counts.student_ids,
                                           cohort_or_counts.vocabulary)
    else:
        counts = cohort_or_counts
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["student_id", "week", "event_type", "count"])
        for i, sid in enumerate(student_ids):
            for k, e in zip(*np.nonzero(counts[i])):
                w.writerow([sid, k + 1, vocabulary.names[e], int(counts[i, k, e])])


def read_demographics(path) -> dict:
    """``student_id,attribute,value`` rows -> {attribute: {student_id: value}}."""
    out = defaultdict(dict)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["student_id", "attribute", "value"]:
            raise IngestError("expected header student_id,attribute,value", line=1)
        for row in reader:
            out[row["attribute"]][row["student_id"]] = row["value"]
    return dict(out)


def write_demographics(path, cohort: Cohort, attribute: str = "education"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["student_id", "attribute", "value"])
        for sid, v in zip(cohort.student_ids, cohort.demographics):
            if v is not None:
                w.writerow([sid, attribute, v])


def load_cohort(path, vocabulary: EventVocabulary, n_weeks: int = 9, format: str = "weekly_counts",
                course_id: str | None = None, offering_id: str = "", demographics_path=None,
                attribute: str | None = None, course_start: datetime | None = None) -> Cohort:
    """Read a counts or raw-log CSV (plus optional demographics) into a Cohort."""
    events = ingest_events(path, format, vocabulary, n_weeks=n_weeks, course_start=course_start)
    mats = aggregate_weekly(events, vocabulary, n_weeks)
    ids = list(mats)
    counts = np.stack([mats[s] for s in ids]) if ids else np.zeros((0, n_weeks, len(vocabulary)), np.int64)
    demo = None
    if demographics_path is not None:
        table = read_demographics(demographics_path)
        if attribute is None:
            if len(table) != 1:
                raise ValueError(f"choose one attribute of {sorted(table)}")
            attribute = next(iter(table))
        demo = [table[attribute].get(s) for s in ids]
    return Cohort.from_counts(course_id or Path(path).stem, offering_id, ids, counts, vocabulary, demo)
