"""Per-attempt feature engineering and labeled dataset assembly.

Baseline features mirror the source study's per-attempt aggregates; the SRL
set adds cyclic-reinforcement signals comparing each attempt with the one
before it. All history-dependent features use strictly prior attempts only,
so no feature can leak the current attempt's score.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .ingest import TraceStore
from .sessionize import count_backscrolls, reading_speed, reading_window, segment_sessions
from .trace_model import PipelineConfig, QuizAttempt

BASELINE_FEATURES = [
    "reading_sessions",
    "num_reading_breaks",
    "quiz_time_mins",
    "quiz_fails",
    "quiz_attempts",
]

SRL_FEATURES = [
    "num_backscrolls",
    "backscrolls_delta",
    "backscrolls_more",
    "reading_speed",
    "prev_fail",
    "score_diff",
    "improved_score",
    "quiz_time_diff",
    "quiz_time_longer",
]

# Fig-2-style phase tags, kept as metadata only.
SRL_PHASE_TAGS = {
    "num_backscrolls": "performance",
    "backscrolls_delta": "performance",
    "backscrolls_more": "performance",
    "reading_speed": "reflection/performance",
    "prev_fail": "self-reflection",
    "score_diff": "self-reflection",
    "improved_score": "self-reflection",
    "quiz_time_diff": "performance",
    "quiz_time_longer": "performance",
}


class EmptyStore(ValueError):
    pass


def label_attempt(attempt: QuizAttempt, cfg: PipelineConfig) -> int:
    """1 = pass (score fraction at or above the pass mark), 0 = fail."""
    return 1 if attempt.score_fraction >= cfg.pass_fraction else 0


def _prior_attempts(store: TraceStore, attempt: QuizAttempt) -> tuple[QuizAttempt, ...]:
    group = store.attempts_for(attempt.student_id, attempt.quiz_id)
    return group[: attempt.attempt_index - 1]


def baseline_features(
    store: TraceStore, attempt: QuizAttempt, cfg: PipelineConfig
) -> dict[str, float]:
    window = reading_window(store, attempt)
    sessions = segment_sessions(window.events, cfg.sessionizer)
    priors = _prior_attempts(store, attempt)
    return {
        "reading_sessions": float(len(sessions)),
        "num_reading_breaks": float(sum(s.num_breaks for s in sessions)),
        "quiz_time_mins": attempt.duration_mins,
        "quiz_fails": float(sum(1 for p in priors if not label_attempt(p, cfg))),
        "quiz_attempts": float(attempt.attempt_index),
    }


def srl_features(
    store: TraceStore, attempt: QuizAttempt, cfg: PipelineConfig
) -> dict[str, float]:
    window = reading_window(store, attempt)
    backscrolls = count_backscrolls(window.events, cfg.sessionizer)
    speed = reading_speed(segment_sessions(window.events, cfg.sessionizer))

    priors = _prior_attempts(store, attempt)
    prev = priors[-1] if priors else None
    if prev is not None:
        prev_window = reading_window(store, prev)
        prev_backscrolls = count_backscrolls(prev_window.events, cfg.sessionizer)
        prev_fail = 0 if label_attempt(prev, cfg) else 1
        quiz_time_diff = attempt.duration_mins - prev.duration_mins
    else:
        prev_backscrolls = 0
        prev_fail = 0
        quiz_time_diff = 0.0
    # Needs two strictly prior attempts: trend of the two most recent scores
    # the student already knows about; never the current attempt's score.
    if len(priors) >= 2:
        score_diff = priors[-1].score_fraction - priors[-2].score_fraction
    else:
        score_diff = 0.0

    backscrolls_delta = float(backscrolls - prev_backscrolls)
    return {
        "num_backscrolls": float(backscrolls),
        "backscrolls_delta": backscrolls_delta,
        "backscrolls_more": 1.0 if backscrolls_delta > 0 else 0.0,
        "reading_speed": speed,
        "prev_fail": float(prev_fail),
        "score_diff": score_diff,
        "improved_score": 1.0 if score_diff > 0 else 0.0,
        "quiz_time_diff": quiz_time_diff,
        "quiz_time_longer": 1.0 if quiz_time_diff > 0 else 0.0,
    }


@dataclass(frozen=True)
class Dataset:
    """Labeled wide-format feature matrix, one row per quiz attempt."""

    keys: tuple[tuple[str, str, int], ...]  # (student_id, quiz_id, attempt_index)
    feature_names: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.keys)

    @property
    def student_ids(self) -> tuple[str, ...]:
        return tuple(k[0] for k in self.keys)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = list(indices)
        return Dataset(
            keys=tuple(self.keys[i] for i in idx),
            feature_names=self.feature_names,
            X=self.X[idx],
            y=self.y[idx],
        )

    def subset_by_students(self, students: set[str]) -> "Dataset":
        return self.subset([i for i, k in enumerate(self.keys) if k[0] in students])


def feature_columns(feature_set: str, srl_only: bool = False) -> list[str]:
    if feature_set == "baseline":
        return list(BASELINE_FEATURES)
    if feature_set == "srl":
        return list(SRL_FEATURES) if srl_only else BASELINE_FEATURES + SRL_FEATURES
    raise ValueError(f"unknown feature set {feature_set!r}")


def assemble_dataset(store: TraceStore, feature_set: str, cfg: PipelineConfig) -> Dataset:
    """One labeled row per attempt, sorted by (student_id, quiz_id, attempt_index)."""
    attempts = store.all_attempts()
    if not attempts:
        raise EmptyStore("store contains no quiz attempts")
    attempts.sort(key=lambda a: (a.student_id, a.quiz_id, a.attempt_index))
    columns = feature_columns(feature_set, cfg.srl_only)

    keys = []
    rows = []
    labels = []
    for att in attempts:
        values: dict[str, float] = {}
        if feature_set == "baseline" or not cfg.srl_only:
            values.update(baseline_features(store, att, cfg))
        if feature_set == "srl":
            values.update(srl_features(store, att, cfg))
        row = [values[c] for c in columns]
        if not all(np.isfinite(row)):
            raise ValueError(f"non-finite feature value for attempt {att}")
        keys.append((att.student_id, att.quiz_id, att.attempt_index))
        rows.append(row)
        labels.append(label_attempt(att, cfg))
    return Dataset(
        keys=tuple(keys),
        feature_names=tuple(columns),
        X=np.array(rows, dtype=float),
        y=np.array(labels, dtype=float),
    )


def _fmt(value: float) -> str:
    value = float(value)
    return str(int(value)) if value == int(value) else repr(value)


def save_dataset_csv(dataset: Dataset, path: str | Path | IO[str]) -> None:
    """Write `student_id,quiz_id,attempt_index,<features...>,label` rows."""
    own = isinstance(path, (str, Path))
    fh = open(path, "w", encoding="utf-8", newline="") if own else path
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["student_id", "quiz_id", "attempt_index", *dataset.feature_names, "label"])
        for key, row, label in zip(dataset.keys, dataset.X, dataset.y):
            writer.writerow([key[0], key[1], str(key[2]), *(_fmt(v) for v in row), str(int(label))])
    finally:
        if own:
            fh.close()


def load_dataset_csv(path: str | Path | IO[str]) -> Dataset:
    own = isinstance(path, (str, Path))
    fh = open(path, "r", encoding="utf-8", newline="") if own else path
    try:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["student_id", "quiz_id", "attempt_index"] or header[-1] != "label":
            raise ValueError("unexpected feature CSV header")
        names = tuple(header[3:-1])
        keys, rows, labels = [], [], []
        for row in reader:
            if not row:
                continue
            keys.append((row[0], row[1], int(row[2])))
            rows.append([float(v) for v in row[3:-1]])
            labels.append(float(row[-1]))
    finally:
        if own:
            fh.close()
    return Dataset(
        keys=tuple(keys),
        feature_names=names,
        X=np.array(rows, dtype=float).reshape(len(keys), len(names)),
        y=np.array(labels, dtype=float),
    )
