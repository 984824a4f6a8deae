"""Core domain types shared across the pipeline, plus raw event normalization.

All timestamps are integer epoch milliseconds (UTC). Durations are kept in ms
throughout and converted to minutes only when features are emitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

EVENT_KINDS = ("scroll", "pageload")


@dataclass(frozen=True)
class ScrollEvent:
    """One timestamped scroll observation for a student on a page object."""

    student_id: str
    object_id: str
    ts_ms: int
    scroll_y: float
    page_height: float | None = None
    kind: str = "scroll"

    def __post_init__(self) -> None:
        if self.ts_ms < 0:
            raise ValueError(f"ts_ms must be >= 0, got {self.ts_ms}")
        if self.scroll_y < 0:
            raise ValueError(f"scroll_y must be >= 0, got {self.scroll_y}")
        if self.page_height is not None:
            if self.page_height <= 0:
                raise ValueError(f"page_height must be > 0, got {self.page_height}")
            if self.scroll_y > self.page_height:
                raise ValueError(
                    f"scroll_y {self.scroll_y} exceeds page_height {self.page_height}"
                )
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"kind must be one of {EVENT_KINDS}, got {self.kind!r}")

    def sort_key(self) -> tuple:
        # page_height/kind included only to make ordering total and stable.
        ph = self.page_height if self.page_height is not None else -1.0
        return (self.student_id, self.ts_ms, self.object_id, self.scroll_y, self.kind, ph)


@dataclass(frozen=True)
class QuizAttempt:
    """One quiz attempt with start/end timestamps and a raw score."""

    student_id: str
    quiz_id: str
    attempt_index: int
    start_ts_ms: int
    end_ts_ms: int
    score: float
    max_score: float

    def __post_init__(self) -> None:
        if self.attempt_index < 1:
            raise ValueError(f"attempt_index must be >= 1, got {self.attempt_index}")
        if self.end_ts_ms < self.start_ts_ms:
            raise ValueError(
                f"end_ts_ms {self.end_ts_ms} before start_ts_ms {self.start_ts_ms}"
            )
        if self.max_score <= 0:
            raise ValueError(f"max_score must be > 0, got {self.max_score}")
        if self.score < 0:
            raise ValueError(f"score must be >= 0, got {self.score}")
        if self.score > self.max_score:
            raise ValueError(f"score {self.score} exceeds max_score {self.max_score}")

    @property
    def score_fraction(self) -> float:
        return self.score / self.max_score

    @property
    def duration_mins(self) -> float:
        return (self.end_ts_ms - self.start_ts_ms) / 60_000.0


@dataclass(frozen=True)
class ReadingSession:
    """A contiguous segmented reading episode with break/backscroll counts."""

    student_id: str
    start_ts_ms: int
    end_ts_ms: int
    event_count: int
    num_breaks: int
    num_backscrolls: int
    object_ids: frozenset[str]
    active_ms: int

    def __post_init__(self) -> None:
        if self.event_count < 1:
            raise ValueError("a session holds at least one event")
        if self.end_ts_ms < self.start_ts_ms:
            raise ValueError("session ends before it starts")
        if self.active_ms > self.end_ts_ms - self.start_ts_ms:
            raise ValueError("active_ms exceeds elapsed time")
        if not self.object_ids:
            raise ValueError("a session visits at least one object")

    @property
    def objects_visited(self) -> int:
        return len(self.object_ids)


@dataclass(frozen=True)
class SessionizerConfig:
    """Thresholds driving session segmentation and backscroll counting."""

    break_gap_ms: int = 300_000
    top_band_px: float = 50.0
    min_depth_px: float = 200.0
    backscroll_epsilon_px: float = 50.0

    def __post_init__(self) -> None:
        for name in ("break_gap_ms", "top_band_px", "min_depth_px", "backscroll_epsilon_px"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class GbdtParams:
    """Hyperparameters of the boosted-tree learner."""

    n_rounds: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    lambda_l2: float = 1.0
    min_child_weight: float = 1.0
    seed: int = 7

    def __post_init__(self) -> None:
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.lambda_l2 < 0:
            raise ValueError("lambda_l2 must be >= 0")
        if self.min_child_weight < 0:
            raise ValueError("min_child_weight must be >= 0")


@dataclass(frozen=True)
class PipelineConfig:
    """End-to-end run configuration; every report echoes the resolved values."""

    sessionizer: SessionizerConfig = field(default_factory=SessionizerConfig)
    gbdt: GbdtParams = field(default_factory=GbdtParams)
    pass_fraction: float = 0.5
    decision_threshold: float = 0.5
    feature_set: str = "srl"
    srl_only: bool = False
    test_fraction: float = 0.25
    split_seed: int = 7
    importance_repeats: int = 20

    def __post_init__(self) -> None:
        if not 0.0 < self.pass_fraction <= 1.0:
            raise ValueError("pass_fraction must be in (0, 1]")
        if not 0.0 < self.decision_threshold < 1.0:
            raise ValueError("decision_threshold must be in (0, 1)")
        if self.feature_set not in ("baseline", "srl"):
            raise ValueError("feature_set must be 'baseline' or 'srl'")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "sessionizer": {
                "break_gap_ms": self.sessionizer.break_gap_ms,
                "top_band_px": self.sessionizer.top_band_px,
                "min_depth_px": self.sessionizer.min_depth_px,
                "backscroll_epsilon_px": self.sessionizer.backscroll_epsilon_px,
            },
            "gbdt": {
                "n_rounds": self.gbdt.n_rounds,
                "max_depth": self.gbdt.max_depth,
                "learning_rate": self.gbdt.learning_rate,
                "lambda_l2": self.gbdt.lambda_l2,
                "min_child_weight": self.gbdt.min_child_weight,
                "seed": self.gbdt.seed,
            },
            "pass_fraction": self.pass_fraction,
            "decision_threshold": self.decision_threshold,
            "feature_set": self.feature_set,
            "srl_only": self.srl_only,
            "test_fraction": self.test_fraction,
            "split_seed": self.split_seed,
            "importance_repeats": self.importance_repeats,
        }


def normalize_events(events: list[ScrollEvent]) -> list[ScrollEvent]:
    """Sort events canonically and collapse exact duplicates.

    Order is (student_id, ts_ms, object_id, scroll_y). Near-duplicates (same
    timestamp, different scroll_y) are kept. Idempotent; input is not mutated.
    """
    out: list[ScrollEvent] = []
    for ev in sorted(events, key=ScrollEvent.sort_key):
        if out and out[-1] == ev:
            continue
        out.append(ev)
    return out
