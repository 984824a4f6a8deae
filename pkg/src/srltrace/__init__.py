"""Trace-data SRL feature pipeline: ingest, sessionize, featurize, boost, compare."""

from .trace_model import (
    GbdtParams,
    PipelineConfig,
    QuizAttempt,
    ReadingSession,
    ScrollEvent,
    SessionizerConfig,
    normalize_events,
)
from .ingest import (
    InconsistentAttempts,
    MalformedAttempt,
    MalformedEvent,
    TraceStore,
    build_store,
    load_store,
    parse_attempts,
    parse_events,
    save_store,
)
from .sessionize import (
    ReadingWindow,
    UnsortedInput,
    count_backscrolls,
    reading_speed,
    reading_window,
    segment_sessions,
)
from .features import (
    BASELINE_FEATURES,
    SRL_FEATURES,
    Dataset,
    EmptyStore,
    assemble_dataset,
    baseline_features,
    label_attempt,
    load_dataset_csv,
    save_dataset_csv,
    srl_features,
)
from .learner import (
    ArityMismatch,
    ComparisonReport,
    EvalReport,
    GbdtModel,
    InsufficientGroups,
    InvalidDataset,
    evaluate,
    fit,
    gain_importance,
    grouped_split,
    load_model,
    permutation_importance,
    predict_proba,
    run_comparison,
    save_model,
)
from .synthgen import Cohort, GenConfig, InvalidConfig, generate_cohort, write_cohort

__all__ = [name for name in dir() if not name.startswith("_")]
