"""Command-line entry point: file-in/file-out pipeline stages.

Exit codes: 0 success, 1 usage error, 2 data error (offending file/line is
printed), 3 internal error. All randomness is seeded and echoed into the
emitted reports, so identical command lines reproduce identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import learner, synthgen
from .features import (
    EmptyStore,
    assemble_dataset,
    load_dataset_csv,
    save_dataset_csv,
)
from .ingest import (
    InconsistentAttempts,
    MalformedAttempt,
    MalformedEvent,
    build_store,
    load_store,
    parse_attempts,
    parse_events,
    save_store,
)
from .sessionize import UnsortedInput, segment_sessions
from .trace_model import GbdtParams, PipelineConfig, SessionizerConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

CONFIG_ENV_VAR = "SRL_TRACE_CONFIG"

_SESSIONIZER_KEYS = {f.name for f in fields(SessionizerConfig)}
_GBDT_KEYS = {f.name for f in fields(GbdtParams)}
_PIPELINE_KEYS = {
    "pass_fraction",
    "decision_threshold",
    "feature_set",
    "srl_only",
    "test_fraction",
    "split_seed",
    "importance_repeats",
}


class DataError(Exception):
    pass


def _load_config_file(path: str | None) -> dict:
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read config file: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError(f"{path}: config file must hold a JSON object")
    unknown = set(obj) - _SESSIONIZER_KEYS - _GBDT_KEYS - _PIPELINE_KEYS
    if unknown:
        raise DataError(f"{path}: unknown config keys {sorted(unknown)}")
    return obj


def _resolve_config(file_cfg: dict, overrides: dict) -> PipelineConfig:
    merged = dict(file_cfg)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    sess = SessionizerConfig(**{k: v for k, v in merged.items() if k in _SESSIONIZER_KEYS})
    gbdt = GbdtParams(**{k: v for k, v in merged.items() if k in _GBDT_KEYS})
    pipeline_kwargs = {k: v for k, v in merged.items() if k in _PIPELINE_KEYS}
    return PipelineConfig(sessionizer=sess, gbdt=gbdt, **pipeline_kwargs)


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _cmd_synth(args, file_cfg: dict) -> int:
    cfg = synthgen.GenConfig(
        n_students=args.students,
        seed=args.seed,
        signal_strength=args.signal,
    )
    cohort = synthgen.generate_cohort(cfg)
    synthgen.write_cohort(cohort, args.out)
    print(f"wrote {len(cohort.events)} events, {len(cohort.attempts)} attempts to {args.out}")
    return EXIT_OK


def _cmd_ingest(args, file_cfg: dict) -> int:
    try:
        with open(args.events, "r", encoding="utf-8") as fh:
            events = parse_events(fh)
    except (MalformedEvent,) as exc:
        raise DataError(f"{args.events}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"{args.events}: {exc}") from exc
    try:
        with open(args.attempts, "r", encoding="utf-8") as fh:
            attempts = parse_attempts(fh)
    except (MalformedAttempt,) as exc:
        raise DataError(f"{args.attempts}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"{args.attempts}: {exc}") from exc
    try:
        store = build_store(events, attempts)
    except InconsistentAttempts as exc:
        raise DataError(f"{args.attempts}: {exc}") from exc
    save_store(store, args.out)
    print(f"wrote store with {store.n_events} events, {store.n_attempts} attempts to {args.out}")
    return EXIT_OK


def _cmd_sessionize(args, file_cfg: dict) -> int:
    cfg = _resolve_config(file_cfg, {})
    store = _load_store(args.store)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "student_id",
                "session_index",
                "start_ts_ms",
                "end_ts_ms",
                "num_breaks",
                "num_backscrolls",
                "objects_visited",
                "active_ms",
            ]
        )
        for sid in sorted(store.events_by_student):
            sessions = segment_sessions(store.events_for(sid), cfg.sessionizer)
            for i, s in enumerate(sessions, start=1):
                writer.writerow(
                    [
                        sid,
                        i,
                        s.start_ts_ms,
                        s.end_ts_ms,
                        s.num_breaks,
                        s.num_backscrolls,
                        s.objects_visited,
                        s.active_ms,
                    ]
                )
    print(f"wrote session summary to {args.out}")
    return EXIT_OK


def _load_store(store_dir: str):
    try:
        return load_store(store_dir)
    except (MalformedEvent, MalformedAttempt, InconsistentAttempts, UnsortedInput) as exc:
        raise DataError(f"{store_dir}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"{store_dir}: {exc}") from exc


def _cmd_features(args, file_cfg: dict) -> int:
    cfg = _resolve_config(file_cfg, {"feature_set": args.set})
    store = _load_store(args.store)
    try:
        dataset = assemble_dataset(store, args.set, cfg)
    except EmptyStore as exc:
        raise DataError(f"{args.store}: {exc}") from exc
    save_dataset_csv(dataset, args.out)
    print(f"wrote {dataset.n_rows} rows x {len(dataset.feature_names)} features to {args.out}")
    return EXIT_OK


def _cmd_train(args, file_cfg: dict) -> int:
    overrides = {
        "n_rounds": args.rounds,
        "max_depth": args.depth,
        "learning_rate": args.lr,
        "seed": args.seed,
    }
    cfg = _resolve_config(file_cfg, overrides)
    try:
        dataset = load_dataset_csv(args.features)
    except (OSError, ValueError) as exc:
        raise DataError(f"{args.features}: {exc}") from exc
    try:
        model = learner.fit(dataset, cfg.gbdt)
    except learner.InvalidDataset as exc:
        raise DataError(f"{args.features}: {exc}") from exc
    learner.save_model(model, args.model)
    print(f"trained {len(model.trees)} trees on {dataset.n_rows} rows; saved to {args.model}")
    return EXIT_OK


def _cmd_evaluate(args, file_cfg: dict) -> int:
    cfg = _resolve_config(file_cfg, {"decision_threshold": args.threshold})
    try:
        model = learner.load_model(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{args.model}: {exc}") from exc
    try:
        dataset = load_dataset_csv(args.features)
    except (OSError, ValueError) as exc:
        raise DataError(f"{args.features}: {exc}") from exc
    try:
        report = learner.evaluate(
            model,
            dataset,
            decision_threshold=cfg.decision_threshold,
            importance_repeats=cfg.importance_repeats,
        )
    except learner.ArityMismatch as exc:
        raise DataError(f"{args.features}: {exc}") from exc
    report.config = cfg.to_dict()
    _write_json(args.report, report.to_dict())
    print(f"accuracy {report.accuracy:.4f} on {report.n_rows} rows; report at {args.report}")
    return EXIT_OK


def _cmd_compare(args, file_cfg: dict) -> int:
    cfg = _resolve_config(file_cfg, {"split_seed": args.seed})
    store = _load_store(args.store)
    try:
        report = learner.run_comparison(store, cfg)
    except (EmptyStore, learner.InsufficientGroups, learner.InvalidDataset) as exc:
        raise DataError(f"{args.store}: {exc}") from exc
    _write_json(args.report, report.to_dict())
    print(
        f"baseline {report.baseline.accuracy:.4f}, srl {report.srl.accuracy:.4f}, "
        f"delta {report.accuracy_delta:+.4f}; report at {args.report}"
    )
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srltrace",
        description="SRL trace-data feature pipeline and boosted-tree comparison runs.",
    )
    parser.add_argument("--config", help="JSON config file (keys mirror config field names)")
    parser.add_argument("--jobs", type=int, default=1, help="worker cap (results are identical)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--students", type=int, default=142)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--signal", type=float, default=1.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="parse raw files into a store directory")
    p.add_argument("--events", required=True)
    p.add_argument("--attempts", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("sessionize", help="emit per-student session summary CSV")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sessionize)

    p = sub.add_parser("features", help="emit the labeled feature matrix CSV")
    p.add_argument("--store", required=True)
    p.add_argument("--set", required=True, choices=["baseline", "srl"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train", help="fit the boosted-tree model")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--rounds", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a model on a feature CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare", help="baseline-vs-SRL comparison on one store")
    p.add_argument("--store", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_compare)
    return parser


def run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        file_cfg = _load_config_file(args.config)
        return args.func(args, file_cfg)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, synthgen.InvalidConfig) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
