"""Shared test utilities: independent naive references and random fixtures.

The naive sessionizer here is written as a direct transcription of the
segmentation rules with plain loops and no shared code with the production
path; it is the oracle the production implementation is checked against.
"""

from __future__ import annotations

import random

from srltrace.ingest import build_store
from srltrace.trace_model import QuizAttempt, ScrollEvent, SessionizerConfig

# Pass/fail checklist lines collected by the acceptance tests and echoed in
# the terminal summary (see conftest.py).
ACCEPTANCE_LINES: list[str] = []


def naive_split_sessions(events, cfg: SessionizerConfig):
    """Split a sorted event list into session event-lists, the slow way."""
    sessions = []
    current = []
    for ev in events:
        if current:
            deepest = max(e.scroll_y for e in current)
            if ev.kind == "pageload" or (
                ev.scroll_y <= cfg.top_band_px and deepest >= cfg.min_depth_px
            ):
                sessions.append(current)
                current = []
        current.append(ev)
    if current:
        sessions.append(current)
    return sessions


def naive_session_stats(session_events, cfg: SessionizerConfig):
    """(num_breaks, active_ms, num_backscrolls, objects) for one session."""
    breaks = 0
    break_ms = 0
    for i in range(1, len(session_events)):
        gap = session_events[i].ts_ms - session_events[i - 1].ts_ms
        if gap > cfg.break_gap_ms:
            breaks += 1
            break_ms += gap

    backscrolls = 0
    previous_pair_qualified = False
    for i in range(1, len(session_events)):
        a, b = session_events[i - 1], session_events[i]
        qualified = (
            a.object_id == b.object_id
            and a.scroll_y - b.scroll_y > cfg.backscroll_epsilon_px
        )
        if qualified and not previous_pair_qualified:
            backscrolls += 1
        previous_pair_qualified = qualified

    elapsed = session_events[-1].ts_ms - session_events[0].ts_ms
    objects = set(e.object_id for e in session_events)
    return breaks, elapsed - break_ms, backscrolls, objects


def naive_count_backscrolls(events, cfg: SessionizerConfig) -> int:
    return sum(
        naive_session_stats(s, cfg)[2] for s in naive_split_sessions(events, cfg)
    )


def random_trace(rng: random.Random, n_events: int, student_id: str = "s1"):
    """A sorted random scroll trace exercising all segmentation rules."""
    events = []
    t = rng.randrange(0, 10_000)
    for _ in range(n_events):
        t += rng.choice([0, 100, 1_000, 5_000, 40_000, 200_000, 350_000, 700_000])
        kind = "pageload" if rng.random() < 0.07 else "scroll"
        events.append(
            ScrollEvent(
                student_id=student_id,
                object_id=rng.choice(["p1", "p2", "p3"]),
                ts_ms=t,
                scroll_y=0.0 if kind == "pageload" else float(rng.randrange(0, 1200)),
                page_height=1200.0,
                kind=kind,
            )
        )
    return events


def random_store_inputs(rng: random.Random, n_students: int = 6, n_quizzes: int = 2):
    """Random but always-valid (events, attempts) pair for store building."""
    events = []
    attempts = []
    for si in range(n_students):
        sid = f"st{si:02d}"
        t = rng.randrange(0, 50_000)
        trace = random_trace(rng, rng.randrange(5, 60), student_id=sid)
        shift = t - trace[0].ts_ms if trace else 0
        for ev in trace:
            events.append(
                ScrollEvent(sid, ev.object_id, ev.ts_ms + shift, ev.scroll_y, ev.page_height, ev.kind)
            )
        t = (events[-1].ts_ms if trace else t) + rng.randrange(1_000, 50_000)
        for qi in range(n_quizzes):
            qid = f"q{qi}"
            n_att = rng.randrange(1, 4)
            for ai in range(1, n_att + 1):
                start = t + rng.randrange(1_000, 100_000)
                end = start + rng.randrange(60_000, 1_200_000)
                attempts.append(
                    QuizAttempt(
                        student_id=sid,
                        quiz_id=qid,
                        attempt_index=ai,
                        start_ts_ms=start,
                        end_ts_ms=end,
                        score=float(rng.randrange(0, 101)),
                        max_score=100.0,
                    )
                )
                t = end + rng.randrange(1_000, 100_000)
    return events, attempts


def mutate_score(store, target: QuizAttempt, new_score: float):
    """Rebuild a store with one attempt's score replaced."""
    attempts = []
    for att in store.all_attempts():
        if (att.student_id, att.quiz_id, att.attempt_index) == (
            target.student_id, target.quiz_id, target.attempt_index,
        ):
            att = QuizAttempt(att.student_id, att.quiz_id, att.attempt_index,
                              att.start_ts_ms, att.end_ts_ms, new_score, att.max_score)
        attempts.append(att)
    return build_store(store.all_events(), attempts)
