"""Sliding-window inference and majority-vote aggregation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .codebook import CodebookTable, decode_stages
from .core import ALPHABET, N_STAGES, WINDOW_SAMPLES, EyeState, MentalTask, StageSegment
from .tsld.network import TsldConfig, TsldParams, forward

SHIFT = 100
REPORT_FIELDS = ("character_gt", "character_pred", "stage_index", "task_gt", "task_pred", "eye_gt", "eye_pred", "adjusted_prob")


def sliding_windows(segment_len=1792, window=WINDOW_SAMPLES, shift=SHIFT, include_tail=False) -> list[int]:
    """Start offsets ``0, shift, 2*shift, ...`` of every full window.

    With ``include_tail`` the last possible window (``segment_len - window``)
    is appended when it is not already a multiple of ``shift``.
    """
    if segment_len < window:
        raise ValueError(f"segment of {segment_len} samples is shorter than the window ({window})")
    if shift < 1:
        raise ValueError("shift must be >= 1")
    offsets = list(range(0, segment_len - window + 1, shift))
    if include_tail and offsets[-1] != segment_len - window:
        offsets.append(segment_len - window)
    return offsets


@dataclass(frozen=True)
class WindowPrediction:
    start_offset: int
    task_probs: np.ndarray
    eye_probs: np.ndarray | None = None


@dataclass(frozen=True)
class StageDecision:
    task: int
    eye: int | None
    task_probs: np.ndarray
    eye_probs: np.ndarray | None
    task_votes: np.ndarray | None = None
    eye_votes: np.ndarray | None = None
    n_windows: int = 0


def vote_counts(classes, n_classes: int) -> np.ndarray:
    return np.bincount(np.asarray(classes, dtype=np.int64), minlength=n_classes)


def adjusted_probabilities(window_probs, soft=False) -> tuple[np.ndarray, np.ndarray | None]:
    """Aggregate per-window class probabilities ``(n_windows, n_classes)``.

    Hard voting: each window votes for its argmax (ties to the lowest index)
    and a class gets its share of the votes. Soft voting averages the
    probabilities. Returns ``(adjusted, votes)``; ``votes`` is ``None`` for
    soft voting.
    """
    window_probs = np.asarray(window_probs, dtype=np.float64)
    n, k = window_probs.shape
    if n == 0:
        raise ValueError("no windows to aggregate")
    if soft:
        return window_probs.mean(axis=0), None
    votes = vote_counts(np.argmax(window_probs, axis=1), k)
    return votes / n, votes


def window_predictions(
    segment, params: TsldParams, config: TsldConfig, window=WINDOW_SAMPLES, shift=SHIFT, include_tail=False, batch_size=16
) -> list[WindowPrediction]:
    data = segment.recording.data if isinstance(segment, StageSegment) else np.asarray(segment)
    offsets = sliding_windows(data.shape[1], window, shift, include_tail)
    preds = []
    for lo in range(0, len(offsets), batch_size):
        chunk = offsets[lo : lo + batch_size]
        batch = np.stack([data[:, o : o + window] for o in chunk]).astype(np.float64)
        trace = forward(batch, params, config)
        for i, o in enumerate(chunk):
            eye = None if trace.eye_probs is None else trace.eye_probs[i]
            preds.append(WindowPrediction(o, trace.task_probs[i], eye))
    return preds


def aggregate(preds: list[WindowPrediction], soft=False) -> StageDecision:
    """Order-independent fold of window predictions into a stage decision."""
    preds = sorted(preds, key=lambda p: p.start_offset)
    task_probs, task_votes = adjusted_probabilities([p.task_probs for p in preds], soft)
    eye_probs = eye_votes = None
    eye = None
    if preds[0].eye_probs is not None:
        eye_probs, eye_votes = adjusted_probabilities([p.eye_probs for p in preds], soft)
        eye = int(np.argmax(eye_probs))
    return StageDecision(int(np.argmax(task_probs)), eye, task_probs, eye_probs, task_votes, eye_votes, len(preds))


def predict_stage(segment, params: TsldParams, config: TsldConfig, soft=False, **window_kw) -> StageDecision:
    """Decide task and eye state of one preprocessed segment by window voting."""
    return aggregate(window_predictions(segment, params, config, **window_kw), soft)


@dataclass(frozen=True)
class CharacterPrediction:
    character: str | None
    ranking: tuple[str, ...]
    scores: np.ndarray  # aligned with the table's alphabet order
    stages: tuple[StageDecision, ...]


def character_scores(decisions, table: CodebookTable) -> np.ndarray:
    """Product over stages of the adjusted probabilities of each character's code."""
    scores = np.ones(len(table.entries))
    for i, entry in enumerate(table.entries):
        for dec, (task, eye) in zip(decisions, entry.stages):
            scores[i] *= dec.task_probs[int(task)]
            if dec.eye_probs is not None:
                scores[i] *= dec.eye_probs[int(eye)]
    return scores


def rank_characters(decisions, table: CodebookTable) -> tuple[tuple[str, ...], np.ndarray, str | None]:
    """Rank the alphabet by score, best first.

    Ties go to the exact-match character (if any), then to alphabet order,
    so the top entry always agrees with the strict decision when one exists.
    """
    decisions = tuple(decisions)
    if len(decisions) != N_STAGES:
        raise ValueError(f"expected {N_STAGES} stage decisions, got {len(decisions)}")
    scores = character_scores(decisions, table)
    stages = [(MentalTask(d.task), EyeState(d.eye if d.eye is not None else 0)) for d in decisions]
    if decisions[0].eye is None:
        # without an eye head the eye pattern is taken from the table
        stages = [(t, e) for (t, _), e in zip(stages, table.eye_pattern or (EyeState.Closed,) * N_STAGES)]
    exact = decode_stages(table, stages)
    alphabet = table.alphabet
    order = sorted(range(len(alphabet)), key=lambda i: (-scores[i], alphabet[i] != exact, i))
    return tuple(alphabet[i] for i in order), scores, exact


def predict_character(segments, params: TsldParams, config: TsldConfig, table: CodebookTable, soft=False, **window_kw) -> CharacterPrediction:
    """Decode three stage segments into a character.

    ``character`` is ``None`` unless every stage's task and eye decision
    matches one codebook entry exactly.
    """
    segments = tuple(segments)
    if len(segments) != N_STAGES:
        raise ValueError(f"expected {N_STAGES} stage segments, got {len(segments)}")
    decisions = tuple(predict_stage(s, params, config, soft, **window_kw) for s in segments)
    ranking, scores, exact = rank_characters(decisions, table)
    return CharacterPrediction(exact, ranking, scores, decisions)


@dataclass(frozen=True)
class DirectPrediction:
    character: str
    ranking: tuple[str, ...]
    probs: np.ndarray
    votes: np.ndarray | None
    n_windows: int


def rank_direct(probs, alphabet=ALPHABET) -> tuple[str, ...]:
    probs = np.asarray(probs)
    order = sorted(range(len(alphabet)), key=lambda i: (-probs[i], i))
    return tuple(alphabet[i] for i in order)


def decode_direct(segment, params: TsldParams, config: TsldConfig, soft=False, alphabet=ALPHABET, **window_kw) -> DirectPrediction:
    """Rank characters for one direct-imagination recording with the 36-way head."""
    if not config.direct_mode:
        raise ValueError("decode_direct needs a direct-mode network")
    dec = predict_stage(segment, params, config, soft, **window_kw)
    ranking = rank_direct(dec.task_probs, alphabet)
    return DirectPrediction(ranking[0], ranking, dec.task_probs, dec.task_votes, dec.n_windows)


def report_rows(character_gt: str, pred: CharacterPrediction, table: CodebookTable) -> list[dict]:
    """One decode-report row per stage."""
    code = table._by_char[character_gt]
    rows = []
    for k, (dec, (task, eye)) in enumerate(zip(pred.stages, code.stages)):
        rows.append(
            {
                "character_gt": character_gt,
                "character_pred": pred.character or "",
                "stage_index": k,
                "task_gt": int(task),
                "task_pred": dec.task,
                "eye_gt": int(eye),
                "eye_pred": "" if dec.eye is None else dec.eye,
                "adjusted_prob": float(dec.task_probs[dec.task]),
            }
        )
    return rows


def direct_report_row(character_gt: str, pred: DirectPrediction) -> dict:
    return {
        "character_gt": character_gt,
        "character_pred": pred.character,
        "stage_index": 0,
        "task_gt": "",
        "task_pred": "",
        "eye_gt": "",
        "eye_pred": "",
        "adjusted_prob": float(pred.probs[ALPHABET.index(pred.character)]),
    }


def write_report(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
