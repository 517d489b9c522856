"""Leave-one-session-out cross-validation and character-level metrics."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import clone

from .codebook import CodebookTable, default_codebook
from .core import ALPHABET, N_SESSIONS, Paradigm, SessionDataset
from .decoder import rank_characters, rank_direct
from .preprocess import PreprocessConfig, preprocess_dataset
from .tsld.estimator import TSLDClassifier

logger = logging.getLogger(__name__)

# Reference values reported for the network on recorded EEG; not reproducible here.
TABLE_I_TSLD = {"top1": 0.3204, "top3": 0.5312, "top5": 0.6128}
CHANCE_DIRECT_TOP1 = 1 / 36
CHANCE_TASK_TRIPLE = (1 / 4) ** 3
DEFAULT_SEEDS = (0, 1, 2)


@dataclass(frozen=True)
class FoldSpec:
    held_out: int
    train_sessions: tuple[int, ...]

    def __post_init__(self):
        if self.held_out in self.train_sessions:
            raise ValueError("held-out session also listed for training")


def make_folds(sessions=range(N_SESSIONS)) -> list[FoldSpec]:
    sessions = sorted(sessions)
    return [FoldSpec(s, tuple(t for t in sessions if t != s)) for s in sessions]


def top_k_accuracy(rankings, truths, k: int) -> float:
    """Fraction of items whose truth is among the first ``k`` ranked candidates."""
    if not 1 <= k <= len(ALPHABET):
        raise ValueError(f"k must lie in 1..{len(ALPHABET)}, got {k}")
    rankings, truths = list(rankings), list(truths)
    if len(rankings) != len(truths):
        raise ValueError("rankings and truths differ in length")
    if not truths:
        return float("nan")
    return float(np.mean([t in r[:k] for r, t in zip(rankings, truths)]))


@dataclass
class RunRecord:
    paradigm: str
    held_out: int
    seed: int
    top1: float
    top3: float
    top5: float
    stage_task_acc: float
    eye_acc: float
    n_characters: int


@dataclass
class MetricsReport:
    runs: list[RunRecord]
    predictions: list[dict] = field(default_factory=list, repr=False)

    METRICS = ("top1", "top3", "top5", "stage_task_acc", "eye_acc")

    def _values(self, name):
        return np.array([getattr(r, name) for r in self.runs], dtype=float)

    def mean(self, name) -> float:
        return float(np.mean(self._values(name)))

    def sd(self, name) -> float:
        v = self._values(name)
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0

    def summary(self) -> dict:
        return {m: {"mean": self.mean(m), "sd": self.sd(m)} for m in self.METRICS}

    def per_session(self, name="top1") -> list[float]:
        """Mean over seeds of ``name`` for each held-out session, in session order."""
        sessions = sorted({r.held_out for r in self.runs})
        return [float(np.mean([getattr(r, name) for r in self.runs if r.held_out == s])) for s in sessions]

    def to_dict(self) -> dict:
        return {
            "summary": self.summary(),
            "runs": [asdict(r) for r in self.runs],
            "reference_table_i_tsld": TABLE_I_TSLD,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_csv(self, path) -> None:
        fields = list(asdict(self.runs[0]).keys()) if self.runs else list(RunRecord.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for r in self.runs:
                writer.writerow(asdict(r))


def dataset_labels(dataset: SessionDataset) -> np.ndarray:
    """``(n, 2)`` ``[task, eye]`` labels, or ``(n,)`` character indices for direct sets."""
    if dataset.paradigm is Paradigm.DirectImagination:
        index = {c: i for i, c in enumerate(dataset.alphabet)}
        return np.array([index[s.character] for s in dataset.segments])
    return np.array([[int(s.task), int(s.eye)] for s in dataset.segments])


def _score_mental(dataset, held_idx, decisions, table, record_kw):
    by_id = {id(dataset.segments[i]): d for i, d in zip(held_idx, decisions)}
    held = dataset.subset([record_kw["held_out"]])
    rankings, truths, exact = [], [], []
    preds = []
    for session, char, triple in held.characters():
        decs = tuple(by_id[id(s)] for s in triple)
        ranking, _, hit = rank_characters(decs, table)
        rankings.append(ranking)
        truths.append(char)
        exact.append(hit == char)
        preds.append({"session": session, "character_gt": char, "character_pred": hit, "top5": list(ranking[:5])})
    segs = [dataset.segments[i] for i in held_idx]
    stage_task = np.mean([d.task == int(s.task) for d, s in zip(decisions, segs)])
    eye = np.mean([d.eye == int(s.eye) for d, s in zip(decisions, segs)])
    rec = RunRecord(
        paradigm=Paradigm.MentalTask.value,
        top1=float(np.mean(exact)),
        top3=top_k_accuracy(rankings, truths, 3),
        top5=top_k_accuracy(rankings, truths, 5),
        stage_task_acc=float(stage_task),
        eye_acc=float(eye),
        n_characters=len(truths),
        **record_kw,
    )
    return rec, preds


def _score_direct(dataset, held_idx, decisions, record_kw):
    rankings = [rank_direct(d.task_probs, dataset.alphabet) for d in decisions]
    truths = [dataset.segments[i].character for i in held_idx]
    top1 = top_k_accuracy(rankings, truths, 1)
    preds = [
        {"session": record_kw["held_out"], "character_gt": t, "character_pred": r[0], "top5": list(r[:5])}
        for r, t in zip(rankings, truths)
    ]
    rec = RunRecord(
        paradigm=Paradigm.DirectImagination.value,
        top1=top1,
        top3=top_k_accuracy(rankings, truths, 3),
        top5=top_k_accuracy(rankings, truths, 5),
        stage_task_acc=top1,
        eye_acc=float("nan"),
        n_characters=len(truths),
        **record_kw,
    )
    return rec, preds


def run_fold(dataset, X, y, fold: FoldSpec, seed: int, estimator: TSLDClassifier, table: CodebookTable | None = None):
    """Train on ``fold.train_sessions`` and score the held-out session."""
    start = time.perf_counter()
    sessions = np.array([s.session_index for s in dataset.segments])
    tr = np.flatnonzero(np.isin(sessions, fold.train_sessions))
    te = np.flatnonzero(sessions == fold.held_out)
    if len(tr) == 0 or len(te) == 0:
        raise ValueError(f"fold {fold.held_out}: empty training or held-out split")
    est = clone(estimator).set_params(random_state=seed)
    est.fit(X[tr], y[tr])
    decisions = est.decide(X[te])
    kw = {"held_out": fold.held_out, "seed": seed}
    if dataset.paradigm is Paradigm.DirectImagination:
        rec, preds = _score_direct(dataset, te, decisions, kw)
    else:
        rec, preds = _score_mental(dataset, te, decisions, table or default_codebook(), kw)
    logger.info(
        "fold %d seed %d: top1=%.3f stage_task=%.3f (%.0fs)",
        fold.held_out, seed, rec.top1, rec.stage_task_acc, time.perf_counter() - start,
    )
    for p in preds:
        p["seed"] = seed
    return rec, preds


def run_cross_validation(
    dataset: SessionDataset,
    estimator: TSLDClassifier | None = None,
    seeds=DEFAULT_SEEDS,
    preprocess: PreprocessConfig | None = None,
    table: CodebookTable | None = None,
    n_jobs: int = 1,
    X=None,
) -> MetricsReport:
    """Six-fold leave-one-session-out evaluation repeated over ``seeds``.

    ``X`` may hold the already preprocessed segments to skip preprocessing.
    Runs are returned sorted by ``(held_out, seed)`` whatever the job order.
    """
    sessions = dataset.sessions
    if len(sessions) < 2:
        raise ValueError(f"cross-validation needs at least two sessions, dataset has {sessions}")
    if estimator is None:
        estimator = TSLDClassifier(direct_mode=dataset.paradigm is Paradigm.DirectImagination)
    if X is None:
        X = preprocess_dataset(dataset, preprocess or PreprocessConfig())
    y = dataset_labels(dataset)
    jobs = [(fold, seed) for fold in make_folds(sessions) for seed in seeds]
    results = Parallel(n_jobs=n_jobs)(
        delayed(run_fold)(dataset, X, y, fold, seed, estimator, table) for fold, seed in jobs
    )
    results.sort(key=lambda r: (r[0].held_out, r[0].seed))
    return MetricsReport([r for r, _ in results], [p for _, preds in results for p in preds])


def per_session_curve(dataset=None, estimator=None, seeds=DEFAULT_SEEDS, report: MetricsReport | None = None, **kw) -> list[float]:
    """Top-1 accuracy per held-out session (mean over seeds), in session order."""
    if report is None:
        report = run_cross_validation(dataset, estimator, seeds, **kw)
    return report.per_session("top1")


def write_curve_csv(path, reports: dict[str, MetricsReport]) -> None:
    """Long-format rows ``(paradigm, session_index, seed, top1)`` for plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["paradigm", "session_index", "seed", "top1"])
        for name, report in reports.items():
            for r in report.runs:
                writer.writerow([name, r.held_out, r.seed, r.top1])


@dataclass
class ParadigmComparison:
    mental: MetricsReport
    direct: MetricsReport

    @property
    def ratio(self) -> float:
        d = self.direct.mean("top1")
        return float("inf") if d == 0 else self.mental.mean("top1") / d

    def to_dict(self) -> dict:
        return {
            "mental_top1": self.mental.mean("top1"),
            "direct_top1": self.direct.mean("top1"),
            "ratio": self.ratio,
            "chance_direct_top1": CHANCE_DIRECT_TOP1,
            "chance_task_triple": CHANCE_TASK_TRIPLE,
            "mental": self.mental.to_dict(),
            "direct": self.direct.to_dict(),
        }


def compare_paradigms(
    mental_set: SessionDataset,
    direct_set: SessionDataset,
    estimator: TSLDClassifier | None = None,
    seeds=DEFAULT_SEEDS,
    **kw,
) -> ParadigmComparison:
    """Cross-validate the dual-head arm and the 36-way direct arm with matched settings."""
    if mental_set.paradigm is not Paradigm.MentalTask or direct_set.paradigm is not Paradigm.DirectImagination:
        raise ValueError("compare_paradigms needs a mental-task set and a direct-imagination set")
    base = estimator or TSLDClassifier()
    mental_est = clone(base).set_params(direct_mode=False, n_task_classes=None)
    direct_est = clone(base).set_params(direct_mode=True, n_task_classes=None)
    mental = run_cross_validation(mental_set, mental_est, seeds, **kw)
    direct = run_cross_validation(direct_set, direct_est, seeds, **kw)
    return ParadigmComparison(mental, direct)
