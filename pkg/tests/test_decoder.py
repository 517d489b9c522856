import csv
from fractions import Fraction

import numpy as np
import pytest

from eegspell.codebook import default_codebook, encode_char
from eegspell.core import ALPHABET, DIRECT_SAMPLES
from eegspell.decoder import (
    REPORT_FIELDS,
    CharacterPrediction,
    StageDecision,
    WindowPrediction,
    adjusted_probabilities,
    aggregate,
    character_scores,
    decode_direct,
    predict_character,
    predict_stage,
    rank_characters,
    rank_direct,
    report_rows,
    sliding_windows,
    write_report,
)
from eegspell.tsld.network import TsldConfig, zero_params

TABLE = default_codebook()


def _onehot(k, n):
    p = np.zeros(n)
    p[k] = 1.0
    return p


def _preds(task_classes, n_task=4, eye_classes=None):
    eye_classes = eye_classes or [0] * len(task_classes)
    return [
        WindowPrediction(100 * i, _onehot(t, n_task), _onehot(e, 2))
        for i, (t, e) in enumerate(zip(task_classes, eye_classes))
    ]


def _decision(task_probs, eye_probs):
    task_probs, eye_probs = np.asarray(task_probs, float), np.asarray(eye_probs, float)
    return StageDecision(int(np.argmax(task_probs)), int(np.argmax(eye_probs)), task_probs, eye_probs)


class TestSlidingWindows:
    def test_default(self):
        assert sliding_windows(1792, 1000, 100) == [0, 100, 200, 300, 400, 500, 600, 700]

    def test_exact(self):
        assert sliding_windows(1000, 1000, 100) == [0]

    def test_too_short(self):
        with pytest.raises(ValueError):
            sliding_windows(999, 1000, 100)

    def test_tail_flag(self):
        assert sliding_windows(1792, include_tail=True)[-1] == 792
        assert sliding_windows(1800, include_tail=True) == sliding_windows(1800)

    def test_direct_count(self):
        assert len(sliding_windows(DIRECT_SAMPLES)) == (5376 - 1000) // 100 + 1 == 44


class TestVoting:
    def test_majority_fixture(self):
        A, B, C = 0, 1, 2
        dec = aggregate(_preds([A, A, B, A, C, A, B, A]))
        assert dec.task == A
        np.testing.assert_array_equal(dec.task_probs, [5 / 8, 2 / 8, 1 / 8, 0])
        assert dec.task_probs.sum() == 1.0

    def test_tie_goes_to_lowest_index(self):
        dec = aggregate(_preds([2, 1, 2, 1, 2, 1, 2, 1]))
        assert dec.task == 1
        np.testing.assert_array_equal(dec.task_votes, [0, 4, 4, 0])

    def test_unanimous(self):
        dec = aggregate(_preds([3] * 8, eye_classes=[1] * 8))
        assert dec.task_probs[3] == 1.0 and dec.eye == 1 and dec.eye_probs[1] == 1.0

    def test_window_argmax_tie(self):
        probs = np.array([[0.4, 0.4, 0.1, 0.1]] * 3)
        adjusted, votes = adjusted_probabilities(probs)
        assert votes.tolist() == [3, 0, 0, 0]

    @pytest.mark.parametrize("n", [1, 3, 8, 44])
    def test_rational_and_normalised(self, rng, n):
        probs = rng.dirichlet(np.ones(36), size=n)
        adjusted, votes = adjusted_probabilities(probs)
        assert votes.sum() == n
        assert [Fraction(float(a)).limit_denominator(n) for a in adjusted] == [Fraction(int(v), n) for v in votes]
        assert sum(Fraction(int(v), n) for v in votes) == 1

    def test_order_invariant(self, rng):
        preds = [WindowPrediction(100 * i, rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(2))) for i in range(8)]
        a = aggregate(preds)
        for _ in range(5):
            b = aggregate([preds[i] for i in rng.permutation(8)])
            np.testing.assert_array_equal(a.task_probs, b.task_probs)
            np.testing.assert_array_equal(a.eye_probs, b.eye_probs)

    def test_soft_vote(self, rng):
        probs = rng.dirichlet(np.ones(4), size=8)
        adjusted, votes = adjusted_probabilities(probs, soft=True)
        assert votes is None
        np.testing.assert_allclose(adjusted, probs.mean(axis=0))

    def test_empty(self):
        with pytest.raises(ValueError):
            adjusted_probabilities(np.zeros((0, 4)))


def _brute_force_scores(decisions):
    scores = {}
    for ch in ALPHABET:
        s = 1.0
        for dec, (t, e) in zip(decisions, encode_char(TABLE, ch).stages):
            s *= dec.task_probs[int(t)] * dec.eye_probs[int(e)]
        scores[ch] = s
    return scores


class TestCharacters:
    def _exact(self, ch):
        return tuple(_decision(_onehot(int(t), 4), _onehot(int(e), 2)) for t, e in encode_char(TABLE, ch).stages)

    def test_correct_stages_give_character(self):
        ranking, scores, exact = rank_characters(self._exact("K"), TABLE)
        assert exact == "K" and ranking[0] == "K"

    def test_eye_error_is_no_match(self):
        decs = list(self._exact("K"))
        decs[1] = _decision(decs[1].task_probs, _onehot(0, 2))
        ranking, _, exact = rank_characters(decs, TABLE)
        assert exact is None
        assert sorted(ranking) == sorted(ALPHABET)

    def test_scores_match_brute_force(self, rng):
        decs = [_decision(rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(2))) for _ in range(3)]
        oracle = _brute_force_scores(decs)
        np.testing.assert_allclose(character_scores(decs, TABLE), [oracle[c] for c in ALPHABET], rtol=1e-12)
        ranking, _, _ = rank_characters(decs, TABLE)
        expected = sorted(ALPHABET, key=lambda c: (-oracle[c], ALPHABET.index(c)))
        assert list(ranking) == expected

    def test_uniform_stage_tie_break(self):
        decs = list(self._exact("B"))
        uniform = np.array([2, 2, 2, 2]) / 8
        decs[2] = _decision(uniform, decs[2].eye_probs)
        assert decs[2].task == 0  # lowest index wins the tie
        ranking, scores, exact = rank_characters(decs, TABLE)
        # B = (foot, foot, tongue) so its third factor is the tied proportion 1/4
        assert scores[ALPHABET.index("B")] == pytest.approx(0.25)
        assert exact == "A"
        # A, B, C, D tie on score; the exact match leads, then alphabet order
        assert ranking[:4] == ("A", "B", "C", "D")
        assert rank_characters(decs, TABLE)[0] == ranking

    def test_exact_match_leads_ties(self):
        decs = list(self._exact("C"))
        decs[2] = _decision(np.array([0.25, 0.25, 0.25, 0.25]), decs[2].eye_probs)
        object.__setattr__(decs[2], "task", 2)
        ranking, _, exact = rank_characters(decs, TABLE)
        assert exact == "C" and ranking[0] == "C"

    def test_ranking_total(self, rng):
        for _ in range(20):
            decs = [_decision(rng.dirichlet(np.ones(4) * 0.2), rng.dirichlet(np.ones(2))) for _ in range(3)]
            ranking, _, _ = rank_characters(decs, TABLE)
            assert len(ranking) == 36 and set(ranking) == set(ALPHABET)

    def test_top1_implies_exact_stages(self, rng):
        for _ in range(50):
            decs = [_decision(rng.dirichlet(np.ones(4) * 0.3), rng.dirichlet(np.ones(2) * 0.3)) for _ in range(3)]
            _, _, exact = rank_characters(decs, TABLE)
            if exact is not None:
                code = encode_char(TABLE, exact)
                assert [(d.task, d.eye) for d in decs] == [(int(t), int(e)) for t, e in code.stages]

    def test_wrong_stage_count(self):
        with pytest.raises(ValueError):
            rank_characters(self._exact("A")[:2], TABLE)


def _biased(config, task=None, eye=None):
    params = zero_params(config)
    if task is not None:
        params["task_head.bias"][task] = 3.0
    if eye is not None:
        params["eye_head.bias"][eye] = 3.0
    return params


class TestWithNetwork:
    def test_predict_stage_counts_windows(self, rng):
        cfg = TsldConfig(n_channels=4, n_freq_components=2, n_subnetworks=2, gru_hidden=3)
        dec = predict_stage(rng.standard_normal((4, 1792)), _biased(cfg, 2, 1), cfg)
        assert dec.n_windows == 8 and dec.task == 2 and dec.eye == 1
        assert dec.task_probs[2] == 1.0

    def test_predict_character_constant_eye_no_match(self, rng):
        cfg = TsldConfig(n_channels=4, n_freq_components=2, n_subnetworks=2, gru_hidden=3)
        segs = [rng.standard_normal((4, 1792)) for _ in range(3)]
        pred = predict_character(segs, _biased(cfg, 0, 0), cfg, TABLE)
        assert pred.character is None
        assert len(pred.ranking) == 36

    def test_decode_direct_all_q(self, rng):
        cfg = TsldConfig(n_channels=4, n_freq_components=2, n_subnetworks=2, gru_hidden=3, direct_mode=True, n_task_classes=36)
        pred = decode_direct(rng.standard_normal((4, DIRECT_SAMPLES)), _biased(cfg, ALPHABET.index("Q")), cfg)
        assert pred.character == "Q" and pred.probs[ALPHABET.index("Q")] == 1.0
        assert pred.n_windows == 44

    def test_decode_direct_tie_alphabet_order(self, rng):
        cfg = TsldConfig(n_channels=4, n_freq_components=2, n_subnetworks=2, gru_hidden=3, direct_mode=True, n_task_classes=36)
        pred = decode_direct(rng.standard_normal((4, DIRECT_SAMPLES)), zero_params(cfg), cfg)
        assert pred.character == "A"
        assert pred.ranking == ALPHABET

    def test_decode_direct_needs_direct_mode(self, rng):
        cfg = TsldConfig(n_channels=4)
        with pytest.raises(ValueError):
            decode_direct(rng.standard_normal((4, DIRECT_SAMPLES)), zero_params(cfg), cfg)


def test_rank_direct_ties():
    probs = np.zeros(36)
    probs[[5, 2]] = 0.5
    assert rank_direct(probs)[:3] == ("C", "F", "A")


def test_report_rows(tmp_path):
    code = encode_char(TABLE, "G")
    decs = tuple(_decision(_onehot(int(t), 4), _onehot(int(e), 2)) for t, e in code.stages)
    ranking, scores, exact = rank_characters(decs, TABLE)
    rows = report_rows("G", CharacterPrediction(exact, ranking, scores, decs), TABLE)
    assert [r["stage_index"] for r in rows] == [0, 1, 2]
    assert all(r["character_pred"] == "G" and r["task_gt"] == r["task_pred"] for r in rows)
    write_report(tmp_path / "r.csv", rows)
    with open(tmp_path / "r.csv") as fh:
        reader = csv.DictReader(fh)
        assert tuple(reader.fieldnames) == REPORT_FIELDS
        assert len(list(reader)) == 3
