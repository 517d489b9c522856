import numpy as np
import pytest
from scipy import signal

from eegspell.codebook import default_codebook, encode_char
from eegspell.core import ALPHABET, DIRECT_SAMPLES, STAGE_SAMPLES, EyeState, MentalTask, Paradigm
from eegspell.preprocess import preprocess_pipeline
from eegspell.synth import (
    BLINK_MARGIN,
    OCCIPITAL,
    SynthConfig,
    TaskSignature,
    channel_profile,
    default_signatures,
    direct_signatures,
    generate_direct_set,
    generate_order_probe,
    generate_session_set,
    generate_stage,
    load_synth_config,
    probe_signal,
)

FS = 256
CLEAN = SynthConfig(difficulty=0.0)


def _welch(x):
    return signal.welch(np.asarray(x, dtype=np.float64), FS, nperseg=256, axis=-1)


def _band_power(x, lo, hi, inclusive=False):
    f, p = _welch(x)
    mask = (f >= lo) & (f <= hi) if inclusive else (f > lo) & (f < hi)
    return p[..., mask].sum(axis=-1)


@pytest.fixture(scope="module")
def sessions():
    return generate_session_set(cfg=SynthConfig(n_sessions=2))


class TestSignature:
    def test_band_outside_passband(self):
        with pytest.raises(ValueError):
            TaskSignature(37.5, 2.0, channel_profile(3))

    def test_profile_norm(self):
        with pytest.raises(ValueError):
            TaskSignature(10.0, 2.0, np.ones(32))

    def test_defaults_valid(self):
        for sig in default_signatures().values():
            assert np.isclose(np.linalg.norm(sig.profile), 1.0)
        assert len(direct_signatures(SynthConfig())) == 36


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(noise_amplitude=-1), dict(difficulty=-0.1), dict(n_sessions=7), dict(n_channels=16)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SynthConfig(**kw)

    def test_ini_file(self, tmp_path):
        path = tmp_path / "synth.ini"
        path.write_text("[synth]\nseed = 3\ndifficulty = 0.5\nprobe_freqs = 8, 16, 24\n")
        cfg = load_synth_config(path)
        assert (cfg.seed, cfg.difficulty, cfg.probe_freqs) == (3, 0.5, (8.0, 16.0, 24.0))

    def test_bare_key_values(self, tmp_path):
        path = tmp_path / "synth.cfg"
        path.write_text("seed = 11\n")
        assert load_synth_config(path).seed == 11

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "synth.ini"
        path.write_text("[synth]\nsnr = 4\n")
        with pytest.raises(ValueError, match="snr"):
            load_synth_config(path)

    def test_dict_round_trip(self):
        cfg = SynthConfig(seed=2, difficulty=0.3)
        assert SynthConfig.from_dict(cfg.to_dict()) == cfg


class TestStage:
    def test_shape_and_labels(self):
        seg = generate_stage(MentalTask.Arithmetic, EyeState.Closed, rng=np.random.default_rng(0))
        assert seg.recording.data.shape == (32, STAGE_SAMPLES)
        assert seg.recording.data.dtype == np.float32
        assert (seg.task, seg.eye) == (MentalTask.Arithmetic, EyeState.Closed)

    def test_deterministic(self):
        a = generate_stage(0, 1, rng=np.random.default_rng(4))
        b = generate_stage(0, 1, rng=np.random.default_rng(4))
        assert a.recording.data.tobytes() == b.recording.data.tobytes()

    @pytest.mark.parametrize("seed", range(5))
    def test_eyes_closed_raises_occipital_alpha(self, seed):
        closed = generate_stage(MentalTask.MiFoot, EyeState.Closed, rng=np.random.default_rng(seed)).recording.data
        opened = generate_stage(MentalTask.MiFoot, EyeState.Open, rng=np.random.default_rng(seed)).recording.data
        occ = list(OCCIPITAL)
        assert _band_power(closed[occ], 8, 12, inclusive=True).sum() > _band_power(opened[occ], 8, 12, inclusive=True).sum()

    @pytest.mark.parametrize("task", list(MentalTask))
    def test_clean_dominant_frequency(self, task):
        sig = default_signatures()[task]
        data = generate_stage(task, EyeState.Open, CLEAN, np.random.default_rng(2)).recording.data
        x = data[int(np.argmax(sig.profile))].astype(np.float64)
        freqs = np.fft.rfftfreq(x.size, 1 / FS)
        peak = freqs[np.argmax(np.abs(np.fft.rfft(x)))]
        assert abs(peak - sig.center_hz) <= FS / x.size

    def test_blinks_confined_to_margins(self):
        only_blinks = SynthConfig(
            noise_amplitude=0, drift_slope_max=0, task_amplitude=0, alpha_closed_gain=0, alpha_open_gain=0
        )
        data = generate_stage(0, 0, only_blinks, np.random.default_rng(0)).recording.data
        # drift offsets are still drawn, so subtract each channel's constant
        data = data - data[:, BLINK_MARGIN : BLINK_MARGIN + 1]
        assert np.all(data[:, BLINK_MARGIN:-BLINK_MARGIN] == 0)
        assert np.abs(data[:8, :BLINK_MARGIN]).max() > 10
        assert np.abs(data[:8, -BLINK_MARGIN:]).max() > 10

    @pytest.mark.parametrize("task", list(MentalTask))
    @pytest.mark.parametrize("eye", list(EyeState))
    def test_band_power_survives_preprocessing(self, task, eye):
        # EMS rescales every channel, so retention is measured after the linear stages
        for seed in range(3):
            rec = generate_stage(task, eye, CLEAN, np.random.default_rng(seed)).recording
            stages = {}
            preprocess_pipeline(rec, hook=lambda name, r: stages.__setitem__(name, r.data))
            kept = _band_power(stages["car"], 4, 38).sum() / _band_power(rec.data, 4, 38).sum()
            assert kept >= 0.5


class TestSessionSet:
    def test_full_count(self):
        ds = generate_session_set()
        assert len(ds) == 648 and ds.paradigm == Paradigm.MentalTask
        assert ds.sessions == list(range(6))

    def test_each_character_once_per_session(self, sessions):
        for session in sessions.sessions:
            chars = [c for s, c, _ in sessions.characters() if s == session]
            assert sorted(chars) == sorted(ALPHABET)

    def test_order_differs_between_sessions(self, sessions):
        orders = [[c for s, c, _ in sessions.characters() if s == k] for k in sessions.sessions]
        assert orders[0] != orders[1]

    def test_labels_follow_table(self, sessions):
        table = default_codebook()
        for _, ch, segs in sessions.characters():
            assert tuple((s.task, s.eye) for s in segs) == encode_char(table, ch).stages

    def test_deterministic(self, sessions):
        again = generate_session_set(cfg=SynthConfig(n_sessions=2))
        assert all(a.recording.data.tobytes() == b.recording.data.tobytes() for a, b in zip(sessions.segments, again.segments))

    def test_seed_changes_data(self, sessions):
        other = generate_session_set(cfg=SynthConfig(n_sessions=2, seed=8))
        assert not np.array_equal(other.segments[0].recording.data, sessions.segments[0].recording.data)


class TestDirectSet:
    def test_counts(self):
        ds = generate_direct_set(SynthConfig(n_sessions=1))
        assert len(ds) == 36 and ds.paradigm == Paradigm.DirectImagination
        assert all(s.recording.n_samples == DIRECT_SAMPLES == 21 * 256 for s in ds.segments)
        assert sorted(s.character for s in ds.segments) == sorted(ALPHABET)
        assert all(s.task is None and s.eye is None for s in ds.segments)

    def test_full_count(self):
        assert len(generate_direct_set()) == 216

    def test_signatures_distinct(self):
        sigs = direct_signatures(SynthConfig())
        assert len({(s.center_hz, tuple(np.round(s.profile, 6))) for s in sigs}) == 36

    def test_deterministic(self):
        a = generate_direct_set(SynthConfig(n_sessions=1))
        b = generate_direct_set(SynthConfig(n_sessions=1))
        assert all(x.recording.data.tobytes() == y.recording.data.tobytes() for x, y in zip(a.segments, b.segments))


@pytest.fixture(scope="module")
def clean_probe():
    return generate_order_probe(CLEAN)


class TestOrderProbe:
    def test_counts_balanced(self, clean_probe):
        labels = [s.task for s in clean_probe.segments]
        assert len(labels) == 360
        assert labels.count(MentalTask.MiFoot) == labels.count(MentalTask.MiTongue) == 180

    def test_reverse_of_class_a_is_class_b(self):
        cfg = SynthConfig()
        a = probe_signal(np.random.default_rng(9), 1792, cfg, reverse=False)
        b = probe_signal(np.random.default_rng(9), 1792, cfg, reverse=True)
        np.testing.assert_array_equal(a[::-1], b)

    def test_time_averaged_spectra_match(self, clean_probe):
        X = np.stack([s.recording.data for s in clean_probe.segments])
        y = np.array([int(s.task) for s in clean_probe.segments])
        f, p = _welch(X)
        band = (f > 4) & (f < 38)
        a, b = p[y == 0].mean(axis=0)[:, band], p[y == 1].mean(axis=0)[:, band]
        np.testing.assert_allclose(a.sum(axis=1), b.sum(axis=1), rtol=0.02)
        peak = int(np.argmax(channel_profile([12.0, 15.0], width=2.5)))
        np.testing.assert_allclose(a[peak], b[peak], rtol=0.02, atol=0.02 * a[peak].max())
