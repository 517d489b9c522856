"""Synthetic EEG sessions following the three-stage mental-task protocol.

A stage is pink noise (independent per channel plus a shared common-mode
part), a linear drift, the task's oscillation projected through its spatial
profile, an occipital alpha component whose gain depends on the eye state,
and blink artifacts at both stage boundaries.

Channel geography is fixed: channels 0-7 frontal, 8-19 central/parietal,
20-31 occipital. ``difficulty`` scales every nuisance term (noise, drift,
blinks); the task and alpha components are left untouched, so
``difficulty=0`` yields clean signals.

All values are rounded to float32, the precision of the on-disk format.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .codebook import CodebookTable, default_codebook
from .core import (
    ALPHABET,
    DIRECT_SAMPLES,
    N_SESSIONS,
    N_STAGES,
    STAGE_SAMPLES,
    EegRecording,
    EyeState,
    MentalTask,
    Paradigm,
    SessionDataset,
    StageSegment,
)

N_CHANNELS = 32
FRONTAL = range(0, 8)
CENTRAL = range(8, 20)
OCCIPITAL = range(20, 32)
BLINK_MARGIN = 128


def channel_profile(centers, width=1.5, n_channels=N_CHANNELS) -> np.ndarray:
    """Unit-norm sum of Gaussian bumps over channel indices."""
    idx = np.arange(n_channels)
    prof = np.zeros(n_channels)
    for c in np.atleast_1d(centers):
        prof += np.exp(-0.5 * ((idx - c) / width) ** 2)
    return prof / np.linalg.norm(prof)


@dataclass(frozen=True)
class TaskSignature:
    center_hz: float
    bandwidth_hz: float
    profile: np.ndarray = field(repr=False)
    amplitude: float = 1.0

    def __post_init__(self):
        lo, hi = self.center_hz - self.bandwidth_hz / 2, self.center_hz + self.bandwidth_hz / 2
        if not (4.0 < lo and hi < 38.0):
            raise ValueError(f"signature band [{lo}, {hi}] Hz must sit inside (4, 38) Hz")
        prof = np.asarray(self.profile, dtype=np.float64)
        if not np.isclose(np.linalg.norm(prof), 1.0):
            raise ValueError("spatial profile must be unit-norm")
        object.__setattr__(self, "profile", prof)


def default_signatures() -> dict[MentalTask, TaskSignature]:
    """Foot and tongue imagery share a beta band and differ in location;
    visual imagery and arithmetic each have their own band and region."""
    return {
        MentalTask.MiFoot: TaskSignature(20.0, 3.0, channel_profile([10.0, 11.0])),
        MentalTask.MiTongue: TaskSignature(20.0, 3.0, channel_profile([16.0, 18.0])),
        MentalTask.VisualImagery: TaskSignature(14.0, 3.0, channel_profile([23.0, 27.0], width=2.0)),
        MentalTask.Arithmetic: TaskSignature(6.0, 2.0, channel_profile([3.0, 13.0], width=2.0)),
    }


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    sampling_rate_hz: int = 256
    n_channels: int = N_CHANNELS
    n_sessions: int = N_SESSIONS
    difficulty: float = 1.0
    noise_exponent: float = 1.0
    noise_amplitude: float = 10.0
    common_noise_ratio: float = 0.5
    drift_slope_max: float = 4.0
    task_amplitude: float = 5.0
    tone_fraction: float = 0.7
    burst_duty: float = 0.8
    alpha_hz: float = 10.0
    alpha_closed_gain: float = 6.0
    alpha_open_gain: float = 1.5
    blink_amplitude: float = 60.0
    blink_width_s: float = 0.05
    direct_overlap: float = 0.6
    direct_amplitude: float = 3.0
    probe_freqs: tuple[float, ...] = (8.0, 12.0, 16.0, 20.0, 24.0, 28.0, 32.0)
    probe_step: int = 8
    probe_amplitude: float = 5.0
    probe_per_session: int = 60

    def __post_init__(self):
        for name in (
            "difficulty",
            "noise_amplitude",
            "drift_slope_max",
            "task_amplitude",
            "alpha_closed_gain",
            "alpha_open_gain",
            "blink_amplitude",
            "direct_amplitude",
            "probe_amplitude",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_channels != N_CHANNELS:
            raise ValueError(f"the channel geography is defined for {N_CHANNELS} channels")
        if not 1 <= self.n_sessions <= N_SESSIONS:
            raise ValueError(f"n_sessions must lie in 1..{N_SESSIONS}")
        if not 0 <= self.direct_overlap <= 1 or not 0 < self.burst_duty <= 1 or not 0 <= self.tone_fraction <= 1:
            raise ValueError("direct_overlap, burst_duty and tone_fraction must lie in [0, 1]")
        if len(self.probe_freqs) < 2 or not all(4 < f < 38 for f in self.probe_freqs):
            raise ValueError("probe_freqs needs at least two frequencies inside (4, 38) Hz")
        if self.probe_step < 1 or self.probe_per_session < 6 or self.probe_per_session % 6:
            raise ValueError("probe_step must be >= 1 and probe_per_session a positive multiple of 6")
        object.__setattr__(self, "probe_freqs", tuple(float(f) for f in self.probe_freqs))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SynthConfig keys: {sorted(unknown)}")
        return cls(**d)


def load_synth_config(path) -> SynthConfig:
    """Read ``key = value`` lines (optionally under a ``[synth]`` section)."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser()
    if not text.lstrip().startswith("["):
        text = "[synth]\n" + text
    parser.read_string(text)
    section = parser["synth"] if parser.has_section("synth") else {}
    defaults = SynthConfig()
    values = {}
    for key, raw in section.items():
        if not hasattr(defaults, key):
            raise ValueError(f"unknown SynthConfig key {key!r}")
        values[key] = _coerce(raw, getattr(defaults, key))
    return SynthConfig(**values)


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(float(v) for v in raw.replace(",", " ").split())
    return raw


def pink_noise(rng: np.random.Generator, shape, exponent=1.0) -> np.ndarray:
    """Gaussian noise with power ~ 1/f**exponent along the last axis, unit std."""
    n = shape[-1]
    spec = np.fft.rfft(rng.standard_normal(shape), axis=-1)
    f = np.fft.rfftfreq(n)
    scale = np.zeros_like(f)
    scale[1:] = f[1:] ** (-exponent / 2)
    out = np.fft.irfft(spec * scale, n=n, axis=-1)
    return out / out.std(axis=-1, keepdims=True)


def narrowband(rng, n, fs, center, bandwidth) -> np.ndarray:
    """Unit-std Gaussian noise confined to ``center +/- bandwidth/2``."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / fs)
    spec[np.abs(f - center) > bandwidth / 2] = 0
    out = np.fft.irfft(spec, n=n)
    sd = out.std()
    return out / sd if sd > 0 else out


def burst_envelope(rng, n, fs, duty) -> np.ndarray:
    """Smooth on/off envelope in [0, 1] that is 'on' for roughly ``duty`` of the time."""
    if duty >= 1:
        return np.ones(n)
    env = np.zeros(n)
    t = int(rng.integers(0, fs // 2))
    on = True
    while t < n:
        length = int(rng.uniform(0.5, 1.5) * fs * (duty if on else 1 - duty) * 2)
        length = max(length, 8)
        if on:
            seg = np.hanning(length + 2)[1:-1] ** 0.5
            stop = min(n, t + length)
            env[t:stop] = seg[: stop - t]
        t += length
        on = not on
    return env


def _oscillation(rng, n, fs, sig: TaskSignature, cfg: SynthConfig) -> np.ndarray:
    t = np.arange(n) / fs
    tone = np.sqrt(2.0) * np.sin(2 * np.pi * sig.center_hz * t + rng.uniform(0, 2 * np.pi))
    band = narrowband(rng, n, fs, sig.center_hz, sig.bandwidth_hz)
    mix = np.sqrt(cfg.tone_fraction) * tone + np.sqrt(1 - cfg.tone_fraction) * band
    return mix * burst_envelope(rng, n, fs, cfg.burst_duty)


def _blinks(n, fs, width_s) -> np.ndarray:
    t = np.arange(n)
    sigma = width_s * fs
    centre = min(BLINK_MARGIN / 2, n / 2)
    wave = np.exp(-0.5 * ((t - centre) / sigma) ** 2) + np.exp(-0.5 * ((t - (n - 1 - centre)) / sigma) ** 2)
    wave[BLINK_MARGIN : n - BLINK_MARGIN] = 0.0
    return wave


def _frontal_profile(n_channels=N_CHANNELS) -> np.ndarray:
    prof = np.zeros(n_channels)
    prof[list(FRONTAL)] = np.linspace(1.0, 0.3, len(FRONTAL))
    return prof


def background(rng, n, cfg: SynthConfig) -> np.ndarray:
    """Noise, drift and blinks, all scaled by ``difficulty``."""
    C, fs = cfg.n_channels, cfg.sampling_rate_hz
    own = pink_noise(rng, (C, n), cfg.noise_exponent)
    common = pink_noise(rng, (1, n), cfg.noise_exponent)
    noise = cfg.noise_amplitude * (own + cfg.common_noise_ratio * common)
    slopes = rng.uniform(-cfg.drift_slope_max, cfg.drift_slope_max, size=(C, 1))
    offsets = rng.uniform(-20.0, 20.0, size=(C, 1))
    drift = offsets + slopes * (np.arange(n) / fs)
    blinks = cfg.blink_amplitude * np.outer(_frontal_profile(C), _blinks(n, fs, cfg.blink_width_s))
    return cfg.difficulty * (noise + drift + blinks)


def alpha_component(rng, n, eye: EyeState, cfg: SynthConfig) -> np.ndarray:
    gain = cfg.alpha_closed_gain if eye == EyeState.Closed else cfg.alpha_open_gain
    prof = np.zeros(cfg.n_channels)
    prof[list(OCCIPITAL)] = 1.0
    wave = narrowband(rng, n, cfg.sampling_rate_hz, cfg.alpha_hz, 4.0)
    return gain * np.outer(prof, wave)


def _peak_normalised(profile: np.ndarray) -> np.ndarray:
    return profile / np.abs(profile).max()


def _as_recording(data, cfg) -> EegRecording:
    return EegRecording(data.astype(np.float32), cfg.sampling_rate_hz)


def generate_stage(
    task,
    eye,
    cfg: SynthConfig | None = None,
    rng: np.random.Generator | None = None,
    session_index: int = 0,
    character: str = "A",
    stage_index: int = 0,
    signatures: dict | None = None,
    n_samples: int = STAGE_SAMPLES,
) -> StageSegment:
    """One labelled stage: background + task oscillation + eye-state alpha."""
    cfg = cfg or SynthConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    task, eye = MentalTask(task), EyeState(eye)
    sig = (signatures or default_signatures())[task]
    fs = cfg.sampling_rate_hz
    data = background(rng, n_samples, cfg)
    osc = _oscillation(rng, n_samples, fs, sig, cfg)
    data += cfg.task_amplitude * sig.amplitude * np.outer(_peak_normalised(sig.profile), osc)
    data += alpha_component(rng, n_samples, eye, cfg)
    return StageSegment(_as_recording(data, cfg), task, eye, session_index, character, stage_index)


def _segment_rng(cfg: SynthConfig, *key) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, *key])


def generate_session_set(table: CodebookTable | None = None, cfg: SynthConfig | None = None) -> SessionDataset:
    """Every character once per session in random order, three stages each."""
    table = table or default_codebook()
    cfg = cfg or SynthConfig()
    sigs = default_signatures()
    order_rng = _segment_rng(cfg, 0)
    segments = []
    for session in range(cfg.n_sessions):
        for ci in order_rng.permutation(len(table.entries)):
            entry = table.entries[ci]
            for stage, (task, eye) in enumerate(entry.stages):
                rng = _segment_rng(cfg, 1, session, int(ci), stage)
                segments.append(generate_stage(task, eye, cfg, rng, session, entry.character, stage, sigs))
    return SessionDataset(tuple(segments), ALPHABET, Paradigm.MentalTask)


def direct_signatures(cfg: SynthConfig) -> list[TaskSignature]:
    """36 character signatures drawn deterministically from the seed.

    Centre frequencies sit on a tight grid and each spatial profile blends a
    character-specific bump with a shared one (weight ``direct_overlap``).
    """
    rng = _segment_rng(cfg, 2)
    centers = np.linspace(7.0, 33.0, len(ALPHABET))
    rng.shuffle(centers)
    shared = channel_profile([8.0, 16.0, 24.0], width=3.0)
    sigs = []
    for k in range(len(ALPHABET)):
        own = channel_profile([rng.uniform(0, N_CHANNELS - 1)], width=2.0)
        prof = (1 - cfg.direct_overlap) * own + cfg.direct_overlap * shared
        sigs.append(TaskSignature(float(centers[k]), 2.0, prof / np.linalg.norm(prof)))
    return sigs


def generate_direct_set(cfg: SynthConfig | None = None) -> SessionDataset:
    """21-second direct-imagination recordings, one per character per session."""
    cfg = cfg or SynthConfig()
    sigs = direct_signatures(cfg)
    order_rng = _segment_rng(cfg, 3)
    fs, n = cfg.sampling_rate_hz, DIRECT_SAMPLES
    segments = []
    for session in range(cfg.n_sessions):
        for ci in order_rng.permutation(len(ALPHABET)):
            rng = _segment_rng(cfg, 4, session, int(ci))
            data = background(rng, n, cfg)
            osc = _oscillation(rng, n, fs, sigs[ci], cfg)
            data += cfg.direct_amplitude * np.outer(_peak_normalised(sigs[ci].profile), osc)
            data += alpha_component(rng, n, EyeState.Open, cfg)
            segments.append(StageSegment(_as_recording(data, cfg), None, None, session, ALPHABET[ci], 0))
    return SessionDataset(tuple(segments), ALPHABET, Paradigm.DirectImagination)


def probe_motif(cfg: SynthConfig, reverse: bool = False) -> list[float]:
    """Instantaneous frequency of one motif cycle, one entry per sample."""
    freqs = np.repeat(np.asarray(cfg.probe_freqs), cfg.probe_step)
    return list(freqs[::-1] if reverse else freqs)


def probe_signal(rng, n, cfg: SynthConfig, reverse: bool) -> np.ndarray:
    """Phase-continuous stepped sweep through ``probe_freqs``, repeated.

    Class B is the class-A signal read backwards. The cycle start and the
    initial phase are uniform, so both classes share one power spectrum.
    """
    fs = cfg.sampling_rate_hz
    freqs = np.asarray(probe_motif(cfg))
    start = int(rng.integers(0, len(freqs)))
    inst = np.resize(freqs, n + len(freqs))[start : start + n]
    phase = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.cumsum(inst) / fs
    out = np.sqrt(2.0) * np.sin(phase)
    return out[::-1].copy() if reverse else out


def generate_order_probe(cfg: SynthConfig | None = None) -> SessionDataset:
    """Two classes with the same sub-burst content in opposite temporal order.

    Class A is labelled ``MentalTask.MiFoot`` and class B ``MentalTask.MiTongue``;
    both keep eyes open. Segments are grouped into three-stage pseudo
    characters so the dataset passes the usual invariants.
    """
    cfg = cfg or SynthConfig()
    prof = channel_profile([12.0, 15.0], width=2.5)
    n = STAGE_SAMPLES
    segments = []
    for session in range(cfg.n_sessions):
        for k in range(cfg.probe_per_session):
            reverse = bool(k % 2)
            rng = _segment_rng(cfg, 5, session, k)
            data = background(rng, n, cfg)
            data += cfg.probe_amplitude * np.outer(_peak_normalised(prof), probe_signal(rng, n, cfg, reverse))
            data += alpha_component(rng, n, EyeState.Open, cfg)
            task = MentalTask.MiTongue if reverse else MentalTask.MiFoot
            char = ALPHABET[(k // N_STAGES) % len(ALPHABET)]
            segments.append(StageSegment(_as_recording(data, cfg), task, EyeState.Open, session, char, k % N_STAGES))
    return SessionDataset(tuple(segments), ALPHABET, Paradigm.MentalTask)
