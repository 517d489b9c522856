"""Domain types and the on-disk dataset format.

Recordings are kept channel-major: ``data[c, t]`` is channel ``c`` at sample ``t``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np

DEFAULT_SAMPLING_RATE = 256
STAGE_SAMPLES = 1792
DIRECT_SAMPLES = 5376
WINDOW_SAMPLES = 1000
N_STAGES = 3
N_SESSIONS = 6
ALPHABET = tuple("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789")

SIGNAL_MAGIC = b"EEGS"
SIGNAL_VERSION = 1
_HEADER = struct.Struct("<4sHHIII")
METADATA_NAME = "metadata.json"


class MentalTask(IntEnum):
    MiFoot = 0
    MiTongue = 1
    VisualImagery = 2
    Arithmetic = 3


class EyeState(IntEnum):
    Closed = 0
    Open = 1


class Paradigm(str, Enum):
    MentalTask = "mental_task"
    DirectImagination = "direct_imagination"


class EegSpellError(Exception):
    """Base class for package errors."""


class DatasetFormatError(EegSpellError, ValueError):
    """A dataset file could not be decoded."""


class BadMagicError(DatasetFormatError):
    pass


class UnsupportedVersionError(DatasetFormatError):
    pass


class TruncatedPayloadError(DatasetFormatError):
    pass


class LabelRangeError(DatasetFormatError):
    pass


class InvariantError(EegSpellError, ValueError):
    """A domain object violates one of its invariants."""


class NonFiniteError(InvariantError):
    pass


@dataclass(frozen=True, eq=False)
class EegRecording:
    """A multichannel recording with shape ``(n_channels, n_samples)``."""

    data: np.ndarray
    sampling_rate_hz: int = DEFAULT_SAMPLING_RATE

    def __post_init__(self):
        data = np.array(self.data, copy=True)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        if data.ndim != 2:
            raise InvariantError(f"recording must be 2-D (channels, samples), got shape {data.shape}")
        if data.shape[0] < 2:
            raise InvariantError(f"recording needs at least 2 channels, got {data.shape[0]}")
        if data.shape[1] < 1:
            raise InvariantError("recording has no samples")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("recording contains non-finite samples")
        if self.sampling_rate_hz <= 0:
            raise InvariantError(f"sampling rate must be positive, got {self.sampling_rate_hz}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> EegRecording:
        return EegRecording(data, self.sampling_rate_hz)

    def __eq__(self, other):
        if not isinstance(other, EegRecording):
            return NotImplemented
        return (
            self.sampling_rate_hz == other.sampling_rate_hz
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class StageSegment:
    """One labelled imagination interval.

    Mental-task stages hold 1792 samples and carry task and eye labels. Direct
    imagination recordings hold 5376 samples, have ``stage_index == 0`` and
    no task/eye labels; the target is ``character`` alone.
    """

    recording: EegRecording
    task: MentalTask | None
    eye: EyeState | None
    session_index: int
    character: str
    stage_index: int = 0

    def __post_init__(self):
        if self.task is not None:
            object.__setattr__(self, "task", MentalTask(self.task))
        if self.eye is not None:
            object.__setattr__(self, "eye", EyeState(self.eye))
        if not 0 <= self.session_index < N_SESSIONS:
            raise InvariantError(f"session_index {self.session_index} outside 0..{N_SESSIONS - 1}")
        if not 0 <= self.stage_index < N_STAGES:
            raise InvariantError(f"stage_index {self.stage_index} outside 0..{N_STAGES - 1}")
        expected = STAGE_SAMPLES if self.task is not None else DIRECT_SAMPLES
        if self.recording.n_samples != expected:
            raise InvariantError(
                f"segment {self.character!r} stage {self.stage_index} session {self.session_index} "
                f"has {self.recording.n_samples} samples, expected {expected}"
            )
        if self.task is None and (self.eye is not None or self.stage_index != 0):
            raise InvariantError("direct-imagination segments carry no eye label and a single stage")


@dataclass(frozen=True)
class SessionDataset:
    segments: tuple[StageSegment, ...]
    alphabet: tuple[str, ...] = ALPHABET
    paradigm: Paradigm = Paradigm.MentalTask

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        object.__setattr__(self, "paradigm", Paradigm(self.paradigm))
        if len(self.alphabet) != 36 or len(set(self.alphabet)) != 36:
            raise InvariantError("alphabet must hold 36 distinct characters")
        letters = set(self.alphabet)
        mental = self.paradigm is Paradigm.MentalTask
        stages: dict[tuple[int, str], list[int]] = {}
        for seg in self.segments:
            if seg.character not in letters:
                raise InvariantError(f"character {seg.character!r} not in alphabet")
            if mental != (seg.task is not None):
                raise InvariantError(
                    f"segment {seg.character!r} session {seg.session_index} does not match paradigm {self.paradigm.value}"
                )
            stages.setdefault((seg.session_index, seg.character), []).append(seg.stage_index)
        if mental:
            for (session, char), idx in stages.items():
                counts = np.bincount(idx, minlength=N_STAGES)
                if counts.min() != counts.max():
                    raise InvariantError(f"character {char!r} in session {session} lacks a full set of stages")

    def __len__(self):
        return len(self.segments)

    @property
    def sessions(self) -> list[int]:
        return sorted({s.session_index for s in self.segments})

    def subset(self, sessions) -> SessionDataset:
        keep = set(sessions)
        return SessionDataset(
            tuple(s for s in self.segments if s.session_index in keep), self.alphabet, self.paradigm
        )

    def characters(self) -> list[tuple[int, str, tuple[StageSegment, ...]]]:
        """Group mental-task segments into ``(session, character, stages)`` trials.

        A character repeated within a session yields one trial per stage triple,
        in order of appearance.
        """
        groups: dict[tuple[int, str], list[StageSegment]] = {}
        for seg in self.segments:
            groups.setdefault((seg.session_index, seg.character), []).append(seg)
        trials = []
        for (session, char), segs in groups.items():
            by_stage = [[s for s in segs if s.stage_index == k] for k in range(N_STAGES)]
            for triple in zip(*by_stage):
                trials.append((session, char, triple))
        return trials


@dataclass(frozen=True)
class LabeledWindow:
    window: np.ndarray
    task: int
    eye: int | None = None
    start: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.window.ndim != 2 or self.window.shape[1] != WINDOW_SAMPLES:
            raise InvariantError(f"window must be (channels, {WINDOW_SAMPLES}), got {self.window.shape}")


def write_signal(path, recording: EegRecording) -> None:
    data = np.asarray(recording.data)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{path}: non-finite sample")
    header = _HEADER.pack(
        SIGNAL_MAGIC, SIGNAL_VERSION, 0, recording.n_channels, recording.n_samples, recording.sampling_rate_hz
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.astype("<f4").tobytes(order="C"))


def read_signal(path) -> EegRecording:
    raw = Path(path).read_bytes()
    if raw[:4] != SIGNAL_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated")
    _magic, version, _flags, n_channels, n_samples, rate = _HEADER.unpack_from(raw)
    if version != SIGNAL_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    n_bytes = 4 * n_channels * n_samples
    payload = raw[_HEADER.size :]
    if len(payload) < n_bytes:
        raise TruncatedPayloadError(f"{path}: expected {n_bytes} payload bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4", count=n_channels * n_samples)
    data = data.reshape(n_channels, n_samples).astype(np.float32)
    try:
        return EegRecording(data, rate)
    except InvariantError as err:
        raise type(err)(f"{path}: {err}") from None


def write_dataset(dataset: SessionDataset, path) -> None:
    """Write one signal file per segment plus a JSON sidecar indexing them.

    Samples are stored as little-endian float32, so the round trip is exact
    for recordings that already hold float32 values.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for seg in dataset.segments:
        if not np.all(np.isfinite(seg.recording.data)):
            raise NonFiniteError(f"segment {seg.character!r}: non-finite sample")
    entries = []
    for i, seg in enumerate(dataset.segments):
        name = f"seg_{i:05d}.eegs"
        write_signal(root / name, seg.recording)
        entries.append(
            {
                "file": name,
                "character": seg.character,
                "stage_index": seg.stage_index,
                "task_code": None if seg.task is None else int(seg.task),
                "eye_code": None if seg.eye is None else int(seg.eye),
                "session_index": seg.session_index,
                "paradigm": dataset.paradigm.value,
            }
        )
    meta = {
        "format": "eegspell-dataset",
        "version": SIGNAL_VERSION,
        "paradigm": dataset.paradigm.value,
        "alphabet": list(dataset.alphabet),
        "segments": entries,
    }
    (root / METADATA_NAME).write_text(json.dumps(meta, indent=1))


def _label(entry, key, enum, name):
    code = entry.get(key)
    if code is None:
        return None
    try:
        return enum(int(code))
    except ValueError:
        raise LabelRangeError(f"{name}: {key} {code} out of range") from None


def read_dataset(path) -> SessionDataset:
    root = Path(path)
    try:
        meta = json.loads((root / METADATA_NAME).read_text())
    except json.JSONDecodeError as err:
        raise DatasetFormatError(f"{root / METADATA_NAME}: {err}") from None
    if meta.get("version") != SIGNAL_VERSION:
        raise UnsupportedVersionError(f"{root}: unsupported dataset version {meta.get('version')}")
    try:
        paradigm = Paradigm(meta["paradigm"])
    except ValueError:
        raise DatasetFormatError(f"{root}: unknown paradigm {meta['paradigm']!r}") from None
    segments = []
    for entry in meta["segments"]:
        name = entry["file"]
        if entry.get("paradigm", paradigm.value) != paradigm.value:
            raise DatasetFormatError(f"{name}: paradigm differs from dataset paradigm")
        task = _label(entry, "task_code", MentalTask, name)
        eye = _label(entry, "eye_code", EyeState, name)
        session = int(entry["session_index"])
        stage = int(entry["stage_index"])
        if not 0 <= session < N_SESSIONS:
            raise LabelRangeError(f"{name}: session_index {session} out of range")
        if not 0 <= stage < N_STAGES:
            raise LabelRangeError(f"{name}: stage_index {stage} out of range")
        recording = read_signal(root / name)
        try:
            segments.append(StageSegment(recording, task, eye, session, entry["character"], stage))
        except InvariantError as err:
            raise InvariantError(f"{name}: {err}") from None
    return SessionDataset(tuple(segments), tuple(meta["alphabet"]), paradigm)
