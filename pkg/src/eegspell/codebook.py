"""Character codebook: each character maps to three (task, eye state) stages."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .core import ALPHABET, N_STAGES, EyeState, MentalTask

N_TASKS = len(MentalTask)
CAPACITY = N_TASKS**N_STAGES
DEFAULT_EYE_PATTERN = (EyeState.Closed, EyeState.Open, EyeState.Closed)

TASK_NAMES = {
    "foot": MentalTask.MiFoot,
    "tongue": MentalTask.MiTongue,
    "visual": MentalTask.VisualImagery,
    "arith": MentalTask.Arithmetic,
}
EYE_NAMES = {"closed": EyeState.Closed, "open": EyeState.Open}
CSV_HEADER = ["char", "task1", "eye1", "task2", "eye2", "task3", "eye3"]

Stage = tuple[MentalTask, EyeState]


class CodebookError(ValueError):
    pass


@dataclass(frozen=True)
class CharacterCode:
    character: str
    stages: tuple[Stage, Stage, Stage]

    def __post_init__(self):
        stages = tuple((MentalTask(t), EyeState(e)) for t, e in self.stages)
        if len(stages) != N_STAGES:
            raise CodebookError(f"{self.character!r}: expected {N_STAGES} stages, got {len(stages)}")
        object.__setattr__(self, "stages", stages)

    @property
    def tasks(self) -> tuple[MentalTask, ...]:
        return tuple(t for t, _ in self.stages)

    @property
    def eyes(self) -> tuple[EyeState, ...]:
        return tuple(e for _, e in self.stages)


@dataclass(frozen=True)
class CodebookTable:
    entries: tuple[CharacterCode, ...]
    eye_pattern: tuple[EyeState, ...] | None = DEFAULT_EYE_PATTERN

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.eye_pattern is not None:
            object.__setattr__(self, "eye_pattern", tuple(EyeState(e) for e in self.eye_pattern))
        chars = [e.character for e in self.entries]
        dup = _first_duplicate(chars)
        if dup is not None:
            raise CodebookError(f"duplicate character {dup!r}")
        if sorted(chars) != sorted(ALPHABET):
            missing = sorted(set(ALPHABET) - set(chars))
            extra = sorted(set(chars) - set(ALPHABET))
            raise CodebookError(f"alphabet incomplete: missing {missing}, unexpected {extra}")
        # with a fixed eye pattern the tasks alone must identify the character
        keys = [e.tasks if self.eye_pattern is not None else e.stages for e in self.entries]
        dup = _first_duplicate(keys)
        if dup is not None:
            raise CodebookError(f"duplicate code {dup}")
        if self.eye_pattern is not None:
            for e in self.entries:
                if e.eyes != self.eye_pattern:
                    raise CodebookError(f"{e.character!r}: eye states {e.eyes} differ from pattern {self.eye_pattern}")
        # entries are kept in alphabet order so indices match the class order
        order = {c: i for i, c in enumerate(ALPHABET)}
        object.__setattr__(self, "entries", tuple(sorted(self.entries, key=lambda e: order[e.character])))
        object.__setattr__(self, "_by_char", {e.character: e for e in self.entries})
        object.__setattr__(self, "_by_stages", {e.stages: e.character for e in self.entries})

    def __len__(self):
        return len(self.entries)

    @property
    def alphabet(self) -> tuple[str, ...]:
        return tuple(e.character for e in self.entries)


def _first_duplicate(items):
    seen = set()
    for item in items:
        if item in seen:
            return item
        seen.add(item)
    return None


def triple_from_index(index: int) -> tuple[MentalTask, MentalTask, MentalTask]:
    """Base-4 digits of ``index``, most significant first."""
    if not 0 <= index < CAPACITY:
        raise ValueError(f"triple index must lie in [0, {CAPACITY}), got {index}")
    return tuple(MentalTask((index // N_TASKS ** (N_STAGES - 1 - k)) % N_TASKS) for k in range(N_STAGES))


def triple_index(tasks) -> int:
    index = 0
    for t in tasks:
        index = index * N_TASKS + int(t)
    return index


def default_codebook(eye_pattern=DEFAULT_EYE_PATTERN) -> CodebookTable:
    """Assign the first 36 task triples, in lexicographic order, to A-Z then 0-9."""
    triples = itertools.product(MentalTask, repeat=N_STAGES)
    entries = [
        CharacterCode(char, tuple(zip(tasks, eye_pattern)))
        for char, tasks in zip(ALPHABET, triples)
    ]
    return CodebookTable(tuple(entries), eye_pattern)


def _parse_rows(rows, source) -> CodebookTable:
    entries = []
    seen = set()
    for lineno, row in enumerate(rows, start=2):
        if not any(cell.strip() for cell in row.values() if cell):
            continue
        char = (row.get("char") or "").strip()
        if char in seen:
            raise CodebookError(f"{source}:{lineno}: duplicate character {char!r}")
        seen.add(char)
        stages = []
        for k in range(1, N_STAGES + 1):
            task = (row.get(f"task{k}") or "").strip().lower()
            eye = (row.get(f"eye{k}") or "").strip().lower()
            if not task or not eye:
                raise CodebookError(f"{source}:{lineno}: missing stage {k} for {char!r}")
            if task not in TASK_NAMES:
                raise CodebookError(f"{source}:{lineno}: unknown task name {task!r}")
            if eye not in EYE_NAMES:
                raise CodebookError(f"{source}:{lineno}: unknown eye state {eye!r}")
            stages.append((TASK_NAMES[task], EYE_NAMES[eye]))
        entries.append(CharacterCode(char, tuple(stages)))
    if not entries:
        raise CodebookError(f"{source}: no rows")
    eyes = {e.eyes for e in entries}
    pattern = eyes.pop() if len(eyes) == 1 else None
    return CodebookTable(tuple(entries), pattern)


def parse_codebook(text: str, source="<string>") -> CodebookTable:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != CSV_HEADER:
        raise CodebookError(f"{source}: header must be {','.join(CSV_HEADER)}")
    return _parse_rows(reader, source)


def load_codebook(path) -> CodebookTable:
    """Load a codebook CSV with header ``char,task1,eye1,task2,eye2,task3,eye3``.

    Tables whose rows all share one eye pattern keep it as ``eye_pattern`` and
    must have distinct task triples; tables with per-character eye states must
    have distinct (task, eye) codes.
    """
    path = Path(path)
    return parse_codebook(path.read_text(), str(path))


def reference_d_codebook() -> CodebookTable:
    """The bundled table whose 'D' row is foot/closed, tongue/open, visual/closed."""
    text = resources.files("eegspell.data").joinpath("codebook_reference_d.csv").read_text()
    return parse_codebook(text, "codebook_reference_d.csv")


def dump_codebook(table: CodebookTable) -> str:
    inv_task = {v: k for k, v in TASK_NAMES.items()}
    inv_eye = {v: k for k, v in EYE_NAMES.items()}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for e in table.entries:
        row = [e.character]
        for t, eye in e.stages:
            row += [inv_task[t], inv_eye[eye]]
        writer.writerow(row)
    return buf.getvalue()


def encode_char(table: CodebookTable, character: str) -> CharacterCode:
    try:
        return table._by_char[character]
    except KeyError:
        raise KeyError(f"character {character!r} not in codebook") from None


def decode_stages(table: CodebookTable, stages) -> str | None:
    """Return the character whose code equals ``stages`` exactly, else ``None``."""
    stages = tuple(stages)
    if len(stages) != N_STAGES:
        raise ValueError(f"expected {N_STAGES} stages, got {len(stages)}")
    key = tuple((MentalTask(t), EyeState(e)) for t, e in stages)
    return table._by_stages.get(key)
