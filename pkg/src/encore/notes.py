"""In-memory note-event model: notes, sequences, and fixed-length windows."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Note:
    """A single timed note event, times in seconds."""

    start: float
    pitch: int
    end: float
    velocity: int = 100
    program: int = 0
    is_drum: bool = False

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0..127")
        if not 0 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside 0..127")
        if not 0 <= self.program <= 127:
            raise ValueError(f"program {self.program} outside 0..127")
        if self.start < 0:
            raise ValueError(f"negative start time {self.start}")
        if self.end < self.start:
            raise ValueError(f"end {self.end} before start {self.start}")

    @property
    def duration(self) -> float:
        return self.end - self.start


# Window-local notes may legitimately start before the window origin, so the
# sustained list bypasses Note's non-negative start check via this subclass.
@dataclass(frozen=True)
class _RebasableNote(Note):
    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0..127")
        if self.end < self.start:
            raise ValueError(f"end {self.end} before start {self.start}")


def _rebase(note: Note, offset: float) -> Note:
    start = note.start - offset
    kls = Note if start >= 0 else _RebasableNote
    return kls(
        start=start,
        pitch=note.pitch,
        end=note.end - offset,
        velocity=note.velocity,
        program=note.program,
        is_drum=note.is_drum,
    )


class NoteSequence:
    """An ordered set of notes with a total duration.

    Notes are canonicalized on construction: sorted by (start, pitch) with a
    stable full-field tiebreak. Instances are immutable; all transforms
    return new sequences.
    """

    __slots__ = ("notes", "total_duration", "source_id", "reference_bpm")

    def __init__(
        self,
        notes=(),
        total_duration: float | None = None,
        source_id: str = "",
        reference_bpm: float | None = None,
    ):
        ordered = tuple(
            sorted(notes, key=lambda n: (n.start, n.pitch, n.program, n.end, n.velocity))
        )
        max_end = max((n.end for n in ordered), default=0.0)
        if total_duration is None:
            total_duration = max_end
        elif total_duration < max_end:
            raise ValueError(
                f"total_duration {total_duration} shorter than last note end {max_end}"
            )
        object.__setattr__(self, "notes", ordered)
        object.__setattr__(self, "total_duration", float(total_duration))
        object.__setattr__(self, "source_id", source_id)
        object.__setattr__(self, "reference_bpm", reference_bpm)

    def __setattr__(self, name, value):
        raise AttributeError("NoteSequence is immutable")

    def __len__(self) -> int:
        return len(self.notes)

    def __iter__(self):
        return iter(self.notes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NoteSequence):
            return NotImplemented
        return (
            self.notes == other.notes
            and self.total_duration == other.total_duration
            and self.source_id == other.source_id
        )

    def __repr__(self) -> str:
        return (
            f"NoteSequence({len(self.notes)} notes, {self.total_duration:.3f}s,"
            f" source={self.source_id!r})"
        )

    def with_notes(self, notes, total_duration: float | None = None) -> "NoteSequence":
        return NoteSequence(
            notes,
            total_duration=total_duration,
            source_id=self.source_id,
            reference_bpm=self.reference_bpm,
        )


@dataclass(frozen=True)
class Window:
    """A fixed-length slice of a sequence with times re-based to its start.

    `notes` hold events starting inside the window (ends truncated at the
    window boundary); `sustained` holds notes already sounding when the
    window begins, keeping their true re-based start (< 0) and end.
    """

    offset: float
    length: float
    notes: tuple[Note, ...] = ()
    sustained: tuple[Note, ...] = ()

    def __post_init__(self):
        for n in self.notes:
            if not 0 <= n.start < self.length:
                raise ValueError(f"window note starts outside [0, {self.length}): {n}")
        for n in self.sustained:
            if not (n.start < 0 < n.end):
                raise ValueError(f"sustained note does not cross window start: {n}")


def segment(seq: NoteSequence, window_length: float = 10.0, hop: float | None = None) -> list[Window]:
    """Cut a sequence into windows covering [0, total_duration).

    A note crossing a window's end boundary is truncated there and re-appears
    in the sustained list of every later window it still sounds through.
    """
    if window_length <= 0:
        raise ValueError("window_length must be positive")
    if hop is None:
        hop = window_length
    if hop <= 0:
        raise ValueError("hop must be positive")
    if seq.total_duration <= 0 and not seq.notes:
        return []

    # a zero-duration sequence of zero-length notes still gets one window
    count = max(1, math.ceil(seq.total_duration / hop))
    # a zero-length note exactly at total_duration falls outside the half-open
    # span when the duration tiles the hop; it gets the window starting there
    last_start = seq.notes[-1].start if seq.notes else -1.0
    if last_start >= (count - 1) * hop + window_length and last_start >= count * hop:
        count += 1
    windows = []
    for k in range(count):
        off = k * hop
        end = off + window_length
        inside = []
        sustained = []
        for note in seq.notes:
            if note.start >= end:
                break
            if note.start >= off:
                local = _rebase(note, off)
                if local.end > window_length:
                    local = replace(local, end=window_length)
                inside.append(local)
            elif note.end > off:
                sustained.append(_rebase(note, off))
        windows.append(
            Window(offset=off, length=window_length, notes=tuple(inside), sustained=tuple(sustained))
        )
    return windows
