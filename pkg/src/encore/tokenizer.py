"""MIDI-Like token encoding of note windows.

The vocabulary is 772 IDs: 128 instrument, 128 note, 2 on/off, 512 time,
one end-tie marker, one EOS. Instrument and on/off tokens are state-change
encoded; time tokens are absolute within the window. A stream opens with a
tie section naming the notes already sounding at the window start.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from .notes import Note, Window, _RebasableNote

N_INSTRUMENT = 128
N_NOTE = 128
N_ONOFF = 2
TIME_STEPS = 512

_MAGIC = b"ENTK"
_VERSION = 1
_HEADER = struct.Struct("<4sHHII")  # magic, version, vocab size, window ms, reserved

DECODE_VELOCITY = 100  # velocity is not tokenized; decoded notes all get this


class TokenError(ValueError):
    pass


class EncodeError(TokenError):
    pass


class DecodeError(TokenError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Token-ID layout. Ranges must be contiguous and disjoint."""

    instrument_offset: int = 0
    note_offset: int = N_INSTRUMENT
    onoff_offset: int = N_INSTRUMENT + N_NOTE
    time_offset: int = N_INSTRUMENT + N_NOTE + N_ONOFF
    end_tie_id: int = N_INSTRUMENT + N_NOTE + N_ONOFF + TIME_STEPS
    eos_id: int = N_INSTRUMENT + N_NOTE + N_ONOFF + TIME_STEPS + 1
    total_size: int = N_INSTRUMENT + N_NOTE + N_ONOFF + TIME_STEPS + 2

    def __post_init__(self):
        expected = (
            self.instrument_offset,
            self.instrument_offset + N_INSTRUMENT,
            self.instrument_offset + N_INSTRUMENT + N_NOTE,
            self.instrument_offset + N_INSTRUMENT + N_NOTE + N_ONOFF,
            self.instrument_offset + N_INSTRUMENT + N_NOTE + N_ONOFF + TIME_STEPS,
            self.instrument_offset + N_INSTRUMENT + N_NOTE + N_ONOFF + TIME_STEPS + 1,
        )
        got = (
            self.instrument_offset,
            self.note_offset,
            self.onoff_offset,
            self.time_offset,
            self.end_tie_id,
            self.eos_id,
        )
        if got != expected:
            raise ValueError(f"vocabulary ranges not contiguous: {got} != {expected}")
        if self.total_size != self.eos_id - self.instrument_offset + 1:
            raise ValueError(f"total_size {self.total_size} does not cover the ranges")

    @property
    def off_id(self) -> int:
        return self.onoff_offset

    @property
    def on_id(self) -> int:
        return self.onoff_offset + 1

    def describe(self, token: int) -> tuple[str, int]:
        """Classify a token ID as (kind, value)."""
        if self.instrument_offset <= token < self.note_offset:
            return "instrument", token - self.instrument_offset
        if self.note_offset <= token < self.onoff_offset:
            return "note", token - self.note_offset
        if self.onoff_offset <= token < self.time_offset:
            return "onoff", token - self.onoff_offset
        if self.time_offset <= token < self.end_tie_id:
            return "time", token - self.time_offset
        if token == self.end_tie_id:
            return "end_tie", 0
        if token == self.eos_id:
            return "eos", 0
        raise DecodeError(f"token {token} outside vocabulary")


DEFAULT_VOCABULARY = Vocabulary()


def time_resolution(window_length: float) -> float:
    """Seconds per time step: the window length divided over 512 steps."""
    return window_length / TIME_STEPS


@dataclass(frozen=True)
class TokenStream:
    """One window's token IDs plus the window length they quantize against."""

    tokens: tuple[int, ...]
    window_length: float

    def __len__(self) -> int:
        return len(self.tokens)

    def to_bytes(self) -> bytes:
        """Header (magic, version, vocab size, window ms) + u16 LE token body."""
        window_ms = round(self.window_length * 1000)
        header = _HEADER.pack(_MAGIC, _VERSION, DEFAULT_VOCABULARY.total_size, window_ms, 0)
        return header + np.asarray(self.tokens, dtype="<u2").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "TokenStream":
        if len(data) < _HEADER.size:
            raise DecodeError("token buffer shorter than header")
        magic, version, vocab_size, window_ms, _ = _HEADER.unpack_from(data)
        if magic != _MAGIC:
            raise DecodeError(f"bad magic {magic!r}")
        if version != _VERSION:
            raise DecodeError(f"unsupported token format version {version}")
        if vocab_size != DEFAULT_VOCABULARY.total_size:
            raise DecodeError(f"vocabulary size {vocab_size} not supported")
        body = data[_HEADER.size :]
        if len(body) % 2:
            raise DecodeError("token body has odd byte length")
        tokens = tuple(int(t) for t in np.frombuffer(body, dtype="<u2"))
        if any(t >= vocab_size for t in tokens):
            raise DecodeError("token ID outside declared vocabulary")
        return cls(tokens=tokens, window_length=window_ms / 1000)

    def dump(self, vocab: Vocabulary = DEFAULT_VOCABULARY) -> str:
        """Human-readable one-token-per-line rendering."""
        names = {"end_tie": "EndTie", "eos": "EOS"}
        lines = []
        for token in self.tokens:
            kind, value = vocab.describe(token)
            if kind == "onoff":
                lines.append("On" if value else "Off")
            elif kind in names:
                lines.append(names[kind])
            else:
                lines.append(f"{kind.capitalize()}({value})")
        return "\n".join(lines)


def encode(window: Window, vocab: Vocabulary = DEFAULT_VOCABULARY) -> TokenStream:
    """Tokenize a window.

    Events sharing a quantized time sort Off before On, then by program and
    pitch. A note whose end quantizes past the last step carries no Off; the
    decoder closes it at the window end. A note quantized to zero length is
    stretched to one step so its Off stays after its On.
    """
    res = time_resolution(window.length)
    tokens = []
    program = None
    onoff = None

    for note in sorted(window.sustained, key=lambda n: (n.program, n.pitch)):
        if note.program != program:
            tokens.append(vocab.instrument_offset + note.program)
            program = note.program
        tokens.append(vocab.note_offset + note.pitch)
    tokens.append(vocab.end_tie_id)

    events = []
    for note in window.notes:
        if not 0 <= note.start < window.length:
            raise EncodeError(f"note starts outside the window: {note}")
        q_start = min(round(note.start / res), TIME_STEPS - 1)
        q_end = max(round(note.end / res), q_start + 1)
        events.append((q_start, 1, note.program, note.pitch))
        if q_end < TIME_STEPS:
            events.append((q_end, 0, note.program, note.pitch))
    for note in window.sustained:
        if note.end <= 0:
            raise EncodeError(f"sustained note ends before the window: {note}")
        q_end = max(round(note.end / res), 1)
        if q_end < TIME_STEPS:
            events.append((q_end, 0, note.program, note.pitch))
    events.sort()

    time = None
    for q_time, is_on, note_program, pitch in events:
        if q_time != time:
            tokens.append(vocab.time_offset + q_time)
            time = q_time
        if note_program != program:
            tokens.append(vocab.instrument_offset + note_program)
            program = note_program
        if is_on != onoff:
            tokens.append(vocab.onoff_offset + is_on)
            onoff = is_on
        tokens.append(vocab.note_offset + pitch)
    tokens.append(vocab.eos_id)
    return TokenStream(tokens=tuple(tokens), window_length=window.length)


def decode(
    stream: TokenStream,
    vocab: Vocabulary = DEFAULT_VOCABULARY,
    strict: bool = True,
    warnings: list | None = None,
) -> Window:
    """Rebuild a window from tokens; times land on the quantization grid.

    Offs match the oldest open note of the same program and pitch, so nested
    same-pitch overlaps decode with their ends exchanged (the stream cannot
    distinguish them). Tie-section notes get a start one step before zero.
    With strict=False, recoverable problems are skipped and described in the
    `warnings` list when one is passed.
    """
    res = time_resolution(stream.window_length)

    def problem(message: str):
        if strict:
            raise DecodeError(message)
        if warnings is not None:
            warnings.append(message)

    program = 0
    time = 0.0
    onoff = None
    in_tie = True
    saw_program = False
    saw_time = False
    ended = False
    open_notes: dict[tuple[int, int], deque] = {}
    sustained_open: dict[tuple[int, int], deque] = {}
    notes = []
    sustained = []

    def close(key, end, table):
        queue = table.get(key)
        if not queue:
            return False
        start = queue.popleft()
        if table is sustained_open and end <= 0:
            problem("sustained note closed at the window start")
            end = res / 2
        note_cls = Note if start >= 0 else _RebasableNote
        notes_list = notes if table is open_notes else sustained
        notes_list.append(
            note_cls(
                start=start,
                pitch=key[1],
                end=max(end, start),
                velocity=DECODE_VELOCITY,
                program=key[0],
            )
        )
        return True

    for position, token in enumerate(stream.tokens):
        kind, value = vocab.describe(token)
        if ended:
            problem(f"token {position} follows EOS")
            break
        if kind == "eos":
            ended = True
        elif kind == "end_tie":
            if not in_tie:
                problem(f"second end-tie marker at token {position}")
            in_tie = False
        elif kind == "instrument":
            program = value
            saw_program = True
        elif kind == "time":
            if in_tie:
                problem(f"time token inside tie section at token {position}")
                continue
            new_time = value * res
            if saw_time and new_time < time:
                problem(f"time decreases at token {position}")
            time = new_time
            saw_time = True
        elif kind == "onoff":
            if in_tie:
                problem(f"on/off token inside tie section at token {position}")
                continue
            onoff = value
        else:  # note
            if not saw_program:
                problem(f"note before any instrument token at token {position}")
            key = (program, value)
            if in_tie:
                sustained_open.setdefault(key, deque()).append(-res)
            else:
                if not saw_time:
                    problem(f"note before any time token at token {position}")
                    continue
                if onoff is None:
                    problem(f"note before any on/off token at token {position}")
                    continue
                if onoff == 1:
                    open_notes.setdefault(key, deque()).append(time)
                elif not close(key, time, sustained_open) and not close(
                    key, time, open_notes
                ):
                    problem(f"off for a silent note at token {position}")
    if in_tie:
        problem("stream has no end-tie marker")
    if not ended:
        problem("stream does not end with EOS")

    for key, queue in open_notes.items():
        while queue:
            close(key, stream.window_length, open_notes)
    for key, queue in sustained_open.items():
        while queue:
            close(key, stream.window_length, sustained_open)

    order = lambda n: (n.start, n.pitch, n.program, n.end)
    return Window(
        offset=0.0,
        length=stream.window_length,
        notes=tuple(sorted(notes, key=order)),
        sustained=tuple(sorted(sustained, key=order)),
    )
