"""Standard MIDI File (format 0 and 1) reading and writing.

Tick arithmetic stays in exact integers until the final division into
seconds, so long files with many tempo changes accumulate no drift.
"""

from __future__ import annotations

from bisect import bisect_right

from .notes import Note, NoteSequence

DEFAULT_TEMPO_US = 500_000  # microseconds per quarter note, per the SMF standard

_DRUM_CHANNEL = 9

_EV_OFF, _EV_ON, _EV_PROGRAM = 0, 1, 2

# writer byte order for events sharing a tick: tempo and program changes
# first, then offs, so a note ending where its successor begins closes before
# the new onset; a zero-length note keeps its own off after its on
_RANK_TEMPO = 0
_RANK_PROGRAM = 1
_RANK_OFF = 2
_RANK_ON = 3
_RANK_ZERO_LEN_OFF = 4


class MidiParseError(ValueError):
    """Malformed SMF data; `offset` is the failing position in the buffer."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(MidiParseError):
    """Well-formed SMF the reader does not handle (format 2, SMPTE division)."""


class _Cursor:
    """Bounds-checked byte reader over one track chunk."""

    __slots__ = ("data", "pos", "limit")

    def __init__(self, data: bytes, pos: int, limit: int):
        self.data = data
        self.pos = pos
        self.limit = limit

    def u8(self) -> int:
        if self.pos >= self.limit:
            raise MidiParseError("track data ends mid-event", self.pos)
        value = self.data[self.pos]
        self.pos += 1
        return value

    def take(self, count: int) -> bytes:
        if self.pos + count > self.limit:
            raise MidiParseError("track data ends mid-event", self.pos)
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def varlen(self) -> int:
        value = 0
        for _ in range(4):
            byte = self.u8()
            value = (value << 7) | (byte & 0x7F)
            if not byte & 0x80:
                return value
        raise MidiParseError("variable-length quantity exceeds 4 bytes", self.pos)

    def data_byte(self) -> int:
        byte = self.u8()
        if byte & 0x80:
            raise MidiParseError(
                f"expected data byte, found status 0x{byte:02X}", self.pos - 1
            )
        return byte


def _parse_track(data: bytes, start: int, limit: int):
    """Collect channel events and tempo changes from one MTrk payload.

    Returns (events, tempos, end_tick) with events in stream order as
    (tick, kind, data_a, data_b, channel) tuples.
    """
    cur = _Cursor(data, start, limit)
    tick = 0
    running: int | None = None
    events = []
    tempos = []
    while cur.pos < cur.limit:
        tick += cur.varlen()
        first = cur.u8()
        if first < 0x80:
            if running is None:
                raise MidiParseError("data byte with no running status", cur.pos - 1)
            status = running
            data_a = first
        else:
            status = first
            data_a = None

        if status == 0xFF:
            running = None
            meta_type = cur.u8()
            payload = cur.take(cur.varlen())
            if meta_type == 0x51:
                if len(payload) != 3:
                    raise MidiParseError(
                        f"tempo event with length {len(payload)}", cur.pos
                    )
                tempos.append((tick, int.from_bytes(payload, "big")))
            elif meta_type == 0x2F:
                break
        elif status in (0xF0, 0xF7):
            running = None
            cur.take(cur.varlen())
        elif status >= 0xF0:
            raise MidiParseError(
                f"unsupported system message 0x{status:02X}", cur.pos - 1
            )
        else:
            running = status
            kind = status & 0xF0
            channel = status & 0x0F
            a = cur.data_byte() if data_a is None else data_a
            b = cur.data_byte() if kind not in (0xC0, 0xD0) else 0
            if kind == 0x90 and b > 0:
                events.append((tick, _EV_ON, a, b, channel))
            elif kind == 0x80 or kind == 0x90:
                events.append((tick, _EV_OFF, a, 0, channel))
            elif kind == 0xC0:
                events.append((tick, _EV_PROGRAM, a, 0, channel))
            # control change, aftertouch, and pitch bend are ignored
    return events, tempos, tick


class _TempoMap:
    """Piecewise tick-to-seconds conversion.

    Segment sums are kept as exact integer tick-microsecond products; the
    single floating division happens per query.
    """

    def __init__(self, tempos, ppq: int):
        ticks = [0]
        values = [DEFAULT_TEMPO_US]
        for tick, tempo in tempos:
            if tick == ticks[-1]:
                values[-1] = tempo
            else:
                ticks.append(tick)
                values.append(tempo)
        cumulative = [0]
        for i in range(1, len(ticks)):
            cumulative.append(
                cumulative[-1] + (ticks[i] - ticks[i - 1]) * values[i - 1]
            )
        self._ticks = ticks
        self._values = values
        self._cumulative = cumulative
        self._denominator = ppq * 1_000_000

    def seconds(self, tick: int) -> float:
        i = bisect_right(self._ticks, tick) - 1
        numerator = self._cumulative[i] + (tick - self._ticks[i]) * self._values[i]
        return numerator / self._denominator


def parse_midi(data: bytes, source_id: str = "") -> NoteSequence:
    """Parse an SMF byte buffer (format 0 or 1) into a NoteSequence.

    Overlapping same-pitch notes on one channel truncate the earlier note at
    the later onset. Channel 10 notes are flagged is_drum. The sequence's
    reference_bpm comes from the first tempo event, or None without one.
    """
    if len(data) < 14 or data[0:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    header_len = int.from_bytes(data[4:8], "big")
    if header_len < 6:
        raise MidiParseError(f"header chunk length {header_len} < 6", 4)
    if 8 + header_len > len(data):
        raise MidiParseError("truncated header chunk", 8)
    fmt = int.from_bytes(data[8:10], "big")
    n_tracks = int.from_bytes(data[10:12], "big")
    division = int.from_bytes(data[12:14], "big")
    if fmt not in (0, 1):
        raise UnsupportedFormatError(f"SMF format {fmt} is not supported", 8)
    if fmt == 0 and n_tracks != 1:
        raise MidiParseError(f"format 0 file declares {n_tracks} tracks", 10)
    if division & 0x8000:
        raise UnsupportedFormatError("SMPTE time division is not supported", 12)
    if division == 0:
        raise MidiParseError("zero ticks-per-quarter division", 12)

    pos = 8 + header_len
    spans = []
    while pos < len(data) and len(spans) < n_tracks:
        if pos + 8 > len(data):
            raise MidiParseError("truncated chunk header", pos)
        chunk_type = data[pos : pos + 4]
        chunk_len = int.from_bytes(data[pos + 4 : pos + 8], "big")
        body = pos + 8
        if body + chunk_len > len(data):
            raise MidiParseError("truncated track chunk", pos)
        if chunk_type == b"MTrk":
            spans.append((body, body + chunk_len))
        pos = body + chunk_len
    if len(spans) != n_tracks:
        raise MidiParseError(
            f"header declares {n_tracks} tracks, found {len(spans)}", pos
        )

    # merge by (tick, track); the stable sort keeps each track's stream order,
    # which is the authoritative order for events sharing a tick
    merged = []
    tempos = []
    end_tick = 0
    for index, (body, limit) in enumerate(spans):
        events, track_tempos, track_end = _parse_track(data, body, limit)
        merged.extend((tick, index, kind, a, b, ch) for tick, kind, a, b, ch in events)
        tempos.extend((tick, index, tempo) for tick, tempo in track_tempos)
        end_tick = max(end_tick, track_end)
    merged.sort(key=lambda ev: ev[:2])
    tempos.sort(key=lambda ev: ev[:2])

    programs = [0] * 16
    open_notes: dict[tuple[int, int], tuple[int, int, int]] = {}
    raw = []
    for tick, _, kind, a, b, channel in merged:
        if kind == _EV_PROGRAM:
            programs[channel] = a
        elif kind == _EV_ON:
            key = (channel, a)
            held = open_notes.pop(key, None)
            if held is not None:
                raw.append((*held, tick, a, channel))
            open_notes[key] = (tick, b, programs[channel])
        else:
            held = open_notes.pop((channel, a), None)
            if held is not None:
                raw.append((*held, tick, a, channel))
    for (channel, pitch), held in open_notes.items():
        raw.append((*held, max(end_tick, held[0]), pitch, channel))

    tempo_map = _TempoMap([(tick, tempo) for tick, _, tempo in tempos], division)
    notes = [
        Note(
            start=tempo_map.seconds(start_tick),
            pitch=pitch,
            end=tempo_map.seconds(off_tick),
            velocity=velocity,
            program=program,
            is_drum=channel == _DRUM_CHANNEL,
        )
        for start_tick, velocity, program, off_tick, pitch, channel in raw
    ]
    reference_bpm = 60_000_000 / tempos[0][2] if tempos else None
    return NoteSequence(notes, source_id=source_id, reference_bpm=reference_bpm)


def _encode_varlen(value: int) -> bytes:
    if not 0 <= value <= 0x0FFF_FFFF:
        raise ValueError(f"delta {value} outside variable-length range")
    out = bytearray([value & 0x7F])
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    out.reverse()
    return bytes(out)


def write_midi(seq: NoteSequence, ppq: int = 480, tempo_us: int = DEFAULT_TEMPO_US) -> bytes:
    """Serialize a NoteSequence as a single-track format 0 SMF.

    Times quantize to the tick grid (round to nearest). Each program gets its
    own channel, drums channel 10; more than 15 distinct melodic programs is
    an error, as is a velocity-0 note (it would read back as a note off).
    """
    if not 0 < ppq <= 0x7FFF:
        raise ValueError(f"ppq {ppq} outside 1..32767")
    if not 0 < tempo_us <= 0xFF_FFFF:
        raise ValueError(f"tempo {tempo_us} outside 24-bit range")

    melodic = [c for c in range(16) if c != _DRUM_CHANNEL]
    channel_for: dict[int, int] = {}
    drum_program: int | None = None
    events = [(0, _RANK_TEMPO, bytes([0xFF, 0x51, 0x03]) + tempo_us.to_bytes(3, "big"))]
    for note in seq.notes:
        if note.velocity == 0:
            raise ValueError("velocity-0 note cannot be written as a note on")
        start = round(note.start * ppq * 1_000_000 / tempo_us)
        end = round(note.end * ppq * 1_000_000 / tempo_us)
        if note.is_drum:
            channel = _DRUM_CHANNEL
            if note.program != drum_program:
                drum_program = note.program
                events.append(
                    (start, _RANK_PROGRAM, bytes([0xC0 | channel, note.program]))
                )
        else:
            channel = channel_for.get(note.program)
            if channel is None:
                if len(channel_for) >= len(melodic):
                    raise ValueError("more than 15 distinct melodic programs")
                channel = melodic[len(channel_for)]
                channel_for[note.program] = channel
                events.append((0, _RANK_PROGRAM, bytes([0xC0 | channel, note.program])))
        off_rank = _RANK_ZERO_LEN_OFF if end == start else _RANK_OFF
        events.append((start, _RANK_ON, bytes([0x90 | channel, note.pitch, note.velocity])))
        events.append((end, off_rank, bytes([0x80 | channel, note.pitch, 0])))

    events.sort(key=lambda ev: ev[:2])
    body = bytearray()
    tick = 0
    for event_tick, _, message in events:
        body += _encode_varlen(event_tick - tick)
        body += message
        tick = event_tick
    body += b"\x00\xff\x2f\x00"

    header = b"MThd" + (6).to_bytes(4, "big")
    header += (0).to_bytes(2, "big") + (1).to_bytes(2, "big") + ppq.to_bytes(2, "big")
    return header + b"MTrk" + len(body).to_bytes(4, "big") + bytes(body)
