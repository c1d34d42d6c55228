"""Speed and mistake augmentation of note sequences.

Speed tiers carry the prompt keyword table; mistake corruption follows the
per-note pipeline mistouch -> asynchrony -> substitution -> ghost, then
removes one short time block per five-second span.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .notes import Note, NoteSequence


@dataclass(frozen=True)
class SpeedTier:
    """A named duration-ratio range (> 1 plays slower) with prompt keywords."""

    name: str
    ratio_range: tuple[float, float]
    keywords: tuple[str, ...]


# ordered slowest to fastest; adjacent ranges share their boundary
SPEED_TIERS = (
    SpeedTier(
        "VerySlow",
        (1.8, 2.2),
        ("Twice as slow as", "Significantly slower", "About half the speed of"),
    ),
    SpeedTier("Slow", (1.5, 1.8), ("Considerably slower", "Moving slower")),
    SpeedTier(
        "SlightlySlow",
        (1.2, 1.5),
        (
            "A bit slower than score",
            "Just under the score’s pace",
            "Slightly behind the intended pace",
        ),
    ),
    SpeedTier(
        "Neutral",
        (0.8, 1.2),
        ("At the original speed", "In line with the score’s tempo"),
    ),
    SpeedTier(
        "SlightlyFast",
        (0.6, 0.8),
        ("A bit faster", "Just above the score’s speed", "Slightly faster than score"),
    ),
    SpeedTier("Fast", (0.4, 0.6), ("Notably faster", "Well beyond the original tempo")),
)

TIER_BY_NAME = {tier.name: tier for tier in SPEED_TIERS}


def stretch(seq: NoteSequence, ratio: float) -> NoteSequence:
    """Scale every note time and the total duration by `ratio`.

    Pitches, velocities and programs are untouched. A known reference tempo
    scales by 1/ratio so the stretched sequence stays self-consistent.
    """
    if ratio <= 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    notes = [replace(n, start=n.start * ratio, end=n.end * ratio) for n in seq.notes]
    bpm = None if seq.reference_bpm is None else seq.reference_bpm / ratio
    return NoteSequence(
        notes,
        total_duration=seq.total_duration * ratio,
        source_id=seq.source_id,
        reference_bpm=bpm,
    )


def sample_speed_augmentation(
    seq: NoteSequence, tier: SpeedTier, rng_seed: int
) -> tuple[NoteSequence, float, str]:
    """Stretch by a ratio drawn from the tier; also pick one of its keywords."""
    rng = np.random.default_rng(rng_seed)
    low, high = tier.ratio_range
    ratio = float(rng.uniform(low, high))
    keyword = tier.keywords[int(rng.integers(len(tier.keywords)))]
    return stretch(seq, ratio), ratio, keyword


@dataclass(frozen=True)
class MistakeConfig:
    p_mistouch: float = 0.05
    p_async: float = 0.2
    p_subst: float = 0.05
    p_ghost: float = 0.05
    async_shift: tuple[float, float] = (-0.7, 0.7)
    mistouch_onset_delay: tuple[float, float] = (0.02, 0.1)
    mistouch_duration: tuple[float, float] = (0.1, 0.3)
    mistouch_velocity_scale: float = 0.8
    block_period: float = 5.0
    block_length: tuple[float, float] = (0.2, 0.5)
    seed: int = 0

    def __post_init__(self):
        for name in ("p_mistouch", "p_async", "p_subst", "p_ghost"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        for name in (
            "async_shift",
            "mistouch_onset_delay",
            "mistouch_duration",
            "block_length",
        ):
            low, high = getattr(self, name)
            if not low < high:
                raise ValueError(f"{name} interval {low}..{high} is empty")
        if self.block_period <= 0:
            raise ValueError("block_period must be positive")


@dataclass
class MistakeReport:
    """Per-type mistake counts plus the sampled removal intervals."""

    mistouch: int = 0
    asynchrony: int = 0
    substitution: int = 0
    ghost: int = 0
    pitch_flips: int = 0
    block_removed: int = 0
    removed_intervals: list[tuple[float, float]] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"mistouch: {self.mistouch}",
            f"asynchrony: {self.asynchrony}",
            f"substitution: {self.substitution}",
            f"ghost: {self.ghost}",
            f"pitch_flips: {self.pitch_flips}",
            f"block_removed: {self.block_removed}",
            "intervals: "
            + " ".join(f"{a:.6f}..{b:.6f}" for a, b in self.removed_intervals),
        ]
        return "\n".join(lines)


def _neighbor_pitch(pitch: int, direction: int, report: MistakeReport) -> int:
    candidate = pitch + direction
    if not 0 <= candidate <= 127:
        candidate = pitch - direction
        report.pitch_flips += 1
    return candidate


def corrupt(
    seq: NoteSequence, cfg: MistakeConfig = MistakeConfig()
) -> tuple[NoteSequence, MistakeReport]:
    """Apply seeded mistake augmentation to a whole sequence.

    Per note, in input order: maybe insert a mistouch neighbor, maybe shift
    the note (clamped to start >= 0, end >= start), maybe substitute the
    pitch by a semitone, maybe ghost it away. Inserted notes are not
    themselves corrupted. Afterwards one removal interval is sampled per
    block_period span of the original duration and every note whose current
    start falls inside it is dropped.
    """
    rng = np.random.default_rng(cfg.seed)
    report = MistakeReport()
    kept = []
    for note in seq.notes:
        if rng.random() < cfg.p_mistouch:
            direction = 1 if rng.random() < 0.5 else -1
            pitch = _neighbor_pitch(note.pitch, direction, report)
            velocity = min(max(round(cfg.mistouch_velocity_scale * note.velocity), 1), 127)
            start = note.start + float(rng.uniform(*cfg.mistouch_onset_delay))
            end = start + float(rng.uniform(*cfg.mistouch_duration))
            kept.append(
                Note(
                    start=start,
                    pitch=pitch,
                    end=end,
                    velocity=velocity,
                    program=note.program,
                    is_drum=note.is_drum,
                )
            )
            report.mistouch += 1
        current = note
        if rng.random() < cfg.p_async:
            shift = float(rng.uniform(*cfg.async_shift))
            start = max(current.start + shift, 0.0)
            end = max(current.end + shift, start)
            current = replace(current, start=start, end=end)
            report.asynchrony += 1
        if rng.random() < cfg.p_subst:
            direction = 1 if rng.random() < 0.5 else -1
            current = replace(
                current, pitch=_neighbor_pitch(current.pitch, direction, report)
            )
            report.substitution += 1
        if rng.random() < cfg.p_ghost:
            report.ghost += 1
            continue
        kept.append(current)

    blocks = math.floor(seq.total_duration / cfg.block_period)
    survivors = kept
    for k in range(blocks + 1):
        t_start = k * cfg.block_period + float(rng.uniform(0.0, cfg.block_period))
        t_end = t_start + float(rng.uniform(*cfg.block_length))
        report.removed_intervals.append((t_start, t_end))
        before = len(survivors)
        survivors = [n for n in survivors if not t_start <= n.start < t_end]
        report.block_removed += before - len(survivors)

    max_end = max((n.end for n in survivors), default=0.0)
    out = NoteSequence(
        survivors,
        total_duration=max(seq.total_duration, max_end),
        source_id=seq.source_id,
        reference_bpm=seq.reference_bpm,
    )
    return out, report
