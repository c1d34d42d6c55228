"""Dataset registry, stage manifests, and the staged training schedule.

A registry file lists datasets with their curriculum stage; building a
stage manifest cuts each score into 10 s windows, tokenizes them, renders
the stage's prompt per window, and pairs every record with its target
audio interval. The schedule then walks manifests stage by stage, cycling
within a stage (reshuffling every epoch) until its step budget runs out.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .notes import Window, segment
from .prompts import PromptSpec, STAGE0_PROMPT, ratio_to_keyword, render_prompt
from .seeds import derive_seed
from .smf import parse_midi
from .tokenizer import encode

log = logging.getLogger(__name__)

STAGE_BUDGETS = {0: 20_000, 1: 10_000, 2: 15_000, 3: 4_000, 4: 10_000}
# the no-curriculum ablation trains on one merged pool for a flat budget
MERGED_BUDGET = 60_000

INPUT_KINDS = ("score", "performance")
TARGET_KINDS = ("synth_audio", "perf_audio", "synth_perf_audio")

# how close a sidecar alignment offset must sit to a window offset
_ALIGN_EPS = 1e-6


@dataclass(frozen=True)
class DatasetEntry:
    """One row of the dataset registry."""

    name: str
    stage: int
    input_kind: str
    target_kind: str
    instrumentation: str
    root_path: Path
    pair_index: Path
    weight: float = 1.0

    def __post_init__(self):
        if self.stage not in STAGE_BUDGETS:
            raise ValueError(f"{self.name}: stage {self.stage} outside 0..4")
        if self.input_kind not in INPUT_KINDS:
            raise ValueError(f"{self.name}: unknown input_kind {self.input_kind!r}")
        if self.target_kind not in TARGET_KINDS:
            raise ValueError(f"{self.name}: unknown target_kind {self.target_kind!r}")
        if self.weight <= 0:
            raise ValueError(f"{self.name}: weight must be positive")
        object.__setattr__(self, "root_path", Path(self.root_path))
        object.__setattr__(self, "pair_index", Path(self.pair_index))

    @property
    def needs_alignment(self) -> bool:
        return self.target_kind in ("perf_audio", "synth_perf_audio")


@dataclass(frozen=True)
class Pair:
    midi: str
    audio: str
    metadata: str | None = None


@dataclass(frozen=True)
class ManifestRecord:
    window_ref: str
    token_file: str
    prompt: str
    target_audio_ref: str
    perf_start: float
    perf_end: float
    stage: int


@dataclass(frozen=True)
class StageManifest:
    stage: int | None  # None for the merged no-curriculum pool
    step_budget: int
    records: tuple[ManifestRecord, ...]

    def __post_init__(self):
        if self.step_budget <= 0:
            raise ValueError(f"step_budget must be positive, got {self.step_budget}")
        object.__setattr__(self, "records", tuple(self.records))


def load_registry(path: str | os.PathLike) -> list[DatasetEntry]:
    """Read a registry JSON file and validate every pair index it names.

    Relative dataset paths resolve against the registry file's directory.
    """
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    rows = doc.get("datasets")
    if not isinstance(rows, list) or not rows:
        raise ValueError(f"{path}: registry must hold a non-empty 'datasets' list")
    base = path.parent
    entries = []
    for row in rows:
        try:
            entry = DatasetEntry(
                name=row["name"],
                stage=row["stage"],
                input_kind=row["input_kind"],
                target_kind=row["target_kind"],
                instrumentation=row.get("instrumentation", ""),
                root_path=base / row["root"],
                pair_index=base / row["pair_index"],
                weight=row.get("weight", 1.0),
            )
        except KeyError as missing:
            raise ValueError(f"{path}: registry row missing field {missing}") from None
        for pair in load_pairs(entry):
            for ref in (pair.midi, pair.audio, pair.metadata):
                if ref is not None and not (entry.root_path / ref).exists():
                    raise ValueError(f"{entry.name}: missing file {ref}")
        entries.append(entry)
    return entries


def load_pairs(entry: DatasetEntry) -> list[Pair]:
    """Read an entry's pair index, canonically sorted by MIDI path."""
    pairs = []
    with open(entry.pair_index) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            pairs.append(
                Pair(midi=row["midi"], audio=row["audio"], metadata=row.get("metadata"))
            )
    # manifest content must not depend on listing order
    pairs.sort(key=lambda p: p.midi)
    return pairs


def _load_metadata(entry: DatasetEntry, pair: Pair) -> dict:
    if pair.metadata is None:
        return {}
    with open(entry.root_path / pair.metadata) as fh:
        return json.load(fh)


def _alignment_for(metadata: dict, offset: float) -> tuple[float, float] | None:
    for row in metadata.get("alignment", ()):
        score_offset, perf_start, perf_end = row
        if abs(score_offset - offset) <= _ALIGN_EPS:
            return float(perf_start), float(perf_end)
    return None


def _prompt_spec(
    entry: DatasetEntry, metadata: dict, stage: int, keyword: str | None
) -> PromptSpec:
    sonification = "performance" if entry.input_kind == "performance" else "synthesis"
    common = {
        "title": metadata.get("title"),
        "composer": metadata.get("composer"),
        "instrumentation": entry.instrumentation or None,
    }
    if stage == 0:
        return PromptSpec(sonification="synthesis", stage=0)
    if stage == 3:
        return PromptSpec(
            sonification=sonification, stage=3, speed_keyword=keyword,
            mistake=True, **common,
        )
    if stage == 4:
        return PromptSpec(
            sonification=sonification, stage=4, speed_keyword=keyword,
            performer=metadata.get("performer"),
            expression_label=metadata.get("expression"),
            **common,
        )
    return PromptSpec(
        sonification=sonification, stage=stage, speed_keyword=keyword, **common
    )


def _apply_weight(records: list, weight: float, rng) -> list:
    if weight == 1.0 or not records:
        return records
    target = max(1, int(round(weight * len(records))))
    if target <= len(records):
        picked = rng.choice(len(records), size=target, replace=False)
        return [records[i] for i in sorted(picked)]
    whole, extra = divmod(target, len(records))
    picked = rng.choice(len(records), size=extra, replace=False)
    return records * whole + [records[i] for i in sorted(picked)]


def build_manifest(
    registry: list[DatasetEntry],
    stage: int,
    seed: int,
    out_dir: str | os.PathLike,
    window_length: float = 10.0,
    dropout: float = 0.5,
) -> StageManifest:
    """Cut, tokenize, and prompt every pair of a stage into a manifest.

    Token streams are written under ``out_dir``. Performance-target pairs
    need a sidecar alignment per window (score offset mapped to an audio
    interval); windows without one are skipped with a warning. The
    performance/score duration ratio picks the speed keyword. Records are
    shuffled by ``seed``.
    """
    if stage not in STAGE_BUDGETS:
        raise ValueError(f"stage {stage} outside 0..4")
    entries = [e for e in registry if e.stage == stage]
    if not entries:
        raise ValueError(f"registry has no datasets for stage {stage}")
    out_dir = Path(out_dir)
    records: list[ManifestRecord] = []
    for entry in sorted(entries, key=lambda e: e.name):
        entry_records = []
        for pair in load_pairs(entry):
            metadata = _load_metadata(entry, pair)
            seq = parse_midi(
                (entry.root_path / pair.midi).read_bytes(), source_id=pair.midi
            )
            for k, window in enumerate(segment(seq, window_length)):
                ref = f"{entry.name}/{pair.midi}#{k}"
                if entry.needs_alignment:
                    interval = _alignment_for(metadata, window.offset)
                    if interval is None:
                        log.warning("%s: no alignment for window %d, skipped", ref, k)
                        continue
                    perf_start, perf_end = interval
                else:
                    perf_start = window.offset
                    perf_end = window.offset + window_length
                ratio = (perf_end - perf_start) / window_length
                keyword = (
                    ratio_to_keyword(ratio, derive_seed(seed, ref, "keyword"))
                    if stage >= 1
                    else None
                )
                prompt = render_prompt(
                    _prompt_spec(entry, metadata, stage, keyword),
                    dropout=dropout,
                    rng_seed=derive_seed(seed, ref, "prompt"),
                )
                token_file = _write_tokens(out_dir, entry, pair, k, window)
                entry_records.append(
                    ManifestRecord(
                        window_ref=ref,
                        token_file=token_file,
                        prompt=prompt,
                        target_audio_ref=f"{entry.name}/{pair.audio}",
                        perf_start=perf_start,
                        perf_end=perf_end,
                        stage=stage,
                    )
                )
        rng = np.random.default_rng(derive_seed(seed, entry.name, "weight"))
        records.extend(_apply_weight(entry_records, entry.weight, rng))
    if not records:
        raise ValueError(f"stage {stage}: no usable windows in any dataset")
    order = np.random.default_rng(seed).permutation(len(records))
    return StageManifest(
        stage=stage,
        step_budget=STAGE_BUDGETS[stage],
        records=tuple(records[i] for i in order),
    )


def _write_tokens(
    out_dir: Path, entry: DatasetEntry, pair: Pair, k: int, window: Window
) -> str:
    stem = Path(pair.midi).stem
    rel = Path("tokens") / entry.name / f"{stem}_w{k:04d}.tok"
    target = out_dir / rel
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode(window).to_bytes())
    return str(rel)


def merge_manifests(
    manifests: list[StageManifest], step_budget: int = MERGED_BUDGET
) -> StageManifest:
    """Pool several manifests into one stageless manifest (no-curriculum)."""
    if not manifests:
        raise ValueError("nothing to merge")
    records = tuple(r for m in manifests for r in m.records)
    return StageManifest(stage=None, step_budget=step_budget, records=records)


def schedule(manifests: list[StageManifest], seed: int = 0):
    """Yield (step_index, record) pairs stage by stage.

    Within a stage, records cycle in seeded shuffled order, reshuffled
    each epoch, until the stage's step budget is exhausted; stages never
    interleave. Total steps = sum of budgets.
    """
    stages = [m.stage for m in manifests if m.stage is not None]
    if stages != sorted(stages):
        raise ValueError("manifests must be ordered by stage")
    if len(set(stages)) != len(stages):
        raise ValueError("duplicate stage in schedule")
    step = 0
    for manifest in manifests:
        if not manifest.records:
            raise ValueError(f"stage {manifest.stage}: empty manifest cannot cycle")
        rng = np.random.default_rng(derive_seed(seed, f"stage:{manifest.stage}"))
        emitted = 0
        while emitted < manifest.step_budget:
            for i in rng.permutation(len(manifest.records)):
                if emitted == manifest.step_budget:
                    break
                yield step, manifest.records[int(i)]
                step += 1
                emitted += 1


def write_manifest(manifest: StageManifest, path: str | os.PathLike) -> None:
    """Write records as JSON lines plus a small .meta.json sidecar."""
    path = Path(path)
    with open(path, "w") as fh:
        for record in manifest.records:
            fh.write(json.dumps(asdict(record)) + "\n")
    meta = {
        "stage": manifest.stage,
        "step_budget": manifest.step_budget,
        "record_count": len(manifest.records),
    }
    with open(path.with_suffix(".meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def read_manifest(path: str | os.PathLike) -> StageManifest:
    path = Path(path)
    with open(path.with_suffix(".meta.json")) as fh:
        meta = json.load(fh)
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(ManifestRecord(**json.loads(line)))
    return StageManifest(
        stage=meta["stage"], step_budget=meta["step_budget"], records=tuple(records)
    )
