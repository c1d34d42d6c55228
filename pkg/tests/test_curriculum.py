import json
import logging

import numpy as np
import pytest

from encore.augment import SPEED_TIERS
from encore.curriculum import (
    MERGED_BUDGET,
    STAGE_BUDGETS,
    DatasetEntry,
    ManifestRecord,
    StageManifest,
    build_manifest,
    load_registry,
    merge_manifests,
    read_manifest,
    schedule,
    write_manifest,
)
from encore.notes import Note, NoteSequence
from encore.seeds import derive_seed
from encore.smf import write_midi
from encore.tokenizer import TokenStream

SLOW_KEYWORDS = next(t for t in SPEED_TIERS if t.name == "Slow").keywords


def _midi_bytes(seconds=25.0):
    notes = [
        Note(0.5 * k, 60 + k % 12, 0.5 * k + 0.25) for k in range(int(seconds * 2))
    ]
    return write_midi(NoteSequence(notes, total_duration=seconds))


def _dataset(root, name, *, pairs, **registry_row):
    """Create one dataset directory and return its registry row."""
    droot = root / name
    droot.mkdir()
    index_lines = []
    for stem, meta in pairs:
        (droot / f"{stem}.mid").write_bytes(_midi_bytes())
        (droot / f"{stem}.wav").touch()
        row = {"midi": f"{stem}.mid", "audio": f"{stem}.wav"}
        if meta is not None:
            (droot / f"{stem}.json").write_text(json.dumps(meta))
            row["metadata"] = f"{stem}.json"
        index_lines.append(json.dumps(row))
    (droot / "pairs.jsonl").write_text("\n".join(index_lines) + "\n")
    return {
        "name": name,
        "root": name,
        "pair_index": f"{name}/pairs.jsonl",
        **registry_row,
    }


FULL_ALIGNMENT = {
    "alignment": [[0.0, 0.0, 17.0], [10.0, 17.0, 30.6], [20.0, 30.6, 39.0]],
    "title": "Etude Op.10 No.3",
    "composer": "Chopin",
}


@pytest.fixture
def corpus(tmp_path):
    rows = [
        _dataset(
            tmp_path, "synth-a",
            pairs=[("alpha", None), ("beta", None)],
            stage=0, input_kind="score", target_kind="synth_audio",
            instrumentation="Piano",
        ),
        _dataset(
            tmp_path, "speed-b",
            pairs=[("gamma", FULL_ALIGNMENT)],
            stage=1, input_kind="score", target_kind="synth_perf_audio",
            instrumentation="Piano",
        ),
        _dataset(
            tmp_path, "perf-c",
            pairs=[
                ("delta", FULL_ALIGNMENT),
                # only the first window is aligned; the others get skipped
                ("epsilon", {"alignment": [[0.0, 3.0, 14.0]]}),
            ],
            stage=2, input_kind="performance", target_kind="perf_audio",
            instrumentation="Piano",
        ),
        _dataset(
            tmp_path, "mistake-d",
            pairs=[("zeta", FULL_ALIGNMENT)],
            stage=3, input_kind="performance", target_kind="perf_audio",
            instrumentation="Piano",
        ),
        _dataset(
            tmp_path, "style-e",
            pairs=[("eta", {**FULL_ALIGNMENT, "performer": "Maria Stader",
                            "expression": "virtuosic"})],
            stage=4, input_kind="performance", target_kind="perf_audio",
            instrumentation="Piano",
        ),
    ]
    registry_path = tmp_path / "registry.json"
    registry_path.write_text(json.dumps({"datasets": rows}))
    return registry_path


def test_load_registry(corpus):
    entries = load_registry(corpus)
    assert [e.stage for e in entries] == [0, 1, 2, 3, 4]
    assert entries[0].name == "synth-a"
    assert not entries[0].needs_alignment
    assert entries[2].needs_alignment


def test_registry_missing_file_rejected(corpus, tmp_path):
    doc = json.loads(corpus.read_text())
    index = tmp_path / doc["datasets"][0]["pair_index"]
    rows = index.read_text().splitlines()
    rows.append(json.dumps({"midi": "ghost.mid", "audio": "alpha.wav"}))
    index.write_text("\n".join(rows))
    with pytest.raises(ValueError, match="ghost.mid"):
        load_registry(corpus)


def test_registry_validation_errors(tmp_path):
    with pytest.raises(ValueError, match="stage"):
        DatasetEntry("x", 5, "score", "synth_audio", "", tmp_path, tmp_path)
    with pytest.raises(ValueError, match="input_kind"):
        DatasetEntry("x", 0, "midi", "synth_audio", "", tmp_path, tmp_path)
    with pytest.raises(ValueError, match="target_kind"):
        DatasetEntry("x", 0, "score", "mp3", "", tmp_path, tmp_path)
    with pytest.raises(ValueError, match="weight"):
        DatasetEntry("x", 0, "score", "synth_audio", "", tmp_path, tmp_path, weight=0)
    (tmp_path / "registry.json").write_text(json.dumps({"datasets": [{"name": "x"}]}))
    with pytest.raises(ValueError, match="missing field"):
        load_registry(tmp_path / "registry.json")
    (tmp_path / "registry.json").write_text(json.dumps({"datasets": []}))
    with pytest.raises(ValueError, match="non-empty"):
        load_registry(tmp_path / "registry.json")


def test_stage0_manifest_constant_prompt(corpus, tmp_path):
    out = tmp_path / "out"
    manifest = build_manifest(load_registry(corpus), 0, seed=7, out_dir=out)
    assert manifest.step_budget == 20_000
    # two 25 s files cut into ceil(25/10) windows each
    assert len(manifest.records) == 6
    for rec in manifest.records:
        assert rec.prompt == "Synthesis"
        assert rec.stage == 0
        assert rec.perf_end - rec.perf_start == 10.0
        assert rec.target_audio_ref.startswith("synth-a/")
        stream = TokenStream.from_bytes((out / rec.token_file).read_bytes())
        assert stream.window_length == 10.0


def test_seventeen_second_window_prompts_slow(corpus, tmp_path):
    manifest = build_manifest(load_registry(corpus), 1, seed=7, out_dir=tmp_path / "o")
    first = next(r for r in manifest.records if r.window_ref.endswith("#0"))
    assert (first.perf_start, first.perf_end) == (0.0, 17.0)
    assert any(kw in first.prompt for kw in SLOW_KEYWORDS)
    assert "synthesis" in first.prompt


def test_unaligned_windows_skipped_with_warning(corpus, tmp_path, caplog):
    with caplog.at_level(logging.WARNING, logger="encore.curriculum"):
        manifest = build_manifest(
            load_registry(corpus), 2, seed=7, out_dir=tmp_path / "o"
        )
    # delta contributes 3 aligned windows, epsilon only its first
    assert len(manifest.records) == 4
    skipped = [r for r in caplog.records if "no alignment" in r.message]
    assert len(skipped) == 2


def test_mistake_stage_prompt(corpus, tmp_path):
    manifest = build_manifest(load_registry(corpus), 3, seed=7, out_dir=tmp_path / "o")
    for rec in manifest.records:
        assert "performance with mistakes" in rec.prompt


def test_style_stage_prompt(corpus, tmp_path):
    manifest = build_manifest(load_registry(corpus), 4, seed=7, out_dir=tmp_path / "o")
    for rec in manifest.records:
        assert "style of Maria Stader" in rec.prompt
        assert "virtuosic" in rec.prompt


def test_manifest_deterministic_and_seed_sensitive(corpus, tmp_path):
    registry = load_registry(corpus)
    a = build_manifest(registry, 0, seed=7, out_dir=tmp_path / "a")
    b = build_manifest(registry, 0, seed=7, out_dir=tmp_path / "b")
    c = build_manifest(registry, 0, seed=8, out_dir=tmp_path / "c")
    assert a.records == b.records
    assert sorted(r.window_ref for r in a.records) == sorted(
        r.window_ref for r in c.records
    )


def test_manifest_ignores_pair_listing_order(corpus, tmp_path):
    registry = load_registry(corpus)
    a = build_manifest(registry, 0, seed=7, out_dir=tmp_path / "a")
    index = corpus.parent / "synth-a" / "pairs.jsonl"
    rows = index.read_text().strip().splitlines()
    index.write_text("\n".join(reversed(rows)) + "\n")
    b = build_manifest(load_registry(corpus), 0, seed=7, out_dir=tmp_path / "b")
    assert a.records == b.records


def test_manifest_without_datasets_rejected(corpus, tmp_path):
    registry = [e for e in load_registry(corpus) if e.stage == 0]
    with pytest.raises(ValueError, match="no datasets"):
        build_manifest(registry, 3, seed=7, out_dir=tmp_path / "o")
    with pytest.raises(ValueError, match="stage 9"):
        build_manifest(registry, 9, seed=7, out_dir=tmp_path / "o")


def test_all_windows_skipped_rejected(tmp_path):
    row = _dataset(
        tmp_path, "bare",
        pairs=[("solo", {"alignment": []})],
        stage=2, input_kind="performance", target_kind="perf_audio",
        instrumentation="Piano",
    )
    (tmp_path / "registry.json").write_text(json.dumps({"datasets": [row]}))
    registry = load_registry(tmp_path / "registry.json")
    with pytest.raises(ValueError, match="no usable windows"):
        build_manifest(registry, 2, seed=7, out_dir=tmp_path / "o")


@pytest.mark.parametrize("weight,expected", [(0.5, 3), (2.0, 12)])
def test_dataset_weight_scales_contribution(corpus, tmp_path, weight, expected):
    doc = json.loads(corpus.read_text())
    doc["datasets"][0]["weight"] = weight
    corpus.write_text(json.dumps(doc))
    manifest = build_manifest(
        load_registry(corpus), 0, seed=7, out_dir=tmp_path / "o"
    )
    assert len(manifest.records) == expected


# ---------------------------------------------------------------------------
# schedule


def _record(tag, stage=0):
    return ManifestRecord(
        window_ref=f"{tag}#0",
        token_file=f"{tag}.tok",
        prompt="Synthesis",
        target_audio_ref=f"{tag}.wav",
        perf_start=0.0,
        perf_end=10.0,
        stage=stage,
    )


def test_budget_semantics():
    a = StageManifest(stage=0, step_budget=2, records=(_record("a"),))
    b = StageManifest(stage=1, step_budget=3, records=(_record("b", 1),))
    steps = list(schedule([a, b]))
    assert [s for s, _ in steps] == [0, 1, 2, 3, 4]
    assert [r.window_ref for _, r in steps] == ["a#0", "a#0", "b#0", "b#0", "b#0"]


def test_epochs_cover_all_records():
    records = tuple(_record(t) for t in "abc")
    manifest = StageManifest(stage=0, step_budget=6, records=records)
    refs = [r.window_ref for _, r in schedule([manifest], seed=3)]
    assert sorted(refs[:3]) == ["a#0", "b#0", "c#0"]
    assert sorted(refs[3:]) == ["a#0", "b#0", "c#0"]


def test_paper_budgets_sum_and_order(corpus, tmp_path):
    assert STAGE_BUDGETS == {0: 20_000, 1: 10_000, 2: 15_000, 3: 4_000, 4: 10_000}
    registry = load_registry(corpus)
    manifests = [
        build_manifest(registry, s, seed=7, out_dir=tmp_path / "o") for s in range(5)
    ]
    boundaries = {}
    step = -1
    for step, record in schedule(manifests, seed=7):
        boundaries.setdefault(record.stage, step)
    assert step + 1 == 59_000
    assert boundaries == {0: 0, 1: 20_000, 2: 30_000, 3: 45_000, 4: 49_000}


def test_schedule_requires_stage_order():
    a = StageManifest(stage=1, step_budget=1, records=(_record("a", 1),))
    b = StageManifest(stage=0, step_budget=1, records=(_record("b"),))
    with pytest.raises(ValueError, match="ordered"):
        list(schedule([a, b]))
    with pytest.raises(ValueError, match="duplicate"):
        list(schedule([b, b]))


def test_schedule_rejects_empty_manifest():
    empty = StageManifest(stage=0, step_budget=5, records=())
    with pytest.raises(ValueError, match="empty"):
        list(schedule([empty]))


def test_merged_pool_for_no_curriculum(corpus, tmp_path):
    registry = load_registry(corpus)
    manifests = [
        build_manifest(registry, s, seed=7, out_dir=tmp_path / "o") for s in range(5)
    ]
    merged = merge_manifests(manifests)
    assert merged.stage is None
    assert merged.step_budget == MERGED_BUDGET == 60_000
    assert len(merged.records) == sum(len(m.records) for m in manifests)
    steps = list(schedule([merged]))
    assert len(steps) == 60_000
    with pytest.raises(ValueError, match="merge"):
        merge_manifests([])


def test_manifest_file_round_trip(corpus, tmp_path):
    manifest = build_manifest(
        load_registry(corpus), 4, seed=7, out_dir=tmp_path / "o"
    )
    path = tmp_path / "stage4.jsonl"
    write_manifest(manifest, path)
    meta = json.loads((tmp_path / "stage4.meta.json").read_text())
    assert meta == {"stage": 4, "step_budget": 10_000, "record_count": 3}
    assert read_manifest(path) == manifest


def test_derive_seed_stability():
    assert derive_seed(7, "a", "b") == derive_seed(7, "a", "b")
    assert derive_seed(7, "a", "b") != derive_seed(7, "a", "c")
    assert derive_seed(7, "a", "b") != derive_seed(8, "a", "b")
    assert 0 <= derive_seed(2**63, "x") < 2**64
    with pytest.raises(ValueError):
        derive_seed(7)


def test_stage_manifest_validation():
    with pytest.raises(ValueError, match="step_budget"):
        StageManifest(stage=0, step_budget=0, records=(_record("a"),))
