"""Command-line front end.

Every command takes one --seed; items derive their own streams from it
plus their identity, so adding files to a run never changes what an
existing file gets. Each run writes a run_record.json next to its
outputs. Exit codes: 0 success, 1 any per-item failure under --strict,
2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .audio_io import read_wav, write_wav
from .augment import SPEED_TIERS, MistakeConfig, corrupt, sample_speed_augmentation
from .curriculum import (
    build_manifest,
    load_registry,
    merge_manifests,
    read_manifest,
    schedule,
    write_manifest,
)
from .metrics import (
    MetricError,
    chroma_similarity,
    deviation_from_expected,
    frechet_distance,
    read_embeddings,
    tempo_estimate,
)
from .notes import segment
from .prompts import PromptSpec, render_prompt
from .seeds import derive_seed
from .smf import parse_midi, write_midi
from .synth import SynthConfig, render, render_clicks
from .tokenizer import encode

log = logging.getLogger(__name__)

WORKERS_ENV = "ENCORE_WORKERS"

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    pass


def _workers(args) -> int:
    if args.workers is not None:
        value = args.workers
    else:
        value = int(os.environ.get(WORKERS_ENV, "1"))
    if value < 1:
        raise ConfigError(f"workers must be >= 1, got {value}")
    return value


def _map_items(fn, items, workers: int):
    """Apply fn over items, preserving input order in the results."""
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _atomic_write_json(path: Path, payload) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _write_run_record(out_dir: Path, command: str, config: dict) -> None:
    record = {
        "command": command,
        "config": {k: str(v) if isinstance(v, Path) else v for k, v in config.items()},
        "versions": {
            "encore": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    _atomic_write_json(out_dir / "run_record.json", record)


def _config_value_ok(value, fallback) -> bool:
    """True when a config value can stand in for the built-in default."""
    if isinstance(fallback, bool) or isinstance(value, bool):
        return isinstance(value, bool) and isinstance(fallback, bool)
    if isinstance(fallback, float):
        return isinstance(value, (int, float))
    return isinstance(value, type(fallback))


def _apply_config_file(args: argparse.Namespace, parser_defaults: dict) -> None:
    """Fill options the user left unset from the config file.

    Precedence: explicit flags > config file > built-in defaults.
    """
    if args.config is not None:
        try:
            with open(args.config) as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError(f"config {args.config} must hold a JSON object")
        for key, value in overrides.items():
            attr = key.replace("-", "_")
            if attr not in vars(args):
                raise ConfigError(f"config {args.config}: unknown option {key!r}")
            fallback = parser_defaults.get(attr)
            if fallback is not None and not _config_value_ok(value, fallback):
                raise ConfigError(
                    f"config {args.config}: {key!r} expects "
                    f"{type(fallback).__name__}, got {value!r}"
                )
            if getattr(args, attr) is None:  # not given on the command line
                setattr(args, attr, value)
    for attr, fallback in parser_defaults.items():
        if getattr(args, attr, None) is None:
            setattr(args, attr, fallback)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_dict(args) -> dict:
    skip = {"func", "defaults", "config"}
    return {k: v for k, v in vars(args).items() if k not in skip}


# ---------------------------------------------------------------------------
# tokenize


def cmd_tokenize(args) -> int:
    out = _out_dir(args)
    workers = _workers(args)

    def one(path_str: str) -> dict:
        path = Path(path_str)
        try:
            seq = parse_midi(path.read_bytes(), source_id=path.name)
            windows = segment(seq, args.window, args.hop)
            counts = []
            for k, window in enumerate(windows):
                stream = encode(window)
                (out / f"{path.stem}_w{k:04d}.tok").write_bytes(stream.to_bytes())
                counts.append(len(stream.tokens))
            return {
                "file": str(path),
                "status": "ok",
                "windows": len(windows),
                "tokens_min": min(counts, default=0),
                "tokens_mean": round(float(np.mean(counts)) if counts else 0.0, 1),
                "tokens_max": max(counts, default=0),
            }
        except (OSError, ValueError) as exc:
            log.error("%s: %s", path, exc)
            return {"file": str(path), "status": "error", "error": str(exc)}

    rows = _map_items(one, args.inputs, workers)
    for row in rows:
        if row["status"] == "ok":
            print(
                f"{row['file']}: {row['windows']} windows, tokens "
                f"min {row['tokens_min']} mean {row['tokens_mean']} "
                f"max {row['tokens_max']}"
            )
        else:
            print(f"{row['file']}: FAILED ({row['error']})")
    _atomic_write_json(out / "index.json", rows)
    _write_run_record(out, "tokenize", _config_dict(args))
    failed = any(r["status"] == "error" for r in rows)
    return EXIT_FAILURES if failed and args.strict else EXIT_OK


# ---------------------------------------------------------------------------
# augment


def cmd_augment(args) -> int:
    out = _out_dir(args)
    workers = _workers(args)
    tiers = {t.name: t for t in SPEED_TIERS}
    if args.tier is not None and args.tier not in tiers:
        raise ConfigError(f"unknown tier {args.tier!r}; choose from {sorted(tiers)}")

    def one(path_str: str) -> dict:
        path = Path(path_str)
        try:
            seq = parse_midi(path.read_bytes(), source_id=path.name)
            item_seed = derive_seed(args.seed, "augment", path.name)
            if args.mode == "speed":
                if args.tier is not None:
                    tier = tiers[args.tier]
                else:
                    pick = np.random.default_rng(item_seed)
                    tier = SPEED_TIERS[int(pick.integers(len(SPEED_TIERS)))]
                augmented, ratio, keyword = sample_speed_augmentation(
                    seq, tier, derive_seed(args.seed, "speed", path.name)
                )
                detail = {"tier": tier.name, "ratio": ratio, "keyword": keyword}
            else:
                augmented, report = corrupt(seq, MistakeConfig(seed=item_seed))
                detail = {
                    "mistouch": report.mistouch,
                    "asynchrony": report.asynchrony,
                    "substitution": report.substitution,
                    "ghost": report.ghost,
                    "block_removed": report.block_removed,
                    "removed_intervals": report.removed_intervals,
                }
            (out / f"{path.stem}_{args.mode}.mid").write_bytes(write_midi(augmented))
            return {"file": str(path), "status": "ok", **detail}
        except (OSError, ValueError) as exc:
            log.error("%s: %s", path, exc)
            return {"file": str(path), "status": "error", "error": str(exc)}

    rows = _map_items(one, args.inputs, workers)
    for row in rows:
        print(json.dumps(row))
    _atomic_write_json(out / "report.json", rows)
    _write_run_record(out, "augment", _config_dict(args))
    failed = any(r["status"] == "error" for r in rows)
    return EXIT_FAILURES if failed and args.strict else EXIT_OK


# ---------------------------------------------------------------------------
# prompt


def cmd_prompt(args) -> int:
    try:
        spec = PromptSpec(
            sonification=args.sonification,
            stage=args.stage,
            speed_keyword=args.speed_keyword,
            title=args.title,
            composer=args.composer,
            instrumentation=args.instrumentation,
            mistake=True if args.mistake else None,
            performer=args.performer,
            expression_label=args.expression,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(render_prompt(spec, dropout=args.dropout, rng_seed=args.seed))
    return EXIT_OK


# ---------------------------------------------------------------------------
# manifest


def cmd_manifest(args) -> int:
    out = _out_dir(args)
    try:
        registry = load_registry(args.registry)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"registry: {exc}") from exc
    try:
        if args.stage == "merged":
            stages = sorted({e.stage for e in registry})
            manifest = merge_manifests(
                [
                    build_manifest(registry, s, args.seed, out, dropout=args.dropout)
                    for s in stages
                ]
            )
            path = out / "merged.jsonl"
        else:
            try:
                stage = int(args.stage)
            except ValueError:
                raise ConfigError(
                    f"stage must be 0..4 or 'merged', got {args.stage!r}"
                ) from None
            manifest = build_manifest(
                registry, stage, args.seed, out, dropout=args.dropout
            )
            path = out / f"stage{stage}.jsonl"
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_manifest(manifest, path)
    _write_run_record(out, "manifest", _config_dict(args))
    print(f"{path}: {len(manifest.records)} records, budget {manifest.step_budget}")
    return EXIT_OK


def cmd_schedule_preview(args) -> int:
    try:
        manifests = [read_manifest(p) for p in args.manifests]
        total = sum(m.step_budget for m in manifests)
        shown = 0
        for step, record in schedule(manifests, seed=args.seed):
            if shown < args.steps:
                print(f"step {step:>6}  stage {record.stage}  {record.window_ref}")
                shown += 1
            else:
                break
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    print(f"total steps: {total}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _evaluate_pair(row: dict, metrics: list[str], base: Path) -> list[dict]:
    pair_id = row["pair_id"]
    ratio = float(row.get("ratio") or 1.0)
    out_path = base / row["output"]
    ref_path = base / row["reference"]
    results = []
    if "chroma" in metrics:
        result = chroma_similarity(read_wav(out_path), read_wav(ref_path))
        results.append({"pair_id": pair_id, "metric": "chroma", "value": result.score})
    if "tempo" in metrics:
        estimated = tempo_estimate(read_wav(out_path))
        score_bpm = row.get("score_bpm")
        if score_bpm:  # externally supplied score tempo
            score_tempo = float(score_bpm)
        else:
            # the reference audio stands in for the score
            score_tempo = tempo_estimate(read_wav(ref_path))
        value = deviation_from_expected(estimated, score_tempo, ratio)
        results.append({"pair_id": pair_id, "metric": "tempo", "value": value})
    if "frechet" in metrics:
        value = frechet_distance(read_embeddings(out_path), read_embeddings(ref_path))
        results.append({"pair_id": pair_id, "metric": "frechet", "value": value})
    return results


def cmd_evaluate(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    if not metrics:
        raise ConfigError("no metrics selected")
    unknown = set(metrics) - {"chroma", "tempo", "frechet"}
    if unknown:
        raise ConfigError(f"unknown metrics {sorted(unknown)}")
    pairs_path = Path(args.pairs)
    try:
        with open(pairs_path) as fh:
            pair_rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(str(exc)) from exc
    if not pair_rows:
        raise ConfigError(f"{pairs_path}: no pairs")
    base = pairs_path.parent
    workers = _workers(args)

    def one(row: dict) -> tuple[list[dict], str | None]:
        try:
            return _evaluate_pair(row, metrics, base), None
        except (OSError, ValueError, MetricError) as exc:
            log.error("pair %s: %s", row.get("pair_id"), exc)
            return [], f"{row.get('pair_id')}: {exc}"

    outcomes = _map_items(one, pair_rows, workers)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_path.with_name(out_path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["pair_id", "metric", "value"])
        writer.writeheader()
        for results, _ in outcomes:
            for result in results:
                writer.writerow(result)
    os.replace(tmp, out_path)
    _write_run_record(out_path.parent, "evaluate", _config_dict(args))
    failures = [err for _, err in outcomes if err]
    for err in failures:
        print(f"FAILED {err}")
    print(f"{out_path}: {sum(len(r) for r, _ in outcomes)} rows")
    return EXIT_FAILURES if failures and args.strict else EXIT_OK


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    out = _out_dir(args)
    try:
        cfg = SynthConfig(gain=args.gain)
        if args.clicks is not None:
            buf = render_clicks(args.clicks, args.duration)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.clicks is not None:
        path = out / f"clicks_{args.clicks:g}bpm.wav"
        write_wav(path, buf)
        print(f"{path}: {len(buf)} samples")
        _write_run_record(out, "synth", _config_dict(args))
        return EXIT_OK
    if not args.inputs:
        raise ConfigError("need MIDI inputs or --clicks")
    workers = _workers(args)

    def one(path_str: str) -> dict:
        path = Path(path_str)
        try:
            seq = parse_midi(path.read_bytes(), source_id=path.name)
            buf = render(seq, cfg)
            write_wav(out / f"{path.stem}.wav", buf)
            return {"file": str(path), "status": "ok", "samples": len(buf)}
        except (OSError, ValueError) as exc:
            log.error("%s: %s", path, exc)
            return {"file": str(path), "status": "error", "error": str(exc)}

    rows = _map_items(one, args.inputs, workers)
    for row in rows:
        print(json.dumps(row))
    _atomic_write_json(out / "index.json", rows)
    _write_run_record(out, "synth", _config_dict(args))
    failed = any(r["status"] == "error" for r in rows)
    return EXIT_FAILURES if failed and args.strict else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(sub, *, seed=True, out=True, strict=False, workers=False):
    sub.add_argument("--config", help="JSON file with option defaults")
    if seed:
        sub.add_argument("--seed", type=int, default=None)
    if out:
        sub.add_argument("--out", default=None, help="output directory")
    if strict:
        sub.add_argument("--strict", action="store_true", default=None)
    if workers:
        sub.add_argument(
            "--workers", type=int, default=None,
            help=f"parallel workers (default ${WORKERS_ENV} or 1)",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="encore")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("tokenize", help="segment and tokenize MIDI files")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--window", type=float, default=None)
    p.add_argument("--hop", type=float, default=None)
    _add_common(p, strict=True, workers=True)
    p.set_defaults(func=cmd_tokenize, defaults={"window": 10.0, "seed": 0, "out": "tokens", "strict": False})

    p = subs.add_parser("augment", help="speed or mistake augmentation")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--mode", choices=["speed", "mistakes"], required=True)
    p.add_argument("--tier", default=None, help="fixed speed tier name")
    _add_common(p, strict=True, workers=True)
    p.set_defaults(func=cmd_augment, defaults={"seed": 0, "out": "augmented", "strict": False})

    p = subs.add_parser("prompt", help="render one prompt")
    p.add_argument("--stage", type=int, required=True)
    p.add_argument("--sonification", choices=["synthesis", "performance"], default="synthesis")
    p.add_argument("--speed-keyword", default=None)
    p.add_argument("--title", default=None)
    p.add_argument("--composer", default=None)
    p.add_argument("--instrumentation", default=None)
    p.add_argument("--performer", default=None)
    p.add_argument("--expression", default=None)
    p.add_argument("--mistake", action="store_true", default=None)
    p.add_argument("--dropout", type=float, default=None)
    _add_common(p, out=False)
    p.set_defaults(func=cmd_prompt, defaults={"seed": 0, "dropout": 0.5})

    p = subs.add_parser("manifest", help="build a stage manifest from a registry")
    p.add_argument("--registry", required=True)
    p.add_argument("--stage", required=True, help="0..4 or 'merged'")
    p.add_argument("--dropout", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_manifest, defaults={"seed": 0, "out": "manifest", "dropout": 0.5})

    p = subs.add_parser("schedule-preview", help="show the first steps of a schedule")
    p.add_argument("manifests", nargs="+", help="manifest .jsonl files, stage order")
    p.add_argument("--steps", type=int, default=None)
    _add_common(p, out=False)
    p.set_defaults(func=cmd_schedule_preview, defaults={"seed": 0, "steps": 10})

    p = subs.add_parser("evaluate", help="batch metrics over file pairs")
    p.add_argument("--pairs", required=True, help="CSV: pair_id,output,reference[,ratio,score_bpm]")
    p.add_argument("--metrics", default=None, help="comma list: chroma,tempo,frechet")
    _add_common(p, seed=False, out=False, strict=True, workers=True)
    p.add_argument("--out", default=None, help="output CSV path")
    p.set_defaults(func=cmd_evaluate, defaults={"metrics": "chroma,tempo", "out": "results.csv", "strict": False})

    p = subs.add_parser("synth", help="render MIDI (or a click track) to WAV")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--clicks", type=float, default=None, help="render a click track at BPM")
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--gain", type=float, default=None)
    _add_common(p, seed=False, strict=True, workers=True)
    p.set_defaults(func=cmd_synth, defaults={"out": "audio", "duration": 10.0, "gain": 0.5, "strict": False})

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        _apply_config_file(args, args.defaults)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
