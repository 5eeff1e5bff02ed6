"""Command-line entry point wiring the full pipeline.

Subcommands: ingest, label, index, train, plan, generate, eval, ablate,
suite, synth.  A JSON config file (--config) supplies defaults that
command-line flags override; every artifact-producing command writes its
fully resolved configuration alongside the outputs.  Exit codes: 0 success,
1 data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import harmony, ingest, metrics, prompts, synthdata
from .indexing import (
    CorpusIndex,
    build_index,
    corpus_signature_stats,
    load_index,
    save_index,
)
from .labeling import QuantileTable, extract_features, label_song_measures
from .planner import (
    PlannerConfig,
    constant_plan,
    load_checkpoint,
    majority_style,
    plan_song,
    save_checkpoint,
    train,
)
from .retriever import RetrieverConfig, denormalize_arrangement, generate_song
from .songmodel import Song, StyleVector, parse_song_bundle, validate_song, write_song_bundle

SUITE_KEYWORDS = ("arp", "block", "busy", "dense", "fast", "gentle",
                  "loud", "ostinato", "quiet", "slow", "sparse", "stride")


class DataError(RuntimeError):
    pass


def _load_config_file(path) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _planner_config(args, file_cfg: dict) -> PlannerConfig:
    cfg = PlannerConfig.from_dict(file_cfg.get("planner", {})) if file_cfg.get("planner") else PlannerConfig()
    for flag, attr in (
        ("seed", "seed"), ("epochs", "epochs"), ("d_model", "d_model"), ("layers", "layers"),
        ("heads", "heads"), ("d_ff", "d_ff"), ("past_window", "past_window"),
        ("lr", "learning_rate"), ("batch_size", "batch_size"), ("val_split", "val_split"),
        ("prior_weight", "inventory_prior_weight"), ("anchor_weight", "anchor_weight"),
        ("decode_mode", "decode_mode"), ("plan_temperature", "temperature"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            cfg = dataclasses.replace(cfg, **{attr: value})
    return cfg


def _retriever_config(args, file_cfg: dict) -> RetrieverConfig:
    cfg = RetrieverConfig.from_dict(file_cfg.get("retriever", {})) if file_cfg.get("retriever") else RetrieverConfig()
    for flag, attr in (
        ("seed", "seed"), ("temperature", "temperature"), ("top_k", "top_k"),
        ("selection_mode", "selection_mode"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            cfg = dataclasses.replace(cfg, **{attr: value})
    if getattr(args, "no_diversity", False):
        cfg = dataclasses.replace(cfg, repeat_penalty=0.0, reuse_phrase_weight=0.0,
                                  reuse_section_weight=0.0, reuse_song_weight=0.0,
                                  boundary_novelty=False)
    return cfg


def _write_resolved(out_dir: Path, name: str, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / name, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_bundles(directory) -> list[Song]:
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise DataError(f"no song bundles in {directory}")
    songs = []
    for p in paths:
        songs.append(parse_song_bundle(p.read_text("utf-8")))
    return songs


def _load_song(path) -> Song:
    return parse_song_bundle(Path(path).read_text("utf-8"))


def _parse_keywords(text) -> list[str]:
    if not text:
        return []
    return [k.strip() for k in text.split(",") if k.strip()]


def _parse_section_keywords(items) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for item in items or []:
        if "=" not in item:
            raise DataError(f"--section-keywords expects SECTION=kw1,kw2 (got {item!r})")
        section, kws = item.split("=", 1)
        out[section.strip()] = _parse_keywords(kws)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    train_songs, etudes, test_songs = synthdata.synth_corpus(
        n_songs=args.songs, seed=args.seed, n_etudes=args.etudes, n_test=args.test
    )
    out = Path(args.out)
    for sub, songs in (("train", train_songs), ("coverage", etudes), ("test", test_songs)):
        d = out / sub
        d.mkdir(parents=True, exist_ok=True)
        for song in songs:
            (d / f"{song.id}.json").write_text(write_song_bundle(song), "utf-8")
    _write_resolved(out, "resolved_config.json",
                    {"command": "synth", "songs": args.songs, "seed": args.seed,
                     "etudes": args.etudes, "test": args.test})
    print(json.dumps({"train": len(train_songs), "coverage": len(etudes), "test": len(test_songs),
                      "out": str(out)}))
    return 0


def cmd_ingest(args) -> int:
    root = Path(args.dataset_root)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = ingest.IngestReport()
    song_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not song_dirs:
        raise DataError(f"no song directories under {root}")
    for d in song_dirs:
        try:
            src = ingest.SourceDirectory.discover(d)
            song = ingest.ingest_dataset_song(src, song_id=d.name, report=report)
        except (ingest.MalformedAnnotation, ingest.TrackAmbiguity, ingest.IoFailure) as exc:
            report.skipped += 1
            print(json.dumps({"skipped": d.name, "reason": str(exc)}), file=sys.stderr)
            continue
        problems = validate_song(song)
        if problems:
            report.skipped += 1
            print(json.dumps({"skipped": d.name, "violations": problems[:5]}), file=sys.stderr)
            continue
        (out / f"{song.id}.json").write_text(write_song_bundle(song), "utf-8")
    _write_resolved(out, "ingest_report.json", report.to_dict())
    print(json.dumps(report.to_dict()))
    return 0


def cmd_label(args) -> int:
    songs = [harmony.normalize_key(s) for s in _load_bundles(args.bundles)]
    labels, feats, table = synthdata.label_corpus(songs)
    payload = {
        "songs": {
            sid: {
                "styles": [list(v) for v in labels[sid]],
                "features": [f.to_dict() for f in feats[sid]],
            }
            for sid in sorted(labels)
        },
        "quantiles": table.to_dict(),
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    print(json.dumps({"songs": len(labels), "out": args.out}))
    return 0


def _load_labels(path):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    labels = {
        sid: [StyleVector(*v) for v in entry["styles"]]
        for sid, entry in payload["songs"].items()
    }
    from .labeling import ContinuousStyleFeatures

    feats = {
        sid: [ContinuousStyleFeatures.from_dict(f) for f in entry["features"]]
        for sid, entry in payload["songs"].items()
    }
    table = QuantileTable.from_dict(payload["quantiles"])
    return labels, feats, table


def cmd_index(args) -> int:
    if args.stats and not args.out and args.index:
        index = load_index(args.index)
        print(json.dumps(corpus_signature_stats(index), indent=2))
        return 0
    songs = [harmony.normalize_key(s) for s in _load_bundles(args.bundles)]
    for extra in args.coverage or []:
        songs.extend(harmony.normalize_key(s) for s in _load_bundles(extra))
    labels, feats, table = _load_labels(args.labels)
    missing = [s.id for s in songs if s.id not in labels]
    if missing:
        raise DataError(f"labels missing for songs: {missing[:5]}")
    index = build_index(songs, labels, features=feats, quantiles=table)
    save_index(index, args.out)
    stats = corpus_signature_stats(index)
    if args.stats:
        print(json.dumps(stats, indent=2))
    else:
        print(json.dumps({"records": len(index.records), "out": args.out}))
    return 0


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _planner_config(args, file_cfg)
    songs = [harmony.normalize_key(s) for s in _load_bundles(args.bundles)]
    labels, _feats, _table = _load_labels(args.labels)
    model, curves = train(songs, labels, cfg, verbose=args.verbose)
    save_checkpoint(model, args.out)
    out_dir = Path(args.out).parent
    _write_resolved(out_dir, Path(args.out).name + ".config.json",
                    {"command": "train", "planner": cfg.to_dict()})
    with open(str(args.out) + ".curves.json", "w", encoding="utf-8") as fh:
        json.dump(curves, fh, indent=2)
    best = min(curves, key=lambda c: c["val_loss"])
    print(json.dumps({"epochs": len(curves), "best_val_loss": best["val_loss"],
                      "best_epoch": best["epoch"], "best_val_acc": best["val_acc_mean"],
                      "out": str(args.out)}))
    return 0


def cmd_plan(args) -> int:
    file_cfg = _load_config_file(args.config)
    model = load_checkpoint(args.model)
    cfg = _planner_config(args, {"planner": model.config.to_dict(), **file_cfg})
    index = load_index(args.index)
    song = harmony.normalize_key(_load_song(args.song))
    result = plan_song(model, song, index.inventory, config=cfg,
                       keywords=_parse_keywords(args.keywords),
                       section_keywords=_parse_section_keywords(args.section_keywords))
    payload = {
        "song_id": song.id,
        "styles": [list(s) for s in result.styles],
        "anchors": {k: list(v) for k, v in result.anchors.items()},
        "planner": cfg.to_dict(),
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
    print(json.dumps({"measures": len(result.styles), "out": args.out}))
    return 0


def _plan_styles(args, model, index, song, file_cfg):
    if getattr(args, "plan", None):
        with open(args.plan, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return [StyleVector(*s) for s in payload["styles"]]
    cfg = _planner_config(args, {"planner": model.config.to_dict(), **file_cfg})
    result = plan_song(model, song, index.inventory, config=cfg,
                       keywords=_parse_keywords(getattr(args, "keywords", "")),
                       section_keywords=_parse_section_keywords(getattr(args, "section_keywords", None)))
    return result.styles


def cmd_generate(args) -> int:
    file_cfg = _load_config_file(args.config)
    model = load_checkpoint(args.model)
    index = load_index(args.index)
    original = _load_song(args.song)
    song = harmony.normalize_key(original)
    styles = _plan_styles(args, model, index, song, file_cfg)
    rcfg = _retriever_config(args, file_cfg)
    arrangement, log = generate_song(styles, song, index, rcfg)
    if not args.keep_normalized:
        arrangement = denormalize_arrangement(arrangement, original)
    ingest.write_midi(arrangement, args.out)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            for row in log.rows:
                fh.write(json.dumps(row) + "\n")
    _write_resolved(Path(args.out).parent or Path("."), Path(args.out).name + ".config.json",
                    {"command": "generate", "retriever": rcfg.to_dict(),
                     "keywords": getattr(args, "keywords", "") or ""})
    print(json.dumps(log.summary()))
    return 0


def _read_log(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def cmd_eval(args) -> int:
    if args.what == "diversity":
        rows = _read_log(args.inputs[0])
        sigs = [r["active_sig"] for r in rows]
        sections = [r["section"] for r in rows]
        unique, dominant, repeat = metrics.pattern_diversity(sigs)
        report = {
            "unique_ratio": unique,
            "dominant_cluster_ratio": dominant,
            "repeat_ratio": repeat,
            "sections": [r.to_dict() for r in metrics.section_diversity(sigs, sections, rows)],
        }
    elif args.what == "style-space":
        with open(args.plan, "r", encoding="utf-8") as fh:
            plan_payload = json.load(fh)
        song = _load_song(args.song)
        styles = [StyleVector(*s) for s in plan_payload["styles"]]
        sections = [m.section_label for m in song.measures]
        report = metrics.style_space_metrics(styles, sections).to_dict()
    elif args.what == "isolation":
        runs = [[r["active_sig"] for r in _read_log(p)] for p in args.inputs]
        pitch_runs = [[r["pitch_sig"] for r in _read_log(p)] for p in args.inputs]
        report = {
            "active": metrics.isolation_metrics(runs).to_dict(),
            "pitch": metrics.isolation_metrics(pitch_runs).to_dict(),
        }
    elif args.what == "realized":
        song = _load_song(args.song)
        report = _realized_from_midi(args.midi, song)
    elif args.what == "ablate":
        return cmd_ablate(args)
    else:
        raise DataError(f"unknown eval mode {args.what!r}")
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", "utf-8")
    print(text)
    return 0


def _realized_from_midi(midi_path, song: Song) -> dict:
    from .songmodel import NoteEvent
    from fractions import Fraction

    notes = ingest.read_midi_notes(midi_path)
    bounds = []
    cursor = Fraction(0)
    for m in song.measures:
        bounds.append((cursor, cursor + m.length_beats))
        cursor += m.length_beats
    entries = []
    for i, (lo, hi) in enumerate(bounds):
        entries.append(
            ingest.ArrangementEntry(
                measure_index=i, source_id="midi", start_beat=lo,
                length_beats=int(hi - lo),
                notes=[
                    NoteEvent(onset=o - lo, duration=d, pitch=p, velocity=v)
                    for o, d, p, v in notes
                    if lo <= o < hi
                ],
            )
        )
    arr = ingest.Arrangement(song_id=song.id, tempo_bpm=song.tempo_bpm, meter=song.meter,
                             entries=entries)
    return metrics.realized_features(arr).to_dict()


def cmd_ablate(args) -> int:
    file_cfg = _load_config_file(args.config)
    model = load_checkpoint(args.model)
    index = load_index(args.index)
    songs = [harmony.normalize_key(s) for s in _load_bundles(args.songs)]
    pcfg = _planner_config(args, {"planner": model.config.to_dict(), **file_cfg})
    pcfg = dataclasses.replace(pcfg, inventory_prior_weight=0.0)  # ablation parity
    rare = StyleVector("quiet", "gentle", "slow", "steady", "block", "warm")

    per_metric: dict[str, dict[str, list[float]]] = {}
    for song in songs:
        sections = [m.section_label for m in song.measures]
        flat = constant_plan(majority_style(index.inventory), song, index.inventory)
        planner_plan = plan_song(model, song, index.inventory, config=pcfg).styles
        first = plan_song(model, song, index.inventory, config=pcfg).styles[:1]
        frozen = constant_plan(first[0], song, index.inventory)
        rare_plan = constant_plan(rare, song, index.inventory)
        conditions = {
            "A1_flat_majority": flat,
            "A2_planner": planner_plan,
            "A3_first_measure": frozen,
            "A1_rare": rare_plan,
        }
        for name, styles in conditions.items():
            report = metrics.style_space_metrics(styles, sections).to_dict()
            for metric, value in report.items():
                per_metric.setdefault(metric, {}).setdefault(name, []).append(value)

    table = {}
    for metric, by_cond in per_metric.items():
        row = {}
        for name, values in by_cond.items():
            row[name] = {"mean": float(np.mean(values)), "std": float(np.std(values))}
        deltas = [p - f for p, f in zip(by_cond["A2_planner"], by_cond["A1_flat_majority"])]
        row["delta_planner_minus_flat"] = float(np.mean(deltas))
        if len(deltas) >= 2:
            lo, hi = metrics.bootstrap_ci(deltas, seed=pcfg.seed)
            row["delta_ci95"] = [lo, hi]
        table[metric] = row
    text = json.dumps(table, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", "utf-8")
    print(text)
    return 0


def cmd_suite(args) -> int:
    file_cfg = _load_config_file(args.config)
    model = load_checkpoint(args.model)
    index = load_index(args.index)
    original = _load_song(args.song)
    song = harmony.normalize_key(original)
    pcfg = _planner_config(args, {"planner": model.config.to_dict(), **file_cfg})
    rcfg = _retriever_config(args, file_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    runs_active, runs_pitch, realized = [], [], {}
    for kw in SUITE_KEYWORDS:
        result = plan_song(model, song, index.inventory, config=pcfg, keywords=[kw])
        arrangement, log = generate_song(result.styles, song, index, rcfg)
        ingest.write_midi(denormalize_arrangement(arrangement, original), out / f"{kw}.mid")
        with open(out / f"{kw}.jsonl", "w", encoding="utf-8") as fh:
            for row in log.rows:
                fh.write(json.dumps(row) + "\n")
        runs_active.append([r["active_sig"] for r in log.rows])
        runs_pitch.append([r["pitch_sig"] for r in log.rows])
        realized[kw] = metrics.realized_features(arrangement).to_dict()

    report = {
        "keywords": list(SUITE_KEYWORDS),
        "isolation": {
            "active": metrics.isolation_metrics(runs_active).to_dict(),
            "pitch": metrics.isolation_metrics(runs_pitch).to_dict(),
        },
        "realized": realized,
    }
    _write_resolved(out, "suite_report.json", report)
    _write_resolved(out, "resolved_config.json",
                    {"command": "suite", "planner": pcfg.to_dict(), "retriever": rcfg.to_dict()})
    print(json.dumps(report["isolation"]))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="accompanist",
                                     description="Style-planned retrieval accompaniment")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("synth", help="emit a seeded synthetic corpus")
    p.add_argument("--songs", type=int, default=20)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--etudes", type=int, default=4)
    p.add_argument("--test", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse dataset directories into bundles")
    p.add_argument("--dataset-root", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("label", help="derive style labels and quantiles")
    p.add_argument("--bundles", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("index", help="build the retrieval index")
    p.add_argument("--bundles", required=True)
    p.add_argument("--coverage", nargs="*", default=None,
                   help="extra bundle dirs included in the index only")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--index", default=None, help="existing index for --stats")
    p.add_argument("--stats", action="store_true")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("train", help="train the style planner")
    add_common(p)
    p.add_argument("--bundles", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-split", dest="val_split", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--d-model", dest="d_model", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--d-ff", dest="d_ff", type=int, default=None)
    p.add_argument("--past-window", dest="past_window", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("plan", help="plan a style trajectory for a song")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--song", required=True)
    p.add_argument("--keywords", default="")
    p.add_argument("--section-keywords", dest="section_keywords", nargs="*", default=None)
    p.add_argument("--prior-weight", dest="prior_weight", type=float, default=None)
    p.add_argument("--anchor-weight", dest="anchor_weight", type=float, default=None)
    p.add_argument("--decode-mode", dest="decode_mode", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("generate", help="plan + retrieve + write MIDI")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--song", required=True)
    p.add_argument("--keywords", default="")
    p.add_argument("--section-keywords", dest="section_keywords", nargs="*", default=None)
    p.add_argument("--plan", default=None, help="use a precomputed plan.json")
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.add_argument("--selection-mode", dest="selection_mode", default=None)
    p.add_argument("--no-diversity", dest="no_diversity", action="store_true")
    p.add_argument("--keep-normalized", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="evaluation reports")
    add_common(p)
    p.add_argument("what", choices=["diversity", "style-space", "isolation", "realized", "ablate"])
    p.add_argument("--in", dest="inputs", nargs="*", default=None, help="energy logs")
    p.add_argument("--plan", default=None)
    p.add_argument("--song", default=None)
    p.add_argument("--midi", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--index", default=None)
    p.add_argument("--songs", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="planner ablation harness")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--songs", required=True, help="bundle dir of evaluation songs")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("suite", help="12-keyword generation battery")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--song", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.add_argument("--selection-mode", dest="selection_mode", default=None)
    p.set_defaults(func=cmd_suite)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ingest.MalformedAnnotation, ingest.TrackAmbiguity, ingest.IoFailure,
            FileNotFoundError, ValueError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
