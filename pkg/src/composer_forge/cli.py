"""Command-line entry point.

Subcommands mirror the pipeline stages: ingest (metadata -> split
manifest), encode (MIDI -> piano-roll cache), train, eval, ablate.
Exit codes: 0 success, 1 computation error, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import dataset, evaluation, pianoroll, training
from .config import ExperimentConfig, load_experiment_config, write_effective_config
from .errors import ComposerForgeError, ConfigError, DatasetError
from .nn.checkpoint import load_checkpoint
from .smf.parser import load_notes_from_file, notes_to_json

log = logging.getLogger("composer_forge")

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_USAGE = 2

_VARIANT_FLAG = {"full": "full", "onset-omitted": "onset_omitted",
                 "frame-binarized": "frame_binarized"}


def _variant_from_flag(value: str) -> str:
    return _VARIANT_FLAG[value]


def _cache_dir(args) -> Path:
    override = os.environ.get("COMPOSER_FORGE_CACHE")
    if args.cache_dir is not None:
        return Path(args.cache_dir)
    if override:
        return Path(override)
    return Path("cache")


def _print_class_table(manifest: dataset.SplitManifest) -> None:
    train_counts = manifest.class_counts(manifest.train)
    test_counts = manifest.class_counts(manifest.test)
    width = max(len(name) for name in manifest.label_vocab)
    print(f"{'Composer':<{width}}  {'# of pieces':>11}  {'train':>5}  {'test':>5}")
    for i, name in enumerate(manifest.label_vocab):
        total = train_counts[i] + test_counts[i]
        print(f"{name:<{width}}  {total:>11}  {train_counts[i]:>5}  {test_counts[i]:>5}")
    total = sum(train_counts) + sum(test_counts)
    print(f"{'Total':<{width}}  {total:>11}  {sum(train_counts):>5}  {sum(test_counts):>5}")


def _load_or_build_manifest(csv_path, composer_config, split_cfg,
                            n_eval_segments: int) -> dataset.SplitManifest:
    meta = dataset.load_composer_meta(composer_config)
    records = dataset.load_metadata(csv_path)
    grouped, vocab = dataset.filter_and_label(
        records, meta,
        title_threshold=split_cfg.title_threshold,
        n_eval_segments=n_eval_segments)
    return dataset.stratified_split(grouped, vocab, seed=split_cfg.seed,
                                    ratio=split_cfg.ratio,
                                    target_train=split_cfg.target_train,
                                    composer_meta=meta)


def cmd_ingest(args) -> int:
    from .config import SplitConfig
    split_cfg = SplitConfig(seed=args.seed, ratio=args.ratio,
                            target_train=args.target_train,
                            title_threshold=args.title_threshold)
    manifest = _load_or_build_manifest(args.csv, args.composer_config, split_cfg,
                                       args.segments)
    _print_class_table(manifest)
    out = Path(args.out)
    if out.exists() and not args.force:
        print(f"{out} already exists; use --force to overwrite", file=sys.stderr)
        return EXIT_USAGE
    dataset.save_manifest(out, manifest)
    print(f"wrote {out}")
    return EXIT_OK


def _encode_one(midi_root: str, cache_dir: str, filename: str) -> tuple[str, str]:
    """Returns (filename, error message); empty message means success."""
    try:
        notes, _ = load_notes_from_file(Path(midi_root) / filename)
        roll = pianoroll.encode(notes)
        pianoroll.save_roll(pianoroll.cache_path(cache_dir, filename), roll)
        return filename, ""
    except (ComposerForgeError, OSError) as exc:
        return filename, str(exc)


def cmd_encode(args) -> int:
    if args.dump_notes:
        notes, stats = load_notes_from_file(args.dump_notes)
        print(notes_to_json(notes))
        if stats.dangling_note_offs or stats.zero_length_dropped:
            print(f"note: {stats.dangling_note_offs} dangling note-offs, "
                  f"{stats.zero_length_dropped} zero-length notes dropped",
                  file=sys.stderr)
        return EXIT_OK
    if not args.manifest:
        print("encode needs --manifest (or --dump-notes FILE)", file=sys.stderr)
        return EXIT_USAGE

    manifest = dataset.load_manifest(args.manifest)
    cache_dir = _cache_dir(args)
    cache_dir.mkdir(parents=True, exist_ok=True)
    filenames = sorted({p.midi_filename for p in manifest.train + manifest.test})

    todo = []
    skipped = 0
    for filename in filenames:
        if not args.force and pianoroll.has_valid_cache(cache_dir, filename):
            skipped += 1
        else:
            todo.append(filename)

    failures: list[tuple[str, str]] = []
    done = 0
    if args.workers > 1 and todo:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = pool.map(_encode_one, [args.midi_root] * len(todo),
                               [str(cache_dir)] * len(todo), todo)
            for filename, err in results:
                if err:
                    failures.append((filename, err))
                else:
                    done += 1
    else:
        for filename in todo:
            _, err = _encode_one(args.midi_root, str(cache_dir), filename)
            if err:
                failures.append((filename, err))
            else:
                done += 1

    print(f"encoded {done}, cache hits {skipped}, failures {len(failures)}")
    for filename, err in failures:
        print(f"  FAILED {filename}: {err}", file=sys.stderr)
    return EXIT_OK if not failures else EXIT_COMPUTE


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seed is not None:
        changes["train"] = dataclasses.replace(config.train, seed=args.seed)
    if getattr(args, "variant", None):
        changes["variant"] = _variant_from_flag(args.variant)
    if getattr(args, "run_dir", None):
        changes["run_dir"] = args.run_dir
    if args.workers is not None:
        changes["workers"] = args.workers
    if getattr(args, "segments", None):
        changes["n_eval_segments"] = args.segments
    return dataclasses.replace(config, **changes) if changes else config


def _manifest_for_config(config: ExperimentConfig) -> dataset.SplitManifest:
    if config.manifest_path:
        return dataset.load_manifest(config.manifest_path)
    if not config.csv_path:
        raise ConfigError("config needs csv_path or manifest_path")
    return _load_or_build_manifest(config.csv_path, config.composer_config,
                                   config.split, config.n_eval_segments)


def cmd_train(args) -> int:
    config = _apply_overrides(load_experiment_config(args.config), args)
    manifest = _manifest_for_config(config)
    if len(manifest.label_vocab) != config.model.n_classes:
        raise ConfigError(
            f"model.n_classes is {config.model.n_classes} but the split has "
            f"{len(manifest.label_vocab)} composers")

    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(run_dir / "experiment.json", config)
    dataset.save_manifest(run_dir / "manifest.json", manifest)

    cache_dir = os.environ.get("COMPOSER_FORGE_CACHE") or config.cache_dir
    loader = pianoroll.make_roll_loader(cache_dir)
    result = training.fit(manifest, loader, config.model, config.train, run_dir,
                          variant=config.variant,
                          config_extra={"experiment_hash": config.config_hash()})
    last = result.log_rows[-1]
    print(f"trained {config.train.epochs} epochs: "
          f"train_acc {last['train_acc']:.4f}, "
          f"best val_f1 {result.best_val_f1:.4f} (epoch {result.best_epoch})")
    print(f"run directory: {run_dir}")
    return EXIT_OK


def _eval_setup(args):
    model, extra = load_checkpoint(args.checkpoint)
    manifest = dataset.load_manifest(args.manifest)
    variant = (_variant_from_flag(args.variant) if args.variant
               else extra.get("variant", "full"))
    cache_dir = _cache_dir(args)
    loader = pianoroll.make_roll_loader(cache_dir)
    return model, extra, manifest, variant, loader


def cmd_eval(args) -> int:
    model, extra, manifest, variant, loader = _eval_setup(args)
    n_segments = args.segments or dataset.DEFAULT_EVAL_SEGMENTS
    meta = manifest.composer_meta or None
    era_order = None
    if meta is not None:
        eras = []
        for name in manifest.label_vocab:
            era = meta[name].era
            if era not in eras:
                eras.append(era)
        era_order = eras
    report = evaluation.evaluate(
        model, manifest.test, manifest.label_vocab, loader, n_segments,
        variant=variant, composer_meta=meta, era_order=era_order,
        train_class_counts=manifest.class_counts(manifest.train))
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent / f"eval_{n_segments}"
    evaluation.write_report(out_dir, report)
    print(f"weighted F1 at {n_segments} segments: {report.weighted_f1:.4f} "
          f"(piece accuracy {report.piece_accuracy:.4f})")
    print(f"report directory: {out_dir}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    model, extra, manifest, variant, loader = _eval_setup(args)
    grid = [int(v) for v in args.grid.split(",")] if args.grid else list(evaluation.SEGMENT_GRID)
    rows = evaluation.ablation_segment_sweep(model, manifest.test,
                                             manifest.label_vocab, loader,
                                             grid=grid, variant=variant)

    variant_models = {}
    for spec_arg in args.variant_checkpoint or []:
        if "=" not in spec_arg:
            raise ConfigError(
                f"--variant-checkpoint takes VARIANT=PATH, got {spec_arg!r}")
        flag, path = spec_arg.split("=", 1)
        if flag not in _VARIANT_FLAG:
            raise ConfigError(f"unknown variant {flag!r} in --variant-checkpoint")
        if not Path(path).exists():
            raise ConfigError(f"missing checkpoint for variant {flag!r}: {path}")
        variant_models[_variant_from_flag(flag)], _ = load_checkpoint(path)
    if variant_models:
        n_segments = args.segments or dataset.DEFAULT_EVAL_SEGMENTS
        rows += evaluation.ablation_variant_rows(variant_models, manifest.test,
                                                 manifest.label_vocab, loader,
                                                 n_segments)

    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "ablation.csv"
    evaluation.write_ablation_csv(out, rows)
    for axis, setting, value in rows:
        print(f"{axis:>12}  {setting:>16}  {value:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="composer-forge",
        description="Composer attribution for piano MIDI recordings.")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="build a stratified split manifest from a metadata CSV")
    p_ingest.add_argument("--csv", required=True, help="metadata CSV path")
    p_ingest.add_argument("--out", required=True, help="manifest JSON to write")
    p_ingest.add_argument("--composer-config", default=None,
                          help="composer birth/era JSON (default: packaged)")
    p_ingest.add_argument("--seed", type=int, default=0)
    p_ingest.add_argument("--ratio", type=float, default=0.7)
    p_ingest.add_argument("--target-train", type=int, default=None)
    p_ingest.add_argument("--title-threshold", type=int,
                          default=dataset.DEFAULT_TITLE_THRESHOLD)
    p_ingest.add_argument("--segments", type=int, default=dataset.DEFAULT_EVAL_SEGMENTS,
                          help="eval segments recorded per piece")
    p_ingest.add_argument("--force", action="store_true")
    p_ingest.set_defaults(func=cmd_ingest)

    p_encode = sub.add_parser("encode", help="parse MIDI files and cache piano rolls")
    p_encode.add_argument("--manifest", default=None)
    p_encode.add_argument("--midi-root", default=".", help="directory MIDI paths are relative to")
    p_encode.add_argument("--cache-dir", default=None,
                          help="roll cache (default: $COMPOSER_FORGE_CACHE or ./cache)")
    p_encode.add_argument("--workers", type=int, default=1)
    p_encode.add_argument("--force", action="store_true", help="re-encode valid cache entries")
    p_encode.add_argument("--dump-notes", default=None, metavar="MIDI",
                          help="parse one file and print its notes as JSON")
    p_encode.add_argument("--pedal-extend", action="store_true",
                          help="reserved: extend notes through sustain pedal")
    p_encode.set_defaults(func=cmd_encode)

    p_train = sub.add_parser("train", help="train a model from an experiment config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None, help="override training seed")
    p_train.add_argument("--run-dir", default=None)
    p_train.add_argument("--workers", type=int, default=None)
    p_train.add_argument("--variant", choices=sorted(_VARIANT_FLAG), default=None)
    p_train.set_defaults(func=cmd_train, segments=None)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--segments", type=int, default=None)
    p_eval.add_argument("--variant", choices=sorted(_VARIANT_FLAG), default=None)
    p_eval.add_argument("--cache-dir", default=None)
    p_eval.add_argument("--out", default=None, help="report directory")
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="segment-count sweep (and optional variant rows)")
    p_ablate.add_argument("--checkpoint", required=True)
    p_ablate.add_argument("--manifest", required=True)
    p_ablate.add_argument("--grid", default=None,
                          help="comma-separated segment counts (default 5,10,20,30,60,90)")
    p_ablate.add_argument("--segments", type=int, default=None,
                          help="segment count for variant rows")
    p_ablate.add_argument("--variant", choices=sorted(_VARIANT_FLAG), default=None)
    p_ablate.add_argument("--variant-checkpoint", action="append", metavar="VARIANT=PATH",
                          help="checkpoint for a variant row; repeatable")
    p_ablate.add_argument("--cache-dir", default=None)
    p_ablate.add_argument("--out", default=None)
    p_ablate.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "pedal_extend", False):
        print("--pedal-extend is reserved and not implemented; "
              "notes currently end at their note-off events", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ComposerForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
