#!/usr/bin/env python3
"""End-to-end synthetic experiment: corpus -> split -> cache -> train ->
eval -> segment ablation.  Finishes in a few minutes on a laptop CPU and
should reach perfect held-out accuracy; a drop signals a regression in
the pipeline, the model, or the trainer."""

import argparse
import subprocess
import sys
from pathlib import Path

from composer_forge.synthetic import make_corpus, write_corpus


def run(argv: list[str]) -> None:
    print("+", " ".join(argv))
    result = subprocess.run(argv)
    if result.returncode != 0:
        sys.exit(result.returncode)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--work-dir", default="runs/synthetic_experiment")
    parser.add_argument("--config", default="configs/synthetic_smoke.json")
    parser.add_argument("--seed", type=int, default=5, help="corpus generation seed")
    args = parser.parse_args()

    work = Path(args.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    corpus_dir = work / "corpus"
    corpus = make_corpus(seed=args.seed)
    csv_path, config_path = write_corpus(corpus, corpus_dir)

    manifest = work / "manifest.json"
    cache = work / "cache"
    run_dir = work / "run"
    cli = [sys.executable, "-m", "composer_forge.cli"]

    run(cli + ["ingest", "--csv", str(csv_path), "--out", str(manifest),
               "--composer-config", str(config_path),
               "--title-threshold", "0", "--seed", "11", "--force"])
    run(cli + ["encode", "--manifest", str(manifest),
               "--midi-root", str(corpus_dir), "--cache-dir", str(cache)])

    # reuse the smoke config but point it at this working tree
    import json
    payload = json.loads(Path(args.config).read_text())
    payload.update({
        "csv_path": str(csv_path),
        "composer_config": str(config_path),
        "manifest_path": str(manifest),
        "midi_root": str(corpus_dir),
        "cache_dir": str(cache),
        "run_dir": str(run_dir),
    })
    exp_config = work / "experiment.json"
    exp_config.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    run(cli + ["train", "--config", str(exp_config)])
    run(cli + ["eval", "--checkpoint", str(run_dir / "best.ckpt"),
               "--manifest", str(manifest), "--cache-dir", str(cache),
               "--segments", "10", "--out", str(run_dir / "eval")])
    run(cli + ["ablate", "--checkpoint", str(run_dir / "best.ckpt"),
               "--manifest", str(manifest), "--cache-dir", str(cache),
               "--out", str(run_dir / "ablation.csv")])


if __name__ == "__main__":
    main()
