#!/usr/bin/env python3
"""Full-scale run: depth-50, full width, 100 epochs on the MAESTRO v2.0.0
piano corpus.  This is the configuration the reported headline numbers
need; expect days of CPU time with the bundled numpy engine.

Requires the dataset to be downloaded separately (it is not fetched
here): place maestro-v2.0.0.csv and the MIDI tree under data/, or pass
--csv/--midi-root."""

import argparse
import subprocess
import sys
from pathlib import Path


def run(argv: list[str]) -> None:
    print("+", " ".join(argv))
    result = subprocess.run(argv)
    if result.returncode != 0:
        sys.exit(result.returncode)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/maestro_full.json")
    parser.add_argument("--csv", default=None, help="override csv_path")
    parser.add_argument("--midi-root", default=None)
    parser.add_argument("--workers", type=int, default=4, help="encode parallelism")
    args = parser.parse_args()

    import json
    payload = json.loads(Path(args.config).read_text())
    if args.csv:
        payload["csv_path"] = args.csv
    if args.midi_root:
        payload["midi_root"] = args.midi_root

    csv_path = Path(payload["csv_path"])
    if not csv_path.exists():
        print(f"MAESTRO metadata not found at {csv_path}.\n"
              f"Download maestro-v2.0.0 and point --csv/--midi-root at it.",
              file=sys.stderr)
        sys.exit(2)

    run_dir = Path(payload["run_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    exp_config = run_dir / "experiment_input.json"
    manifest = run_dir / "manifest.json"
    payload["manifest_path"] = str(manifest)
    exp_config.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    cli = [sys.executable, "-m", "composer_forge.cli"]
    run(cli + ["ingest", "--csv", str(csv_path), "--out", str(manifest),
               "--seed", str(payload.get("split", {}).get("seed", 0)), "--force"])
    run(cli + ["encode", "--manifest", str(manifest),
               "--midi-root", payload["midi_root"],
               "--cache-dir", payload["cache_dir"],
               "--workers", str(args.workers)])
    run(cli + ["train", "--config", str(exp_config)])
    run(cli + ["eval", "--checkpoint", str(run_dir / "best.ckpt"),
               "--manifest", str(manifest),
               "--cache-dir", payload["cache_dir"],
               "--segments", "90", "--out", str(run_dir / "eval_90")])
    run(cli + ["ablate", "--checkpoint", str(run_dir / "best.ckpt"),
               "--manifest", str(manifest),
               "--cache-dir", payload["cache_dir"],
               "--out", str(run_dir / "ablation.csv")])


if __name__ == "__main__":
    main()
