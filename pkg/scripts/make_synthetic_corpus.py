#!/usr/bin/env python3
"""Write the three-style synthetic corpus to disk.

Produces MIDI files, a metadata CSV in the usual column layout, and a
composer config, ready for `composer-forge ingest`/`encode`.
"""

import argparse

from composer_forge.synthetic import make_corpus, write_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="corpus", help="output directory")
    parser.add_argument("--seed", type=int, default=5)
    parser.add_argument("--pieces-per-style", type=int, default=10)
    parser.add_argument("--duration", type=float, default=60.0, help="seconds per piece")
    args = parser.parse_args()

    corpus = make_corpus(seed=args.seed, pieces_per_style=args.pieces_per_style,
                         duration=args.duration)
    csv_path, config_path = write_corpus(corpus, args.out)
    print(f"wrote {len(corpus.records)} pieces under {args.out}/")
    print(f"metadata: {csv_path}")
    print(f"composer config: {config_path}")


if __name__ == "__main__":
    main()
