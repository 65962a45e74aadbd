"""Acceptance gate: eleven numbered criteria, one printed PASS/FAIL/SKIP
line each.  Criterion 1 records that the full-scale reference results are
out of desk reach and checks the shipped full-run config instead; the
rest are self-contained properties with pinned tolerances and runtime
bounds."""

import csv
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
from _pytest.outcomes import Skipped

from composer_forge.cli import main
from composer_forge.config import load_experiment_config
from composer_forge.dataset import (
    filter_and_label,
    load_composer_meta,
    load_manifest,
    load_metadata,
    stratified_split,
)
from composer_forge.errors import MidiError
from composer_forge.evaluation import confusion_matrix, spearman, weighted_f1
from composer_forge.nn import functional as F
from composer_forge.nn.autodiff import Tensor
from composer_forge.nn.resnet import BasicBlock, BottleneckBlock, ModelConfig, build_model
from composer_forge.pianoroll import cut, encode, make_roll_loader
from composer_forge.smf.parser import NoteEvent, load_notes
from composer_forge.synthetic import make_corpus, write_corpus
from composer_forge.training import TrainConfig, fit

from conftest import find_maestro_csv
from smf_fixtures import GOOD_FIXTURES
from test_dataset import REFERENCE_COUNTS
from test_evaluator import brute_weighted_f1
from test_gradcheck import check_gradients

REPO_ROOT = Path(__file__).resolve().parents[1]


@contextmanager
def criterion(num, label):
    try:
        yield
    except Skipped:
        print(f"[criterion {num:02d}] {label}: SKIP")
        raise
    except BaseException:
        print(f"[criterion {num:02d}] {label}: FAIL")
        raise
    print(f"[criterion {num:02d}] {label}: PASS")


@pytest.fixture(scope="module")
def accept_ws(tmp_path_factory):
    """Synthetic corpus on disk, plus a split manifest and a roll cache
    built through the command-line pipeline."""
    root = tmp_path_factory.mktemp("acceptance")
    corpus = make_corpus(seed=7, pieces_per_style=10, duration=60.0)
    csv_path, composers = write_corpus(corpus, root / "data")
    manifest = root / "manifest.json"
    assert main(["ingest", "--csv", str(csv_path), "--out", str(manifest),
                 "--composer-config", str(composers), "--title-threshold", "0",
                 "--seed", "11", "--segments", "10"]) == 0
    cache = root / "cache"
    assert main(["encode", "--manifest", str(manifest),
                 "--midi-root", str(root / "data"), "--cache-dir", str(cache)]) == 0
    return SimpleNamespace(root=root, csv=csv_path, composers=composers,
                           manifest=manifest, cache=cache)


def overfit_payload(ws, run_dir):
    return {
        "manifest_path": str(ws.manifest),
        "cache_dir": str(ws.cache),
        "run_dir": str(run_dir),
        "n_eval_segments": 10,
        "model": {"depth": 18, "width_multiplier": 0.25, "n_classes": 3},
        "train": {"epochs": 30, "batch_size": 8, "lr0": 0.02,
                  "seed": 3, "val_segments": 10},
    }


@pytest.fixture(scope="module")
def overfit_run(accept_ws):
    run_dir = accept_ws.root / "run_overfit"
    config = accept_ws.root / "overfit.json"
    config.write_text(json.dumps(overfit_payload(accept_ws, run_dir)))
    start = time.monotonic()
    assert main(["train", "--config", str(config)]) == 0
    elapsed = time.monotonic() - start
    return SimpleNamespace(run=run_dir, train_seconds=elapsed)


def test_criterion_01_full_scale_results_not_desk_reproducible():
    with criterion(1, "full-scale reference results declared out of desk reach, "
                      "config shipped"):
        readme = (REPO_ROOT / "README.md").read_text()
        assert "0.8333" in readme
        assert "not reproducible" in readme.lower()
        assert "configs/maestro_full.json" in readme

        config = load_experiment_config(REPO_ROOT / "configs" / "maestro_full.json")
        assert config.model.depth == 50
        assert config.model.n_classes == 13
        assert config.model.in_channels == 2
        assert config.n_eval_segments == 90
        assert config.variant == "full"
        print("full-scale targets (weighted F1 0.8333, depth sweep "
              "0.7962/0.7881/0.7892, rank correlations -0.45/-0.13, error-pair "
              "counts 19/5) need the complete MAESTRO corpus and a multi-day "
              "ResNet-50 run; the property suite below stands in for them")


def test_criterion_02_dataset_pipeline_reference_counts():
    with criterion(2, "reference metadata yields 13 composers, 505 pieces, "
                      "347/158 split"):
        csv_path = find_maestro_csv()
        if csv_path is None:
            pytest.skip("MAESTRO v2.0.0 CSV not provided")
        start = time.monotonic()
        records = load_metadata(csv_path)
        meta = load_composer_meta(None)
        grouped, vocab = filter_and_label(records, meta, title_threshold=16,
                                          n_eval_segments=90)
        assert vocab == list(REFERENCE_COUNTS)
        counts = {name: len(grouped[name]) for name in vocab}
        assert counts == REFERENCE_COUNTS
        assert sum(counts.values()) == 505
        manifest = stratified_split(grouped, vocab, seed=0, composer_meta=meta)
        assert len(manifest.train) == 347
        assert len(manifest.test) == 158
        assert time.monotonic() - start < 5.0


def test_criterion_03_parser_fixtures_and_fuzz():
    with criterion(3, "hand-assembled SMF fixtures parse exactly, 1e5 mutations "
                      "raise typed errors"):
        start = time.monotonic()
        assert len(GOOD_FIXTURES) >= 10
        for name in sorted(GOOD_FIXTURES):
            data, expected, _, _ = GOOD_FIXTURES[name]
            notes, _ = load_notes(data)
            assert notes == expected, name

        bases = [data for data, *_ in GOOD_FIXTURES.values()]
        rng = np.random.default_rng(0xACCE)
        n_iterations = 100_000
        parsed_ok = 0
        for _ in range(n_iterations):
            base = bytearray(bases[rng.integers(len(bases))])
            for _ in range(int(rng.integers(1, 8))):
                op = rng.integers(3)
                if op == 0 and base:
                    base[rng.integers(len(base))] = int(rng.integers(256))
                elif op == 1 and len(base) > 2:
                    del base[int(rng.integers(len(base)))]
                else:
                    base.insert(int(rng.integers(len(base) + 1)),
                                int(rng.integers(256)))
            try:
                load_notes(bytes(base))
                parsed_ok += 1
            except MidiError:
                pass
        assert 0 < parsed_ok < n_iterations
        assert time.monotonic() - start < 60.0


def test_criterion_04_encoder_invariants():
    with criterion(4, "encoder invariants over 1000 collision-free note sets"):
        start = time.monotonic()
        rng = np.random.default_rng(44)
        for _ in range(1000):
            n = int(rng.integers(1, 25))
            pitches = rng.choice(128, size=n, replace=False)
            onsets = rng.uniform(0.0, 30.0, n)
            durations = rng.uniform(0.05, 3.0, n)
            notes = [NoteEvent(onset_seconds=float(on),
                               offset_seconds=float(on + dur),
                               pitch=int(p), velocity=int(rng.integers(1, 128)))
                     for on, dur, p in zip(onsets, durations, pitches)]
            roll = encode(notes)

            assert int(roll.onset.sum()) == n   # one onset mark per note

            for note in notes:
                t0 = math.floor(note.onset_seconds * 20 + 1e-7)
                t1 = max(math.ceil(note.offset_seconds * 20 - 1e-7), t0 + 1)
                span = int(np.count_nonzero(roll.frame[:, note.pitch]))
                assert span == t1 - t0
                duration = note.offset_seconds - note.onset_seconds
                assert 1 <= span <= math.ceil(duration / 0.05) + 1

            seg = cut(roll, 0, "frame_binarized").data
            assert set(np.unique(seg)) <= {0.0, 1.0}
            rebinarized = (seg > 0).astype(seg.dtype)
            assert np.array_equal(rebinarized, seg)   # idempotent
        assert time.monotonic() - start < 30.0


def block_params_as_float64(block):
    params = []
    for _, child in block.named_children():
        units = child.named_children() if hasattr(child, "named_children") \
            else [("", child)]
        for _, unit in units:
            for _, tensor, _ in unit.named_tensors():
                tensor.data = tensor.data.astype(np.float64)
                params.append(tensor)
    return [t for t in params if t.requires_grad]


def test_criterion_05_gradient_checks():
    with criterion(5, "finite-difference gradient checks on ops and residual "
                      "blocks"):
        start = time.monotonic()
        rng = np.random.default_rng(55)

        def param(*shape):
            return Tensor(rng.standard_normal(shape), requires_grad=True)

        # conv2d, double precision elementwise tier
        x = param(1, 2, 5, 5)
        w = param(3, 2, 3, 3)
        b = param(3)
        proj = rng.standard_normal((1, 3, 3, 3))
        worst = check_gradients(lambda: F.conv2d(x, w, b, stride=1, padding=0),
                                [x, w, b], proj, eps=1e-4, tol=1e-4)
        assert worst < 1e-4

        # batch norm in training mode; fresh running stats every call so the
        # in-place update cannot drift between finite-difference evaluations
        xb = param(4, 3, 5, 5)
        gamma = param(3)
        beta = param(3)
        projb = rng.standard_normal((4, 3, 5, 5))
        worst = check_gradients(
            lambda: F.batch_norm2d(xb, gamma, beta, np.zeros(3), np.ones(3),
                                   training=True),
            [xb, gamma, beta], projb, eps=1e-5, tol=1e-4)
        assert worst < 1e-4

        # linear
        xl = param(4, 7)
        wl = param(3, 7)
        bl = param(3)
        projl = rng.standard_normal((4, 3))
        worst = check_gradients(lambda: F.linear(xl, wl, bl), [xl, wl, bl],
                                projl, eps=1e-5, tol=1e-4)
        assert worst < 1e-4

        # cross entropy (scalar output, unit projection)
        logits = param(4, 13)
        labels = rng.integers(0, 13, 4)
        worst = check_gradients(lambda: F.cross_entropy(logits, labels),
                                [logits], np.ones(()), eps=1e-6, tol=1e-4)
        assert worst < 1e-4

        # basic residual block with projection shortcut, double precision
        basic = BasicBlock(rng, in_ch=6, width=6, stride=2)
        basic_params = block_params_as_float64(basic)
        xr = Tensor(rng.standard_normal((2, 6, 6, 6)), requires_grad=True)
        projr = rng.standard_normal((2, 6, 3, 3))
        worst = check_gradients(lambda: basic(xr, True), [xr] + basic_params,
                                projr, eps=1e-5, tol=1e-4)
        assert worst < 1e-4

        # full bottleneck block at the looser composition tolerance; the
        # finite-difference reference itself runs in float64 because float32
        # arithmetic cannot resolve differences near this tolerance
        bottleneck = BottleneckBlock(rng, in_ch=8, width=2, stride=2)
        bot_params = block_params_as_float64(bottleneck)
        xn = Tensor(rng.standard_normal((2, 8, 6, 6)), requires_grad=True)
        projn = rng.standard_normal((2, 8, 3, 3))
        worst = check_gradients(lambda: bottleneck(xn, True), [xn] + bot_params,
                                projn, eps=1e-5, tol=1e-3)
        assert worst < 1e-3

        assert time.monotonic() - start < 120.0


def test_criterion_06_initial_loss_near_uniform():
    with criterion(6, "fresh model cross entropy sits at ln(13) within 0.1"):
        model = build_model(ModelConfig(depth=18, width_multiplier=0.25,
                                        in_channels=2, n_classes=13), seed=6)
        model.train()
        rng = np.random.default_rng(66)
        x = Tensor(rng.standard_normal((4, 2, 400, 128)).astype(np.float32))
        labels = rng.integers(0, 13, 4)
        loss = float(F.cross_entropy(model(x), labels).data)
        target = math.log(13)
        print(f"initial loss {loss:.4f}, ln(13) = {target:.4f}")
        assert abs(loss - target) <= 0.1


def test_criterion_07_overfit_oracle(accept_ws, overfit_run, tmp_path):
    with criterion(7, "synthetic three-style corpus overfits to 95%/90% within "
                      "30 epochs"):
        assert overfit_run.train_seconds < 300.0

        with open(overfit_run.run / "log.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) <= 30
        final_train_acc = float(rows[-1]["train_acc"])
        assert final_train_acc >= 0.95

        out_dir = tmp_path / "eval"
        assert main(["eval", "--checkpoint", str(overfit_run.run / "best.ckpt"),
                     "--manifest", str(overfit_run.run / "manifest.json"),
                     "--segments", "10", "--cache-dir", str(accept_ws.cache),
                     "--out", str(out_dir)]) == 0
        report = json.loads((out_dir / "report.json").read_text())
        print(f"train accuracy {final_train_acc:.4f}, held-out piece accuracy "
              f"{report['piece_accuracy']:.4f} in {overfit_run.train_seconds:.0f}s")
        assert report["piece_accuracy"] >= 0.90


def test_criterion_08_voting_monte_carlo():
    with criterion(8, "90-segment voting beats 5-segment voting in 99% of "
                      "simulated runs"):
        rng = np.random.default_rng(88)
        trials, pieces, votes = 1000, 100, 90
        correct = rng.random((trials, pieces, votes)) < 0.6
        wrong = rng.integers(1, 13, (trials, pieces, votes), dtype=np.int8)
        draws = np.where(correct, np.int8(0), wrong)

        def piece_accuracy(n_votes):
            window = draws[:, :, :n_votes]
            own = (window == 0).sum(axis=2)
            rival = np.zeros_like(own)
            for cls in range(1, 13):
                np.maximum(rival, (window == cls).sum(axis=2), out=rival)
            return (own > rival).mean(axis=1)

        improved = (piece_accuracy(90) > piece_accuracy(5)).mean()
        print(f"90 votes beat 5 votes in {improved:.1%} of trials")
        assert improved >= 0.99


def brute_ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


def brute_spearman(x, y):
    rx, ry = brute_ranks(list(x)), brute_ranks(list(y))
    n = len(rx)
    mx = sum(rx) / n
    my = sum(ry) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    return cov / math.sqrt(vx * vy)


def test_criterion_09_metric_oracles():
    with criterion(9, "weighted F1 and rank correlation match brute force "
                      "within 1e-12"):
        rng = np.random.default_rng(99)
        for _ in range(1000):
            k = int(rng.integers(2, 9))
            cm = rng.integers(0, 6, (k, k))
            if cm.sum() == 0:
                cm[0, 0] = 1
            assert abs(weighted_f1(cm) - brute_weighted_f1(cm.tolist())) < 1e-12

        checked = 0
        while checked < 1000:
            n = int(rng.integers(3, 30))
            if checked % 2:
                x = rng.permutation(n).astype(np.float64)
                y = rng.permutation(n).astype(np.float64)
            else:
                x = rng.integers(0, 5, n).astype(np.float64)
                y = rng.integers(0, 5, n).astype(np.float64)
                if len(set(x)) < 2 or len(set(y)) < 2:
                    continue
            assert abs(spearman(x, y) - brute_spearman(x, y)) < 1e-12
            checked += 1

        # worked example: true [A, A, B], predicted [A, B, B]
        worked = weighted_f1(confusion_matrix([0, 0, 1], [0, 1, 1], 2))
        assert abs(worked - 2.0 / 3.0) < 1e-12
        assert f"{worked:.4f}" == "0.6667"


def test_criterion_10_ablation_harness(accept_ws, overfit_run, tmp_path):
    with criterion(10, "segment-grid ablation reuses one checkpoint; "
                       "one-channel variant trains"):
        log_before = (overfit_run.run / "log.csv").read_bytes()
        ckpt_before = (overfit_run.run / "last.ckpt").read_bytes()

        out_csv = tmp_path / "ablation.csv"
        assert main(["ablate", "--checkpoint", str(overfit_run.run / "best.ckpt"),
                     "--manifest", str(overfit_run.run / "manifest.json"),
                     "--cache-dir", str(accept_ws.cache),
                     "--out", str(out_csv)]) == 0

        lines = out_csv.read_text().splitlines()
        assert lines[0] == "axis,setting,weighted_f1"
        rows = [line.split(",") for line in lines[1:]]
        assert len(rows) == 6
        assert [r[1] for r in rows] == ["5", "10", "20", "30", "60", "90"]
        assert all(r[0] == "n_segments" for r in rows)
        assert all(0.0 <= float(r[2]) <= 1.0 for r in rows)

        # the sweep only read the checkpoint; nothing was retrained
        assert (overfit_run.run / "log.csv").read_bytes() == log_before
        assert (overfit_run.run / "last.ckpt").read_bytes() == ckpt_before

        manifest = load_manifest(overfit_run.run / "manifest.json")
        loader = make_roll_loader(accept_ws.cache)
        result = fit(manifest, loader,
                     ModelConfig(depth=18, width_multiplier=0.1,
                                 in_channels=1, n_classes=3),
                     TrainConfig(epochs=1, batch_size=8, lr0=0.01, seed=0,
                                 val_segments=1),
                     tmp_path / "onset_run", variant="onset_omitted")
        assert len(result.log_rows) == 1
        assert math.isfinite(result.log_rows[0]["train_loss"])


def test_criterion_11_bitwise_determinism(accept_ws, tmp_path):
    with criterion(11, "identical config and seed give bitwise-identical "
                       "artifacts"):
        ingest = lambda out: main(
            ["ingest", "--csv", str(accept_ws.csv), "--out", str(out),
             "--composer-config", str(accept_ws.composers),
             "--title-threshold", "0", "--seed", "11", "--segments", "10"])
        assert ingest(tmp_path / "manifest_a.json") == 0
        assert ingest(tmp_path / "manifest_b.json") == 0
        manifest_a = (tmp_path / "manifest_a.json").read_bytes()
        assert manifest_a == (tmp_path / "manifest_b.json").read_bytes()

        def run(tag):
            run_dir = tmp_path / f"run_{tag}"
            payload = {
                "manifest_path": str(tmp_path / "manifest_a.json"),
                "cache_dir": str(accept_ws.cache),
                "run_dir": str(run_dir),
                "workers": 1,
                "model": {"depth": 18, "width_multiplier": 0.1, "n_classes": 3},
                "train": {"epochs": 2, "batch_size": 3, "lr0": 0.01,
                          "seed": 1, "val_segments": 2},
            }
            config = tmp_path / f"config_{tag}.json"
            config.write_text(json.dumps(payload))
            assert main(["train", "--config", str(config)]) == 0
            out_dir = tmp_path / f"eval_{tag}"
            assert main(["eval", "--checkpoint", str(run_dir / "best.ckpt"),
                         "--manifest", str(run_dir / "manifest.json"),
                         "--segments", "5", "--cache-dir", str(accept_ws.cache),
                         "--out", str(out_dir)]) == 0
            return run_dir, out_dir

        run_a, eval_a = run("a")
        run_b, eval_b = run("b")
        assert (run_a / "manifest.json").read_bytes() == \
            (run_b / "manifest.json").read_bytes()
        assert (run_a / "log.csv").read_bytes() == (run_b / "log.csv").read_bytes()
        assert (eval_a / "report.json").read_bytes() == \
            (eval_b / "report.json").read_bytes()
