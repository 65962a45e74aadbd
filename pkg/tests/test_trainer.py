"""Optimizer hand-worked oracles, cosine schedule values, batch layout,
and small end-to-end fit() runs (artifacts, determinism, failure paths)."""

import json
import math

import numpy as np
import pytest

from composer_forge.dataset import Piece, SplitManifest
from composer_forge.errors import (
    ConfigError,
    OptimizerError,
    TrainingDivergedError,
)
from composer_forge.nn import Tensor
from composer_forge.nn import functional as F
from composer_forge.nn.checkpoint import load_checkpoint
from composer_forge.nn.resnet import ModelConfig, build_model
from composer_forge.training import (
    LOG_COLUMNS,
    SgdOptimizer,
    TrainConfig,
    _epoch_batches,
    config_hash_of,
    cosine_lr,
    fit,
)

TINY_MODEL = ModelConfig(depth=18, width_multiplier=0.1, in_channels=2,
                         n_classes=3)


class TestTrainConfig:
    def test_defaults(self):
        config = TrainConfig()
        assert config.lr0 == 0.01
        assert config.momentum == 0.9
        assert config.weight_decay == 1e-4
        assert config.batch_size == 16
        assert config.epochs == 100

    @pytest.mark.parametrize("kwargs", [
        {"lr0": -0.1},
        {"momentum": 1.0},
        {"weight_decay": -1e-4},
        {"batch_size": 1},
        {"epochs": 0},
        {"val_segments": 0},
        {"schedule": "linear"},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)

    def test_zero_lr_is_legal(self):
        assert TrainConfig(lr0=0.0).lr0 == 0.0


class TestCosineLr:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(0, 100, 0.1) == pytest.approx(0.1, abs=1e-15)
        assert cosine_lr(100, 100, 0.1) == pytest.approx(0.0, abs=1e-15)
        assert cosine_lr(50, 100, 0.1) == pytest.approx(0.05, abs=1e-12)
        assert cosine_lr(100, 100, 0.1, lr_min=0.001) == pytest.approx(0.001, abs=1e-15)

    def test_monotone_nonincreasing(self):
        values = [cosine_lr(t, 40, 0.01) for t in range(41)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_rejects_bad_steps(self):
        with pytest.raises(ConfigError):
            cosine_lr(0, 0, 0.1)
        with pytest.raises(ConfigError):
            cosine_lr(-1, 10, 0.1)
        with pytest.raises(ConfigError):
            cosine_lr(11, 10, 0.1)


class TestSgdOptimizer:
    def single_param(self, value=1.0):
        p = Tensor(np.array([value]), requires_grad=True)
        return p, {"p": p}

    def test_momentum_hand_values(self):
        # v=1, p=0.9 after the first unit-gradient step;
        # v=1.9, p=0.71 after the second
        p, params = self.single_param()
        opt = SgdOptimizer(params, momentum=0.9, weight_decay=0.0)
        p.grad = np.array([1.0])
        opt.step(lr=0.1)
        assert p.data[0] == pytest.approx(0.9, abs=1e-12)
        p.grad = np.array([1.0])
        opt.step(lr=0.1)
        assert opt.velocities["p"][0] == pytest.approx(1.9, abs=1e-12)
        assert p.data[0] == pytest.approx(0.71, abs=1e-12)

    def test_weight_decay_only(self):
        p, params = self.single_param()
        opt = SgdOptimizer(params, momentum=0.0, weight_decay=0.1)
        p.grad = np.array([0.0])
        opt.step(lr=0.1)
        assert p.data[0] == pytest.approx(0.99, abs=1e-12)

    def test_plain_gradient_descent(self):
        p, params = self.single_param(value=2.0)
        opt = SgdOptimizer(params, momentum=0.0, weight_decay=0.0)
        p.grad = np.array([3.0])
        opt.step(lr=0.5)
        assert p.data[0] == pytest.approx(0.5, abs=1e-12)

    def test_missing_gradient_is_error(self):
        p, params = self.single_param()
        opt = SgdOptimizer(params, momentum=0.9)
        with pytest.raises(OptimizerError, match="'p'"):
            opt.step(lr=0.1)

    def test_zero_grad_clears(self):
        p, params = self.single_param()
        opt = SgdOptimizer(params)
        p.grad = np.array([1.0])
        opt.zero_grad()
        assert p.grad is None

    def test_velocity_converges_to_geometric_sum(self):
        p, params = self.single_param()
        opt = SgdOptimizer(params, momentum=0.5, weight_decay=0.0)
        for _ in range(40):
            p.grad = np.array([1.0])
            opt.step(lr=0.0)   # watch the velocity without moving p
        assert opt.velocities["p"][0] == pytest.approx(2.0, abs=1e-9)
        assert p.data[0] == 1.0

    def test_float32_params_stay_float32(self):
        p = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        opt = SgdOptimizer({"p": p}, momentum=0.9, weight_decay=1e-4)
        p.grad = np.ones(3, dtype=np.float32)
        opt.step(lr=0.01)
        assert p.data.dtype == np.float32
        assert opt.velocities["p"].dtype == np.float32

    def test_small_step_decreases_loss(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((8, 5)))
        labels = rng.integers(0, 3, 8)
        w = Tensor(rng.standard_normal((3, 5)) * 0.1, requires_grad=True)
        b = Tensor(np.zeros(3), requires_grad=True)
        opt = SgdOptimizer({"w": w, "b": b}, momentum=0.0, weight_decay=0.0)

        def loss_value():
            return F.cross_entropy(F.linear(x, w, b), labels)

        before = loss_value()
        before.backward()
        opt.step(lr=1e-2)
        after = float(loss_value().data)
        assert after < float(before.data)


class TestEpochBatches:
    @pytest.mark.parametrize("n,batch,expected", [
        (10, 4, [4, 4, 2]),
        (9, 4, [4, 5]),       # trailing singleton folds into the previous batch
        (17, 16, [17]),
        (8, 4, [4, 4]),
        (2, 16, [2]),
        (1, 4, [1]),          # nothing to fold into; caller guards this
    ])
    def test_lengths(self, n, batch, expected):
        batches = _epoch_batches(np.arange(n), batch)
        assert [len(b) for b in batches] == expected
        assert np.concatenate(batches).tolist() == list(range(n))


class TestConfigHash:
    def test_key_order_independent(self):
        assert config_hash_of({"a": 1, "b": [2, 3]}) == config_hash_of({"b": [2, 3], "a": 1})
        assert config_hash_of({"a": 1}) != config_hash_of({"a": 2})


def tiny_manifest(corpus, n_train_per_style=2, n_test_per_style=1, n_eval_segments=3):
    by_style = {}
    for record in corpus.records:
        by_style.setdefault(record.canonical_composer, []).append(record)
    vocab = sorted(by_style, key=lambda c: corpus.composer_meta[c].born)
    train, test = [], []
    for label, composer in enumerate(vocab):
        records = by_style[composer]
        for r in records[:n_train_per_style]:
            train.append(Piece(label, r.canonical_title, r.midi_filename,
                               n_eval_segments=n_eval_segments))
        for r in records[n_train_per_style:n_train_per_style + n_test_per_style]:
            test.append(Piece(label, r.canonical_title, r.midi_filename,
                              n_eval_segments=n_eval_segments))
    return SplitManifest(label_vocab=vocab, seed=0, train=train, test=test,
                         composer_meta=dict(corpus.composer_meta))


class TestFit:
    def test_artifacts_and_log(self, synthetic_corpus, synthetic_roll_loader, tmp_path):
        manifest = tiny_manifest(synthetic_corpus)
        config = TrainConfig(lr0=0.01, batch_size=3, epochs=2, seed=1,
                             val_segments=2)
        result = fit(manifest, synthetic_roll_loader, TINY_MODEL, config,
                     tmp_path / "run")
        run_dir = tmp_path / "run"

        log_lines = (run_dir / "log.csv").read_text().splitlines()
        assert log_lines[0] == ",".join(LOG_COLUMNS)
        assert len(log_lines) == 1 + config.epochs
        assert len(result.log_rows) == config.epochs
        assert set(result.log_rows[0]) == set(LOG_COLUMNS)
        assert 0.0 <= result.log_rows[-1]["train_acc"] <= 1.0
        assert result.final_train_acc == result.log_rows[-1]["train_acc"]

        saved = json.loads((run_dir / "config.json").read_text())
        assert saved["config_hash"] == result.config_hash
        assert saved["train"]["epochs"] == 2
        assert saved["label_vocab"] == manifest.label_vocab

        for name in ("best.ckpt", "last.ckpt"):
            assert (run_dir / name).exists()
            assert (run_dir / (name + ".json")).exists()
        model, extra = load_checkpoint(run_dir / "best.ckpt")
        assert extra["config_hash"] == result.config_hash
        assert extra["variant"] == "full"
        assert extra["label_vocab"] == manifest.label_vocab
        assert extra["epoch"] == result.best_epoch
        assert model.config == TINY_MODEL
        assert result.best_val_f1 == max(r["val_f1"] for r in result.log_rows)

    def test_two_runs_are_bitwise_identical(self, synthetic_corpus,
                                            synthetic_roll_loader, tmp_path):
        manifest = tiny_manifest(synthetic_corpus)
        config = TrainConfig(lr0=0.01, batch_size=3, epochs=2, seed=5,
                             val_segments=2)
        fit(manifest, synthetic_roll_loader, TINY_MODEL, config, tmp_path / "a")
        fit(manifest, synthetic_roll_loader, TINY_MODEL, config, tmp_path / "b")
        assert (tmp_path / "a/log.csv").read_bytes() == (tmp_path / "b/log.csv").read_bytes()
        assert (tmp_path / "a/last.ckpt").read_bytes() == (tmp_path / "b/last.ckpt").read_bytes()
        assert (tmp_path / "a/config.json").read_bytes() == (tmp_path / "b/config.json").read_bytes()

    def test_zero_lr_leaves_parameters_at_init(self, synthetic_corpus,
                                               synthetic_roll_loader, tmp_path):
        manifest = tiny_manifest(synthetic_corpus, n_train_per_style=1)
        config = TrainConfig(lr0=0.0, lr_min=0.0, batch_size=3, epochs=1,
                             seed=2, val_segments=1)
        fit(manifest, synthetic_roll_loader, TINY_MODEL, config, tmp_path / "run")
        trained, _ = load_checkpoint(tmp_path / "run" / "last.ckpt")
        fresh = build_model(TINY_MODEL, seed=config.seed)
        fresh_params = fresh.named_parameters()
        for name, tensor in trained.named_parameters().items():
            assert np.array_equal(tensor.data, fresh_params[name].data), name

    def test_variant_channel_mismatch(self, synthetic_corpus, synthetic_roll_loader,
                                      tmp_path):
        manifest = tiny_manifest(synthetic_corpus)
        with pytest.raises(ConfigError, match="channels"):
            fit(manifest, synthetic_roll_loader, TINY_MODEL, TrainConfig(),
                tmp_path / "run", variant="onset_omitted")

    def test_rejects_degenerate_manifests(self, synthetic_corpus,
                                          synthetic_roll_loader, tmp_path):
        manifest = tiny_manifest(synthetic_corpus)
        no_test = SplitManifest(label_vocab=manifest.label_vocab, seed=0,
                                train=manifest.train, test=[])
        with pytest.raises(ConfigError):
            fit(no_test, synthetic_roll_loader, TINY_MODEL, TrainConfig(),
                tmp_path / "r1")
        no_train = SplitManifest(label_vocab=manifest.label_vocab, seed=0,
                                 train=manifest.train[:1], test=manifest.test)
        with pytest.raises(ConfigError):
            fit(no_train, synthetic_roll_loader, TINY_MODEL, TrainConfig(),
                tmp_path / "r2")

    def test_class_count_mismatch(self, synthetic_corpus, synthetic_roll_loader,
                                  tmp_path):
        manifest = tiny_manifest(synthetic_corpus)   # 3 styles
        thirteen = ModelConfig(depth=18, width_multiplier=0.1, in_channels=2)
        with pytest.raises(ConfigError, match="classes"):
            fit(manifest, synthetic_roll_loader, thirteen, TrainConfig(),
                tmp_path / "run")

    def test_non_finite_loss_raises(self, synthetic_corpus, synthetic_roll_loader,
                                    tmp_path):
        # an absurd learning rate overflows float32 parameters on the first
        # step; the next epoch's logits are nan and the loss check trips
        manifest = tiny_manifest(synthetic_corpus, n_train_per_style=1)
        config = TrainConfig(lr0=1e42, batch_size=3, epochs=4, seed=0,
                             val_segments=1)
        small = ModelConfig(depth=18, width_multiplier=0.05, in_channels=2,
                            n_classes=3)
        with np.errstate(invalid="ignore", over="ignore"):
            with pytest.raises(TrainingDivergedError, match="non-finite loss"):
                fit(manifest, synthetic_roll_loader, small, config,
                    tmp_path / "run")
