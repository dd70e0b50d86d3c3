"""Adam, config files, checkpoints and the training loop."""
import numpy as np
import pytest

from rose_se.echo_sim import EchoParams, synth_corpus
from rose_se.errors import ConfigError, FormatError, NumericAbort
from rose_se.model import ModelConfig, ModelWeights
from rose_se.synthetic import speech_like
from rose_se.trainer import (AdamState, Checkpoint, TrainConfig, adam_step, checkpoint_bytes, config_from_text,
                             config_to_text, enhance_samples, evaluate, load_checkpoint, save_checkpoint, train,
                             train_arrays)

TINY = TrainConfig.desk(model=ModelConfig(depth=2, hidden=4), batch_size=2, clip_seconds=0.25)


def tiny_arrays(n=4, seed=0):
    rng = np.random.default_rng(seed)
    clean = np.stack([speech_like(0.25, seed=seed + i).samples for i in range(n)]).astype(np.float32)
    noisy = (clean + 0.05 * rng.standard_normal(clean.shape)).astype(np.float32)
    return clean, noisy


class TestAdam:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, 2.0])}
        st = AdamState(m={"w": np.array([0.5, 0.5])}, v={"w": np.array([0.1, 0.1])}, step=3)
        before = p["w"].copy()
        st.m["w"][:] = 0
        st.v["w"][:] = 0
        adam_step(p, {"w": np.zeros(2)}, st, lr=0.1)
        np.testing.assert_array_equal(p["w"], before)

    def test_moments_decay(self):
        p = {"w": np.zeros(2)}
        st = AdamState(m={"w": np.ones(2)}, v={"w": np.ones(2)})
        adam_step(p, {"w": np.zeros(2)}, st, lr=0.1)
        np.testing.assert_allclose(st.m["w"], 0.9)
        np.testing.assert_allclose(st.v["w"], 0.999)

    def test_first_step(self):
        g = np.array([0.3, -2.0, 1e-3])
        p = {"w": np.zeros(3)}
        adam_step(p, {"w": g}, AdamState(), lr=0.01)
        np.testing.assert_allclose(p["w"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-9)

    def test_scalar_quadratic(self):
        p = {"w": np.array([0.0])}
        st = AdamState()
        for _ in range(100):
            adam_step(p, {"w": 2 * (p["w"] - 3)}, st, lr=0.1)
        assert abs(p["w"][0] - 3) < 0.1

    def test_non_finite_aborts_before_update(self):
        p = {"a": np.ones(2), "b": np.ones(2)}
        st = AdamState()
        with pytest.raises(NumericAbort, match="'b'"):
            adam_step(p, {"a": np.ones(2), "b": np.array([1.0, np.inf])}, st, lr=0.1)
        np.testing.assert_array_equal(p["a"], 1.0)
        assert st.step == 0


class TestConfig:
    def test_round_trip(self):
        cfg = TrainConfig.desk(lr=1e-3, seed=5, steps=7)
        assert config_from_text(config_to_text(cfg)) == cfg

    def test_lr_schedule(self):
        cfg = TrainConfig()
        for e in (0, 1, 10, 500):
            np.testing.assert_allclose(cfg.lr_at_epoch(e), 3e-4 * 0.999 ** e, rtol=1e-12)

    def test_comments_and_defaults(self):
        cfg = config_from_text("# comment\nlr = 0.01  # inline\n\nhidden = 8\n")
        assert cfg.lr == 0.01 and cfg.model.hidden == 8 and cfg.batch_size == 64

    @pytest.mark.parametrize("text", ["bogus = 1\n", "lr = 1\nlr = 2\n", "lr 1\n", "lr = fast\n", "lr = -1\n"])
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            config_from_text(text)

    def test_shipped_profiles_parse(self):
        from pathlib import Path
        root = Path(__file__).resolve().parents[1] / "configs"
        from rose_se.trainer import load_config
        assert load_config(root / "full.conf") == TrainConfig()
        desk = load_config(root / "desk.conf")
        assert (desk.model.depth, desk.model.hidden, desk.batch_size, desk.clip_seconds) == (3, 16, 4, 1.0)


class TestCheckpoint:
    def make(self, cfg=TINY, seed=0):
        w = ModelWeights.init(cfg.model, seed=seed)
        st = AdamState()
        adam_step({k: t.data for k, t in w.items()}, {k: np.ones_like(t.data) for k, t in w.items()}, st, 1e-3)
        return Checkpoint(cfg, 1, w, st)

    def test_round_trip_bytes(self, tmp_path):
        ck = self.make()
        save_checkpoint(ck, tmp_path / "a.ckpt")
        back = load_checkpoint(tmp_path / "a.ckpt")
        assert back.config == ck.config and back.step == 1
        for n in ck.weights:
            assert back.weights[n].data.tobytes() == ck.weights[n].data.tobytes()
            assert back.adam.m[n].tobytes() == ck.adam.m[n].astype(np.float32).tobytes()
        assert checkpoint_bytes(back) == checkpoint_bytes(ck)

    def test_forward_bit_exact(self, tmp_path):
        ck = self.make()
        x = np.random.default_rng(0).standard_normal(3000).astype(np.float32)
        save_checkpoint(ck, tmp_path / "a.ckpt")
        assert enhance_samples(load_checkpoint(tmp_path / "a.ckpt").weights, x).tobytes() == \
            enhance_samples(ck.weights, x).tobytes()

    def test_header_layout(self, tmp_path):
        raw = checkpoint_bytes(self.make())
        assert raw[:4] == b"ROSE"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:16], "little") == 1

    @pytest.mark.parametrize("corrupt, match", [
        (lambda b: b"X" + b[1:], "magic"),
        (lambda b: b[:4] + (2).to_bytes(4, "little") + b[8:], "version"),
        (lambda b: b[:-5], "truncated"),
        (lambda b: b[:18], "truncated"),
    ])
    def test_corruption_rejected(self, tmp_path, corrupt, match):
        p = tmp_path / "c.ckpt"
        p.write_bytes(corrupt(checkpoint_bytes(self.make())))
        with pytest.raises(FormatError, match=match):
            load_checkpoint(p)

    def test_default_model_count(self, tmp_path):
        from test_model import count_parameters
        cfg = TrainConfig()
        ck = Checkpoint(cfg, 0, ModelWeights.init(cfg.model), AdamState())
        p = tmp_path / "big.ckpt"
        save_checkpoint(ck, p)
        back = load_checkpoint(p)
        assert back.weights.parameter_count() == count_parameters(5, 48, 8, 2, 2, 2) == 37_354_974


class TestTraining:
    def test_deterministic_curve_and_checkpoint(self, tmp_path):
        clean, noisy = tiny_arrays()
        cfg = TINY.replace(steps=6)
        ck1, h1 = train_arrays(cfg, clean, noisy, tmp_path / "a.ckpt")
        ck2, h2 = train_arrays(cfg, clean, noisy, tmp_path / "b.ckpt")
        assert [r["total"] for r in h1] == [r["total"] for r in h2]
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert ck1.step == 6

    def test_epochs_decay_lr(self, tmp_path):
        clean, noisy = tiny_arrays()
        _, hist = train_arrays(TINY.replace(epochs=3, lr=1e-3, lr_decay=0.5), clean, noisy)
        # 4 pairs at batch 2: two steps per epoch
        assert [r["epoch"] for r in hist] == [0, 0, 1, 1, 2, 2]
        np.testing.assert_allclose([r["lr"] for r in hist], [1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4, 2.5e-4])

    def test_log_file(self, tmp_path):
        clean, noisy = tiny_arrays()
        train_arrays(TINY.replace(steps=3), clean, noisy, log_path=tmp_path / "log.csv")
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == "step,epoch,lr,mae,mag,spec,mfcc,total" and len(lines) == 4

    def test_non_finite_loss_aborts_with_context(self):
        clean, noisy = tiny_arrays()
        noisy[1, 5] = np.nan
        with pytest.raises(NumericAbort, match="step 1"):
            train_arrays(TINY.replace(steps=2, batch_size=4), clean, noisy)

    def test_single_pair_overfit_windows(self):
        # one pair at the desk profile: 50-step window means fall strictly over the first 500 steps
        clean, noisy = tiny_arrays(1, seed=3)
        cfg = TrainConfig.desk(steps=500, batch_size=1, clip_seconds=0.25)
        _, hist = train_arrays(cfg, clean, noisy)
        means = np.array([r["total"] for r in hist]).reshape(10, 50).mean(axis=1)
        assert np.all(np.diff(means) < 0), means

    def test_train_and_evaluate_from_manifest(self, tmp_path):
        m = synth_corpus([speech_like(0.5, seed=i) for i in range(2)], tmp_path / "corpus", "echo",
                         EchoParams(seed=1), seconds=0.5)
        cfg = TINY.replace(steps=2, clip_seconds=0.5)
        ck, _ = train(cfg, m.path, tmp_path / "m.ckpt")
        report = evaluate(load_checkpoint(tmp_path / "m.ckpt"), m.path, tmp_path / "r.csv")
        assert [c.clip for c in report.clips] == ["0000", "0001"]
        assert (tmp_path / "r.csv").read_text().splitlines()[-1].startswith("MEAN,")
