import numpy as np
import pytest

from intnacl.data import make_blobs
from intnacl.encoder import EncoderConfig, encode
from intnacl.errors import CheckpointError, ConfigError, NumericalError
from intnacl.losses import preset
from intnacl.training import AdamState, TrainConfig, adam_step, checkpoint_load, checkpoint_save, train_encoder

SMALL_ENC = EncoderConfig(input_dim=4, hidden_dims=(8,), embed_dim=4)


def small_run(epochs=3, loss="simclr", seed=0, **kw):
    ds = make_blobs(3, 4, 12, 0.15, 0)
    cfg = TrainConfig(epochs=epochs, batch_size=8, learning_rate=1e-2, seed=seed, loss=preset(loss), **kw)
    return ds, train_encoder(ds, SMALL_ENC, cfg)


class TestAdam:
    def test_zero_gradient(self, rng):
        p = [rng.standard_normal((3, 2)), rng.standard_normal(2)]
        new, state = adam_step(p, [np.zeros((3, 2)), np.zeros(2)], AdamState.zeros_like(p), 1e-3)
        for a, b in zip(new, p):
            np.testing.assert_array_equal(a, b)
        assert all(not m.any() for m in state.m) and all(not v.any() for v in state.v)
        assert state.t == 1

    def test_first_step_is_sign(self, rng):
        p = [rng.standard_normal(50)]
        g = [rng.standard_normal(50)]
        new, _ = adam_step(p, g, AdamState.zeros_like(p), 0.1)
        want = -0.1 * np.sign(g[0]) * np.abs(g[0]) / (np.abs(g[0]) + 1e-8)
        np.testing.assert_allclose(new[0] - p[0], want, rtol=1e-12)
        np.testing.assert_allclose(new[0] - p[0], -0.1 * np.sign(g[0]), atol=1e-7)

    def test_second_step_closed_form(self):
        p, g1, g2 = [np.array([1.0])], [np.array([2.0])], [np.array([-1.0])]
        lr, (b1, b2) = 0.01, (0.9, 0.999)
        p1, s = adam_step(p, g1, AdamState.zeros_like(p), lr)
        p2, _ = adam_step(p1, g2, s, lr)
        m = (b1 * (1 - b1) * 2.0 + (1 - b1) * -1.0) / (1 - b1**2)
        v = (b2 * (1 - b2) * 4.0 + (1 - b2) * 1.0) / (1 - b2**2)
        assert p2[0][0] == pytest.approx(p1[0][0] - lr * m / (np.sqrt(v) + 1e-8), abs=1e-15)

    def test_inputs_not_mutated(self, rng):
        p, g = [rng.standard_normal(4)], [rng.standard_normal(4)]
        p0, state = p[0].copy(), AdamState.zeros_like(p)
        adam_step(p, g, state, 0.1)
        np.testing.assert_array_equal(p[0], p0)
        assert state.t == 0 and not state.m[0].any()

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            adam_step([np.ones(3)], [np.ones(2)], AdamState.zeros_like([np.ones(3)]), 0.1)

    def test_identical_trajectories(self, rng):
        p0 = [rng.standard_normal(5)]
        grads = [rng.standard_normal(5) for _ in range(10)]

        def run():
            p, s = p0, AdamState.zeros_like(p0)
            for g in grads:
                p, s = adam_step(p, [g], s, 0.05)
            return p[0]

        np.testing.assert_array_equal(run(), run())


class TestTrainConfig:
    @pytest.mark.parametrize("bad", [dict(learning_rate=0.0), dict(learning_rate=-1.0), dict(epochs=0),
                                     dict(batch_size=1), dict(optimizer="rmsprop"), dict(betas=(1.0, 0.9))])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)

    def test_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.betas, c.eps, c.optimizer) == (3e-4, (0.9, 0.999), 1e-8, "adam")

    def test_dict_round_trip(self):
        c = TrainConfig(epochs=3, loss=preset("intnacl_fig1"))
        assert TrainConfig.from_dict(c.to_dict()) == c


class TestTrainEncoder:
    def test_loss_decreases(self):
        ds = make_blobs(3, 8, 40, 0.15, 0)
        cfg = TrainConfig(epochs=50, batch_size=32, learning_rate=3e-3, loss=preset("simclr"))
        _, hist = train_encoder(ds, EncoderConfig(input_dim=8, hidden_dims=(32,), embed_dim=8), cfg)
        assert hist.epoch_loss[-1] < hist.epoch_loss[0]

    def test_history_shape(self, tmp_path):
        _, (_, hist) = small_run(epochs=4)
        assert len(hist.epoch_loss) == len(hist.epoch_seconds) == 4
        assert hist.steps == 4 * (36 // 8)
        assert hist.wall_clock > 0
        assert hist.seeds == {"train": 0, "encoder": 0, "dataset": 0}
        hist.to_csv(tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss,seconds" and len(lines) == 5
        assert float(lines[1].split(",")[1]) == hist.epoch_loss[0]

    def test_attack_gating(self):
        _, (_, hist) = small_run(epochs=2, loss="debiased")
        assert hist.attack_calls == 0
        _, (_, hist) = small_run(epochs=2, loss="intnacl_fig1")
        assert hist.attack_calls == hist.steps > 0

    def test_deterministic(self):
        _, (a, ha) = small_run(epochs=2, loss="intnacl_fig1")
        _, (b, hb) = small_run(epochs=2, loss="intnacl_fig1")
        for x, y in zip(a.params, b.params):
            np.testing.assert_array_equal(x, y)
        assert ha.epoch_loss == hb.epoch_loss

    def test_seed_changes_result(self):
        _, (a, _) = small_run(epochs=1, seed=0)
        _, (b, _) = small_run(epochs=1, seed=1)
        assert not np.array_equal(a.params[0], b.params[0])

    def test_sgd(self):
        _, (enc, hist) = small_run(epochs=2, optimizer="sgd")
        assert np.all(np.isfinite(hist.epoch_loss))

    def test_non_finite_loss_aborts(self):
        ds = make_blobs(3, 4, 12, 0.15, 0)
        cfg = TrainConfig(epochs=3, batch_size=8, learning_rate=1e300, optimizer="sgd")
        with pytest.raises(NumericalError, match=r"epoch \d+, batch \d+"):
            train_encoder(ds, SMALL_ENC, cfg)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            train_encoder(make_blobs(3, 5, 4, 0.1, 0), SMALL_ENC, TrainConfig(epochs=1))

    def test_initial_encoder_not_mutated(self):
        from intnacl.encoder import init
        start = init(SMALL_ENC)
        before = [p.copy() for p in start.params]
        ds = make_blobs(3, 4, 12, 0.15, 0)
        train_encoder(ds, SMALL_ENC, TrainConfig(epochs=1, batch_size=8, learning_rate=1e-2), encoder=start)
        for p, q in zip(start.params, before):
            np.testing.assert_array_equal(p, q)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        _, (enc, _) = small_run(epochs=1)
        x = rng.standard_normal((5, 4))
        checkpoint_save(enc, tmp_path / "e.json")
        back = checkpoint_load(tmp_path / "e.json")
        np.testing.assert_array_equal(encode(back, x).data, encode(enc, x).data)
        assert back.config == enc.config

    def test_truncated(self, tmp_path):
        _, (enc, _) = small_run(epochs=1)
        path = tmp_path / "e.json"
        checkpoint_save(enc, path)
        path.write_text(path.read_text()[:40])
        with pytest.raises(CheckpointError):
            checkpoint_load(path)
