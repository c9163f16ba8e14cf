import json
import math

import numpy as np
import pytest

from hypermsg import autodiff as ad
from hypermsg import channel, codes, hyperdec, tanner, training
from hypermsg.hyperdec import HyperConfig
from hypermsg.training import TrainConfig


def small_hyper(graph, seed=0, damping=None):
    dec = hyperdec.new_decoder(graph, HyperConfig(f_hidden=(8,), g_hidden=(4,)), seed=seed,
                               damping=damping)
    return training.HyperModel(dec, iterations=3, damped=True)


class TestTrainConfig:
    def test_round_trip(self):
        cfg = TrainConfig(lr=0.01, snr_range_db=(2, 3), seeds=(1, 2), normalization="frame")
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_keys_ignored(self):
        assert TrainConfig.from_dict({"lr": 0.5, "colour": "red"}).lr == 0.5

    @pytest.mark.parametrize("kwargs", [{"lr": 0}, {"batch_size": 0}, {"steps": -1},
                                        {"snr_range_db": (5, 1)}, {"normalization": "edge"}])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestMakeBatch:
    def test_all_zero_targets_and_shapes(self, hamming, rng):
        llr, targets, snr = training.make_batch(hamming, 16, (1.0, 8.0), rng)
        assert llr.shape == targets.shape == (16, 7)
        assert not targets.any()
        assert np.all((snr >= 1.0) & (snr <= 8.0))

    def test_llr_moments(self, hamming, rng):
        snr = 3.0
        sigma = channel.sigma_from_ebn0(snr, hamming.code_rate)
        llr, _, _ = training.make_batch(hamming, 40000, (snr, snr), rng)
        assert llr.mean() == pytest.approx(2 / sigma**2, rel=0.02)
        assert llr.var() == pytest.approx(4 / sigma**2, rel=0.02)

    def test_accepts_graph(self, hamming_graph, rng):
        assert training.make_batch(hamming_graph, 2, (3, 3), rng)[0].shape == (2, 7)


class TestMultiloss:
    def test_zero_marginals_give_ln2(self):
        tape = ad.Tape()
        o = [tape.const(np.zeros((4, 7))) for _ in range(3)]
        assert training.multiloss(o, np.zeros((4, 7))).item() == pytest.approx(3 * math.log(2))

    def test_limits(self):
        tape = ad.Tape()
        big = tape.const(np.full((1, 2), 40.0))
        assert training.multiloss([big], np.zeros((1, 2))).item() == pytest.approx(0.0, abs=1e-15)
        assert training.multiloss([big], np.ones((1, 2))).item() == pytest.approx(40.0)

    def test_normalizations(self, rng):
        tape = ad.Tape()
        o = [tape.const(rng.normal(size=(5, 7)))]
        t = np.zeros((5, 7))
        per_bit = training.multiloss(o, t, "bit").item()
        assert training.multiloss(o, t, "frame").item() == pytest.approx(7 * per_bit)
        assert training.multiloss(o, t, "none").item() == pytest.approx(35 * per_bit)

    def test_empty_and_unknown(self):
        with pytest.raises(ValueError):
            training.multiloss([], np.zeros(3))
        tape = ad.Tape()
        with pytest.raises(ValueError):
            training.multiloss([tape.const(np.zeros(3))], np.zeros(3), "edge")


class TestTrain:
    def test_zero_steps_keep_parameters(self, hamming_graph):
        model = small_hyper(hamming_graph)
        before = model.store.copy()
        report = training.train(model, TrainConfig(steps=0))
        assert report.losses == []
        for name in before.names():
            assert np.array_equal(before[name], model.store[name])

    def test_deterministic(self, hamming_graph):
        cfg = TrainConfig(steps=5, batch_size=8, lr=1e-3)
        a = training.train(small_hyper(hamming_graph), cfg, seed=4)
        b = training.train(small_hyper(hamming_graph), cfg, seed=4)
        assert a.losses == b.losses

    def test_step_zero_loss_is_bp_level(self, hamming_graph):
        """At BP-equivalent initialization the first loss is a finite, small per-bit BCE."""
        report = training.train(small_hyper(hamming_graph), TrainConfig(steps=1, batch_size=64), seed=0)
        assert 0.0 < report.losses[0] < 3 * math.log(2)

    def test_frame_normalization_scales_loss(self, hamming_graph):
        bit = training.train(small_hyper(hamming_graph), TrainConfig(steps=1), seed=2).losses[0]
        frame = training.train(small_hyper(hamming_graph), TrainConfig(steps=1, normalization="frame"),
                               seed=2).losses[0]
        assert frame == pytest.approx(7 * bit)

    def test_damping_stays_in_unit_interval(self, hamming_graph):
        model = small_hyper(hamming_graph, damping=0.98)
        report = training.train(model, TrainConfig(steps=20, lr=0.2, batch_size=8), seed=1)
        assert 0.0 <= report.final_damping <= 1.0
        assert 0.0 <= float(model.store["damping"]) <= 1.0

    def test_damping_receives_gradient(self, hamming_graph, rng):
        model = small_hyper(hamming_graph, damping=0.5)
        tape = ad.Tape()
        leaves = model.store.leaves(tape)
        batch = model.sample(TrainConfig(batch_size=32), rng)
        grads = tape.gradients(model.loss(tape, leaves, batch), leaves)
        assert grads["damping"] != 0.0

    def test_weighted_bp_no_worse_than_bp(self):
        graph = tanner.build(codes.get_code("repetition-3"))
        model = training.WeightedBPModel(graph, iterations=3)
        cfg = TrainConfig(steps=100, lr=1e-2, batch_size=64, eval_every=20, val_frames=4000,
                          val_snr_db=(2.0, 4.0))
        report = training.train(model, cfg, seed=0)
        initial_ber = report.val_trace[0][1]
        assert report.best_val <= initial_ber
        assert model.validation_error(model.validation_set(cfg, 0)) == report.best_val

    def test_divergence_is_reported_not_raised(self, hamming_graph):
        model = small_hyper(hamming_graph)
        before = model.store.copy()
        model.loss = lambda tape, params, batch, normalization="bit": ad.sum_op(params["theta_f"]) * np.nan
        report = training.train(model, TrainConfig(steps=10), seed=0)
        assert report.diverged and report.diverged_at == 0
        assert model.store.is_finite()
        assert np.array_equal(model.store["theta_f"], before["theta_f"])

    def test_checkpoint_and_report_files(self, hamming_graph, tmp_path):
        model = small_hyper(hamming_graph)
        ckpt = tmp_path / "m.npz"
        report = training.train(model, TrainConfig(steps=3, batch_size=4), seed=0, checkpoint=ckpt)
        store, meta = ad.load_checkpoint(ckpt)
        assert meta["variant"] == "hyper_damped" and meta["train"]["steps"] == 3
        np.testing.assert_array_equal(store["theta_f"], model.store["theta_f"])
        report.write(tmp_path / "loss.csv", tmp_path / "run.json")
        lines = (tmp_path / "loss.csv").read_text().splitlines()
        assert lines[0] == "step,loss" and len(lines) == 4
        assert json.loads((tmp_path / "run.json").read_text())["steps_recorded"] == 3
