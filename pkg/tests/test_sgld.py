"""SGLD steps, schedules, stationarity oracles and the training procedures."""

import math

import numpy as np
import pytest

from dppacbayes.data import SynthConfig, synth_generate
from dppacbayes.model import MlpArchitecture, grad_bounded_xent, init_params
from dppacbayes.sgld import (
    AnnealSchedule,
    EnergySpec,
    EpochPlan,
    IterateSink,
    SgldConfig,
    SgldDivergenceError,
    anneal_tau,
    energy_gradient,
    one_stage_train,
    read_checkpoint,
    run_epochs,
    sgld_step,
    two_stage_plan,
    two_stage_train,
    write_checkpoint,
)

ARCH = MlpArchitecture((4, 100, 2))


@pytest.fixture(scope="module")
def synth():
    return synth_generate(SynthConfig(seed=3))


def discretized_variance(eta, curvature):
    """Stationary variance of w <- (1 - eta*k/2) w + sqrt(eta) xi."""
    a = 1 - eta * curvature / 2
    return eta / (1 - a * a)


def quadratic_chain(eta, tau, n_steps, w, rng):
    """Run sgld_step on U(w) = tau |w|^2 / 2; every coordinate is its own chain."""
    trace_sum = np.zeros_like(w)
    trace_sq = np.zeros_like(w)
    for _ in range(n_steps):
        w = sgld_step(w, tau * w, eta, rng)
        trace_sum += w
        trace_sq += w * w
    return trace_sum / n_steps, trace_sq / n_steps


class TestSchedules:
    def test_learning_rate(self):
        cfg = SgldConfig()
        assert cfg.learning_rate(1) == 1e-3
        assert cfg.learning_rate(4) == 1e-3 * 4 ** -0.5
        for t in (1, 7, 100, 1000):
            assert SgldConfig(a0=1e-5).learning_rate(t) == 1e-5 * float(t) ** -0.5
        with pytest.raises(ValueError):
            cfg.learning_rate(0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SgldConfig(a0=0.0)
        with pytest.raises(ValueError):
            SgldConfig(batch_size=0)
        with pytest.raises(ValueError):
            SgldConfig(seed=-1)

    def test_anneal(self):
        s = AnnealSchedule(1.0, 3.0, 100)
        assert anneal_tau(s, 100) == 1.0
        assert anneal_tau(s, 200) == 3.0
        assert anneal_tau(s, 150) == 2.0
        s2 = AnnealSchedule(0.1, 0.7, 3)
        assert anneal_tau(s2, 3) == 0.1 and anneal_tau(s2, 6) == 0.7
        vals = [anneal_tau(s, t) for t in range(100, 201)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        for t in (99, 201):
            with pytest.raises(ValueError):
                anneal_tau(s, t)

    def test_two_stage_plan(self):
        cfg = SgldConfig(epochs=10)
        w0 = np.zeros(3)
        plan = two_stage_plan(cfg, 1.0, 5.0, 2.0, 4, 10, w0)
        assert len(plan) == 10
        assert plan.lrs == [cfg.learning_rate(k) for k in range(1, 11)]
        taus = [e.tau for e in plan.energies]
        assert taus[:4] == [2.0, 3.0, 4.0, 5.0] and all(t == 5.0 for t in taus[4:])
        assert all(e.gamma == 2.0 and e.anchor is w0 for e in plan.energies)

    def test_energy_spec(self):
        with pytest.raises(ValueError):
            EnergySpec(-1.0)
        with pytest.raises(ValueError):
            EnergySpec(1.0, anchor=np.zeros(2))
        with pytest.raises(ValueError):
            EnergySpec(1.0, anchor=np.zeros(2), gamma=0.0)


class TestStep:
    def test_brownian_when_no_drift(self):
        rng = np.random.default_rng(0)
        w = np.full(200_000, 3.0)
        out = sgld_step(w, np.zeros_like(w), 0.04, rng)
        d = out - w
        assert abs(d.mean()) < 4 * 0.2 / math.sqrt(d.size)
        assert d.var() == pytest.approx(0.04, rel=0.02)

    def test_deterministic_limit(self):
        w = np.array([1.0, -2.0, 0.5])
        g = np.array([0.3, 0.1, -4.0])
        np.testing.assert_array_equal(sgld_step(w, g, 1e-3, None), w - 0.5e-3 * g)

    def test_errors(self):
        w = np.zeros(3)
        with pytest.raises(SgldDivergenceError):
            sgld_step(w, np.array([0.0, np.nan, 0.0]), 0.1, None)
        with pytest.raises(SgldDivergenceError):
            sgld_step(np.array([1e308]), np.array([-1e308]), 10.0, None)
        with pytest.raises(ValueError):
            sgld_step(w, w, 0.0, None)

    def test_energy_gradient(self):
        rng = np.random.default_rng(1)
        arch = MlpArchitecture((4, 8, 2))
        w = init_params(arch, rng)
        X, y = rng.standard_normal((10, 4)), rng.integers(1, 3, 10)
        anchor = rng.standard_normal(arch.n_params)
        g = energy_gradient(arch, w, EnergySpec(3.0, anchor, 2.0), X, y)
        np.testing.assert_allclose(g, 3.0 * grad_bounded_xent(arch, w, X, y) + 2.0 * (w - anchor), rtol=1e-14)
        np.testing.assert_array_equal(energy_gradient(arch, w, EnergySpec(0.0), X, y), 0.0)


class TestStationarity:
    def test_quadratic_single_chain(self):
        tau, eta = 1.0, 0.1
        rng = np.random.default_rng(2)
        w = rng.standard_normal(1) * math.sqrt(discretized_variance(eta, tau))
        mean, sq = quadratic_chain(eta, tau, 1_000_000, w, rng)
        var = float(sq[0] - mean[0] ** 2)
        assert var == pytest.approx(discretized_variance(eta, tau), rel=0.05)
        assert discretized_variance(eta, tau) == pytest.approx(1 / (tau * (1 - eta * tau / 4)), rel=1e-12)

    def test_quadratic_small_step(self):
        # eta * tau = 1e-3: a single chain mixes too slowly, so average 100 chains
        tau = 4.0
        eta = 1e-3 / tau
        rng = np.random.default_rng(3)
        w = rng.standard_normal(100) * math.sqrt(discretized_variance(eta, tau))
        mean, sq = quadratic_chain(eta, tau, 1_000_000, w, rng)
        var = float(np.mean(sq - mean**2))
        assert var == pytest.approx(discretized_variance(eta, tau), rel=0.05)
        assert var == pytest.approx(1 / tau, rel=0.05)

    def test_anchored_gaussian(self):
        arch = MlpArchitecture((1, 1, 2))
        rng = np.random.default_rng(4)
        gamma, eta = 2.0, 0.05
        anchor = rng.standard_normal(arch.n_params)
        energy = EnergySpec(0.0, anchor, gamma)
        X, y = np.zeros((1, 1)), np.array([1])
        w = anchor + 5.0
        for _ in range(1000):
            w = sgld_step(w, energy_gradient(arch, w, energy, X, y), eta, rng)
        n = 100_000
        tot = np.zeros_like(w)
        sq = np.zeros_like(w)
        for _ in range(n):
            w = sgld_step(w, energy_gradient(arch, w, energy, X, y), eta, rng)
            tot += w
            sq += (w - anchor) ** 2
        mean = tot / n
        target = discretized_variance(eta, gamma)
        a = 1 - eta * gamma / 2
        se = math.sqrt(target / n * (1 + a) / (1 - a))
        assert np.all(np.abs(mean - anchor) < 3 * se)
        var = sq / n - (mean - anchor) ** 2
        np.testing.assert_allclose(var, target, rtol=0.10)
        assert target == pytest.approx(1 / gamma / (1 - eta * gamma / 4), rel=1e-12)


class TestSink:
    def test_window(self):
        sink = IterateSink(3)
        for e in range(1, 6):
            sink.push(e, np.full(2, e))
        assert sink.epochs == [3, 4, 5]
        np.testing.assert_array_equal(sink.samples()[:, 0], [3, 4, 5])

    def test_copies(self):
        sink = IterateSink(2)
        v = np.zeros(2)
        sink.push(1, v)
        v[0] = 9
        assert sink.samples()[0, 0] == 0

    def test_checkpoint_round_trip(self, tmp_path):
        v = np.random.default_rng(5).standard_normal(17)
        p = write_checkpoint(tmp_path / "a.bin", v)
        raw = p.read_bytes()
        assert raw[:4] == b"SGLD" and len(raw) == 16 + 8 * 17
        np.testing.assert_array_equal(read_checkpoint(p), v)
        sink = IterateSink(2)
        sink.push(7, v)
        (out,) = sink.dump(tmp_path / "d")
        np.testing.assert_array_equal(read_checkpoint(out), v)

    def test_checkpoint_errors(self, tmp_path):
        (tmp_path / "bad.bin").write_bytes(b"XXXX" + bytes(12))
        with pytest.raises(ValueError):
            read_checkpoint(tmp_path / "bad.bin")
        p = write_checkpoint(tmp_path / "t.bin", np.ones(4))
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ValueError):
            read_checkpoint(p)


class TestOneStage:
    def test_single_epoch_full_batch_is_gradient_descent(self, synth):
        train = synth[0]
        w0 = init_params(ARCH, np.random.default_rng(6))
        cfg = SgldConfig(a0=1e-3, batch_size=len(train.labels), epochs=1, seed=1)
        res = one_stage_train(ARCH, train, 100.0, cfg, noise=False, params0=w0)
        g = grad_bounded_xent(ARCH, w0, train.inputs, train.labels)
        np.testing.assert_allclose(res.params, w0 - 0.5e-3 * 100.0 * g, rtol=0, atol=1e-15)

    def test_deterministic(self, synth):
        cfg = SgldConfig(epochs=20, seed=123)
        a = one_stage_train(ARCH, synth[0], 30.0, cfg)
        b = one_stage_train(ARCH, synth[0], 30.0, cfg)
        np.testing.assert_array_equal(a.params, b.params)
        np.testing.assert_array_equal(a.sink.samples(), b.sink.samples())
        c = one_stage_train(ARCH, synth[0], 30.0, SgldConfig(epochs=20, seed=124))
        assert not np.array_equal(a.params, c.params)

    def test_on_epoch_path_matches(self, synth):
        cfg = SgldConfig(epochs=15, seed=9)
        seen = []
        a = one_stage_train(ARCH, synth[0], 10.0, cfg, window=4, on_epoch=lambda t, w, s: seen.append(t))
        b = one_stage_train(ARCH, synth[0], 10.0, cfg, window=4)
        assert seen == list(range(1, 16))
        np.testing.assert_array_equal(a.params, b.params)
        assert a.sink.epochs == [12, 13, 14, 15]

    def test_true_labels_fit_at_tau_100(self, synth):
        res = one_stage_train(ARCH, synth[0], 100.0, SgldConfig(seed=0))
        assert min(h["train_err01"] for h in res.history) == 0.0
        assert len(res.history) == 1000

    def test_divergence_reported_with_epoch(self, synth):
        train = synth[0]
        bad = type(train)(np.where(np.arange(train.inputs.size).reshape(train.inputs.shape) == 5, np.nan,
                                   train.inputs), train.labels, "train", "true")
        with pytest.raises(SgldDivergenceError, match="epoch 1"):
            one_stage_train(ARCH, bad, 1.0, SgldConfig(epochs=2))


class TestTwoStage:
    def test_privacy_and_outputs(self, synth):
        res = two_stage_train(ARCH, synth[0], 1.0, 100.0, 2.0, SgldConfig(epochs=30, seed=2), 10, window=5)
        assert res.privacy.epsilon == pytest.approx(0.16, rel=1e-15)
        assert res.w0.shape == (ARCH.n_params,)
        assert not res.w0.flags.writeable
        assert res.sink.epochs == list(range(36, 41))
        stages = [h["stage"] for h in res.history]
        assert stages.count("stage-one") == 10 and stages.count("stage-two") == 30
        assert [h["tau"] for h in res.history[10:21]][-1] == 100.0

    def test_validation(self, synth):
        with pytest.raises(ValueError):
            two_stage_train(ARCH, synth[0], 1.0, 2.0, 2.0, SgldConfig(epochs=10), 10)
        with pytest.raises(ValueError):
            two_stage_train(ARCH, synth[0], 1.0, 2.0, 0.0, SgldConfig(epochs=20), 10)

    def test_vanishing_anchor_matches_restarted_one_stage(self, synth):
        # tau1 = tau2 and gamma -> 0: the same chain as one stage with the schedule restarted
        train = synth[0]
        T1, T2, tau = 5, 12, 20.0
        cfg = SgldConfig(epochs=T2, seed=77)
        w_init = init_params(ARCH, np.random.default_rng(8))
        res = two_stage_train(ARCH, train, tau, tau, 1e-300, cfg, T1, noise=False, params0=w_init)
        lrs = [cfg.learning_rate(t) for t in range(1, T1 + 1)] + [cfg.learning_rate(k) for k in range(1, T2 + 1)]
        from dppacbayes.sgld import _streams
        _, batch_rng, _ = _streams(cfg.seed)
        ref = run_epochs(ARCH, train, w_init, EpochPlan(lrs, [EnergySpec(tau)] * len(lrs)), cfg.batch_size,
                         batch_rng, None)
        np.testing.assert_allclose(res.params, ref, rtol=0, atol=1e-12)

    def test_deterministic(self, synth):
        cfg = SgldConfig(epochs=20, seed=5)
        a = two_stage_train(ARCH, synth[0], 1.0, 50.0, 2.0, cfg, 5)
        b = two_stage_train(ARCH, synth[0], 1.0, 50.0, 2.0, cfg, 5)
        np.testing.assert_array_equal(a.params, b.params)
        np.testing.assert_array_equal(a.w0, b.w0)
