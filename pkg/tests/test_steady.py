import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steadywd.steady import (
    SimConfig,
    appendix_a_config,
    half_life,
    normalized_trace,
    predict_iid,
    predict_momentum_normalized,
    simulate,
    simulate_adam_betas,
    simulate_cosine_decay,
    tuc_estimate,
)


def expected_norm_sq(gammas, etas, c_sq):
    """Exact E|theta_t|^2 for theta_t = (1 - eta_t) theta_{t-1} - gamma_t u_t with E|u|^2 = c_sq."""
    out = np.empty(len(gammas))
    acc = 0.0
    for i, (g, e) in enumerate(zip(gammas, etas)):
        acc = (1.0 - e) ** 2 * acc + g * g * c_sq
        out[i] = acc
    return out


class TestPredictors:
    def test_reference_system(self):
        # per-element variance gamma C / (2 lam) = 1/2000 over 1000 dims
        eta = 1e-3
        gamma = math.sqrt(2 * eta / 2000)
        p = predict_iid(gamma, eta / gamma, 1000.0)
        assert p.norm == pytest.approx(0.71, abs=0.005)
        assert p.approx == pytest.approx(0.5, rel=1e-12)

    def test_zero_c(self):
        assert predict_iid(0.1, 0.1, 0.0).norm_sq == 0.0

    def test_hand_value(self):
        assert predict_iid(0.01, 0.1, 1.0).exact == pytest.approx(0.01 / (0.1 * 1.999), rel=1e-15)
        assert predict_iid(0.01, 0.1, 1.0).exact == pytest.approx(0.050025, rel=1e-6)

    @pytest.mark.parametrize("gamma,lam", [(1.0, 1.0), (2.0, 0.6), (0.1, 0.0)])
    def test_unstable(self, gamma, lam):
        with pytest.raises(ValueError, match="unstable decay"):
            predict_iid(gamma, lam, 1.0)

    def test_alpha_one_exact(self):
        g, eta, c = 0.02, 0.01, 50.0
        p = predict_momentum_normalized(g, eta, 1.0, c)
        assert p.exact == pytest.approx(g * g * c / (2 * eta - eta * eta), rel=1e-14)

    def test_truncation_vanishes(self):
        gaps = [predict_momentum_normalized(0.01, eta, 1.0, 1.0).truncation_gap for eta in (1e-2, 1e-4, 1e-6)]
        assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-5

    def test_reference_regime(self):
        gamma, eta, alpha = 0.01, 4e-4, 0.1
        assert eta / gamma == pytest.approx(0.04, rel=1e-12)
        p = predict_momentum_normalized(gamma, eta, alpha, 64.0, exact=False)
        assert p.norm_sq == pytest.approx(gamma**2 * 64 * 1.9 / (2 * alpha * eta), rel=1e-14)
        assert p.regime.endswith("approx")

    def test_domain(self):
        with pytest.raises(ValueError):
            predict_momentum_normalized(0.1, 0.0, 0.1, 1.0)
        with pytest.raises(ValueError):
            predict_momentum_normalized(0.1, 0.1, 1.5, 1.0)

    @settings(max_examples=100)
    @given(st.floats(1e-4, 0.5), st.floats(1e-6, 0.5), st.floats(0.01, 1.0))
    def test_exact_matches_fixed_point(self, gamma, eta, alpha):
        # stationary second moment of the joint (theta, m) linear system
        # theta' = (1-eta) theta - gamma m', m' = (1-alpha) m + alpha xi, E xi^2 = 1
        a, b = 1 - eta, 1 - alpha
        mm = alpha * alpha / (1 - b * b)
        # E[theta m'] = a E[theta m] b - gamma E[m'^2];  E[theta m] = a b E[theta m] - gamma mm
        tm = -gamma * mm / (1 - a * b)
        tt = (2 * a * gamma * b * (-tm) + gamma * gamma * mm) / (1 - a * a)
        # theta' = a theta - gamma (b m + alpha xi): cross term uses E[theta m] b
        got = predict_momentum_normalized(gamma, eta, alpha, 1.0).exact * alpha / (2 - alpha)
        assert got == pytest.approx(tt, rel=1e-9)

    def test_half_life(self):
        assert half_life(0.5) == pytest.approx(1.0)
        assert half_life(0.0) == math.inf


class TestSimConfig:
    def test_zero_steps(self):
        with pytest.raises(ValueError):
            SimConfig(dim=3, steps=0, gamma=0.1, lam=0.1)

    def test_requires_steady(self):
        with pytest.raises(ValueError, match="half-lives"):
            SimConfig(dim=3, steps=100, gamma=0.1, lam=0.01)
        with pytest.raises(ValueError, match="half-lives"):
            SimConfig(dim=3, steps=2000, gamma=0.1, eta=0.1, decay_mode="independent",
                      update_kind="momentum_rms_normalized", alpha=0.001)

    def test_unstable(self):
        with pytest.raises(ValueError, match="unstable"):
            SimConfig(dim=3, steps=10, gamma=1.0, lam=1.0, require_steady=False)

    def test_stride_only_for_iid(self):
        with pytest.raises(ValueError):
            SimConfig(dim=3, steps=100, gamma=0.1, eta=0.1, decay_mode="independent",
                      update_kind="momentum_gaussian", alpha=0.5, stride=10)

    def test_corrected_decay_tracks_gamma_squared(self):
        cfg = SimConfig(dim=3, steps=100, gamma=0.2, lam=0.5, decay_mode="corrected",
                        gamma_shape="cosine", require_steady=False)
        g = cfg.gammas()
        np.testing.assert_allclose(cfg.etas(g), 0.5 * g * g / 0.2)


class TestSimulate:
    def test_zero_gamma(self):
        res = simulate(SimConfig(dim=5, steps=50, gamma=0.0, lam=0.1, seeds=(0, 1)))
        assert not res.norm_trace.any()

    def test_deterministic(self):
        cfg = SimConfig(dim=20, steps=300, gamma=0.1, lam=0.5, seeds=(3, 4))
        np.testing.assert_array_equal(simulate(cfg).seed_norms, simulate(cfg).seed_norms)

    def test_seed_streams_independent_of_batch(self):
        one = simulate(SimConfig(dim=20, steps=300, gamma=0.1, lam=0.5, seeds=(4,)))
        two = simulate(SimConfig(dim=20, steps=300, gamma=0.1, lam=0.5, seeds=(3, 4)))
        np.testing.assert_array_equal(one.seed_norms[0], two.seed_norms[1])

    def test_iid_steady_small(self):
        eta = 0.02
        cfg = SimConfig(dim=200, steps=3000, gamma=0.05, lam=eta / 0.05, seeds=tuple(range(8)))
        res = simulate(cfg)
        pred = predict_iid(0.05, eta / 0.05, 200.0)
        assert res.steady_norm_sq_mean == pytest.approx(pred.norm_sq, rel=0.03)
        assert res.u_sq_mean == pytest.approx(200.0, rel=0.01)

    def test_cosine_matches_recurrence(self):
        cfg = appendix_a_config(0.01, dim=200, seeds=tuple(range(16)))
        res = simulate_cosine_decay(cfg)
        expected = expected_norm_sq(cfg.gammas(), cfg.etas(cfg.gammas()), 200.0)
        measured = np.mean(res.seed_norms**2, axis=0)
        sel = slice(len(expected) // 10, None, 25)
        np.testing.assert_allclose(measured[sel], expected[sel], rtol=0.06)
        assert res.final_mean < res.plateau_mean

    def test_cosine_final_ratio_of_reference_protocol(self):
        # the exact expectation recurrence puts the final window near 0.67 of the plateau
        cfg = appendix_a_config(1e-3)
        g = cfg.gammas()
        e = expected_norm_sq(g, cfg.etas(g), 1000.0) ** 0.5
        t = np.arange(1, cfg.steps + 1) / cfg.half_life
        plateau = e[(t >= 2) & (t <= 4)].mean()
        final = e[-max(1, round(0.05 * cfg.steps)):].mean()
        assert 0.6 < final / plateau < 0.75

    def test_constant_reduces_to_simulate(self):
        cfg = SimConfig(dim=50, steps=1200, gamma=0.05, lam=1.0, seeds=(0, 1, 2))
        np.testing.assert_array_equal(simulate_cosine_decay(cfg).seed_norms, simulate(cfg).seed_norms)

    def test_strided_matches_stepwise(self):
        base = appendix_a_config(0.01, dim=200, seeds=tuple(range(16)), cosine=True)
        strided = appendix_a_config(0.01, dim=200, seeds=tuple(range(16)), cosine=True, stride=5)
        g = strided.gammas()
        expected = expected_norm_sq(g, strided.etas(g), 200.0)[4::5]
        res = simulate(strided)
        np.testing.assert_allclose(np.mean(res.seed_norms**2, axis=0)[20:], expected[20:], rtol=0.06)
        assert simulate(base).plateau_mean == pytest.approx(res.plateau_mean, rel=0.03)

    def test_momentum_rms_unit_update(self):
        cfg = SimConfig(dim=64, steps=400, gamma=0.01, eta=0.05, decay_mode="independent",
                        update_kind="momentum_rms_normalized", alpha=0.5, seeds=(0,))
        res = simulate(cfg)
        assert res.u_sq_mean == pytest.approx(64.0, rel=1e-12)
        assert res.m_norm_cv is not None

    def test_autocorrelation_small(self):
        alpha = 0.2
        cfg = SimConfig(dim=500, steps=6000, gamma=0.0, eta=0.0, decay_mode="independent",
                        update_kind="momentum_rms_normalized", alpha=alpha, seeds=(0, 1),
                        max_lag=10, measure_window=0.9, require_steady=False)
        res = simulate(cfg)
        k = np.arange(11)
        np.testing.assert_allclose(res.autocorr, 500 * (1 - alpha) ** k, rtol=0.06)

    def test_adam_beta1_zero_unit_updates(self):
        cfg = SimConfig(dim=300, steps=4000, gamma=0.01, eta=0.01, decay_mode="independent",
                        update_kind="adam", seeds=(0, 1))
        res = simulate_adam_betas(0.0, 0.999, cfg)
        assert res.u_sq_mean == pytest.approx(300.0, rel=0.1)

    def test_adam_zero_gamma(self):
        cfg = SimConfig(dim=10, steps=100, gamma=0.0, eta=0.1, decay_mode="independent", update_kind="adam")
        assert not simulate_adam_betas(0.9, 0.999, cfg).norm_trace.any()


class TestTuc:
    def _run(self, alpha, gamma, eta=0.02, dim=300):
        steps = math.ceil(10 * max(half_life(eta), 1 / alpha))
        cfg = SimConfig(dim=dim, steps=steps, gamma=gamma, eta=eta, decay_mode="independent",
                        update_kind="momentum_rms_normalized", alpha=alpha, seeds=tuple(range(8)))
        return simulate(cfg)

    def test_alpha_one(self):
        res = self._run(1.0, 0.01)
        assert tuc_estimate(res, 1.0) == pytest.approx(0.01, rel=0.03)

    def test_zero_norm(self):
        res = simulate(SimConfig(dim=5, steps=10, gamma=0.0, lam=0.1, require_steady=False))
        assert tuc_estimate(res, 0.1) == 0.0

    def test_exact_inversion(self):
        res = self._run(0.5, 0.02)
        assert tuc_estimate(res, 0.5, exact=True) == pytest.approx(0.02 * math.sqrt(3), rel=0.03)


class TestNormalizedTrace:
    def test_plateau_is_one(self):
        cfg = appendix_a_config(0.01, dim=100, seeds=tuple(range(8)))
        res = simulate_cosine_decay(cfg)
        out = normalized_trace(res, np.array([2.5, 3.0, 3.5, 4.0]))
        assert np.all(np.abs(out - 1.0) < 0.05)
