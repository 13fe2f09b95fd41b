import json
import math

import numpy as np
import pytest

from oracles import balanced_ce_loop, central_diff, grid_minimum
from phonecal.calib import (CalibrationTransform, apply, fit, gradient, hessian, objective)
from phonecal.core import flat_prior
from phonecal.metrics import h_mc
from phonecal.pooling import TrialSet
from phonecal.synth import SynthConfig, generate


def random_trials(seed, n=3, m=30, scale=2.0):
    rng = np.random.default_rng(seed)
    labels = np.r_[np.arange(n), rng.integers(0, n, m - n)]
    llk = rng.normal(size=(m, n)) * scale
    llk[np.arange(m), labels] += scale
    return TrialSet(labels, llk, np.ones(m, int))


class TestApply:
    def test_identity(self):
        v = np.array([0.3, -1.0])
        np.testing.assert_array_equal(apply(CalibrationTransform.identity(2), v), v)

    def test_sum_pooling_scale(self):
        np.testing.assert_allclose(apply(CalibrationTransform(0.162, [0, 0]), [10, 0]), [1.62, 0])

    def test_arithmetic(self):
        np.testing.assert_array_equal(apply(CalibrationTransform(2, [1, -1]), [0.5, 0.5]), [2, 0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            apply(CalibrationTransform(1, [0, 0, 0]), [1.0, 2.0])

    def test_json_round_trip(self, tmp_path):
        t = CalibrationTransform(0.1234567890123, [0.1, -0.30000000000000004, 0.2])
        t.save(tmp_path / "t.json", ["a", "b", "c"])
        back = CalibrationTransform.load(tmp_path / "t.json", ["a", "b", "c"])
        assert back.alpha == t.alpha and np.array_equal(back.beta, t.beta)
        doc = json.loads((tmp_path / "t.json").read_text())
        assert set(doc) == {"alpha", "beta", "phones"}

    def test_json_phone_guard(self, tmp_path):
        CalibrationTransform(1.0, [0, 0]).save(tmp_path / "t.json", ["a", "b"])
        with pytest.raises(ValueError, match="phone set"):
            CalibrationTransform.load(tmp_path / "t.json", ["a", "c"])


class TestObjective:
    def test_matches_loop_oracle(self):
        ts = random_trials(1, n=4, m=25)
        prior = [0.1, 0.2, 0.3, 0.4]
        theta = np.array([0.6, 0.2, -0.1, 0.5, 0.0])
        assert objective(theta, ts, prior) == pytest.approx(
            balanced_ce_loop(ts.llk, ts.labels, 0.6, theta[1:], prior), rel=1e-13)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_finite_differences(self, seed):
        ts = random_trials(seed, n=3)
        rng = np.random.default_rng(1000 + seed)
        theta = np.r_[rng.uniform(0.1, 2), rng.normal(size=3)]
        g = gradient(theta, ts)
        fd = central_diff(lambda x: objective(x, ts), theta)
        assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12) < 1e-5

    def test_hessian_finite_differences(self):
        ts = random_trials(3, n=4)
        theta = np.array([0.8, 0.1, -0.4, 0.2, 0.0])
        h = hessian(theta, ts)
        fd = np.stack([central_diff(lambda x: gradient(x, ts)[i], theta) for i in range(5)])
        np.testing.assert_allclose(h, fd, atol=1e-7)

    def test_zero_llk_alpha_gradient_exactly_zero(self):
        ts = TrialSet([0, 1, 2, 1], np.zeros((4, 3)), np.ones(4, int))
        assert gradient([1.3, 0.2, -0.5, 0.1], ts)[0] == 0.0

    def test_ridge_gradient(self):
        ts = random_trials(2)
        theta = np.array([1.5, 0.3, -0.2, 0.4])
        g = gradient(theta, ts, ridge=0.5)
        fd = central_diff(lambda x: objective(x, ts, ridge=0.5), theta)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


class TestFit:
    def test_gradient_vanishes_at_optimum(self):
        ts = random_trials(4)
        res = fit(ts)
        assert res.converged
        assert np.max(np.abs(gradient(res.transform.params, ts))) < 1e-6

    def test_beta_is_zero_mean(self):
        res = fit(random_trials(5))
        assert abs(res.transform.beta.mean()) < 1e-15

    def test_calibrated_input(self):
        cfg = SynthConfig(rho=1.0, duration_law=("uniform", 1, 12), n_trials_per_class=500, seed=21)
        ts = generate(cfg).pooled("mean")
        res = fit(ts)
        assert 0.9 <= res.transform.alpha <= 1.1
        assert res.h_mc_after >= 0.98 * res.h_mc_before

    def test_rescaled_input(self):
        cfg = SynthConfig(rho=1.0, duration_law=("uniform", 1, 12), n_trials_per_class=300, seed=22)
        ts = generate(cfg).pooled("mean")
        base = fit(ts)
        scaled = fit(ts.with_llk(ts.llk * 10))
        assert scaled.transform.alpha == pytest.approx(base.transform.alpha / 10, rel=0.05)
        assert abs(scaled.h_mc_after - base.h_mc_after) < 1e-6

    def test_grid_oracle(self):
        """Exhaustive grid over alpha in [0,3] (1e-3) and beta in [-2,2]^2 (1e-2)."""
        rng = np.random.default_rng(0)
        labels = np.repeat([0, 1, 2], 4)
        llk = rng.normal(size=(12, 3))
        llk[np.arange(12), labels] += 1.0
        llk[:, 0] += 0.5
        ts = TrialSet(labels, llk, np.ones(12, int))
        res = fit(ts)
        beta = res.transform.beta - res.transform.beta[2]
        alphas = np.round(np.arange(0, 3001) * 1e-3, 3)
        betas = np.round(np.arange(-200, 201) * 1e-2, 2)
        g_val, g_alpha, g_b0, g_b1 = grid_minimum(llk, labels, alphas, betas, betas)
        assert 0 < g_alpha < 3 and -2 < g_b0 < 2 and -2 < g_b1 < 2  # interior
        assert abs(res.transform.alpha - g_alpha) <= 1e-3
        assert abs(beta[0] - g_b0) <= 1e-2
        assert abs(beta[1] - g_b1) <= 1e-2
        assert res.h_mc_after <= g_val + 1e-12

    def test_monotone_improvement(self):
        for seed in range(10):
            ts = random_trials(seed, n=5, m=60)
            res = fit(ts)
            assert res.h_mc_after <= h_mc(ts).h_mc + 1e-9

    def test_multi_start_agreement(self):
        ts = random_trials(7, n=4, m=80)
        rng = np.random.default_rng(7)
        starts = [None, CalibrationTransform(0.1, np.zeros(4)),
                  CalibrationTransform(5.0, rng.normal(size=4))]
        vals = [fit(ts, init=s).h_mc_after for s in starts]
        assert max(vals) - min(vals) < 1e-6

    def test_gd_agrees_with_newton(self):
        ts = random_trials(8, n=3, m=60, scale=1.0)
        newton = fit(ts)
        gd = fit(ts, method="gd", max_iter=20000)
        assert gd.converged
        assert abs(gd.h_mc_after - newton.h_mc_after) < 1e-6
        np.testing.assert_allclose(gd.transform.params, newton.transform.params, atol=1e-4)

    def test_beta_shift_invariance(self):
        ts = random_trials(9)
        t = fit(ts).transform
        base = h_mc(ts, transform=t).h_mc
        for c in (-100.0, -3.3, 0.5, 100.0):
            moved = CalibrationTransform(t.alpha, t.beta + c)
            assert abs(h_mc(ts, transform=moved).h_mc - base) < 1e-10
        raw = CalibrationTransform(t.alpha, t.beta + 2.5)
        assert abs(h_mc(ts, transform=raw.canonical()).h_mc - h_mc(ts, transform=raw).h_mc) < 1e-12

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            fit(TrialSet([1, 1], np.zeros((2, 3)), [1, 1]))

    def test_nonconvergence_is_flagged(self):
        res = fit(random_trials(10, n=4, m=50), method="gd", max_iter=2)
        assert not res.converged and res.iterations == 2

    def test_negative_alpha_warns(self):
        # labels anti-correlated with the scores push alpha below zero
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 3, 90)
        llk = rng.normal(size=(90, 3))
        llk[np.arange(90), labels] -= 3.0
        with pytest.warns(RuntimeWarning, match="alpha"):
            res = fit(TrialSet(labels, llk, np.ones(90, int)))
        assert res.alpha_nonpositive

    def test_ridge_shrinks_towards_identity(self):
        cfg = SynthConfig(rho=1.0, duration_law=("fixed", 8), n_trials_per_class=100, seed=3)
        ts = generate(cfg).pooled("sum")
        free = fit(ts).transform.alpha
        ridged = fit(ts, ridge=10.0).transform.alpha
        assert free < ridged < 1.0

    def test_deterministic(self):
        ts = random_trials(12, n=6, m=200)
        a, b = fit(ts), fit(ts)
        assert a.transform.params.tobytes() == b.transform.params.tobytes()

    def test_nonflat_prior(self):
        ts = random_trials(13, n=3, m=60)
        prior = np.array([0.5, 0.3, 0.2])
        res = fit(ts, prior)
        g = gradient(res.transform.params, ts, prior)
        assert np.max(np.abs(g)) < 1e-6
        # a flat prior simply moves into beta
        flat = fit(ts)
        assert res.h_mc_after == pytest.approx(flat.h_mc_after, abs=1e-9)
        shift = np.log(prior) - np.log(flat_prior(3))
        np.testing.assert_allclose(res.transform.beta + shift - (res.transform.beta + shift).mean(),
                                   flat.transform.beta, atol=1e-6)
