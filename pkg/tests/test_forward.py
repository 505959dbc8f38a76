import numpy as np
import pytest

from jmls_smoother.errors import ModelError
from jmls_smoother.forward import correct, predict, run_forward
from jmls_smoother.mixture import GaussianMixture, GaussianSet
from jmls_smoother.model import Dataset, JmlsModel, ModeParams, Timing
from jmls_smoother.oracle import auto_axes, enumerate_smoother, evaluate_grid, grid_l1
from jmls_smoother.reference import (
    example1_model,
    example2_model,
    example_prior,
    gaussian_input,
    gaussian_prior,
)
from jmls_smoother.model import simulate

from conftest import random_problem


def _scalar_kf(A, B, C, D, Q, R, m0, P0, u, y):
    """Textbook scalar Kalman filter, returns filtered means and variances."""
    m, P = m0, P0
    means, vars_ = [], []
    for k in range(len(y)):
        S = C * P * C + R
        K = P * C / S
        m = m + K * (y[k] - C * m - D * u[k])
        P = (1 - K * C) * P
        means.append(m)
        vars_.append(P)
        m, P = A * m + B * u[k], A * P * A + Q
    return np.array(means), np.array(vars_)


class TestCorrect:
    def test_uninformative_measurement_keeps_moments_and_weights(self):
        mode = ModeParams(A=0.9, B=0.0, C=0.0, D=0.0, Q=1.0, R=2.0)
        pred = GaussianMixture((GaussianSet(np.log([0.2, 0.3]), [[0.0], [1.0]], [[[1.0]], [[2.0]]]),
                                GaussianSet(np.log([0.5]), [[-1.0]], [[[0.5]]])))
        out = correct(pred, [mode, mode], [0.0], [1.3])
        for a, b in zip(pred.modes, out.modes):
            np.testing.assert_allclose(b.mean, a.mean, rtol=1e-15)
            np.testing.assert_allclose(b.cov, a.cov, rtol=1e-15)
            np.testing.assert_allclose(b.log_weight, a.log_weight, rtol=1e-13, atol=1e-15)

    def test_example1_single_update(self):
        mp = example1_model().modes[0]
        pred = gaussian_prior([1.0], [0.4], [[1.3]])
        u, y = 0.7, -0.2
        out = correct(pred, [mp], [u], [y])
        S = 0.9 * 1.3 * 0.9 + 0.5
        K = 1.3 * 0.9 / S
        np.testing.assert_allclose(out[0].mean[0, 0], 0.4 + K * (y - 0.9 * 0.4 - 0.05 * u), rtol=1e-12)
        np.testing.assert_allclose(out[0].cov[0, 0, 0], (1 - K * 0.9) * 1.3, rtol=1e-12)

    def test_weights_normalized(self, rng):
        model, prior, data = random_problem(3)
        for k in range(5):
            pred = GaussianMixture(tuple(GaussianSet(rng.normal(size=3), rng.normal(size=(3, 1)),
                                                     rng.uniform(0.1, 2, (3, 1, 1))) for _ in range(2)))
            out = correct(pred, model.modes, data.u[k], data.y[k])
            assert abs(out.total_log_weight()) < 1e-12

    def test_log_norm_is_predictive_likelihood(self):
        mp = example1_model().modes[0]
        pred = gaussian_prior([1.0], [0.4], [[1.3]])
        _, log_norm = correct(pred, [mp], [0.0], [1.0], return_log_norm=True)
        S = 0.9 * 1.3 * 0.9 + 0.5
        expected = -0.5 * (np.log(2 * np.pi * S) + (1.0 - 0.36) ** 2 / S)
        np.testing.assert_allclose(log_norm, expected, rtol=1e-13)

    def test_empty_mixture_rejected(self):
        empty = GaussianMixture((GaussianSet.empty(1),))
        with pytest.raises(ModelError):
            correct(empty, example1_model().modes, [0.0], [0.0])


class TestPredict:
    def test_identity_dynamics(self):
        eps = 1e-300
        mode = ModeParams(A=1.0, B=0.0, C=1.0, D=0.0, Q=eps, R=1.0)
        model = JmlsModel((mode, mode), np.eye(2))
        filt = GaussianMixture((GaussianSet(np.log([0.25, 0.25]), [[0.0], [1.0]], [[[1.0]], [[2.0]]]),
                                GaussianSet(np.log([0.5]), [[-1.0]], [[[0.5]]])))
        out = predict(filt, model, np.zeros((2, 1)), 0)
        for a, b in zip(filt.modes, out.modes):
            np.testing.assert_array_equal(b.log_weight, a.log_weight)
            np.testing.assert_array_equal(b.mean, a.mean)
            np.testing.assert_allclose(b.cov, a.cov, rtol=1e-15)

    def test_branch_layout(self):
        modes = (ModeParams(A=0.5, B=0.0, C=1.0, D=0.0, Q=1.0, R=1.0),
                 ModeParams(A=2.0, B=0.0, C=1.0, D=0.0, Q=1.0, R=1.0))
        model = JmlsModel(modes, [[0.7, 0.2], [0.3, 0.8]])
        filt = GaussianMixture((GaussianSet(np.log([0.1, 0.2]), [[1.0], [2.0]], [[[1.0]], [[1.0]]]),
                                GaussianSet(np.log([0.3, 0.4]), [[3.0], [4.0]], [[[1.0]], [[1.0]]])))
        out = predict(filt, model, np.zeros((2, 1)), 0)
        assert out.counts == (4, 4)
        # j = 2 (l - 1) + i: source mode 1 components first, then source mode 2
        np.testing.assert_allclose(out[0].mean[:, 0], [0.5, 1.0, 6.0, 8.0])
        np.testing.assert_allclose(np.exp(out[0].log_weight), [0.07, 0.14, 0.06, 0.08])
        np.testing.assert_allclose(np.exp(out[1].log_weight), [0.03, 0.06, 0.24, 0.32])

    def test_example2_step_against_explicit_branches(self):
        model = example2_model()
        filt = GaussianMixture((GaussianSet(np.log([0.3, 0.1]), [[0.2], [-0.5]], [[[0.4]], [[0.9]]]),
                                GaussianSet(np.log([0.6]), [[1.1]], [[[0.3]]])))
        u = np.array([[0.5], [1.5]])
        out = predict(filt, model, u, 0)
        for dst in range(2):
            # switching before prediction: the destination mode's matrices and u[1]
            mp = model.modes[dst]
            means, covs, weights = [], [], []
            for src in range(2):
                for i in range(len(filt[src])):
                    means.append(mp.A[0, 0] * filt[src].mean[i, 0] + mp.B[0, 0] * u[1, 0])
                    covs.append(mp.A[0, 0] ** 2 * filt[src].cov[i, 0, 0] + mp.Q[0, 0])
                    weights.append(model.T[dst, src] * np.exp(filt[src].log_weight[i]))
            np.testing.assert_allclose(out[dst].mean[:, 0], means, rtol=1e-14)
            np.testing.assert_allclose(out[dst].cov[:, 0, 0], covs, rtol=1e-14)
            np.testing.assert_allclose(np.exp(out[dst].log_weight), weights, rtol=1e-14)

    def test_zero_probability_branches_dropped(self):
        modes = (ModeParams(A=0.5, B=0.0, C=1.0, D=0.0, Q=1.0, R=1.0),) * 2
        model = JmlsModel(modes, [[1.0, 0.0], [0.0, 1.0]])
        filt = gaussian_prior([0.5, 0.5], [0.0], [[1.0]])
        assert predict(filt, model, np.zeros((2, 1)), 0).counts == (1, 1)


class TestRunForward:
    def test_example1_matches_kalman_filter(self):
        model, prior = example1_model(), example_prior("example1")
        data = simulate(model, prior, gaussian_input(13, 1, 4), seed=4)
        mp = model.modes[0]
        means, vars_ = _scalar_kf(0.9, 0.1, 0.9, 0.05, 0.45, 0.5, 0.0, 1.0, data.u[:, 0], data.y[:, 0])
        for cap in (None, 1, 3):
            states = run_forward(model, prior, data, cap)
            got_m = [s.filtered[0].mean[0, 0] for s in states]
            got_v = [s.filtered[0].cov[0, 0, 0] for s in states]
            np.testing.assert_allclose(got_m, means, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(got_v, vars_, rtol=1e-10)

    @pytest.mark.parametrize("timing", [Timing.AFTER, Timing.BEFORE])
    def test_exact_run_matches_enumeration(self, timing):
        for seed in range(3):
            model, prior, data = random_problem(seed, N=6, timing=timing)
            states = run_forward(model, prior, data)
            exact = enumerate_smoother(model, prior, data)
            for st, ref in zip(states, exact.filtered):
                axes = auto_axes([ref], count=2001)
                assert grid_l1(evaluate_grid(st.filtered, axes), evaluate_grid(ref, axes)) <= 1e-9
                np.testing.assert_allclose(st.filtered.mode_probabilities(), ref.mode_probabilities(),
                                           atol=1e-10)

    def test_invariants(self):
        model, prior, data = random_problem(8, N=10)
        cap = 3
        states = run_forward(model, prior, data, cap)
        prev = None
        for st in states:
            assert abs(st.filtered.total_log_weight()) < 1e-9
            assert st.filtered.flatten().is_psd()
            assert all(c <= cap for c in st.filtered.counts)
            if prev is not None:
                assert sum(st.predicted.counts) == model.m * sum(prev.filtered.counts)
            prev = st

    def test_single_sample(self):
        model, prior = example2_model(), example_prior("example2")
        data = Dataset(u=[[1.0]], y=[[0.3]])
        states = run_forward(model, prior, data)
        assert len(states) == 1
        assert states[0].predicted is prior

    def test_log_evidence_matches_enumeration(self):
        model, prior, data = random_problem(5, N=6)
        states = run_forward(model, prior, data)
        exact = enumerate_smoother(model, prior, data)
        np.testing.assert_allclose(sum(s.log_norm for s in states), exact.log_evidence, rtol=1e-12)

    def test_invalid_cap(self):
        model, prior, data = random_problem(1)
        with pytest.raises(ModelError):
            run_forward(model, prior, data, 0)
