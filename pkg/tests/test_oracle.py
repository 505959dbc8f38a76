import csv

import numpy as np
import pytest
from scipy import integrate

from jmls_smoother import oracle
from jmls_smoother.errors import ModelError, OracleLimitError
from jmls_smoother.mixture import GaussianMixture, GaussianSet
from jmls_smoother.model import JmlsModel, ModeParams, simulate
from jmls_smoother.oracle import (
    auto_axes,
    bif_quadrature,
    enumerate_smoother,
    evaluate_grid,
    grid_kl,
    grid_l1,
    grid_max_abs,
    rts_smoother,
)
from jmls_smoother.reference import (
    constant_input,
    entropy_counterexample,
    example1_model,
    example3_model,
    example_prior,
    gaussian_input,
    gaussian_prior,
    sinusoid_input,
)

from conftest import normal_pdf, random_problem


def _unit(var=1.0, mean=0.0):
    return GaussianMixture((GaussianSet([0.0], [[mean]], [[[var]]]),))


class TestEnumerateSmoother:
    def test_single_mode_is_rts(self):
        model, prior = example1_model(), example_prior("example1")
        data = simulate(model, prior, gaussian_input(10, 1, 3), seed=3)
        exact = enumerate_smoother(model, prior, data)
        track = rts_smoother(model.modes[0], [0.0], [[1.0]], data)
        assert exact.sequences.shape[0] == 1
        for k, st in enumerate(exact.smoothed):
            np.testing.assert_allclose(st.mixture[0].log_weight, [0.0], atol=1e-12)
            np.testing.assert_allclose(st.mixture[0].mean[0], track.smoothed_mean[k], rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(st.mixture[0].cov[0], track.smoothed_cov[k], rtol=1e-12)

    def test_two_step_mode_marginal_by_quadrature(self):
        model, prior, data = random_problem(7, N=2)
        exact = enumerate_smoother(model, prior, data)
        assert exact.sequences.shape[0] == 4
        mp = [m for m in model.modes]
        p0 = np.exp(prior.mode_log_weights())
        m0, P0 = prior[0].mean[0, 0], prior[0].cov[0, 0, 0]
        u, y = data.u[:, 0], data.y[:, 0]

        def joint(i, j):
            a = mp[i]
            f = lambda x2, x1: (normal_pdf(x1, m0, P0)
                                * normal_pdf(y[0], a.C[0, 0] * x1 + a.D[0, 0] * u[0], a.R[0, 0])
                                * normal_pdf(x2, a.A[0, 0] * x1 + a.B[0, 0] * u[0], a.Q[0, 0])
                                * normal_pdf(y[1], mp[j].C[0, 0] * x2 + mp[j].D[0, 0] * u[1], mp[j].R[0, 0]))
            val = integrate.dblquad(f, -15, 15, -15, 15, epsabs=1e-14, epsrel=1e-11)[0]
            return p0[i] * model.T[j, i] * val

        table = np.array([[joint(i, j) for j in range(2)] for i in range(2)])
        np.testing.assert_allclose(exact.smoothed[0].mode_marginal, table.sum(1) / table.sum(), rtol=1e-8)
        np.testing.assert_allclose(exact.smoothed[1].mode_marginal, table.sum(0) / table.sum(), rtol=1e-8)
        np.testing.assert_allclose(exact.log_evidence, np.log(table.sum()), rtol=1e-8)

    def test_sequence_posteriors_normalized(self):
        model, prior, data = random_problem(11, N=6)
        exact = enumerate_smoother(model, prior, data)
        assert exact.sequences.shape == (2 ** 6, 6)
        assert abs(np.logaddexp.reduce(exact.log_posterior)) < 1e-9

    def test_limit(self):
        model, prior, data = random_problem(1, N=12)
        with pytest.raises(OracleLimitError):
            enumerate_smoother(model, prior, data, max_sequences=1000)


class TestRtsSmoother:
    def test_smoothing_reduces_variance(self):
        model, prior = example1_model(), example_prior("example1")
        data = simulate(model, prior, gaussian_input(13, 1, 0), seed=0)
        track = rts_smoother(model.modes[0], [0.0], [[1.0]], data)
        assert np.all(track.smoothed_cov[:, 0, 0] <= track.filtered_cov[:, 0, 0] + 1e-15)

    def test_noise_free_dynamics(self):
        eps = 1e-10
        mode = ModeParams(A=0.9, B=0.1, C=1.0, D=0.0, Q=eps, R=100.0)
        model = JmlsModel((mode,), [[1.0]])
        prior = gaussian_prior([1.0], [1.0], [[eps]])
        data = simulate(model, prior, constant_input(20), seed=0)
        track = rts_smoother(mode, [1.0], [[eps]], data)
        x = 1.0
        for k in range(20):
            assert abs(track.smoothed_mean[k, 0] - x) <= 10 * np.sqrt(eps) * 20
            x = 0.9 * x + 0.1


class TestDensityGrid:
    def test_unit_gaussian_integrates_to_one(self):
        grid = evaluate_grid(_unit(), [np.linspace(-8, 8, 2001)])
        assert abs(grid.total_mass() - 1.0) < 1e-6

    def test_modes_add_to_marginal(self):
        mix = GaussianMixture((GaussianSet([np.log(0.3)], [[0.0]], [[[1.0]]]),
                               GaussianSet([np.log(0.7)], [[1.0]], [[[0.5]]])))
        grid = evaluate_grid(mix, [np.linspace(-6, 6, 401)])
        np.testing.assert_allclose(grid.marginal, grid.values.sum(0), rtol=1e-15)
        np.testing.assert_allclose(grid.values[1], 0.7 * normal_pdf(grid.axes[0], 1.0, 0.5), rtol=1e-13)

    def test_counterexample_peak_at_zero(self):
        mix = GaussianMixture((entropy_counterexample(),))
        grid = evaluate_grid(mix, [np.linspace(-8, 8, 2001)])
        assert grid.axes[0][np.argmax(grid.marginal)] == 0.0

    def test_two_dimensional(self, rng):
        cov = np.array([[1.0, 0.4], [0.4, 0.5]])
        mix = GaussianMixture((GaussianSet([0.0], [[0.2, -0.1]], [cov]),))
        axes = (np.linspace(-6, 6, 241), np.linspace(-5, 5, 201))
        grid = evaluate_grid(mix, axes)
        assert abs(grid.total_mass() - 1.0) < 1e-6
        x = np.array([axes[0][100], axes[1][70]])
        d = x - [0.2, -0.1]
        expected = np.exp(-0.5 * d @ np.linalg.solve(cov, d)) / (2 * np.pi * np.sqrt(np.linalg.det(cov)))
        np.testing.assert_allclose(grid.values[0, 100, 70], expected, rtol=1e-13)

    def test_expanded_and_direct_paths_agree(self, rng, monkeypatch):
        M = 500
        s = GaussianSet(np.log(rng.dirichlet(np.ones(M))), rng.normal(size=(M, 1)) * 3,
                        rng.uniform(1e-4, 2, (M, 1, 1)))
        axes = (np.linspace(-12, 12, 1001),)
        fast = oracle._density(s, axes)
        monkeypatch.setattr(oracle, "_POLY_TERM_LIMIT", -1.0)
        direct = oracle._density(s, axes)
        np.testing.assert_allclose(fast, direct, rtol=1e-11, atol=1e-300)

    def test_prune_bounds_the_error(self, rng):
        M = 200
        s = GaussianSet(np.log(rng.dirichlet(np.ones(M) * 0.2)), rng.normal(size=(M, 1)), rng.uniform(0.1, 1, (M, 1, 1)))
        mix = GaussianMixture((s,))
        axes = [np.linspace(-10, 10, 2001)]
        full, pruned = evaluate_grid(mix, axes), evaluate_grid(mix, axes, prune_tail=1e-3)
        assert grid_l1(full, pruned) <= 1e-3

    def test_three_dimensions_refused(self):
        mix = GaussianMixture((GaussianSet([0.0], [np.zeros(3)], [np.eye(3)]),))
        with pytest.raises(ModelError):
            evaluate_grid(mix, [np.linspace(-1, 1, 3)] * 3)

    def test_csv_layout(self, tmp_path):
        mix = GaussianMixture((GaussianSet([np.log(0.5)], [[0.0]], [[[1.0]]]),
                               GaussianSet([np.log(0.5)], [[1.0]], [[[1.0]]])))
        grid = evaluate_grid(mix, [np.linspace(-1, 1, 5)])
        path = tmp_path / "grid.csv"
        grid.to_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["x_1", "p_mode1", "p_mode2"]
        np.testing.assert_array_equal(np.array(rows[1:], dtype=float)[:, 1], grid.values[0])

    def test_auto_axes_cover_all_mixtures(self):
        axes = auto_axes([_unit(1.0, -5.0), _unit(4.0, 5.0)], n_std=8, count=11)
        assert axes[0][0] == -13.0 and axes[0][-1] == 21.0


class TestGridMetrics:
    def test_kl_of_identical_grids(self):
        g = evaluate_grid(_unit(), [np.linspace(-8, 8, 2001)])
        assert grid_kl(g, g) == 0.0
        assert grid_l1(g, g) == 0.0
        assert grid_max_abs(g, g) == 0.0

    def test_kl_closed_form(self):
        axes = [np.linspace(-12, 12, 4001)]
        kl = grid_kl(evaluate_grid(_unit(1.0), axes), evaluate_grid(_unit(1.81), axes))
        expected = 0.5 * (np.log(1.81) + 1 / 1.81 - 1)
        assert abs(kl - expected) < 1e-4

    def test_kl_non_negative(self, rng):
        axes = [np.linspace(-10, 10, 1001)]
        for _ in range(20):
            p = GaussianMixture((GaussianSet(np.log(rng.dirichlet(np.ones(3))), rng.normal(size=(3, 1)),
                                             rng.uniform(0.2, 2, (3, 1, 1))),))
            q = GaussianMixture((GaussianSet([0.0], rng.normal(size=(1, 1)), rng.uniform(0.2, 2, (1, 1, 1))),))
            assert grid_kl(evaluate_grid(p, axes), evaluate_grid(q, axes)) >= -1e-6

    def test_mismatched_axes_rejected(self):
        a = evaluate_grid(_unit(), [np.linspace(-1, 1, 5)])
        b = evaluate_grid(_unit(), [np.linspace(-1, 1, 7)])
        with pytest.raises(ModelError):
            grid_kl(a, b)


class TestBifQuadrature:
    def test_one_step_against_adaptive_quadrature(self):
        model, prior, data = random_problem(13, N=2)
        pts = np.array([-1.0, 0.5])
        ref = bif_quadrature(model, data, [pts, pts])
        u, y = data.u[:, 0], data.y[:, 0]
        for z in range(2):
            a = model.modes[z]
            for n, x in enumerate(pts):
                total = 0.0
                for ell in range(2):
                    b = model.modes[ell]
                    f = lambda xp: (normal_pdf(xp, a.A[0, 0] * x + a.B[0, 0] * u[0], a.Q[0, 0])
                                    * normal_pdf(y[1], b.C[0, 0] * xp + b.D[0, 0] * u[1], b.R[0, 0]))
                    total += model.T[ell, z] * integrate.quad(f, -np.inf, np.inf, epsabs=0, epsrel=1e-12)[0]
                np.testing.assert_allclose(np.exp(ref[0, z, n]), total, rtol=1e-9)
        np.testing.assert_array_equal(ref[1], 0.0)

    def test_refinement_does_not_move_the_answer(self):
        model, prior, data = random_problem(14, N=5)
        pts = [np.linspace(-2, 2, 5)] * 5
        a = bif_quadrature(model, data, pts)
        b = bif_quadrature(model, data, pts, step_factor=10, width=16)
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)

    def test_scalar_models_only(self):
        model = example3_model()
        data = simulate(model, example_prior("example3"), sinusoid_input(3), seed=0)
        with pytest.raises(ModelError):
            bif_quadrature(model, data, [np.zeros(1)] * 3)
