"""Randomized property suites, 1000 cases each.

Run standalone with ``pytest tests/test_properties.py``. The acceptance
suite calls the same functions and reports them as one criterion.
"""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from jmls_smoother.likelihood import LikelihoodComponent, LikelihoodSet, backward_propagate, reduce_likelihoods
from jmls_smoother.mixture import GaussianMixture, GaussianSet, kl_merge_bound, moment_match_merge, reduce_set
from jmls_smoother.smoother import combine, smooth_step
from jmls_smoother.likelihood import LikelihoodMixture
from jmls_smoother.forward import correct
from jmls_smoother.model import ModeParams

CASES = settings(max_examples=1000, deadline=None, derandomize=True,
                 suppress_health_check=[HealthCheck.too_slow])

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 3)
scales = st.floats(1e-3, 1e3)


def _spd(rng, n, scale=1.0):
    G = rng.standard_normal((n, n))
    return scale * (G @ G.T + 0.05 * np.eye(n))


def _gaussian_set(rng, M, n, scale=1.0):
    return GaussianSet(rng.normal(size=M) * 3, rng.normal(size=(M, n)) * scale,
                       np.stack([_spd(rng, n, scale ** 2) for _ in range(M)]))


def _moments(s: GaussianSet):
    lw = s.log_weight - s.log_weight.max()
    w = np.exp(lw)
    mean = w @ s.mean / w.sum()
    d = s.mean - mean
    cov = (w[:, None, None] * (s.cov + d[:, :, None] * d[:, None, :])).sum(0) / w.sum()
    return np.log(w.sum()) + s.log_weight.max(), mean, cov


@CASES
@given(seed=seeds, n=dims, M=st.integers(2, 10), cap=st.integers(1, 10), scale=scales)
def test_mixture_moment_preservation(seed, n, M, cap, scale):
    rng = np.random.default_rng(seed)
    s = _gaussian_set(rng, M, n, scale)
    out = reduce_set(s, cap)
    assert len(out) == min(cap, M)
    lw, mean, cov = _moments(s)
    lw2, mean2, cov2 = _moments(out)
    np.testing.assert_allclose(lw2, lw, rtol=1e-9, atol=1e-9)
    tol = 1e-9 * (np.abs(mean).max() + np.sqrt(np.abs(cov).max()))
    np.testing.assert_allclose(mean2, mean, rtol=1e-9, atol=tol)
    np.testing.assert_allclose(cov2, cov, rtol=1e-9, atol=1e-9 * np.abs(cov).max())
    pair = moment_match_merge(*s.take([0, 1]).components())
    _, mean_p, cov_p = _moments(s.take([0, 1]))
    np.testing.assert_allclose(pair.cov, cov_p, rtol=1e-9, atol=1e-12 * np.abs(cov_p).max())


@CASES
@given(seed=seeds, n=dims, M=st.integers(1, 5), shift=st.floats(-500, 500))
def test_weight_normalization(seed, n, M, shift):
    rng = np.random.default_rng(seed)
    sets = tuple(_gaussian_set(rng, M, n).shifted(shift) for _ in range(2))
    modes = [ModeParams(A=np.eye(n), B=np.zeros((n, 1)), C=rng.standard_normal((1, n)), D=[[0.0]],
                        Q=np.eye(n), R=[[rng.uniform(0.1, 2)]]) for _ in range(2)]
    filt = correct(GaussianMixture(sets), modes, [0.0], [rng.normal()])
    assert abs(filt.total_log_weight()) < 1e-9
    back = LikelihoodMixture(tuple(
        LikelihoodSet(rng.normal(size=M) * 50, rng.normal(size=(M, n)),
                      np.stack([_spd(rng, n) for _ in range(M)])) for _ in range(2)))
    smoothed = smooth_step(filt, back, 0)
    assert abs(smoothed.mixture.total_log_weight()) < 1e-9
    assert abs(smoothed.mode_marginal.sum() - 1.0) < 1e-12


@CASES
@given(seed=seeds, n=dims, rank=st.integers(0, 3), scale=scales)
def test_psd_invariants(seed, n, rank, scale):
    rng = np.random.default_rng(seed)
    rank = min(rank, n)
    V = rng.standard_normal((n, rank)) * np.sqrt(scale)
    comp = LikelihoodComponent(rng.normal(), V @ rng.normal(size=rank), V @ V.T)
    out = backward_propagate(comp, rng.standard_normal((n, n)), rng.normal(size=n), _spd(rng, n))
    top = max(1.0, np.abs(out.L).max())
    assert np.linalg.eigvalsh(out.L).min() >= -1e-10 * top
    f = _gaussian_set(rng, 3, n)
    merged = combine(f, LikelihoodSet.from_components([comp]))
    for P in merged.cov:
        np.testing.assert_allclose(P, P.T, atol=0)
        assert np.linalg.eigvalsh(P).min() > 0
    pair = moment_match_merge(*f.take([0, 1]).components())
    assert np.linalg.eigvalsh(pair.cov).min() > 0


@CASES
@given(seed=seeds, n=st.integers(2, 4), groups=st.integers(1, 3), M=st.integers(2, 12), cap=st.integers(1, 4))
def test_range_space_preservation(seed, n, groups, M, cap):
    rng = np.random.default_rng(seed)
    bases = []
    for _ in range(groups):
        d = int(rng.integers(1, n + 1))
        bases.append(np.linalg.qr(rng.standard_normal((n, d)))[0])
    comps = []
    for i in range(M):
        U = bases[i % groups]
        d = U.shape[1]
        G = rng.standard_normal((d, d))
        comps.append(LikelihoodComponent(rng.normal() * 5, U @ rng.normal(size=d), U @ (G @ G.T + 0.1 * np.eye(d)) @ U.T))
    out = reduce_likelihoods(comps, cap)

    def spans(cs):
        found = []
        for c in cs:
            w, v = np.linalg.eigh(c.L)
            P = v[:, w > 1e-9 * w.max()]
            proj = P @ P.T
            if not any(np.allclose(proj, q, atol=1e-6) for q in found):
                found.append(proj)
        return found

    before, after = spans(comps), spans(out)
    assert len(after) == len(before)
    for proj in after:
        assert any(np.allclose(proj, q, atol=1e-6) for q in before)
    ranks = [int(np.linalg.matrix_rank(c.L, tol=1e-9 * np.abs(c.L).max())) for c in out]
    assert max(ranks) <= max(b.shape[1] for b in bases)
    assert len(out) <= cap * len(before)


@CASES
@given(seed=seeds, n=dims, scale=scales)
def test_merge_bound_symmetry(seed, n, scale):
    rng = np.random.default_rng(seed)
    a, b = _gaussian_set(rng, 2, n, scale).components()
    ab, ba = kl_merge_bound(a, b), kl_merge_bound(b, a)
    assert ab >= -1e-12 * max(1.0, abs(ab))
    assert ab == ba


PROPERTY_SUITES = {
    "mixture moment preservation": test_mixture_moment_preservation,
    "weight normalization": test_weight_normalization,
    "PSD invariants": test_psd_invariants,
    "range-space preservation": test_range_space_preservation,
    "merge-bound symmetry": test_merge_bound_symmetry,
}
