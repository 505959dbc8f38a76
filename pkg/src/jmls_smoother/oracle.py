"""Reference solutions and density-grid metrics.

Everything here is written independently of the forward/backward/smoother
modules so that it can serve as ground truth for them:

* :func:`enumerate_smoother` conditions on every mode sequence and runs a
  Kalman filter plus Rauch-Tung-Striebel smoother per sequence (vectorized
  across sequences). It is exact, and feasible while ``m^(N-1)`` times the
  number of prior components stays below about a million.
* :func:`rts_smoother` is a plain single-model Kalman/RTS loop.
* :func:`bif_quadrature` evaluates the backward likelihood of a scalar model
  by numerical integration on a grid.
* :func:`evaluate_grid`, :func:`grid_kl`, :func:`grid_l1` and
  :func:`grid_max_abs` tabulate and compare hybrid densities.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import logsumexp

from ._linalg import LOG_2PI, symmetrize
from .errors import ModelError, NumericalError, OracleLimitError
from .mixture import GaussianMixture, GaussianSet, mixture_moments
from .model import Dataset, JmlsModel, ModeParams, Timing, require_valid
from .smoother import SmoothedState

__all__ = [
    "MAX_SEQUENCES",
    "EnumerationResult",
    "enumerate_smoother",
    "GaussianTrack",
    "rts_smoother",
    "DensityGrid",
    "auto_axes",
    "evaluate_grid",
    "grid_kl",
    "grid_l1",
    "grid_max_abs",
    "bif_quadrature",
]

MAX_SEQUENCES = 1_000_000


# ---------------------------------------------------------------------------
# exact enumeration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnumerationResult:
    """Exact smoothed and filtered marginals from sequence enumeration.

    ``sequences`` is (S, N) with the mode at each step, ``log_posterior`` the
    normalized log-probability of each sequence (and prior component).
    """

    smoothed: list[SmoothedState]
    filtered: list[GaussianMixture]
    sequences: NDArray
    log_posterior: NDArray
    log_evidence: float


def enumerate_smoother(model: JmlsModel, prior: GaussianMixture, dataset: Dataset,
                       max_sequences: int = MAX_SEQUENCES) -> EnumerationResult:
    """Exact smoother by enumerating every (prior component, mode sequence) pair."""
    require_valid(model, prior)
    N, m, n = dataset.N, model.m, model.n
    flat = prior.flatten()
    owner = np.concatenate([np.full(len(s), z) for z, s in enumerate(prior.modes)]).astype(int)
    n_prior = len(flat)
    S = n_prior * m ** (N - 1)
    if S > max_sequences:
        raise OracleLimitError(f"{S} sequences exceed the enumeration limit of {max_sequences}")

    # sequences in lexicographic order of (prior component, z_2, ..., z_N)
    tails = np.array(list(itertools.product(range(m), repeat=N - 1)), dtype=int).reshape(-1, N - 1)
    comp = np.repeat(np.arange(n_prior), len(tails))
    seq = np.concatenate([owner[comp][:, None], np.tile(tails, (n_prior, 1))], axis=1)

    u, y = dataset.u, dataset.y
    logT = model.log_T()
    A_all, B_all, C_all = model.stacked("A"), model.stacked("B"), model.stacked("C")
    D_all, Q_all, R_all = model.stacked("D"), model.stacked("Q"), model.stacked("R")

    mu = flat.mean[comp].copy()
    P = flat.cov[comp].copy()
    log_w = flat.log_weight[comp].copy()
    mu_f = np.empty((N, S, n))
    P_f = np.empty((N, S, n, n))
    mu_p = np.empty((N, S, n))
    P_p = np.empty((N, S, n, n))
    A_used = np.empty((N, S, n, n))
    cum = np.empty((N, S))
    eye = np.eye(n)
    for k in range(N):
        z = seq[:, k]
        mu_p[k], P_p[k] = mu, P
        C, R = C_all[z], R_all[z]
        eta = np.einsum("sij,sj->si", C, mu) + np.einsum("sij,j->si", D_all[z], u[k])
        CP = C @ P
        Sig = symmetrize(CP @ np.swapaxes(C, 1, 2) + R)
        _, ld = np.linalg.slogdet(Sig)
        resid = y[k] - eta
        sol = np.linalg.solve(Sig, resid[..., None])[..., 0]
        log_w = log_w - 0.5 * ((resid * sol).sum(-1) + ld + model.q * LOG_2PI)
        K = np.swapaxes(np.linalg.solve(Sig, CP), 1, 2)
        mu = mu + np.einsum("sij,sj->si", K, resid)
        P = symmetrize((eye - K @ C) @ P)
        mu_f[k], P_f[k] = mu, P
        cum[k] = log_w
        if k + 1 == N:
            break
        znext = seq[:, k + 1]
        if model.timing is Timing.AFTER:
            zd, uk = z, u[k]
        else:
            zd, uk = znext, u[k + 1]
        A = A_all[zd]
        A_used[k] = A
        with np.errstate(divide="ignore"):
            log_w = log_w + logT[znext, z]
        mu = np.einsum("sij,sj->si", A, mu) + np.einsum("sij,j->si", B_all[zd], uk)
        P = symmetrize(A @ P @ np.swapaxes(A, 1, 2) + Q_all[zd])

    log_evidence = float(logsumexp(log_w))
    if not np.isfinite(log_evidence):
        raise NumericalError("every mode sequence has zero probability")
    log_post = log_w - log_evidence

    # RTS backward pass for all sequences at once
    mu_s = np.empty_like(mu_f)
    P_s = np.empty_like(P_f)
    mu_s[N - 1], P_s[N - 1] = mu_f[N - 1], P_f[N - 1]
    for k in range(N - 2, -1, -1):
        G = np.swapaxes(np.linalg.solve(P_p[k + 1], A_used[k] @ P_f[k]), 1, 2)
        mu_s[k] = mu_f[k] + np.einsum("sij,sj->si", G, mu_s[k + 1] - mu_p[k + 1])
        P_s[k] = symmetrize(P_f[k] + G @ (P_s[k + 1] - P_p[k + 1]) @ np.swapaxes(G, 1, 2))

    live = np.isfinite(log_post)
    smoothed = []
    filtered = []
    for k in range(N):
        sets = []
        for z in range(m):
            sel = live & (seq[:, k] == z)
            sets.append(GaussianSet(log_post[sel], mu_s[k][sel], P_s[k][sel]))
        mix = GaussianMixture(tuple(sets))
        smoothed.append(SmoothedState(mix, mix.mode_probabilities(), k))

        # filtered marginal: one component per prefix (prior component, z_1..z_k),
        # i.e. per contiguous block of m^(N-1-k) sequences
        block = m ** (N - 1 - k)
        heads = np.arange(0, S, block)
        lw = cum[k][heads]
        keep = np.isfinite(lw)
        heads, lw = heads[keep], lw[keep]
        lw = lw - logsumexp(lw)
        zk = seq[heads, k]
        filtered.append(GaussianMixture(tuple(
            GaussianSet(lw[zk == z], mu_f[k][heads[zk == z]], P_f[k][heads[zk == z]]) for z in range(m)
        )))
    return EnumerationResult(smoothed=smoothed, filtered=filtered, sequences=seq,
                             log_posterior=log_post, log_evidence=log_evidence)


@dataclass(frozen=True)
class GaussianTrack:
    """Per-step means (N, n) and covariances (N, n, n) of a single-model filter or smoother."""

    filtered_mean: NDArray
    filtered_cov: NDArray
    smoothed_mean: NDArray
    smoothed_cov: NDArray


def rts_smoother(mode: ModeParams, mean0, cov0, dataset: Dataset) -> GaussianTrack:
    """Kalman filter and Rauch-Tung-Striebel smoother for one linear-Gaussian model.

    ``x[k+1] = A x[k] + B u[k] + v`` with the prior ``N(mean0, cov0)`` on the
    first state.
    """
    A, B, C, D, Q, R = mode.A, mode.B, mode.C, mode.D, mode.Q, mode.R
    N, n = dataset.N, mode.n
    xp = np.asarray(mean0, dtype=float).reshape(n)
    Pp = np.asarray(cov0, dtype=float).reshape(n, n)
    xf = np.empty((N, n))
    Pf = np.empty((N, n, n))
    xpred = np.empty((N, n))
    Ppred = np.empty((N, n, n))
    for k in range(N):
        xpred[k], Ppred[k] = xp, Pp
        S = C @ Pp @ C.T + R
        K = Pp @ C.T @ np.linalg.inv(S)
        xf[k] = xp + K @ (dataset.y[k] - C @ xp - D @ dataset.u[k])
        Pf[k] = (np.eye(n) - K @ C) @ Pp
        xp = A @ xf[k] + B @ dataset.u[k]
        Pp = A @ Pf[k] @ A.T + Q
    xs = xf.copy()
    Ps = Pf.copy()
    for k in range(N - 2, -1, -1):
        try:
            G = Pf[k] @ A.T @ np.linalg.inv(Ppred[k + 1])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"predicted covariance at step {k + 1} is singular") from exc
        xs[k] = xf[k] + G @ (xs[k + 1] - xpred[k + 1])
        Ps[k] = Pf[k] + G @ (Ps[k + 1] - Ppred[k + 1]) @ G.T
    return GaussianTrack(xf, symmetrize(Pf), xs, symmetrize(Ps))


# ---------------------------------------------------------------------------
# density grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityGrid:
    """A hybrid density tabulated on a regular grid.

    ``axes`` holds one 1-D coordinate array per state dimension and
    ``values`` has shape ``(m, *grid_shape)``.
    """

    axes: tuple[NDArray, ...]
    values: NDArray

    @property
    def cell_volume(self) -> float:
        return float(np.prod([a[1] - a[0] if a.size > 1 else 1.0 for a in self.axes]))

    @property
    def marginal(self) -> NDArray:
        """Density summed over modes."""
        return self.values.sum(axis=0)

    def total_mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def same_axes(self, other: "DensityGrid") -> bool:
        return (len(self.axes) == len(other.axes)
                and all(a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.axes, other.axes))
                and self.values.shape == other.values.shape)

    def to_csv(self, path: str | Path) -> None:
        """One row per grid point: coordinates, then one density column per mode."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        cols = [g.reshape(-1) for g in mesh] + [v.reshape(-1) for v in self.values]
        header = [f"x_{i + 1}" for i in range(len(self.axes))] + [f"p_mode{z + 1}" for z in range(len(self.values))]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])


def _as_mixture(obj) -> GaussianMixture:
    if isinstance(obj, GaussianMixture):
        return obj
    mix = getattr(obj, "mixture", None)
    if isinstance(mix, GaussianMixture):
        return mix
    raise TypeError(f"cannot tabulate an object of type {type(obj).__name__}")


def auto_axes(mixtures: Sequence, n_std: float = 8.0, count: int | Sequence[int] = 2001) -> tuple[NDArray, ...]:
    """Axes spanning +/- ``n_std`` standard deviations around every given mixture."""
    lo, hi = None, None
    for obj in mixtures:
        flat = _as_mixture(obj).flatten()
        keep = np.isfinite(flat.log_weight)
        flat = flat.take(keep)
        _, mean, cov = mixture_moments(flat)
        sd = np.sqrt(np.diag(cov))
        a, b = mean - n_std * sd, mean + n_std * sd
        lo = a if lo is None else np.minimum(lo, a)
        hi = b if hi is None else np.maximum(hi, b)
    if lo is None:
        raise ModelError("need at least one mixture to size the grid")
    counts = [count] * lo.size if np.isscalar(count) else list(count)
    return tuple(np.linspace(l, h, int(c)) for l, h, c in zip(lo, hi, counts))


def _prune(sets: Sequence[GaussianSet], tail: float) -> list[GaussianSet]:
    """Drop the lightest components whose combined weight is at most ``tail``."""
    if tail <= 0:
        return list(sets)
    w = np.concatenate([np.exp(s.log_weight) for s in sets])
    order = np.argsort(w, kind="stable")
    drop = np.zeros(w.size, dtype=bool)
    drop[order[np.cumsum(w[order]) <= tail]] = True
    out, start = [], 0
    for s in sets:
        out.append(s.take(~drop[start:start + len(s)]))
        start += len(s)
    return out


_CHUNK = 2_000_000
#: largest expanded exponent term (in magnitude) allowed on the matrix-product path
_POLY_TERM_LIMIT = 1.0e4


def _density(comps: GaussianSet, axes: tuple[NDArray, ...]) -> NDArray:
    """Sum of weighted Gaussian densities on the grid spanned by ``axes`` (1 or 2 axes)."""
    shape = tuple(a.size for a in axes)
    out = np.zeros(int(np.prod(shape)))
    keep = np.isfinite(comps.log_weight)
    if not keep.all():
        comps = comps.take(keep)
    M = len(comps)
    if M == 0:
        return out.reshape(shape)
    try:
        chol = np.linalg.cholesky(comps.cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("cannot tabulate a component with a singular covariance") from exc
    n = comps.dim
    log_norm = comps.log_weight - np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(1) - 0.5 * n * LOG_2PI
    if n == 1:
        x = axes[0]
        var = comps.cov[:, 0, 0]
        mu = comps.mean[:, 0]
        # Expand the exponent as a quadratic in the centred grid coordinate so a
        # single matrix product forms every exponent. That loses precision
        # when the expanded terms are large, so those components take the
        # direct route.
        c = 0.5 * (x[0] + x[-1])
        half = 0.5 * (x[-1] - x[0])
        poly = 0.5 * (np.abs(mu - c) + half) ** 2 / var <= _POLY_TERM_LIMIT
        if poly.any():
            d = mu[poly] - c
            coef = np.stack([log_norm[poly] - 0.5 * d * d / var[poly], d / var[poly], -0.5 / var[poly]], 1)
            xc = x - c
            basis = np.stack([np.ones_like(xc), xc, xc * xc])
            step = max(1, _CHUNK // x.size)
            for start in range(0, coef.shape[0], step):
                e = coef[start:start + step] @ basis
                np.exp(e, out=e)
                out += np.ones(e.shape[0]) @ e
        rest = np.flatnonzero(~poly)
        inv_sd = 1.0 / chol[rest, 0, 0]
        step = max(1, _CHUNK // x.size)
        for start in range(0, rest.size, step):
            idx = rest[start:start + step]
            z = (x[None, :] - mu[idx, None]) * inv_sd[start:start + step, None]
            z *= z
            z *= -0.5
            z += log_norm[idx, None]
            np.exp(z, out=z)
            out += np.ones(z.shape[0]) @ z
        return out.reshape(shape)
    # two dimensions: expand the quadratic form with the precision matrix
    prec = np.linalg.inv(comps.cov)
    gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
    gx, gy = gx.reshape(-1), gy.reshape(-1)
    step = max(1, _CHUNK // gx.size)
    for start in range(0, M, step):
        sl = slice(start, start + step)
        dx = gx[None, :] - comps.mean[sl, 0:1]
        dy = gy[None, :] - comps.mean[sl, 1:2]
        q = prec[sl, 0, 0, None] * dx * dx
        q += 2.0 * prec[sl, 0, 1, None] * dx * dy
        q += prec[sl, 1, 1, None] * dy * dy
        q *= -0.5
        q += log_norm[sl, None]
        np.exp(q, out=q)
        out += np.ones(q.shape[0]) @ q
    return out.reshape(shape)


def evaluate_grid(mixture, axes: Sequence[NDArray], prune_tail: float = 0.0) -> DensityGrid:
    """Tabulate a hybrid mixture (or a state carrying one) on the grid ``axes``.

    ``prune_tail`` skips the lightest components up to that total weight,
    which bounds the L1 error of the grid by ``prune_tail``.
    """
    mix = _as_mixture(mixture)
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    if mix.dim > 2:
        raise ModelError("density grids are limited to one- and two-dimensional states")
    if len(axes) != mix.dim:
        raise ModelError(f"{len(axes)} axes given for a {mix.dim}-dimensional state")
    sets = _prune(mix.modes, prune_tail)
    values = np.stack([_density(s, axes) for s in sets])
    return DensityGrid(axes=axes, values=values)


def _check_axes(p: DensityGrid, q: DensityGrid) -> None:
    if not p.same_axes(q):
        raise ModelError("density grids have different axes or mode counts")


def grid_kl(p: DensityGrid, q: DensityGrid, floor: float = 1e-300) -> float:
    """Hybrid KL divergence ``sum p ln(p / max(q, floor))`` times the cell volume."""
    _check_axes(p, q)
    if not floor > 0:
        raise ModelError("floor must be positive")
    pv, qv = p.values, np.maximum(q.values, floor)
    mask = pv > 0
    return float((pv[mask] * (np.log(pv[mask]) - np.log(qv[mask]))).sum() * p.cell_volume)


def grid_l1(p: DensityGrid, q: DensityGrid) -> float:
    """``sum |p - q|`` over modes and grid points, times the cell volume."""
    _check_axes(p, q)
    return float(np.abs(p.values - q.values).sum() * p.cell_volume)


def grid_max_abs(p: DensityGrid, q: DensityGrid, marginal: bool = False) -> float:
    """Largest pointwise density difference (per mode, or of the mode marginal)."""
    _check_axes(p, q)
    if marginal:
        return float(np.abs(p.marginal - q.marginal).max())
    return float(np.abs(p.values - q.values).max())


# ---------------------------------------------------------------------------
# backward likelihood by quadrature
# ---------------------------------------------------------------------------


def _scalar(mp: ModeParams, name: str) -> float:
    return float(getattr(mp, name).reshape(-1)[0])


def _log_normal(x, mean, var):
    return -0.5 * ((x - mean) ** 2 / var + np.log(var) + LOG_2PI)


def bif_quadrature(model: JmlsModel, dataset: Dataset, points: Sequence[NDArray],
                   step_factor: float = 5.0, width: float = 12.0) -> NDArray:
    """``ln p(y_{k+1:N} | x_k, z_k)`` of a scalar model by trapezoid quadrature.

    ``points[k]`` lists the states at which step ``k`` is evaluated. Returns
    an array ``(N, m, len(points[k]))`` of log-likelihoods (the last step is
    identically zero).

    The corrected likelihood at ``k+1`` is tabulated on a uniform grid with
    spacing ``min sqrt(Q) / step_factor``; integrating a smooth Gaussian
    integrand with the trapezoid rule at this spacing is accurate far below
    double precision, so the grid extent is the only real approximation.
    It covers the images of every evaluation point under every mode's
    dynamics, and the states consistent with every measurement, padded by
    ``width`` noise standard deviations.
    """
    if model.n != 1 or model.q != 1:
        raise ModelError("the quadrature oracle handles scalar models only")
    N, m = dataset.N, model.m
    u, y = dataset.u, dataset.y
    a = np.array([_scalar(mp, "A") for mp in model.modes])
    bmat = [mp.B for mp in model.modes]
    c = np.array([_scalar(mp, "C") for mp in model.modes])
    d = [mp.D for mp in model.modes]
    q = np.array([_scalar(mp, "Q") for mp in model.modes])
    r = np.array([_scalar(mp, "R") for mp in model.modes])
    h = np.sqrt(q.min()) / step_factor
    pad = width * max(np.sqrt(q.max()), *(np.sqrt(r[c != 0]) / np.abs(c[c != 0])) if np.any(c != 0) else [0.0])

    def trans(k, src, dst):
        z = src if model.timing is Timing.AFTER else dst
        uk = u[k] if model.timing is Timing.AFTER else u[k + 1]
        return a[z], float((bmat[z] @ uk)[0]), q[z]

    def meas(k, z, x):
        return _log_normal(y[k, 0], c[z] * x + float((d[z] @ u[k])[0]), r[z])

    # evaluation sets per step: requested points plus the grid of the step before
    pts = [np.asarray(p, dtype=float).reshape(-1) for p in points]
    data_x = [(y[k, 0] - float((d[z] @ u[k])[0])) / c[z] for k in range(N) for z in range(m) if c[z] != 0]
    grids: list[NDArray | None] = [None] * N
    evals = [pts[0]]
    for k in range(N - 1):
        src = evals[k]
        imgs = [trans(k, s, t)[0] * src + trans(k, s, t)[1] for s in range(m) for t in range(m)]
        cand = np.concatenate(imgs + [pts[k + 1], np.asarray(data_x)])
        lo, hi = cand.min() - pad, cand.max() + pad
        grid = np.arange(lo, hi + h, h)
        grids[k + 1] = grid
        evals.append(np.concatenate([pts[k + 1], grid]))

    results = [np.zeros((m, len(pts[k]))) for k in range(N)]
    corr = None
    for k in range(N - 1, -1, -1):
        x_eval = evals[k]
        if k == N - 1:
            prop = np.zeros((m, x_eval.size))
        else:
            g = grids[k + 1]
            tw = np.full(g.size, np.log(h))
            tw[[0, -1]] -= np.log(2.0)
            prop = np.full((m, x_eval.size), -np.inf)
            for z in range(m):
                terms = []
                for ell in range(m):
                    if model.T[ell, z] <= 0:
                        continue
                    A, b, Q = trans(k, z, ell)
                    kern = _log_normal(g[None, :], A * x_eval[:, None] + b, Q)
                    terms.append(np.log(model.T[ell, z]) + logsumexp(kern + corr[ell][None, :] + tw[None, :], axis=1))
                if terms:
                    prop[z] = logsumexp(np.stack(terms), axis=0)
        results[k] = prop[:, :len(pts[k])]
        corr = np.stack([prop[z] + meas(k, z, x_eval) for z in range(m)])[:, len(pts[k]):]
    return np.stack(results) if all(len(p) == len(pts[0]) for p in pts) else results
