"""Moment-form Gaussian mixtures and Kullback-Leibler mixture reduction.

Weights are stored as natural-log weights throughout. A :class:`GaussianSet`
holds the components of one discrete mode as stacked arrays, and a
:class:`GaussianMixture` is one ``GaussianSet`` per mode (a hybrid density
over ``(x, z)``).

The reduction is the greedy pairwise scheme of Runnalls: repeatedly replace
the pair with the smallest upper bound on the KL discrimination by its
moment-matched merge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import integrate
from scipy.special import logsumexp

from ._linalg import LOG_2PI, chol_logdet, is_psd, log_sum_exp, symmetrize
from .errors import ModelError, NumericalError

__all__ = [
    "GaussianComponent",
    "GaussianSet",
    "GaussianMixture",
    "moment_match_merge",
    "kl_merge_bound",
    "reduce_mixture",
    "reduce_set",
    "mixture_moments",
    "differential_entropy_delta",
]

# dense pair tables above this many entries are filled in row blocks
_TABLE_BLOCK = 2_000_000


def _frozen(a: NDArray) -> NDArray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GaussianComponent:
    """A single weighted Gaussian ``w N(x | mean, cov)``."""

    log_weight: float
    mean: NDArray
    cov: NDArray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float)).copy()
        if cov.shape != (mean.size, mean.size):
            raise ModelError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        if not is_psd(cov):
            raise ModelError("covariance is not positive semi-definite")
        object.__setattr__(self, "log_weight", float(self.log_weight))
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(symmetrize(cov)))

    @classmethod
    def from_weight(cls, weight: float, mean, cov) -> "GaussianComponent":
        if weight < 0:
            raise ModelError("component weight must be non-negative")
        with np.errstate(divide="ignore"):
            return cls(float(np.log(weight)), mean, cov)

    @property
    def weight(self) -> float:
        return float(np.exp(self.log_weight))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class GaussianSet:
    """Weighted Gaussian components sharing one discrete mode.

    Attributes
    ----------
    log_weight : ndarray, shape (M,)
    mean : ndarray, shape (M, n)
    cov : ndarray, shape (M, n, n)
    """

    log_weight: NDArray
    mean: NDArray
    cov: NDArray

    def __post_init__(self):
        lw = np.asarray(self.log_weight, dtype=float).reshape(-1)
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim != 2 or cov.ndim != 3:
            raise ModelError("GaussianSet expects mean (M, n) and cov (M, n, n)")
        m, n = mean.shape
        if lw.shape != (m,) or cov.shape != (m, n, n):
            raise ModelError(
                f"inconsistent GaussianSet shapes: {lw.shape}, {mean.shape}, {cov.shape}"
            )
        object.__setattr__(self, "log_weight", _frozen(lw))
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(symmetrize(cov)))

    @classmethod
    def empty(cls, n: int) -> "GaussianSet":
        return cls(np.zeros(0), np.zeros((0, n)), np.zeros((0, n, n)))

    @classmethod
    def from_components(cls, comps: Iterable[GaussianComponent], n: int | None = None) -> "GaussianSet":
        comps = list(comps)
        if not comps:
            if n is None:
                raise ModelError("cannot infer dimension of an empty component list")
            return cls.empty(n)
        return cls(
            np.array([c.log_weight for c in comps]),
            np.stack([c.mean for c in comps]),
            np.stack([c.cov for c in comps]),
        )

    def __len__(self) -> int:
        return self.log_weight.size

    @property
    def dim(self) -> int:
        return self.mean.shape[1]

    @property
    def weight(self) -> NDArray:
        return np.exp(self.log_weight)

    def total_log_weight(self) -> float:
        if len(self) == 0:
            return -np.inf
        return log_sum_exp(self.log_weight)

    def component(self, i: int) -> GaussianComponent:
        return GaussianComponent(self.log_weight[i], self.mean[i], self.cov[i])

    def components(self) -> list[GaussianComponent]:
        return [self.component(i) for i in range(len(self))]

    def shifted(self, delta: float | NDArray) -> "GaussianSet":
        """Copy with ``delta`` added to every log-weight."""
        return GaussianSet(self.log_weight + delta, self.mean, self.cov)

    def take(self, idx) -> "GaussianSet":
        return GaussianSet(self.log_weight[idx], self.mean[idx], self.cov[idx])

    def is_psd(self, tol: float = 1e-10) -> bool:
        return is_psd(self.cov, tol)

    def logpdf(self, x: NDArray) -> NDArray:
        """Log of ``sum_i w_i N(x | mean_i, cov_i)`` at points ``x`` (K, n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if len(self) == 0:
            return np.full(x.shape[0], -np.inf)
        chol = np.linalg.cholesky(self.cov)
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(1)
        diff = x[None, :, :] - self.mean[:, None, :]
        sol = np.linalg.solve(chol[:, None], diff[..., None])[..., 0]
        maha = (sol**2).sum(-1)
        comp = self.log_weight[:, None] - 0.5 * (maha + logdet[:, None] + self.dim * LOG_2PI)
        return logsumexp(comp, axis=0)


def _concat(sets: Sequence[GaussianSet], n: int) -> GaussianSet:
    sets = [s for s in sets if len(s)]
    if not sets:
        return GaussianSet.empty(n)
    if len(sets) == 1:
        return sets[0]
    return GaussianSet(
        np.concatenate([s.log_weight for s in sets]),
        np.concatenate([s.mean for s in sets]),
        np.concatenate([s.cov for s in sets]),
    )


@dataclass(frozen=True)
class GaussianMixture:
    """Hybrid Gaussian mixture: one :class:`GaussianSet` per discrete mode."""

    modes: tuple[GaussianSet, ...]

    def __post_init__(self):
        modes = tuple(self.modes)
        if not modes:
            raise ModelError("a mixture needs at least one mode")
        if len({s.dim for s in modes}) != 1:
            raise ModelError("all modes must share the state dimension")
        object.__setattr__(self, "modes", modes)

    def __getitem__(self, z: int) -> GaussianSet:
        return self.modes[z]

    def __len__(self) -> int:
        return len(self.modes)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def dim(self) -> int:
        return self.modes[0].dim

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.modes)

    def mode_log_weights(self) -> NDArray:
        return np.array([s.total_log_weight() for s in self.modes])

    def total_log_weight(self) -> float:
        return log_sum_exp(self.mode_log_weights())

    def mode_probabilities(self) -> NDArray:
        lw = self.mode_log_weights()
        return np.exp(lw - log_sum_exp(lw))

    def normalized(self) -> "GaussianMixture":
        total = self.total_log_weight()
        if not np.isfinite(total):
            raise NumericalError("cannot normalize a mixture with zero total weight")
        return GaussianMixture(tuple(s.shifted(-total) for s in self.modes))

    def flatten(self) -> GaussianSet:
        """All components of all modes, marginalizing the mode index."""
        return _concat(self.modes, self.dim)

    def is_psd(self, tol: float = 1e-10) -> bool:
        return all(s.is_psd(tol) for s in self.modes)


# ---------------------------------------------------------------------------
# pairwise merging
# ---------------------------------------------------------------------------


def _merge_moments(wi, wj, mi, mj, Pi, Pj):
    """Moment-matched merge of (broadcastable) stacks of weighted Gaussians."""
    wi, wj = np.asarray(wi, dtype=float), np.asarray(wj, dtype=float)
    wij = wi + wj
    a = (wi / wij)[..., None]
    b = (wj / wij)[..., None]
    mu = a * mi + b * mj
    d = mi - mj
    P = a[..., None] * Pi + b[..., None] * Pj + (a * b)[..., None] * d[..., :, None] * d[..., None, :]
    return wij, mu, P


def _canonical_pair(a: GaussianComponent, b: GaussianComponent):
    """Order a pair deterministically so pairwise results do not depend on argument order."""
    key = lambda c: (c.log_weight, *c.mean.tolist(), *c.cov.ravel().tolist())
    return (b, a) if key(b) < key(a) else (a, b)


def moment_match_merge(a: GaussianComponent, b: GaussianComponent) -> GaussianComponent:
    """Merge two weighted Gaussians preserving total weight, mean and covariance."""
    if a.dim != b.dim:
        raise ModelError("cannot merge components of different dimension")
    a, b = _canonical_pair(a, b)
    if not (np.isfinite(a.log_weight) or np.isfinite(b.log_weight)):
        raise ModelError("cannot merge two zero-weight components")
    ref = max(a.log_weight, b.log_weight)
    wa, wb = np.exp(a.log_weight - ref), np.exp(b.log_weight - ref)
    _, mu, P = _merge_moments(wa, wb, a.mean, b.mean, a.cov, b.cov)
    return GaussianComponent(np.logaddexp(a.log_weight, b.log_weight), mu, P)


def kl_merge_bound(a: GaussianComponent, b: GaussianComponent) -> float:
    """Upper bound ``B(i, j)`` on the KL discrimination caused by merging ``a`` and ``b``.

    ``0.5 * (w_ij ln|P_ij| - w_i ln|P_i| - w_j ln|P_j|)`` with the actual
    (not normalized) weights.
    """
    if a.dim != b.dim:
        raise ModelError("cannot compare components of different dimension")
    a, b = _canonical_pair(a, b)
    wa, wb = a.weight, b.weight
    if wa + wb == 0.0:
        return 0.0
    wij, _, P = _merge_moments(wa, wb, a.mean, b.mean, a.cov, b.cov)
    ld = chol_logdet(P)
    if not np.isfinite(ld):
        raise NumericalError("merged covariance is singular; merge bound is -inf")
    terms = wij * ld
    for w, c in ((wa, a), (wb, b)):
        if w > 0:
            terms -= w * chol_logdet(c.cov)
    return float(0.5 * terms)


def _pair_bounds(w, mu, P, ld, rows, cols, scale):
    """Bound values for the pairs rows x cols (index arrays)."""
    wij, _, Pij = _merge_moments(
        w[rows][:, None], w[cols][None, :],
        mu[rows][:, None], mu[cols][None, :],
        P[rows][:, None], P[cols][None, :],
    )
    shape = Pij.shape[:2]
    ldij = chol_logdet(Pij.reshape(-1, *Pij.shape[2:])).reshape(shape)
    with np.errstate(invalid="ignore"):
        out = scale * (wij * ldij - w[rows][:, None] * ld[rows][:, None] - w[cols][None, :] * ld[cols][None, :])
    return out


def _row_bounds(w, mu, P, ld, i, cols, scale):
    """Bounds between component ``i`` and each of ``cols`` (the hot loop of the reduction)."""
    wc = w[cols]
    wij = w[i] + wc
    a = w[i] / wij
    b = wc / wij
    if mu.shape[1] == 1:
        d = mu[cols, 0] - mu[i, 0]
        v = a * P[i, 0, 0] + b * P[cols, 0, 0] + a * b * d * d
        # merged variances of positive-variance inputs are positive
        ldij = np.log(v) if v.min() > 0 else chol_logdet(v[:, None, None])
    else:
        d = mu[cols] - mu[i]
        Pij = a[:, None, None] * P[i] + b[:, None, None] * P[cols] + (a * b)[:, None, None] * (d[:, :, None] * d[:, None, :])
        ldij = chol_logdet(Pij)
    return scale * (wij * ldij - w[i] * ld[i] - wc * ld[cols])


def _greedy_merge(log_w: NDArray, mean: NDArray, cov: NDArray, cap: int, scale: float = 0.5):
    """Greedy pairwise KL reduction of stacked components down to ``cap``.

    Returns the reduced ``(log_w, mean, cov)`` in stable input order plus the
    original slot index of each output and a flag marking outputs produced by
    a merge. A merged pair takes the slot of its lower index. Ties in the
    bound go to the lexicographically lowest ``(i, j)``. ``scale`` multiplies
    every bound value; it does not change which pairs are merged.
    """
    M = log_w.size
    if M <= cap:
        return log_w, mean, cov, np.arange(M), np.zeros(M, dtype=bool)
    lw = np.array(log_w, dtype=float)
    w = np.exp(lw - lw.max())
    mu = np.array(mean, dtype=float)
    P = np.array(cov, dtype=float)
    n = mu.shape[1]
    ld = chol_logdet(P)

    # full symmetric table: the first row-major minimum is the lowest (i, j), i < j
    table = np.empty((M, M))
    block = max(1, _TABLE_BLOCK // max(1, M * n * n))
    idx = np.arange(M)
    for start in range(0, M, block):
        rows = idx[start:start + block]
        table[rows] = _pair_bounds(w, mu, P, ld, rows, idx, scale)
    table[np.isnan(table)] = np.inf
    np.fill_diagonal(table, np.inf)

    active = np.ones(M, dtype=bool)
    merged = np.zeros(M, dtype=bool)
    count = M
    while count > cap:
        i, j = divmod(int(table.argmin()), M)
        if table[i, j] == -np.inf:
            raise NumericalError(f"merge of components {i} and {j} yields a singular covariance")
        wi, wj = float(w[i]), float(w[j])
        wij = wi + wj
        a, b = wi / wij, wj / wij
        if n == 1:
            mi, mj = float(mu[i, 0]), float(mu[j, 0])
            d = mi - mj
            v = a * float(P[i, 0, 0]) + b * float(P[j, 0, 0]) + (a * b) * (d * d)
            mu[i, 0] = a * mi + b * mj
            P[i, 0, 0] = v
            ld[i] = math.log(v) if v > 0 else -math.inf
        else:
            d = mu[i] - mu[j]
            Pij = a * P[i] + b * P[j] + (a * b) * (d[:, None] * d[None, :])
            mu[i] = a * mu[i] + b * mu[j]
            P[i] = 0.5 * (Pij + Pij.T)
            ld[i] = chol_logdet(P[i])
        w[i] = wij
        li, lj = float(lw[i]), float(lw[j])
        hi, lo = (li, lj) if li >= lj else (lj, li)
        lw[i] = hi + math.log1p(math.exp(lo - hi))
        merged[i] = True
        active[j] = False
        table[j, :] = np.inf
        table[:, j] = np.inf
        count -= 1
        if count <= cap:
            break
        active[i] = False
        others = active.nonzero()[0]
        active[i] = True
        row = _row_bounds(w, mu, P, ld, i, others, scale)
        row[row != row] = np.inf
        table[i, others] = row
        table[others, i] = row
    slots = np.flatnonzero(active)
    return lw[active], mu[active], P[active], slots, merged[active]


def reduce_set(components: GaussianSet, cap: int | None) -> GaussianSet:
    """KL-reduce one mode's components to at most ``cap`` (``None`` = no limit).

    Zero-weight components are dropped first.
    """
    if cap is not None and cap < 1:
        raise ModelError("component cap must be >= 1")
    keep = np.isfinite(components.log_weight)
    if not keep.all():
        components = components.take(keep)
    if cap is None or len(components) <= cap:
        return components
    lw, mu, P, _, _ = _greedy_merge(components.log_weight, components.mean, components.cov, cap)
    return GaussianSet(lw, mu, P)


def reduce_mixture(components, cap: int):
    """KL-reduce a list of :class:`GaussianComponent` (or a :class:`GaussianSet`).

    Returns the same kind of object that was passed in.
    """
    if cap < 1:
        raise ModelError("component cap must be >= 1")
    if isinstance(components, GaussianSet):
        if len(components) == 0:
            raise ModelError("cannot reduce an empty mixture")
        return reduce_set(components, cap)
    comps = list(components)
    if not comps:
        raise ModelError("cannot reduce an empty mixture")
    if len(comps) <= cap:
        return comps
    return reduce_set(GaussianSet.from_components(comps), cap).components()


def mixture_moments(components: GaussianSet) -> tuple[float, NDArray, NDArray]:
    """Total log-weight, mean and covariance of a (sub-)mixture."""
    total = components.total_log_weight()
    if not np.isfinite(total):
        raise NumericalError("mixture has zero total weight")
    v = np.exp(components.log_weight - total)
    mean = v @ components.mean
    d = components.mean - mean
    cov = np.einsum("i,ijk->jk", v, components.cov) + np.einsum("i,ij,ik->jk", v, d, d)
    return total, mean, symmetrize(cov)


def _as_set(p) -> GaussianSet:
    if isinstance(p, GaussianMixture):
        return p.flatten()
    if isinstance(p, GaussianSet):
        return p
    return GaussianSet.from_components(p)


def differential_entropy_delta(p, q, abs_tol: float = 1e-9) -> float:
    """``integral of p ln p - q ln q`` for two normalized scalar mixtures.

    Equals ``h(q) - h(p)``: negative when approximating ``p`` by ``q`` lowered
    the differential entropy. Integrated adaptively over +/-10 standard
    deviations of both mixtures.
    """
    p, q = _as_set(p), _as_set(q)
    if p.dim != 1 or q.dim != 1:
        raise ModelError("differential entropy delta is only defined here for scalar states")
    for name, s in (("p", p), ("q", q)):
        if abs(np.exp(s.total_log_weight()) - 1.0) > 1e-9:
            raise ModelError(f"{name} is not normalized")
    _, mp, cp = mixture_moments(p)
    _, mq, cq = mixture_moments(q)
    sp, sq = np.sqrt(cp[0, 0]), np.sqrt(cq[0, 0])
    lo = min(mp[0] - 10 * sp, mq[0] - 10 * sq)
    hi = max(mp[0] + 10 * sp, mq[0] + 10 * sq)

    def plogp(s: GaussianSet, x: float) -> float:
        lp = s.logpdf(np.array([[x]]))[0]
        return float(np.exp(lp) * lp) if np.isfinite(lp) else 0.0

    breaks = np.unique(np.concatenate([p.mean[:, 0], q.mean[:, 0]]))
    breaks = breaks[(breaks > lo) & (breaks < hi)]
    val, _ = integrate.quad(
        lambda x: plogp(p, x) - plogp(q, x), lo, hi,
        points=breaks if breaks.size else None, epsabs=abs_tol * 0.1, epsrel=1e-12, limit=500,
    )
    return float(val)
