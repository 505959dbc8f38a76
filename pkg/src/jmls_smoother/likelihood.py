"""Information-form likelihood components and their reduction.

A likelihood component is the (possibly non-integrable) function::

    L(x | r, s, L) = exp(-0.5 * (r + 2 x^T s + x^T L x))

with ``L`` symmetric PSD. Singular ``L`` is the normal case early in the
backward pass, which is why these objects are never converted to densities
over the full state space. Reduction works inside the range space of ``L``,
where each component is a scaled Gaussian ``alpha N(xi | mu, Sigma^-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import logsumexp

from ._linalg import LOG_2PI, chol_logdet, is_psd, log_sum_exp, matvec, quad_form, symmetrize
from .errors import ModelError, NumericalError, RangeSpaceError
from .mixture import _greedy_merge

__all__ = [
    "LikelihoodComponent",
    "LikelihoodSet",
    "LikelihoodMixture",
    "BackpropKernel",
    "RangeSpaceForm",
    "backprop_kernel",
    "backward_propagate",
    "apply_transition_constant",
    "measurement_correct",
    "null_component",
    "init_terminal",
    "range_space_factorize",
    "principal_angles",
    "same_range_space",
    "likelihood_merge_bound",
    "merge_range_space",
    "reduce_likelihoods",
]

RANK_TOL = 1e-9
ANGLE_TOL = 1e-7
RANGE_TOL = 1e-8


@dataclass(frozen=True)
class LikelihoodComponent:
    """One information-form component ``(r, s, L)``."""

    r: float
    s: NDArray
    L: NDArray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.s, dtype=float)).copy()
        L = symmetrize(np.atleast_2d(np.asarray(self.L, dtype=float)))
        if L.shape != (s.size, s.size):
            raise ModelError(f"information matrix shape {L.shape} does not match s of size {s.size}")
        s.setflags(write=False)
        L.setflags(write=False)
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "L", L)

    @property
    def dim(self) -> int:
        return self.s.size

    def log_value(self, x) -> NDArray:
        return LikelihoodSet.from_components([self]).log_value(x)[0]

    def __call__(self, x) -> NDArray:
        return np.exp(self.log_value(x))


@dataclass(frozen=True)
class LikelihoodSet:
    """Stacked likelihood components of one mode: r (M,), s (M, n), L (M, n, n)."""

    r: NDArray
    s: NDArray
    L: NDArray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).reshape(-1)
        s = np.asarray(self.s, dtype=float)
        L = np.asarray(self.L, dtype=float)
        if s.ndim != 2 or L.ndim != 3 or r.shape[0] != s.shape[0] or L.shape != (s.shape[0], s.shape[1], s.shape[1]):
            raise ModelError(f"inconsistent LikelihoodSet shapes: {r.shape}, {s.shape}, {L.shape}")
        L = symmetrize(L)
        for a in (r, s, L):
            a.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "L", L)

    @classmethod
    def empty(cls, n: int) -> "LikelihoodSet":
        return cls(np.zeros(0), np.zeros((0, n)), np.zeros((0, n, n)))

    @classmethod
    def from_components(cls, comps: Sequence[LikelihoodComponent], n: int | None = None) -> "LikelihoodSet":
        comps = list(comps)
        if not comps:
            if n is None:
                raise ModelError("cannot infer dimension of an empty component list")
            return cls.empty(n)
        return cls(np.array([c.r for c in comps]), np.stack([c.s for c in comps]), np.stack([c.L for c in comps]))

    def __len__(self) -> int:
        return self.r.size

    @property
    def dim(self) -> int:
        return self.s.shape[1]

    def component(self, i: int) -> LikelihoodComponent:
        return LikelihoodComponent(self.r[i], self.s[i], self.L[i])

    def components(self) -> list[LikelihoodComponent]:
        return [self.component(i) for i in range(len(self))]

    def take(self, idx) -> "LikelihoodSet":
        return LikelihoodSet(self.r[idx], self.s[idx], self.L[idx])

    def log_value(self, x) -> NDArray:
        """Per-component log values at points ``x`` (K, n) -> (M, K)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim and self.dim == 1:
            x = x.reshape(-1, 1)
        lin = self.s @ x.T
        quad = np.einsum("ki,mij,kj->mk", x, self.L, x)
        return -0.5 * (self.r[:, None] + 2.0 * lin + quad)

    def log_sum(self, x) -> NDArray:
        """Log of the summed likelihood at points ``x`` -> (K,)."""
        lv = self.log_value(x)
        if lv.shape[0] == 0:
            return np.full(lv.shape[1], -np.inf)
        return logsumexp(lv, axis=0)

    def is_psd(self, tol: float = 1e-10) -> bool:
        return is_psd(self.L, tol)

    def ranks(self, rank_tol: float = RANK_TOL) -> NDArray:
        if len(self) == 0:
            return np.zeros(0, dtype=int)
        sv = np.linalg.svd(self.L, compute_uv=False)
        top = sv[:, :1]
        return np.where(top[:, 0] > 0, (sv > rank_tol * top).sum(1), 0)


def concat(sets: Sequence[LikelihoodSet], n: int) -> LikelihoodSet:
    sets = [s for s in sets if len(s)]
    if not sets:
        return LikelihoodSet.empty(n)
    if len(sets) == 1:
        return sets[0]
    return LikelihoodSet(
        np.concatenate([s.r for s in sets]),
        np.concatenate([s.s for s in sets]),
        np.concatenate([s.L for s in sets]),
    )


@dataclass(frozen=True)
class LikelihoodMixture:
    """One :class:`LikelihoodSet` per discrete mode."""

    modes: tuple[LikelihoodSet, ...]

    def __post_init__(self):
        modes = tuple(self.modes)
        if len({s.dim for s in modes}) != 1:
            raise ModelError("all modes must share the state dimension")
        object.__setattr__(self, "modes", modes)

    def __getitem__(self, z: int) -> LikelihoodSet:
        return self.modes[z]

    def __len__(self) -> int:
        return len(self.modes)

    @property
    def dim(self) -> int:
        return self.modes[0].dim

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.modes)


def _wrap(comp):
    if isinstance(comp, LikelihoodComponent):
        return LikelihoodSet.from_components([comp]), True
    if isinstance(comp, LikelihoodSet):
        return comp, False
    raise TypeError(f"expected a likelihood component or set, got {type(comp).__name__}")


def _unwrap(out: LikelihoodSet, single: bool):
    return out.component(0) if single else out


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BackpropKernel:
    """Intermediate matrices of one backward propagation (stacked).

    ``Phi = (I + L Q)^-1 L`` (symmetric PSD), ``Beta = I - Q Phi`` (not
    symmetric in general), ``Psi = Q Phi Q - Q`` (symmetric), and
    ``log_det_beta = ln|Beta|``.
    """

    Phi: NDArray
    Beta: NDArray
    Psi: NDArray
    log_det_beta: NDArray


def backprop_kernel(L: NDArray, Q: NDArray) -> BackpropKernel:
    """Kernel matrices for information matrices ``L`` (M, n, n) and covariance ``Q``."""
    L = np.asarray(L, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    eye = np.eye(n)
    # Beta = I - Q Phi = (I + Q L)^-1 and Psi = -(L + Q^-1)^-1 = -Beta Q; the
    # inverse forms avoid cancellation once L is large relative to Q^-1
    IQL = eye + Q @ L
    sign, logdet = np.linalg.slogdet(IQL)
    if np.any(sign <= 0):
        raise NumericalError("backward propagation: |I + Q L| is not positive (Beta is singular)")
    Beta = np.linalg.solve(IQL, np.broadcast_to(eye, IQL.shape))
    Phi = symmetrize(np.linalg.solve(eye + L @ Q, L))
    Psi = -symmetrize(Beta @ Q)
    return BackpropKernel(Phi=Phi, Beta=Beta, Psi=Psi, log_det_beta=-logdet)


def _check_cov(Q: NDArray, name: str) -> None:
    try:
        np.linalg.cholesky(Q)
    except np.linalg.LinAlgError as exc:
        raise ModelError(f"{name} is not positive definite") from exc


def backward_propagate(comp, A, b, Q):
    """Integrate a likelihood through ``x+ ~ N(A x + b, Q)``.

    Returns the statistics of ``integral N(x+ | A x + b, Q) L(x+ | r, s, L) dx+``
    as a function of ``x`` (without any transition probability).
    Accepts a :class:`LikelihoodComponent` or a :class:`LikelihoodSet`.
    """
    lik, single = _wrap(comp)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    _check_cov(Q, "Q")
    if len(lik) == 0:
        return _unwrap(lik, single) if not single else lik
    ker = backprop_kernel(lik.L, Q)
    L_new = symmetrize(A.T @ ker.Phi @ A)
    Phib = matvec(ker.Phi, b)
    s_new = matvec(A.T, Phib + np.einsum("mji,mj->mi", ker.Beta, lik.s))
    r_new = (
        lik.r
        - ker.log_det_beta
        + quad_form(ker.Psi, lik.s)
        + 2.0 * np.einsum("mi,mij,j->m", lik.s, ker.Beta, b)
        + Phib @ b
    )
    return _unwrap(LikelihoodSet(r_new, s_new, L_new), single)


def apply_transition_constant(comp, T: float):
    """Multiply a likelihood by the transition probability ``T`` (``r -= 2 ln T``)."""
    if not T > 0:
        raise ModelError("transition probability must be positive; drop zero-probability branches")
    lik, single = _wrap(comp)
    return _unwrap(LikelihoodSet(lik.r - 2.0 * np.log(T), lik.s, lik.L), single)


def measurement_correct(comp, C, d, R, y):
    """Multiply a likelihood by ``N(y | C x + d, R)``."""
    lik, single = _wrap(comp)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    zeta = np.atleast_1d(np.asarray(d, dtype=float)) - np.atleast_1d(np.asarray(y, dtype=float))
    try:
        cf = np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise ModelError("R is not positive definite") from exc
    logdet = 2.0 * np.log(np.diag(cf)).sum()
    Ri_C = np.linalg.solve(R, C)
    Ri_zeta = np.linalg.solve(R, zeta)
    info = symmetrize(C.T @ Ri_C)
    r = lik.r + zeta @ Ri_zeta + logdet + R.shape[0] * LOG_2PI
    return _unwrap(LikelihoodSet(r, lik.s + C.T @ Ri_zeta, lik.L + info), single)


def null_component(n: int) -> LikelihoodComponent:
    """The constant likelihood ``1`` (r = 0, s = 0, L = 0)."""
    return LikelihoodComponent(0.0, np.zeros(n), np.zeros((n, n)))


def init_terminal(modes, u_N, y_N) -> LikelihoodMixture:
    """Terminal likelihoods ``p(y_N | x_N, z_N)``, one component per mode.

    ``modes`` is a sequence of :class:`~jmls_smoother.model.ModeParams`.
    """
    modes = list(modes)
    n = modes[0].n
    null = LikelihoodSet.from_components([null_component(n)])
    u_N = np.atleast_1d(np.asarray(u_N, dtype=float))
    return LikelihoodMixture(tuple(
        measurement_correct(null, mp.C, mp.D @ u_N, mp.R, y_N) for mp in modes
    ))


# ---------------------------------------------------------------------------
# range-space reduction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RangeSpaceForm:
    """A likelihood component restricted to the range space of its ``L``.

    ``L = U Sigma U^T``, ``s = U eta`` and on that subspace the component is
    ``alpha N(xi | Sigma^-1 eta, Sigma^-1)`` (the mean sign follows the
    merge formulas; it cancels in every merge). ``alpha`` is stored as
    ``log_alpha``.
    """

    U: NDArray
    Sigma: NDArray
    eta: NDArray
    log_alpha: float
    r: float

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def to_component(self) -> LikelihoodComponent:
        return LikelihoodComponent(self.r, self.U @ self.eta, self.U @ self.Sigma @ self.U.T)


def _log_alpha(r, eta, Sigma):
    """``ln alpha = -0.5 (r - eta^T Sigma^-1 eta - ln|2 pi Sigma^-1|)`` (stacked)."""
    d = Sigma.shape[-1]
    mu = np.linalg.solve(Sigma, eta[..., None])[..., 0]
    ld = chol_logdet(Sigma)
    return -0.5 * (r - (eta * mu).sum(-1) - d * LOG_2PI + ld), mu


def _r_from_alpha(log_alpha, eta, Sigma):
    """Invert the ``alpha`` definition for the information scalar."""
    d = Sigma.shape[-1]
    mu = np.linalg.solve(Sigma, eta[..., None])[..., 0]
    return (eta * mu).sum(-1) - 2.0 * log_alpha + d * LOG_2PI - chol_logdet(Sigma)


def _basis(L: NDArray, rank_tol: float) -> tuple[NDArray, int]:
    U, sv, _ = np.linalg.svd(L)
    if sv[0] <= 0:
        return U[:, :0], 0
    d = int((sv > rank_tol * sv[0]).sum())
    return U[:, :d], d


def _in_range(U: NDArray, s: NDArray, tol: float) -> bool:
    norm = np.linalg.norm(s)
    if norm == 0.0:
        return True
    if U.shape[1] == 0:
        return False
    resid = s - U @ (U.T @ s)
    return bool(np.linalg.norm(resid) <= tol * norm)


def range_space_factorize(comp: LikelihoodComponent, rank_tol: float = RANK_TOL,
                          range_tol: float = RANGE_TOL) -> RangeSpaceForm:
    """Express ``comp`` in an orthonormal basis of ``range(L)``.

    Raises :class:`RangeSpaceError` when ``L`` is zero or ``s`` has a
    component outside ``range(L)``.
    """
    U, d = _basis(comp.L, rank_tol)
    if d == 0:
        raise RangeSpaceError("information matrix is zero; there is no range space to reduce in")
    if not _in_range(U, comp.s, range_tol):
        raise RangeSpaceError("information vector does not lie in the range of the information matrix")
    return _form_in_basis(comp, U)


def _form_in_basis(comp: LikelihoodComponent, U: NDArray) -> RangeSpaceForm:
    Sigma = symmetrize(U.T @ comp.L @ U)
    eta = U.T @ comp.s
    la, _ = _log_alpha(comp.r, eta, Sigma)
    return RangeSpaceForm(U=U, Sigma=Sigma, eta=eta, log_alpha=float(la), r=comp.r)


def principal_angles(Ua: NDArray, Ub: NDArray) -> NDArray:
    """Principal angles (ascending) between the column spans of orthonormal ``Ua``, ``Ub``.

    Small angles come from the sines (accurate near 0), large ones from the
    cosines.
    """
    if Ua.shape[1] < Ub.shape[1]:
        Ua, Ub = Ub, Ua
    cos = np.clip(np.linalg.svd(Ua.T @ Ub, compute_uv=False), 0.0, 1.0)
    sin = np.clip(np.linalg.svd(Ub - Ua @ (Ua.T @ Ub), compute_uv=False), 0.0, 1.0)
    ang_cos = np.sort(np.arccos(cos))
    ang_sin = np.sort(np.arcsin(sin))
    return np.where(ang_cos < np.pi / 4, ang_sin, ang_cos) if ang_cos.size else ang_cos


def same_range_space(a: RangeSpaceForm, b: RangeSpaceForm, angle_tol: float = ANGLE_TOL) -> bool:
    """True when both forms span the same subspace (to ``angle_tol`` radians)."""
    if a.rank != b.rank:
        return False
    if a.rank == 0:
        return True
    if a.rank == a.U.shape[0]:
        return True
    return bool(principal_angles(a.U, b.U).max() <= angle_tol)


def likelihood_merge_bound(a: RangeSpaceForm, b: RangeSpaceForm) -> float:
    """Merge cost for two range-space forms expressed in the same basis::

        (alpha_i + alpha_j) ln|Sigma_ij^-1| + alpha_i ln|Sigma_i| + alpha_j ln|Sigma_j|

    ``alpha`` is taken relative to the larger of the two (the ordering of
    pairs is unaffected by a common positive scale).
    """
    ref = max(a.log_alpha, b.log_alpha)
    ai, aj = np.exp(a.log_alpha - ref), np.exp(b.log_alpha - ref)
    _, _, cov = _merge_pair(a, b)
    return float((ai + aj) * chol_logdet(cov) + ai * chol_logdet(a.Sigma) + aj * chol_logdet(b.Sigma))


def _merge_pair(a: RangeSpaceForm, b: RangeSpaceForm):
    ref = max(a.log_alpha, b.log_alpha)
    ai, aj = np.exp(a.log_alpha - ref), np.exp(b.log_alpha - ref)
    vi, vj = ai / (ai + aj), aj / (ai + aj)
    mi = np.linalg.solve(a.Sigma, a.eta)
    mj = np.linalg.solve(b.Sigma, b.eta)
    dm = mi - mj
    cov = vi * np.linalg.inv(a.Sigma) + vj * np.linalg.inv(b.Sigma) + vi * vj * np.outer(dm, dm)
    log_alpha = np.logaddexp(a.log_alpha, b.log_alpha)
    return log_alpha, vi * mi + vj * mj, symmetrize(cov)


def merge_range_space(a: RangeSpaceForm, b: RangeSpaceForm) -> RangeSpaceForm:
    """Merge two forms sharing a basis ``U``; ``alpha`` adds, moments are matched."""
    if a.U.shape != b.U.shape:
        raise RangeSpaceError("forms live in range spaces of different dimension")
    log_alpha, mean, cov = _merge_pair(a, b)
    Sigma = symmetrize(np.linalg.inv(cov))
    eta = Sigma @ mean
    r = float(_r_from_alpha(log_alpha, eta, Sigma))
    return RangeSpaceForm(U=a.U, Sigma=Sigma, eta=eta, log_alpha=float(log_alpha), r=r)


def _group(lik: LikelihoodSet, rank_tol: float, angle_tol: float, range_tol: float):
    """Partition component indices into range-space groups.

    Returns ``(groups, bases)``; ``bases[g]`` is ``None`` for singletons that
    cannot be merged (``s`` outside ``range(L)``) and a zero-column matrix for
    the zero-information group.
    """
    M, n = len(lik), lik.dim
    U_all, sv, _ = np.linalg.svd(lik.L)
    top = sv[:, 0]
    ranks = np.where(top > 0, (sv > rank_tol * top[:, None]).sum(1), 0)
    groups: list[list[int]] = []
    bases: list[NDArray | None] = []
    for i in range(M):
        d = int(ranks[i])
        U = U_all[i, :, :d]
        if d < n and not _in_range(U, lik.s[i], range_tol):
            groups.append([i])
            bases.append(None)
            continue
        for g, B in enumerate(bases):
            if B is None or B.shape[1] != d:
                continue
            if d == 0 or d == n or principal_angles(B, U).max() <= angle_tol:
                groups[g].append(i)
                break
        else:
            groups.append([i])
            bases.append(U)
    return groups, bases


def _reduce_group(lik: LikelihoodSet, members: NDArray, U: NDArray, cap: int, r, s, L, keep) -> None:
    """Reduce one range-space group in place on the output arrays ``r, s, L, keep``."""
    d = U.shape[1]
    if d == 0:
        # constant components: their sum is exact
        keep[members[1:]] = False
        r[members[0]] = -2.0 * log_sum_exp(-0.5 * lik.r[members])
        return
    eta = lik.s[members] @ U
    Sigma = symmetrize(np.einsum("ia,mij,jb->mab", U, lik.L[members], U))
    log_alpha, mean = _log_alpha(lik.r[members], eta, Sigma)
    cov = symmetrize(np.linalg.inv(Sigma))
    la, mu, P, slots, merged = _greedy_merge(log_alpha, mean, cov, cap, scale=1.0)
    gone = np.ones(len(members), dtype=bool)
    gone[slots] = False
    keep[members[gone]] = False
    if not merged.any():
        return
    tgt = members[slots[merged]]
    Sig = symmetrize(np.linalg.inv(P[merged]))
    et = matvec(Sig, mu[merged])
    r[tgt] = _r_from_alpha(la[merged], et, Sig)
    s[tgt] = et @ U.T
    L[tgt] = symmetrize(U @ Sig @ U.T)


def reduce_likelihoods(comps, cap: int | None, rank_tol: float = RANK_TOL,
                       angle_tol: float = ANGLE_TOL, range_tol: float = RANGE_TOL):
    """Merge likelihood components that share a range space, ``cap`` per group.

    Components whose ``s`` is outside ``range(L)`` pass through untouched.
    Each group is expressed in the basis of its first member, reduced with
    the KL pair-merge rule on the scaled-Gaussian form, and mapped back.
    Unmerged components are returned bit-for-bit, and the output keeps the
    stable input order (a merged component takes the place of its first
    member). Accepts a list of :class:`LikelihoodComponent` or a
    :class:`LikelihoodSet` and returns the same kind.
    """
    if cap is not None and cap < 1:
        raise ModelError("component cap must be >= 1")
    as_list = not isinstance(comps, LikelihoodSet)
    lik = LikelihoodSet.from_components(comps) if as_list else comps
    if len(lik) == 0:
        raise ModelError("cannot reduce an empty likelihood mixture")
    if cap is None or len(lik) <= cap:
        return comps
    groups, bases = _group(lik, rank_tol, angle_tol, range_tol)
    r, s, L = lik.r.copy(), lik.s.copy(), lik.L.copy()
    keep = np.ones(len(lik), dtype=bool)
    for members, U in zip(groups, bases):
        if U is not None and len(members) > cap:
            _reduce_group(lik, np.asarray(members), U, cap, r, s, L, keep)
    out = LikelihoodSet(r[keep], s[keep], L[keep])
    return out.components() if as_list else out
