"""Jump Markov linear system models, datasets, simulation and discretization.

A model has ``m`` modes, each a linear-Gaussian state-space system::

    x[k+1] = A(z) x[k] + B(z) u + v,   v ~ N(0, Q(z))
    y[k]   = C(z) x[k] + D(z) u[k] + e, e ~ N(0, R(z))

with the mode ``z`` evolving as a Markov chain, ``T[i, j] = P(z[k+1]=i | z[k]=j)``.
Two timing conventions are supported for which mode (and input) drives the
state transition from ``k`` to ``k+1``:

``Timing.AFTER``  (switch after prediction)
    mode ``z[k]`` and input ``u[k]``.
``Timing.BEFORE`` (switch before prediction)
    mode ``z[k+1]`` and input ``u[k+1]``, i.e. ``x[k] = A(z[k]) x[k-1] + B(z[k]) u[k] + v``.

Mode indices are 0-based in the API and 1-based in files.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import expm

from .errors import ModelError
from .mixture import GaussianMixture, GaussianSet

__all__ = [
    "Timing",
    "ModeParams",
    "JmlsModel",
    "Dataset",
    "ValidationReport",
    "validate_model",
    "validate_prior",
    "transition_params",
    "simulate",
    "discretize_msd",
]

_PIVOT_TOL = 1e-12


class Timing(str, enum.Enum):
    AFTER = "switch-after-prediction"
    BEFORE = "switch-before-prediction"


def _mat(a, name: str) -> NDArray:
    arr = np.atleast_2d(np.asarray(a, dtype=float))
    if arr.ndim != 2:
        raise ModelError(f"{name} must be a matrix")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ModeParams:
    """System matrices of one mode."""

    A: NDArray
    B: NDArray
    C: NDArray
    D: NDArray
    Q: NDArray
    R: NDArray

    def __post_init__(self):
        for name in "ABCDQR":
            object.__setattr__(self, name, _mat(getattr(self, name), name))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class JmlsModel:
    """A time-invariant jump Markov linear system.

    ``T[i, j]`` is the probability of mode ``i`` at ``k+1`` given mode ``j``
    at ``k``; columns sum to one.
    """

    modes: tuple[ModeParams, ...]
    T: NDArray
    timing: Timing = Timing.AFTER

    def __post_init__(self):
        modes = tuple(self.modes)
        if not modes:
            raise ModelError("a model needs at least one mode")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "T", _mat(self.T, "T"))
        object.__setattr__(self, "timing", Timing(self.timing))

    @property
    def m(self) -> int:
        return len(self.modes)

    @property
    def n(self) -> int:
        return self.modes[0].n

    @property
    def p(self) -> int:
        return self.modes[0].p

    @property
    def q(self) -> int:
        return self.modes[0].q

    def log_T(self) -> NDArray:
        with np.errstate(divide="ignore"):
            return np.log(self.T)

    def stacked(self, name: str) -> NDArray:
        """One system matrix for all modes, shape (m, ...)."""
        return np.stack([getattr(mp, name) for mp in self.modes])


@dataclass(frozen=True)
class Dataset:
    """Inputs ``u`` (N, p) and outputs ``y`` (N, q), optionally with simulated truth."""

    u: NDArray
    y: NDArray
    x: NDArray | None = None
    z: NDArray | None = None

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        y = np.asarray(self.y, dtype=float)
        u = u.reshape(len(u), -1) if u.ndim != 2 else u
        y = y.reshape(len(y), -1) if y.ndim != 2 else y
        if len(u) != len(y):
            raise ModelError(f"u has {len(u)} rows but y has {len(y)}")
        if len(u) < 1:
            raise ModelError("a dataset needs at least one sample")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        if self.x is not None:
            x = np.asarray(self.x, dtype=float)
            object.__setattr__(self, "x", x.reshape(len(x), -1))
        if self.z is not None:
            object.__setattr__(self, "z", np.asarray(self.z, dtype=int).reshape(-1))

    @property
    def N(self) -> int:
        return len(self.y)

    def head(self, count: int) -> "Dataset":
        """The first ``count`` samples."""
        return Dataset(
            u=self.u[:count], y=self.y[:count],
            x=None if self.x is None else self.x[:count],
            z=None if self.z is None else self.z[:count],
        )


@dataclass
class ValidationReport:
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "pass" if self.ok else "\n".join(self.problems)


def _check_pd(mat: NDArray, label: str, problems: list[str]) -> None:
    scale = max(1.0, float(np.abs(mat).max()))
    if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-12 * scale):
        problems.append(f"{label} is not symmetric")
        return
    try:
        piv = np.diag(np.linalg.cholesky(mat))
    except np.linalg.LinAlgError:
        problems.append(f"{label} is not positive definite")
        return
    if np.any(piv <= _PIVOT_TOL):
        problems.append(f"{label} is not positive definite (Cholesky pivot <= {_PIVOT_TOL:g})")


def validate_model(model: JmlsModel) -> ValidationReport:
    """Check dimensions, covariances and the transition matrix; never raises."""
    problems: list[str] = []
    n, p, q = model.n, model.p, model.q
    for z, mp in enumerate(model.modes, start=1):
        expected = {"A": (n, n), "B": (n, p), "C": (q, n), "D": (q, p), "Q": (n, n), "R": (q, q)}
        bad = False
        for name, shape in expected.items():
            got = getattr(mp, name).shape
            if got != shape:
                problems.append(f"mode {z}: {name} has shape {got}, expected {shape}")
                bad = True
        if bad:
            continue
        _check_pd(mp.Q, f"mode {z}: Q", problems)
        _check_pd(mp.R, f"mode {z}: R", problems)
    m = model.m
    T = model.T
    if T.shape != (m, m):
        problems.append(f"T has shape {T.shape}, expected ({m}, {m})")
    else:
        if np.any(T < 0) or np.any(T > 1):
            problems.append("T has entries outside [0, 1]")
        for j, s in enumerate(T.sum(axis=0), start=1):
            if abs(s - 1.0) > 1e-12:
                problems.append(f"T column {j} sums to {s:.12g}, not 1")
    return ValidationReport(problems)


def validate_prior(prior: GaussianMixture, model: JmlsModel) -> ValidationReport:
    problems: list[str] = []
    if prior.n_modes != model.m:
        problems.append(f"prior has {prior.n_modes} modes, model has {model.m}")
    if prior.dim != model.n:
        problems.append(f"prior dimension {prior.dim} != state dimension {model.n}")
    total = np.exp(prior.total_log_weight())
    if abs(total - 1.0) > 1e-10:
        problems.append(f"prior weights sum to {total:.12g}, not 1")
    if not prior.is_psd():
        problems.append("prior covariance is not positive semi-definite")
    return ValidationReport(problems)


def require_valid(model: JmlsModel, prior: GaussianMixture | None = None) -> None:
    report = validate_model(model)
    if prior is not None and report.ok:
        report = validate_prior(prior, model)
    if not report.ok:
        raise ModelError("invalid model:\n" + str(report))


def transition_params(model: JmlsModel, u: NDArray, k: int, src: int, dst: int):
    """``(A, b, Q)`` of the state transition ``k -> k+1`` (0-based ``k``).

    ``src`` is the mode at ``k`` and ``dst`` the mode at ``k+1``; ``u`` is the
    full (N, p) input array.
    """
    if model.timing is Timing.AFTER:
        mp, uk = model.modes[src], u[k]
    else:
        mp, uk = model.modes[dst], u[k + 1]
    return mp.A, mp.B @ uk, mp.Q


def simulate(model: JmlsModel, prior: GaussianMixture, u, seed: int) -> Dataset:
    """Draw one trajectory of modes, states and outputs.

    Deterministic for a given ``seed``.
    """
    require_valid(model, prior)
    u = np.asarray(u, dtype=float)
    u = u.reshape(len(u), -1) if u.ndim != 2 else u
    N = len(u)
    if N < 1:
        raise ModelError("need at least one input sample")
    rng = np.random.default_rng(seed)
    n, q = model.n, model.q
    cq = [np.linalg.cholesky(mp.Q) for mp in model.modes]
    cr = [np.linalg.cholesky(mp.R) for mp in model.modes]

    flat: GaussianSet = prior.flatten()
    owner = np.concatenate([np.full(len(s), z) for z, s in enumerate(prior.modes)])
    pw = np.exp(flat.log_weight - flat.total_log_weight())
    c = rng.choice(len(flat), p=pw / pw.sum())
    z = np.empty(N, dtype=int)
    x = np.empty((N, n))
    y = np.empty((N, q))
    z[0] = owner[c]
    # eigh tolerates a singular (e.g. known) initial state
    x[0] = rng.multivariate_normal(flat.mean[c], flat.cov[c], method="eigh")
    for k in range(N):
        mp = model.modes[z[k]]
        y[k] = mp.C @ x[k] + mp.D @ u[k] + cr[z[k]] @ rng.standard_normal(q)
        if k + 1 == N:
            break
        z[k + 1] = rng.choice(model.m, p=model.T[:, z[k]])
        A, b, _ = transition_params(model, u, k, z[k], z[k + 1])
        noise_mode = z[k] if model.timing is Timing.AFTER else z[k + 1]
        x[k + 1] = A @ x[k] + b + cq[noise_mode] @ rng.standard_normal(n)
    return Dataset(u=u, y=y, x=x, z=z)


def discretize_msd(mass: float, damping: float, spring: float, Ts: float,
                   input_hold: float | None = None) -> tuple[NDArray, NDArray]:
    """Zero-order-hold discretization of ``m x'' + b x' + k x = F``.

    State is (position, velocity). Returns ``(A, B)``.

    ``input_hold`` optionally limits the force to the first ``input_hold``
    seconds of each sample period (zero for the rest); ``None`` holds it for
    the whole period.
    """
    if mass <= 0:
        raise ModelError("mass must be positive")
    if Ts <= 0:
        raise ModelError("sample period must be positive")
    Ac = np.array([[0.0, 1.0], [-spring / mass, -damping / mass]])
    Bc = np.array([[0.0], [1.0 / mass]])
    hold = Ts if input_hold is None else float(input_hold)
    if not 0 < hold <= Ts:
        raise ModelError("input_hold must lie in (0, Ts]")
    aug = np.zeros((3, 3))
    aug[:2, :2] = Ac
    aug[:2, 2:] = Bc
    Eh = expm(aug * hold)
    A = expm(Ac * Ts)
    B = Eh[:2, 2:]
    if hold < Ts:
        B = expm(Ac * (Ts - hold)) @ B
    return A, B
