"""Forward hybrid filter: exact Gaussian-mixture filtering with KL reduction.

Each mode carries a Gaussian mixture. A correction step runs a Kalman update
on every component and reweights it by the predictive likelihood of the
measurement; a prediction step branches every component into every
destination mode, so component counts grow by a factor ``m`` per step unless
they are reduced in between.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from ._linalg import LOG_2PI, log_sum_exp, matvec, symmetrize
from .errors import ModelError, NumericalError
from .mixture import GaussianMixture, GaussianSet, _concat, reduce_set
from .model import Dataset, JmlsModel, ModeParams, require_valid, transition_params

__all__ = [
    "LOG_WEIGHT_FLOOR",
    "Innovation",
    "ForwardState",
    "innovation",
    "correct",
    "predict",
    "run_forward",
]

#: components whose log-weight falls this far below the largest one are dropped
LOG_WEIGHT_FLOOR = 700.0


@dataclass(frozen=True)
class Innovation:
    """Predicted output ``eta``, innovation covariance ``Sigma`` and gain ``K`` (stacked)."""

    eta: NDArray
    Sigma: NDArray
    K: NDArray
    log_det: NDArray


@dataclass(frozen=True)
class ForwardState:
    """Predicted and filtered mixtures at step ``k`` (0-based).

    ``filtered`` is the mixture after reduction, i.e. the one that was
    propagated to ``k+1``. ``log_norm`` is ``ln p(y_k | y_{1:k-1})``.
    """

    predicted: GaussianMixture
    filtered: GaussianMixture
    k: int
    log_norm: float = 0.0


def innovation(comps: GaussianSet, mp: ModeParams, u_k: NDArray) -> Innovation:
    """Innovation statistics of every component of ``comps`` under mode ``mp``."""
    C, R = mp.C, mp.R
    eta = comps.mean @ C.T + mp.D @ u_k
    CP = np.einsum("ij,mjk->mik", C, comps.cov)
    Sigma = symmetrize(np.einsum("mik,lk->mil", CP, C) + R)
    try:
        chol = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is not positive definite") from exc
    log_det = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(-1)
    # K^T = Sigma^-1 C P
    K = np.swapaxes(np.linalg.solve(Sigma, CP), -1, -2)
    return Innovation(eta=eta, Sigma=Sigma, K=K, log_det=log_det)


def _correct_set(comps: GaussianSet, mp: ModeParams, u_k: NDArray, y_k: NDArray):
    if len(comps) == 0:
        return comps, np.zeros(0)
    inn = innovation(comps, mp, u_k)
    resid = y_k - inn.eta
    maha = (resid * np.linalg.solve(inn.Sigma, resid[..., None])[..., 0]).sum(-1)
    loglik = -0.5 * (maha + inn.log_det + mp.q * LOG_2PI)
    mean = comps.mean + matvec(inn.K, resid)
    n = comps.dim
    IKC = np.eye(n) - inn.K @ mp.C
    # Joseph form keeps the covariance PSD in finite precision
    cov = IKC @ comps.cov @ np.swapaxes(IKC, -1, -2) + inn.K @ mp.R @ np.swapaxes(inn.K, -1, -2)
    return GaussianSet(comps.log_weight + loglik, mean, symmetrize(cov)), loglik


def correct(predicted: GaussianMixture, modes: Sequence[ModeParams], u_k, y_k,
            return_log_norm: bool = False):
    """Measurement update of a hybrid mixture, normalized over all modes.

    Components more than :data:`LOG_WEIGHT_FLOOR` below the strongest one are
    dropped. With ``return_log_norm`` the log normalizing constant
    ``ln p(y_k | y_{1:k-1})`` (relative to the predicted total weight) is
    returned as well.
    """
    u_k = np.atleast_1d(np.asarray(u_k, dtype=float))
    y_k = np.atleast_1d(np.asarray(y_k, dtype=float))
    if sum(predicted.counts) == 0:
        raise ModelError("cannot correct an empty mixture")
    sets = []
    best = -np.inf
    for comps, mp in zip(predicted.modes, modes):
        out, loglik = _correct_set(comps, mp, u_k, y_k)
        sets.append(out)
        if loglik.size:
            best = max(best, float(loglik.max()))
    all_lw = np.concatenate([s.log_weight for s in sets])
    total = log_sum_exp(all_lw)
    if not np.isfinite(total):
        raise NumericalError(f"all filtered weights underflowed (max log-likelihood {best:.6g})")
    floor = all_lw.max() - LOG_WEIGHT_FLOOR
    kept = []
    for s in sets:
        keep = s.log_weight >= floor
        s = s if keep.all() else s.take(keep)
        kept.append(s.shifted(-total))
    filtered = GaussianMixture(tuple(kept))
    if return_log_norm:
        return filtered, float(total - predicted.total_log_weight())
    return filtered


def predict(filtered: GaussianMixture, model: JmlsModel, u, k: int) -> GaussianMixture:
    """Time update from step ``k`` to ``k+1`` (0-based), branching into every mode.

    Destination mode ``z'`` receives the components of source mode 0, then
    source mode 1, and so on, each weighted by ``T[z', l]``. Branches with
    zero transition probability are dropped.
    """
    u = np.asarray(u, dtype=float)
    u = u.reshape(len(u), -1) if u.ndim != 2 else u
    logT = model.log_T()
    n = model.n
    out = []
    for dst in range(model.m):
        parts = []
        for src, comps in enumerate(filtered.modes):
            if len(comps) == 0 or not np.isfinite(logT[dst, src]):
                continue
            A, b, Q = transition_params(model, u, k, src, dst)
            mean = comps.mean @ A.T + b
            cov = symmetrize(A @ comps.cov @ A.T + Q)
            parts.append(GaussianSet(comps.log_weight + logT[dst, src], mean, cov))
        out.append(_concat(parts, n))
    return GaussianMixture(tuple(out))


def run_forward(model: JmlsModel, prior: GaussianMixture, dataset: Dataset,
                cap: int | None = None) -> list[ForwardState]:
    """Filter the whole dataset; ``cap`` bounds the components per mode (``None`` = exact)."""
    require_valid(model, prior)
    if cap is not None and cap < 1:
        raise ModelError("component cap must be >= 1")
    if dataset.u.shape[1] != model.p or dataset.y.shape[1] != model.q:
        raise ModelError("dataset dimensions do not match the model")
    states = []
    predicted = prior
    for k in range(dataset.N):
        filtered, log_norm = correct(predicted, model.modes, dataset.u[k], dataset.y[k], return_log_norm=True)
        filtered = GaussianMixture(tuple(reduce_set(s, cap) for s in filtered.modes))
        states.append(ForwardState(predicted=predicted, filtered=filtered, k=k, log_norm=log_norm))
        if k + 1 < dataset.N:
            predicted = predict(filtered, model, dataset.u, k)
    return states
