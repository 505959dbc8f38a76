"""Two-filter smoother: forward mixtures times backward likelihoods.

``p(x_k, z_k | y_{1:N})`` is proportional to the forward filtered mixture
times the propagated backward likelihood ``p(y_{k+1:N} | x_k, z_k)``. Each
(filter component, likelihood component) pair of a mode gives one Gaussian
component of the smoothed mixture.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from ._linalg import log_sum_exp, matvec, quad_form, symmetrize
from .backward import BackwardState, run_backward
from .errors import NumericalError
from .forward import ForwardState, run_forward
from .likelihood import ANGLE_TOL, RANK_TOL, LikelihoodComponent, LikelihoodMixture, LikelihoodSet
from .mixture import GaussianComponent, GaussianMixture, GaussianSet, reduce_set
from .model import Dataset, JmlsModel

__all__ = [
    "SmoothedState",
    "SmootherResult",
    "combine",
    "combine_component",
    "smooth_step",
    "smooth",
    "run_smoother",
]


@dataclass(frozen=True)
class SmoothedState:
    """Smoothed hybrid mixture at step ``k`` (0-based) and its mode marginal."""

    mixture: GaussianMixture
    mode_marginal: NDArray
    k: int


@dataclass
class SmootherResult:
    """Smoothed states plus the two passes they were built from."""

    smoothed: list[SmoothedState]
    forward: list[ForwardState]
    backward: list[BackwardState]
    timings: dict[str, float] = field(default_factory=dict)


def combine(filtered: GaussianSet, lik: LikelihoodSet) -> GaussianSet:
    """All pairwise products ``w N(x | mu, P) * L(x | r, s, L)`` as unnormalized Gaussians.

    Output index ``j = M_f * l + i`` for likelihood component ``l`` and filter
    component ``i``. Uses ``P_bar = (I + P L)^-1 P``, which equals
    ``(P^-1 + L)^-1`` but does not need ``P`` to be invertible.
    """
    n = filtered.dim
    Mf, Mb = len(filtered), len(lik)
    if Mf == 0 or Mb == 0:
        return GaussianSet.empty(n)
    P = filtered.cov[None, :]
    mu = filtered.mean[None, :]
    L = lik.L[:, None]
    s = lik.s[:, None]
    r = lik.r[:, None]
    IPL = np.eye(n) + P @ L
    sign, logdet = np.linalg.slogdet(IPL)
    if np.any(sign <= 0):
        raise NumericalError("|I + P L| is not positive while combining filter and likelihood")
    Pbar = symmetrize(np.linalg.solve(IPL, np.broadcast_to(P, IPL.shape)))
    g = s + matvec(L, mu)
    mubar = mu - matvec(Pbar, g)
    log_inc = (
        -0.5 * (r + 2.0 * (mu * s).sum(-1) + quad_form(L, mu))
        - 0.5 * logdet
        + 0.5 * quad_form(Pbar, g)
    )
    lw = filtered.log_weight[None, :] + log_inc
    return GaussianSet(lw.reshape(-1), mubar.reshape(-1, n), Pbar.reshape(-1, n, n))


def combine_component(filtered: GaussianComponent, lik: LikelihoodComponent) -> GaussianComponent:
    """Product of one weighted Gaussian and one likelihood component (unnormalized)."""
    out = combine(GaussianSet.from_components([filtered]),
                  LikelihoodSet.from_components([lik]))
    return out.component(0)


def _normalize(sets: list[GaussianSet], k: int) -> SmoothedState:
    all_lw = np.concatenate([s.log_weight for s in sets])
    total = log_sum_exp(all_lw)
    if not np.isfinite(total):
        raise NumericalError(f"smoothed weights underflowed at step {k}")
    sets = [s.shifted(-total) for s in sets]
    mix = GaussianMixture(tuple(sets))
    return SmoothedState(mixture=mix, mode_marginal=mix.mode_probabilities(), k=k)


def smooth_step(filtered: GaussianMixture, propagated: LikelihoodMixture, k: int) -> SmoothedState:
    """Combine filtered mixture and propagated likelihood at step ``k``, normalized."""
    return _normalize([combine(f, b) for f, b in zip(filtered.modes, propagated.modes)], k)


def smooth(model: JmlsModel, prior: GaussianMixture, dataset: Dataset,
           forward_cap: int | None = None, backward_cap: int | None = None,
           smoothed_cap: int | None = None, rank_tol: float = RANK_TOL,
           angle_tol: float = ANGLE_TOL) -> SmootherResult:
    """Run both passes and combine them; caps of ``None`` mean no reduction."""
    t0 = time.perf_counter()
    fwd = run_forward(model, prior, dataset, forward_cap)
    t1 = time.perf_counter()
    bwd = run_backward(model, dataset, backward_cap, rank_tol=rank_tol, angle_tol=angle_tol)
    t2 = time.perf_counter()
    N = dataset.N
    out = []
    for k in range(N - 1):
        out.append(smooth_step(fwd[k].filtered, bwd[k].propagated, k))
    # nothing is observed after the last sample: smoothed equals filtered
    last = fwd[N - 1].filtered
    out.append(SmoothedState(mixture=last, mode_marginal=last.mode_probabilities(), k=N - 1))
    if smoothed_cap is not None:
        out = [
            SmoothedState(GaussianMixture(tuple(reduce_set(s, smoothed_cap) for s in st.mixture.modes)),
                          st.mode_marginal, st.k)
            for st in out
        ]
    t3 = time.perf_counter()
    timings = {"forward": t1 - t0, "backward": t2 - t1, "combine": t3 - t2, "total": t3 - t0}
    return SmootherResult(smoothed=out, forward=fwd, backward=bwd, timings=timings)


def run_smoother(model: JmlsModel, prior: GaussianMixture, dataset: Dataset,
                 forward_cap: int | None = None, backward_cap: int | None = None,
                 smoothed_cap: int | None = None, rank_tol: float = RANK_TOL,
                 angle_tol: float = ANGLE_TOL) -> list[SmoothedState]:
    """Smoothed hybrid mixtures for every step of ``dataset``."""
    return smooth(model, prior, dataset, forward_cap, backward_cap, smoothed_cap,
                  rank_tol, angle_tol).smoothed
