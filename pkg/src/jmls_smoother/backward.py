"""Backward information filter over likelihood mixtures.

Runs from the last sample towards the first. At each step the corrected
likelihood ``p(y_{k+1:N} | x_{k+1}, z_{k+1})`` is pushed back through every
mode transition (giving ``p(y_{k+1:N} | x_k, z_k)``), reduced within each
range-space group, and then corrected with ``y_k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ModelError
from .likelihood import (
    ANGLE_TOL,
    RANK_TOL,
    LikelihoodMixture,
    LikelihoodSet,
    apply_transition_constant,
    backward_propagate,
    concat,
    init_terminal,
    measurement_correct,
    null_component,
    reduce_likelihoods,
)
from .model import Dataset, JmlsModel, ModeParams, Timing, require_valid, transition_params

__all__ = ["BackwardState", "null_mixture", "propagate_step", "correct_step", "run_backward"]


@dataclass(frozen=True)
class BackwardState:
    """Backward likelihoods at step ``k`` (0-based).

    ``propagated`` holds ``p(y_{k+1:N} | x_k, z_k)`` after reduction (the
    constant ``1`` at the last step) and ``corrected`` holds
    ``p(y_{k:N} | x_k, z_k)``.
    """

    propagated: LikelihoodMixture
    corrected: LikelihoodMixture
    k: int


def null_mixture(m: int, n: int) -> LikelihoodMixture:
    """One constant-one likelihood per mode (nothing observed yet)."""
    null = LikelihoodSet.from_components([null_component(n)])
    return LikelihoodMixture(tuple(null for _ in range(m)))


def propagate_step(corrected: LikelihoodMixture, model: JmlsModel, u, k: int) -> LikelihoodMixture:
    """Propagate corrected likelihoods at ``k+1`` back to ``k`` (0-based ``k``).

    For each mode ``z_k`` the output lists the components coming from mode
    0 at ``k+1`` first, then mode 1, and so on. Branches with
    ``T[l, z_k] = 0`` are dropped.
    """
    u = np.asarray(u, dtype=float)
    u = u.reshape(len(u), -1) if u.ndim != 2 else u
    T = model.T
    out = []
    for z in range(model.m):
        branches = [ell for ell, lik in enumerate(corrected.modes) if len(lik) and T[ell, z] > 0]
        if not branches:
            out.append(LikelihoodSet.empty(model.n))
            continue
        if model.timing is Timing.AFTER:
            # every branch shares the dynamics of mode z: propagate them in one batch
            stacked = concat([corrected[ell] for ell in branches], model.n)
            A, b, Q = transition_params(model, u, k, z, branches[0])
            prop = backward_propagate(stacked, A, b, Q)
            sizes = [len(corrected[ell]) for ell in branches]
            shift = np.repeat(-2.0 * np.log(T[branches, z]), sizes)
            out.append(LikelihoodSet(prop.r + shift, prop.s, prop.L))
            continue
        parts = []
        for ell in branches:
            A, b, Q = transition_params(model, u, k, z, ell)
            parts.append(apply_transition_constant(backward_propagate(corrected[ell], A, b, Q), T[ell, z]))
        out.append(concat(parts, model.n))
    return LikelihoodMixture(tuple(out))


def correct_step(propagated: LikelihoodMixture, modes: Sequence[ModeParams], u_k, y_k) -> LikelihoodMixture:
    """Fold the measurement ``y_k`` into every component of every mode."""
    u_k = np.atleast_1d(np.asarray(u_k, dtype=float))
    return LikelihoodMixture(tuple(
        lik if len(lik) == 0 else measurement_correct(lik, mp.C, mp.D @ u_k, mp.R, y_k)
        for lik, mp in zip(propagated.modes, modes)
    ))


def _reduce(mix: LikelihoodMixture, cap, rank_tol, angle_tol) -> LikelihoodMixture:
    if cap is None:
        return mix
    return LikelihoodMixture(tuple(
        lik if len(lik) <= cap else reduce_likelihoods(lik, cap, rank_tol=rank_tol, angle_tol=angle_tol)
        for lik in mix.modes
    ))


def run_backward(model: JmlsModel, dataset: Dataset, cap: int | None = None,
                 rank_tol: float = RANK_TOL, angle_tol: float = ANGLE_TOL) -> list[BackwardState]:
    """Backward pass over the whole dataset; returns states ordered by ``k``.

    ``cap`` bounds the components per range-space group of each mode
    (``None`` = exact).
    """
    require_valid(model)
    if cap is not None and cap < 1:
        raise ModelError("component cap must be >= 1")
    if dataset.u.shape[1] != model.p or dataset.y.shape[1] != model.q:
        raise ModelError("dataset dimensions do not match the model")
    N = dataset.N
    states: list[BackwardState] = [None] * N  # type: ignore[list-item]
    corrected = init_terminal(model.modes, dataset.u[N - 1], dataset.y[N - 1])
    states[N - 1] = BackwardState(null_mixture(model.m, model.n), corrected, N - 1)
    for k in range(N - 2, -1, -1):
        propagated = _reduce(propagate_step(corrected, model, dataset.u, k), cap, rank_tol, angle_tol)
        corrected = correct_step(propagated, model.modes, dataset.u[k], dataset.y[k])
        states[k] = BackwardState(propagated, corrected, k)
    return states
