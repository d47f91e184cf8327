"""Reweighted-ADMM active user detectors.

``admm_li_solve`` estimates the diagonal activity matrix ``X`` from
``Y ~ Phi X H_hat`` using BS-side LoS channel reconstructions ``H_hat``;
``admm_baseline_solve`` estimates the row-sparse effective channel ``J`` from
``Y ~ Phi J`` without any location knowledge. Both run ``R`` reweighting
rounds of ``S`` ADMM iterations with state carried across rounds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .solver_core import (
    AdmmConfig,
    HpdFactorization,
    assemble_and_factor_kron,
    factor_plain,
    reweight,
    shrink_rows_unchecked,
    shrink_scalar_unchecked,
    unvec,
    vec,
)

# relative slack on the log-sum surrogate before an outer step counts as an increase
OBJECTIVE_SLACK = 1e-6


class SolverDivergenceError(FloatingPointError):
    """An iterate became non-finite."""


@dataclass(frozen=True)
class IterationRecord:
    """Snapshot handed to a monitor after every inner iteration.

    For ADMM-LI ``estimate`` is the full ``N x N`` matrix ``X`` (built from
    its diagonal); for the baseline it is ``J``.
    """

    outer: int
    inner: int
    weights: np.ndarray
    rhs: np.ndarray
    z: np.ndarray
    estimate_prev: np.ndarray
    estimate: np.ndarray
    dual_prev: np.ndarray
    dual: np.ndarray


@dataclass(frozen=True)
class DetectionResult:
    detected: frozenset
    scores: np.ndarray
    estimate: np.ndarray
    primal_residual: float
    objective_history: tuple
    objective_monotone: bool


Monitor = Callable[[IterationRecord], None]


def decide_active(scores, threshold: float) -> frozenset:
    """Indices (0-based) whose score strictly exceeds ``threshold``."""
    if not threshold >= 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    return frozenset(np.flatnonzero(np.asarray(scores) > threshold).tolist())


def li_objective(y, pilots, h_hat, x_diag, beta, eps0) -> float:
    """Log-sum surrogate that the reweighting rounds descend, for diagonal ``X``."""
    fit = pilots @ (x_diag[:, None] * h_hat) - y
    return float(0.5 * np.vdot(fit, fit).real + beta * np.log(eps0 + np.abs(x_diag)).sum())


def baseline_objective(y, pilots, j, beta, eps0) -> float:
    fit = pilots @ j - y
    return float(0.5 * np.vdot(fit, fit).real
                 + beta * np.log(eps0 + np.linalg.norm(j, axis=1)).sum())


def _is_monotone(history) -> bool:
    h = np.asarray(history)
    return bool(np.all(np.diff(h) <= OBJECTIVE_SLACK * np.maximum(1.0, np.abs(h[:-1]))))


def _check_finite(a, where, outer, inner):
    if not np.all(np.isfinite(a)):
        raise SolverDivergenceError(f"non-finite {where} at outer={outer}, inner={inner}")


def admm_li_solve(y: np.ndarray, pilots: np.ndarray, h_hat: np.ndarray,
                  config: AdmmConfig = AdmmConfig(), *,
                  factorization: Optional[HpdFactorization] = None,
                  refactor_each_iteration: bool = False,
                  monitor: Optional[Monitor] = None) -> DetectionResult:
    """Location-aided detector.

    Parameters
    ----------
    y : ndarray, shape (T, M)
        Received pilot block.
    pilots : ndarray, shape (T, N)
    h_hat : ndarray, shape (N, M)
        Unit-modulus LoS channels rebuilt from the estimated user positions.
    config : AdmmConfig
    factorization : HpdFactorization, optional
        Precomputed factor of the Kronecker system; built here when omitted.
    refactor_each_iteration : bool
        Rebuild the factor on every inner iteration instead of once. Only
        useful for benchmarking the factor reuse.
    monitor : callable, optional
        Called with an :class:`IterationRecord` after each inner iteration.

    Returns
    -------
    DetectionResult
        Scores are ``|X[n, n]|``.
    """
    t, m = y.shape
    n = pilots.shape[1]
    if pilots.shape[0] != t or h_hat.shape != (n, m):
        raise ValueError(f"shape mismatch: Y {y.shape}, Phi {pilots.shape}, H_hat {h_hat.shape}")
    rho, beta = config.rho, config.beta
    if factorization is None and not refactor_each_iteration:
        factorization = assemble_and_factor_kron(h_hat, pilots, rho)

    data_term = pilots.conj().T @ y @ h_hat.conj().T
    diag = np.diag_indices(n)
    x = np.zeros(n, dtype=complex)
    z = np.zeros((n, n), dtype=complex)
    w = np.zeros((n, n), dtype=complex)
    history = [li_objective(y, pilots, h_hat, x, beta, config.eps0)]

    for r in range(config.outer_iterations):
        nu = reweight(np.abs(x), config.eps0)
        threshold = beta * nu / rho
        for s in range(config.inner_iterations):
            rhs = data_term + w
            rhs[diag] += rho * x
            fac = (assemble_and_factor_kron(h_hat, pilots, rho) if refactor_each_iteration
                   else factorization)
            z = unvec(fac.solve(vec(rhs)), n, n)
            x_new = shrink_scalar_unchecked(np.diag(z) - np.diag(w) / rho, threshold)
            w_new = w - rho * z
            w_new[diag] += rho * x_new
            if monitor is not None:
                monitor(IterationRecord(r, s, nu, rhs, z, np.diag(x), np.diag(x_new), w, w_new))
            x, w = x_new, w_new
        _check_finite(x, "X", r, s)
        history.append(li_objective(y, pilots, h_hat, x, beta, config.eps0))

    _check_finite(z, "Z", config.outer_iterations - 1, config.inner_iterations - 1)
    primal = z.copy()
    primal[diag] -= x
    scores = np.abs(x)
    return DetectionResult(
        detected=decide_active(scores, config.activity_threshold),
        scores=scores,
        estimate=x,
        primal_residual=float(np.linalg.norm(primal)),
        objective_history=tuple(history),
        objective_monotone=_is_monotone(history),
    )


def admm_baseline_solve(y: np.ndarray, pilots: np.ndarray, config: AdmmConfig = AdmmConfig(), *,
                        factorization: Optional[HpdFactorization] = None,
                        refactor_each_iteration: bool = False,
                        monitor: Optional[Monitor] = None) -> DetectionResult:
    """Location-free detector on ``J = X H``; scores are the row norms of ``J``."""
    t, m = y.shape
    n = pilots.shape[1]
    if pilots.shape[0] != t:
        raise ValueError(f"shape mismatch: Y {y.shape}, Phi {pilots.shape}")
    rho, beta = config.rho, config.beta
    if factorization is None and not refactor_each_iteration:
        factorization = factor_plain(pilots, rho)

    inverse = None if refactor_each_iteration else factorization.inverse()
    data_term = pilots.conj().T @ y
    j = np.zeros((n, m), dtype=complex)
    z = np.zeros((n, m), dtype=complex)
    w = np.zeros((n, m), dtype=complex)
    history = [baseline_objective(y, pilots, j, beta, config.eps0)]

    for r in range(config.outer_iterations):
        nu = reweight(np.linalg.norm(j, axis=1), config.eps0)
        threshold = beta * nu / rho
        for s in range(config.inner_iterations):
            rhs = data_term + rho * j + w
            if refactor_each_iteration:
                inverse = factor_plain(pilots, rho).inverse()
            z = inverse @ rhs
            j_new = shrink_rows_unchecked(z - w / rho, threshold)
            w_new = w + rho * (j_new - z)
            if monitor is not None:
                monitor(IterationRecord(r, s, nu, rhs, z, j, j_new, w, w_new))
            j, w = j_new, w_new
        _check_finite(j, "J", r, s)
        history.append(baseline_objective(y, pilots, j, beta, config.eps0))

    scores = np.linalg.norm(j, axis=1)
    return DetectionResult(
        detected=decide_active(scores, config.activity_threshold),
        scores=scores,
        estimate=j,
        primal_residual=float(np.linalg.norm(j - z)),
        objective_history=tuple(history),
        objective_monotone=_is_monotone(history),
    )
