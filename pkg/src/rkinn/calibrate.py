"""Closed-form reconstruction of latent coverage fractions from
semi-quantitative signals.

Coverages relate to raw signals by a per-species calibration factor,
x_lat = y_lat o gamma. Two pieces of information pin gamma down: the
coverages must sum to one at every time (normalization), and differences of
nullspace projections between time pairs must vanish (the conserved
quantities are time-invariant). Normalization gives a particular solution
gamma_R plus freedom along the weak eigenvectors of sum_i y_i y_i^T; the
pair system then fixes that freedom in closed form.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .decomp import RangeNullBases

DEFAULT_EIGEN_CUTOFF = 5e-3


@dataclass
class CalibrationProblem:
    """Observed bulk states and latent signals for one experiment."""

    observed_bulk: np.ndarray    # (d, n_obs)
    latent_signals: np.ndarray   # (d, n_lat)
    bases: RangeNullBases
    eigen_cutoff: float = DEFAULT_EIGEN_CUTOFF
    relative_cutoff: bool = True

    def __post_init__(self):
        self.observed_bulk = np.atleast_2d(np.asarray(self.observed_bulk, dtype=float))
        self.latent_signals = np.atleast_2d(np.asarray(self.latent_signals, dtype=float))
        if self.observed_bulk.shape[0] != self.latent_signals.shape[0]:
            raise ValueError("bulk and latent blocks disagree on time count")
        if not (np.all(np.isfinite(self.observed_bulk))
                and np.all(np.isfinite(self.latent_signals))):
            raise ValueError("non-finite calibration inputs")


@dataclass
class CalibrationResult:
    gamma: np.ndarray
    gamma_particular: np.ndarray
    beta: np.ndarray
    U_N_gamma: np.ndarray
    pair_count: int
    eigenvalues: np.ndarray
    cutoff_abs: float
    negative_entries: bool = False
    pair_residual_rms: float = 0.0
    pair_residual_max: float = 0.0

    def diagnostics(self) -> dict:
        return {
            "gamma": self.gamma.tolist(),
            "gamma_particular": self.gamma_particular.tolist(),
            "beta": self.beta.tolist(),
            "nullspace_dimension": int(self.U_N_gamma.shape[1]),
            "pair_count": self.pair_count,
            "eigenvalues": self.eigenvalues.tolist(),
            "cutoff_abs": self.cutoff_abs,
            "negative_entries": self.negative_entries,
            "pair_residual_rms": self.pair_residual_rms,
            "pair_residual_max": self.pair_residual_max,
        }


def gamma_particular(latent_signals, cutoff: float = DEFAULT_EIGEN_CUTOFF,
                     relative: bool = True):
    """Minimum-norm solution of the normalization conditions
    (sum_i y_i y_i^T) gamma = sum_i y_i, plus the weak-eigenvector basis.

    Returns (gamma_R, U_N_gamma, eigenvalues, cutoff_abs). Eigenvalues at or
    below the cutoff are treated as zero in the pseudo-inverse and their
    eigenvectors form U_N_gamma, so the two solves partition the spectrum.
    """
    Y = np.atleast_2d(np.asarray(latent_signals, dtype=float))
    if not np.any(Y):
        raise ValueError("all-zero latent signals cannot be calibrated")
    S2 = Y.T @ Y
    s1 = Y.sum(axis=0)
    evals, evecs = linalg.eig_sym(S2)
    cutoff_abs = cutoff * evals[0] if relative else cutoff
    keep = evals > cutoff_abs
    if not np.any(keep):
        gamma_R = np.zeros(Y.shape[1])
    else:
        gamma_R = (evecs[:, keep] / evals[keep]) @ (evecs[:, keep].T @ s1)
    U_N = evecs[:, ~keep]
    return gamma_R, U_N, evals, float(cutoff_abs)


def build_pair_system(problem: CalibrationProblem):
    """All asymmetric time pairs j < i for one experiment.

    Returns (V_list, v_list): V_ij = U_lat_N^T diag(y_i - y_j) with shape
    (n - r, n_lat) and v_ij = U_obs_N^T (x_obs_i - x_obs_j).
    """
    b = problem.bases
    Y = problem.latent_signals
    Xo = problem.observed_bulk
    d = Y.shape[0]
    if d < 2:
        raise ValueError("pair system needs at least two time points")
    V_list, v_list = [], []
    for i in range(d):
        for j in range(i):
            V_list.append(b.U_lat_N.T * (Y[i] - Y[j])[None, :])
            v_list.append(b.U_obs_N.T @ (Xo[i] - Xo[j]))
    return V_list, v_list


def _as_problem_list(problems) -> list[CalibrationProblem]:
    if isinstance(problems, CalibrationProblem):
        return [problems]
    return list(problems)


def solve_gamma(problems) -> CalibrationResult:
    """Closed-form calibration factors from normalization plus the nullspace
    pair equations.

    Accepts one CalibrationProblem or a list (experiments pooled: pairs are
    formed within each experiment, normalization pools all rows). The beta
    coefficients solve the accumulated normal equations

        beta = -pinv(U^T (sum V^T V) U) U^T sum V^T (v + V gamma_R)

    over the weak-eigenvector basis U; gamma = gamma_R + U beta. Positivity
    is checked and reported, not enforced.
    """
    probs = _as_problem_list(problems)
    if not probs:
        raise ValueError("no calibration problems given")
    cutoff = probs[0].eigen_cutoff
    relative = probs[0].relative_cutoff
    pooled = np.concatenate([p.latent_signals for p in probs], axis=0)
    if min(p.latent_signals.shape[0] for p in probs) < 2:
        raise ValueError("calibration needs at least two time points per experiment")
    gamma_R, U_N, evals, cutoff_abs = gamma_particular(pooled, cutoff, relative)

    n_lat = pooled.shape[1]
    A = np.zeros((n_lat, n_lat))
    c = np.zeros(n_lat)
    pair_count = 0
    for prob in probs:
        b = prob.bases
        Y = prob.latent_signals
        Xo = prob.observed_bulk
        W = b.U_lat_N.T     # (n - r, n_lat)
        Wo = b.U_obs_N.T    # (n - r, n_obs)
        d = Y.shape[0]
        # streaming accumulation over pairs j < i; nothing d^2-sized is kept
        for i in range(1, d):
            dy = Y[i] - Y[:i]                  # (i, n_lat)
            dx = Xo[i] - Xo[:i]                # (i, n_obs)
            Vb = W[None, :, :] * dy[:, None, :]          # (i, n-r, n_lat)
            vb = dx @ Wo.T                                # (i, n-r)
            A += np.einsum("pki,pkj->ij", Vb, Vb)
            c += np.einsum("pki,pk->i", Vb, vb + np.einsum("pkj,j->pk", Vb, gamma_R))
            pair_count += i

    if U_N.shape[1] == 0:
        warnings.warn("no nullspace freedom in the calibration factors; "
                      "returning the normalization solution")
        beta = np.zeros(0)
        gamma = gamma_R
    else:
        P = U_N.T @ A @ U_N
        q = U_N.T @ c
        beta = -linalg.pinv(0.5 * (P + P.T)) @ q
        gamma = gamma_R + U_N @ beta

    negative = bool(np.any(gamma <= 0))
    if negative:
        warnings.warn("calibration produced non-positive factors; reported, "
                      "not corrected")

    # residuals of the pair equations at the recovered gamma
    sq_sum, sq_max, count = 0.0, 0.0, 0
    for prob in probs:
        b = prob.bases
        Y = prob.latent_signals
        Xo = prob.observed_bulk
        for i in range(1, Y.shape[0]):
            resid = (Xo[i] - Xo[:i]) @ b.U_obs_N + ((Y[i] - Y[:i]) * gamma) @ b.U_lat_N
            sq_sum += float(np.sum(resid ** 2))
            sq_max = max(sq_max, float(np.abs(resid).max(initial=0.0)))
            count += resid.size
    return CalibrationResult(
        gamma=gamma, gamma_particular=gamma_R, beta=beta, U_N_gamma=U_N,
        pair_count=pair_count, eigenvalues=evals, cutoff_abs=cutoff_abs,
        negative_entries=negative,
        pair_residual_rms=float(np.sqrt(sq_sum / max(count, 1))),
        pair_residual_max=sq_max)


def apply_calibration(latent_signals, gamma) -> np.ndarray:
    """Coverages from signals: elementwise x_lat = y_lat o gamma."""
    Y = np.asarray(latent_signals, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if Y.shape[-1] != gamma.shape[0]:
        raise ValueError("calibration factor length does not match signals")
    return Y * gamma
