"""Post-training uncertainty quantification.

The Fisher information is taken as the Hessian of the trained objective,
computed by central finite differences of the reverse-mode gradient; the
asymptotic covariance is (1/n) times its inverse and parameter error bars
are two standard deviations. Covariances feeding these estimates are
re-estimated without the diagonal stabilization term.

The conditional covariance of the kinetic parameters given the calibration
factors is reported in two variants: the printed "+" form and the Schur
complement "-" form; a Monte-Carlo oracle in the test suite shows the Schur
form matches conditional-Gaussian semantics, so that one feeds acceptance.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import mle, stoich
from .linalg import NumericalError, cholesky_solve, pinv, svd
from .mle import CovarianceSet, TrainingData, model_network
from .surrogate import SurrogateModel, TapeModel


def _worker_count() -> int:
    env = os.environ.get("RKINN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            warnings.warn(f"ignoring non-integer RKINN_THREADS={env!r}")
    return 1


def hessian(grad_fn, point, h=None, max_shrink: int = 3,
            return_defect: bool = False):
    """Symmetrized Hessian from central finite differences of a gradient
    function.

    Per-coordinate step h_k = 1e-4 (1 + |theta_k|) unless given. Columns are
    independent gradient evaluations, run on a worker pool capped by
    RKINN_THREADS and assembled in index order. A column whose gradient comes
    back non-finite is retried with a tenfold smaller step, then rejected.
    """
    theta = np.asarray(point, dtype=float)
    k = theta.size
    if h is None:
        steps = 1e-4 * (1.0 + np.abs(theta))
    else:
        steps = np.full(k, float(h))

    def column(idx: int) -> np.ndarray:
        step = steps[idx]
        for _ in range(max_shrink + 1):
            e = np.zeros(k)
            e[idx] = step
            try:
                gp = grad_fn(theta + e)
                gm = grad_fn(theta - e)
            except NumericalError:
                step *= 0.1
                continue
            col = (gp - gm) / (2.0 * step)
            if np.all(np.isfinite(col)):
                return col
            step *= 0.1
        raise NumericalError(f"hessian column {idx} stayed non-finite")

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(column, range(k)))
    else:
        cols = [column(i) for i in range(k)]
    H = np.column_stack(cols)
    scale = max(np.abs(H).max(initial=0.0), 1e-300)
    defect = float(np.abs(H - H.T).max(initial=0.0) / scale)
    H = 0.5 * (H + H.T)
    return (H, defect) if return_defect else H


def asymptotic_covariance(hess: np.ndarray, n_points: int) -> np.ndarray:
    """(1/n) H^{-1}, inverted by Cholesky with the jitter ladder.

    A Hessian with small negative eigenvalues (finite-difference noise at a
    near-stationary point) falls back to the pseudo-inverse with a warning.
    """
    H = np.asarray(hess, dtype=float)
    try:
        cov = cholesky_solve(H, np.eye(H.shape[0])) / n_points
    except NumericalError:
        warnings.warn("indefinite Hessian: pseudo-inverse covariance")
        cov = pinv(0.5 * (H + H.T)) / n_points
    return 0.5 * (cov + cov.T)


def conditional_sigma_p(Sigma_pp, Sigma_pg, Sigma_gg) -> dict[str, np.ndarray]:
    """Both conditional-covariance candidates for the kinetic parameters.

    "as_printed" adds the cross term, "schur" subtracts it (the proper
    conditional covariance of a joint Gaussian). Singular Sigma_gg falls back
    to the pseudo-inverse with a warning.
    """
    Sigma_pp = np.asarray(Sigma_pp, dtype=float)
    Sigma_pg = np.atleast_2d(np.asarray(Sigma_pg, dtype=float))
    Sigma_gg = np.atleast_2d(np.asarray(Sigma_gg, dtype=float))
    try:
        cross = Sigma_pg @ cholesky_solve(Sigma_gg, Sigma_pg.T)
    except NumericalError:
        warnings.warn("singular calibration covariance block: pseudo-inverse")
        cross = Sigma_pg @ pinv(Sigma_gg) @ Sigma_pg.T
    cross = 0.5 * (cross + cross.T)
    return {"as_printed": Sigma_pp + cross, "schur": Sigma_pp - cross}


@dataclass
class OptimalityDiagnostics:
    """The three first-order optimality residuals at the current model."""

    cond_x: np.ndarray    # mean interpolation residual, length n
    cond_dx: np.ndarray   # mean pinv(Jx^T) eps_dx, length n
    cond_p: np.ndarray    # mean V_p V_p^T Omega_p pinv(Jp) eps_dx, length m

    @property
    def norms(self) -> dict[str, float]:
        return {"cond_x": float(np.linalg.norm(self.cond_x)),
                "cond_dx": float(np.linalg.norm(self.cond_dx)),
                "cond_p": float(np.linalg.norm(self.cond_p))}


def optimality_diagnostics(model: SurrogateModel, data: TrainingData,
                           covariances: CovarianceSet,
                           p=None) -> OptimalityDiagnostics:
    """Evaluate the stationarity conditions; all three vanish at an exact
    solution. ``p`` overrides the model parameters (perturbation probes)."""
    net = model_network(model)
    p = model.p if p is None else np.asarray(p, dtype=float)
    res = _residuals_at(model, data, p)
    Jx = stoich.jac_x(res.x_pred, p, net)
    Jp = stoich.jac_p(res.x_pred, p, net)
    D = res.eps_dx.shape[0]

    try:
        Omega_p = cholesky_solve(covariances.Sigma_p, np.eye(net.n_reactions))
    except NumericalError:
        warnings.warn("singular parameter covariance: pseudo-inverse precision")
        Omega_p = pinv(covariances.Sigma_p)

    cond_dx = np.zeros(net.n_species)
    cond_p = np.zeros(net.n_reactions)
    for i in range(D):
        cond_dx += pinv(Jx[i].T) @ res.eps_dx[i]
        rp = svd(Jp[i])
        Vp = rp.V[:, :rp.rank()]           # row-space basis of Jp_i
        cond_p += Vp @ (Vp.T @ (Omega_p @ (pinv(Jp[i]) @ res.eps_dx[i])))
    return OptimalityDiagnostics(cond_x=res.eps_x.mean(axis=0),
                                 cond_dx=cond_dx / D, cond_p=cond_p / D)


def _residuals_at(model: SurrogateModel, data: TrainingData, p):
    saved = model.p
    try:
        model.p = np.asarray(p, dtype=float)
        return mle.residuals(model, data)
    finally:
        model.p = saved


def p_gradient_fn(model: SurrogateModel, data: TrainingData,
                  cov: CovarianceSet):
    """Gradient of the trained objective with respect to the kinetic
    parameters only (weights and precision matrices held fixed)."""
    ctx = mle._LossContext.build(model, data)

    def grad_fn(p_vec: np.ndarray) -> np.ndarray:
        tm = TapeModel(model)
        tm.params["p"] = ad.Var(np.asarray(p_vec, dtype=float).copy(), name="p")
        out = mle._rkinn_loss_var(tm, ctx, cov)
        (g,) = ad.grad(out, [tm.params["p"]])
        return g

    return grad_fn


def joint_gradient_fn(model: SurrogateModel, data_signals, cov: CovarianceSet):
    """Gradient of the objective with respect to (p, gamma) jointly.

    ``data_signals`` is a list of (times, observed_bulk, latent_signals) per
    experiment; the calibrated data and the per-experiment nullspace
    coordinates are rebuilt from gamma inside the tape so the cross
    sensitivities are exact.
    """
    net = model_network(model)
    b = model.bases
    n = net.n_species
    n_lat = len(net.lat_idx)
    m = net.n_reactions
    E_obs = np.zeros((len(net.obs_idx), n))
    E_obs[np.arange(len(net.obs_idx)), net.obs_idx] = 1.0
    E_lat = np.zeros((n_lat, n))
    E_lat[np.arange(n_lat), net.lat_idx] = 1.0

    def grad_fn(theta: np.ndarray) -> np.ndarray:
        p = ad.Var(np.asarray(theta[:m], dtype=float).copy(), name="p")
        gamma = ad.Var(np.asarray(theta[m:], dtype=float).copy()[None, :],
                       name="gamma")
        tm = TapeModel(model)
        tm.params["p"] = p
        total = None
        D = sum(ts.shape[0] for ts, _, _ in data_signals)
        for e, (times, bulk, signals) in enumerate(data_signals):
            d = times.shape[0]
            x_lat = signals * gamma                     # (d, n_lat) Var
            xt = bulk @ E_obs + x_lat @ E_lat           # scatter to (d, n)
            zn_row = ((np.ones((1, d)) / d) @ xt) @ b.U_N
            rows = (zn_row, zn_row @ b.U_lat_N.T, zn_row @ b.U_N.T)
            x_out, z_out, _ = tm.forward(times, e, tangent=True,
                                         nullspace_rows=rows)
            f_z = mle._rhs_var(x_out.value, p, net) @ b.U_R
            ez = z_out.value - xt @ b.U_R
            edz = z_out.tangent - f_z
            sl = slice(sum(ts.shape[0] for ts, _, _ in data_signals[:e]),
                       sum(ts.shape[0] for ts, _, _ in data_signals[:e + 1]))
            term = mle._quad(ez, cov.Omega_z) + mle._bquad(edz, cov.Omega_dz[sl])
            total = term if total is None else total + term
        out = total * (1.0 / D)
        gp, gg = ad.grad(out, [p, gamma])
        return np.concatenate([gp.ravel(), gg.ravel()])

    return grad_fn


@dataclass
class UQReport:
    parameter_names: list[str]
    p: np.ndarray
    bars_p: np.ndarray           # 2 standard deviations per parameter
    hessian: np.ndarray
    covariance: np.ndarray
    hessian_symmetry_defect: float
    optimality_norms: dict[str, float]
    n_points: int
    stabilization_removed: bool = True
    gamma: np.ndarray | None = None
    bars_gamma: np.ndarray | None = None
    conditional_sigma_p_printed: np.ndarray | None = None
    conditional_sigma_p_schur: np.ndarray | None = None

    def to_dict(self) -> dict:
        doc = {
            "parameter_names": self.parameter_names,
            "p": self.p.tolist(),
            "bars_p": self.bars_p.tolist(),
            "hessian_symmetry_defect": self.hessian_symmetry_defect,
            "optimality_norms": self.optimality_norms,
            "n_points": self.n_points,
            "stabilization_removed": self.stabilization_removed,
            "covariance": self.covariance.tolist(),
        }
        if self.gamma is not None:
            doc["gamma"] = self.gamma.tolist()
            doc["bars_gamma"] = self.bars_gamma.tolist()
            doc["conditional_sigma_p"] = {
                "as_printed": self.conditional_sigma_p_printed.tolist(),
                "schur": self.conditional_sigma_p_schur.tolist(),
            }
        return doc


def uq_report(model: SurrogateModel, data: TrainingData,
              data_signals=None, gamma=None) -> UQReport:
    """Full post-training report.

    Covariances are re-estimated without stabilization first. With
    ``data_signals`` and ``gamma`` given, the Fisher information is taken
    jointly over (p, gamma) and the conditional parameter covariance is
    reported in both sign variants; otherwise parameters only.
    """
    net = model_network(model)
    res = mle.residuals(model, data)
    cov = mle.build_covariances(model, data, res, apply_stabilization=False)
    m = net.n_reactions
    joint = data_signals is not None and gamma is not None

    if joint:
        theta0 = np.concatenate([model.p, np.asarray(gamma, dtype=float)])
        grad_fn = joint_gradient_fn(model, data_signals, cov)
    else:
        theta0 = model.p.copy()
        grad_fn = p_gradient_fn(model, data, cov)

    H, defect = hessian(grad_fn, theta0, return_defect=True)
    Sigma = asymptotic_covariance(H, data.total_points)
    bars = 2.0 * np.sqrt(np.maximum(np.diag(Sigma), 0.0))
    diag = optimality_diagnostics(model, data, cov)

    report = UQReport(
        parameter_names=list(net.reaction_labels),
        p=model.p.copy(), bars_p=bars[:m], hessian=H, covariance=Sigma,
        hessian_symmetry_defect=defect, optimality_norms=diag.norms,
        n_points=data.total_points)
    if joint:
        report.gamma = np.asarray(gamma, dtype=float)
        report.bars_gamma = bars[m:]
        variants = conditional_sigma_p(Sigma[:m, :m], Sigma[:m, m:],
                                       Sigma[m:, m:])
        report.conditional_sigma_p_printed = variants["as_printed"]
        report.conditional_sigma_p_schur = variants["schur"]
    return report
