"""Maximum-likelihood training: residual evaluation, covariance estimation
and propagation, precision matrices, the naive and robust losses, Adam, and
the full training loop.

The robust loss weights projected residuals by precision matrices that are
frozen during each epoch (100 Adam iterations by default) and refreshed from
the current residuals and model Jacobians between epochs:

    ell_t = (1/d) sum_i [ eps_dz_i^T Omega_dz_i eps_dz_i
                          + eps_z_i^T Omega_z eps_z_i ]

with Omega_dz_i the inverse of the projected propagated covariance
Jx_i Sigma_x Jx_i^T + Jp_i Sigma_p Jp_i^T and Omega_z the inverse of the
projected interpolation covariance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import stoich
from .decomp import RangeNullBases, estimate_zN
from .linalg import NumericalError, cholesky_solve, pinv
from .stoich import ReactionNetwork
from .surrogate import (SurrogateModel, TapeModel, build_surrogate,
                        cn_inverse, sa_derivatives_batch)


@dataclass
class TrainingData:
    """Observed states per experiment: times (d_e,) and x-tilde (d_e, n)."""

    times: list[np.ndarray]
    observations: list[np.ndarray]

    def __post_init__(self):
        if len(self.times) != len(self.observations):
            raise ValueError("one observation block per time grid required")
        if not self.times:
            raise ValueError("no experiments")
        self.times = [np.asarray(t, dtype=float) for t in self.times]
        self.observations = [np.asarray(o, dtype=float) for o in self.observations]
        n = self.observations[0].shape[1]
        for t, o in zip(self.times, self.observations):
            if o.shape != (t.shape[0], n):
                raise ValueError("observation block shape mismatch")

    @property
    def n_experiments(self) -> int:
        return len(self.times)

    @property
    def n_species(self) -> int:
        return self.observations[0].shape[1]

    @property
    def total_points(self) -> int:
        return int(sum(t.shape[0] for t in self.times))

    def slices(self) -> list[slice]:
        out, pos = [], 0
        for t in self.times:
            out.append(slice(pos, pos + t.shape[0]))
            pos += t.shape[0]
        return out

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.observations, axis=0)


@dataclass
class ResidualSet:
    """Interpolation and model residuals, full-space and projected."""

    eps_x: np.ndarray       # (D, n)
    eps_dx: np.ndarray      # (D, n)
    eps_z_R: np.ndarray     # (D, r)
    eps_dz_R: np.ndarray    # (D, r)
    eps_z_N: np.ndarray     # (D, n - r), time-invariant when z_N is fixed
    x_pred: np.ndarray      # (D, n) surrogate states (Jacobian eval points)
    eps_p: np.ndarray | None = None  # (D, m) per-point parameter-error samples


def residuals(model: SurrogateModel, data: TrainingData) -> ResidualSet:
    """Evaluate eps_x = x(t_i) - xtilde_i and eps_dx = xdot(t_i) - f(x_i, p)
    over all experiments, plus the range/nullspace projections."""
    net = model_network(model)
    b = model.bases
    ex, edx, xs = [], [], []
    for e in range(data.n_experiments):
        x, xdot, _, _ = sa_derivatives_batch(data.times[e], model, e)
        f = stoich.rhs(x, model.p, net)
        ex.append(x - data.observations[e])
        edx.append(xdot - f)
        xs.append(x)
    eps_x = np.concatenate(ex, axis=0)
    eps_dx = np.concatenate(edx, axis=0)
    return ResidualSet(
        eps_x=eps_x, eps_dx=eps_dx,
        eps_z_R=eps_x @ b.U_R, eps_dz_R=eps_dx @ b.U_R,
        eps_z_N=eps_x @ b.U_N,
        x_pred=np.concatenate(xs, axis=0))


def model_network(model: SurrogateModel) -> ReactionNetwork:
    net = getattr(model, "_network", None)
    if net is None:
        raise ValueError("model is not bound to a reaction network")
    return net


def bind_network(model: SurrogateModel, net: ReactionNetwork) -> SurrogateModel:
    model._network = net
    return model


def estimate_sigma_x(eps_x: np.ndarray) -> np.ndarray:
    """Recentered sample covariance of the interpolation residuals over time
    points (mean of centered outer products)."""
    eps_x = np.atleast_2d(np.asarray(eps_x, dtype=float))
    d = eps_x.shape[0]
    if d < 2:
        warnings.warn("covariance from fewer than two residual rows is zero")
        return np.zeros((eps_x.shape[1], eps_x.shape[1]))
    centered = eps_x - eps_x.mean(axis=0)
    return centered.T @ centered / d


def estimate_eps_p(eps_x_i, eps_dx_i, jac_x_i, jac_p_i) -> np.ndarray:
    """Least-squares parameter-error sample at one time point:

        eps_p = (Jp^T Jp)^{-1} Jp^T (eps_dx - Jx eps_x)

    Rank-deficient Jp falls back to the pseudo-inverse (minimum-norm) path
    with a warning.
    """
    out, deficient = _eps_p_solve(np.asarray(eps_x_i)[None, :],
                                  np.asarray(eps_dx_i)[None, :],
                                  np.asarray(jac_x_i)[None, :, :],
                                  np.asarray(jac_p_i)[None, :, :])
    if deficient:
        warnings.warn("rank-deficient parameter Jacobian: pseudo-inverse path")
    return out[0]


def _eps_p_solve(eps_x, eps_dx, Jx, Jp):
    D, _, m = Jp.shape
    out = np.zeros((D, m))
    deficient = 0
    rhs_all = eps_dx - np.einsum("dij,dj->di", Jx, eps_x)
    for i in range(D):
        G = Jp[i].T @ Jp[i]
        b = Jp[i].T @ rhs_all[i]
        if np.linalg.matrix_rank(Jp[i]) < m:
            deficient += 1
            out[i] = pinv(Jp[i]) @ rhs_all[i]
            continue
        try:
            out[i] = cholesky_solve(G, b)
        except NumericalError:
            deficient += 1
            out[i] = pinv(Jp[i]) @ rhs_all[i]
    return out, deficient


def estimate_eps_p_all(eps_x, eps_dx, Jx, Jp) -> np.ndarray:
    """Batched parameter-error samples, one warning for the whole batch."""
    out, deficient = _eps_p_solve(eps_x, eps_dx, Jx, Jp)
    if deficient:
        warnings.warn(
            f"rank-deficient parameter Jacobian at {deficient} points: "
            "pseudo-inverse path")
    return out


def propagate_sigma_dx(Sigma_x, Sigma_p, jac_x_i, jac_p_i) -> np.ndarray:
    """Model-derivative covariance Jx Sigma_x Jx^T + Jp Sigma_p Jp^T;
    accepts a single point or a batch of Jacobians."""
    Jx = np.asarray(jac_x_i, dtype=float)
    Jp = np.asarray(jac_p_i, dtype=float)
    squeeze = Jx.ndim == 2
    if squeeze:
        Jx, Jp = Jx[None], Jp[None]
    out = (np.einsum("dij,jk,dlk->dil", Jx, Sigma_x, Jx)
           + np.einsum("dij,jk,dlk->dil", Jp, Sigma_p, Jp))
    out = 0.5 * (out + np.swapaxes(out, 1, 2))
    return out[0] if squeeze else out


def stabilize(Sigma, eps_x) -> np.ndarray:
    """Inflate the diagonal by |mean residual| per species (uncorrelated
    additive noise); removed again before uncertainty quantification."""
    bias = np.abs(np.atleast_2d(eps_x).mean(axis=0))
    return np.asarray(Sigma, dtype=float) + np.diag(bias)


@dataclass
class CovarianceSet:
    """Covariances and their projected precision matrices for one epoch."""

    Sigma_x: np.ndarray          # (n, n), stabilized when flagged
    Sigma_p: np.ndarray          # (m, m)
    Sigma_dx: np.ndarray         # (D, n, n)
    Sigma_z: np.ndarray          # (r, r)
    Sigma_dz: np.ndarray         # (D, r, r)
    Omega_z: np.ndarray          # (r, r)
    Omega_dz: np.ndarray         # (D, r, r)
    stabilized: bool = True
    Sigma_x_raw: np.ndarray | None = None  # before stabilization


def _invert_spd(A: np.ndarray) -> np.ndarray:
    X = cholesky_solve(A, np.eye(A.shape[0]))
    return 0.5 * (X + X.T)


def build_covariances(model: SurrogateModel, data: TrainingData,
                      res: ResidualSet | None = None,
                      sigma_x: np.ndarray | None = None,
                      sigma_p: np.ndarray | None = None,
                      apply_stabilization: bool = True) -> CovarianceSet:
    """Estimate/refresh all covariance and precision matrices.

    With sigma_x/sigma_p given they are used as-is (initial epoch); otherwise
    Sigma_x comes from the residuals and Sigma_p from the per-point
    parameter-error samples. Jacobians are evaluated at the current surrogate
    states. Also fills res.eps_p as a side effect when it estimates Sigma_p.
    """
    net = model_network(model)
    b = model.bases
    if res is None:
        res = residuals(model, data)
    Jx = stoich.jac_x(res.x_pred, model.p, net)
    Jp = stoich.jac_p(res.x_pred, model.p, net)

    if sigma_x is None:
        sigma_x = estimate_sigma_x(res.eps_x)
    if sigma_p is None:
        res.eps_p = estimate_eps_p_all(res.eps_x, res.eps_dx, Jx, Jp)
        sigma_p = estimate_sigma_x(res.eps_p)
        if apply_stabilization:
            # uncentered second moment: the systematic part of the
            # parameter-error samples must deflate the model-term precision
            # while the incumbent parameters are far off; it vanishes as
            # <eps_p> -> 0 at the optimum
            mean_ep = res.eps_p.mean(axis=0)
            sigma_p = sigma_p + np.outer(mean_ep, mean_ep)

    Sigma_dx = propagate_sigma_dx(sigma_x, sigma_p, Jx, Jp)
    raw_sigma_x = sigma_x
    if apply_stabilization:
        # each covariance inflated by the magnitude of its own residual mean,
        # so a systematically biased term deflates its own precision; both
        # terms vanish as the residuals recenter near convergence
        sigma_x = stabilize(sigma_x, res.eps_x)
        Sigma_dx = Sigma_dx + np.diag(np.abs(res.eps_dx.mean(axis=0)))

    Sigma_z = b.U_R.T @ sigma_x @ b.U_R
    Sigma_z = 0.5 * (Sigma_z + Sigma_z.T)
    Sigma_dz = np.einsum("ir,dij,js->drs", b.U_R, Sigma_dx, b.U_R)
    Sigma_dz = 0.5 * (Sigma_dz + np.swapaxes(Sigma_dz, 1, 2))

    Omega_z = _invert_spd(Sigma_z)
    Omega_dz = np.empty_like(Sigma_dz)
    for i in range(Sigma_dz.shape[0]):
        Omega_dz[i] = _invert_spd(Sigma_dz[i])
    return CovarianceSet(Sigma_x=sigma_x, Sigma_p=sigma_p, Sigma_dx=Sigma_dx,
                         Sigma_z=Sigma_z, Sigma_dz=Sigma_dz,
                         Omega_z=Omega_z, Omega_dz=Omega_dz,
                         stabilized=apply_stabilization,
                         Sigma_x_raw=raw_sigma_x)


# ---------------------------------------------------------------------------
# losses


def loss_naive(res: ResidualSet, alpha: float) -> float:
    """Scalar-weighted mean squared errors, model term plus alpha times the
    interpolation term."""
    d = res.eps_x.shape[0]
    return float(np.sum(res.eps_dx * res.eps_dx) / d
                 + alpha * np.sum(res.eps_x * res.eps_x) / d)


def loss_rkinn_parts(res: ResidualSet, cov: CovarianceSet):
    """(ell_t, ell_x, ell_dx): total, interpolation and model parts of the
    projected negative log-likelihood."""
    d = res.eps_z_R.shape[0]
    ell_x = float(np.einsum("di,ij,dj->", res.eps_z_R, cov.Omega_z, res.eps_z_R) / d)
    ell_dx = float(np.einsum("di,dij,dj->", res.eps_dz_R, cov.Omega_dz, res.eps_dz_R) / d)
    return ell_x + ell_dx, ell_x, ell_dx


def loss_rkinn(res: ResidualSet, cov: CovarianceSet) -> float:
    return loss_rkinn_parts(res, cov)[0]


# ---------------------------------------------------------------------------
# tape ops for the training loop


def _psi_var(X: ad.Var, net: ReactionNetwork) -> ad.Var:
    val = stoich.psi(X.value, net)

    def vjp(g):
        J = stoich.psi_jacobian(X.value, net)
        return (np.einsum("dj,djn->dn", g, J),)

    return ad.custom(val, (X,), vjp, name="psi")


def _rhs_var(X: ad.Var, p: ad.Var, net: ReactionNetwork) -> ad.Var:
    rates = ad.exp(p) * _psi_var(X, net)
    return rates @ net.M.T


def _bquad(E: ad.Var, Omegas: np.ndarray) -> ad.Var:
    """sum_i E_i^T Omega_i E_i with per-point symmetric weight matrices."""
    val = np.einsum("di,dij,dj->", E.value, Omegas, E.value)

    def vjp(g):
        return (2.0 * g * np.einsum("dij,dj->di", Omegas, E.value),)

    return ad.custom(val, (E,), vjp, name="bquad")


def _quad(E: ad.Var, Omega: np.ndarray) -> ad.Var:
    return ad.vsum((E @ Omega) * E)


def _sumsq(E: ad.Var) -> ad.Var:
    return ad.vsum(E * E)


@dataclass
class _LossContext:
    """Constant pieces of the loss shared by every iteration of a run."""

    net: ReactionNetwork
    data: TrainingData
    U_R: np.ndarray
    slices: list[slice]

    @classmethod
    def build(cls, model: SurrogateModel, data: TrainingData) -> "_LossContext":
        return cls(net=model_network(model), data=data,
                   U_R=model.bases.U_R, slices=data.slices())


def _rkinn_loss_var(tm: TapeModel, ctx: _LossContext, cov: CovarianceSet) -> ad.Var:
    total = None
    for e in range(ctx.data.n_experiments):
        x_out, z_out, _ = tm.forward(ctx.data.times[e], e, tangent=True)
        f_z = _rhs_var(x_out.value, tm.p, ctx.net) @ ctx.U_R
        ez = (x_out.value - ctx.data.observations[e]) @ ctx.U_R
        edz = z_out.tangent - f_z
        term = _quad(ez, cov.Omega_z) + _bquad(edz, cov.Omega_dz[ctx.slices[e]])
        total = term if total is None else total + term
    return total * (1.0 / ctx.data.total_points)


def _naive_loss_var(tm: TapeModel, ctx: _LossContext, alpha: float) -> ad.Var:
    total = None
    for e in range(ctx.data.n_experiments):
        x_out, _, _ = tm.forward(ctx.data.times[e], e, tangent=True)
        f = _rhs_var(x_out.value, tm.p, ctx.net)
        term = _sumsq(x_out.tangent - f) + alpha * _sumsq(x_out.value - ctx.data.observations[e])
        total = term if total is None else total + term
    return total * (1.0 / ctx.data.total_points)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations_per_epoch: int = 100
    max_epochs: int = 300
    loss_tolerance: float = 1e-4
    patience: int = 10
    covariance_update_period: int = 1
    warmup_epochs: int = 10
    # Adam keeps stepping at the learning-rate scale regardless of gradient
    # size, so without decay the loss dithers and never goes stationary;
    # the rate is held constant through decay_start and then lowered
    # geometrically to lr_final at the epoch cap.
    lr_final: float = 1e-5
    decay_start: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.iterations_per_epoch < 1:
            raise ValueError("need at least one iteration per epoch")

    def lr_at(self, epoch: int) -> float:
        start = int(self.decay_start * self.max_epochs)
        if epoch <= start or self.max_epochs <= start:
            return self.lr
        frac = (epoch - start) / (self.max_epochs - start)
        return self.lr * (self.lr_final / self.lr) ** frac


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState | None, config: TrainConfig,
              lr: float | None = None):
    """One bias-corrected Adam update; returns (new params, state)."""
    if state is None:
        state = AdamState()
    if not state.m:
        state.m = {k: np.zeros_like(v) for k, v in params.items()}
        state.v = {k: np.zeros_like(v) for k, v in params.items()}
    if lr is None:
        lr = config.lr
    state.t += 1
    t = state.t
    c1 = 1.0 - config.beta1 ** t
    c2 = 1.0 - config.beta2 ** t
    new = {}
    for k, theta in params.items():
        g = grads[k]
        state.m[k] = config.beta1 * state.m[k] + (1.0 - config.beta1) * g
        state.v[k] = config.beta2 * state.v[k] + (1.0 - config.beta2) * g * g
        mhat = state.m[k] / c1
        vhat = state.v[k] / c2
        new[k] = theta - lr * mhat / (np.sqrt(vhat) + config.eps)
    return new, state


def _adam_epoch(model: SurrogateModel, loss_builder, adam_state: AdamState,
                config: TrainConfig, iterations: int,
                lr: float | None = None) -> float:
    """Run Adam iterations with the loss frozen in structure; returns the
    last loss value."""
    value = np.nan
    names = [name for name, _ in model.param_items()]
    for _ in range(iterations):
        tm = TapeModel(model)
        out = loss_builder(tm)
        grads_list = ad.grad(out, tm.leaves())
        grads = dict(zip(names, grads_list))
        params = dict(model.param_items())
        new_params, adam_state = adam_step(params, grads, adam_state, config,
                                           lr=lr)
        model.set_params(new_params)
        value = float(out.value)
    return value


def _stationary(ell_values: list[float], tol: float, patience: int) -> bool:
    if len(ell_values) <= patience:
        return False
    recent = ell_values[-(patience + 1):]
    for prev, cur in zip(recent[:-1], recent[1:]):
        if abs(cur - prev) > tol * max(abs(prev), 1e-300):
            return False
    return True


def default_model(data: TrainingData, net: ReactionNetwork,
                  bases: RangeNullBases, config: TrainConfig,
                  hidden=(20, 20, 20), activations=("tanh", "swish", "tanh"),
                  p0=None, trainable_nullspace: bool = False) -> SurrogateModel:
    """Fresh surrogate with per-experiment nullspace coordinates estimated
    from the data."""
    z_N = np.stack([estimate_zN(o, bases) for o in data.observations])
    t_lo = min(float(t[0]) for t in data.times)
    t_hi = max(float(t[-1]) for t in data.times)
    if p0 is None:
        # Start every rate constant at the finest resolvable scale, 1/t_min.
        # The propagated derivative variances scale with the incumbent rate
        # constants, so approaching the solution from above keeps the model
        # term conservatively weighted while it shrinks each constant onto
        # the data; starting far below the truth makes that term
        # overconfident and collapses the kinetics instead.
        p0 = np.full(net.n_reactions, np.log(1.0 / t_lo))
    model = build_surrogate(bases, net.n_reactions, z_N, t_lo, t_hi,
                            hidden=hidden, activations=activations,
                            seed=config.seed, p0=p0,
                            trainable_nullspace=trainable_nullspace)
    _init_output_bias(model, data, net)
    return bind_network(model, net)


def _init_output_bias(model: SurrogateModel, data: TrainingData,
                      net: ReactionNetwork) -> None:
    """Start both output heads at the data mean.

    Zero biases leave the normalization chain deeply saturated whenever one
    coverage dominates (gradients through the product of sigmoids are then
    attenuated by orders of magnitude and the interpolation stalls), so the
    pre-normalization head is placed at the stick-breaking inverse of the
    mean observed coverages and the linear head at the matching projection
    of the mean range coordinates.
    """
    stacked = data.stacked()
    b = model.bases
    if len(net.lat_idx) > 0:
        mean_cov = stacked[:, net.lat_idx].mean(axis=0)
        mean_cov = np.maximum(mean_cov, 1e-4)
        mean_cov = mean_cov / mean_cov.sum()
        model.weights.b_lat = cn_inverse(mean_cov)
    if b.U_lat_R_null.shape[1] > 0:
        mean_z = (stacked @ b.U_R).mean(axis=0)
        model.weights.b_obs = b.U_lat_R_null.T @ mean_z


def train_rkinn(data: TrainingData, net: ReactionNetwork,
                bases: RangeNullBases, config: TrainConfig,
                model: SurrogateModel | None = None,
                hidden=(20, 20, 20), activations=("tanh", "swish", "tanh"),
                p0=None, trainable_nullspace: bool = False):
    """Robust training loop: inner Adam iterations against frozen precision
    matrices, covariance/precision refresh each epoch, stop on the epoch cap
    or on the loss staying within the relative tolerance for `patience`
    consecutive epochs.

    Returns (model, history) where history carries per-epoch ell_t, ell_x,
    ell_dx, the kinetic parameters, and covariance snapshots.
    """
    if model is None:
        model = default_model(data, net, bases, config, hidden, activations,
                              p0, trainable_nullspace)
    else:
        bind_network(model, net)
    ctx = _LossContext.build(model, data)

    res = residuals(model, data)
    pooled = data.stacked()
    # Initial covariances under no prior knowledge: interpolation variance at
    # the data variance, parameter variance effectively uninformative. The
    # weak initial parameter precision plus the warmup below start training
    # in the interpolation-dominated basin; refreshed covariances then keep
    # the surrogate pinned to the data while the kinetic parameters climb.
    sigma_x0 = np.var(pooled) * np.eye(data.n_species)
    sigma_p0 = 1e3 * np.eye(net.n_reactions)
    cov = build_covariances(model, data, res, sigma_x=sigma_x0,
                            sigma_p=sigma_p0)

    adam_state = AdamState()
    history = {"epoch": [], "ell_t": [], "ell_x": [], "ell_dx": [],
               "p": [], "sigma_x": [], "sigma_p": []}
    for epoch in range(1, config.max_epochs + 1):
        _adam_epoch(model, lambda tm: _rkinn_loss_var(tm, ctx, cov),
                    adam_state, config, config.iterations_per_epoch,
                    lr=config.lr_at(epoch))
        res = residuals(model, data)
        ell_t, ell_x, ell_dx = loss_rkinn_parts(res, cov)
        history["epoch"].append(epoch)
        history["ell_t"].append(ell_t)
        history["ell_x"].append(ell_x)
        history["ell_dx"].append(ell_dx)
        history["p"].append(model.p.copy())
        history["sigma_x"].append(cov.Sigma_x.copy())
        history["sigma_p"].append(cov.Sigma_p.copy())
        if _stationary(history["ell_t"], config.loss_tolerance, config.patience):
            break
        refresh_due = (epoch >= config.warmup_epochs
                       and epoch % config.covariance_update_period == 0)
        if refresh_due and epoch < config.max_epochs:
            cov = build_covariances(model, data, res)
    return model, history


def train_naive(data: TrainingData, net: ReactionNetwork,
                bases: RangeNullBases, config: TrainConfig, alpha: float,
                epochs: int, model: SurrogateModel | None = None,
                hidden=(20, 20, 20), activations=("tanh", "swish", "tanh")):
    """Fixed-alpha training against the scalar-weighted loss; used directly
    and by the regularization sweep (warm starts pass the previous model)."""
    if model is None:
        model = default_model(data, net, bases, config, hidden, activations)
    else:
        bind_network(model, net)
    ctx = _LossContext.build(model, data)
    adam_state = AdamState()
    history = {"epoch": [], "loss": [], "mse_x": [], "mse_dx": [], "p": []}
    for epoch in range(1, epochs + 1):
        _adam_epoch(model, lambda tm: _naive_loss_var(tm, ctx, alpha),
                    adam_state, config, config.iterations_per_epoch)
        res = residuals(model, data)
        d = res.eps_x.shape[0]
        history["epoch"].append(epoch)
        history["loss"].append(loss_naive(res, alpha))
        history["mse_x"].append(float(np.sum(res.eps_x ** 2) / d))
        history["mse_dx"].append(float(np.sum(res.eps_dx ** 2) / d))
        history["p"].append(model.p.copy())
    return model, history


def alpha_sweep(data: TrainingData, net: ReactionNetwork,
                bases: RangeNullBases, config: TrainConfig,
                alpha_schedule=None, epochs_per_alpha: int = 50,
                hidden=(20, 20, 20), activations=("tanh", "swish", "tanh")):
    """Pareto sweep of the naive regularization weight.

    Runs the geometric schedule in the tightening direction (increasing
    alpha) and back down (relaxation), warm-starting each run from the
    previous one, and records (direction, alpha, mse_x, mse_dx, p). The two
    passes over the same alphas expose the hysteresis.
    """
    if alpha_schedule is None:
        alpha_schedule = np.geomspace(1e-4, 1e4, 17)
    alpha_schedule = np.asarray(alpha_schedule, dtype=float)
    records = []
    model = None
    for direction, alphas in (("tighten", alpha_schedule),
                              ("relax", alpha_schedule[::-1])):
        for alpha in alphas:
            model, hist = train_naive(data, net, bases, config, float(alpha),
                                      epochs_per_alpha, model=model,
                                      hidden=hidden, activations=activations)
            records.append({
                "direction": direction,
                "alpha": float(alpha),
                "mse_x": hist["mse_x"][-1],
                "mse_dx": hist["mse_dx"][-1],
                "p": model.p.copy(),
            })
    return records
