"""The surrogate approximator: a small feed-forward network behind a
structured range/nullspace output map.

The network maps (scaled log-time, experiment tag) to two heads: a
pre-normalization head of size n_latent - 1 that the stick-breaking sigmoid
operator turns into coverage fractions on the open simplex, and a linear head
for the range directions the latent block cannot see. The output map then
assembles the range coordinates

    z_R(t) = pinv(U_lat_R) (coverages(t) - x_lat_N) + U_lat_R_null obs_head(t)

and reconstructs x(t) = U_R z_R(t) + U_N z_N with the nullspace coordinates
z_N held fixed (estimated from data a priori). Time derivatives come from
forward-mode dual numbers pushed through the whole composition; gradients
with respect to weights and kinetic parameters come from the reverse tape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Dual, Var
from .decomp import RangeNullBases
from .linalg import NumericalError

ACTIVATIONS = {"tanh": ad.tanh, "swish": ad.swish, "rbf": ad.rbf}


def _raw(x) -> np.ndarray:
    """Fully unwrap a Var/Dual/ndarray to its numpy payload."""
    if isinstance(x, Dual):
        x = x.value
    return ad.value_of(x)


def cn_normalize(xhat):
    """Stick-breaking normalization onto the open probability simplex.

    Maps length p-1 input to length p output via products of sigmoids:
    entry i is (1 - sig(xhat_i)) prod_{j<i} sig(xhat_j) and the last entry is
    the full product. The sum telescopes to exactly 1, every entry lies in
    (0, 1), and the map is a bijection onto the open simplex interior.

    Accepts a 1-d vector or a (d, p-1) batch; also works on tape Vars and
    Duals (2-d only).
    """
    if isinstance(xhat, (Var, Dual)):
        return _cn_batch(xhat, _raw(xhat).shape[-1])
    xhat = np.asarray(xhat, dtype=float)
    if not np.all(np.isfinite(xhat)):
        raise NumericalError("non-finite input to the normalization operator")
    if xhat.ndim == 1:
        return _cn_batch(xhat[None, :], xhat.shape[0])[0]
    return _cn_batch(xhat, xhat.shape[1])


def _hstack(parts):
    if any(isinstance(p, Dual) for p in parts):
        return Dual(_hstack([p.value for p in parts]),
                    _hstack([p.tangent for p in parts]))
    if any(isinstance(p, Var) for p in parts):
        return ad.concat(parts, axis=1)
    return np.concatenate(parts, axis=1)


def cn_inverse(coverage) -> np.ndarray:
    """Inverse of the stick-breaking map on the open simplex (1-d input).

    Useful for placing the pre-normalization head at a target coverage
    pattern; entries are clipped away from the simplex boundary so the
    logits stay finite.
    """
    c = np.asarray(coverage, dtype=float)
    width = c.shape[0] - 1
    xhat = np.empty(width)
    prefix = 1.0
    for i in range(width):
        s = 1.0 - c[i] / prefix
        s = min(max(s, 1e-9), 1.0 - 1e-9)
        xhat[i] = np.log(s / (1.0 - s))
        prefix *= s
    return xhat


def _cn_batch(xhat, width):
    if width == 0:
        return np.ones((_raw(xhat).shape[0], 1))
    s = ad.sigmoid(xhat)
    cols = []
    prefix = None
    for i in range(width):
        s_i = s[:, i:i + 1]
        piece = 1.0 - s_i
        cols.append(piece if prefix is None else prefix * piece)
        prefix = s_i if prefix is None else prefix * s_i
    cols.append(prefix)
    return _hstack(cols)


@dataclass
class MLPWeights:
    """Dense feed-forward weights plus the two output heads."""

    n_inputs: int
    hidden: tuple[int, ...]
    activations: tuple[str, ...]
    W: list[np.ndarray]
    b: list[np.ndarray]
    W_lat: np.ndarray   # (h_last, max(n_latent - 1, 0))
    b_lat: np.ndarray
    W_obs: np.ndarray   # (h_last, extra range directions)
    b_obs: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if len(self.hidden) != len(self.activations):
            raise ValueError("one activation per hidden layer required")
        for name in self.activations:
            if name not in ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")


def init_weights(n_inputs: int, hidden, activations, n_lat_head: int,
                 n_obs_head: int, seed: int) -> MLPWeights:
    """Seeded symmetric-uniform init, a = sqrt(6 / (fan_in + fan_out));
    biases start at zero."""
    rng = np.random.Generator(np.random.Philox(seed))

    def draw(fan_in, fan_out):
        a = np.sqrt(6.0 / max(fan_in + fan_out, 1))
        return rng.uniform(-a, a, size=(fan_in, fan_out))

    sizes = [n_inputs, *hidden]
    W = [draw(sizes[i], sizes[i + 1]) for i in range(len(hidden))]
    b = [np.zeros(s) for s in hidden]
    h_last = sizes[-1]
    return MLPWeights(
        n_inputs=n_inputs, hidden=tuple(hidden), activations=tuple(activations),
        W=W, b=b,
        W_lat=draw(h_last, n_lat_head), b_lat=np.zeros(n_lat_head),
        W_obs=draw(h_last, n_obs_head), b_obs=np.zeros(n_obs_head),
        seed=seed)


@dataclass
class SurrogateModel:
    """Weights, kinetic parameters, bases and the frozen nullspace solution.

    z_N has one row per experiment; multiple experiments share the hidden
    layers and are told apart by a one-hot tag appended to the time input.
    """

    weights: MLPWeights
    p: np.ndarray
    bases: RangeNullBases
    z_N: np.ndarray                 # (n_experiments, null_dim)
    t_lo: float
    t_hi: float
    trainable_nullspace: bool = False
    zn_lat: np.ndarray | None = None   # (n_experiments, n_latent - 1)
    zn_obs: np.ndarray | None = None   # (n_experiments, dim null[U_lat_N])

    _log_span: float = field(init=False, repr=False)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.z_N = np.atleast_2d(np.asarray(self.z_N, dtype=float))
        self._log_span = max(np.log(self.t_hi) - np.log(self.t_lo), 1e-30)
        if self.trainable_nullspace:
            n_exp = self.z_N.shape[0]
            n_lat = len(self.bases.lat_idx)
            q_n = self.bases.U_lat_N_null.shape[1]
            if self.zn_lat is None:
                self.zn_lat = np.zeros((n_exp, max(n_lat - 1, 0)))
            if self.zn_obs is None:
                self.zn_obs = np.zeros((n_exp, q_n))

    @property
    def n_experiments(self) -> int:
        return self.z_N.shape[0]

    @property
    def n_tags(self) -> int:
        return self.n_experiments if self.n_experiments > 1 else 0

    # -- parameters ----------------------------------------------------------

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        """Canonical (name, array) order of every trainable parameter."""
        items = []
        for i, (W, b) in enumerate(zip(self.weights.W, self.weights.b)):
            items.append((f"W{i}", W))
            items.append((f"b{i}", b))
        items.append(("W_lat", self.weights.W_lat))
        items.append(("b_lat", self.weights.b_lat))
        items.append(("W_obs", self.weights.W_obs))
        items.append(("b_obs", self.weights.b_obs))
        if self.trainable_nullspace:
            items.append(("zn_lat", self.zn_lat))
            items.append(("zn_obs", self.zn_obs))
        items.append(("p", self.p))
        return items

    def set_params(self, updates: dict[str, np.ndarray]) -> None:
        for i in range(len(self.weights.W)):
            self.weights.W[i] = updates[f"W{i}"]
            self.weights.b[i] = updates[f"b{i}"]
        self.weights.W_lat = updates["W_lat"]
        self.weights.b_lat = updates["b_lat"]
        self.weights.W_obs = updates["W_obs"]
        self.weights.b_obs = updates["b_obs"]
        if self.trainable_nullspace:
            self.zn_lat = updates["zn_lat"]
            self.zn_obs = updates["zn_obs"]
        self.p = updates["p"]

    def scaled_time(self, times):
        """Affine map of log time onto [-1, 1] over the training window."""
        times = np.asarray(times, dtype=float)
        u = 2.0 * (np.log(times) - np.log(self.t_lo)) / self._log_span - 1.0
        udot = 2.0 / (self._log_span * times)
        return u, udot

    def input_matrix(self, times, experiment: int):
        u, udot = self.scaled_time(times)
        d = u.shape[0]
        X = np.zeros((d, 1 + self.n_tags))
        X[:, 0] = u
        Xdot = np.zeros_like(X)
        Xdot[:, 0] = udot
        if self.n_tags:
            X[:, 1 + experiment] = 1.0
        return X, Xdot


def _nullspace_rows(params, model: SurrogateModel, experiment: int):
    """Per-experiment (1, null_dim) nullspace coordinates and the latent/full
    offsets they induce. Constant unless the trainable-nullspace flag is on,
    in which case they are built from the extra parameter heads."""
    b = model.bases
    if not model.trainable_nullspace:
        zn_row = model.z_N[experiment][None, :]
        return zn_row, zn_row @ b.U_lat_N.T, zn_row @ b.U_N.T
    zn_lat = params["zn_lat"][experiment:experiment + 1, :]
    zn_obs = params["zn_obs"][experiment:experiment + 1, :]
    cov = _cn_batch(zn_lat, _raw(zn_lat).shape[1])
    zn_row = cov @ b.pinv_U_lat_N.T
    if b.U_lat_N_null.shape[1] > 0:
        zn_row = zn_row + zn_obs @ b.U_lat_N_null.T
    return zn_row, zn_row @ b.U_lat_N.T, zn_row @ b.U_N.T


def forward(params, model: SurrogateModel, times, experiment: int = 0,
            tangent: bool = False, nullspace_rows=None):
    """Evaluate the full composition over a batch of times.

    Returns (x, z_R, coverage); each is a Dual when ``tangent`` is set or
    when weight entries are tape Vars the corresponding outputs are Vars.
    ``coverage`` is None for networks without latent species.
    ``nullspace_rows`` overrides the per-experiment (z_N row, latent offset,
    full offset) triple, e.g. to differentiate through data-derived z_N.
    """
    wts = model.weights
    X, Xdot = model.input_matrix(times, experiment)
    h = Dual(X, Xdot) if tangent else X
    for i, name in enumerate(wts.activations):
        h = ACTIVATIONS[name](h @ params[f"W{i}"] + params[f"b{i}"])

    b = model.bases
    n_lat = len(b.lat_idx)
    q_r = b.U_lat_R_null.shape[1]
    if nullspace_rows is None:
        zn_row, x_lat_N_row, xN_row = _nullspace_rows(params, model, experiment)
    else:
        zn_row, x_lat_N_row, xN_row = nullspace_rows

    z_R = None
    coverage = None
    if n_lat > 0:
        lat_hat = h @ params["W_lat"] + params["b_lat"]
        coverage = _cn_batch(lat_hat, wts.W_lat.shape[1])
        z_R = (coverage - x_lat_N_row) @ b.pinv_U_lat_R.T
    if q_r > 0:
        obs_term = (h @ params["W_obs"] + params["b_obs"]) @ b.U_lat_R_null.T
        z_R = obs_term if z_R is None else z_R + obs_term
    x = z_R @ b.U_R.T + xN_row
    return x, z_R, coverage


def _np_params(model: SurrogateModel) -> dict[str, np.ndarray]:
    return dict(model.param_items())


def sa_eval_batch(times, model: SurrogateModel, experiment: int = 0):
    """States and range coordinates at a batch of times, (d, n) and (d, r)."""
    x, z_R, _ = forward(_np_params(model), model, times, experiment)
    if not np.all(np.isfinite(x)):
        raise NumericalError("surrogate produced non-finite states")
    return x, z_R


def sa_eval(t: float, model: SurrogateModel, experiment: int = 0):
    """State vector and range coordinates at one time."""
    x, z_R = sa_eval_batch(np.array([t]), model, experiment)
    return x[0], z_R[0]


def sa_derivatives_batch(times, model: SurrogateModel, experiment: int = 0):
    """(x, xdot, z_R, zdot_R) over a batch of times via forward-mode AD."""
    out_x, out_z, _ = forward(_np_params(model), model, times, experiment,
                              tangent=True)
    x, xdot = out_x.value, out_x.tangent
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xdot))):
        raise NumericalError("surrogate produced non-finite derivatives")
    return x, xdot, out_z.value, out_z.tangent


def sa_time_derivative(t: float, model: SurrogateModel, experiment: int = 0):
    """Exact d x / d t at one time (tangent seed dt = 1 through the whole
    composition)."""
    _, xdot, _, _ = sa_derivatives_batch(np.array([t]), model, experiment)
    return xdot[0]


class TapeModel:
    """Model view whose parameters are tape Vars; passed to loss closures."""

    def __init__(self, model: SurrogateModel):
        self.model = model
        self.params = {name: Var(arr, name=name) for name, arr in model.param_items()}

    @property
    def p(self) -> Var:
        return self.params["p"]

    def forward(self, times, experiment: int = 0, tangent: bool = True,
                nullspace_rows=None):
        return forward(self.params, self.model, times, experiment,
                       tangent=tangent, nullspace_rows=nullspace_rows)

    def leaves(self) -> list[Var]:
        return list(self.params.values())


def grad_wrt_weights_and_p(loss_closure, model: SurrogateModel):
    """Reverse-mode gradient of a scalar loss over all trainable parameters.

    ``loss_closure`` receives a TapeModel and must return a scalar Var built
    from it. Returns (flat gradient in canonical parameter order, loss value).
    """
    tm = TapeModel(model)
    out = loss_closure(tm)
    grads = ad.grad(out, tm.leaves())
    return np.concatenate([g.ravel() for g in grads]), float(out.value)


def flatten_params(model: SurrogateModel) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, arr in model.param_items()])


def unflatten_params(model: SurrogateModel, vec: np.ndarray) -> dict[str, np.ndarray]:
    out = {}
    pos = 0
    for name, arr in model.param_items():
        out[name] = vec[pos:pos + arr.size].reshape(arr.shape).copy()
        pos += arr.size
    if pos != vec.size:
        raise ValueError("flat parameter vector has the wrong length")
    return out


def build_surrogate(bases: RangeNullBases, n_reactions: int, z_N,
                    t_lo: float, t_hi: float,
                    hidden=(20, 20, 20),
                    activations=("tanh", "swish", "tanh"),
                    seed: int = 0, p0=None,
                    trainable_nullspace: bool = False) -> SurrogateModel:
    """Construct a surrogate with fresh seeded weights.

    Head widths are read off the bases: the pre-normalization head has
    n_latent - 1 outputs, the linear head one output per direction of
    null[U_lat_R] (range freedom the latent block cannot see).
    """
    z_N = np.atleast_2d(np.asarray(z_N, dtype=float))
    n_exp = z_N.shape[0]
    n_lat = len(bases.lat_idx)
    n_lat_head = max(n_lat - 1, 0) if n_lat > 0 else 0
    n_obs_head = bases.U_lat_R_null.shape[1]
    n_inputs = 1 + (n_exp if n_exp > 1 else 0)
    weights = init_weights(n_inputs, hidden, activations, n_lat_head,
                           n_obs_head, seed)
    p = np.zeros(n_reactions) if p0 is None else np.asarray(p0, dtype=float).copy()
    return SurrogateModel(weights=weights, p=p, bases=bases, z_N=z_N,
                          t_lo=t_lo, t_hi=t_hi,
                          trainable_nullspace=trainable_nullspace)


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(path, model: SurrogateModel) -> None:
    """JSON checkpoint that round-trips bit-exactly (floats written with
    shortest round-trip representation)."""
    wts = model.weights
    doc = {
        "format": 1,
        "n_inputs": wts.n_inputs,
        "hidden": list(wts.hidden),
        "activations": list(wts.activations),
        "seed": wts.seed,
        "t_lo": model.t_lo,
        "t_hi": model.t_hi,
        "z_N": model.z_N.tolist(),
        "trainable_nullspace": model.trainable_nullspace,
        "zn_lat": None if model.zn_lat is None else model.zn_lat.tolist(),
        "zn_obs": None if model.zn_obs is None else model.zn_obs.tolist(),
        "params": {name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                   for name, arr in model.param_items()},
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path, bases: RangeNullBases) -> SurrogateModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != 1:
        raise ValueError("unsupported checkpoint format")
    params = {name: np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
              for name, entry in doc["params"].items()}
    n_hidden = len(doc["hidden"])
    weights = MLPWeights(
        n_inputs=doc["n_inputs"], hidden=tuple(doc["hidden"]),
        activations=tuple(doc["activations"]),
        W=[params[f"W{i}"] for i in range(n_hidden)],
        b=[params[f"b{i}"] for i in range(n_hidden)],
        W_lat=params["W_lat"], b_lat=params["b_lat"],
        W_obs=params["W_obs"], b_obs=params["b_obs"],
        seed=doc["seed"])
    model = SurrogateModel(
        weights=weights, p=params["p"], bases=bases,
        z_N=np.asarray(doc["z_N"], dtype=float),
        t_lo=doc["t_lo"], t_hi=doc["t_hi"],
        trainable_nullspace=doc["trainable_nullspace"],
        zn_lat=params.get("zn_lat"), zn_obs=params.get("zn_obs"))
    return model
