"""Adaptive ODE integration and the synthetic-data pipeline.

Integration uses the embedded Dormand-Prince 5(4) pair (scipy's RK45) with
dense output so trajectories are evaluated exactly at the requested times.
Observation noise and the hidden calibration factors that turn latent
coverages into semi-quantitative signals are applied here, all driven by
recorded seeds (counter-based Philox generator).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp as _scipy_solve_ivp

from .linalg import NumericalError
from .stoich import ReactionNetwork, rhs

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10


@dataclass
class Trajectory:
    times: np.ndarray          # strictly increasing, length d
    states: np.ndarray         # (d, n)
    derivatives: np.ndarray | None = None  # (d, n), rhs at each time

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise NumericalError("non-finite trajectory states")


@dataclass
class ExperimentSpec:
    """One synthetic experiment: initial condition, sampling window, noise
    level, seed, and the hidden per-adsorbate calibration factors."""

    x0: np.ndarray
    t_min: float
    t_max: float
    n_points: int
    noise_sigma: float
    seed: int
    hidden_gamma: np.ndarray | None = None   # length n_latent; None means 1
    name: str = "experiment"

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.t_min <= 0:
            raise ValueError("t_min must be positive for log spacing")
        if self.t_max < self.t_min:
            raise ValueError("t_max must be >= t_min")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if np.any(self.x0 < 0):
            raise ValueError("initial state must be nonnegative")
        if self.hidden_gamma is not None:
            self.hidden_gamma = np.asarray(self.hidden_gamma, dtype=float)
            if np.any(self.hidden_gamma <= 0):
                raise ValueError("hidden calibration factors must be positive")


def log_time_grid(t_min: float, t_max: float, n: int) -> np.ndarray:
    """Geometrically spaced sample times from t_min to t_max inclusive."""
    if n < 1:
        raise ValueError("need at least one time point")
    if n == 1:
        if t_min != t_max:
            raise ValueError("n=1 requires t_min == t_max")
        return np.array([t_min])
    if t_min <= 0:
        raise ValueError("t_min must be positive for log spacing")
    return np.geomspace(t_min, t_max, n)


def solve_ivp(net: ReactionNetwork, p, x0, times,
              rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> Trajectory:
    """Integrate the kinetic model from x0 at times[0], sampling the dense
    output exactly at the requested times.

    Raises NumericalError naming the failure time if the step size underflows
    (stiffness beyond the explicit solver).
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    times = np.asarray(times, dtype=float)
    p = np.asarray(p, dtype=float)
    x0 = np.asarray(x0, dtype=float)

    def fun(t, x):
        return rhs(x, p, net)

    sol = _scipy_solve_ivp(fun, (times[0], times[-1]), x0, method="RK45",
                           t_eval=times, rtol=rtol, atol=atol)
    if not sol.success:
        t_fail = sol.t[-1] if sol.t.size else times[0]
        raise NumericalError(
            f"integration failed near t={t_fail:.6g}: {sol.message}")
    states = sol.y.T
    return Trajectory(times=times, states=states,
                      derivatives=rhs(states, p, net))


def generate_synthetic(spec: ExperimentSpec, net: ReactionNetwork, p):
    """Simulate one experiment.

    Returns (clean, observed_bulk, latent_signals): the noise-free
    trajectory, the noisy bulk-species observations (d, n_obs), and the
    noisy de-calibrated latent signals (d, n_latent). Noise is added to the
    states first; latent signals then inherit the scaled noise through the
    elementwise division by the hidden calibration factors.
    """
    if spec.x0.shape != (net.n_species,):
        raise ValueError("initial state length does not match the network")
    gamma = spec.hidden_gamma
    if gamma is None:
        gamma = np.ones(net.n_latent)
    if gamma.shape != (net.n_latent,):
        raise ValueError("hidden_gamma length does not match latent species count")

    times = log_time_grid(spec.t_min, spec.t_max, spec.n_points)
    clean = solve_ivp(net, p, spec.x0, times)

    rng = np.random.Generator(np.random.Philox(spec.seed))
    noisy = clean.states + spec.noise_sigma * rng.standard_normal(clean.states.shape)
    observed_bulk = noisy[:, net.obs_idx]
    latent_signals = noisy[:, net.lat_idx] / gamma
    return clean, observed_bulk, latent_signals


def hidden_gamma_log_uniform(n_latent: int, seed: int,
                             low: float = 0.5, high: float = 2.0) -> np.ndarray:
    """Seeded log-uniform draw of hidden calibration factors."""
    rng = np.random.Generator(np.random.Philox(seed))
    return np.exp(rng.uniform(np.log(low), np.log(high), size=n_latent))


# ---------------------------------------------------------------------------
# file formats


def _fmt(x: float) -> str:
    return repr(float(x))


def write_series_csv(path, times, values, columns) -> None:
    """CSV with header ``t,<columns...>`` and one row per time point.

    Floats are written with shortest round-trip formatting, so identical
    inputs give byte-identical files.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    lines = ["t," + ",".join(columns)]
    for t, row in zip(times, values):
        lines.append(",".join([_fmt(t)] + [_fmt(v) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_series_csv(path):
    """Inverse of write_series_csv: returns (times, values, columns)."""
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    if header[0] != "t":
        raise ValueError(f"{path}: expected a 't' first column")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return data[:, 0], data[:, 1:], header[1:]


def write_experiment_files(out_dir, spec: ExperimentSpec, net: ReactionNetwork,
                           clean: Trajectory, observed_bulk, latent_signals) -> list[Path]:
    """Emit the clean/observed/signal CSVs and the JSON sidecar for one
    experiment; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    obs_names = [net.species[i] for i in net.obs_idx]
    lat_names = [net.species[i] for i in net.lat_idx]
    stem = spec.name
    paths = []

    def emit(name, values, columns):
        path = out_dir / f"{stem}_{name}.csv"
        write_series_csv(path, clean.times, values, columns)
        paths.append(path)

    emit("clean", clean.states, net.species)
    emit("observed_bulk", observed_bulk, obs_names)
    if lat_names:
        emit("latent_signals", latent_signals, lat_names)

    sidecar = out_dir / f"{stem}_spec.json"
    gamma = spec.hidden_gamma
    sidecar.write_text(json.dumps({
        "name": spec.name,
        "x0": spec.x0.tolist(),
        "t_min": spec.t_min,
        "t_max": spec.t_max,
        "n_points": spec.n_points,
        "noise_sigma": spec.noise_sigma,
        "seed": spec.seed,
        "hidden_gamma": None if gamma is None else np.asarray(gamma).tolist(),
    }, indent=1) + "\n")
    paths.append(sidecar)
    return paths
