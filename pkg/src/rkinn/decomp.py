"""Range/nullspace preconditioning built from the SVD of the stoichiometry
matrix.

States decompose as x = U_R z_R + U_N z_N where U_R spans the column space of
M (all time variation lives there) and U_N spans the left nullspace (the
conserved quantities, constant along any trajectory). The latent (adsorbate)
rows of both bases get their own nested nullspace bases, which the structured
surrogate output map needs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .linalg import NumericalError
from .stoich import ReactionNetwork


@dataclass
class ZState:
    """Projection of one state vector: z_R is time-dependent, z_N is not."""

    z_R: np.ndarray
    z_N: np.ndarray


@dataclass
class RangeNullBases:
    """Orthonormal bases from the SVD of M plus their latent/observable blocks.

    U_R: (n, r) range basis; U_N: (n, n-r) nullspace basis. The *_lat and
    *_obs blocks are row selections. U_lat_R_null spans null[U_lat_R] (extra
    range freedom invisible to the latent block); U_lat_N_null spans
    null[U_lat_N].
    """

    U_R: np.ndarray
    U_N: np.ndarray
    rank: int
    singular_values: np.ndarray
    obs_idx: np.ndarray
    lat_idx: np.ndarray
    tol: float

    U_obs_R: np.ndarray = field(init=False)
    U_lat_R: np.ndarray = field(init=False)
    U_obs_N: np.ndarray = field(init=False)
    U_lat_N: np.ndarray = field(init=False)
    U_lat_R_null: np.ndarray = field(init=False)
    U_lat_N_null: np.ndarray = field(init=False)
    pinv_U_lat_R: np.ndarray = field(init=False)
    pinv_U_lat_N: np.ndarray = field(init=False)

    def __post_init__(self):
        self.U_obs_R = self.U_R[self.obs_idx]
        self.U_lat_R = self.U_R[self.lat_idx]
        self.U_obs_N = self.U_N[self.obs_idx]
        self.U_lat_N = self.U_N[self.lat_idx]
        n_lat = len(self.lat_idx)
        if n_lat > 0 and self.U_lat_R.size and not np.any(self.U_lat_R):
            raise NumericalError("latent block of the range basis is zero")
        self.U_lat_R_null = linalg.nullspace(self.U_lat_R, self.tol)
        self.U_lat_N_null = linalg.nullspace(self.U_lat_N, self.tol)
        self.pinv_U_lat_R = linalg.pinv(self.U_lat_R, self.tol)
        self.pinv_U_lat_N = linalg.pinv(self.U_lat_N, self.tol)

    @property
    def n(self) -> int:
        return self.U_R.shape[0]

    @property
    def null_dim(self) -> int:
        return self.U_N.shape[1]

    def reconstruct(self, z: ZState) -> np.ndarray:
        return self.U_R @ z.z_R + self.U_N @ z.z_N

    def to_debug_json(self) -> str:
        """Row-major dump of all bases for cross-implementation comparison."""
        doc = {
            "rank": self.rank,
            "tol": self.tol,
            "singular_values": self.singular_values.tolist(),
            "U_R": self.U_R.tolist(),
            "U_N": self.U_N.tolist(),
            "U_lat_R_null": self.U_lat_R_null.tolist(),
            "U_lat_N_null": self.U_lat_N_null.tolist(),
            "obs_idx": self.obs_idx.tolist(),
            "lat_idx": self.lat_idx.tolist(),
        }
        return json.dumps(doc, indent=1)


def build_bases(net: ReactionNetwork, tol: float | None = None) -> RangeNullBases:
    """SVD of the stoichiometry matrix, split at the numerical rank."""
    res = linalg.svd(net.M)
    if tol is None:
        tol = linalg.default_rank_tol(net.M.shape)
    r = res.rank(tol)
    return RangeNullBases(
        U_R=res.U[:, :r].copy(),
        U_N=res.U[:, r:].copy(),
        rank=r,
        singular_values=res.S.copy(),
        obs_idx=net.obs_idx.copy(),
        lat_idx=net.lat_idx.copy(),
        tol=tol,
    )


def project(v, bases: RangeNullBases) -> ZState:
    """Lossless projection of a length-n vector onto the two subspaces."""
    v = np.asarray(v, dtype=float)
    if v.shape != (bases.n,):
        raise ValueError(f"expected length-{bases.n} vector, got {v.shape}")
    return ZState(z_R=bases.U_R.T @ v, z_N=bases.U_N.T @ v)


def estimate_zN(observations, bases: RangeNullBases) -> np.ndarray:
    """A-priori nullspace coordinates: the mean of (U_N)^T x over the
    observed states. Accepts a (d, n) array or a sequence of state vectors."""
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    if obs.size == 0:
        raise ValueError("cannot estimate nullspace coordinates from no observations")
    if obs.shape[1] != bases.n:
        raise ValueError(f"observations have {obs.shape[1]} columns, expected {bases.n}")
    return (obs @ bases.U_N).mean(axis=0)


def project_covariance(Sigma, bases: RangeNullBases) -> np.ndarray:
    """(U_R)^T Sigma U_R, symmetrized. Projection preserves PSD-ness."""
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.shape != (bases.n, bases.n):
        raise ValueError("covariance shape does not match basis dimension")
    out = bases.U_R.T @ Sigma @ bases.U_R
    return 0.5 * (out + out.T)


def nullspace_invariance_residual(traj_derivatives, bases: RangeNullBases) -> float:
    """max |(U_N)^T xdot| over the given derivative rows; ~0 for any
    derivative produced by the kinetic model."""
    d = np.atleast_2d(np.asarray(traj_derivatives, dtype=float))
    if bases.null_dim == 0:
        return 0.0
    return float(np.abs(d @ bases.U_N).max(initial=0.0))
