"""Mean-field microkinetic models: the kinetic ODE right-hand side and its
analytic Jacobians.

A model is ``xdot = M (k o psi(x))`` with ``k = exp(p)`` and power-law rates
``psi_j(x) = prod_i x_i^{nu_ij}`` where the reaction orders come from the
reactant (negative) stoichiometric entries, ``nu = max(-M, 0)``.

States and rate parameters are plain 1-d numpy arrays; every operation also
accepts a batch of states with shape (d, n) and then returns batched results.
All functions are pure.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .linalg import NumericalError

_NETWORK_KEYS = {"species", "latent", "M", "reactions"}
_OPTIONAL_KEYS = {"version", "ln_k0"}


@dataclass
class ReactionNetwork:
    """Stoichiometry and species metadata for one reaction network.

    Attributes:
        species: species labels, length n.
        latent_mask: True for species observable only through uncalibrated
            signals (adsorbates/intermediates).
        M: integer stoichiometry matrix, shape (n, m); column j is the net
            change of each species in reaction j.
        reaction_labels: human-readable reaction strings, length m.
        ln_k0: optional reference log rate constants bundled with the network.
    """

    species: list[str]
    latent_mask: np.ndarray
    M: np.ndarray
    reaction_labels: list[str]
    ln_k0: np.ndarray | None = None

    # derived, filled in __post_init__
    nu: np.ndarray = field(init=False, repr=False)
    obs_idx: np.ndarray = field(init=False, repr=False)
    lat_idx: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=float)
        self.latent_mask = np.asarray(self.latent_mask, dtype=bool)
        n, m = self.M.shape
        if n < 2 or m < 1:
            raise ValueError("network needs at least 2 species and 1 reaction")
        if len(self.species) != n:
            raise ValueError("species list does not match M row count")
        if len(self.reaction_labels) != m:
            raise ValueError("reaction list does not match M column count")
        if self.latent_mask.shape != (n,):
            raise ValueError("latent mask does not match species count")
        if not np.all(self.M == np.round(self.M)):
            raise ValueError("stoichiometric entries must be integers")
        if np.any(np.all(self.M >= 0, axis=0)):
            raise ValueError("every reaction must consume at least one species")
        self.nu = np.maximum(-self.M, 0.0)
        self.obs_idx = np.flatnonzero(~self.latent_mask)
        self.lat_idx = np.flatnonzero(self.latent_mask)
        if self.ln_k0 is not None:
            self.ln_k0 = np.asarray(self.ln_k0, dtype=float)
            if self.ln_k0.shape != (m,):
                raise ValueError("ln_k0 length does not match reaction count")
        # reactant list per reaction: [(species index, order), ...]
        self._reactants = [
            [(int(i), int(self.nu[i, j])) for i in np.flatnonzero(self.nu[:, j])]
            for j in range(m)
        ]

    @property
    def n_species(self) -> int:
        return self.M.shape[0]

    @property
    def n_reactions(self) -> int:
        return self.M.shape[1]

    @property
    def n_latent(self) -> int:
        return int(self.latent_mask.sum())


def _as_state(x, net: ReactionNetwork) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.n_species:
        raise ValueError(
            f"state has {x.shape[-1]} entries, network has {net.n_species} species")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite state vector")
    return x


def psi(x, net: ReactionNetwork) -> np.ndarray:
    """Power-law rate factors psi_j = prod_i x_i^{nu_ij}, shape (..., m).

    A reaction with no reactants gets psi_j = 1; integer orders make the
    product well defined for any real state (0**0 == 1).
    """
    x = _as_state(x, net)
    out = np.ones(x.shape[:-1] + (net.n_reactions,))
    for j, reactants in enumerate(net._reactants):
        for i, order in reactants:
            out[..., j] = out[..., j] * (x[..., i] if order == 1 else x[..., i] ** order)
    return out


def psi_jacobian(x, net: ReactionNetwork) -> np.ndarray:
    """d psi / d x with shape (..., m, n).

    Entry (j, i) is nu_ij x_i^{nu_ij - 1} prod_{i' != i} x_{i'}^{nu_{i'j}};
    the exclusion of the i-th factor (instead of division) keeps states with
    zero entries exact: d(x^2)/dx at 0 is 0 and x^0 == 1 everywhere.
    """
    x = _as_state(x, net)
    out = np.zeros(x.shape[:-1] + (net.n_reactions, net.n_species))
    for j, reactants in enumerate(net._reactants):
        for i, order in reactants:
            term = float(order) * (x[..., i] ** (order - 1) if order > 1
                                   else np.ones(x.shape[:-1]))
            for i2, order2 in reactants:
                if i2 != i:
                    term = term * (x[..., i2] ** order2)
            out[..., j, i] = term
    return out


def rhs(x, p, net: ReactionNetwork) -> np.ndarray:
    """Kinetic ODE right-hand side M (exp(p) o psi(x)), shape (..., n).

    The result lies exactly in the column space of M.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (net.n_reactions,):
        raise ValueError(f"expected {net.n_reactions} rate parameters, got {p.shape}")
    rates = np.exp(p) * psi(x, net)
    return rates @ net.M.T


def jac_x(x, p, net: ReactionNetwork) -> np.ndarray:
    """Jacobian of rhs with respect to the state, shape (..., n, n)."""
    p = np.asarray(p, dtype=float)
    dpsi = psi_jacobian(x, net)
    return np.einsum("nj,...ji->...ni", net.M, np.exp(p)[:, None] * dpsi)


def jac_p(x, p, net: ReactionNetwork) -> np.ndarray:
    """Jacobian of rhs with respect to the log rate constants,
    M @ diag(exp(p) o psi(x)), shape (..., n, m)."""
    rates = np.exp(np.asarray(p, dtype=float)) * psi(x, net)
    return net.M[..., :, :] * rates[..., None, :]


def load_network(path) -> ReactionNetwork:
    """Read a network definition JSON file.

    Required fields: species (strings), latent (booleans), M (integer rows),
    reactions (strings). Optional: version, ln_k0. Unknown keys are rejected.
    """
    with open(path) as fh:
        doc = json.load(fh)
    unknown = set(doc) - _NETWORK_KEYS - _OPTIONAL_KEYS
    if unknown:
        raise ValueError(f"unknown keys in network file: {sorted(unknown)}")
    missing = _NETWORK_KEYS - set(doc)
    if missing:
        raise ValueError(f"missing keys in network file: {sorted(missing)}")
    return ReactionNetwork(
        species=list(doc["species"]),
        latent_mask=np.asarray(doc["latent"], dtype=bool),
        M=np.asarray(doc["M"], dtype=float),
        reaction_labels=list(doc["reactions"]),
        ln_k0=np.asarray(doc["ln_k0"], dtype=float) if "ln_k0" in doc else None,
    )


def bundled_network_path() -> Path:
    """Path of the bundled heterogeneous *dcs* network (10 species, 14 steps)."""
    return Path(str(resources.files("rkinn").joinpath("data/dcs.json")))


def bundled_network_sha256() -> str:
    return hashlib.sha256(bundled_network_path().read_bytes()).hexdigest()


def load_bundled_network() -> ReactionNetwork:
    return load_network(bundled_network_path())
