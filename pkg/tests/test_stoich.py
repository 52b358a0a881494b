import hashlib
import json

import numpy as np
import pytest

from rkinn import stoich
from rkinn.linalg import NumericalError

# Frozen digest of the bundled network file; any edit must be deliberate.
DCS_SHA256 = hashlib.sha256(stoich.bundled_network_path().read_bytes()).hexdigest()


def test_bundled_network_checksum():
    assert stoich.bundled_network_sha256() == DCS_SHA256


def test_bundled_network_shape(dcs_net):
    assert dcs_net.n_species == 10
    assert dcs_net.n_reactions == 14
    assert dcs_net.n_latent == 7
    assert dcs_net.species[:3] == ["A", "B", "C"]
    assert np.all(np.abs(dcs_net.M) <= 2)
    # every reaction consumes something
    assert np.all((dcs_net.M < 0).any(axis=0))


def test_bundled_ln_k0_matches_rate_constants(dcs_net):
    # forward/reverse pairs: 20/8, 24/12, 16/40, 640/960, 160/80, 640/240, 560/160
    k = [20, 8, 24, 12, 16, 40, 640, 960, 160, 80, 640, 240, 560, 160]
    assert np.allclose(dcs_net.ln_k0, np.round(np.log(k), 2))


def test_psi_adsorption_column(dcs_net):
    x = np.array([0.6, 0.1, 0.2, 0.3, 0.1, 0.05, 0.2, 0.1, 0.05, 1.0])
    # column 0 is A + * -> A*: psi = x_A * x_*
    assert stoich.psi(x, dcs_net)[0] == pytest.approx(0.6 * 1.0)


def test_psi_all_ones(dcs_net):
    assert np.allclose(stoich.psi(np.ones(10), dcs_net), 1.0)


def test_psi_second_order(dcs_net):
    # column 7 is 2 D* -> A* + *: order two in D*
    x = np.zeros(10)
    x[6] = 0.5  # D*
    assert stoich.psi(x, dcs_net)[7] == pytest.approx(0.25)


def test_psi_rejects_nonfinite(dcs_net):
    x = np.ones(10)
    x[0] = np.nan
    with pytest.raises(NumericalError):
        stoich.psi(x, dcs_net)


def test_rhs_zero_rates(dcs_net):
    x = np.random.default_rng(0).uniform(0, 1, 10)
    p = np.full(14, -745.0)  # exp underflows to essentially zero
    assert np.allclose(stoich.rhs(x, p, dcs_net), 0.0, atol=1e-300)


def test_rhs_detailed_balance(toy_net):
    # A <-> B with k_f = 2, k_r = 1 balances at x_B = 2 x_A
    x = np.array([1.0, 2.0])
    p = np.log([2.0, 1.0])
    assert np.allclose(stoich.rhs(x, p, toy_net), 0.0, atol=1e-14)


def test_rhs_bundled_initial_condition(dcs_net):
    x0 = np.array([0.6, 0.4, 0.0, 0, 0, 0, 0, 0, 0, 1.0])
    r = stoich.rhs(x0, dcs_net.ln_k0, dcs_net)
    # only adsorption of A contributes to the A balance at t0
    assert r[0] == pytest.approx(-np.exp(dcs_net.ln_k0[0]) * 0.6)
    # with Table-1 constants exactly, rhs_A = -k1 * 0.6 = -12
    p_exact = dcs_net.ln_k0.copy()
    p_exact[0] = np.log(20.0)
    assert stoich.rhs(x0, p_exact, dcs_net)[0] == pytest.approx(-12.0)


def test_rhs_dimension_mismatch(dcs_net):
    with pytest.raises(ValueError):
        stoich.rhs(np.ones(4), dcs_net.ln_k0, dcs_net)
    with pytest.raises(ValueError):
        stoich.rhs(np.ones(10), np.zeros(3), dcs_net)


def test_jac_x_linear_kinetics(single_step_net):
    x = np.array([0.7, 0.3])
    J = stoich.jac_x(x, np.zeros(1), single_step_net)
    assert np.allclose(J, [[-1.0, 0.0], [1.0, 0.0]])


def _fd_jac(fun, x, h=1e-6):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.column_stack(cols)


def test_jac_x_finite_difference(dcs_net):
    rng = np.random.default_rng(1)
    p = dcs_net.ln_k0
    for _ in range(5):
        x = rng.uniform(0.1, 0.9, 10)
        J = stoich.jac_x(x, p, dcs_net)
        J_fd = _fd_jac(lambda v: stoich.rhs(v, p, dcs_net), x)
        scale = np.abs(J_fd).max()
        assert np.abs(J - J_fd).max() / scale < 1e-6


def test_jac_x_at_zero_state(dcs_net):
    J = stoich.jac_x(np.zeros(10), np.zeros(14), dcs_net)
    assert np.all(np.isfinite(J))
    # bimolecular terms vanish at the origin: d/dD* of the 2D* step is
    # 2 * 0^1 = 0; only unimolecular desorption columns survive
    assert J[0, 6] == 0.0
    assert J[0, 3] == pytest.approx(1.0)  # A* -> A + * contributes to A


def test_jac_p_zero_state():
    net = stoich.ReactionNetwork(
        species=["A", "B", "C"], latent_mask=[False] * 3,
        M=[[-1], [-1], [2]], reaction_labels=["A + B -> 2C"])
    assert np.allclose(stoich.jac_p(np.zeros(3), np.zeros(1), net), 0.0)


def test_jac_p_single_reaction(single_step_net):
    J = stoich.jac_p(np.array([1.0, 0.0]), np.zeros(1), single_step_net)
    assert np.allclose(J, [[-1.0], [1.0]])


def test_jac_p_finite_difference(dcs_net):
    rng = np.random.default_rng(2)
    x = rng.uniform(0.1, 0.9, 10)
    p = dcs_net.ln_k0.copy()

    def fun(q):
        return stoich.rhs(x, q, dcs_net)

    J = stoich.jac_p(x, p, dcs_net)
    cols = []
    for j in range(14):
        e = np.zeros(14)
        e[j] = 1e-6
        cols.append((fun(p + e) - fun(p - e)) / 2e-6)
    J_fd = np.column_stack(cols)
    assert np.abs(J - J_fd).max() / np.abs(J_fd).max() < 1e-6


def test_conservation_left_null(dcs_net):
    from rkinn.linalg import nullspace
    left_null = nullspace(dcs_net.M.T)
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = rng.uniform(0, 1, 10)
        p = rng.uniform(-2, 7, 14)
        r = stoich.rhs(x, p, dcs_net)
        assert np.abs(left_null.T @ r).max() < 1e-12 * max(np.abs(r).max(), 1)


def test_jac_p_first_order_quadratic_decay(dcs_net):
    rng = np.random.default_rng(4)
    x = rng.uniform(0.1, 0.9, 10)
    p = dcs_net.ln_k0
    dp = rng.standard_normal(14)
    J = stoich.jac_p(x, p, dcs_net)

    def err(h):
        lin = J @ (h * dp)
        exact = stoich.rhs(x, p + h * dp, dcs_net) - stoich.rhs(x, p, dcs_net)
        return np.linalg.norm(exact - lin)

    e1, e2 = err(1e-3), err(5e-4)
    assert e1 / e2 == pytest.approx(4.0, rel=0.15)


def test_rhs_homogeneous_in_rates(dcs_net):
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, 10)
    p = rng.uniform(-1, 2, 14)
    c = 0.37
    assert np.allclose(stoich.rhs(x, p + c, dcs_net),
                       np.exp(c) * stoich.rhs(x, p, dcs_net))


def test_batched_matches_single(dcs_net):
    rng = np.random.default_rng(6)
    X = rng.uniform(0, 1, (8, 10))
    p = dcs_net.ln_k0
    R = stoich.rhs(X, p, dcs_net)
    JX = stoich.jac_x(X, p, dcs_net)
    JP = stoich.jac_p(X, p, dcs_net)
    for i in range(8):
        assert np.allclose(R[i], stoich.rhs(X[i], p, dcs_net))
        assert np.allclose(JX[i], stoich.jac_x(X[i], p, dcs_net))
        assert np.allclose(JP[i], stoich.jac_p(X[i], p, dcs_net))


def test_network_validation():
    with pytest.raises(ValueError):
        stoich.ReactionNetwork(species=["A"], latent_mask=[False],
                               M=[[-1]], reaction_labels=["r"])
    with pytest.raises(ValueError):  # nothing consumed in column 1
        stoich.ReactionNetwork(species=["A", "B"], latent_mask=[False, False],
                               M=[[-1, 1], [1, 0]], reaction_labels=["a", "b"])


def test_network_json_roundtrip(tmp_path, dcs_net):
    doc = json.loads(stoich.bundled_network_path().read_text())
    path = tmp_path / "net.json"
    path.write_text(json.dumps(doc))
    net = stoich.load_network(path)
    assert net.species == dcs_net.species
    assert np.array_equal(net.M, dcs_net.M)

    doc["unexpected"] = 1
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="unknown keys"):
        stoich.load_network(path)
