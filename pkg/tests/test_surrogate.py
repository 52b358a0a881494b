import numpy as np
import pytest

from rkinn import decomp, mle, stoich, surrogate
from rkinn.integrate import log_time_grid, solve_ivp
from rkinn.linalg import NumericalError
from rkinn.surrogate import (build_surrogate, cn_inverse, cn_normalize,
                             load_checkpoint, sa_derivatives_batch, sa_eval,
                             sa_eval_batch, sa_time_derivative, save_checkpoint)
from tests.conftest import TOY_P_TRUE


def test_cn_two_species_center():
    assert np.allclose(cn_normalize(np.zeros(1)), [0.5, 0.5])


def test_cn_three_species_center():
    assert np.allclose(cn_normalize(np.zeros(2)), [0.5, 0.25, 0.25])


def test_cn_simplex_membership():
    rng = np.random.default_rng(0)
    X = rng.uniform(-10, 10, size=(10_000, 5))
    out = cn_normalize(X)
    assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-12
    assert np.all(out > 0.0) and np.all(out < 1.0)


def test_cn_injective():
    rng = np.random.default_rng(1)
    A = rng.uniform(-8, 8, size=(1000, 5))
    B = A + rng.uniform(1e-6, 1.0, size=A.shape) * rng.choice([-1, 1], A.shape)
    out_a, out_b = cn_normalize(A), cn_normalize(B)
    dist = np.abs(out_a - out_b).max(axis=1)
    assert np.all(dist > 0.0)


def test_cn_inverse_roundtrip():
    rng = np.random.default_rng(2)
    for _ in range(100):
        xhat = rng.uniform(-6, 6, 6)
        cov = cn_normalize(xhat)
        assert np.abs(cn_normalize(cn_inverse(cov)) - cov).max() < 1e-9


def test_cn_rejects_nonfinite():
    with pytest.raises(NumericalError):
        cn_normalize(np.array([np.nan, 0.0]))


def _bundled_model(dcs_net, dcs_bases, seed=0):
    # nullspace coordinates from a physically valid state so that the
    # coverage block of the reconstruction sums to one
    x_ref = np.array([0.3, 0.2, 0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.1, 0.2])
    z_N = decomp.project(x_ref, dcs_bases).z_N
    model = build_surrogate(dcs_bases, dcs_net.n_reactions, z_N[None, :],
                            t_lo=1e-4, t_hi=10.0, seed=seed)
    return mle.bind_network(model, dcs_net)


def test_head_widths(dcs_net, dcs_bases):
    model = _bundled_model(dcs_net, dcs_bases)
    assert model.weights.W_lat.shape == (20, 6)
    assert model.weights.W_obs.shape == (20, 1)
    assert model.weights.n_inputs == 1  # single experiment, no tag


def test_sa_zero_weights_constant_in_time(dcs_net, dcs_bases):
    model = _bundled_model(dcs_net, dcs_bases)
    for W in model.weights.W:
        W[:] = 0.0
    model.weights.W_lat[:] = 0.0
    model.weights.W_obs[:] = 0.0
    x1, _ = sa_eval(1e-3, model)
    x2, _ = sa_eval(5.0, model)
    assert np.array_equal(x1, x2)
    assert np.allclose(sa_time_derivative(0.3, model), 0.0)


def test_sa_latent_block_on_simplex(dcs_net, dcs_bases):
    rng = np.random.default_rng(3)
    for seed in range(10):
        model = _bundled_model(dcs_net, dcs_bases, seed=seed)
        for t in rng.uniform(1e-4, 10.0, size=10):
            x, _ = sa_eval(float(t), model)
            lat = x[dcs_net.lat_idx]
            assert abs(lat.sum() - 1.0) < 1e-10
            assert np.all(lat > 0.0)


def test_sa_nullspace_coordinates_fixed(dcs_net, dcs_bases):
    model = _bundled_model(dcs_net, dcs_bases, seed=4)
    X, _ = sa_eval_batch(np.geomspace(1e-4, 10, 23), model)
    zn = X @ dcs_bases.U_N
    assert np.abs(zn - model.z_N[0]).max() < 1e-12


def test_sa_reconstruction_consistency(dcs_net, dcs_bases):
    model = _bundled_model(dcs_net, dcs_bases, seed=5)
    times = np.geomspace(1e-4, 10, 7)
    X, Z = sa_eval_batch(times, model)
    rebuilt = Z @ dcs_bases.U_R.T + model.z_N[0] @ dcs_bases.U_N.T
    assert np.abs(X - rebuilt).max() < 1e-12


def test_time_derivative_matches_finite_differences(dcs_net, dcs_bases):
    model = _bundled_model(dcs_net, dcs_bases, seed=6)
    rng = np.random.default_rng(7)
    for t in rng.uniform(0.01, 5.0, size=8):
        xd = sa_time_derivative(float(t), model)
        h = 1e-5 * t
        xp, _ = sa_eval(float(t + h), model)
        xm, _ = sa_eval(float(t - h), model)
        fd = (xp - xm) / (2 * h)
        mask = np.abs(xd) > 1e-8
        rel = np.abs(xd - fd)[mask] / np.abs(fd)[mask]
        # 1e-4 leaves room for central-difference truncation on coordinates
        # whose derivative is orders of magnitude below the dominant ones
        assert rel.max() < 1e-4


def test_batch_derivatives_match_pointwise(dcs_net, dcs_bases):
    model = _bundled_model(dcs_net, dcs_bases, seed=8)
    times = np.geomspace(1e-3, 1.0, 5)
    X, Xdot, Z, Zdot = sa_derivatives_batch(times, model)
    for i, t in enumerate(times):
        assert np.allclose(Xdot[i], sa_time_derivative(float(t), model))
    assert np.abs(Xdot - Zdot @ dcs_bases.U_R.T).max() < 1e-12


def test_grad_zero_weight_bias_analytic(toy_net, toy_bases):
    # at zero weights z_R = b_obs through the nested basis; the gradient of
    # |x(t0)|^2 with respect to the linear-head bias is analytic
    z_N = decomp.project(np.array([0.6, 0.4]), toy_bases).z_N
    model = build_surrogate(toy_bases, 2, z_N[None, :], t_lo=0.01, t_hi=2.0,
                            seed=0)
    mle.bind_network(model, toy_net)
    for W in model.weights.W:
        W[:] = 0.0
    model.weights.W_obs[:] = 0.0
    t0 = 0.5

    def loss(tm):
        x, _, _ = tm.forward(np.array([t0]), tangent=False)
        from rkinn import autodiff as ad
        return ad.vsum(x * x)

    grad, val = surrogate.grad_wrt_weights_and_p(loss, model)
    x0, _ = sa_eval(t0, model)
    # d|x|^2/db_obs = 2 x^T U_R @ U_lat_R_null
    expected = 2.0 * x0 @ (toy_bases.U_R @ toy_bases.U_lat_R_null)
    names = [n for n, _ in model.param_items()]
    sizes = [a.size for _, a in model.param_items()]
    offset = sum(s for n, s in zip(names, sizes) if names.index(n) < names.index("b_obs"))
    b_obs_grad = grad[offset:offset + 1]
    assert np.allclose(b_obs_grad, expected, rtol=1e-12)
    assert val == pytest.approx(float(x0 @ x0))


def test_grad_p_block_zero_when_loss_ignores_p(dcs_net, dcs_bases):
    model = _bundled_model(dcs_net, dcs_bases, seed=9)

    def loss(tm):
        from rkinn import autodiff as ad
        x, _, _ = tm.forward(np.array([0.1, 1.0]), tangent=False)
        return ad.vsum(x * x)

    grad, _ = surrogate.grad_wrt_weights_and_p(loss, model)
    assert np.array_equal(grad[-dcs_net.n_reactions:], np.zeros(14))


def test_full_loss_gradient_directional_fd(toy_net, toy_bases, toy_data):
    cfg = mle.TrainConfig(seed=3)
    model = mle.default_model(toy_data, toy_net, toy_bases, cfg)
    res = mle.residuals(model, toy_data)
    cov = mle.build_covariances(model, toy_data, res,
                                sigma_x=0.01 * np.eye(2),
                                sigma_p=0.1 * np.eye(2))
    ctx = mle._LossContext.build(model, toy_data)
    grad, val = surrogate.grad_wrt_weights_and_p(
        lambda tm: mle._rkinn_loss_var(tm, ctx, cov), model)
    theta0 = surrogate.flatten_params(model)
    rng = np.random.default_rng(11)

    def loss_at(theta):
        m = mle.default_model(toy_data, toy_net, toy_bases, cfg)
        m.set_params(surrogate.unflatten_params(m, theta))
        return mle.loss_rkinn(mle.residuals(m, toy_data), cov)

    for _ in range(20):
        d = rng.standard_normal(theta0.size)
        d /= np.linalg.norm(d)
        h = 1e-6
        fd = (loss_at(theta0 + h * d) - loss_at(theta0 - h * d)) / (2 * h)
        assert abs(grad @ d - fd) / max(abs(fd), 1e-10) < 1e-4


def test_checkpoint_roundtrip_bit_exact(tmp_path, dcs_net, dcs_bases):
    model = _bundled_model(dcs_net, dcs_bases, seed=10)
    model.p = np.linspace(-1, 6, 14)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, model)
    loaded = load_checkpoint(path, dcs_bases)
    for (n1, a1), (n2, a2) in zip(model.param_items(), loaded.param_items()):
        assert n1 == n2
        assert np.array_equal(a1, a2)
    assert np.array_equal(model.z_N, loaded.z_N)
    save_checkpoint(tmp_path / "ckpt2.json", loaded)
    assert (tmp_path / "ckpt.json").read_bytes() == (tmp_path / "ckpt2.json").read_bytes()


def test_multi_experiment_tags(dcs_net, dcs_bases):
    x_ref = np.array([0.3, 0.2, 0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.1, 0.2])
    z = decomp.project(x_ref, dcs_bases).z_N
    model = build_surrogate(dcs_bases, 14, np.stack([z, z * 1.01]),
                            t_lo=1e-4, t_hi=10.0, seed=1)
    mle.bind_network(model, dcs_net)
    assert model.weights.n_inputs == 3
    x0, _ = sa_eval(0.1, model, experiment=0)
    x1, _ = sa_eval(0.1, model, experiment=1)
    assert not np.allclose(x0, x1)


def test_trainable_nullspace_flag(dcs_net, dcs_bases):
    x_ref = np.array([0.3, 0.2, 0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.1, 0.2])
    z = decomp.project(x_ref, dcs_bases).z_N
    model = build_surrogate(dcs_bases, 14, z[None, :], t_lo=1e-4, t_hi=10.0,
                            seed=2, trainable_nullspace=True)
    mle.bind_network(model, dcs_net)
    assert model.zn_lat.shape == (1, 6)
    assert model.zn_obs.shape == (1, 0)  # bundled network: no extra freedom
    names = [n for n, _ in model.param_items()]
    assert "zn_lat" in names and "zn_obs" in names
    x, _ = sa_eval(0.5, model)
    lat = x[dcs_net.lat_idx]
    assert abs(lat.sum() - 1.0) < 1e-10  # coverages normalized by the head


def test_nonfinite_output_rejected(dcs_net, dcs_bases):
    model = _bundled_model(dcs_net, dcs_bases, seed=11)
    model.weights.W[0][0, 0] = np.nan
    with pytest.raises(NumericalError):
        sa_eval_batch(np.array([0.1]), model)
