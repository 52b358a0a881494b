import numpy as np
import pytest

from rkinn import decomp, mle, stoich
from rkinn.integrate import ExperimentSpec, generate_synthetic, log_time_grid, solve_ivp


@pytest.fixture(scope="session")
def dcs_net():
    return stoich.load_bundled_network()


@pytest.fixture(scope="session")
def dcs_bases(dcs_net):
    return decomp.build_bases(dcs_net)


@pytest.fixture(scope="session")
def toy_net():
    """2-species reversible isomerization A <-> B, no latent species."""
    return stoich.ReactionNetwork(
        species=["A", "B"], latent_mask=[False, False],
        M=[[-1, 1], [1, -1]], reaction_labels=["A -> B", "B -> A"])


@pytest.fixture(scope="session")
def toy_bases(toy_net):
    return decomp.build_bases(toy_net)


@pytest.fixture(scope="session")
def single_step_net():
    """Irreversible A -> B; the parameter Jacobian has full column rank."""
    return stoich.ReactionNetwork(
        species=["A", "B"], latent_mask=[False, False],
        M=[[-1], [1]], reaction_labels=["A -> B"])


TOY_P_TRUE = np.log([2.0, 1.0])


@pytest.fixture(scope="session")
def toy_data(toy_net, toy_bases):
    """Noise-free 50-point toy trajectory and its TrainingData."""
    times = log_time_grid(0.01, 2.0, 50)
    traj = solve_ivp(toy_net, TOY_P_TRUE, np.array([1.0, 0.0]), times)
    return mle.TrainingData(times=[times], observations=[traj.states])


def dcs_ic(bulk):
    """Full state vector for the bundled network: bulk values, clean
    surface, all free sites."""
    x0 = np.zeros(10)
    x0[:3] = bulk
    x0[-1] = 1.0
    return x0


def dcs_experiments(net, sigma, gamma, seeds=(7, 8), n_points=100):
    """The paper's two initial conditions, simulated at the given noise."""
    blocks = []
    for bulk, seed, name in (([0.6, 0.4, 0.0], seeds[0], "ic1"),
                             ([0.2, 0.3, 0.5], seeds[1], "ic2")):
        spec = ExperimentSpec(x0=dcs_ic(bulk), t_min=1e-4, t_max=10.0,
                              n_points=n_points, noise_sigma=sigma, seed=seed,
                              hidden_gamma=gamma, name=name)
        clean, obs_bulk, signals = generate_synthetic(spec, net, net.ln_k0)
        blocks.append((spec, clean, obs_bulk, signals))
    return blocks
