import itertools

import numpy as np
import pytest
import scipy.linalg

from conftest import all_test_models
from symvae import chain
from symvae import efcore as ef
from symvae.errors import ConvergenceError, InvalidInputError, NothingToInferError


def _random_pair(rng, nx=4, nz=4):
    return chain.TabularPair(rng.dirichlet(np.ones(nx), size=nz), rng.dirichlet(np.ones(nz), size=nx))


def _one_hot(idx, n):
    return np.eye(n)[idx]


def _tv(a, b):
    return 0.5 * np.abs(np.asarray(a) - np.asarray(b)).sum()


# --- stationary distribution ------------------------------------------------------------

def test_stationary_two_state():
    m = chain.stationary_distribution(np.array([[0.9, 0.1], [0.2, 0.8]]), tol=1e-14)
    np.testing.assert_allclose(m, [2 / 3, 1 / 3], atol=1e-12)


def test_stationary_uniform_kernel():
    np.testing.assert_allclose(chain.stationary_distribution(np.full((5, 5), 0.2)), np.full(5, 0.2), atol=1e-15)


def test_stationary_matches_eigensolver():
    rng = np.random.default_rng(0)
    kernel = rng.dirichlet(np.ones(7), size=7)
    m = chain.stationary_distribution(kernel, tol=1e-14)
    vals, vecs = scipy.linalg.eig(kernel.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    assert np.abs(m - v / v.sum()).max() < 1e-8


def test_stationary_periodic_kernel_fails_with_residual():
    with pytest.raises(ConvergenceError) as err:
        chain.stationary_distribution(np.array([[0.0, 1.0], [1.0, 0.0]]), init=[0.9, 0.1], max_iters=50)
    assert err.value.residual > 1.0


def test_stationary_rejects_non_stochastic():
    with pytest.raises(InvalidInputError):
        chain.stationary_distribution(np.array([[0.5, 0.6], [0.5, 0.5]]))


# --- kernels --------------------------------------------------------------------------

def test_tabular_kernel_brute_force():
    pair = _random_pair(np.random.default_rng(1), 3, 5)
    tx, tz = chain.tabular_kernel(pair)
    want = np.array([[sum(pair.q_z_given_x[x, z] * pair.p_x_given_z[z, x2] for z in range(5)) for x2 in range(3)]
                     for x in range(3)])
    np.testing.assert_allclose(tx, want, atol=1e-15)
    assert np.abs(tx.sum(axis=1) - 1).max() < 1e-12 and np.abs(tz.sum(axis=1) - 1).max() < 1e-12


def test_tabular_kernel_deterministic_is_permutation():
    perm = np.array([2, 0, 1])
    pair = chain.TabularPair(_one_hot(perm, 3), np.eye(3))
    tx, _ = chain.tabular_kernel(pair)
    np.testing.assert_array_equal(tx, _one_hot(perm, 3))


def test_tabular_kernel_uniform():
    tx, tz = chain.tabular_kernel(chain.TabularPair(np.full((2, 4), 0.25), np.full((4, 2), 0.5)))
    np.testing.assert_allclose(tx, 0.25)
    np.testing.assert_allclose(tz, 0.5)


def test_tabular_kernel_of_network_pair():
    models = all_test_models()["pair-bernoulli"]
    pair = chain.tabulate(models)
    xf, zf = models.variables["x"], models.variables["z"]
    xs, zs = ef.support(xf), ef.support(zf)
    p = np.exp([[models.log_density(models.for_var("p", "x"), {"x": x[None], "z": z[None]})[0] for x in xs]
                for z in zs])
    q = np.exp([[models.log_density(models.players["q"][0], {"x": x[None], "z": z[None]})[0] for z in zs]
                for x in xs])
    tx, _ = chain.tabular_kernel(models)
    np.testing.assert_allclose(tx, q @ p, atol=1e-13)
    np.testing.assert_allclose(pair.p_x_given_z, p, atol=1e-13)


def test_pair_validation():
    with pytest.raises(InvalidInputError):
        chain.TabularPair(np.full((2, 3), 1 / 3), np.full((2, 2), 0.5))
    with pytest.raises(InvalidInputError):
        chain.TabularPair(np.full((2, 2), 0.6), np.full((2, 2), 0.5))


# --- gibbs steps ------------------------------------------------------------------------

def test_deterministic_chain_reaches_fixed_point_in_two_sweeps():
    # x = z + 1 (mod 3), then z = 0 regardless of x: fixed point (x, z) = (1, 0)
    pair = chain.TabularPair(_one_hot((np.arange(3) + 1) % 3, 3), _one_hot(np.zeros(3, dtype=int), 3))
    rng = np.random.default_rng(2)
    state = chain.init_state(pair, rng, batch=6)
    for _ in range(2):
        state = chain.gibbs_step(pair, state, rng)
    assert np.all(state.current["x"] == 1) and np.all(state.current["z"] == 0)
    assert state.step_count == 2 and state.last_sampled == "z"


def test_uniform_conditionals_give_independent_uniform_draws():
    pair = chain.TabularPair(np.full((3, 4), 0.25), np.full((4, 3), 1 / 3))
    rng = np.random.default_rng(3)
    state = chain.gibbs_step(pair, chain.init_state(pair, rng, batch=200_000), rng)
    joint = np.zeros((4, 3))
    np.add.at(joint, (state.current["x"], state.current["z"]), 1)
    assert _tv(joint / joint.sum(), np.full((4, 3), 1 / 12)) < 0.01


def test_one_step_transitions_match_kernel():
    pair = _random_pair(np.random.default_rng(4))
    samples, _ = chain.sample_limiting(pair, 1000, 100_000, np.random.default_rng(5))
    tx, _ = chain.tabular_kernel(pair)
    m = chain.stationary_distribution(tx, tol=1e-14)
    freq = np.zeros((4, 4))
    np.add.at(freq, (samples["x"][:-1], samples["x"][1:]), 1)
    assert _tv(freq / freq.sum(), m[:, None] * tx) < 0.02


def test_network_gibbs_step_reproducible():
    models = all_test_models()["pair-gaussian"]
    runs = []
    for _ in range(2):
        rng = np.random.default_rng(6)
        state = chain.init_state(models, rng, batch=4)
        for _ in range(3):
            state = chain.gibbs_step(models, state, rng)
        runs.append(state.current)
    for k in ("x", "z"):
        np.testing.assert_array_equal(runs[0][k], runs[1][k])


def test_triple_gibbs_step_keeps_z():
    models = all_test_models()["triple"]
    rng = np.random.default_rng(7)
    state = chain.init_state(models, rng, batch=5)
    nxt = chain.gibbs_step(models, state, rng)
    np.testing.assert_array_equal(nxt.current["z"], state.current["z"])
    assert nxt.last_sampled == "x"


def test_no_chain_for_hierarchical_models():
    models = all_test_models()["hier-plain"]
    with pytest.raises(InvalidInputError):
        chain.gibbs_step(models, chain.ChainState({"z0": np.zeros((1, 2))}), np.random.default_rng(0))


# --- limiting samples ---------------------------------------------------------------------

def test_sample_limiting_matches_stationary():
    pair = _random_pair(np.random.default_rng(8), 5, 3)
    _, est = chain.sample_limiting(pair, 1000, 100_000, np.random.default_rng(9))
    tx, tz = chain.tabular_kernel(pair)
    assert _tv(est.m_x, chain.stationary_distribution(tx)) < 0.02
    assert _tv(est.m_z, chain.stationary_distribution(tz)) < 0.02
    assert est.sample_count == 100_000 and est.burn_in == 1000


def test_consistent_pair_limit_is_decoder_marginal():
    rng = np.random.default_rng(10)
    prior = rng.dirichlet(np.ones(3))
    p = rng.dirichlet(np.ones(6), size=3)
    joint = prior[:, None] * p                      # (z, x)
    post = (joint / joint.sum(axis=0)).T            # q(z|x) = exact posterior
    _, est = chain.sample_limiting(chain.TabularPair(p, post, prior_z=prior), 1000, 100_000,
                                   np.random.default_rng(11))
    assert _tv(est.m_x, joint.sum(axis=0)) < 0.02


def test_single_draw_reproducible():
    pair = _random_pair(np.random.default_rng(12))
    a, _ = chain.sample_limiting(pair, 0, 1, np.random.default_rng(13))
    b, _ = chain.sample_limiting(pair, 0, 1, np.random.default_rng(13))
    assert a["x"].tolist() == b["x"].tolist() and len(a["x"]) == 1


def test_thinning_keeps_requested_count():
    pair = _random_pair(np.random.default_rng(14))
    s, est = chain.sample_limiting(pair, 10, 50, np.random.default_rng(15), thin=3)
    assert len(s["x"]) == 50 and est.joint_counts.sum() == 100


@pytest.mark.parametrize("args", [(-1, 10), (0, 0)])
def test_sample_limiting_rejects_bad_counts(args):
    with pytest.raises(InvalidInputError):
        chain.sample_limiting(_random_pair(np.random.default_rng(0)), *args)


def test_network_sample_limiting_estimates():
    models = all_test_models()["pair-bernoulli"]
    runs = [chain.sample_limiting(models, 20, 300, np.random.default_rng(16)) for _ in range(2)]
    (s, est), (s2, _) = runs
    assert s["x"].shape == (300, 3) and est.m_x.shape == (3,) and est.m_z.shape == (3,)
    assert abs(est.m_z.sum() - 1.0) < 1e-12
    np.testing.assert_array_equal(s["z"], s2["z"])


def test_network_limit_matches_tabulated_chain():
    models = all_test_models()["pair-bernoulli"]
    pair = chain.tabulate(models)
    tx, tz = chain.tabular_kernel(pair)
    m_x, m_z = chain.stationary_distribution(tx), chain.stationary_distribution(tz)
    _, est = chain.sample_limiting(models, 200, 20_000, np.random.default_rng(17))
    assert np.abs(est.m_x - m_x @ ef.support(models.variables["x"])).max() < 0.03
    assert np.abs(est.m_z - m_z @ ef.suff_stats(models.variables["z"], ef.support(models.variables["z"]))).max() < 0.03


# --- completion ---------------------------------------------------------------------

def _exact_clamped(pair, x_obs, hidden):
    """Stationary site and latent marginals of the clamped chain by enumeration."""
    nz, n = pair.p_on.shape
    kernel = np.zeros((nz, nz))
    for bits in itertools.product([0, 1], repeat=int(hidden.sum())):
        x = x_obs.copy()
        x[hidden] = bits
        px = np.prod(np.where(x[hidden] == 1, pair.p_on[:, hidden], 1 - pair.p_on[:, hidden]), axis=1)
        code = int(np.sum(x << np.arange(n)))
        kernel += px[:, None] * pair.q_z_given_x[code][None, :]
    m = chain.stationary_distribution(kernel, tol=1e-14)
    sites = np.where(hidden, m @ pair.p_on, x_obs)
    return sites, m


def test_tabular_completion_matches_enumeration():
    rng = np.random.default_rng(18)
    n, nz = 5, 3
    pair = chain.TabularPair.from_sites(rng.uniform(0.1, 0.9, (nz, n)), rng.dirichlet(np.ones(nz), size=2**n))
    x_obs = np.array([1, 0, 0, 1, 1])
    hidden = np.array([True, False, True, False, True])
    res = chain.complete_partial(pair, chain.PartialObservation({"x": x_obs}, {"x": ~hidden}), 1000, 100_000,
                                 np.random.default_rng(19))
    sites, m = _exact_clamped(pair, x_obs, hidden)
    for i in range(n):
        assert abs(res.marginals["x"][i] - sites[i]) < 0.03
    assert _tv(res.marginals["z"], m) < 0.03
    np.testing.assert_array_equal(res.decisions["x"][~hidden], x_obs[~hidden])


def test_clamping_all_of_x_samples_the_encoder():
    rng = np.random.default_rng(20)
    prior = rng.dirichlet(np.ones(3))
    p_on = rng.uniform(0.1, 0.9, (3, 4))
    pair = chain.TabularPair.from_sites(p_on, np.full((16, 3), 1 / 3))
    joint = prior[:, None] * pair.p_x_given_z
    pair = chain.TabularPair.from_sites(p_on, (joint / joint.sum(axis=0)).T, prior_z=prior)
    x = np.array([1, 1, 0, 1])
    res = chain.complete_partial(pair, chain.PartialObservation({"x": x}), 100, 100_000, np.random.default_rng(21))
    assert _tv(res.marginals["z"], pair.q_z_given_x[int(np.sum(x << np.arange(4)))]) < 0.01


def test_tabular_completion_nothing_to_infer():
    pair = chain.TabularPair.from_sites(np.full((2, 3), 0.5), np.full((8, 2), 0.5))
    with pytest.raises(NothingToInferError):
        chain.complete_partial(pair, chain.PartialObservation({"x": np.zeros(3), "z": 0}), 10, 10)


def test_tabular_completion_needs_site_tables():
    pair = _random_pair(np.random.default_rng(22))
    with pytest.raises(InvalidInputError):
        chain.complete_partial(pair, chain.PartialObservation({"x": np.zeros(2)}, {"x": [True, False]}), 10, 10)


def _forced_pair():
    models = all_test_models()["pair-bernoulli"]
    for c, bias in ((models.for_var("p", "x"), [30.0, -30.0, 30.0]), (models.players["q"][0], [0.0, 30.0, 0.0])):
        w, b = c.map.layers()[-1]
        w[...] = 0.0
        b[...] = bias
    return models


def test_deterministic_models_force_completion():
    models = _forced_pair()
    mask = np.array([[True, False, False]] * 4)
    res = chain.complete_partial(models, chain.PartialObservation({"x": np.zeros((4, 3))}, {"x": mask}), 5, 20,
                                 np.random.default_rng(23))
    np.testing.assert_array_equal(res.decisions["x"], np.tile([0.0, 0.0, 1.0], (4, 1)))
    np.testing.assert_array_equal(res.decisions["z"], np.ones((4, 1)))


def test_network_completion_nothing_to_infer():
    models = all_test_models()["pair-bernoulli"]
    obs = chain.PartialObservation({"x": np.zeros((2, 3)), "z": np.zeros((2, 1))})
    with pytest.raises(NothingToInferError):
        chain.complete_partial(models, obs, 1, 1)


def test_triple_completion_deterministic_and_clamped():
    models = all_test_models()["triple"]
    rng = np.random.default_rng(24)
    x = rng.standard_normal((3, 4))
    mask = rng.random((3, 4)) < 0.5
    obs = chain.PartialObservation({"x": x}, {"x": mask})
    a = chain.complete_partial(models, obs, 5, 30, np.random.default_rng(25))
    b = chain.complete_partial(models, obs, 5, 30, np.random.default_rng(25))
    np.testing.assert_array_equal(a.marginals["s"], b.marginals["s"])
    np.testing.assert_allclose(a.decisions["x"][mask], x[mask])
    assert a.marginals["s"].shape == (3, 4, 3)
    np.testing.assert_allclose(a.marginals["s"].sum(axis=-1), 1.0)
