"""Acceptance suite: one test per criterion, each reporting a single PASS/FAIL line.

Lines are printed as they are produced and repeated in the terminal summary.
Run directly (``python tests/test_acceptance.py``) to get only the report.
"""
import functools
import pathlib
import time

import numpy as np
import pytest

from conftest import MAP_SHAPES, all_test_models, randomize
from symvae import config, harness
from symvae import efcore as ef
from symvae import equilibrium as eq
from symvae import models as mdl
from symvae import netparam as npm
from symvae import tabular_oracle as to
from symvae.chain import TabularPair, sample_limiting, stationary_distribution, tabular_kernel

ROOT = pathlib.Path(__file__).resolve().parents[1]
RESULTS = {}


def report(number, title, ok, detail):
    line = f"criterion {number:>2} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    RESULTS[number] = line
    print(line)
    assert ok, line


def _load(name, **train):
    cfg = config.load_config(ROOT / "configs" / name)
    for k, v in train.items():
        setattr(cfg.train, k, v)
    return cfg


# --- 1-3: tabular game ------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _multistart():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240101)
    runs = []
    for nx, nz in ((4, 4), (8, 8), (16, 16)):
        spec = to.random_spec(rng, nx, nz, 3, 3)
        sols = []
        for _ in range(10):
            init = to.TabularParams(2 * rng.standard_normal(3), 2 * rng.standard_normal(3))
            sols.append(to.solve_equilibrium(spec, init, tol=1e-10))
        runs.append((spec, sols))
    return runs, time.perf_counter() - t0


def test_criterion_01_uniqueness():
    runs, secs = _multistart()
    spread = 0.0
    for spec, sols in runs:
        real = [to.realize(spec, s.params) for s in sols]
        spread = max(spread, max(max(to.tv(a[0], b[0]), to.tv(a[1], b[1])) for a in real for b in real))
    converged = all(s.converged for _, sols in runs for s in sols)
    report(1, "equilibrium uniqueness", converged and spread < 1e-4 and secs < 30,
           f"3 specs up to 16x16, 10 starts each, max pairwise tv {spread:.2e}, {secs:.1f}s")


def test_criterion_02_moment_matching():
    runs, _ = _multistart()
    gap = max(max(to.moment_gaps(spec, s.params)) for spec, sols in runs for s in sols)
    report(2, "moment matching", gap < 1e-6, f"max moment gap {gap:.2e} over 30 equilibria")


def test_criterion_03_dual_primal():
    runs, _ = _multistart()
    worst = 0.0
    for spec, sols in runs:
        p, q = to.realize(spec, sols[0].params)
        rp, rq = to.dual_solve(spec, q @ spec.phi, p @ spec.psi)
        worst = max(worst, to.tv(rp.solution, p), to.tv(rq.solution, q))
    report(3, "dual/primal agreement", worst < 1e-5, f"max tv {worst:.2e}")


# --- 4-6: estimators --------------------------------------------------------------------

def _unsupervised_instance():
    rng = np.random.default_rng(41)
    models = randomize(mdl.build_pair("bernoulli:3", "categorical:3", (5,), rng), rng)
    x = (rng.random((6, 3)) < 0.5).astype(np.float64)
    return models, eq.EmpiricalData({"x": {"x": x}})


def _max_z(a, b=None, exact=None):
    n = len(a)
    if exact is not None:
        se = a.std(axis=0) / np.sqrt(n)
        dev = np.abs(a.mean(axis=0) - exact)
    else:
        se = np.sqrt(a.var(axis=0) / n + b.var(axis=0) / len(b))
        dev = np.abs(a.mean(axis=0) - b.mean(axis=0))
    ok = bool(np.all(dev <= 4 * se + 1e-12))
    return ok, float(np.max(dev / np.maximum(se, 1e-300)))


def test_criterion_04_decoder_gradient_identity():
    rng = np.random.default_rng(4)
    resid = 0.0
    for _ in range(20):
        spec = to.random_spec(rng, 4, 3, 3, 3)
        resid = max(resid, to.prop1_residual(spec, rng.dirichlet(np.ones(12)), rng.standard_normal(3)))
    models, data = _unsupervised_instance()
    n = 100_000
    batch = data.sample_batch(np.random.default_rng(42), n)
    gn, _ = eq.estimate_gradients(eq.Scenario("unsupervised"), models, batch, 1, np.random.default_rng(43),
                                  players=["p"], per_sample=True)
    ge, _ = eq.elbo_gradients(models, batch, 1, np.random.default_rng(44), per_sample=True)
    ok, z = _max_z(gn["p"], ge["p"])
    report(4, "decoder-gradient identity", resid < 1e-12 and ok,
           f"max residual {resid:.1e} on 20 instances; elbo vs nash decoder update max |z| {z:.2f} at n=1e5")


def _scenario_instances():
    models, data = _unsupervised_instance()
    yield "unsupervised", eq.Scenario("unsupervised"), models, data, to.exact_pair_gradients(models, data.streams)
    rng = np.random.default_rng(51)
    x = data.streams["x"]["x"]
    z = ef.sample(models.variables["z"], np.zeros((5, 3)), rng)
    semi = eq.EmpiricalData({"x": {"x": x}, "z": {"z": z}, "xz": {"x": x[:5], "z": z}})
    yield "semi-supervised", eq.Scenario("semi_supervised"), models, semi, \
        to.exact_semisupervised_gradients(models, semi.streams)
    hier = randomize(all_test_models()["hier-ladder"], np.random.default_rng(52), 0.5)
    c = ef.sample(hier.variables["c"], np.zeros((4, 2)), rng)
    hdata = eq.EmpiricalData({"x": {"x": x}, "labelled": {"x": x[:4], "c": c}})
    yield "hierarchical", eq.Scenario("hierarchical"), hier, hdata, \
        to.exact_hierarchical_gradients(hier, hdata.streams)


def test_criterion_05_unbiasedness():
    n = 100_000
    parts, all_ok = [], True
    for i, (name, sc, models, data, exact) in enumerate(_scenario_instances()):
        batch = data.sample_batch(np.random.default_rng(60 + i), n)
        grads, _ = eq.estimate_gradients(sc, models, batch, 1, np.random.default_rng(70 + i), per_sample=True)
        worst = 0.0
        for player, g in grads.items():
            ok, z = _max_z(g, exact=exact[player])
            all_ok &= ok
            worst = max(worst, z)
        parts.append(f"{name} max |z| {worst:.2f}")
    report(5, "estimator unbiasedness", all_ok, ", ".join(parts) + " at n=1e5")


def test_criterion_06_wake_sleep():
    models, data = _unsupervised_instance()
    sc = eq.Scenario("unsupervised")
    a = eq.make_state(models.copy(), sc, 0.05, 6)
    b = eq.make_state(models.copy(), sc, 0.05, 6)
    first_diff = None
    for t in range(1000):
        eq.nash_step(a, data.sample_batch(a.rngs["data"], 8))
        eq.wake_sleep_step(b, data.sample_batch(b.rngs["data"], 8))
        same = all(a.models.player_params(p).tobytes() == b.models.player_params(p).tobytes() for p in ("p", "q"))
        if not same and first_diff is None:
            first_diff = t
    report(6, "wake-sleep equivalence", first_diff is None,
           "1000 steps bitwise identical" if first_diff is None else f"first difference at step {first_diff}")


# --- 7-10: chains and training runs -------------------------------------------------------

def test_criterion_07_gibbs_stationarity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for nx, nz in ((4, 4), (6, 3), (8, 5)):
        pair = TabularPair(rng.dirichlet(np.ones(nx), size=nz), rng.dirichlet(np.ones(nz), size=nx))
        _, est = sample_limiting(pair, 1000, 100_000, rng)
        worst = max(worst, to.tv(est.m_x, stationary_distribution(tabular_kernel(pair)[0])))
    secs = time.perf_counter() - t0
    report(7, "gibbs stationarity", worst < 0.02 and secs < 60,
           f"max tv {worst:.4f} on 3 instances, 1e5 samples after 1e3 burn-in, {secs:.1f}s")


def test_criterion_08_consistency_improvement():
    _, _, extras, _, _ = harness.train_models(_load("unsupervised_tabular.toml"))
    traj = extras["trajectory"]
    first, last = traj[0], traj[-1]
    ratio = last["kl_rev"] / first["kl_rev"]
    ok = ratio <= 0.25 and last["tv_mixture"] < first["tv_mixture"]
    report(8, "consistency improvement", ok,
           f"kl_rev {first['kl_rev']:.4f} -> {last['kl_rev']:.2e} (ratio {ratio:.4f}), "
           f"mixture tv {first['tv_mixture']:.4f} -> {last['tv_mixture']:.4f}, 5000 steps")


def test_criterion_09_class_split():
    t0 = time.perf_counter()
    models, _, _, _, hold = harness.train_models(_load("class_split.toml"))
    acc = harness.class_accuracy(models, hold["x"], hold["label"])
    secs = time.perf_counter() - t0
    report(9, "class-split encoder accuracy", acc >= 0.95 and secs < 300,
           f"held-out accuracy {acc:.4f} on {len(hold['x'])} rows, {secs:.1f}s")


def test_criterion_10_triple_game():
    t0 = time.perf_counter()
    cfg = _load("triple_grid.toml")
    models, _, _, _, hold = harness.train_models(cfg)
    c = cfg.chain
    full = harness.segmentation_accuracy(models, hold["x"], hold["s"], 0.0, c.burn_in, c.n_samples,
                                         np.random.default_rng(100))
    masked = harness.segmentation_accuracy(models, hold["x"], hold["s"], c.mask_fraction, c.burn_in, c.n_samples,
                                           np.random.default_rng(101))
    chance = harness.label_chance(hold["s"])
    secs = time.perf_counter() - t0
    ok = masked >= full - 0.05 and masked >= 2 * chance and secs < 600
    report(10, "triple game completion", ok,
           f"complete input {full:.4f}, {c.mask_fraction:.0%} masked {masked:.4f}, chance {chance:.4f}, {secs:.1f}s")


# --- 11: hygiene ---------------------------------------------------------------------------

def test_criterion_11_numerical_hygiene(tmp_path):
    rng = np.random.default_rng(11)
    fd = 0.0
    for sizes, adapter in MAP_SHAPES:
        m = npm.init_map(sizes, rng, adapter=adapter)
        m.params += 0.1 * rng.standard_normal(m.params.size)
        fd = max(fd, npm.fd_check(m, rng.standard_normal((3, sizes[0])), 1e-6))
    for models in all_test_models().values():
        for _, m in models.named_maps():
            fd = max(fd, npm.fd_check(m, rng.standard_normal((3, m.in_dim)), 1e-6))
    norm = 0.0
    for fam in (ef.BernoulliVector(1), ef.BernoulliVector(6), ef.BernoulliVector(12), ef.Categorical(2),
                ef.Categorical(5, 2), ef.Categorical(3, 4)):
        sup = ef.support(fam)
        for scale in (0.1, 3.0, 30.0):
            eta = scale * rng.standard_normal(fam.stat_dim)
            total = np.exp(ef.log_density(fam, np.broadcast_to(eta, (len(sup), fam.stat_dim)), sup)).sum()
            norm = max(norm, abs(total - 1.0))
    outs = []
    for name in ("a", "b"):
        cfg = _load("class_split.toml")
        cfg.out = str(tmp_path / name)
        harness.run(cfg)
        outs.append((tmp_path / name / "metrics.csv").read_bytes())
    same = outs[0] == outs[1]
    report(11, "numerical hygiene", fd < 1e-6 and norm < 1e-10 and same,
           f"max fd_check {fd:.1e}, max normalization error {norm:.1e}, metrics.csv identical: {same}")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
