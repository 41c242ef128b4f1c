"""Alternating-conditional Markov chains.

The pair chain alternates ``x ~ p(x|z)`` and ``z ~ q(z|x)``; its two limiting
joints ``m(z) p(x|z)`` and ``m(x) q(z|x)`` are averaged by recording
statistics after each half-sweep. The triple chain, conditioned on ``z``,
alternates ``s ~ p(s|x,z)`` and ``x ~ p(x|s,z)``.

Models come in two forms: :class:`TabularPair` (explicit conditional tables,
run through the compiled kernels) and :class:`~symvae.models.PlayerModels`
(network conditionals, batched over independent chains).
"""
from dataclasses import dataclass, field

import numpy as np

from . import efcore as ef
from . import kernels
from .errors import ConvergenceError, InvalidInputError, NothingToInferError
from .models import PlayerModels


@dataclass
class TabularPair:
    """Conditional tables: ``p_x_given_z[z, x]`` and ``q_z_given_x[x, z]``.

    ``p_on[z, i]`` optionally gives ``p(x_i = 1 | z)`` when ``x`` is a vector of
    independent bits, with state index ``sum_i x_i 2**i``.
    """
    p_x_given_z: np.ndarray
    q_z_given_x: np.ndarray
    p_on: np.ndarray = None
    prior_z: np.ndarray = None

    def __post_init__(self):
        self.p_x_given_z = np.asarray(self.p_x_given_z, dtype=np.float64)
        self.q_z_given_x = np.asarray(self.q_z_given_x, dtype=np.float64)
        nz, nx = self.p_x_given_z.shape
        if self.q_z_given_x.shape != (nx, nz):
            raise InvalidInputError("q table must have shape (nx, nz) matching p's (nz, nx)")
        for name, t in (("p", self.p_x_given_z), ("q", self.q_z_given_x)):
            if np.any(t < 0) or np.abs(t.sum(axis=1) - 1.0).max() > 1e-9:
                raise InvalidInputError(f"{name} table rows must be probability vectors")

    @property
    def nx(self):
        return self.p_x_given_z.shape[1]

    @property
    def nz(self):
        return self.p_x_given_z.shape[0]

    @classmethod
    def from_sites(cls, p_on, q_z_given_x, prior_z=None):
        p_on = np.asarray(p_on, dtype=np.float64)
        nz, n = p_on.shape
        codes = np.arange(2**n)
        bits = (codes[:, None] >> np.arange(n)) & 1
        p = np.prod(np.where(bits[None, :, :] == 1, p_on[:, None, :], 1.0 - p_on[:, None, :]), axis=2)
        return cls(p, q_z_given_x, p_on=p_on, prior_z=prior_z)


def tabulate(models):
    """Explicit tables for a pair of enumerable network conditionals."""
    if not isinstance(models, PlayerModels) or models.kind not in ("pair",):
        raise InvalidInputError("tabulate needs pair models")
    xf, zf = models.variables["x"], models.variables["z"]
    xs, zs = ef.support(xf), ef.support(zf)
    p_x = models.for_var("p", "x")
    q_z = models.players["q"][0]
    eta_p = models.eta(p_x, {"z": zs})
    p = np.exp(np.stack([ef.log_density(xf, eta_p, np.broadcast_to(x, (len(zs), xf.value_dim)))
                         for x in xs], axis=1))
    eta_q = models.eta(q_z, {"x": xs})
    q = np.exp(np.stack([ef.log_density(zf, eta_q, np.broadcast_to(z, (len(xs), zf.value_dim)))
                         for z in zs], axis=1))
    p_on = ef.mean_params(xf, eta_p) if isinstance(xf, ef.BernoulliVector) else None
    prior = None
    if any(c.var == "z" for c in models.players["p"]):
        c = models.for_var("p", "z")
        prior = np.exp(ef.log_density(zf, models.eta(c, {"z": zs}), zs))
    return TabularPair(p, q, p_on=p_on, prior_z=prior)


def tabular_kernel(models):
    """``(T_x, T_z)`` with ``T_x[x, x'] = sum_z q(z|x) p(x'|z)`` and ``T_z`` likewise."""
    pair = models if isinstance(models, TabularPair) else tabulate(models)
    return pair.q_z_given_x @ pair.p_x_given_z, pair.p_x_given_z @ pair.q_z_given_x


def stationary_distribution(kernel, tol=1e-12, max_iters=100_000, init=None):
    """Fixed point of ``m <- m T`` by power iteration, ``||m T - m||_1 < tol``."""
    kernel = np.asarray(kernel, dtype=np.float64)
    n = kernel.shape[0]
    if kernel.shape != (n, n) or np.any(kernel < 0) or np.abs(kernel.sum(axis=1) - 1).max() > 1e-9:
        raise InvalidInputError("kernel must be a square row-stochastic matrix")
    m = np.full(n, 1.0 / n) if init is None else np.asarray(init, dtype=np.float64)
    res = np.inf
    for _ in range(max_iters):
        nxt = m @ kernel
        nxt /= nxt.sum()
        res = np.abs(nxt - m).sum()
        m = nxt
        if res < tol:
            return m
    raise ConvergenceError(f"power iteration did not converge (residual {res:.3e})", residual=res, result=m)


# --- chain state ------------------------------------------------------------

@dataclass
class ChainState:
    current: dict
    step_count: int = 0
    last_sampled: str = None


@dataclass
class StationaryEstimate:
    m_x: np.ndarray
    m_z: np.ndarray
    sample_count: int
    burn_in: int
    joint_counts: np.ndarray = None
    m_s: np.ndarray = None


def _uniform_draw(family, batch, rng):
    if isinstance(family, ef.DiagonalGaussian):
        return rng.standard_normal((batch, family.n))
    return ef.sample(family, np.zeros((batch, family.stat_dim)), rng)


def init_state(models, rng, batch=1, z=None):
    """Start state: ``z`` from the decoder prior when there is one, else uniform."""
    if isinstance(models, TabularPair):
        probs = models.prior_z if models.prior_z is not None else np.full(models.nz, 1.0 / models.nz)
        zs = kernels.draw_rows(kernels.cdf_rows(np.tile(probs, (batch, 1))), rng.random(batch))
        return ChainState({"x": np.zeros(batch, dtype=np.int64), "z": zs})
    if models.kind == "triple":
        if z is None:
            z = models.draw(models.extras["pi_z"], {"__batch__": np.zeros((batch, 0))}, rng)
        world = {"z": z}
        world["s"] = _uniform_draw(models.variables["s"], len(z), rng)
        world["x"] = models.draw(models.for_var("theta2", "x"), world, rng)
        return ChainState(world, last_sampled="x")
    zf = models.variables["z"]
    prior = [c for c in models.players["p"] if c.var == "z"]
    if prior:
        zs = models.draw(prior[0], {"__batch__": np.zeros((batch, 0))}, rng)
    else:
        zs = _uniform_draw(zf, batch, rng)
    return ChainState({"z": zs}, last_sampled="z")


def gibbs_step(models, state, rng):
    """One full sweep: ``x`` then ``z`` for pairs, ``s`` then ``x`` (given ``z``) for triples."""
    cur = dict(state.current)
    if isinstance(models, TabularPair):
        cur["x"] = kernels.draw_rows(kernels.cdf_rows(models.p_x_given_z[cur["z"]]), rng.random(len(cur["z"])))
        cur["z"] = kernels.draw_rows(kernels.cdf_rows(models.q_z_given_x[cur["x"]]), rng.random(len(cur["x"])))
        return ChainState(cur, state.step_count + 1, "z")
    if models.kind == "triple":
        cur["s"] = models.draw(models.for_var("theta1", "s"), cur, rng)
        cur["x"] = models.draw(models.for_var("theta2", "x"), cur, rng)
        return ChainState(cur, state.step_count + 1, "x")
    if models.kind != "pair":
        raise InvalidInputError(f"no alternating chain defined for {models.kind!r} models")
    cur["x"] = models.draw(models.for_var("p", "x"), cur, rng)
    cur["z"] = models.draw(models.players["q"][0], cur, rng)
    return ChainState(cur, state.step_count + 1, "z")


def sample_limiting(models, burn_in=1000, n_samples=1000, rng=None, thin=1, state=None):
    """Draw ``n_samples`` states of the pair chain after ``burn_in`` sweeps.

    Returns ``(samples, estimate)``. ``samples`` maps ``"x"``/``"z"`` to the
    states at the end of each kept sweep (state indices for tabular models).
    The estimate averages statistics over both half-sweeps.
    """
    if burn_in < 0 or n_samples < 1 or thin < 1:
        raise InvalidInputError("need burn_in >= 0, n_samples >= 1, thin >= 1")
    rng = np.random.default_rng() if rng is None else rng
    if isinstance(models, TabularPair):
        state = init_state(models, rng) if state is None else state
        n_sweeps = burn_in + n_samples * thin
        ux = rng.random(n_sweeps)
        uz = rng.random(n_sweeps)
        xs, zs, counts = kernels.tabular_chain(
            kernels.cdf_rows(models.p_x_given_z), kernels.cdf_rows(models.q_z_given_x),
            int(state.current["x"][0]), int(state.current["z"][0]), ux, uz, int(burn_in), int(thin))
        joint = counts / counts.sum()
        est = StationaryEstimate(joint.sum(axis=1), joint.sum(axis=0), n_samples, burn_in, counts)
        return {"x": xs, "z": zs}, est
    state = init_state(models, rng) if state is None else state
    xf, zf = models.variables["x"], models.variables["z"]
    kept_x, kept_z = [], []
    acc_x = np.zeros(xf.stat_dim)
    acc_z = np.zeros(zf.stat_dim)
    n_half = 0
    t = 0
    p_x, q_z = models.for_var("p", "x"), models.players["q"][0]
    cur = dict(state.current)
    while len(kept_x) < n_samples:
        cur["x"] = models.draw(p_x, cur, rng)
        record = t >= burn_in and (t - burn_in) % thin == 0
        if record:
            acc_x += ef.suff_stats(xf, cur["x"]).sum(axis=0)
            acc_z += ef.suff_stats(zf, cur["z"]).sum(axis=0)
        cur["z"] = models.draw(q_z, cur, rng)
        if record:
            acc_x += ef.suff_stats(xf, cur["x"]).sum(axis=0)
            acc_z += ef.suff_stats(zf, cur["z"]).sum(axis=0)
            n_half += 2 * len(cur["x"])
            kept_x.append(cur["x"][0].copy())
            kept_z.append(cur["z"][0].copy())
        t += 1
    est = StationaryEstimate(acc_x / n_half, acc_z / n_half, n_samples, burn_in)
    return {"x": np.array(kept_x), "z": np.array(kept_z)}, est


# --- completion from partial observations -----------------------------------------

@dataclass
class PartialObservation:
    """Observed values and per-site masks (``True`` = observed, clamped).

    Variables missing from ``values`` are entirely unobserved.
    """
    values: dict
    mask: dict = field(default_factory=dict)

    def observed(self, var, shape):
        if var not in self.values:
            return np.zeros(shape, dtype=bool)
        m = self.mask.get(var)
        return np.ones(shape, dtype=bool) if m is None else np.broadcast_to(np.asarray(m, dtype=bool), shape)


@dataclass
class CompletionResult:
    marginals: dict
    decisions: dict
    n_samples: int
    flip_rates: dict = field(default_factory=dict)


def _sweep_order(models):
    if models.kind == "triple":
        return [("s", models.for_var("theta1", "s")), ("x", models.for_var("theta2", "x")),
                ("z", models.players["phi"][0])]
    if models.kind == "pair":
        return [("x", models.for_var("p", "x")), ("z", models.players["q"][0])]
    raise InvalidInputError(f"no completion chain defined for {models.kind!r} models")


def _tabular_complete(pair, obs, burn_in, n_samples, rng):
    if pair.p_on is None:
        raise InvalidInputError("tabular completion needs site-factorized decoder tables (p_on)")
    nz, n_sites = pair.p_on.shape
    x = np.asarray(obs.values["x"], dtype=np.int64).reshape(n_sites)
    hidden = ~obs.observed("x", (n_sites,))
    if not hidden.any() and "z" in obs.values:
        raise NothingToInferError("every site is observed; nothing to infer")
    z0 = int(init_state(pair, rng).current["z"][0])
    n_sweeps = burn_in + n_samples
    ux = rng.random((n_sweeps, n_sites))
    uz = rng.random(n_sweeps)
    x_init = np.where(hidden, 0, x).astype(np.int64)
    site_counts, z_counts = kernels.clamped_chain(
        np.ascontiguousarray(pair.p_on), kernels.cdf_rows(pair.q_z_given_x), x_init,
        hidden.astype(np.bool_), z0, ux, uz, int(burn_in))
    freq_x = site_counts / n_samples
    freq_z = z_counts / n_samples
    return CompletionResult({"x": freq_x, "z": freq_z},
                            {"x": (freq_x > 0.5).astype(np.int64), "z": int(np.argmax(freq_z))}, n_samples)


def complete_partial(models, obs, burn_in=1000, n_samples=1000, rng=None):
    """Gibbs completion with observed sites clamped.

    Unobserved sites are resampled each sweep from their conditional; the
    result holds per-site label frequencies (and their arg-max decision) for
    discrete variables, and running means (the mean-marginal decision) for
    continuous ones. Network models are batched: every row of the observed
    arrays is an independent chain.
    """
    rng = np.random.default_rng() if rng is None else rng
    if n_samples < 1 or burn_in < 0:
        raise InvalidInputError("need n_samples >= 1 and burn_in >= 0")
    if isinstance(models, TabularPair):
        return _tabular_complete(models, obs, burn_in, n_samples, rng)
    order = _sweep_order(models)
    batch = len(next(iter(obs.values.values())))
    cur, masks = {}, {}
    any_hidden = False
    for var, cond in order:
        fam = models.variables[var]
        shape = (batch, fam.value_dim)
        m = obs.observed(var, shape)
        masks[var] = m
        any_hidden |= not m.all()
    if not any_hidden:
        raise NothingToInferError("every site of every variable is observed; nothing to infer")
    # initialize hidden parts: z from the prior/uniform, data variables uniformly
    for var, cond in order:
        fam = models.variables[var]
        init = _uniform_draw(fam, batch, rng)
        if var == "z" and models.kind == "triple":
            init = models.draw(models.extras["pi_z"], {"__batch__": np.zeros((batch, 0))}, rng)
        if var in obs.values:
            val = np.asarray(obs.values[var]).reshape(batch, fam.value_dim).astype(init.dtype)
            init = np.where(masks[var], val, init)
        cur[var] = init
    acc = {var: np.zeros((batch, models.variables[var].value_dim, models.variables[var].k))
           if isinstance(models.variables[var], ef.Categorical)
           else np.zeros((batch, models.variables[var].value_dim)) for var, _ in order}
    flips = {var: 0.0 for var, _ in order}
    for t in range(burn_in + n_samples):
        for var, cond in order:
            if masks[var].all():
                continue
            new = models.draw(cond, cur, rng)
            new = np.where(masks[var], cur[var], new)
            if t >= burn_in:
                flips[var] += float(np.mean(new != cur[var]))
            cur[var] = new
        if t >= burn_in:
            for var, _ in order:
                fam = models.variables[var]
                if isinstance(fam, ef.Categorical):
                    acc[var] += cur[var][..., None] == np.arange(fam.k)
                else:
                    acc[var] += cur[var]
    marg, dec = {}, {}
    for var, _ in order:
        fam = models.variables[var]
        marg[var] = acc[var] / n_samples
        if isinstance(fam, ef.Categorical):
            dec[var] = marg[var].argmax(axis=-1)
        elif isinstance(fam, ef.BernoulliVector):
            dec[var] = (marg[var] > 0.5).astype(np.float64)
        else:
            dec[var] = marg[var]
    return CompletionResult(marg, dec, n_samples, {k: v / n_samples for k, v in flips.items()})
