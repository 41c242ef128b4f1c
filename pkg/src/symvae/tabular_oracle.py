"""Exact computations for the lifted log-linear game on small finite spaces.

States of ``X x Z`` are flattened row-major: state ``s = x * nz + z``. The two
joint models are

    p_u(x, z) = pi_z(z) exp(<phi(x, z), u> - A(u))
    q_v(x, z) = pi_x(x) exp(<psi(x, z), v> - B(v))

and the game utilities are ``L_p = E_q log p_u`` and ``L_q = E_p log q_v``.
Everything here is a full summation over the support; no sampling.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .errors import ConvergenceError, InfeasibleError, InvalidInputError, SupportTooLargeError
from . import efcore as ef
from . import kernels

MAX_STATES = 2**16


@dataclass
class TabularGameSpec:
    nx: int
    nz: int
    pi_x: np.ndarray
    pi_z: np.ndarray
    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        self.pi_x = np.asarray(self.pi_x, dtype=np.float64)
        self.pi_z = np.asarray(self.pi_z, dtype=np.float64)
        self.phi = np.atleast_2d(np.asarray(self.phi, dtype=np.float64))
        self.psi = np.atleast_2d(np.asarray(self.psi, dtype=np.float64))
        n = self.nx * self.nz
        if n > MAX_STATES:
            raise SupportTooLargeError(f"|X x Z| = {n} exceeds {MAX_STATES}")
        if self.pi_x.shape != (self.nx,) or self.pi_z.shape != (self.nz,):
            raise InvalidInputError("base measures must have lengths nx and nz")
        for name, pi in (("pi_x", self.pi_x), ("pi_z", self.pi_z)):
            if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
                raise InvalidInputError(f"{name} must be a probability vector")
        for name, m in (("phi", self.phi), ("psi", self.psi)):
            if m.shape[0] != n or not np.all(np.isfinite(m)):
                raise InvalidInputError(f"{name} must be a finite matrix with {n} rows")

    @property
    def dim_u(self):
        return self.phi.shape[1]

    @property
    def dim_v(self):
        return self.psi.shape[1]

    @property
    def log_base_p(self):
        with np.errstate(divide="ignore"):
            return np.repeat(np.log(self.pi_z)[None, :], self.nx, axis=0).ravel()

    @property
    def log_base_q(self):
        with np.errstate(divide="ignore"):
            return np.repeat(np.log(self.pi_x)[:, None], self.nz, axis=1).ravel()

    def to_dict(self):
        return {"nx": self.nx, "nz": self.nz, "pi_x": self.pi_x.tolist(), "pi_z": self.pi_z.tolist(),
                "phi": self.phi.tolist(), "psi": self.psi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["nx"]), int(d["nz"]), d["pi_x"], d["pi_z"], d["phi"], d["psi"])


@dataclass
class TabularParams:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64).copy()
        self.v = np.asarray(self.v, dtype=np.float64).copy()


@dataclass
class DualSolveReport:
    solution: np.ndarray
    dual_vars: tuple
    constraint_residual: float
    entropy_objective: float
    iterations: int = 0
    regularized: bool = False


@dataclass
class EquilibriumResult:
    params: TabularParams
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True


def random_spec(rng, nx, nz, dim_u, dim_v, scale=1.0):
    """Random instance with strictly positive base measures."""
    return TabularGameSpec(
        nx, nz,
        rng.dirichlet(np.ones(nx)), rng.dirichlet(np.ones(nz)),
        scale * rng.standard_normal((nx * nz, dim_u)),
        scale * rng.standard_normal((nx * nz, dim_v)))


# --- realization and exact utilities ------------------------------------------

def _normalize(logw):
    a = logsumexp(logw)
    return np.exp(logw - a), a


def realize(spec, params):
    """The two joint distributions as flat probability vectors over ``X x Z``."""
    p, _ = _normalize(spec.log_base_p + spec.phi @ params.u)
    q, _ = _normalize(spec.log_base_q + spec.psi @ params.v)
    return p, q


def log_partitions(spec, params):
    a = logsumexp(spec.log_base_p + spec.phi @ params.u)
    b = logsumexp(spec.log_base_q + spec.psi @ params.v)
    return a, b


def _expect_log(weights, logp):
    mask = weights > 0
    return float(np.sum(weights[mask] * logp[mask]))


def exact_utilities(spec, params):
    a, b = log_partitions(spec, params)
    logp = spec.log_base_p + spec.phi @ params.u - a
    logq = spec.log_base_q + spec.psi @ params.v - b
    p, q = np.exp(logp), np.exp(logq)
    return _expect_log(q, logp), _expect_log(p, logq)


def exact_gradients(spec, params):
    p, q = realize(spec, params)
    return q @ spec.phi - p @ spec.phi, p @ spec.psi - q @ spec.psi


def tv(a, b):
    return 0.5 * float(np.abs(np.asarray(a) - np.asarray(b)).sum())


def kl(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    mask = a > 0
    if np.any(b[mask] <= 0):
        return np.inf
    return float(np.sum(a[mask] * (np.log(a[mask]) - np.log(b[mask]))))


# --- equilibrium solver ----------------------------------------------------------

def default_steps(spec):
    """``0.5 / L`` per player, with ``L`` bounding the curvature of the log-partition."""
    lu = max(float(np.max(np.sum(spec.phi**2, axis=1))), 1e-12)
    lv = max(float(np.max(np.sum(spec.psi**2, axis=1))), 1e-12)
    return 0.5 / lu, 0.5 / lv


def solve_equilibrium(spec, init, step=None, tol=1e-9, max_iters=200_000, mode="parallel",
                      record_every=1):
    """Simultaneous (or sequential) exact gradient ascent of both players.

    Each player's step is halved whenever its own move would lower its own
    utility. Stops once both gradients are below ``tol`` in max-norm; raises
    :class:`ConvergenceError` (carrying the trace and last iterate) otherwise.
    """
    if mode not in ("parallel", "sequential"):
        raise InvalidInputError(f"unknown update mode {mode!r}")
    if step is None:
        su, sv = default_steps(spec)
    else:
        if step <= 0:
            raise InvalidInputError("step must be positive")
        su = sv = float(step)
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    u, v, iters, res, trace = kernels.game_ascent(
        np.ascontiguousarray(spec.phi), np.ascontiguousarray(spec.psi),
        spec.log_base_p, spec.log_base_q,
        np.asarray(init.u, dtype=np.float64), np.asarray(init.v, dtype=np.float64),
        float(su), float(sv), float(tol), int(max_iters), mode == "sequential", int(record_every))
    trace = [(int(t[0]), float(t[1]), float(t[2]), float(t[3])) for t in trace]
    result = EquilibriumResult(TabularParams(u, v), trace, int(iters), bool(res < tol))
    if not result.converged:
        raise ConvergenceError(f"no equilibrium within {max_iters} iterations (residual {res:.3e})",
                               residual=float(res), trace=trace, result=result)
    return result


def moment_gaps(spec, params):
    """``(max|E_p phi - E_q phi|, max|E_p psi - E_q psi|)``."""
    gu, gv = exact_gradients(spec, params)
    return float(np.abs(gu).max(initial=0.0)), float(np.abs(gv).max(initial=0.0))


# --- maximum-entropy dual ---------------------------------------------------------

def _interior_margin(stats, log_base, target):
    """Largest ``t`` with a distribution ``r >= t`` on the base support matching ``target``."""
    support = np.isfinite(log_base)
    a = stats[support]
    n = a.shape[0]
    # variables: r (n), t ; maximize t
    c = np.zeros(n + 1)
    c[-1] = -1.0
    a_eq = np.zeros((a.shape[1] + 1, n + 1))
    a_eq[:-1, :n] = a.T
    a_eq[-1, :n] = 1.0
    b_eq = np.concatenate([target, [1.0]])
    a_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(n), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, None)] * n + [(None, 1.0)], method="highs")
    if res.status != 0:
        return -np.inf
    return float(res.x[-1])


def _dual_one(stats, log_base, target, tol, max_iters, ridge):
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (stats.shape[1],):
        raise InvalidInputError(f"target moments must have length {stats.shape[1]}")
    margin = _interior_margin(stats, log_base, target)
    if not margin > 1e-10:
        raise InfeasibleError(f"target moments are not in the interior of the marginal polytope "
                              f"(margin {margin:.3e})")
    support = np.isfinite(log_base)
    a = stats[support]
    lb = log_base[support]
    u = np.zeros(a.shape[1])
    regularized = False

    def dual(u):
        # concave dual objective <target, u> - log sum pi exp(<a, u>)
        return float(target @ u - logsumexp(lb + a @ u))

    for it in range(max_iters):
        w = lb + a @ u
        r = np.exp(w - logsumexp(w))
        mean = r @ a
        g = target - mean
        if np.abs(g).max(initial=0.0) < tol:
            break
        cov = (a * r[:, None]).T @ a - np.outer(mean, mean)
        try:
            d = np.linalg.solve(cov, g)
            if not np.all(np.isfinite(d)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            regularized = True
            d = np.linalg.solve(cov + ridge * np.eye(cov.shape[0]), g)
        # damped Newton: backtrack on the dual objective
        f0, t = dual(u), 1.0
        slope = float(g @ d)
        while dual(u + t * d) < f0 + 1e-4 * t * slope and t > 1e-12:
            t *= 0.5
        u = u + t * d
    else:
        raise ConvergenceError("dual Newton did not converge", residual=float(np.abs(g).max()))
    full = np.zeros(stats.shape[0])
    full[support] = r
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = float(np.sum(r * (np.log(r) - lb)))
    lam = 1.0 - logsumexp(lb + a @ u)
    return DualSolveReport(full, (u, lam), float(np.abs(target - r @ a).max()), ent, it, regularized)


def dual_solve(spec, target_moments_p, target_moments_q, tol=1e-11, max_iters=200, ridge=1e-10):
    """Minimum relative-entropy distributions matching the given moments.

    Solves ``min sum p log(p / pi_z)`` subject to ``E_p[phi] = target_p`` (and
    the mirror problem for ``q`` with ``psi`` and ``pi_x``) by damped Newton
    iterations on the dual variables. The dual multiplier of the moment
    constraint is the natural parameter of the exponential-family solution.
    """
    rep_p = _dual_one(spec.phi, spec.log_base_p, target_moments_p, tol, max_iters, ridge)
    rep_q = _dual_one(spec.psi, spec.log_base_q, target_moments_q, tol, max_iters, ridge)
    return rep_p, rep_q


# --- decoder-gradient identity ------------------------------------------------------

def _decoder_conditional(spec, theta):
    """``p_theta(x|z)`` as an ``(nx, nz)`` table: log-linear in ``phi`` and normalized per ``z``."""
    logits = (spec.phi @ theta).reshape(spec.nx, spec.nz)
    return np.exp(logits - logsumexp(logits, axis=0, keepdims=True))


def _q_conditional(q_joint, nx, nz):
    q = np.asarray(q_joint, dtype=np.float64).reshape(nx, nz)
    px = q.sum(axis=1)
    cond = np.where(px[:, None] > 0, q / np.where(px > 0, px, 1.0)[:, None], 1.0 / nz)
    return px, cond


def prop1_terms(spec, q_joint, theta):
    """Utilities in both forms for a tabular decoder ``pi_z(z) p_theta(x|z)``.

    Returns a dict with the completion utility ``L_p`` and the alternative
    form ``L_p'`` computed two ways: directly as
    ``E_pi(x)[log p(x) - KL(q(z|x) || p(z|x))]`` and in the evidence-bound
    arrangement ``L_p - E_pi(x) KL(q(z|x) || pi_z)``.
    """
    nx, nz = spec.nx, spec.nz
    pxz = _decoder_conditional(spec, theta)
    joint = pxz * spec.pi_z[None, :]
    px = joint.sum(axis=1)
    post = joint / px[:, None]
    pi_x, qc = _q_conditional(q_joint, nx, nz)
    l_p = 0.0
    direct = 0.0
    kl_prior = 0.0
    for x in range(nx):
        if pi_x[x] == 0:
            continue
        l_p += pi_x[x] * _expect_log(qc[x], np.log(pxz[x]))
        direct += pi_x[x] * (np.log(px[x]) - kl(qc[x], post[x]))
        kl_prior += pi_x[x] * kl(qc[x], spec.pi_z)
    return {"L_p": l_p, "L_p_prime_direct": direct, "L_p_prime_elbo": l_p - kl_prior}


def prop1_residual(spec, q_joint, theta):
    """Max-norm difference of the theta-gradients of ``L_p`` and ``L_p'``.

    ``grad L_p`` is the completion gradient
    ``sum q(x,z) [phi(x,z) - E_{p(x'|z)} phi(x',z)]``; ``grad L_p'`` is
    assembled from its own pieces, ``grad log p(x)`` (a posterior expectation)
    plus ``-grad KL(q(z|x) || p(z|x))``.
    """
    nx, nz = spec.nx, spec.nz
    theta = np.asarray(theta, dtype=np.float64)
    phi = spec.phi.reshape(nx, nz, -1)
    pxz = _decoder_conditional(spec, theta)
    # g[x, z] = grad_theta log p_theta(x|z)
    g = phi - np.einsum("xz,xzd->zd", pxz, phi)[None, :, :]
    joint = pxz * spec.pi_z[None, :]
    post = joint / joint.sum(axis=1, keepdims=True)
    pi_x, qc = _q_conditional(q_joint, nx, nz)
    grad_lp = np.einsum("x,xz,xzd->d", pi_x, qc, g)
    grad_log_px = np.einsum("xz,xzd->xd", post, g)
    # grad KL(q||post) = -E_q grad log post = -E_q g + grad log p(x)
    grad_kl = -np.einsum("xz,xzd->xd", qc, g) + grad_log_px
    grad_lp_prime = pi_x @ (grad_log_px - grad_kl)
    return float(np.abs(grad_lp - grad_lp_prime).max(initial=0.0))


# --- consistency diagnostics ---------------------------------------------------------

def _conditional_z_given_x(joint):
    px = joint.sum(axis=1)
    safe = np.where(px > 0, px, 1.0)
    cond = np.where(px[:, None] > 0, joint / safe[:, None], 1.0 / joint.shape[1])
    return px, cond


def _conditional_x_given_z(joint):
    pz = joint.sum(axis=0)
    safe = np.where(pz > 0, pz, 1.0)
    return np.where(pz[None, :] > 0, joint / safe[None, :], 1.0 / joint.shape[0])


def consistency_diagnostics(p_joint, q_joint, pi_x=None):
    """Forward/reverse conditional KLs and the gap between the two chain components.

    ``p_joint`` and ``q_joint`` are ``(nx, nz)`` tables. ``kl_rev`` is
    ``E_pi(x) KL(q(z|x) || p(z|x))`` with ``pi_x`` defaulting to the x-marginal
    of ``q_joint``; ``kl_fwd`` is ``E_p(x) KL(p(z|x) || q(z|x))``. ``tv_mixture``
    is the total variation between ``m(z) p(x|z)`` and ``m(x) q(z|x)``, where
    ``m`` solves the stationary equations of the alternating chain.
    """
    from .chain import stationary_distribution

    p_joint = np.asarray(p_joint, dtype=np.float64)
    q_joint = np.asarray(q_joint, dtype=np.float64)
    if p_joint.shape != q_joint.shape or p_joint.ndim != 2:
        raise InvalidInputError("joints must be (nx, nz) tables of equal shape")
    px, p_post = _conditional_z_given_x(p_joint)
    qx, q_cond = _conditional_z_given_x(q_joint)
    weights = qx if pi_x is None else np.asarray(pi_x, dtype=np.float64)
    kl_rev = sum(weights[x] * kl(q_cond[x], p_post[x]) for x in range(len(weights)) if weights[x] > 0)
    kl_fwd = sum(px[x] * kl(p_post[x], q_cond[x]) for x in range(len(px)) if px[x] > 0)
    p_lik = _conditional_x_given_z(p_joint)           # p(x|z), (nx, nz)
    kernel = q_cond @ p_lik.T                          # T(x'|x)
    mx = stationary_distribution(kernel, tol=1e-13, max_iters=1_000_000)
    mz = mx @ q_cond
    comp_p = p_lik * mz[None, :]
    comp_q = mx[:, None] * q_cond
    return {"kl_rev": float(kl_rev), "kl_fwd": float(kl_fwd), "tv_mixture": tv(comp_p, comp_q)}


# --- exact scenario gradients for network models on enumerable spaces -------------

def _support_world(models, names):
    """All joint values of the named variables (Cartesian product), as a world."""
    supports = [ef.support(models.variables[n]) for n in names]
    sizes = [len(s) for s in supports]
    total = int(np.prod(sizes)) if sizes else 1
    if total > MAX_STATES:
        raise SupportTooLargeError(f"joint support of {names} has {total} states")
    idx = np.indices(sizes).reshape(len(sizes), -1) if sizes else np.zeros((0, 1), dtype=int)
    return {n: s[i] for n, s, i in zip(names, supports, idx)}, total


def _tile(world, reps):
    return {k: np.repeat(v, reps, axis=0) for k, v in world.items()}


def _cross(data_world, latent_world, n_latent):
    """Rows: every data row paired with every latent configuration."""
    n_data = len(next(iter(data_world.values())))
    out = {k: np.repeat(v, n_latent, axis=0) for k, v in data_world.items()}
    for k, v in latent_world.items():
        out[k] = np.tile(v, (n_data,) + (1,) * (v.ndim - 1))
    return out, n_data


def _joint_log(models, conds, world):
    return sum(models.log_density(c, world) for c in conds)


def _accumulate(models, player, conds, world, weights, scale):
    acc = {}
    for c in conds:
        models.grad(c, world, weights * scale, acc)
    return models.flatten_grads(player, acc)


def exact_pair_gradients(models, data, prior="learned"):
    """Exact utility gradients of the unsupervised (or marginals-only) game.

    ``data`` maps stream names to ``{var: rows}``: an ``"x"`` stream (and a
    ``"z"`` stream when the prior is implicit), each an empirical distribution
    with uniform row weights.
    Returns ``{"p": grad_theta L_p, "q": grad_phi L_q}``.
    """
    dec, enc = models.players["p"], models.players["q"]
    p_x = models.for_var("p", "x")
    q_z = enc[0]
    zworld, nz = _support_world(models, ["z"])
    # L_p = E_pi(x) sum_z q(z|x) log p(x, z)
    w, n = _cross({"x": data["x"]["x"]}, zworld, nz)
    qz = np.exp(models.log_density(q_z, w))
    g_p = _accumulate(models, "p", dec, w, qz, 1.0 / n)
    # L_q = E_p(x,z) log q(z|x), or E_pi(z) E_p(x|z) log q(z|x) with an implicit prior
    xworld, nx = _support_world(models, ["x"])
    if prior == "implicit":
        w2, n2 = _cross({"z": data["z"]["z"]}, xworld, nx)
        wt = np.exp(models.log_density(p_x, w2)) / n2
    else:
        w2, _ = _cross(zworld, xworld, nx)
        wt = np.exp(_joint_log(models, dec, w2))
    g_q = _accumulate(models, "q", enc, w2, wt, 1.0)
    return {"p": g_p, "q": g_q}


def exact_semisupervised_gradients(models, data):
    """Exact gradients for mixed data: streams ``xz``, ``z`` and ``x`` (any may be empty)."""
    dec, enc = models.players["p"], models.players["q"]
    p_z, p_x = models.for_var("p", "z"), models.for_var("p", "x")
    q_z = enc[0]
    g_p = np.zeros(models.player_params("p").size)
    g_q = np.zeros(models.player_params("q").size)
    xz = data.get("xz")
    if xz is not None and len(xz["x"]):
        n = len(xz["x"])
        w = {"x": xz["x"], "z": xz["z"]}
        g_p += _accumulate(models, "p", dec, w, np.ones(n), 1.0 / n)
        g_q += _accumulate(models, "q", enc, w, np.ones(n), 1.0 / n)
    zs = data.get("z")
    if zs is not None and len(zs["z"]):
        n = len(zs["z"])
        g_p += _accumulate(models, "p", [p_z], {"z": zs["z"]}, np.ones(n), 1.0 / n)
        xworld, nx = _support_world(models, ["x"])
        w, _ = _cross({"z": zs["z"]}, xworld, nx)
        g_q += _accumulate(models, "q", enc, w, np.exp(models.log_density(p_x, w)), 1.0 / n)
    xs = data.get("x")
    if xs is not None and len(xs["x"]):
        n = len(xs["x"])
        zworld, nz = _support_world(models, ["z"])
        w, _ = _cross({"x": xs["x"]}, zworld, nz)
        g_p += _accumulate(models, "p", dec, w, np.exp(models.log_density(q_z, w)), 1.0 / n)
    return {"p": g_p, "q": g_q}


def exact_hierarchical_gradients(models, data, labelled_weight=1.0, unlabelled=True):
    """Exact gradients for the layered model, optionally with labelled ``(x, z0)`` rows.

    ``data["x"]`` rows complete all latent layers through the encoder;
    ``data["labelled"]`` rows carry some latent variables and complete the
    rest. The encoder utility is the decoder-generated likelihood plus
    ``labelled_weight`` times the labelled encoder term.
    """
    dec, enc = models.players["p"], models.players["q"]
    latent = [c.var for c in enc]
    g_p = np.zeros(models.player_params("p").size)
    g_q = np.zeros(models.player_params("q").size)
    if unlabelled and data.get("x") is not None and len(data["x"]["x"]):
        n = len(data["x"]["x"])
        lw, nl = _support_world(models, latent)
        w, _ = _cross({"x": data["x"]["x"]}, lw, nl)
        qw = np.exp(_joint_log(models, enc, w))
        g_p += _accumulate(models, "p", dec, w, qw, 1.0 / n)
    lab = data.get("labelled")
    if lab is not None and len(lab["x"]):
        n = len(lab["x"])
        observed = [k for k in lab if k != "x"]
        rest = [v for v in latent if v not in observed]
        lw, nl = _support_world(models, rest)
        w, _ = _cross(dict(lab), lw, nl)
        rest_conds = [c for c in enc if c.var in rest]
        qw = np.exp(_joint_log(models, rest_conds, w)) if rest_conds else np.ones(len(w["x"]))
        g_p += _accumulate(models, "p", dec, w, qw, 1.0 / n)
        if labelled_weight:
            obs_conds = [c for c in enc if c.var in observed]
            g_q += _accumulate(models, "q", obs_conds, dict(lab), np.ones(n), labelled_weight / n)
    allw, _ = _support_world(models, [c.var for c in dec])
    g_q += _accumulate(models, "q", enc, allw, np.exp(_joint_log(models, dec, allw)), 1.0)
    return {"p": g_p, "q": g_q}


def tabulate_pair(models):
    """Decoder joint ``p(x, z)`` and encoder table ``q(z|x)`` as ``(nx, nz)`` arrays."""
    xs, nx = _support_world(models, ["x"])
    zs, nz = _support_world(models, ["z"])
    w, _ = _cross(xs, zs, nz)
    dec = models.players["p"]
    if any(c.var == "z" for c in dec):
        p_joint = np.exp(_joint_log(models, dec, w)).reshape(nx, nz)
    else:
        p_joint = np.exp(models.log_density(models.for_var("p", "x"), w)).reshape(nx, nz) / nz
    q_cond = np.exp(models.log_density(models.players["q"][0], w)).reshape(nx, nz)
    return p_joint, q_cond


def empirical_marginal(family, rows):
    """Histogram of ``rows`` over the support of ``family`` (support order)."""
    counts = np.bincount(ef.value_index(family, rows), minlength=family.support_size)
    return counts / counts.sum()


def pair_consistency(models, x_rows=None):
    """:func:`consistency_diagnostics` for pair models, weighting ``x`` by the data histogram."""
    p_joint, q_cond = tabulate_pair(models)
    pi_x = None if x_rows is None else empirical_marginal(models.variables["x"], x_rows)
    weights = p_joint.sum(axis=1) if pi_x is None else pi_x
    return consistency_diagnostics(p_joint, weights[:, None] * q_cond, pi_x)
