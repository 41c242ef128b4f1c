"""Nash-equilibrium learning of encoder/decoder players.

Each scenario is compiled into a *plan*: for every player, a list of
:class:`Term` objects saying which data stream to start from, which variables
to complete by sampling from which conditional, and which log-densities the
player scores on the completed rows. Completions are constants: no gradient
flows through the opponent's samples. The Monte-Carlo gradient of a player's
utility is the average of ``grad log density`` over the completed rows.

Variants
--------
``marginals``        data ``x ~ pi(x)`` and ``z ~ pi(z)`` only.
``unsupervised``     ``x ~ pi(x)``; decoder with its own prior.
``semi_supervised``  streams ``xz``, ``z`` and ``x`` (any may be empty).
``hierarchical``     layered latents, optional labelled ``(x, z0)`` rows.
``triple``           ``p(s|x,z)``, ``p(x|s,z)``, ``q(z|x,s)`` on pairs ``(x, s)``.
"""
from dataclasses import dataclass, field
import copy

import numpy as np

from . import efcore as ef
from . import rng as rngmod
from .errors import ConfigurationError, InvalidInputError, InvalidParameterError, NonFiniteError
from .models import batch_world

VARIANTS = ("marginals", "unsupervised", "semi_supervised", "hierarchical", "triple")
GENERATE = "generate"


@dataclass
class Scenario:
    variant: str
    prior: str = "learned"
    labelled_weight: float = 1.0
    unlabelled: bool = True
    gibbs_sweeps: int = 3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown scenario variant {self.variant!r}; expected one of {VARIANTS}")
        if self.prior not in ("learned", "fixed", "implicit"):
            raise ConfigurationError(f"unknown prior mode {self.prior!r}")
        if self.labelled_weight < 0:
            raise ConfigurationError("labelled_weight must be >= 0")
        if self.gibbs_sweeps < 1:
            raise ConfigurationError("gibbs_sweeps must be >= 1")


@dataclass
class Draw:
    cond: str
    target: str
    bind: dict = None


@dataclass
class Gibbs:
    """Alternate ``s ~ p(s|x,z)`` and ``x ~ p(x|s,z)`` for a fixed ``z``, from a random ``s``."""
    sweeps: int


@dataclass
class Score:
    cond: str
    bind: dict = None


@dataclass
class Term:
    player: str
    source: str
    draws: list
    scores: list
    weight: float = 1.0
    label: str = ""


@dataclass
class Batch:
    streams: dict
    generate_size: int


@dataclass
class EmpiricalData:
    """Named sample stores, each a dict of equally long arrays keyed by variable."""
    streams: dict

    def size(self, name):
        s = self.streams.get(name)
        if not s:
            return 0
        return len(next(iter(s.values())))

    def available(self):
        return {n for n in self.streams if self.size(n) > 0}

    def sample_batch(self, rng, size, names=None):
        names = sorted(self.available() if names is None else names)
        out = {}
        for n in names:
            if self.size(n) == 0:
                continue
            idx = rng.integers(0, self.size(n), size=size)
            out[n] = {k: v[idx] for k, v in self.streams[n].items()}
        return Batch(out, size)


# --- plans ------------------------------------------------------------------------

def _names(conds):
    return [c.name for c in conds]


def _decoder_draws(models):
    return [Draw(c.name, c.var) for c in models.players["p"]]


def utility_terms(scenario, models, streams=None):
    """Per-player list of :class:`Term` for the scenario.

    ``streams`` maps each available (non-empty) data stream to the variables
    it carries. Streams a scenario requires but that are absent raise
    :class:`ConfigurationError`; optional empty streams just drop their terms.
    """
    streams = {} if streams is None else dict(streams)
    v = scenario.variant

    def need(name):
        if name not in streams:
            raise ConfigurationError(f"scenario {v!r} needs a non-empty {name!r} data stream")

    plan = {player: [] for player in models.players}
    if v == "triple":
        need("xs")
        plan["theta1"].append(Term(
            "theta1", "xs",
            [Draw("q_z", "z"), Draw("p_x", "x'")],
            [Score("p_s"), Score("p_s", {"x": "x'"})], label="theta1:data+completion"))
        plan["theta2"].append(Term(
            "theta2", "xs",
            [Draw("q_z", "z"), Draw("p_s", "s'")],
            [Score("p_x"), Score("p_x", {"s": "s'"})], label="theta2:data+completion"))
        plan["phi"].append(Term(
            "phi", GENERATE, [Draw("pi_z", "z"), Gibbs(scenario.gibbs_sweeps)], [Score("q_z")],
            label="phi:generated"))
        return plan

    if "p" not in models.players or "q" not in models.players:
        raise ConfigurationError(f"scenario {v!r} needs decoder 'p' and encoder 'q' players")
    dec, enc = models.players["p"], models.players["q"]
    has_prior = any(c.var == "z" for c in dec) if v != "hierarchical" else True

    if v == "marginals":
        need("x")
        need("z")
        plan["p"].append(Term("p", "x", [Draw("q_z", "z")], [Score("p_x")], label="p:x-completed"))
        plan["q"].append(Term("q", "z", [Draw("p_x", "x")], [Score("q_z")], label="q:z-completed"))
    elif v == "unsupervised":
        need("x")
        if scenario.prior == "implicit" or not has_prior:
            need("z")
            plan["p"].append(Term("p", "x", [Draw("q_z", "z")], [Score("p_x")], label="p:x-completed"))
            plan["q"].append(Term("q", "z", [Draw("p_x", "x")], [Score("q_z")], label="q:z-completed"))
        else:
            plan["p"].append(Term("p", "x", [Draw("q_z", "z")], [Score(n) for n in _names(dec)],
                                  label="p:x-completed"))
            plan["q"].append(Term("q", GENERATE, _decoder_draws(models), [Score("q_z")], label="q:generated"))
    elif v == "semi_supervised":
        if not has_prior:
            raise ConfigurationError("semi_supervised needs a decoder prior p(z)")
        if not {"xz", "z", "x"} & set(streams):
            raise ConfigurationError("semi_supervised needs at least one of the xz, z, x streams")
        joint = [Score(n) for n in _names(dec)]
        if "xz" in streams:
            plan["p"].append(Term("p", "xz", [], joint, label="p:xz"))
            plan["q"].append(Term("q", "xz", [], [Score("q_z")], label="q:xz"))
        if "z" in streams:
            plan["p"].append(Term("p", "z", [], [Score("p_z")], label="p:z"))
            plan["q"].append(Term("q", "z", [Draw("p_x", "x")], [Score("q_z")], label="q:z-completed"))
        if "x" in streams:
            plan["p"].append(Term("p", "x", [Draw("q_z", "z")], joint, label="p:x-completed"))
    elif v == "hierarchical":
        plan = hierarchical_utilities(models, streams, scenario)
    return plan


def hierarchical_utilities(models, streams, scenario=None):
    """Plans for layered latents, decomposed into one score per factor.

    With a ``labelled`` stream carrying some latent variables (``z0`` or the
    class ``c``), the decoder additionally scores labelled rows completed by
    the encoder on the remaining latents, and the encoder scores its factors
    for the observed latents (scaled by ``labelled_weight``).
    """
    scenario = Scenario("hierarchical") if scenario is None else scenario
    dec, enc = models.players["p"], models.players["q"]
    dec_vars = {c.var for c in dec}
    for c in enc:
        if c.var not in dec_vars:
            raise ConfigurationError(f"encoder factor {c.name} has no decoder counterpart")
    plan = {"p": [], "q": []}
    joint = [Score(c.name) for c in dec]
    if scenario.unlabelled:
        if "x" not in streams:
            raise ConfigurationError("hierarchical scenario needs a non-empty 'x' stream")
        plan["p"].append(Term("p", "x", [Draw(c.name, c.var) for c in enc], joint, label="p:x-completed"))
    lab_vars = set(streams.get("labelled", ())) - {"x"}
    if "labelled" in streams:
        if "x" not in streams["labelled"] or not lab_vars:
            raise ConfigurationError("the labelled stream must carry x and at least one latent variable")
        rest = [Draw(c.name, c.var) for c in enc if c.var not in lab_vars]
        plan["p"].append(Term("p", "labelled", rest, joint, label="p:labelled-completed"))
        if scenario.labelled_weight > 0:
            plan["q"].append(Term("q", "labelled", [], [Score(c.name) for c in enc if c.var in lab_vars],
                                  weight=scenario.labelled_weight, label="q:labelled"))
    if not plan["p"]:
        raise ConfigurationError("hierarchical scenario has no decoder data term")
    plan["q"].append(Term("q", GENERATE, [Draw(c.name, c.var) for c in dec], [Score(c.name) for c in enc],
                          label="q:generated"))
    return plan


def stream_vars(data):
    return {n: tuple(data.streams[n]) for n in data.available()}


# --- execution -----------------------------------------------------------------------

def run_gibbs(models, world, sweeps, rng):
    """Triple-game chain for fixed ``world["z"]``: random ``s``, then ``x``, then sweeps."""
    sf = models.variables["s"]
    n = len(world["z"])
    world["s"] = ef.sample(sf, np.zeros((n, sf.stat_dim)), rng)
    p_s, p_x = models.conditional("p_s"), models.conditional("p_x")
    world["x"] = models.draw(p_x, world, rng)
    for _ in range(sweeps):
        world["s"] = models.draw(p_s, world, rng)
        world["x"] = models.draw(p_x, world, rng)
    return world


def _source_world(term, batch, n_mc):
    if term.source == GENERATE:
        return batch_world(batch.generate_size * n_mc)
    if term.source not in batch.streams:
        raise ConfigurationError(f"term {term.label!r} needs stream {term.source!r}, absent from the batch")
    return {k: np.repeat(v, n_mc, axis=0) for k, v in batch.streams[term.source].items()}


def run_term(models, term, batch, n_mc, rng, acc, per_sample=False):
    """Complete rows for one term, accumulate its gradient; return its utility estimate."""
    world = _source_world(term, batch, n_mc)
    for d in term.draws:
        if isinstance(d, Gibbs):
            run_gibbs(models, world, d.sweeps, rng)
        else:
            world[d.target] = models.draw(models.conditional(d.cond), world, rng, d.bind)
    n = len(next(v for k, v in world.items()))
    scale = term.weight if per_sample else term.weight / n
    weights = np.full(n, scale)
    total = np.zeros(n)
    for s in term.scores:
        try:
            logd = models.grad(models.conditional(s.cond), world, weights, acc, s.bind, per_sample)
        except InvalidParameterError as e:
            # diverged parameters surface as invalid natural parameters inside efcore
            raise NonFiniteError(f"term {term.label!r} ({s.cond}): {e}", term=term.label) from e
        if not np.all(np.isfinite(logd)):
            raise NonFiniteError(f"non-finite log-density in term {term.label!r} ({s.cond})", term=term.label)
        total += logd
    return term.weight * float(total.mean())


def estimate_gradients(scenario, models, batch, n_mc=1, rng=None, plan=None, players=None, per_sample=False):
    """Monte-Carlo utility gradients for each player.

    ``rng`` is a dict of per-player generators (a single generator is used
    for every player). Returns ``(grads, utilities)``; with ``per_sample`` each
    gradient is a ``(B, P)`` array whose rows are single-sample estimates.
    """
    if n_mc < 1:
        raise InvalidInputError("n_mc must be >= 1")
    if per_sample and n_mc != 1:
        raise InvalidInputError("per-sample estimates need n_mc == 1")
    if plan is None:
        plan = utility_terms(scenario, models, {k: tuple(v) for k, v in batch.streams.items()})
    players = list(plan) if players is None else players
    grads, utils = {}, {}
    for player in players:
        r = rng[player] if isinstance(rng, dict) else rng
        acc = {}
        u = 0.0
        for term in plan[player]:
            u += run_term(models, term, batch, n_mc, r, acc, per_sample)
        g = models.flatten_grads(player, acc, per_sample, batch.generate_size)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for player {player!r}", term=player)
        grads[player] = g
        utils[player] = u
    return grads, utils


def apply_update(models, player, grad, alpha):
    pos = 0
    for m in models.player_maps(player):
        m.params += alpha * grad[pos:pos + m.params.size]
        pos += m.params.size


# --- trainer state and steps -------------------------------------------------------

@dataclass
class TrainerState:
    models: object
    scenario: Scenario
    alpha: float
    mode: str = "parallel"
    n_mc: int = 1
    step: int = 0
    rngs: dict = field(default_factory=dict)
    utilities: dict = field(default_factory=dict)
    grad_norms: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ConfigurationError("alpha must be >= 0")
        if self.mode not in ("parallel", "sequential"):
            raise ConfigurationError(f"mode must be parallel or sequential, got {self.mode!r}")

    def copy(self):
        return copy.deepcopy(self)


def make_state(models, scenario, alpha, seed, mode="parallel", n_mc=1):
    names = list(models.players) + ["data", "eval"]
    return TrainerState(models, scenario, alpha, mode, n_mc, rngs=rngmod.make_streams(seed, names))


def _record(state, player, grad, util):
    state.utilities[player] = util
    state.grad_norms[player] = float(np.linalg.norm(grad))


def nash_step(state, batch, plan=None):
    """One round of simultaneous (or sequential) gradient ascent; updates ``state`` in place."""
    models = state.models
    if plan is None:
        plan = utility_terms(state.scenario, models, {k: tuple(v) for k, v in batch.streams.items()})
    if state.mode == "parallel":
        grads, utils = estimate_gradients(state.scenario, models, batch, state.n_mc, state.rngs, plan)
        for player in plan:
            apply_update(models, player, grads[player], state.alpha)
            _record(state, player, grads[player], utils[player])
    else:
        for player in plan:
            grads, utils = estimate_gradients(state.scenario, models, batch, state.n_mc, state.rngs, plan,
                                              players=[player])
            apply_update(models, player, grads[player], state.alpha)
            _record(state, player, grads[player], utils[player])
    state.step += 1
    return state


def _require_pair(state, what):
    if state.scenario.variant != "unsupervised" or state.models.kind != "pair":
        raise ConfigurationError(f"{what} needs the unsupervised scenario with pair models")


def wake_sleep_step(state, batch):
    """Wake: complete data by the encoder and fit the decoder. Sleep: dream from the decoder and fit the encoder.

    In parallel mode the dream uses the decoder as it was before the wake
    update; in sequential mode it uses the updated decoder.
    """
    _require_pair(state, "wake-sleep")
    models = state.models
    dec = models.players["p"]
    if not any(c.var == "z" for c in dec) or state.scenario.prior == "implicit":
        raise ConfigurationError("wake-sleep needs a decoder prior to dream from")
    q_z = models.players["q"][0]
    n_mc = state.n_mc
    # wake
    world = {"x": np.repeat(batch.streams["x"]["x"], n_mc, axis=0)}
    world["z"] = models.draw(q_z, world, state.rngs["p"])
    n = len(world["x"])
    acc = {}
    wake = np.zeros(n)
    for c in dec:
        wake += models.grad(c, world, np.full(n, 1.0 / n), acc)
    g_p = models.flatten_grads("p", acc)
    if state.mode == "sequential":
        apply_update(models, "p", g_p, state.alpha)
    # sleep
    dream = batch_world(batch.generate_size * n_mc)
    for c in dec:
        dream[c.var] = models.draw(c, dream, state.rngs["q"])
    m = batch.generate_size * n_mc
    acc = {}
    sleep = models.grad(q_z, dream, np.full(m, 1.0 / m), acc)
    g_q = models.flatten_grads("q", acc)
    if state.mode == "parallel":
        apply_update(models, "p", g_p, state.alpha)
    apply_update(models, "q", g_q, state.alpha)
    _record(state, "p", g_p, float(wake.mean()))
    _record(state, "q", g_q, float(sleep.mean()))
    state.step += 1
    return state


def elbo_gradients(models, batch, n_mc=1, rng=None, per_sample=False):
    """Gradients of the evidence lower bound for both parameter sets.

    The decoder gradient is the completion gradient of ``log p(x|z)`` plus the
    closed-form gradient of ``-KL(q(z|x) || p(z))`` in the prior parameters.
    The encoder gradient uses the score-function estimator for the
    reconstruction term, with a leave-one-out batch-mean baseline, plus the
    closed-form gradient of the KL term.
    """
    dec = models.players["p"]
    priors = [c for c in dec if c.var == "z"]
    if not priors or priors[0].parents:
        raise ConfigurationError("the evidence bound needs an explicit closed-form prior p(z)")
    p_z, p_x = priors[0], models.for_var("p", "x")
    q_z = models.players["q"][0]
    zf = models.variables["z"]
    r = rng["p"] if isinstance(rng, dict) else rng
    world = {"x": np.repeat(batch.streams["x"]["x"], n_mc, axis=0)}
    n = len(world["x"])
    eta_q = models.eta(q_z, world)
    world["z"] = ef.sample(zf, eta_q, r)
    eta_prior = models.eta(p_z, world)
    scale = 1.0 if per_sample else 1.0 / n
    acc_p = {}
    recon = models.grad(p_x, world, np.full(n, scale), acc_p, per_sample=per_sample)
    if p_z.trainable:
        cot = scale * (ef.mean_params(zf, eta_q) - ef.mean_params(zf, eta_prior))
        models.grad_from_cotangent(p_z, world, cot, acc_p, per_sample=per_sample)
    if n > 1:
        baseline = (recon.sum() - recon) / (n - 1)
    else:
        baseline = np.zeros(n)
    sf = (recon - baseline)[:, None] * ef.score(zf, eta_q, world["z"])
    kl_grad = ef.fisher_vector_product(zf, eta_q, eta_q - eta_prior)
    acc_q = {}
    models.grad_from_cotangent(q_z, world, scale * (sf - kl_grad), acc_q, per_sample=per_sample)
    kl = ef.kl_divergence(zf, eta_q, eta_prior)
    grads = {"p": models.flatten_grads("p", acc_p, per_sample, n),
             "q": models.flatten_grads("q", acc_q, per_sample, n)}
    return grads, float((recon - kl).mean())


def elbo_step(state, batch):
    _require_pair(state, "the evidence-bound baseline")
    if state.scenario.prior == "implicit":
        raise ConfigurationError("the evidence bound needs an explicit prior; an implicit prior is unsupported")
    grads, value = elbo_gradients(state.models, batch, state.n_mc, state.rngs)
    for player in ("p", "q"):
        apply_update(state.models, player, grads[player], state.alpha)
        _record(state, player, grads[player], value)
    state.step += 1
    return state


# --- exact gradients (tabular-realizable scenarios) ----------------------------------

def exact_scenario_gradients(scenario, models, data):
    from . import tabular_oracle as to

    streams = {n: data.streams[n] for n in data.available()}
    v = scenario.variant
    if v in ("marginals", "unsupervised"):
        prior = "implicit" if v == "marginals" or scenario.prior == "implicit" else scenario.prior
        return to.exact_pair_gradients(models, streams, prior=prior)
    if v == "semi_supervised":
        return to.exact_semisupervised_gradients(models, streams)
    if v == "hierarchical":
        return to.exact_hierarchical_gradients(models, streams, scenario.labelled_weight, scenario.unlabelled)
    raise ConfigurationError(f"no exact gradients for scenario {v!r}")


# --- training loop ---------------------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int
    batch_size: int = 32
    alpha: float = 1e-2
    n_mc: int = 1
    eval_every: int = 100
    mode: str = "parallel"
    method: str = "nash"
    gradient: str = "mc"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.n_mc < 1 or self.eval_every < 1:
            raise ConfigurationError("steps >= 0, batch_size >= 1, n_mc >= 1 and eval_every >= 1 are required")
        if not self.alpha > 0:
            raise ConfigurationError("alpha must be > 0")
        if self.method not in ("nash", "wake_sleep", "elbo"):
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.gradient not in ("mc", "exact"):
            raise ConfigurationError(f"unknown gradient mode {self.gradient!r}")


METRIC_FIELDS = ("step", "player", "utility", "grad_norm", "kl_fwd", "kl_rev", "accuracy")


def train(scenario, models, data, config, evaluator=None, callback=None):
    """Run ``config.steps`` updates; return ``(models, metrics_rows)``.

    Metrics are taken at step 0, every ``eval_every`` steps and at the end:
    one row per player with a fresh utility/gradient estimate on an
    evaluation batch (its own random stream), plus whatever ``evaluator``
    returns (``kl_fwd``, ``kl_rev``, ``accuracy``). ``callback(step, state)``
    runs at step 0 and after every update.
    """
    state = make_state(models, scenario, config.alpha, config.seed, config.mode, config.n_mc)
    rows = []
    if config.steps == 0:
        return models, rows
    sv = stream_vars(data)
    plan = utility_terms(scenario, models, sv)
    eval_points = set(range(0, config.steps, config.eval_every)) | {config.steps}
    for t in range(config.steps + 1):
        if t in eval_points:
            rows.extend(_evaluate(state, data, plan, config, evaluator, t))
        if callback is not None:
            callback(t, state)
        if t == config.steps:
            break
        if config.gradient == "exact":
            grads = exact_scenario_gradients(scenario, models, data)
            for player in plan:
                apply_update(models, player, grads[player], config.alpha)
                state.grad_norms[player] = float(np.linalg.norm(grads[player]))
            state.step += 1
            continue
        batch = data.sample_batch(state.rngs["data"], config.batch_size)
        if config.method == "nash":
            nash_step(state, batch, plan)
        elif config.method == "wake_sleep":
            wake_sleep_step(state, batch)
        else:
            elbo_step(state, batch)
        for player, u in state.utilities.items():
            if not np.isfinite(u):
                raise NonFiniteError(f"non-finite utility for player {player!r} at step {state.step}", term=player)
    return models, rows


def _evaluate(state, data, plan, config, evaluator, t):
    batch = data.sample_batch(state.rngs["eval"], config.batch_size)
    if config.method == "elbo":
        grads, value = elbo_gradients(state.models, batch, config.n_mc, state.rngs["eval"])
        utils = {p: value for p in grads}
    else:
        grads, utils = estimate_gradients(state.scenario, state.models, batch, config.n_mc, state.rngs["eval"], plan)
    extra = evaluator(state.models) if evaluator is not None else {}
    rows = []
    for player in plan:
        row = {"step": t, "player": player, "utility": utils[player],
               "grad_norm": float(np.linalg.norm(grads[player]))}
        for k in ("kl_fwd", "kl_rev", "accuracy"):
            val = extra.get(k)
            row[k] = val.get(player) if isinstance(val, dict) else val
        rows.append(row)
    return rows
