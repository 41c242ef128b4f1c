"""Conditional models and their grouping into players.

A :class:`Conditional` is one factor ``p(var | parents)`` of a model: an
exponential family whose natural parameters come from a parametric map of
the parents' features (or are fixed). :class:`PlayerModels` groups the
conditionals by the player that owns their parameters.

Variables live in a *world*: a dict from variable name to a batch array.
Every evaluation accepts a ``bind`` dict renaming model variables to world
keys, so the same conditional can score a completed copy such as ``x'``.
"""
from dataclasses import dataclass, field
import copy

import numpy as np

from . import efcore as ef
from . import netparam as npm
from .errors import ConfigurationError, InvalidInputError


@dataclass
class Conditional:
    name: str
    var: str
    parents: tuple
    family: object
    map: npm.ParametricMap = None
    fixed_eta: np.ndarray = None
    ladder: npm.LadderEncoderMap = None
    ladder_layer: int = 0
    prior: "Conditional" = None

    def __post_init__(self):
        self.parents = tuple(self.parents)
        n_sources = sum(x is not None for x in (self.map, self.fixed_eta, self.ladder))
        if n_sources != 1:
            raise ConfigurationError(f"{self.name}: exactly one of map, fixed_eta, ladder must be given")
        if self.ladder is not None and self.prior is None:
            raise ConfigurationError(f"{self.name}: a ladder conditional needs the decoder prior factor")
        if self.map is not None and self.map.out_dim != self.family.stat_dim:
            raise ConfigurationError(
                f"{self.name}: map emits {self.map.out_dim} values, {self.family} needs {self.family.stat_dim}")

    @property
    def trainable(self):
        return self.fixed_eta is None

    def maps(self):
        if self.map is not None:
            return [self.map]
        if self.ladder is not None:
            return [self.ladder.backbone, self.ladder.heads[self.ladder_layer]]
        return []


def _key(bind, name):
    return bind.get(name, name) if bind else name


@dataclass
class PlayerModels:
    """Variables, their families, and the conditionals owned by each player.

    ``players`` maps a player name to its conditionals in sampling order.
    ``extras`` holds conditionals owned by nobody (fixed priors).
    """
    variables: dict
    players: dict
    extras: dict = field(default_factory=dict)
    kind: str = "pair"

    def conditional(self, name):
        for conds in self.players.values():
            for c in conds:
                if c.name == name:
                    return c
        if name in self.extras:
            return self.extras[name]
        raise ConfigurationError(f"no conditional named {name!r}")

    def for_var(self, player, var):
        for c in self.players[player]:
            if c.var == var:
                return c
        raise ConfigurationError(f"player {player!r} has no conditional for {var!r}")

    def player_maps(self, player):
        seen, out = set(), []
        for c in self.players[player]:
            for m in c.maps():
                if id(m) not in seen:
                    seen.add(id(m))
                    out.append(m)
        return out

    def player_params(self, player):
        maps = self.player_maps(player)
        return np.concatenate([m.params for m in maps]) if maps else np.zeros(0)

    def set_player_params(self, player, flat):
        pos = 0
        for m in self.player_maps(player):
            m.params[...] = flat[pos:pos + m.params.size]
            pos += m.params.size

    def named_maps(self):
        """``(name, map)`` for every distinct map, in a fixed order."""
        out, seen = [], set()
        for player in sorted(self.players):
            for c in self.players[player]:
                if c.ladder is not None:
                    named = [(f"{player}.ladder.backbone", c.ladder.backbone),
                             (f"{c.name}.head", c.ladder.heads[c.ladder_layer])]
                else:
                    named = [(c.name, m) for m in c.maps()]
                for n, m in named:
                    if id(m) not in seen:
                        seen.add(id(m))
                        out.append((n, m))
        return out

    def copy(self):
        return copy.deepcopy(self)

    # --- evaluation ------------------------------------------------------------

    def inputs(self, cond, world, bind=None):
        cols = []
        batch = None
        for p in cond.parents:
            k = _key(bind, p)
            if k not in world:
                raise InvalidInputError(f"{cond.name}: parent {p!r} (world key {k!r}) not available")
            f = ef.features(self.variables[p], world[k])
            cols.append(f)
            batch = f.shape[0]
        if not cols:
            batch = _batch_size(world)
            return np.zeros((batch, 0))
        return np.concatenate(cols, axis=-1)

    def eta(self, cond, world, bind=None):
        if cond.fixed_eta is not None:
            return np.broadcast_to(cond.fixed_eta, (_batch_size(world), cond.family.stat_dim)).copy()
        inputs = self.inputs(cond, world, bind)
        if cond.map is not None:
            return npm.forward(cond.map, inputs)
        prior_eta = self.eta(cond.prior, world, bind)
        return npm.ladder_encoder_logits(cond.ladder, prior_eta, inputs, cond.ladder_layer)

    def log_density(self, cond, world, bind=None):
        return ef.log_density(cond.family, self.eta(cond, world, bind), world[_key(bind, cond.var)])

    def draw(self, cond, world, rng, bind=None):
        return ef.sample(cond.family, self.eta(cond, world, bind), rng)

    def grad(self, cond, world, weights, acc, bind=None, per_sample=False):
        """Accumulate ``sum_b weights_b * grad log cond(world_b)`` into ``acc``.

        ``acc`` maps ``id(map)`` to a gradient array (``(B, P)`` rows when
        ``per_sample``). Returns the per-row log densities.
        """
        eta = self.eta(cond, world, bind)
        v = world[_key(bind, cond.var)]
        logd = ef.log_density(cond.family, eta, v)
        if not cond.trainable:
            return logd
        cot = weights[:, None] * ef.score(cond.family, eta, v)
        self.grad_from_cotangent(cond, world, cot, acc, bind, per_sample)
        return logd

    def grad_from_cotangent(self, cond, world, cot, acc, bind=None, per_sample=False):
        inputs = self.inputs(cond, world, bind)
        if cond.map is not None:
            _add(acc, cond.map, _map_grad(cond.map, inputs, cot, per_sample))
            return
        lad = cond.ladder
        head = lad.heads[cond.ladder_layer]
        feats = npm.forward(lad.backbone, inputs)
        _add(acc, head, _map_grad(head, feats, cot, per_sample))
        w = head.layers()[0][0]
        _add(acc, lad.backbone, _map_grad(lad.backbone, inputs, cot @ w, per_sample))

    def flatten_grads(self, player, acc, per_sample=False, batch=None):
        parts = []
        for m in self.player_maps(player):
            g = acc.get(id(m))
            if g is None:
                g = np.zeros((batch, m.params.size)) if per_sample else np.zeros(m.params.size)
            parts.append(g)
        if not parts:
            return np.zeros((batch, 0)) if per_sample else np.zeros(0)
        return np.concatenate(parts, axis=-1)


def _map_grad(m, inputs, cot, per_sample):
    if per_sample:
        return npm.per_sample_grads(m, inputs, cot)
    return npm.grad_params(m, inputs, cot)


def _add(acc, m, g):
    k = id(m)
    if k in acc:
        acc[k] = acc[k] + g
    else:
        acc[k] = g


def _batch_size(world):
    for v in world.values():
        return np.shape(v)[0]
    raise InvalidInputError("cannot infer batch size from an empty world")


def batch_world(size):
    """A world with no variables but a known batch size."""
    return {"__batch__": np.zeros((size, 0))}


# --- builders -------------------------------------------------------------------

def _family(f):
    return ef.parse_family(f) if isinstance(f, str) else f


def _map_for(in_dim, family, hidden, rng, zero=False):
    adapter = "gaussian" if isinstance(family, ef.DiagonalGaussian) else None
    return npm.init_map((in_dim, *hidden, family.stat_dim), rng, adapter=adapter, zero=zero)


def _in_dim(variables, parents):
    return sum(variables[p].feature_dim for p in parents)


def _fixed_prior(family):
    if isinstance(family, ef.DiagonalGaussian):
        return np.concatenate([np.zeros(family.n), -0.5 * np.ones(family.n)])
    return np.zeros(family.stat_dim)


def build_pair(x_family, z_family, hidden, rng, prior="learned"):
    """Decoder ``p(x|z)`` (+ prior ``p(z)``) and encoder ``q(z|x)``.

    ``prior``: ``"learned"`` (bias-only map), ``"fixed"`` (standard member of
    the family, no parameters) or ``"implicit"`` (no prior model at all; the
    latent marginal is only available through samples).
    """
    xf, zf = _family(x_family), _family(z_family)
    variables = {"x": xf, "z": zf}
    decoder = []
    if prior == "learned":
        decoder.append(Conditional("p_z", "z", (), zf, map=npm.init_map((0, zf.stat_dim), zero=True)))
    elif prior == "fixed":
        decoder.append(Conditional("p_z", "z", (), zf, fixed_eta=_fixed_prior(zf)))
    elif prior != "implicit":
        raise ConfigurationError(f"unknown prior mode {prior!r}")
    decoder.append(Conditional("p_x", "x", ("z",), xf, map=_map_for(zf.feature_dim, xf, hidden, rng)))
    encoder = [Conditional("q_z", "z", ("x",), zf, map=_map_for(xf.feature_dim, zf, hidden, rng))]
    return PlayerModels(variables, {"p": decoder, "q": encoder}, kind="pair")


def build_hierarchical(x_family, layers, hidden, rng, ladder=True, feature_dim=32, class_count=None):
    """Latent layers ``z0 -> z1 -> ... -> x`` with same-order encoder.

    ``layers`` lists the latent families top-down. Each decoder factor
    conditions on all latent layers above it; ``p(x|z)`` on all of them. With
    ``ladder=True`` every encoder factor multiplies the matching decoder prior
    factor with a head on shared backbone features of ``x`` (heads start at
    zero, so the encoder starts equal to the decoder prior).

    ``class_count`` adds a categorical class variable ``c`` next to ``z0``
    (``z0 = (l, c)``); its encoder factor ``q(c|x)`` is a separate map.
    """
    xf = _family(x_family)
    lfs = [_family(f) for f in layers]
    names = [f"z{i}" for i in range(len(lfs))]
    variables = {"x": xf, **dict(zip(names, lfs))}
    top = []
    if class_count:
        variables["c"] = ef.Categorical(int(class_count), 1)
        top = ["c"]
    decoder, encoder = [], []
    if class_count:
        decoder.append(Conditional("p_c", "c", (), variables["c"], fixed_eta=np.zeros(class_count)))
    for i, (n, f) in enumerate(zip(names, lfs)):
        if i == 0:
            decoder.append(Conditional(f"p_{n}", n, (), f, map=npm.init_map((0, f.stat_dim), zero=True)))
        else:
            parents = tuple(top + names[:i])
            decoder.append(Conditional(f"p_{n}", n, parents, f,
                                       map=_map_for(_in_dim(variables, parents), f, hidden, rng)))
    x_parents = tuple(top + names)
    decoder.append(Conditional("p_x", "x", x_parents, xf,
                               map=_map_for(_in_dim(variables, x_parents), xf, hidden, rng)))
    if class_count:
        encoder.append(Conditional("q_c", "c", ("x",), variables["c"],
                                   map=_map_for(xf.feature_dim, variables["c"], hidden, rng)))
    if ladder:
        lad = npm.init_ladder(xf.feature_dim, hidden, feature_dim, [f.stat_dim for f in lfs], rng)
        for i, (n, f) in enumerate(zip(names, lfs)):
            encoder.append(Conditional(f"q_{n}", n, ("x",), f, ladder=lad, ladder_layer=i,
                                       prior=decoder[i + (1 if class_count else 0)]))
    else:
        for i, (n, f) in enumerate(zip(names, lfs)):
            parents = tuple(["x"] + (top + names[:i] if i else []))
            encoder.append(Conditional(f"q_{n}", n, parents, f,
                                       map=_map_for(_in_dim(variables, parents), f, hidden, rng)))
    return PlayerModels(variables, {"p": decoder, "q": encoder}, kind="hierarchical")


def build_triple(x_family, s_family, z_family, hidden, rng, zero_cross=True):
    """Three players: ``p(s|x,z)``, ``p(x|s,z)`` and ``q(z|x,s)``, uniform prior on ``z``.

    With ``zero_cross`` the output layers of the two decoders start at zero,
    so both start from their data-independent baseline.
    """
    xf, sf, zf = _family(x_family), _family(s_family), _family(z_family)
    variables = {"x": xf, "s": sf, "z": zf}
    p_s = Conditional("p_s", "s", ("x", "z"), sf,
                      map=_map_for(xf.feature_dim + zf.feature_dim, sf, hidden, rng))
    p_x = Conditional("p_x", "x", ("s", "z"), xf,
                      map=_map_for(sf.feature_dim + zf.feature_dim, xf, hidden, rng))
    if zero_cross:
        for c in (p_s, p_x):
            w, b = c.map.layers()[-1]
            w[...] = 0.0
            b[...] = 0.0
    q_z = Conditional("q_z", "z", ("x", "s"), zf,
                      map=_map_for(xf.feature_dim + sf.feature_dim, zf, hidden, rng))
    pi_z = Conditional("pi_z", "z", (), zf, fixed_eta=_fixed_prior(zf))
    return PlayerModels(variables, {"theta1": [p_s], "theta2": [p_x], "phi": [q_z]},
                        extras={"pi_z": pi_z}, kind="triple")
