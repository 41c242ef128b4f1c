"""Small tanh MLPs that emit natural parameters, with exact reverse-mode gradients.

Parameters live in one flat float64 vector packed layer by layer: the weight
matrix of shape ``(out, in)`` in row-major order, then the bias. Hidden layers
use tanh, the output layer is affine. A map with ``layer_sizes=(0, d)`` has no
input and is just a learned bias (used for unconditional priors).

With ``adapter="gaussian"`` the affine output ``(mean, log_std)`` of length
``2n`` is converted to Gaussian natural parameters
``(mean / std**2, -1 / (2 std**2))``.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidParameterError


def n_params(layer_sizes):
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass
class ParametricMap:
    layer_sizes: tuple
    params: np.ndarray
    adapter: str = None

    def __post_init__(self):
        self.layer_sizes = tuple(int(w) for w in self.layer_sizes)
        if len(self.layer_sizes) < 2 or any(w < 0 for w in self.layer_sizes) or self.layer_sizes[-1] < 1:
            raise InvalidParameterError(f"invalid layer sizes {self.layer_sizes}")
        if self.adapter not in (None, "gaussian"):
            raise InvalidParameterError(f"unknown output adapter {self.adapter!r}")
        if self.adapter == "gaussian" and self.layer_sizes[-1] % 2:
            raise InvalidParameterError("gaussian adapter needs an even output width")
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (n_params(self.layer_sizes),):
            raise InvalidParameterError(
                f"expected {n_params(self.layer_sizes)} parameters for {self.layer_sizes}, got {self.params.shape}")

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def layers(self, params=None):
        """Views ``(W, b)`` into ``params`` (defaults to this map's own vector)."""
        params = self.params if params is None else params
        out, pos = [], 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = params[pos:pos + a * b].reshape(b, a)
            pos += a * b
            out.append((w, params[pos:pos + b]))
            pos += b
        return out

    def copy(self):
        return ParametricMap(self.layer_sizes, self.params.copy(), self.adapter)


def init_map(layer_sizes, rng=None, adapter=None, zero=False):
    """Glorot-uniform weights and zero biases; ``zero=True`` gives all zeros."""
    layer_sizes = tuple(int(w) for w in layer_sizes)
    params = np.zeros(n_params(layer_sizes))
    m = ParametricMap(layer_sizes, params, adapter)
    if not zero:
        for w, _ in m.layers():
            fan_out, fan_in = w.shape
            if w.size:
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                w[...] = rng.uniform(-bound, bound, size=w.shape)
    return m


def _as_batch(m, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != m.in_dim:
        raise InvalidInputError(f"map expects input width {m.in_dim}, got {x.shape[-1]}")
    return x, single


def _affine_forward(m, x, params=None):
    acts = [x]
    h = x
    layers = m.layers(params)
    for i, (w, b) in enumerate(layers):
        h = h @ w.T + b
        if i < len(layers) - 1:
            h = np.tanh(h)
        acts.append(h)
    return acts


def _adapt(m, raw):
    if m.adapter is None:
        return raw
    n = raw.shape[-1] // 2
    mean, log_std = raw[..., :n], raw[..., n:]
    prec = np.exp(-2.0 * log_std)
    return np.concatenate([mean * prec, -0.5 * prec], axis=-1)


def _adapt_vjp(m, raw, cot):
    if m.adapter is None:
        return cot
    n = raw.shape[-1] // 2
    mean, log_std = raw[..., :n], raw[..., n:]
    prec = np.exp(-2.0 * log_std)
    c1, c2 = cot[..., :n], cot[..., n:]
    return np.concatenate([c1 * prec, prec * (c2 - 2.0 * mean * c1)], axis=-1)


def forward(m, inputs, params=None):
    """Natural parameters for one input vector or a batch of them."""
    x, single = _as_batch(m, inputs)
    out = _adapt(m, _affine_forward(m, x, params)[-1])
    return out[0] if single else out


def _backprop(m, acts, cot):
    """Per-layer output cotangents (deltas), last layer first reversed back."""
    deltas = [None] * (len(acts) - 1)
    delta = cot
    layers = m.layers()
    for i in range(len(layers) - 1, -1, -1):
        deltas[i] = delta
        if i > 0:
            w = layers[i][0]
            delta = (delta @ w) * (1.0 - acts[i] ** 2)
    return deltas


def _check_cot(m, cot, batch):
    cot = np.asarray(cot, dtype=np.float64)
    cot2 = np.atleast_2d(cot)
    if cot2.shape != (batch, m.out_dim):
        raise InvalidInputError(f"cotangent shape {cot.shape} does not match output ({batch}, {m.out_dim})")
    return cot2


def grad_params(m, inputs, cotangent):
    """Gradient of ``sum_b <forward(input_b), cotangent_b>`` with respect to the parameters."""
    x, _ = _as_batch(m, inputs)
    cot = _check_cot(m, cotangent, x.shape[0])
    acts = _affine_forward(m, x)
    deltas = _backprop(m, acts, _adapt_vjp(m, acts[-1], cot))
    parts = []
    for a, d in zip(acts[:-1], deltas):
        parts.append((d.T @ a).ravel())
        parts.append(d.sum(axis=0))
    return np.concatenate(parts)


def per_sample_grads(m, inputs, cotangent):
    """Row ``b`` is the gradient of ``<forward(input_b), cotangent_b>``."""
    x, _ = _as_batch(m, inputs)
    cot = _check_cot(m, cotangent, x.shape[0])
    acts = _affine_forward(m, x)
    deltas = _backprop(m, acts, _adapt_vjp(m, acts[-1], cot))
    parts = []
    for a, d in zip(acts[:-1], deltas):
        parts.append(np.einsum("bo,bi->boi", d, a).reshape(x.shape[0], -1))
        parts.append(d)
    return np.concatenate(parts, axis=1)


def fd_check(m, inputs, eps, rng=None):
    """Max-norm relative error of :func:`grad_params` against central differences.

    A random cotangent is drawn, and the error is
    ``max|g - g_fd| / max|g_fd|`` over all parameters.
    """
    if not (0.0 < eps <= 1e-3):
        raise InvalidInputError(f"eps must lie in (0, 1e-3], got {eps}")
    rng = np.random.default_rng(0) if rng is None else rng
    x, _ = _as_batch(m, inputs)
    cot = rng.standard_normal((x.shape[0], m.out_dim))
    g = grad_params(m, x, cot)
    fd = np.empty_like(g)
    p = m.params.copy()
    for i in range(p.size):
        old = p[i]
        p[i] = old + eps
        up = np.sum(forward(m, x, p) * cot)
        p[i] = old - eps
        down = np.sum(forward(m, x, p) * cot)
        p[i] = old
        fd[i] = (up - down) / (2.0 * eps)
    scale = max(np.abs(fd).max(), np.abs(g).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(g - fd).max() / scale)


@dataclass
class LadderEncoderMap:
    """Encoder sharing the decoder's layer-wise prior.

    ``backbone`` maps ``x`` to a deterministic feature vector; ``heads[i]`` is
    a single affine layer from those features to the natural parameters of
    latent layer ``i``. The encoder logits of layer ``i`` are the decoder prior
    logits plus the head output (a product of factors in probability space).
    """
    backbone: ParametricMap
    heads: list = field(default_factory=list)

    @property
    def n_layers(self):
        return len(self.heads)

    def maps(self):
        return [self.backbone, *self.heads]


def init_ladder(x_dim, hidden, feature_dim, head_dims, rng):
    backbone = init_map((x_dim, *hidden, feature_dim), rng)
    heads = [init_map((feature_dim, d), zero=True) for d in head_dims]
    return LadderEncoderMap(backbone, heads)


def ladder_encoder_logits(ladder, decoder_prior_logits, x, layer):
    if not 0 <= layer < ladder.n_layers:
        raise InvalidInputError(f"layer {layer} out of range for {ladder.n_layers} ladder heads")
    feats = forward(ladder.backbone, x)
    return np.asarray(decoder_prior_logits) + forward(ladder.heads[layer], feats)


def ladder_grad(ladder, x, layer, cotangent):
    """Gradients ``(backbone_grad, head_grad)`` of ``<head_layer(backbone(x)), cotangent>``."""
    head = ladder.heads[layer]
    xb, _ = _as_batch(ladder.backbone, x)
    feats = forward(ladder.backbone, xb)
    cot = _check_cot(head, cotangent, xb.shape[0])
    head_g = grad_params(head, feats, cot)
    w = head.layers()[0][0]
    backbone_g = grad_params(ladder.backbone, xb, cot @ w)
    return backbone_g, head_g
