"""Factorized exponential families used as decoder and encoder output laws.

Three kinds are supported, all with closed-form log-partition functions:

``BernoulliVector(n)``
    ``n`` independent bits, statistic = the bits themselves.
``Categorical(k, sites)``
    ``sites`` independent labels in ``0..k-1``; one-hot statistics laid out
    site-major (site ``j`` occupies entries ``j*k .. j*k+k-1``).
``DiagonalGaussian(n)``
    ``n`` independent reals, statistic = ``(v, v**2)``; natural parameters
    ``(eta1, eta2)`` with ``eta2 < 0``.

All functions accept a leading batch dimension on ``eta`` and ``v``.
"""
from dataclasses import dataclass
import itertools
import math
import re

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .errors import InvalidInputError, InvalidParameterError, SupportTooLargeError
from . import kernels

MAX_SUPPORT = 2**16
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class BernoulliVector:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParameterError(f"BernoulliVector needs n >= 1, got {self.n}")

    @property
    def stat_dim(self):
        return self.n

    @property
    def value_dim(self):
        return self.n

    @property
    def feature_dim(self):
        return self.n

    @property
    def discrete(self):
        return True

    @property
    def support_size(self):
        return 2**self.n

    def __str__(self):
        return f"bernoulli:{self.n}"


@dataclass(frozen=True)
class Categorical:
    k: int
    sites: int = 1

    def __post_init__(self):
        if self.k < 2 or self.sites < 1:
            raise InvalidParameterError(
                f"Categorical needs k >= 2 and sites >= 1, got k={self.k}, sites={self.sites}")

    @property
    def stat_dim(self):
        return self.k * self.sites

    @property
    def value_dim(self):
        return self.sites

    @property
    def feature_dim(self):
        return self.k * self.sites

    @property
    def discrete(self):
        return True

    @property
    def support_size(self):
        return self.k**self.sites

    def __str__(self):
        return f"categorical:{self.k}x{self.sites}"


@dataclass(frozen=True)
class DiagonalGaussian:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParameterError(f"DiagonalGaussian needs n >= 1, got {self.n}")

    @property
    def stat_dim(self):
        return 2 * self.n

    @property
    def value_dim(self):
        return self.n

    @property
    def feature_dim(self):
        return self.n

    @property
    def discrete(self):
        return False

    @property
    def support_size(self):
        return math.inf

    def __str__(self):
        return f"gaussian:{self.n}"


_FAMILY_RE = re.compile(r"^\s*(bernoulli|categorical|gaussian)\s*:\s*(\d+)(?:\s*x\s*(\d+))?\s*$")


def parse_family(text):
    """Parse the canonical textual form, e.g. ``"categorical:4x64"``."""
    m = _FAMILY_RE.match(str(text))
    if m is None:
        raise InvalidInputError(f"cannot parse family descriptor {text!r}")
    kind, a, b = m.group(1), int(m.group(2)), m.group(3)
    if kind == "categorical":
        return Categorical(a, int(b) if b is not None else 1)
    if b is not None:
        raise InvalidInputError(f"{kind} takes a single size, got {text!r}")
    return BernoulliVector(a) if kind == "bernoulli" else DiagonalGaussian(a)


# --- validation ----------------------------------------------------------------

def _eta(family, eta):
    eta = np.asarray(eta, dtype=np.float64)
    if eta.shape[-1:] != (family.stat_dim,):
        raise InvalidInputError(
            f"{family}: natural parameters must have trailing length {family.stat_dim}, got shape {eta.shape}")
    if not np.all(np.isfinite(eta)):
        raise InvalidParameterError(f"{family}: natural parameters must be finite")
    if isinstance(family, DiagonalGaussian) and np.any(eta[..., family.n:] >= 0):
        raise InvalidParameterError(f"{family}: quadratic coefficients must be strictly negative")
    return eta


def _value(family, v):
    if isinstance(family, Categorical):
        v = np.asarray(v)
        if v.shape[-1:] != (family.sites,):
            raise InvalidInputError(f"{family}: value must have trailing length {family.sites}, got {v.shape}")
        if not np.issubdtype(v.dtype, np.integer):
            if np.any(v != np.round(v)):
                raise InvalidInputError(f"{family}: labels must be integers")
            v = v.astype(np.int64)
        if np.any((v < 0) | (v >= family.k)):
            raise InvalidInputError(f"{family}: labels must lie in 0..{family.k - 1}")
        return v
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1:] != (family.n,):
        raise InvalidInputError(f"{family}: value must have trailing length {family.n}, got {v.shape}")
    if isinstance(family, BernoulliVector) and np.any((v != 0.0) & (v != 1.0)):
        raise InvalidInputError(f"{family}: entries must be 0 or 1")
    if isinstance(family, DiagonalGaussian) and not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{family}: entries must be finite")
    return v


def _site_logits(family, eta):
    return eta.reshape(eta.shape[:-1] + (family.sites, family.k))


def _gauss_moments(family, eta):
    n = family.n
    e1, e2 = eta[..., :n], eta[..., n:]
    var = -0.5 / e2
    return e1 * var, var


# --- public operations ---------------------------------------------------------

def suff_stats(family, v):
    v = _value(family, v)
    if isinstance(family, BernoulliVector):
        return v.copy()
    if isinstance(family, Categorical):
        onehot = (v[..., None] == np.arange(family.k)).astype(np.float64)
        return onehot.reshape(v.shape[:-1] + (family.stat_dim,))
    return np.concatenate([v, v * v], axis=-1)


def features(family, v):
    """Encoding of a value when it is fed as input to a parametric map."""
    if isinstance(family, DiagonalGaussian):
        return _value(family, v)
    return suff_stats(family, v)


def log_partition(family, eta):
    eta = _eta(family, eta)
    if isinstance(family, BernoulliVector):
        return np.logaddexp(0.0, eta).sum(axis=-1)
    if isinstance(family, Categorical):
        return logsumexp(_site_logits(family, eta), axis=-1).sum(axis=-1)
    n = family.n
    e1, e2 = eta[..., :n], eta[..., n:]
    return (-e1 * e1 / (4.0 * e2) + 0.5 * np.log(-np.pi / e2)).sum(axis=-1)


def log_density(family, eta, v):
    eta = _eta(family, eta)
    stats = suff_stats(family, v)
    if isinstance(family, BernoulliVector):
        # sum of log sigmoid(+-eta) avoids cancellation for large |eta|
        return np.where(stats > 0.5, log_expit(eta), log_expit(-eta)).sum(axis=-1)
    if isinstance(family, Categorical):
        logits = _site_logits(family, eta)
        logp = logits - logsumexp(logits, axis=-1, keepdims=True)
        return (logp.reshape(eta.shape) * stats).sum(axis=-1)
    return (stats * eta).sum(axis=-1) - log_partition(family, eta)


def mean_params(family, eta):
    eta = _eta(family, eta)
    if isinstance(family, BernoulliVector):
        return expit(eta)
    if isinstance(family, Categorical):
        logits = _site_logits(family, eta)
        probs = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
        return probs.reshape(eta.shape)
    mean, var = _gauss_moments(family, eta)
    return np.concatenate([mean, mean * mean + var], axis=-1)


def score(family, eta, v):
    """Gradient of ``log_density`` with respect to ``eta``: ``T(v) - E[T]``."""
    return suff_stats(family, v) - mean_params(family, eta)


def sample(family, eta, rng):
    """Draw one value per row of ``eta``.

    The number of uniforms/normals consumed depends only on the shapes, so
    two calls with identically seeded generators give identical draws.
    """
    eta = _eta(family, eta)
    batch = eta.shape[:-1]
    if isinstance(family, BernoulliVector):
        u = rng.random(batch + (family.n,))
        return (u < expit(eta)).astype(np.float64)
    if isinstance(family, Categorical):
        probs = mean_params(family, eta).reshape(-1, family.k)
        u = rng.random(probs.shape[0])
        labels = kernels.draw_rows(kernels.cdf_rows(probs), u)
        return labels.reshape(batch + (family.sites,))
    mean, var = _gauss_moments(family, eta)
    return mean + np.sqrt(var) * rng.standard_normal(batch + (family.n,))


def mode(family, eta):
    eta = _eta(family, eta)
    if isinstance(family, BernoulliVector):
        return (eta > 0).astype(np.float64)
    if isinstance(family, Categorical):
        return _site_logits(family, eta).argmax(axis=-1)
    return _gauss_moments(family, eta)[0]


def fisher_vector_product(family, eta, w):
    """``Cov[T] @ w`` under the family at ``eta`` (the Hessian of ``log_partition``)."""
    eta = _eta(family, eta)
    w = np.asarray(w, dtype=np.float64)
    if isinstance(family, BernoulliVector):
        mu = expit(eta)
        return mu * (1.0 - mu) * w
    if isinstance(family, Categorical):
        probs = _site_logits(family, mean_params(family, eta))
        ws = _site_logits(family, np.broadcast_to(w, eta.shape))
        out = probs * (ws - (probs * ws).sum(axis=-1, keepdims=True))
        return out.reshape(eta.shape)
    n = family.n
    mean, var = _gauss_moments(family, eta)
    w1, w2 = w[..., :n], w[..., n:]
    c11 = var
    c12 = 2.0 * mean * var
    c22 = 4.0 * mean * mean * var + 2.0 * var * var
    return np.concatenate([c11 * w1 + c12 * w2, c12 * w1 + c22 * w2], axis=-1)


def kl_divergence(family, eta_a, eta_b):
    """KL(a || b) between two members of the same family, in closed form."""
    eta_a = _eta(family, eta_a)
    eta_b = _eta(family, eta_b)
    mu_a = mean_params(family, eta_a)
    return ((eta_a - eta_b) * mu_a).sum(axis=-1) - log_partition(family, eta_a) + log_partition(family, eta_b)


def support(family):
    """All values of a discrete family as a ``(size, value_dim)`` array.

    Enumeration order: the first coordinate varies fastest, so row ``i`` of a
    ``BernoulliVector`` support has bit ``j`` equal to ``(i >> j) & 1``.
    """
    if not family.discrete:
        raise InvalidInputError(f"{family} has a continuous support")
    if family.support_size > MAX_SUPPORT:
        raise SupportTooLargeError(f"{family} has {family.support_size} states, more than {MAX_SUPPORT}")
    if isinstance(family, BernoulliVector):
        codes = np.arange(2**family.n)
        return ((codes[:, None] >> np.arange(family.n)) & 1).astype(np.float64)
    rows = [tuple(reversed(t)) for t in itertools.product(range(family.k), repeat=family.sites)]
    return np.array(rows, dtype=np.int64).reshape(-1, family.sites)


def value_index(family, v):
    """Inverse of :func:`support`: integer code of each value."""
    v = _value(family, v)
    base = 2 if isinstance(family, BernoulliVector) else family.k
    if not family.discrete:
        raise InvalidInputError(f"{family} has a continuous support")
    weights = base ** np.arange(family.value_dim)
    return (np.asarray(v).astype(np.int64) * weights).sum(axis=-1)
