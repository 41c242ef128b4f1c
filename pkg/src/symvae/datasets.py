"""Data sources: synthetic mixtures, synthetic label grids, and IDX image files."""
import struct

import numpy as np

from .errors import FormatError, InvalidParameterError

IDX_LABELS = 0x00000801
IDX_IMAGES = 0x00000803


def synth_mixture(params, n, rng):
    """``n`` labelled draws from a ``k``-component mixture.

    ``params``: ``k``, ``d``, ``separation`` (distance between component
    means in units of ``sigma``), ``sigma`` (default 1) and ``family``
    (``"gaussian"``, the default, or ``"bernoulli"``). For Bernoulli data each
    component is a random bit prototype and ``flip`` is the per-bit noise.
    Returns ``{"x": (n, d), "label": (n,)}``.
    """
    k, d = int(params.get("k", 2)), int(params.get("d", 2))
    family = params.get("family", "gaussian")
    if k < 1 or d < 1 or n < 0:
        raise InvalidParameterError("synth_mixture needs k >= 1, d >= 1, n >= 0")
    labels = rng.integers(0, k, size=n)
    if family == "bernoulli":
        flip = float(params.get("flip", 0.05))
        if not 0.0 <= flip <= 0.5:
            raise InvalidParameterError(f"flip must lie in [0, 0.5], got {flip}")
        protos = (rng.random((k, d)) < 0.5).astype(np.float64)
        noise = rng.random((n, d)) < flip
        x = np.abs(protos[labels] - noise)
        return {"x": x, "label": labels}
    if family != "gaussian":
        raise InvalidParameterError(f"unknown mixture family {family!r}")
    sigma = float(params.get("sigma", 1.0))
    sep = float(params.get("separation", 6.0))
    if sigma <= 0 or sep < 0:
        raise InvalidParameterError("sigma must be > 0 and separation >= 0")
    means = _spread_means(k, d, sep * sigma, rng)
    x = means[labels] + sigma * rng.standard_normal((n, d))
    return {"x": x, "label": labels}


def _spread_means(k, d, dist, rng):
    if k == 1:
        return np.zeros((1, d))
    if d >= k:
        # scaled simplex corners: every pair exactly ``dist`` apart
        return np.eye(k, d) * dist / np.sqrt(2.0)
    m = rng.standard_normal((k, d))
    gaps = np.linalg.norm(m[:, None] - m[None, :], axis=-1)
    return m * dist / gaps[np.triu_indices(k, 1)].min()


def synth_grid(params, n, rng):
    """``n`` paired images and label fields for the three-player toy.

    ``params``: ``size`` (grid side), ``labels`` (K), ``block`` (side of the
    constant-label cells), ``noise`` (pixel std). Each cell takes a uniform
    label; pixel value = label prototype (evenly spaced in [-1, 1]) + noise.
    Returns ``{"x": (n, size*size) floats, "s": (n, size*size) ints}``.
    """
    g, k = int(params.get("size", 4)), int(params.get("labels", 3))
    b = int(params.get("block", 2))
    noise = float(params.get("noise", 0.3))
    if g < 1 or k < 1 or b < 1 or g % b or noise < 0 or n < 0:
        raise InvalidParameterError("synth_grid needs size, labels, block >= 1, block | size, noise >= 0")
    cells = rng.integers(0, k, size=(n, g // b, g // b))
    s = np.repeat(np.repeat(cells, b, axis=1), b, axis=2).reshape(n, g * g)
    protos = np.linspace(-1.0, 1.0, k) if k > 1 else np.zeros(1)
    x = protos[s] + noise * rng.standard_normal(s.shape)
    return {"x": x, "s": s.astype(np.int64)}


def load_idx(path, threshold=0.5, binarize=True):
    """Read an IDX label (``0x801``) or image (``0x803``) file.

    Images are flattened row-major. With ``binarize`` the bit is
    ``pixel > threshold * 255``; otherwise pixels are scaled to ``[0, 1]``.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise FormatError(f"file too short for an IDX header: {len(raw)} bytes", offset=0)
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_LABELS, IDX_IMAGES):
        raise FormatError(f"bad IDX magic 0x{magic:08x}", offset=0)
    ndim = 1 if magic == IDX_LABELS else 3
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"header needs {head} bytes, file has {len(raw)}", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = 1
    for i, dim in enumerate(dims):
        count *= dim
        if count > 2**31:
            raise FormatError(f"dimension overflow: {dims}", offset=4 + 4 * i)
    if len(raw) - head < count:
        raise FormatError(f"truncated payload: expected {count} bytes, found {len(raw) - head}",
                          offset=len(raw))
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=head)
    if magic == IDX_LABELS:
        return data.astype(np.int64)
    if not 0.0 < threshold <= 1.0 and binarize:
        raise InvalidParameterError(f"threshold must lie in (0, 1], got {threshold}")
    img = data.reshape(dims[0], dims[1] * dims[2])
    if binarize:
        return (img > threshold * 255.0).astype(np.float64)
    return img.astype(np.float64) / 255.0


def write_idx(path, array):
    """Write ``uint8`` labels (1-D) or images (3-D) in IDX layout."""
    a = np.ascontiguousarray(array, dtype=np.uint8)
    magic = {1: IDX_LABELS, 3: IDX_IMAGES}.get(a.ndim)
    if magic is None:
        raise InvalidParameterError("IDX arrays must be 1-D labels or 3-D images")
    with open(path, "wb") as f:
        f.write(struct.pack(f">I{a.ndim}I", magic, *a.shape))
        f.write(a.tobytes())
