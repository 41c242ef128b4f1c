"""Binary array container for checkpoints and sample dumps, plus CSV writers.

Layout: the 8-byte magic ``SYMVAE01``, then one segment per array
``[u32 name length | UTF-8 name | u32 rank | u64 dims... | f64 LE payload]``,
then the CRC32 (u32 LE) of everything before it.
"""
import csv
import io
import struct
import zlib

import numpy as np

from .errors import FormatError, InvalidInputError

MAGIC = b"SYMVAE01"


def pack_arrays(arrays):
    """Serialize an ordered mapping name -> array."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    for name, a in arrays.items():
        raw = name.encode("utf-8")
        a = np.asarray(a, dtype="<f8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        buf.write(np.ascontiguousarray(a).tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def unpack_arrays(blob):
    if len(blob) < len(MAGIC) + 4:
        raise FormatError(f"container too short ({len(blob)} bytes)", offset=0)
    if blob[:8] != MAGIC:
        raise FormatError("bad magic, not a SYMVAE01 container", offset=0)
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("CRC32 mismatch", offset=len(blob) - 4)
    out = {}
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise FormatError(f"truncated segment: need {n} bytes, {len(body) - pos} left", offset=pos)
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    while pos < len(body):
        (nlen,) = struct.unpack("<I", take(4))
        start = pos
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("segment name is not UTF-8", offset=start) from None
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)
        if name in out:
            raise FormatError(f"duplicate segment {name!r}", offset=start)
        out[name] = data.reshape(dims)
    return out


def save_arrays(path, arrays):
    with open(path, "wb") as f:
        f.write(pack_arrays(arrays))


def load_arrays(path):
    with open(path, "rb") as f:
        return unpack_arrays(f.read())


def checkpoint_arrays(models):
    """One ``<map>.layers`` and one ``<map>.params`` segment per distinct map."""
    out = {}
    for name, m in models.named_maps():
        out[f"{name}.layers"] = np.asarray(m.layer_sizes, dtype=np.float64)
        out[f"{name}.params"] = m.params
    return out


def save_checkpoint(path, models):
    save_arrays(path, checkpoint_arrays(models))


def load_checkpoint(path, models):
    """Load parameters into ``models`` in place (architecture must match)."""
    arrays = load_arrays(path)
    for name, m in models.named_maps():
        if f"{name}.params" not in arrays:
            raise InvalidInputError(f"checkpoint has no segment for map {name!r}")
        layers = tuple(int(v) for v in arrays[f"{name}.layers"])
        if layers != m.layer_sizes:
            raise InvalidInputError(f"map {name!r}: checkpoint layers {layers} != model {m.layer_sizes}")
        m.params[...] = arrays[f"{name}.params"]
    return models


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(h)) for h in header])
