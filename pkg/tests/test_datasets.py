import struct

import numpy as np
import pytest

from symvae import datasets as ds
from symvae.errors import FormatError, InvalidParameterError


def _idx_images(path, pixels):
    a = np.asarray(pixels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, *a.shape))
        f.write(a.tobytes())


def test_hand_built_idx_images(tmp_path):
    path = tmp_path / "img.idx"
    # two 2x2 images, bytes written by hand
    path.write_bytes(bytes.fromhex("00000803" "00000002" "00000002" "00000002") + bytes([0, 200, 128, 127, 255, 1, 90, 140]))
    bits = ds.load_idx(path)
    np.testing.assert_array_equal(bits, [[0, 1, 1, 0], [1, 0, 0, 1]])
    np.testing.assert_allclose(ds.load_idx(path, binarize=False)[1], np.array([255, 1, 90, 140]) / 255)


def test_idx_labels_round_trip(tmp_path):
    path = tmp_path / "lab.idx"
    ds.write_idx(path, np.array([3, 1, 4, 1, 5]))
    assert ds.load_idx(path).tolist() == [3, 1, 4, 1, 5]
    assert path.read_bytes()[:8] == bytes.fromhex("0000080100000005")


def test_idx_truncated_names_lengths(tmp_path):
    path = tmp_path / "short.idx"
    _idx_images(path, np.zeros((2, 2, 2)))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(FormatError, match="expected 8 bytes, found 5") as err:
        ds.load_idx(path)
    assert err.value.offset == 16 + 5


@pytest.mark.parametrize("blob,offset", [(b"\x00\x00", 0), (bytes.fromhex("00000904") + bytes(12), 0),
                                         (bytes.fromhex("00000803" "00000001"), 8)])
def test_idx_header_errors(tmp_path, blob, offset):
    path = tmp_path / "bad.idx"
    path.write_bytes(blob)
    with pytest.raises(FormatError) as err:
        ds.load_idx(path)
    assert err.value.offset == offset


def test_idx_dimension_overflow(tmp_path):
    path = tmp_path / "huge.idx"
    path.write_bytes(struct.pack(">IIII", 0x803, 2**20, 2**10, 2**10))
    with pytest.raises(FormatError, match="overflow") as err:
        ds.load_idx(path)
    assert err.value.offset == 12


def test_threshold_one_gives_zero_bits(tmp_path):
    path = tmp_path / "img.idx"
    _idx_images(path, np.random.default_rng(0).integers(0, 256, (3, 4, 4)))
    _idx_images(tmp_path / "max.idx", np.full((1, 2, 2), 255))
    assert not ds.load_idx(path, threshold=1.0).any()
    assert not ds.load_idx(tmp_path / "max.idx", threshold=1.0).any()
    with pytest.raises(InvalidParameterError):
        ds.load_idx(path, threshold=0.0)


def test_mixture_single_component():
    out = ds.synth_mixture({"k": 1, "d": 3}, 50, np.random.default_rng(1))
    assert not out["label"].any() and out["x"].shape == (50, 3)


@pytest.mark.parametrize("d", [6, 2])
def test_far_apart_means_are_perfectly_separable(d):
    rng = np.random.default_rng(2)
    out = ds.synth_mixture({"k": 4, "d": d, "separation": 20.0}, 10_000, rng)
    means = np.stack([out["x"][out["label"] == c].mean(axis=0) for c in range(4)])
    pred = np.argmin(((out["x"][:, None, :] - means[None]) ** 2).sum(-1), axis=1)
    assert (pred == out["label"]).all()


def test_mixture_deterministic_per_seed():
    p = {"k": 3, "d": 5, "family": "bernoulli", "flip": 0.1}
    a = ds.synth_mixture(p, 100, np.random.default_rng(3))
    b = ds.synth_mixture(p, 100, np.random.default_rng(3))
    assert a["x"].tobytes() == b["x"].tobytes() and a["label"].tobytes() == b["label"].tobytes()
    assert set(np.unique(a["x"])) <= {0.0, 1.0}


@pytest.mark.parametrize("params", [{"k": 0}, {"family": "poisson"}, {"family": "bernoulli", "flip": 0.7},
                                    {"sigma": 0.0}])
def test_mixture_rejects(params):
    with pytest.raises(InvalidParameterError):
        ds.synth_mixture(params, 10, np.random.default_rng(0))


def test_grid_noise_free_determines_labels():
    out = ds.synth_grid({"size": 4, "labels": 3, "block": 2, "noise": 0.0}, 200, np.random.default_rng(4))
    protos = np.linspace(-1, 1, 3)
    seg = np.argmin(np.abs(out["x"][..., None] - protos), axis=-1)
    assert (seg == out["s"]).all()
    blocks = out["s"].reshape(200, 2, 2, 2, 2)
    assert (blocks == blocks[:, :, :1, :, :1]).all()


def test_grid_single_label_is_constant():
    out = ds.synth_grid({"size": 2, "labels": 1, "block": 1}, 30, np.random.default_rng(5))
    assert not out["s"].any()


def test_grid_label_marginals_uniform():
    n = 10_000
    out = ds.synth_grid({"size": 4, "labels": 3, "block": 2}, n, np.random.default_rng(6))
    for k in range(3):
        freq = (out["s"] == k).mean(axis=0)
        # 4x4 grid of 2x2 blocks: each position is one independent cell draw per sample
        assert np.all(np.abs(freq - 1 / 3) <= 4 * np.sqrt((1 / 3) * (2 / 3) / n))


def test_grid_rejects_non_dividing_block():
    with pytest.raises(InvalidParameterError):
        ds.synth_grid({"size": 5, "block": 2}, 10, np.random.default_rng(0))
