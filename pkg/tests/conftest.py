import numpy as np
import pytest

from symvae import models as mdl

# (layer_sizes, adapter) for every standalone map shape the tests build
MAP_SHAPES = [
    ((3, 4), None),
    ((0, 5), None),
    ((2, 6, 3), None),
    ((4, 8, 8, 2), None),
    ((5, 7, 4), "gaussian"),
    ((6, 16, 16, 6), None),
]


def all_test_models():
    """One instance of each model family the suite trains or samples."""
    rng = np.random.default_rng(0)
    return {
        "pair-bernoulli": mdl.build_pair("bernoulli:3", "categorical:3", (5,), rng),
        "pair-gaussian": mdl.build_pair("gaussian:2", "bernoulli:2", (6, 6), rng),
        "pair-implicit": mdl.build_pair("bernoulli:4", "categorical:4x1", (8,), rng, prior="implicit"),
        "hier-ladder": mdl.build_hierarchical("bernoulli:3", ["bernoulli:2", "bernoulli:2"], (4,), rng,
                                              feature_dim=3, class_count=2),
        "hier-plain": mdl.build_hierarchical("gaussian:3", ["bernoulli:2", "categorical:3"], (5,), rng,
                                             ladder=False),
        "triple": mdl.build_triple("gaussian:4", "categorical:3x4", "bernoulli:2", (6,), rng, zero_cross=False),
    }


def randomize(models, rng, scale=1.0):
    for player in models.players:
        for m in models.player_maps(player):
            m.params[:] = scale * rng.standard_normal(m.params.size)
    return models


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
