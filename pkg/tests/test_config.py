import pytest

from symvae import config
from symvae.errors import ConfigurationError

MINIMAL = """
seed = 3
[model]
x = "bernoulli:2"
[data]
d = 2
"""


def test_minimal_config_fills_defaults():
    cfg = config.loads(MINIMAL)
    assert cfg.seed == 3 and cfg.out == "run"
    assert cfg.scenario.variant == "unsupervised" and cfg.scenario.prior == "learned"
    assert cfg.train == config.TrainSection()
    assert cfg.model.hidden == [64, 64] and cfg.model.z == "categorical:4x1"
    assert cfg.chain.burn_in == 1000


def test_negative_alpha_names_alpha():
    with pytest.raises(ConfigurationError, match=r"^alpha"):
        config.loads(MINIMAL + "[train]\nalpha = -1\n")


def test_round_trip_is_identical():
    cfg = config.loads(MINIMAL + '[train]\nalpha = 0.25\nsteps = 7\n[scenario]\nvariant = "marginals"\n')
    text = cfg.to_toml()
    again = config.loads(text)
    assert again == cfg
    assert again.to_toml() == text


def test_shipped_configs_load():
    import pathlib
    for path in sorted(pathlib.Path(__file__).resolve().parents[1].joinpath("configs").glob("*.toml")):
        cfg = config.load_config(path)
        assert config.loads(cfg.to_toml()) == cfg


@pytest.mark.parametrize("text,match", [
    ("colour = 1\n" + MINIMAL, "unknown top-level"),
    (MINIMAL.replace("d = 2", "d = 2\nwidth = 3"), r"unknown key\(s\) in \[data\]: width"),
    ("out = 'x'\n", "seed"),
    ("seed = -1\n", "seed"),
    (MINIMAL + "[train]\nsteps = 1.5\n", "train.steps"),
    (MINIMAL + "[scenario]\nunlabelled = 1\n", "scenario.unlabelled"),
    (MINIMAL.replace('"bernoulli:2"', '"gaussian:3"'), "model.x"),
    (MINIMAL + "[scenario]\nvariant = 'triple'\n", "model.s"),
])
def test_rejections_name_the_field(text, match):
    with pytest.raises(ConfigurationError, match=match):
        config.loads(text)


def test_parse_error_reports_line_and_column():
    with pytest.raises(ConfigurationError, match="line 3, column") as err:
        config.loads("seed = 1\n[train]\nsteps = = 2\n")
    assert "parse error" in str(err.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        config.load_config(tmp_path / "absent.toml")
