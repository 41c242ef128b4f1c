"""Run configuration: TOML in, validated dataclasses out, canonical TOML back."""
from dataclasses import asdict, dataclass, field, fields
import math

import tomli
import tomli_w

from . import efcore as ef
from .errors import ConfigurationError, InvalidParameterError


@dataclass
class ScenarioConfig:
    variant: str = "unsupervised"
    prior: str = "learned"
    labelled_weight: float = 1.0
    unlabelled: bool = True
    gibbs_sweeps: int = 3


@dataclass
class ModelConfig:
    x: str = "bernoulli:4"
    z: str = "categorical:4x1"
    s: str = ""
    layers: list = field(default_factory=list)
    class_count: int = 0
    hidden: list = field(default_factory=lambda: [64, 64])
    ladder: bool = True
    feature_dim: int = 16


@dataclass
class TrainSection:
    steps: int = 1000
    batch_size: int = 32
    alpha: float = 0.01
    n_mc: int = 1
    mode: str = "parallel"
    method: str = "nash"
    gradient: str = "mc"
    eval_every: int = 100
    checkpoint_every: int = 0


@dataclass
class DatasetSource:
    kind: str = "mixture"
    n: int = 1000
    holdout: float = 0.2
    labelled_fraction: float = 1.0
    seed: int = 0
    k: int = 2
    d: int = 4
    separation: float = 6.0
    sigma: float = 1.0
    family: str = "bernoulli"
    flip: float = 0.05
    size: int = 4
    labels: int = 3
    block: int = 2
    noise: float = 0.3
    images: str = ""
    label_file: str = ""
    threshold: float = 0.5


@dataclass
class ChainSection:
    burn_in: int = 1000
    n_samples: int = 1000
    thin: int = 1
    mask_fraction: float = 0.25


@dataclass
class RunConfig:
    seed: int
    out: str = "run"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    data: DatasetSource = field(default_factory=DatasetSource)
    chain: ChainSection = field(default_factory=ChainSection)

    def to_dict(self):
        return asdict(self)

    def to_toml(self):
        """Canonical form: every field written, sections in a fixed order."""
        return tomli_w.dumps(self.to_dict())


SECTIONS = {"scenario": ScenarioConfig, "model": ModelConfig, "train": TrainSection,
            "data": DatasetSource, "chain": ChainSection}


def _coerce(where, name, value, default):
    kind = type(default)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where}{name}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where}{name}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where}{name}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{where}{name}: expected a string, got {value!r}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigurationError(f"{where}{name}: expected a list, got {value!r}")
        return list(value)
    return value


def _section(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"[{where}] must be a table")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kw = {k: _coerce(f"{where}.", k, v, getattr(defaults, k)) for k, v in raw.items()}
    return cls(**kw)


def from_dict(raw):
    if not isinstance(raw, dict):
        raise ConfigurationError("configuration must be a table")
    allowed = {"seed", "out", *SECTIONS}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown top-level key(s): {', '.join(unknown)}")
    if "seed" not in raw:
        raise ConfigurationError("seed: a seed is mandatory")
    seed = raw["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigurationError(f"seed: expected an unsigned 64-bit integer, got {seed!r}")
    out = _coerce("", "out", raw.get("out", "run"), "")
    parts = {name: _section(cls, raw.get(name, {}), name) for name, cls in SECTIONS.items()}
    cfg = RunConfig(seed=seed, out=out, **parts)
    validate(cfg)
    return cfg


def loads(text):
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigurationError(f"config parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return from_dict(raw)


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e.strerror}") from None
    return loads(text)


def _family(where, text):
    try:
        return ef.parse_family(text)
    except (InvalidParameterError, ValueError) as e:
        raise ConfigurationError(f"{where}: {e}") from None


def validate(cfg):
    sc, m, t, d, c = cfg.scenario, cfg.model, cfg.train, cfg.data, cfg.chain

    def need(ok, name, what):
        if not ok:
            raise ConfigurationError(f"{name}: {what}")

    need(sc.variant in ("marginals", "unsupervised", "semi_supervised", "hierarchical", "triple"),
         "scenario.variant", f"unknown variant {sc.variant!r}")
    need(sc.prior in ("learned", "fixed", "implicit"), "scenario.prior", f"unknown prior {sc.prior!r}")
    need(sc.labelled_weight >= 0, "scenario.labelled_weight", "must be >= 0")
    need(sc.gibbs_sweeps >= 1, "scenario.gibbs_sweeps", "must be >= 1")
    need(t.steps >= 0, "train.steps", "must be >= 0")
    need(t.batch_size >= 1, "train.batch_size", "must be >= 1")
    need(math.isfinite(t.alpha) and t.alpha > 0, "alpha", f"train.alpha must be a finite number > 0, got {t.alpha}")
    need(t.n_mc >= 1, "train.n_mc", "must be >= 1")
    need(t.mode in ("parallel", "sequential"), "train.mode", f"unknown mode {t.mode!r}")
    need(t.method in ("nash", "wake_sleep", "elbo"), "train.method", f"unknown method {t.method!r}")
    need(t.gradient in ("mc", "exact"), "train.gradient", f"unknown gradient mode {t.gradient!r}")
    need(t.eval_every >= 1, "train.eval_every", "must be >= 1")
    need(t.checkpoint_every >= 0, "train.checkpoint_every", "must be >= 0")
    need(all(isinstance(h, int) and h >= 1 for h in m.hidden), "model.hidden", "layer widths must be integers >= 1")
    need(m.feature_dim >= 1, "model.feature_dim", "must be >= 1")
    need(m.class_count >= 0, "model.class_count", "must be >= 0")
    xf = _family("model.x", m.x)
    if sc.variant == "hierarchical":
        need(len(m.layers) >= 1, "model.layers", "hierarchical models need at least one latent layer")
        for i, f in enumerate(m.layers):
            need(isinstance(f, str), f"model.layers[{i}]", "expected a family string")
            _family(f"model.layers[{i}]", f)
    else:
        _family("model.z", m.z)
    if sc.variant == "triple":
        need(bool(m.s), "model.s", "the triple game needs a family for s")
        _family("model.s", m.s)
    need(d.kind in ("mixture", "grid", "idx"), "data.kind", f"unknown dataset kind {d.kind!r}")
    need(d.n >= 1, "data.n", "must be >= 1")
    need(0.0 <= d.holdout < 1.0, "data.holdout", "must lie in [0, 1)")
    need(0.0 <= d.labelled_fraction <= 1.0, "data.labelled_fraction", "must lie in [0, 1]")
    need(0.0 < d.threshold < 1.0 or d.kind != "idx", "data.threshold", "must lie in (0, 1)")
    need(d.kind != "idx" or bool(d.images), "data.images", "an IDX image path is required")
    need(d.family in ("gaussian", "bernoulli"), "data.family", f"unknown family {d.family!r}")
    if d.kind == "mixture":
        need(xf.value_dim == d.d, "model.x", f"{xf} does not match data.d = {d.d}")
    if d.kind == "grid":
        need(xf.value_dim == d.size * d.size, "model.x", f"{xf} does not match a {d.size}x{d.size} grid")
    need(c.burn_in >= 0 and c.n_samples >= 1 and c.thin >= 1, "chain", "need burn_in >= 0, n_samples >= 1, thin >= 1")
    need(0.0 <= c.mask_fraction < 1.0, "chain.mask_fraction", "must lie in [0, 1)")
    return cfg
