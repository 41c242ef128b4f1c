"""Run orchestration and the ``symvae`` command line."""
import argparse
import dataclasses
import os
import sys

import numpy as np

from . import chain as ch
from . import config as cfgmod
from . import datasets
from . import efcore as ef
from . import equilibrium as eq
from . import models as mdl
from . import persist
from . import rng as rngmod
from . import tabular_oracle as to
from .errors import ConfigurationError, SymVAEError

METRICS_HEADER = eq.METRIC_FIELDS
TABULAR_LIMIT = 4096


# --- models and data from a config ---------------------------------------------------

def build_models(cfg):
    m, sc = cfg.model, cfg.scenario
    rng = rngmod.stream(cfg.seed, "init")
    hidden = tuple(m.hidden)
    if sc.variant == "triple":
        return mdl.build_triple(m.x, m.s, m.z, hidden, rng)
    if sc.variant == "hierarchical":
        return mdl.build_hierarchical(m.x, m.layers, hidden, rng, ladder=m.ladder,
                                      feature_dim=m.feature_dim, class_count=m.class_count or None)
    prior = "implicit" if sc.variant == "marginals" else sc.prior
    return mdl.build_pair(m.x, m.z, hidden, rng, prior=prior)


def _label_values(family, labels):
    if isinstance(family, ef.Categorical) and family.sites == 1:
        if labels.max(initial=0) >= family.k:
            raise ConfigurationError(f"labels need {labels.max() + 1} categories, {family} has {family.k}")
        return labels[:, None].astype(np.int64)
    if isinstance(family, ef.BernoulliVector):
        if labels.max(initial=0) >= 2**family.n:
            raise ConfigurationError(f"labels do not fit into {family}")
        return ((labels[:, None] >> np.arange(family.n)) & 1).astype(np.float64)
    raise ConfigurationError(f"cannot encode class labels as {family}")


def load_dataset(cfg):
    """``(train_store, holdout_store)`` dicts with keys ``x`` and ``label`` or ``s``."""
    d = cfg.data
    rng = rngmod.stream(d.seed, "dataset")
    if d.kind == "mixture":
        store = datasets.synth_mixture(dataclasses.asdict(d), d.n, rng)
    elif d.kind == "grid":
        store = datasets.synth_grid(dataclasses.asdict(d), d.n, rng)
    else:
        xf = ef.parse_family(cfg.model.x)
        x = datasets.load_idx(d.images, d.threshold, binarize=isinstance(xf, ef.BernoulliVector))
        store = {"x": x[:d.n]}
        if d.label_file:
            store["label"] = datasets.load_idx(d.label_file)[:d.n]
    n = len(store["x"])
    n_hold = int(round(d.holdout * n))
    train = {k: v[:n - n_hold] for k, v in store.items()}
    hold = {k: v[n - n_hold:] for k, v in store.items()}
    return train, hold


def build_streams(cfg, models, train):
    sc, d = cfg.scenario, cfg.data
    x = train["x"]
    n = len(x)
    n_lab = int(round(d.labelled_fraction * n))
    labels = train.get("label")
    v = sc.variant
    if v == "triple":
        if "s" not in train:
            raise ConfigurationError("the triple game needs paired (x, s) data (data.kind = \"grid\")")
        return eq.EmpiricalData({"xs": {"x": x, "s": train["s"]}})
    if v in ("marginals", "semi_supervised") or (v == "unsupervised" and sc.prior == "implicit"):
        if labels is None:
            raise ConfigurationError(f"scenario {v!r} needs labelled data for the z stream")
        z = _label_values(models.variables["z"], labels)
        perm = rngmod.stream(d.seed, "z-stream").permutation(n)
        if v == "semi_supervised":
            return eq.EmpiricalData({"xz": {"x": x[:n_lab], "z": z[:n_lab]},
                                     "x": {"x": x[n_lab:]}, "z": {"z": z[perm]}})
        return eq.EmpiricalData({"x": {"x": x}, "z": {"z": z[perm]}})
    if v == "hierarchical" and cfg.model.class_count:
        if labels is None:
            raise ConfigurationError("class-split models need labelled data")
        streams = {"labelled": {"x": x[:n_lab], "c": labels[:n_lab, None].astype(np.int64)}}
        if sc.unlabelled:
            streams["x"] = {"x": x[n_lab:] if n_lab < n else x}
        return eq.EmpiricalData(streams)
    return eq.EmpiricalData({"x": {"x": x}})


def _tabular_pair_ok(models):
    if models.kind != "pair":
        return False
    xf, zf = models.variables["x"], models.variables["z"]
    return xf.discrete and zf.discrete and xf.support_size * zf.support_size <= TABULAR_LIMIT


def make_evaluator(cfg, models, train, hold, extras):
    """Evaluator for :func:`equilibrium.train`; also records consistency details into ``extras``."""
    v = cfg.scenario.variant
    if _tabular_pair_ok(models):
        x_rows = train["x"]

        def evaluate(m):
            diag = to.pair_consistency(m, x_rows)
            extras.setdefault("trajectory", []).append(diag)
            return {"kl_fwd": diag["kl_fwd"], "kl_rev": diag["kl_rev"]}
        return evaluate
    if v == "hierarchical" and cfg.model.class_count and "label" in hold and len(hold["x"]):
        def evaluate(m):
            return {"accuracy": class_accuracy(m, hold["x"], hold["label"])}
        return evaluate
    if v == "triple" and len(hold["x"]):
        rows = min(len(hold["x"]), 200)

        def evaluate(m):
            r = rngmod.stream(cfg.seed, "eval-chain")
            return {"accuracy": segmentation_accuracy(m, hold["x"][:rows], hold["s"][:rows], 0.0, 20, 20, r)}
        return evaluate
    return None


def class_accuracy(models, x, labels):
    q_c = models.conditional("q_c")
    pred = ef.mode(q_c.family, models.eta(q_c, {"x": x}))[:, 0]
    return float(np.mean(pred == labels))


def segmentation_accuracy(models, x, s, mask_fraction, burn_in, n_samples, rng):
    """Label accuracy of completed segmentations with a random fraction of ``x`` masked."""
    mask = rng.random(x.shape) >= mask_fraction
    res = ch.complete_partial(models, ch.PartialObservation({"x": x}, {"x": mask}), burn_in, n_samples, rng)
    return float(np.mean(res.decisions["s"] == s))


def label_chance(s):
    """Accuracy of always answering the most frequent label."""
    return float(np.bincount(np.asarray(s).ravel()).max() / np.asarray(s).size)


# --- run -------------------------------------------------------------------------------

def _prepare_out(path):
    try:
        os.makedirs(path, exist_ok=True)
        probe = os.path.join(path, ".write-test")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as e:
        raise ConfigurationError(f"output directory {path} is not writable: {e.strerror}") from None


def train_models(cfg, out=None):
    """Build data and models, train; returns ``(models, rows, extras, train, hold)``."""
    models = build_models(cfg)
    train_store, hold = load_dataset(cfg)
    data = build_streams(cfg, models, train_store)
    extras = {}
    evaluator = make_evaluator(cfg, models, train_store, hold, extras)
    t = cfg.train
    tc = eq.TrainConfig(steps=t.steps, batch_size=t.batch_size, alpha=t.alpha, n_mc=t.n_mc,
                        eval_every=t.eval_every, mode=t.mode, method=t.method, gradient=t.gradient,
                        seed=cfg.seed)
    scenario = eq.Scenario(cfg.scenario.variant, prior=cfg.scenario.prior,
                           labelled_weight=cfg.scenario.labelled_weight, unlabelled=cfg.scenario.unlabelled,
                           gibbs_sweeps=cfg.scenario.gibbs_sweeps)

    def checkpoint(step, state):
        if out is None or step == 0:
            return
        if step == t.steps or (t.checkpoint_every and step % t.checkpoint_every == 0):
            persist.save_checkpoint(os.path.join(out, f"checkpoint_{step}.bin"), state.models)

    models, rows = eq.train(scenario, models, data, tc, evaluator=evaluator, callback=checkpoint)
    return models, rows, extras, train_store, hold


def _report(cfg, rows, extras, models, hold):
    lines = [f"scenario = {cfg.scenario.variant}", f"method = {cfg.train.method}",
             f"steps = {cfg.train.steps}", f"seed = {cfg.seed}"]
    if rows:
        last = max(r["step"] for r in rows)
        for r in rows:
            if r["step"] == last:
                lines.append(f"final utility {r['player']} = {r['utility']:.6g}")
    traj = extras.get("trajectory")
    if traj:
        steps = sorted({r["step"] for r in rows})
        pairs = " ".join(f"{s}:{d['kl_rev']:.6g}" for s, d in zip(steps, traj))
        lines.append(f"consistency kl_rev trajectory = {pairs}")
        lines.append(f"kl_rev initial = {traj[0]['kl_rev']:.6g}")
        lines.append(f"kl_rev final = {traj[-1]['kl_rev']:.6g}")
        lines.append(f"kl_rev final/initial = {traj[-1]['kl_rev'] / max(traj[0]['kl_rev'], 1e-300):.6g}")
        lines.append(f"mixture tv initial = {traj[0]['tv_mixture']:.6g}")
        lines.append(f"mixture tv final = {traj[-1]['tv_mixture']:.6g}")
    accs = [r["accuracy"] for r in rows if r.get("accuracy") is not None]
    if accs:
        lines.append(f"accuracy final = {accs[-1]:.6g}")
    if cfg.scenario.variant == "triple" and len(hold["x"]):
        c = cfg.chain
        r = rngmod.stream(cfg.seed, "report-chain")
        full = segmentation_accuracy(models, hold["x"], hold["s"], 0.0, c.burn_in, c.n_samples, r)
        masked = segmentation_accuracy(models, hold["x"], hold["s"], c.mask_fraction, c.burn_in, c.n_samples, r)
        lines.append(f"segmentation accuracy complete input = {full:.6g}")
        lines.append(f"segmentation accuracy {c.mask_fraction:g} masked = {masked:.6g}")
        lines.append(f"label chance = {label_chance(hold['s']):.6g}")
    return "\n".join(lines) + "\n"


def run(cfg):
    """Train per ``cfg`` and write metrics.csv, checkpoint_<step>.bin, final.bin and report.txt."""
    out = cfg.out
    _prepare_out(out)
    models, rows, extras, _, hold = train_models(cfg, out)
    persist.write_csv(os.path.join(out, "metrics.csv"), METRICS_HEADER, rows)
    if cfg.train.steps == 0:
        persist.save_checkpoint(os.path.join(out, "checkpoint_0.bin"), models)
    persist.save_checkpoint(os.path.join(out, "final.bin"), models)
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as f:
        f.write(_report(cfg, rows, extras, models, hold))
    return 0


# --- chain commands --------------------------------------------------------------------

def _models_for(cfg, checkpoint):
    if checkpoint:
        return persist.load_checkpoint(checkpoint, build_models(cfg))
    models, *_ = train_models(cfg)
    return models


def _flip_rows(name, states, block=100):
    rows = []
    flips = np.any(np.atleast_2d(states[1:] != states[:-1]).reshape(len(states) - 1, -1), axis=1)
    for start in range(0, len(flips), block):
        rows.append({"sweep": start + block if start + block < len(flips) else len(flips),
                     "variable": name, "flip_rate": float(flips[start:start + block].mean())})
    return rows


def sample_limiting_command(cfg, checkpoint=None):
    _prepare_out(cfg.out)
    models = _models_for(cfg, checkpoint)
    if models.kind != "pair":
        raise ConfigurationError("sample-limiting needs pair models")
    c = cfg.chain
    rng = rngmod.stream(cfg.seed, "limiting")
    lines = []
    if _tabular_pair_ok(models):
        pair = ch.tabulate(models)
        samples, est = ch.sample_limiting(pair, c.burn_in, c.n_samples, rng, c.thin)
        exact = ch.stationary_distribution(ch.tabular_kernel(pair)[0])
        lines.append(f"tv(m_x empirical, stationary) = {to.tv(est.m_x, exact):.6g}")
        xs = ef.support(models.variables["x"])[samples["x"]]
        zs = ef.support(models.variables["z"])[samples["z"]]
    else:
        samples, est = ch.sample_limiting(models, c.burn_in, c.n_samples, rng, c.thin)
        xs, zs = samples["x"], samples["z"]
    persist.save_arrays(os.path.join(cfg.out, "samples.bin"), {"x": xs, "z": zs})
    rows = _flip_rows("x", xs) + _flip_rows("z", zs) if len(xs) > 1 else []
    persist.write_csv(os.path.join(cfg.out, "chain_diagnostics.csv"), ("sweep", "variable", "flip_rate"), rows)
    lines.append(f"samples = {len(xs)} burn_in = {c.burn_in}")
    return lines


def complete_command(cfg, checkpoint=None):
    _prepare_out(cfg.out)
    models = _models_for(cfg, checkpoint)
    _, hold = load_dataset(cfg)
    if not len(hold["x"]):
        raise ConfigurationError("complete needs held-out data (data.holdout > 0)")
    c = cfg.chain
    rng = rngmod.stream(cfg.seed, "complete")
    mask = rng.random(hold["x"].shape) >= c.mask_fraction
    res = ch.complete_partial(models, ch.PartialObservation({"x": hold["x"]}, {"x": mask}),
                              c.burn_in, c.n_samples, rng)
    arrays = {f"marginal.{k}": v for k, v in res.marginals.items()}
    arrays.update({f"decision.{k}": np.asarray(v, dtype=np.float64) for k, v in res.decisions.items()})
    arrays["mask.x"] = mask.astype(np.float64)
    persist.save_arrays(os.path.join(cfg.out, "completion.bin"), arrays)
    rows = [{"sweep": c.burn_in + c.n_samples, "variable": k, "flip_rate": v} for k, v in res.flip_rates.items()]
    persist.write_csv(os.path.join(cfg.out, "chain_diagnostics.csv"), ("sweep", "variable", "flip_rate"), rows)
    lines = [f"rows = {len(hold['x'])} mask_fraction = {c.mask_fraction:g}"]
    if "s" in hold and "s" in res.decisions:
        lines.append(f"segmentation accuracy = {float(np.mean(res.decisions['s'] == hold['s'])):.6g}")
        lines.append(f"label chance = {label_chance(hold['s']):.6g}")
    return lines


# --- verification commands -------------------------------------------------------------

def verify_theorem1(seed, n_specs=3, n_starts=10, size=16, tol=1e-4):
    """Multi-start equilibrium solves; returns ``(ok, lines)``."""
    rng = rngmod.stream(seed, "theorem1")
    lines, ok = [], True
    for i in range(n_specs):
        spec = to.random_spec(rng, size, size, 3, 3)
        pairs = []
        gap = 0.0
        for _ in range(n_starts):
            init = to.TabularParams(rng.standard_normal(3), rng.standard_normal(3))
            res = to.solve_equilibrium(spec, init)
            pairs.append(to.realize(spec, res.params))
            gap = max(gap, *to.moment_gaps(spec, res.params))
        spread = max(to.tv(a[0], b[0]) + to.tv(a[1], b[1]) for a in pairs for b in pairs)
        ok &= spread < tol and gap < 1e-6
        lines.append(f"spec {i}: max pairwise tv = {spread:.3e}, max moment gap = {gap:.3e}")
    return ok, lines


def verify_prop1(seed, n=20, tol=1e-12):
    rng = rngmod.stream(seed, "prop1")
    worst = 0.0
    for _ in range(n):
        spec = to.random_spec(rng, 4, 3, 3, 3)
        q = rng.dirichlet(np.ones(spec.nx * spec.nz))
        worst = max(worst, to.prop1_residual(spec, q, rng.standard_normal(3)))
    return worst < tol, [f"max residual over {n} instances = {worst:.3e}"]


def verify_ws(cfg, steps=1000):
    models = build_models(cfg)
    if models.kind != "pair":
        raise ConfigurationError("verify-ws needs pair models with the unsupervised scenario")
    train_store, _ = load_dataset(cfg)
    data = eq.EmpiricalData({"x": {"x": train_store["x"]}})
    scenario = eq.Scenario("unsupervised", prior=cfg.scenario.prior)
    a = eq.make_state(models.copy(), scenario, cfg.train.alpha, cfg.seed)
    b = eq.make_state(models.copy(), scenario, cfg.train.alpha, cfg.seed)
    for _ in range(steps):
        eq.nash_step(a, data.sample_batch(a.rngs["data"], cfg.train.batch_size))
        eq.wake_sleep_step(b, data.sample_batch(b.rngs["data"], cfg.train.batch_size))
    same = all(np.array_equal(a.models.player_params(p), b.models.player_params(p)) for p in ("p", "q"))
    return same, [f"{steps} steps, parameters bitwise identical: {same}"]


# --- CLI ---------------------------------------------------------------------------------

def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="TOML run configuration")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the configured seed")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    return p


def make_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="symvae", parents=[common],
                                     description="Symmetric equilibrium learning of encoder/decoder pairs.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train per the config and write run artifacts")
    for name, what in (("sample-limiting", "sample the limiting distribution of the pair chain"),
                       ("complete", "complete held-out data with masked inputs")):
        sp = sub.add_parser(name, parents=[common], help=what)
        sp.add_argument("--checkpoint", help="load parameters instead of training")
    sp = sub.add_parser("verify-theorem1", parents=[common], help="multi-start uniqueness check")
    sp.add_argument("--specs", type=int, default=3)
    sp.add_argument("--starts", type=int, default=10)
    sp.add_argument("--size", type=int, default=16)
    sub.add_parser("verify-prop1", parents=[common], help="decoder-gradient identity on random instances")
    sp = sub.add_parser("verify-ws", parents=[common], help="wake-sleep vs parallel equilibrium updates")
    sp.add_argument("--steps", type=int, default=1000)
    return parser


def _config(args, required=True):
    path = getattr(args, "config", None)
    if path is None:
        if required:
            raise ConfigurationError("--config is required for this command")
        cfg = cfgmod.from_dict({"seed": 0})
    else:
        cfg = cfgmod.load_config(path)
    if getattr(args, "seed", None) is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigurationError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    return cfg


def _origin(exc):
    tb = exc.__traceback__
    name = "symvae"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("symvae"):
            name = mod
        tb = tb.tb_next
    return name


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        cmd = args.command
        if cmd == "train":
            return run(_config(args))
        if cmd == "sample-limiting":
            lines = sample_limiting_command(_config(args), args.checkpoint)
            ok = True
        elif cmd == "complete":
            lines = complete_command(_config(args), args.checkpoint)
            ok = True
        elif cmd == "verify-theorem1":
            ok, lines = verify_theorem1(_config(args, required=False).seed, args.specs, args.starts, args.size)
        elif cmd == "verify-prop1":
            ok, lines = verify_prop1(_config(args, required=False).seed)
        else:
            ok, lines = verify_ws(_config(args, required=False), args.steps)
        for line in lines:
            print(line)
        print("PASS" if ok else "FAIL")
        return 0 if ok else 1
    except (SymVAEError, OSError) as e:
        print(f"symvae: error in {_origin(e)}: {e}", file=sys.stderr)
        return 2
