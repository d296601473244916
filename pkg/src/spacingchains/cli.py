"""Command-line driver: ``spacingchains <command> --config run.yaml``.

A YAML config has sections ``model``, ``grid`` and ``experiment`` plus the
top-level keys ``seed`` and ``output_dir``. Every key has a default and
unknown keys are rejected. ``--set section.key=value`` overrides single
keys; overrides are recorded in the metadata sidecar.
"""

from __future__ import annotations

import argparse
import copy
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from .chains import (GridSampler, HarmonicSampler, IIDSampler, RenewalLaw, sample_gibbs_path,
                     sample_harmonic_path, sample_renewal_path)
from .correlations import (fit_covariance_decay, growth_rate_alpha, second_moment_ergodic,
                           second_moment_palm)
from .errors import ConfigError, DomainError, SpacingError
from .io import write_csv, write_meta
from .models import harmonic_derive, potential_from_config
from .regeneration import embedded_walk_stats, find_minorisation, simulate_split, tau_tail_diagnostics
from .renewal import blackwell_gap, estimate_renewal, fit_decay
from .rng import stream
from .transfer import (GridSpec, exp_moment_growth_bound, gibbs_model, harmonic_model,
                       mean_spacing, solve_pressure)

# replica blocks use stream ids 0, 1, ...; the long ergodic path gets its own
_ERGODIC_STREAM = 1 << 40

COMMANDS = ("eigen", "sample", "regen", "renewal", "cov", "pressure", "alpha")

DEFAULTS = {
    "model": {
        "kind": "gibbs",  # gibbs | harmonic | renewal
        "potential": {"kind": "hard_rod", "r_hc": 1.0},
        "beta": 1.0,
        "p": 1.0,
        "k1": 1.0,
        "k2": 0.3,
        "a": 1.0,
        "law": "shifted_exponential",
        "law_params": [1.0, 1.0],
    },
    "grid": {"n_nodes": 256, "order": 16, "z_max": None, "harmonic_width": 8.0},
    "experiment": {
        "n": 1000,
        "init": "stationary",
        "n_cycles": 10000,
        "max_r": 4,
        "lambda_floor": 0.01,
        "q": 0.5,
        "t_start": 2.0,
        "t_stop": 30.0,
        "t_step": 0.5,
        "n_replicas": 1024,
        "A": [0.0, 1.0],
        "B": [0.0, 1.0],
        "shifts": [2.0, 5.0, 10.0, 20.0],
        "path_length": 200000,
        "estimators": ["palm-renewal", "ergodic-average"],
        "target_intensity": 0.5,
        "deltas": [0.1, 0.25],
        "alpha_n": 200,
    },
    "seed": 0,
    "output_dir": "out",
}

# free-form mappings validated by their own builders
_OPAQUE = {("model", "potential")}


def _key_lines(text):
    """Map dotted key paths to 1-based line numbers in the YAML source."""
    lines = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = prefix + (str(k.value),)
                lines[".".join(path)] = k.start_mark.line + 1
                walk(v, path)

    if root is not None:
        walk(root, ())
    return lines


def _merge(base, update, path, lines):
    for key, val in update.items():
        dotted = ".".join(path + (str(key),))
        if key not in base:
            where = f" (line {lines[dotted]})" if dotted in lines else ""
            raise ConfigError(f"unknown config key '{dotted}'{where}")
        default = base[key]
        if isinstance(default, dict) and path + (key,) not in _OPAQUE:
            if not isinstance(val, dict):
                raise ConfigError(f"config key '{dotted}' must be a mapping")
            _merge(default, val, path + (key,), lines)
        else:
            _check_type(dotted, default, val, lines)
            base[key] = val


def _check_type(dotted, default, val, lines):
    where = f" (line {lines[dotted]})" if dotted in lines else ""
    if default is None or val is None:
        return
    if isinstance(default, bool) != isinstance(val, bool):
        raise ConfigError(f"config key '{dotted}' has the wrong type{where}")
    if isinstance(default, (int, float)) and not isinstance(default, bool):
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ConfigError(f"config key '{dotted}' must be numeric{where}")
        if isinstance(default, int) and not isinstance(default, bool) and not isinstance(val, int):
            if float(val) != int(val):
                raise ConfigError(f"config key '{dotted}' must be an integer{where}")
    elif isinstance(default, str) and not isinstance(val, str):
        raise ConfigError(f"config key '{dotted}' must be a string{where}")
    elif isinstance(default, list) and not isinstance(val, list):
        raise ConfigError(f"config key '{dotted}' must be a list{where}")
    elif isinstance(default, dict) and not isinstance(val, dict):
        raise ConfigError(f"config key '{dotted}' must be a mapping{where}")


def load_config(text=None, overrides=()):
    """Effective config from YAML ``text`` and ``key=value`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if text:
        try:
            user = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
            raise ConfigError(f"could not parse config{where}: {getattr(exc, 'problem', exc)}")
        if user is None:
            user = {}
        if not isinstance(user, dict):
            raise ConfigError("config root must be a mapping")
        _merge(cfg, user, (), _key_lines(text))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            val = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override '{item}': {exc}")
        nested = val
        for part in reversed(key.strip().split(".")):
            nested = {part: nested}
        _merge(cfg, nested, (), {})
    return cfg


def _t_grid(exp):
    start, stop, step = exp["t_start"], exp["t_stop"], exp["t_step"]
    if not step > 0 or stop < start:
        raise ConfigError("experiment t grid needs t_step > 0 and t_stop >= t_start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def _grid_spec(cfg):
    g = cfg["grid"]
    return GridSpec(n_nodes=int(g["n_nodes"]), order=int(g["order"]), z_max=g["z_max"])


def _potential(cfg):
    try:
        return potential_from_config(cfg["model"]["potential"])
    except DomainError as exc:
        raise ConfigError(f"model.potential: {exc}")


def _gibbs(cfg):
    m = cfg["model"]
    return gibbs_model(_potential(cfg), float(m["beta"]), float(m["p"]), _grid_spec(cfg))


def _harmonic_params(cfg):
    m = cfg["model"]
    return harmonic_derive(m["k1"], m["k2"], m["a"], m["beta"])


def _law(cfg):
    m = cfg["model"]
    return RenewalLaw(m["law"], tuple(float(v) for v in m["law_params"]))


def _sampler(cfg):
    kind = cfg["model"]["kind"]
    if kind == "gibbs":
        return GridSampler(_gibbs(cfg))
    if kind == "harmonic":
        return HarmonicSampler(_harmonic_params(cfg))
    if kind == "renewal":
        return IIDSampler(_law(cfg))
    raise ConfigError(f"model.kind must be gibbs, harmonic or renewal, not {kind!r}")


def _grid_model(cfg):
    kind = cfg["model"]["kind"]
    if kind == "gibbs":
        return _gibbs(cfg)
    if kind == "harmonic":
        g = cfg["grid"]
        return harmonic_model(_harmonic_params(cfg), int(g["n_nodes"]), float(g["harmonic_width"]),
                              int(g["order"]))
    raise ConfigError("this command needs a gibbs or harmonic model")


def _require_gibbs(cfg, cmd):
    if cfg["model"]["kind"] != "gibbs":
        raise ConfigError(f"'{cmd}' needs model.kind = gibbs")


def cmd_eigen(cfg, out, threads):
    _require_gibbs(cfg, "eigen")
    m = cfg["model"]
    pot = _potential(cfg)
    model = _gibbs(cfg)
    eig = model.eigen
    ell = mean_spacing(pot, float(m["beta"]), float(m["p"]), model.grid)
    nodes = model.grid.state_nodes()
    w = model.grid.state_weights()
    k = model.grid.k
    node_cols = ["node"] if k == 1 else [f"node{i + 1}" for i in range(k)]
    header = ["z_index"] + node_cols + ["weight", "phi0", "psi0", "pi"]
    rows = ([i, *nodes[i], w[i], eig.phi0[i], eig.psi0[i], model.pi[i]]
            for i in range(nodes.shape[0]))
    write_csv(out / "eigen.csv", header, rows)
    return {
        "lambda0": math.exp(eig.log_lambda0),
        "log_lambda0": eig.log_lambda0,
        "residual": eig.residual,
        "iterations": eig.iterations,
        "lambda1_abs": abs(eig.lambda1),
        "gap_ratio": eig.gap_ratio,
        "free_energy": eig.log_lambda0 / k,
        "mean_spacing_fd": ell.finite_difference,
        "mean_spacing_stationary": ell.stationary,
        "grid": model.grid.describe(),
    }


def _init(cfg):
    init = cfg["experiment"]["init"]
    if init != "stationary":
        raise ConfigError("experiment.init supports only 'stationary' on the command line")
    return init


def cmd_sample(cfg, out, threads):
    exp = cfg["experiment"]
    n, seed = int(exp["n"]), int(cfg["seed"])
    kind = cfg["model"]["kind"]
    if kind == "gibbs":
        path = sample_gibbs_path(_gibbs(cfg), n, _init(cfg), seed, 0)
    elif kind == "harmonic":
        path = sample_harmonic_path(_harmonic_params(cfg), n, _init(cfg), seed, 0)
    elif kind == "renewal":
        path = sample_renewal_path(_law(cfg), n, seed, 0)
    else:
        raise ConfigError(f"unknown model.kind {kind!r}")
    rows = ((j + 1, path.z[j], path.x[j + 1]) for j in range(path.n))
    write_csv(out / "sample.csv", ["index", "z", "x"], rows)
    return {"seed": seed, "stream": 0, "model": path.model_tag, "init": path.init_law,
            "n": path.n, "mean_spacing_hat": float(path.z.mean())}


def cmd_regen(cfg, out, threads):
    exp = cfg["experiment"]
    model = _grid_model(cfg)
    cert = find_minorisation(model, int(exp["max_r"]), float(exp["lambda_floor"]))
    path, rec = simulate_split(model, cert, int(exp["n_cycles"]), int(cfg["seed"]), 0)
    rows = ((j + 1, rec.tau[j + 1], rec.y_increments[j]) for j in range(rec.n_cycles))
    write_csv(out / "regen.csv", ["cycle_index", "tau", "y_increment"], rows)
    meta = {"lambda": cert.lambda_min, "r": cert.r, "regen_set_size": int(cert.regen_set.size),
            "pi_regen_set": cert.pi_R}
    try:
        tail = tau_tail_diagnostics(rec)
        meta["tail"] = tail._asdict()
    except SpacingError as exc:
        meta["tail"] = {"error": str(exc)}
    try:
        meta["walk"] = embedded_walk_stats(rec, model.emitted_mean())._asdict()
    except SpacingError as exc:
        meta["walk"] = {"error": str(exc)}
    return meta


def cmd_renewal(cfg, out, threads):
    exp = cfg["experiment"]
    sampler = _sampler(cfg)
    t = _t_grid(exp)
    q = float(exp["q"])
    est = estimate_renewal(sampler, t, q, int(exp["n_replicas"]), int(cfg["seed"]),
                           init=_init(cfg), threads=threads)
    gap = blackwell_gap(est, 1.0, sampler.mean_spacing)
    rows = ((ti - q, ti, u, s, d) for ti, u, s, d in zip(t, est.u_hat, est.stderr, gap.deviation))
    write_csv(out / "renewal.csv", ["t_lo", "t_hi", "u_hat", "stderr", "deviation"], rows)
    fit = fit_decay(gap.t, gap.deviation, gap.stderr)
    return {"init": est.init_law, "q": q, "limit": gap.limit, "n_replicas": est.n_replicas,
            "fit": asdict(fit)}


def cmd_cov(cfg, out, threads):
    exp = cfg["experiment"]
    sampler = _sampler(cfg)
    A, B = tuple(exp["A"]), tuple(exp["B"])
    shifts = np.asarray(exp["shifts"], dtype=float)
    seed = int(cfg["seed"])
    rows, meta = [], {"A": list(A), "B": list(B)}
    for est in exp["estimators"]:
        if est == "palm-renewal":
            curve = second_moment_palm(sampler, A, B, shifts, int(exp["n_replicas"]), seed,
                                       threads=threads)
        elif est == "ergodic-average":
            draw = sampler.draw(stream(seed, _ERGODIC_STREAM), 1, int(exp["path_length"]))
            x = np.concatenate([[0.0], np.cumsum(draw.z[0])])
            curve = second_moment_ergodic(x, A, B, shifts)
        else:
            raise ConfigError(f"unknown estimator {est!r}")
        rows += [(ti, c, s, est) for ti, c, s in zip(curve.t, curve.cov_hat, curve.stderr)]
        meta[est] = {"intensity": curve.intensity_hat, "fit": asdict(fit_covariance_decay(curve))}
    write_csv(out / "cov.csv", ["t", "cov_hat", "stderr", "estimator"], rows)
    return meta


def cmd_pressure(cfg, out, threads):
    _require_gibbs(cfg, "pressure")
    m, exp = cfg["model"], cfg["experiment"]
    pot = _potential(cfg)
    rho = float(exp["target_intensity"])
    p = solve_pressure(pot, float(m["beta"]), rho, _grid_spec(cfg))
    ell = mean_spacing(pot, float(m["beta"]), p, _grid_spec(cfg))
    write_csv(out / "pressure.csv", ["target_intensity", "p", "mean_spacing"],
              [(rho, p, ell.stationary)])
    return {"target_intensity": rho, "p": p, "mean_spacing": ell.stationary}


def cmd_alpha(cfg, out, threads):
    exp, m = cfg["experiment"], cfg["model"]
    sampler = _sampler(cfg)
    deltas = np.asarray(exp["deltas"], dtype=float)
    est = growth_rate_alpha(sampler, deltas, int(exp["alpha_n"]), int(exp["n_replicas"]),
                            int(cfg["seed"]), threads=threads)
    bounds = []
    for d in deltas:
        b = float("nan")
        if cfg["model"]["kind"] == "gibbs" and 0 < d / 2 < 0.5 * m["beta"] * m["p"]:
            b = exp_moment_growth_bound(_potential(cfg), float(m["beta"]), float(m["p"]), d / 2,
                                        _grid_spec(cfg))
        bounds.append(b)
    rows = zip(deltas, est.alpha_n, est.alpha_half, est.richardson, bounds)
    write_csv(out / "alpha.csv", ["delta", "alpha_n", "alpha_half", "richardson", "bound"], rows)
    return {"n": est.n, "n_replicas": est.n_replicas}


_HANDLERS = {
    "eigen": cmd_eigen, "sample": cmd_sample, "regen": cmd_regen, "renewal": cmd_renewal,
    "cov": cmd_cov, "pressure": cmd_pressure, "alpha": cmd_alpha,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="spacingchains", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="YAML run configuration")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key (repeatable)")
        sp.add_argument("--seed", type=int, help="RNG seed (overrides config)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads")
        sp.add_argument("--out", type=Path, help="output directory (overrides config)")
    return parser


def run(command, config_text=None, overrides=(), threads=1):
    """Run one command; returns the metadata dict written to the sidecar."""
    cfg = load_config(config_text, overrides)
    out = Path(cfg["output_dir"])
    results = _HANDLERS[command](cfg, out, max(1, int(threads)))
    meta = {"command": command, "config": cfg, "config_source": config_text,
            "overrides": list(overrides), "results": results}
    write_meta(out / f"{command}.meta.json", meta)
    return meta


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output_dir={args.out}")
    try:
        text = args.config.read_text() if args.config else None
        run(args.command, text, overrides, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SpacingError, OSError) as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
