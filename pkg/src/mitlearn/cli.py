"""Command-line front end.

Subcommands: ``simulate``, ``check``, ``observe``, ``identify`` and
``design``. Exit codes are 0 on success, 2 for usage or validation errors
and 3 for runtime failures (simulation, factorisation, search).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import secrets
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .gp import GpError
from .lang import ParseError, parse_model, parse_priors, parse_properties, parse_space, read_text, temporal_depth
from .model import ExpressionError, ModelError
from .monitor import MonitorError
from .search import SearchError, UcbConfig, achieved_distribution, design, identify
from .sim import RngStream, SimConfig, SimulationError, simulate
from .smc import (
    DesignMatrix,
    jsd,
    outcome_bits,
    predictive,
    read_target,
    sample_observations,
    smc_sample,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    json_errors = False

    def error(self, message):
        _report("usage", message, EXIT_USAGE, _Parser.json_errors, self.format_usage())
        sys.exit(EXIT_USAGE)


def _report(kind, message, code, as_json, usage=""):
    if as_json:
        sys.stderr.write(json.dumps({"error": kind, "message": str(message), "exit_code": code}) + "\n")
    else:
        if usage:
            sys.stderr.write(usage)
        sys.stderr.write("error: %s\n" % message)


# ---------------------------------------------------------------------------
# helpers


def _assignments(items) -> dict[str, float]:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or not name.strip():
            raise UsageError("--set expects name=value, got %r" % item)
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise UsageError("--set %s: %r is not a number" % (name, value)) from None
    return out


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(32)
        sys.stderr.write("seed: %d\n" % args.seed)
    return args.seed


def _noise(text):
    if text in ("bootstrap", "posterior"):
        return text
    if text.startswith("fixed:"):
        try:
            v = float(text[6:])
        except ValueError:
            raise UsageError("--noise fixed:<std> needs a number") from None
        if v < 0:
            raise UsageError("fixed noise std must be non-negative")
        return v
    raise UsageError("--noise must be bootstrap, posterior or fixed:<std>")


def _positive(flag, value):
    if value is not None and value < 1:
        raise UsageError("%s must be at least 1" % flag)


def _load_model(path):
    return parse_model(read_text(path))


def _load_props(path, model):
    props = parse_properties(read_text(path), model)
    if not props:
        raise UsageError("%s defines no properties" % path)
    return props


def _sim_config(args, props=None) -> SimConfig:
    T = args.horizon
    if T is None:
        if props is None:
            raise UsageError("-T/--horizon is required")
        T = max(temporal_depth(f) for f in props.values()) or 1.0
    return SimConfig(T, args.step)


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(args, inputs, started, out_path):
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    manifest = {
        "subcommand": args.command,
        "config": config,
        "seed": args.seed,
        "version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
        "inputs": {str(p): _digest(p) for p in inputs},
    }
    if getattr(args, "manifest", None):
        path = Path(args.manifest)
    elif out_path is None:
        path = Path("%s.manifest.json" % args.command)
    else:
        path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _dump(obj, path):
    text = json.dumps(obj, indent=2, default=_jsonable) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def _finite(v):
    return float(v) if np.isfinite(v) else None


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    started = time.time()
    model = _load_model(args.model)
    theta = _assignments(args.set)
    cfg = _sim_config(args)
    seed = _seed(args)
    _positive("--runs", args.runs)
    out = Path(args.output or Path(args.model).with_suffix(".csv").name)
    paths = []
    for i in range(args.runs):
        traj = simulate(model, theta, cfg, RngStream(seed, i))
        path = out if args.runs == 1 else out.with_name("%s_%d%s" % (out.stem, i, out.suffix or ".csv"))
        traj.to_csv(path)
        paths.append(path)
    _write_manifest(args, [args.model], started, paths[0])
    for p in paths:
        print(p)
    return EXIT_OK


def _joint_table(names, post):
    d = len(names)
    q = predictive(post)
    return [
        {"bits": outcome_bits(j, d), "count": int(post.counts[j]), "predictive": float(q[j])}
        for j in range(2**d)
    ]


def cmd_check(args) -> int:
    started = time.time()
    model = _load_model(args.model)
    props = _load_props(args.props, model)
    theta = _assignments(args.set)
    _positive("--runs", args.runs)
    cfg = _sim_config(args, props)
    seed = _seed(args)
    post = smc_sample(model, theta, props, args.runs, cfg, seed, workers=args.workers)
    names = list(props)
    d = len(names)
    counts = post.counts
    marg = {}
    for i, n in enumerate(names):
        bit = d - 1 - i
        marg[n] = float(sum(counts[j] for j in range(2**d) if (j >> bit) & 1) / args.runs)
    report = {"runs": args.runs, "formulas": names, "marginals": marg, "joint": _joint_table(names, post)}
    if args.output:
        _dump(report, args.output)
    else:
        print("runs: %d" % args.runs)
        for n in names:
            print("P(%s) = %.4f" % (n, marg[n]))
        print("%-*s %8s %10s" % (max(d, 4), "bits", "count", "predictive"))
        for row in report["joint"]:
            print("%-*s %8d %10.4f" % (max(d, 4), row["bits"], row["count"], row["predictive"]))
    _write_manifest(args, [args.model, args.props], started, args.output)
    return EXIT_OK


def cmd_observe(args) -> int:
    started = time.time()
    model = _load_model(args.model)
    props = _load_props(args.props, model)
    theta = _assignments(args.set)
    _positive("-N", args.n)
    cfg = _sim_config(args, props)
    seed = _seed(args)
    obs = sample_observations(model, theta, props, args.n, cfg, seed)
    out = args.output or "observations.csv"
    obs.write_csv(out)
    _write_manifest(args, [args.model, args.props], started, out)
    print(out)
    return EXIT_OK


def _ucb_config(args, seed) -> UcbConfig:
    kw = dict(runs=args.runs, seed=seed, threshold=args.threshold)
    if args.init is not None:
        kw["n_init"] = args.init
    if args.grid is not None:
        kw["n_grid"] = args.grid
    if args.beta is not None:
        kw["beta0"] = args.beta
        kw["beta_cap"] = max(16.0, args.beta)
    try:
        return UcbConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _result_document(res, args, manifest_path, extra=None):
    trace_path = args.trace or str(Path(args.output or "result.json").with_suffix("")) + ".trace.csv"
    res.write_trace(trace_path)
    doc = {
        "best": res.best_dict,
        "objective": {"value": res.best.value, "std": res.best.std},
        "laplace_std": {k: _finite(v) for k, v in res.std_dict.items()},
        "evaluations": res.evaluations,
        "trace_file": trace_path,
        "manifest": str(manifest_path),
    }
    if res.clipped:
        doc["laplace_clipped_directions"] = res.clipped
    if res.boundary:
        doc["boundary"] = True
    if extra:
        doc.update(extra)
    return doc


def _manifest_path(args):
    return Path(args.manifest) if args.manifest else Path(str(args.output or "result.json") + ".manifest.json")


def cmd_identify(args) -> int:
    started = time.time()
    model = _load_model(args.model)
    props = _load_props(args.props, model)
    data = DesignMatrix.read_csv(args.observations)
    if tuple(data.names) != tuple(props):
        raise UsageError(
            "observation columns %s do not match the properties %s" % (list(data.names), list(props))
        )
    space = parse_space(read_text(args.space))
    priors = parse_priors(read_text(args.map)) if args.map else None
    if priors:
        unknown = set(priors) - set(space.names)
        if unknown:
            raise UsageError("priors for parameters not searched: %s" % ", ".join(sorted(unknown)))
    noise = _noise(args.noise)
    _positive("--runs", args.runs)
    cfg = _sim_config(args, props)
    seed = _seed(args)
    res = identify(model, props, data, space, priors, _ucb_config(args, seed), cfg, noise=noise, workers=args.workers)
    inputs = [args.model, args.props, args.observations, args.space] + ([args.map] if args.map else [])
    doc = _result_document(res, args, _manifest_path(args), {"mode": "map" if priors else "ml"})
    _dump(doc, args.output)
    _write_manifest(args, inputs, started, args.output or "result.json")
    return EXIT_OK


def cmd_design(args) -> int:
    started = time.time()
    model = _load_model(args.model)
    props = _load_props(args.props, model)
    target = read_target(args.target, len(props))
    space = parse_space(read_text(args.space))
    noise = _noise(args.noise)
    if noise == "posterior":
        raise UsageError("--noise posterior applies to likelihoods only")
    _positive("--runs", args.runs)
    cfg = _sim_config(args, props)
    seed = _seed(args)
    res = design(model, props, target, space, _ucb_config(args, seed), cfg, noise=noise, workers=args.workers)
    # re-estimate the distribution at the optimum with fresh randomness
    q = achieved_distribution(model, props, space.to_dict(res.theta), args.runs, cfg, seed + 1, args.workers)
    d = len(props)
    table = [
        {"bits": outcome_bits(j, d), "target": float(target[j]), "achieved": float(q[j])} for j in range(2**d)
    ]
    extra = {"jsd": jsd(target, q), "table": table}
    doc = _result_document(res, args, _manifest_path(args), extra)
    _dump(doc, args.output)
    _write_manifest(args, [args.model, args.props, args.target, args.space], started, args.output or "result.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mitlearn", description="Learn and design stochastic models from temporal-logic observations.")
    p.add_argument("--version", action="version", version="%(prog)s " + __version__)
    p.add_argument("--json-errors", action="store_true", help="report failures as JSON on stderr")
    p.add_argument("-v", "--verbose", action="store_true", help="log search progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, props=True):
        sp.add_argument("--set", action="append", metavar="NAME=VALUE", help="parameter value (repeatable)")
        sp.add_argument("-T", "--horizon", type=float, help="time horizon" + (" (default: formula depth)" if props else ""))
        sp.add_argument("--step", type=float, default=0.1, help="Euler-Maruyama step (default 0.1)")
        sp.add_argument("--seed", type=int, help="master seed (generated and printed when omitted)")
        sp.add_argument("-o", "--output", help="output file")
        sp.add_argument("--manifest", help="run manifest path (default: <output>.manifest.json)")

    s = sub.add_parser("simulate", help="write sampled trajectories as CSV")
    s.add_argument("model")
    common(s, props=False)
    s.add_argument("--runs", type=int, default=1, help="number of trajectories (files suffixed _0.._k-1)")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("check", help="estimate satisfaction probabilities")
    c.add_argument("model")
    c.add_argument("props")
    common(c)
    c.add_argument("--runs", type=int, default=1000)
    c.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    c.set_defaults(func=cmd_check)

    o = sub.add_parser("observe", help="generate a synthetic observation matrix")
    o.add_argument("model")
    o.add_argument("props")
    common(o)
    o.add_argument("-N", "--n", type=int, default=40, help="number of observed runs")
    o.set_defaults(func=cmd_observe)

    def search_opts(sp):
        common(sp)
        sp.add_argument("--runs", type=int, default=1000, help="SMC runs per objective evaluation")
        sp.add_argument("--init", type=int, help="initial design size (default 48)")
        sp.add_argument("--grid", type=int, help="candidate grid size (default 500)")
        sp.add_argument("--beta", type=float, help="initial exploration constant (default 2)")
        sp.add_argument("--noise", default="bootstrap", help="bootstrap, posterior or fixed:<std>")
        sp.add_argument(
            "--threshold",
            choices=("ucb", "observed"),
            default="ucb",
            help="improvement rule: beat the bound at observed inputs, or the best observed value",
        )
        sp.add_argument("--trace", help="CSV trace path (default: <output>.trace.csv)")
        sp.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    i = sub.add_parser("identify", help="ML or MAP parameters from observations")
    for a in ("model", "props", "observations", "space"):
        i.add_argument(a)
    search_opts(i)
    i.add_argument("--map", metavar="PRIORS", help="priors file; maximise the posterior")
    i.set_defaults(func=cmd_identify)

    d = sub.add_parser("design", help="parameters matching a target distribution")
    for a in ("model", "props", "target", "space"):
        d.add_argument(a)
    search_opts(d)
    d.set_defaults(func=cmd_design)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    _Parser.json_errors = "--json-errors" in argv
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be at least 1")
        return args.func(args)
    except (UsageError, ParseError, ModelError, MonitorError, ValueError, FileNotFoundError, IsADirectoryError) as exc:
        _report("validation", exc, EXIT_USAGE, args.json_errors)
        return EXIT_USAGE
    except (SimulationError, GpError, SearchError, ExpressionError, RuntimeError, ArithmeticError) as exc:
        _report("runtime", exc, EXIT_RUNTIME, args.json_errors)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
