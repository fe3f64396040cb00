"""Command-line front end.

Subcommands::

    gen     write a synthetic near-separable instance (X.csv + anchors.json)
    solve   find anchors of a matrix file
    bench   run one benchmark cell
    sweep   run a grid of benchmark cells

Settings come from flags, then an optional ``--config`` JSON file, then the
built-in defaults.  Exit status is 0 on success, 1 on a usage, config or
input error and 2 on a runtime failure of the solver.
"""
import argparse
import json
import os
import sys
from dataclasses import fields, replace

from . import dca
from .exceptions import (
    MatrixFormatError,
    RejectionLimitError,
    SketchRankError,
    SubproblemError,
    VoteShortfallError,
)
from .matstore import load_matrix, save_csv
from .sampler import PostSelectConfig
from .snmf_bench import (
    BenchConfig,
    aggregate,
    generate_synthetic,
    records_to_csv,
    records_to_json,
    run_bench,
    sweep,
)

DEFAULT_SEED = 0

SOLVE_DEFAULTS = {
    "y": None, "k": None, "p": None, "mode": "approx", "s": 2000, "n_x": None, "n_y": None,
    "eps": 0.1, "delta": 0.05, "eps_gap": 0.05, "ensemble": "auto", "basis_access": "dense",
    "seed": DEFAULT_SEED, "workers": 1, "format": "json", "out": None, "diagnostics": False,
}
GEN_DEFAULTS = {"n": 500, "m": 500, "k": 10, "mu": 0.0, "seed": DEFAULT_SEED, "out": None}
BENCH_DEFAULTS = {f.name: f.default for f in fields(BenchConfig)}
BENCH_DEFAULTS.update(format="csv", out=None, timing=True, diagnostics=False, workers=1,
                      grid=[], seeds="0,1,2,3,4", aggregate=False)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_bench_flags(sp):
    sp.add_argument("--n", type=int, help="rows of the instance")
    sp.add_argument("--m", type=int, help="columns of the instance")
    sp.add_argument("--k", type=int, help="number of anchors")
    sp.add_argument("--mu", type=float, help="noise standard deviation")
    sp.add_argument("--p", type=int, help="number of projections")
    sp.add_argument("--s", type=int, help="sketch sample count")
    sp.add_argument("--mode", choices=["approx", "exact"], help="solver mode")
    sp.add_argument("--n-x", dest="n_x", type=int, help="post-selection draws from X")
    sp.add_argument("--n-y", dest="n_y", type=int, help="post-selection draws from Y")
    sp.add_argument("--eps", type=float, help="relative precision of coordinate estimates")
    sp.add_argument("--delta", type=float, help="failure probability of coordinate estimates")
    sp.add_argument("--ensemble", help="projection ensemble (auto, gaussian, unit_basis, data_row, uniform_nonneg)")
    sp.add_argument("--basis-access", dest="basis_access", choices=["dense", "implicit"],
                    help="how sampled bases are accessed")
    sp.add_argument("--format", choices=["csv", "json"], help="output format")
    sp.add_argument("--out", help="output file (stdout when omitted)")
    sp.add_argument("--no-timing", dest="timing", action="store_false",
                    help="leave wall_ms empty so output is byte-reproducible")
    sp.add_argument("--diagnostics", action="store_true", help="include per-subproblem diagnostics in JSON")
    sp.add_argument("--workers", type=int, help="worker threads")
    sp.add_argument("--config", help="JSON file with default settings")


def make_parser():
    parser = _Parser(prog="conical-anchor", description="Anchor selection for conical hulls and separable NMF.",
                     argument_default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic instance", argument_default=argparse.SUPPRESS)
    g.add_argument("--n", type=int, help="rows")
    g.add_argument("--m", type=int, help="columns")
    g.add_argument("--k", type=int, help="number of anchors")
    g.add_argument("--mu", type=float, help="noise standard deviation")
    g.add_argument("--seed", type=int, help=f"random seed (default {DEFAULT_SEED})")
    g.add_argument("--out", help="output directory (required)")
    g.add_argument("--config", help="JSON file with default settings")

    s = sub.add_parser("solve", help="find anchors of a matrix file", argument_default=argparse.SUPPRESS)
    s.add_argument("--x", help="matrix file for X (.csv triplets or .mtx), required")
    s.add_argument("--y", help="matrix file for Y (defaults to X)")
    s.add_argument("--k", type=int, help="number of anchors (required)")
    s.add_argument("--p", type=int, help="number of projections")
    s.add_argument("--mode", choices=["approx", "exact"], help="solver mode")
    s.add_argument("--s", type=int, help="sketch sample count")
    s.add_argument("--n-x", dest="n_x", type=int, help="post-selection draws from X")
    s.add_argument("--n-y", dest="n_y", type=int, help="post-selection draws from Y")
    s.add_argument("--eps", type=float, help="relative precision of coordinate estimates")
    s.add_argument("--delta", type=float, help="failure probability of coordinate estimates")
    s.add_argument("--eps-gap", dest="eps_gap", type=float, help="post-selection gap (sets default draws)")
    s.add_argument("--ensemble", help="projection ensemble")
    s.add_argument("--basis-access", dest="basis_access", choices=["dense", "implicit"],
                   help="how sampled bases are accessed")
    s.add_argument("--seed", type=int, help=f"master seed (default {DEFAULT_SEED})")
    s.add_argument("--workers", type=int, help="worker threads")
    s.add_argument("--format", choices=["csv", "json"], help="output format")
    s.add_argument("--out", help="output file (stdout when omitted)")
    s.add_argument("--diagnostics", action="store_true", help="include per-subproblem diagnostics")
    s.add_argument("--config", help="JSON file with default settings")

    b = sub.add_parser("bench", help="run one benchmark cell", argument_default=argparse.SUPPRESS)
    _add_bench_flags(b)
    b.add_argument("--seed", type=int, help=f"seed (default {DEFAULT_SEED})")

    w = sub.add_parser("sweep", help="run a grid of benchmark cells", argument_default=argparse.SUPPRESS)
    _add_bench_flags(w)
    w.add_argument("--grid", action="append", help="KEY=V1,V2,... (repeatable); cells are the product")
    w.add_argument("--seeds", help="comma-separated seeds (default 0,1,2,3,4)")
    w.add_argument("--aggregate", action="store_true", help="emit medians and variances per cell instead of records")
    return parser


def _settings(ns, defaults):
    """Defaults, overridden by the config file, overridden by flags."""
    cfg = dict(defaults)
    given = vars(ns).copy()
    given.pop("command", None)
    path = given.pop("config", None)
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        for key, val in doc.items():
            key = key.replace("-", "_")
            if key not in defaults:
                raise UsageError(f"unknown config key {key!r} in {path}")
            cfg[key] = val
    cfg.update(given)
    return cfg


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _cmd_gen(cfg):
    if cfg["out"] is None:
        raise UsageError("gen needs --out DIR")
    inst = generate_synthetic(cfg["n"], cfg["m"], cfg["k"], cfg["mu"], cfg["seed"])
    os.makedirs(cfg["out"], exist_ok=True)
    save_csv(inst.X, os.path.join(cfg["out"], "X.csv"))
    meta = {"anchors": [int(i) for i in inst.true_anchors], "n": cfg["n"], "m": cfg["m"],
            "k": cfg["k"], "mu": cfg["mu"], "seed": cfg["seed"]}
    with open(os.path.join(cfg["out"], "anchors.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return 0


def _cmd_solve(cfg):
    if cfg.get("x") is None:
        raise UsageError("solve needs --x PATH")
    if cfg["k"] is None:
        raise UsageError("solve needs --k")
    X = load_matrix(cfg["x"])
    Y = load_matrix(cfg["y"]) if cfg["y"] is not None else None
    result = dca.solve(
        X, Y, k=cfg["k"], p=cfg["p"], mode=cfg["mode"], sketch_size=cfg["s"], eps=cfg["eps"],
        delta=cfg["delta"],
        post_select=PostSelectConfig(n_x=cfg["n_x"], n_y=cfg["n_y"], eps_gap=cfg["eps_gap"]),
        ensemble=cfg["ensemble"], master_seed=cfg["seed"], n_jobs=cfg["workers"],
        basis_access=cfg["basis_access"],
    )
    echo = {k: cfg[k] for k in ("x", "y", "k", "p", "mode", "s", "n_x", "n_y", "eps", "delta",
                                "eps_gap", "ensemble", "basis_access", "seed")}
    if cfg["format"] == "csv":
        lines = ["rank,index,score"]
        lines += [f"{r},{int(i)},{float(result.scores[i])!r}" for r, i in enumerate(result.indices)]
        _emit("\n".join(lines) + "\n", cfg["out"])
    else:
        doc = result.to_dict(diagnostics=cfg["diagnostics"])
        doc["ranking"] = doc.pop("anchors")
        doc = {"anchors": sorted(doc["ranking"]), **doc, "config": echo}
        _emit(json.dumps(doc, indent=2) + "\n", cfg["out"])
    return 0


def _bench_config(cfg):
    vals = {f.name: cfg[f.name] for f in fields(BenchConfig)}
    vals["n_jobs"] = 1
    try:
        return BenchConfig(**vals)
    except TypeError as exc:
        raise UsageError(str(exc))


def _parse_grid(items):
    types = {f.name: f.type for f in fields(BenchConfig)}
    grid = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--grid expects KEY=V1,V2,..., got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in types or key in ("seed", "n_jobs"):
            raise UsageError(f"unknown grid key {key!r}")
        try:
            grid[key] = [types[key](v.strip()) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"bad value in --grid {item!r}")
        if not grid[key]:
            raise UsageError(f"--grid {key} has no values")
    return grid


def _write_records(records, cfg):
    if cfg["format"] == "json":
        _emit(records_to_json(records, timing=cfg["timing"]) + "\n", cfg["out"])
    else:
        _emit(records_to_csv(records, timing=cfg["timing"]), cfg["out"])


def _cmd_bench(cfg):
    base = _bench_config(cfg)
    base = replace(base, n_jobs=max(1, int(cfg["workers"])))
    _write_records([run_bench(base, diagnostics=cfg["diagnostics"])], cfg)
    return 0


def _cmd_sweep(cfg):
    base = _bench_config(cfg)
    grid = _parse_grid(cfg["grid"])
    seeds = cfg["seeds"]
    if isinstance(seeds, str):
        try:
            seeds = [int(v) for v in seeds.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"--seeds expects comma-separated integers, got {cfg['seeds']!r}")
    records = sweep(base, grid, seeds, n_workers=max(1, int(cfg["workers"])), diagnostics=cfg["diagnostics"])
    if cfg["aggregate"]:
        rows = aggregate(records)
        if cfg["format"] == "json":
            _emit(json.dumps(rows, indent=2) + "\n", cfg["out"])
        else:
            cols = list(rows[0]) if rows else []
            text = ",".join(cols) + "\n" + "".join(
                ",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols) + "\n" for r in rows)
            _emit(text, cfg["out"])
    else:
        _write_records(records, cfg)
    failed = [r for r in records if r.error]
    for r in failed:
        print(f"cell seed={r.config.seed} failed: {r.error}", file=sys.stderr)
    return 2 if failed and len(failed) == len(records) else 0


def main(argv=None):
    parser = make_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command == "gen":
            return _cmd_gen(_settings(ns, GEN_DEFAULTS))
        if ns.command == "solve":
            return _cmd_solve(_settings(ns, {"x": None, **SOLVE_DEFAULTS}))
        cfg = _settings(ns, BENCH_DEFAULTS)
        return _cmd_bench(cfg) if ns.command == "bench" else _cmd_sweep(cfg)
    except (VoteShortfallError, SubproblemError, RejectionLimitError, SketchRankError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        msg = f"file not found: {exc.filename}" if exc.filename else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return 1
    except (MatrixFormatError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
