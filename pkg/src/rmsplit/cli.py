"""Command-line harness: reproducible experiments with manifests.

Every subcommand resolves its configuration from an optional JSON config
file plus flags (flags win), derives all randomness from the single
``--seed`` through the documented key-derivation tree, writes data outputs
atomically (``.tmp`` then rename), and finishes by emitting a manifest with
the config hash and a checksum of every output.  Data outputs are
byte-identical for a given config regardless of ``--threads``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time

import numpy as np

from . import __version__, estimators
from .environment import EnvSeedSpec, generate, load, serialize
from .kernels import backend_name
from .mass import mass_run, pack_rows
from .parallel import default_threads
from .walks import decompose_coupled, sample_coupled, sample_walk


class ConfigError(Exception):
    pass


def _parse_grid(text: str) -> list:
    """'64:4096:x2' geometric grid, or a comma list '64,256,1024'."""
    if ":" in text:
        lo_s, hi_s, step_s = text.split(":")
        lo, hi = int(lo_s), int(hi_s)
        if not step_s.startswith("x"):
            raise ConfigError(f"grid step must look like 'x2', got {step_s!r}")
        mult = int(step_s[1:])
        if lo < 1 or mult < 2:
            raise ConfigError("grid must be positive with multiplier >= 2")
        grid = []
        n = lo
        while n <= hi:
            grid.append(n)
            n *= mult
        return grid
    return [int(x) for x in text.split(",")]


def _resolve(args: argparse.Namespace, config_keys: list) -> dict:
    """Merge config-file values under explicit flags; flags win."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"unreadable config {args.config}: {exc}") from exc
        unknown = set(cfg) - set(config_keys)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for key in config_keys:
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else cfg.get(key)
    return out


def _config_hash(params: dict) -> str:
    canon = json.dumps(params, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


class OutputSet:
    """Atomic data outputs plus a trailing manifest."""

    def __init__(self, command: str, params: dict, threads: int, force: bool):
        self.command = command
        self.params = params
        self.threads = threads
        self.force = force
        self.started = time.time()
        self.outputs = {}

    def _check_collision(self, path: str) -> None:
        if os.path.exists(path) and not self.force:
            raise ConfigError(f"output {path} exists; pass --force to overwrite")

    def write_bytes(self, path: str, data: bytes) -> None:
        self._check_collision(path)
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
        self.outputs[path] = hashlib.sha256(data).hexdigest()

    def write_json(self, path: str, obj) -> None:
        self.write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True)
                                + "\n").encode())

    def write_csv(self, path: str, header: list, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)
        self.write_bytes(path, buf.getvalue().encode())

    def finish(self, primary_out: str | None) -> None:
        if primary_out is None:
            return
        manifest = {
            "schema": "rmsplit/manifest/v1",
            "command": self.command,
            "version": __version__,
            "backend": backend_name(),
            "config": self.params,
            "config_hash": _config_hash(self.params),
            "threads": self.threads,
            "started": self.started,
            "finished": time.time(),
            "outputs": self.outputs,
        }
        tmp = primary_out + ".manifest.json.tmp"
        with open(tmp, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, primary_out + ".manifest.json")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# Subcommand implementations.
# ---------------------------------------------------------------------------


def _cmd_gen_env(args) -> int:
    p = _resolve(args, ["seed", "horizon", "measure", "replicate", "out"])
    _require(p, "seed", "horizon", "out")
    measure = (p["measure"] or "size-biased").replace("-", "_")
    spec = EnvSeedSpec(p["seed"], p["horizon"], measure, p["replicate"] or 0)
    outs = OutputSet("gen-env", p, 1, args.force)
    env = generate(spec)
    outs.write_bytes(p["out"], serialize(env))
    outs.finish(p["out"])
    return 0


def _cmd_mass(args) -> int:
    p = _resolve(args, ["env", "t", "out", "format"])
    _require(p, "env", "t", "out")
    env = load(p["env"])
    field = mass_run(env, p["t"])
    outs = OutputSet("mass", p, 1, args.force)
    fmt = p["format"] or "csv"
    if fmt == "csv":
        outs.write_csv(p["out"], ["t", "y", "p"],
                       ((t, y, _fmt(v)) for t, y, v in field.cells()))
    elif fmt == "bin":
        outs.write_bytes(p["out"], pack_rows(field))
    else:
        outs.write_json(p["out"], {
            "schema": "rmsplit/mass/v1",
            "rows": [{"t": t, "y": y, "p": v} for t, y, v in field.cells()],
        })
    outs.finish(p["out"])
    return 0


def _cmd_walk(args) -> int:
    p = _resolve(args, ["seed", "horizon", "n", "walks", "out"])
    _require(p, "seed", "out")
    n = p["n"] if p["n"] is not None else p["horizon"]
    if n is None:
        raise ConfigError("need --n (or --horizon)")
    spec = EnvSeedSpec(p["seed"], p["horizon"] or n)
    env = generate(spec)
    outs = OutputSet("walk", p, 1, args.force)

    def rows():
        for w in range(p["walks"] or 1):
            path = sample_walk(env, n, walk_id=w)
            pos = path.positions()
            for i in range(n + 1):
                yield w, i, int(pos[i])

    outs.write_csv(p["out"], ["walk", "i", "y"], rows())
    outs.finish(p["out"])
    return 0


def _cmd_couple(args) -> int:
    p = _resolve(args, ["seed", "n", "pairs", "out", "paths_out"])
    _require(p, "seed", "n", "out")
    n = p["n"]
    pairs = p["pairs"] or 1
    outs = OutputSet("couple", p, 1, args.force)
    records = []
    first_paths = None
    for r in range(pairs):
        spec = EnvSeedSpec(p["seed"], n, "size_biased", r)
        env = generate(spec)
        cp = sample_coupled(env, n, pair_id=0)
        dec = decompose_coupled(cp)
        if r == 0:
            first_paths = cp
        records.append({
            "replicate": r,
            "n": n,
            "zero_count": dec.zero_count,
            "a_n": dec.a_n,
            "gamma_sum": dec.gamma_sum,
            "max_hold": dec.max_hold,
            "excursions": [[a, b, ln] for a, b, ln in dec.excursions],
            "holds": [[g, bool(c)] for g, c in dec.holds],
        })
    outs.write_json(p["out"], {"schema": "rmsplit/couple/v1", "records": records})
    if p["paths_out"]:
        y = first_paths.y()
        outs.write_csv(
            p["paths_out"], ["i", "y_X", "y_Xt", "Y", "v_at_X"],
            ((i, int(first_paths.y_x[i]), int(first_paths.y_xt[i]), int(y[i]),
              int(first_paths.v_at_x[i]) if i < n else "")
             for i in range(n + 1)))
    outs.finish(p["out"])
    return 0


def _curve_rows(grid, mean, half):
    for i, n in enumerate(grid):
        yield int(n), _fmt(mean[i]), _fmt(mean[i] - half[i]), _fmt(mean[i] + half[i])


def _cmd_moment(args) -> int:
    p = _resolve(args, ["seed", "replicates", "grid", "out", "format", "threads"])
    _require(p, "seed", "replicates", "grid", "out")
    grid = _parse_grid(p["grid"]) if isinstance(p["grid"], str) else p["grid"]
    threads = p["threads"] or default_threads()
    curve = estimators.moment_curve(p["seed"], grid, p["replicates"],
                                    threads=threads)
    outs = OutputSet("moment", {**p, "grid": grid, "threads": None}, threads,
                     args.force)
    if (p["format"] or "json") == "csv":
        outs.write_csv(p["out"], ["n", "estimate", "ci_lo", "ci_hi"],
                       _curve_rows(curve.grid, curve.m2_mean, curve.m2_half))
    else:
        outs.write_json(p["out"], curve.to_dict())
    outs.finish(p["out"])
    return 0


def _cmd_zeros(args) -> int:
    p = _resolve(args, ["seed", "replicates", "moment_replicates", "grid",
                        "out", "format", "threads"])
    _require(p, "seed", "replicates", "grid", "out")
    grid = _parse_grid(p["grid"]) if isinstance(p["grid"], str) else p["grid"]
    threads = p["threads"] or default_threads()
    ens = estimators.run_coupled(p["seed"], max(grid), p["replicates"],
                                 grid=grid, threads=threads)
    curve = estimators.zero_count_curve(ens)
    report = curve.to_dict()
    mreps = p["moment_replicates"]
    if mreps:
        mcurve = estimators.moment_curve(p["seed"], grid, mreps, threads=threads)
        margin = estimators.ordering_margin(mcurve.m2_mean, mcurve.m2_half,
                                            curve.zero_mean, curve.zero_half)
        report["m2_mean"] = list(map(float, mcurve.m2_mean))
        report["ordering_margin"] = list(map(float, margin))
        report["ordering_holds"] = bool(np.all(
            mcurve.m2_mean <= curve.zero_mean + margin))
    outs = OutputSet("zeros", {**p, "grid": grid, "threads": None}, threads,
                     args.force)
    if (p["format"] or "json") == "csv":
        outs.write_csv(p["out"], ["n", "estimate", "ci_lo", "ci_hi"],
                       _curve_rows(curve.grid, curve.zero_mean, curve.zero_half))
    else:
        outs.write_json(p["out"], report)
    outs.finish(p["out"])
    return 0


def _cmd_tails(args) -> int:
    p = _resolve(args, ["seed", "n", "replicates", "hold_replicates", "out",
                        "threads"])
    _require(p, "seed", "n", "replicates", "out")
    threads = p["threads"] or default_threads()
    report = estimators.holding_tail(p["seed"], p["n"], p["replicates"],
                                     hold_replicates=p["hold_replicates"] or 512,
                                     threads=threads)
    outs = OutputSet("tails", {**p, "threads": None}, threads, args.force)
    outs.write_json(p["out"], report.to_dict())
    outs.finish(p["out"])
    return 0


def _cmd_annealed(args) -> int:
    p = _resolve(args, ["seed", "n", "replicates", "out", "threads"])
    _require(p, "seed", "n", "replicates", "out")
    threads = p["threads"] or default_threads()
    check = estimators.annealed_mean_check(p["seed"], p["n"], p["replicates"],
                                           threads=threads)
    outs = OutputSet("annealed", {**p, "threads": None}, threads, args.force)
    outs.write_json(p["out"], check.to_dict())
    outs.finish(p["out"])
    return 0


def _cmd_clt(args) -> int:
    p = _resolve(args, ["seed", "horizon", "envs", "out", "threads"])
    _require(p, "seed", "horizon", "out")
    threads = p["threads"] or default_threads()
    n_envs = p["envs"] or 1
    reports = estimators.clt_multi(p["seed"], p["horizon"], n_envs,
                                   threads=threads)
    outs = OutputSet("clt", {**p, "threads": None}, threads, args.force)
    if n_envs == 1:
        outs.write_json(p["out"], reports[0].to_dict())
    else:
        outs.write_json(p["out"], {
            "schema": "rmsplit/clt-multi/v1",
            "horizon": p["horizon"],
            "reports": [r.to_dict() for r in reports],
        })
    outs.finish(p["out"])
    return 0


def _cmd_mu(args) -> int:
    p = _resolve(args, ["t", "out"])
    _require(p, "t")
    value = estimators.mu_t_exact(p["t"])
    print(f"{value:.12g}")
    if p["out"]:
        outs = OutputSet("mu", p, 1, args.force)
        outs.write_json(p["out"], {"schema": "rmsplit/mu/v1", "t": p["t"],
                                   "mu": value})
        outs.finish(p["out"])
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest
    threads = args.threads or default_threads()
    return run_selftest(threads=threads)


def _require(params: dict, *keys: str) -> None:
    missing = [k for k in keys if params.get(k) is None]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")


# ---------------------------------------------------------------------------
# Parser.
# ---------------------------------------------------------------------------


def _add_common(sp, *, seed=True, threads=True, formats=("csv", "json")):
    sp.add_argument("--config", help="JSON config file; flags override it")
    sp.add_argument("--out", help="output path")
    sp.add_argument("--force", action="store_true", help="overwrite outputs")
    sp.add_argument("--format", choices=list(formats))
    if seed:
        sp.add_argument("--seed", type=int)
    if threads:
        sp.add_argument("--threads", type=int,
                        help="worker processes (default: RMS_THREADS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="rmsplit",
        description="Random mass splitting: exact kernels and Monte Carlo checks")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-env", help="generate and store an environment")
    _add_common(sp, threads=False)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--measure", choices=["base", "size-biased"])
    sp.add_argument("--replicate", type=int)
    sp.set_defaults(fn=_cmd_gen_env)

    sp = sub.add_parser("mass", help="mass field from a stored environment")
    _add_common(sp, seed=False, threads=False, formats=("csv", "json", "bin"))
    sp.add_argument("--env", help="environment file from gen-env")
    sp.add_argument("--t", type=int)
    sp.set_defaults(fn=_cmd_mass)

    sp = sub.add_parser("walk", help="sample quenched walk paths")
    _add_common(sp, threads=False)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--n", type=int)
    sp.add_argument("--walks", type=int)
    sp.set_defaults(fn=_cmd_walk)

    sp = sub.add_parser("couple", help="coupled pairs and decompositions")
    _add_common(sp, threads=False)
    sp.add_argument("--n", type=int)
    sp.add_argument("--pairs", type=int)
    sp.add_argument("--paths-out", dest="paths_out",
                    help="CSV dump (i, y_X, y_Xt, Y, v_at_X) of pair 0")
    sp.set_defaults(fn=_cmd_couple)

    sp = sub.add_parser("moment", help="moment growth curve and exponent")
    _add_common(sp)
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--grid", help="e.g. 64:4096:x2 or 64,256,1024")
    sp.set_defaults(fn=_cmd_moment)

    sp = sub.add_parser("zeros", help="zero-count curve from coupled pairs")
    _add_common(sp)
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--moment-replicates", dest="moment_replicates", type=int,
                    help="also estimate E(m^2) and check the ordering")
    sp.add_argument("--grid")
    sp.set_defaults(fn=_cmd_zeros)

    sp = sub.add_parser("tails", help="tau0 and max-hold survival curves")
    _add_common(sp)
    sp.add_argument("--n", type=int)
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--hold-replicates", dest="hold_replicates", type=int)
    sp.set_defaults(fn=_cmd_tails)

    sp = sub.add_parser("annealed", help="mean mass row vs binomial law")
    _add_common(sp)
    sp.add_argument("--n", type=int)
    sp.add_argument("--replicates", type=int)
    sp.set_defaults(fn=_cmd_annealed)

    sp = sub.add_parser("clt", help="quenched CLT report(s)")
    _add_common(sp)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--envs", type=int)
    sp.set_defaults(fn=_cmd_clt)

    sp = sub.add_parser("mu", help="exact crosser intensity mu_t")
    _add_common(sp, seed=False, threads=False)
    sp.add_argument("--t", type=int)
    sp.set_defaults(fn=_cmd_mu)

    sp = sub.add_parser("selftest", help="reduced-scale acceptance checks")
    sp.add_argument("--threads", type=int)
    sp.set_defaults(fn=_cmd_selftest)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
