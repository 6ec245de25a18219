"""Command-line driver: simulations, sweeps, tables, verification suites.

Exit codes: 0 success, 1 a verification check failed, 2 bad usage or an
invalid configuration.  Every run directory gets a manifest with the config
snapshot, master seed, artifact version, and sha256 digests of the outputs;
rerunning with the same config and seed reproduces the CSV bytes.

Config files are TOML with sections named after the modules they feed
([solver], [experiments], [martingale], [passage], [scaling], [branching],
[gw]); unknown sections or keys are rejected rather than ignored.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
import time
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # stdlib from 3.11; identical API before that
    import tomli as tomllib

import numpy as np

from . import __version__
from .branching import gw_extinction, gw_model, gw_simulate
from .errors import InsufficientDataError
from .kernels import TestFunctionParams, jensen_constants
from .martingale import ensemble_martingale_paths, martingale_diagnostics
from .passage import RuinProblem, brownian_stepper, first_passage_mc, \
    ruin_probability_analytic
from .solver import Domain, Nonlinearity, SolverConfig, bump_profile, \
    make_lattice, run_ensemble, sine_profile
from .util import default_threads, sha256_file, wilson_ci, write_json
from .verify import GW_SWEEP, SUITES, run_suite, suite_scaling, suite_splitting

_KNOWN_SECTIONS = {"solver", "experiments", "martingale", "passage", "scaling",
                   "branching", "gw"}
_SOLVER_KEYS = {"J", "nx", "horizon", "dt_factor", "gamma", "cutoff", "levels",
                "u0", "height", "center", "width"}


class ConfigError(ValueError):
    """Invalid config file or parameter combination; maps to exit code 2."""


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "rb") as f:
            cfg = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        # the decoder message carries line and column
        raise ConfigError(f"{p}: {e}") from e
    unknown = set(cfg) - _KNOWN_SECTIONS
    if unknown:
        raise ConfigError(
            f"{p}: unknown section(s) {sorted(unknown)}; "
            f"expected {sorted(_KNOWN_SECTIONS)}"
        )
    return cfg


def _num(sec: dict, section: str, key: str, default=None, required=False):
    if key not in sec:
        if required:
            raise ConfigError(f"[{section}] is missing required key {key!r}")
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"[{section}] {key} must be a number, got {v!r}")
    return v


def build_solver_config(cfg: dict) -> SolverConfig:
    if "solver" not in cfg:
        raise ConfigError("config needs a [solver] section "
                          "(keys J, nx, horizon at minimum)")
    sec = cfg["solver"]
    unknown = set(sec) - _SOLVER_KEYS
    if unknown:
        raise ConfigError(f"[solver] has unknown key(s) {sorted(unknown)}")
    j = float(_num(sec, "solver", "J", required=True))
    nx = _num(sec, "solver", "nx", required=True)
    if not isinstance(nx, int) or nx < 1:
        raise ConfigError(f"[solver] nx must be a positive integer, got {nx!r}")
    horizon_t = float(_num(sec, "solver", "horizon", required=True))
    dt_factor = float(_num(sec, "solver", "dt_factor", default=0.25))
    gamma = float(_num(sec, "solver", "gamma", default=1.5))
    cutoff = float(_num(sec, "solver", "cutoff", default=1e6))
    levels = sec.get("levels", [])
    if not isinstance(levels, list) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in levels):
        raise ConfigError(f"[solver] levels must be a list of numbers, got {levels!r}")
    kind = sec.get("u0", "bump")
    height = float(_num(sec, "solver", "height", default=1.0))
    dom = Domain(J=j)
    try:
        lat = make_lattice(dom, nx, horizon_t, dt_factor=dt_factor)
        if kind == "bump":
            center = _num(sec, "solver", "center")
            width = _num(sec, "solver", "width")
            u0 = bump_profile(dom, nx, height=height,
                              center=None if center is None else float(center),
                              width=None if width is None else float(width))
        elif kind == "sine":
            u0 = sine_profile(dom, nx, height=height)
        elif kind == "flat":
            u0 = np.full(nx, height)
        else:
            raise ConfigError(
                f"[solver] u0 must be one of bump, sine, flat; got {kind!r}")
        return SolverConfig(dom=dom, lattice=lat, nonlinearity=Nonlinearity(gamma),
                            u0=u0, cutoff=cutoff,
                            levels=tuple(float(v) for v in levels))
    except ConfigError:
        raise
    except ValueError as e:
        # invalid lattice or profile; the message names the violated bound
        raise ConfigError(str(e)) from e


def _experiments(cfg: dict) -> dict:
    return cfg.get("experiments", {})


def _resolve(cli_value, cfg: dict, key: str, fallback):
    if cli_value is not None:
        return cli_value
    v = _experiments(cfg).get(key)
    return fallback if v is None else v


def _resolve_threads(args, cfg: dict) -> int:
    n = int(_resolve(args.threads, cfg, "threads", default_threads()))
    if n < 1:
        raise ConfigError(f"threads must be >= 1, got {n}")
    return n


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_manifest(outdir: Path, command: str, cfg: dict, config_path,
                    seed: int, n_paths: int | None, threads: int | None,
                    t0: float, total_steps: int | None,
                    extra: dict | None = None) -> Path:
    outputs = []
    for f in sorted(outdir.iterdir()):
        if f.is_file() and f.name != "manifest.json":
            outputs.append({"name": f.name, "sha256": sha256_file(f),
                            "bytes": f.stat().st_size})
    payload = {
        "artifact_version": __version__,
        "command": command,
        "config": cfg,
        "config_path": None if config_path is None else str(config_path),
        "seed": seed,
        "n_paths": n_paths,
        "threads": threads,
        "outputs": outputs,
        "total_steps": total_steps,
        "wall_clock_s": round(time.perf_counter() - t0, 3),
    }
    if extra:
        payload.update(extra)
    path = outdir / "manifest.json"
    write_json(path, payload)
    return path


def _outdir(args, command: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    scfg = build_solver_config(cfg)
    seed = int(_resolve(args.seed, cfg, "seed", 0))
    n_paths = int(_resolve(args.paths, cfg, "paths", 10))
    threads = _resolve_threads(args, cfg)
    outdir = _outdir(args, "simulate")

    records = run_ensemble(scfg, seed, n_paths, threads=threads)
    for k, rec in enumerate(records):
        rows = [[lv, rec.hit_times[i], rec.status]
                for i, lv in enumerate(scfg.levels)]
        _write_csv(outdir / f"trajectory_{k:04d}.csv",
                   ["level", "hit_time", "status"], rows)
    _write_csv(outdir / "summary.csv",
               ["path", "status", "status_time", "n_steps", "clamp_count",
                "sup_final"],
               [[k, r.status, r.status_time, r.n_steps, r.clamp_count,
                 float(np.max(r.final.values))] for k, r in enumerate(records)])
    total_steps = int(sum(r.n_steps for r in records))
    _write_manifest(outdir, "simulate", cfg, args.config, seed, n_paths,
                    threads, t0, total_steps)
    print(f"simulate: {n_paths} paths, {total_steps} steps -> {outdir}")
    return 0


def _parse_float_list(raw: str | None, flag: str) -> list[float]:
    if raw is None:
        return []
    vals = []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            vals.append(float(tok))
        except ValueError:
            raise ConfigError(f"{flag} expects comma-separated numbers, "
                              f"got {tok!r}") from None
    return vals


def cmd_sweep_gamma(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    scfg = build_solver_config(cfg)
    gammas = _parse_float_list(args.gammas, "--gammas")
    if not gammas:
        raise ConfigError("--gammas must list at least one exponent")
    l_levels = _parse_float_list(args.l_levels, "--l-levels") or list(scfg.levels)
    seed = int(_resolve(args.seed, cfg, "seed", 0))
    n_paths = int(_resolve(args.paths, cfg, "paths", 100))
    threads = _resolve_threads(args, cfg)
    outdir = _outdir(args, "sweep-gamma")

    rows = []
    total_steps = 0
    for gamma in gammas:
        cfg_g = dataclasses.replace(scfg, nonlinearity=Nonlinearity(float(gamma)),
                                    levels=tuple(sorted(l_levels)))
        # the same (seed, stream) pairs recur for every gamma: paired paths
        records = run_ensemble(cfg_g, seed, n_paths, threads=threads)
        total_steps += int(sum(r.n_steps for r in records))
        cut = sum(r.status == "cutoff_hit" for r in records)
        c_lo, c_hi = wilson_ci(cut, n_paths)
        for i, lv in enumerate(cfg_g.levels):
            hits = [r.hit_times[i] for r in records if r.hit_times[i] is not None]
            h_lo, h_hi = wilson_ci(len(hits), n_paths)
            rows.append([gamma, lv, n_paths,
                         len(hits) / n_paths, h_lo, h_hi,
                         float(np.median(hits)) if hits else None,
                         cut / n_paths, c_lo, c_hi])
        if not cfg_g.levels:
            rows.append([gamma, None, n_paths, None, None, None, None,
                         cut / n_paths, c_lo, c_hi])
    _write_csv(outdir / "sweep.csv",
               ["gamma", "L", "n_paths", "hit_fraction", "hit_ci_low",
                "hit_ci_high", "median_hit_time", "cutoff_fraction",
                "cutoff_ci_low", "cutoff_ci_high"], rows)
    _write_manifest(outdir, "sweep-gamma", cfg, args.config, seed, n_paths,
                    threads, t0, total_steps,
                    extra={"gammas": gammas, "l_levels": sorted(l_levels)})
    print(f"sweep-gamma: {len(gammas)} exponents x {n_paths} paths -> {outdir}")
    return 0


def cmd_martingale_check(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    scfg = build_solver_config(cfg)
    sec = cfg.get("martingale", {})
    unknown = set(sec) - {"T", "center"}
    if unknown:
        raise ConfigError(f"[martingale] has unknown key(s) {sorted(unknown)}")
    lat = scfg.lattice
    t_end = lat.nt * lat.dt
    big_t = float(_num(sec, "martingale", "T", default=t_end))
    if big_t < t_end:
        raise ConfigError(f"[martingale] T={big_t} is shorter than the "
                          f"lattice end time {t_end}")
    center = float(_num(sec, "martingale", "center", default=scfg.dom.J / 2.0))
    p = TestFunctionParams(T=big_t, center=center)
    seed = int(_resolve(args.seed, cfg, "seed", 0))
    n_paths = int(_resolve(args.paths, cfg, "paths", 1000))
    outdir = _outdir(args, "martingale-check")

    ens = ensemble_martingale_paths(scfg, seed, n_paths, p)
    rep = martingale_diagnostics(ens, jensen_constants(scfg.nonlinearity.gamma), p)
    ok = rep["supermartingale_ok"] and rep["qv_ratio_ok"] and rep["angle_ok"]
    rep["all_pass"] = bool(ok)
    write_json(outdir / "diagnostics.json", rep)
    _write_manifest(outdir, "martingale-check", cfg, args.config, seed, n_paths,
                    None, t0, None)
    print(f"martingale-check: drift<=0 {rep['supermartingale_ok']}, "
          f"qv_ratio {rep['qv_ratio']:.4f}, angle {rep['angle_fraction']:.3f} "
          f"-> {outdir}")
    return 0 if ok else 1


def cmd_ruin(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    sec = cfg.get("passage", {})
    unknown = set(sec) - {"levels", "dt", "start", "lower"}
    if unknown:
        raise ConfigError(f"[passage] has unknown key(s) {sorted(unknown)}")
    uppers = sec.get("levels", [3.0, 5.0, 10.0])
    dt = float(_num(sec, "passage", "dt", default=0.02))
    start = float(_num(sec, "passage", "start", default=2.0))
    lower = float(_num(sec, "passage", "lower", default=1.0))
    seed = int(_resolve(args.seed, cfg, "seed", 0))
    n_paths = int(_resolve(args.paths, cfg, "paths", 100_000))
    outdir = _outdir(args, "ruin")

    rows = []
    for i, upper in enumerate(uppers):
        try:
            prob = RuinProblem(upper=float(upper), start=start, lower=lower)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        res = first_passage_mc(brownian_stepper, prob, n_paths,
                               seed=seed, stream=i, dt=dt)
        rows.append([float(upper), n_paths, res.hit_upper_fraction,
                     res.ci_low, res.ci_high, ruin_probability_analytic(prob),
                     res.timeout_fraction])
    _write_csv(outdir / "ruin.csv",
               ["L", "n_paths", "hit_fraction", "ci_low", "ci_high",
                "analytic", "timeout_fraction"], rows)
    _write_manifest(outdir, "ruin", cfg, args.config, seed, n_paths, None, t0, None)
    print(f"ruin: {len(rows)} barrier levels x {n_paths} paths -> {outdir}")
    return 0


def cmd_scaling_check(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    seed = int(_resolve(args.seed, cfg, "seed", 0))
    n_paths = int(_resolve(args.paths, cfg, "paths", 1000))
    outdir = _outdir(args, "scaling-check")

    rep = suite_scaling(negative_control=args.negative_control, seed=seed,
                        n_paths=n_paths)
    write_json(outdir / "scaling_report.json", rep)
    _write_manifest(outdir, "scaling-check", cfg, args.config, seed, n_paths,
                    None, t0, None)
    _print_checks(rep)
    return 0 if rep["all_pass"] else 1


def cmd_splitting(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    seed = int(_resolve(args.seed, cfg, "seed", 0))
    n_paths = int(_resolve(args.paths, cfg, "paths", 1000))
    outdir = _outdir(args, "splitting")

    rep = suite_splitting(negative_control=args.negative_control, seed=seed,
                          n_paths=n_paths)
    write_json(outdir / "splitting_report.json", rep)
    _write_manifest(outdir, "splitting", cfg, args.config, seed, n_paths,
                    None, t0, None)
    _print_checks(rep)
    return 0 if rep["all_pass"] else 1


def cmd_gw(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    sec = cfg.get("gw", {})
    unknown = set(sec) - {"generations", "trees", "sweep"}
    if unknown:
        raise ConfigError(f"[gw] has unknown key(s) {sorted(unknown)}")
    generations = int(_num(sec, "gw", "generations", default=256))
    trees = int(_num(sec, "gw", "trees", default=20_000))
    sweep = sec.get("sweep", [list(row) for row in GW_SWEEP])
    seed = int(_resolve(args.seed, cfg, "seed", 0))
    outdir = _outdir(args, "gw")

    rows = []
    for k, entry in enumerate(sweep):
        if not (isinstance(entry, list) and len(entry) == 3):
            raise ConfigError(f"[gw] sweep entries must be [gamma, L, K] "
                              f"triples, got {entry!r}")
        gamma, level, k_const = (float(v) for v in entry)
        try:
            model = gw_model(gamma, level, k_const)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        q = gw_extinction(model)
        sim = gw_simulate(model, generations, trees, seed + k)
        rows.append([gamma, level, k_const, model.p, model.n_offspring,
                     model.mean, q, sim.survival_frequency,
                     sim.ci_low, sim.ci_high])
    _write_csv(outdir / "gw.csv",
               ["gamma", "L", "K", "p", "N", "mean", "extinction_prob",
                "simulated_survival", "ci_low", "ci_high"], rows)
    _write_manifest(outdir, "gw", cfg, args.config, seed, trees, None, t0, None,
                    extra={"generations": generations})
    print(f"gw: {len(rows)} models x {trees} trees -> {outdir}")
    return 0


def _print_checks(rep: dict) -> None:
    for c in rep["checks"]:
        mark = "PASS" if c["pass"] else "FAIL"
        print(f"[{mark}] {rep['suite']}.{c['name']}")


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    seed = 0 if args.seed is None else int(args.seed)
    rep = run_suite(args.suite, negative_control=args.negative_control, seed=seed)
    outdir = _outdir(args, "verify")
    write_json(outdir / f"verify_{args.suite}.json", rep)
    if args.suite == "all":
        for sub in rep["suites"]:
            _print_checks(sub)
    else:
        _print_checks(rep)
    _write_manifest(outdir, "verify", {}, None, seed, None, None, t0, None,
                    extra={"suite": args.suite,
                           "negative_control": args.negative_control})
    verdict = "pass" if rep["all_pass"] else "FAIL"
    print(f"verify {args.suite}: {verdict} ({rep['elapsed_s']}s)")
    return 0 if rep["all_pass"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shelab",
        description="Desk-scale laboratory for stochastic heat equation "
                    "blow-up machinery.")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML config file")
    common.add_argument("--seed", type=int, metavar="U64",
                        help="master seed (default: config, then 0)")
    common.add_argument("--paths", type=int, metavar="N",
                        help="number of sample paths")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (default: runs/<command>)")
    common.add_argument("--threads", type=int, metavar="N",
                        help="worker threads (default: SHELAB_THREADS, then 1)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="run an ensemble, write trajectory tables")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-gamma", parents=[common],
                       help="level-crossing table over noise exponents, "
                            "paired seeds")
    p.add_argument("--gammas", metavar="LIST", required=True,
                   help="comma-separated noise exponents")
    p.add_argument("--l-levels", metavar="LIST",
                   help="comma-separated crossing levels "
                        "(default: [solver] levels)")
    p.set_defaults(func=cmd_sweep_gamma)

    p = sub.add_parser("martingale-check", parents=[common],
                       help="drift, quadratic variation, and angle "
                            "diagnostics for the weighted mass")
    p.set_defaults(func=cmd_martingale_check)

    p = sub.add_parser("ruin", parents=[common],
                       help="Brownian first-passage table vs the exact "
                            "two-barrier probabilities")
    p.set_defaults(func=cmd_ruin)

    p = sub.add_parser("scaling-check", parents=[common],
                       help="lattice commutation and pathwise distribution "
                            "checks for the rescaling map")
    p.add_argument("--negative-control", action="store_true",
                   help="corrupt the noise exponent; the check must fail")
    p.set_defaults(func=cmd_scaling_check)

    p = sub.add_parser("splitting", parents=[common],
                       help="noise-splitting identities and summed-system "
                            "distribution check")
    p.add_argument("--negative-control", action="store_true",
                   help="decouple the components; the check must fail")
    p.set_defaults(func=cmd_splitting)

    p = sub.add_parser("gw", parents=[common],
                       help="branching surrogate table: offspring means, "
                            "extinction fixed points, simulated survival")
    p.set_defaults(func=cmd_gw)

    p = sub.add_parser("verify", parents=[common],
                       help="named verification suites with pass/fail "
                            "verdicts")
    p.add_argument("suite", choices=SUITES + ("all",))
    p.add_argument("--negative-control", action="store_true",
                   help="corrupt one ingredient per suite; suites must fail")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except InsufficientDataError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
