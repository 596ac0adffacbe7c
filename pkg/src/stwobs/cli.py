"""Command-line interface: ``python -m stwobs <command> ...``.

Exit codes: 0 success, 1 infeasible design, 2 configuration or input error,
3 runtime abort.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CONFIG_DIR_ENV = "STWOBS_CONFIG_DIR"
DEFAULT_CONFIG_NAME = "default.cfg"


@dataclass
class CommandOutcome:
    code: int
    report: str
    artifacts: list = field(default_factory=list)


def resolve_config_path(path):
    """Locate a config file; relative names fall back to ``$STWOBS_CONFIG_DIR``.

    With no path, ``$STWOBS_CONFIG_DIR/default.cfg`` is used when the
    variable is set, otherwise built-in defaults (``None``).
    """
    env = os.environ.get(CONFIG_DIR_ENV)
    if path is None:
        if env:
            return Path(env) / DEFAULT_CONFIG_NAME
        return None
    p = Path(path)
    if not p.exists() and not p.is_absolute() and env and (Path(env) / p).exists():
        return Path(env) / p
    return p


def _load(path):
    from .config import ScenarioConfig, load_config
    resolved = resolve_config_path(path)
    return ScenarioConfig() if resolved is None else load_config(resolved)


def cmd_design(config_path=None):
    from .config import ConfigError
    from .design import InfeasibleDesign
    from .simkit import prepare
    try:
        cfg = _load(config_path)
    except ConfigError as exc:
        return CommandOutcome(EXIT_CONFIG, f"config error: {exc}")
    try:
        sc = prepare(cfg)
    except InfeasibleDesign as exc:
        return CommandOutcome(EXIT_INFEASIBLE, f"design infeasible: {exc}")
    report = sc.certificate.report()
    return CommandOutcome(EXIT_OK if sc.certificate.accepted else EXIT_INFEASIBLE, report)


def _settling_time(t, fhat, f, t_on, tol=0.05):
    """First time after ``t_on`` from which ``|fhat - f| < tol |f|`` holds to the end."""
    m = t >= t_on
    bad = np.nonzero(m & ~(np.abs(fhat - f) < tol * np.abs(f)))[0]
    if len(bad) == 0:
        return t_on
    if bad[-1] == len(t) - 1:
        return math.nan
    return t[bad[-1] + 1]


def summarize(tr, cfg):
    t = tr.t
    e2 = np.sqrt(sum(tr[c] ** 2 for c in tr.columns if c.startswith("e2_")))
    lines = [
        f"samples              : {len(tr)} (t = {t[0]:g} .. {t[-1]:g} s)",
        f"final |e2|           : {e2[-1]:.3e}",
        f"final theta error    : {tr['theta_hat'][-1] - tr['theta'][-1]:+.4e} A"
        f" (relative {abs(tr['theta_hat'][-1] - tr['theta'][-1]) / max(abs(tr['theta'][-1]), 1e-300):.2e})",
    ]
    f, fhat = tr["f"], tr["fhat"]
    active = np.nonzero(f != 0)[0]
    if len(active) == 0:
        lines.append("fault                : none active in this run")
        lines.append(f"max |fhat|           : {np.nanmax(np.abs(fhat)):.3e} kg/s")
    else:
        t_on = t[active[0]]
        ts = _settling_time(t, fhat, f, t_on)
        steady = np.abs(fhat[-1] - f[-1]) / abs(f[-1])
        lines.append(f"fault                : step detected, active from t = {t_on:g} s")
        lines.append(f"fhat settling (5%)   : "
                     + ("not settled" if math.isnan(ts) else f"{ts - t_on:.4f} s after onset"))
        lines.append(f"fhat steady error    : {steady:.3e} (relative, final sample)")
    return "\n".join(lines)


def cmd_simulate(config_path=None, out_dir="out", seed=None):
    from .config import ConfigError
    from .design import InfeasibleDesign
    from .simkit import SimulationAbort, prepare, run_scenario, trace_output_path, write_trace
    try:
        cfg = _load(config_path)
        if seed is not None:
            cfg = cfg.with_changes(simulation={"seed": int(seed)})
    except (ConfigError, ValueError) as exc:
        return CommandOutcome(EXIT_CONFIG, f"config error: {exc}")
    try:
        sc = prepare(cfg)
        if not sc.certificate.accepted:
            return CommandOutcome(EXIT_INFEASIBLE, sc.certificate.report())
        tr = run_scenario(cfg, scenario=sc)
    except InfeasibleDesign as exc:
        return CommandOutcome(EXIT_INFEASIBLE, f"design infeasible: {exc}")
    except SimulationAbort as exc:
        return CommandOutcome(EXIT_RUNTIME, f"simulation aborted: {exc}")
    except (ValueError, RuntimeError) as exc:
        return CommandOutcome(EXIT_RUNTIME, f"simulation failed: {exc}")
    path = trace_output_path(cfg, out_dir)
    write_trace(tr, path)
    from .simkit import meta_path
    return CommandOutcome(EXIT_OK, summarize(tr, cfg), [str(path), str(meta_path(path))])


def cmd_plot(trace_path, out_dir="plots"):
    from .plots import PLOT_COLUMNS, write_plots
    from .simkit import TraceFormatError, read_trace
    try:
        tr = read_trace(trace_path, required=PLOT_COLUMNS)
    except FileNotFoundError:
        return CommandOutcome(EXIT_CONFIG, f"no such trace file: {trace_path}")
    except TraceFormatError as exc:
        return CommandOutcome(EXIT_CONFIG, f"bad trace: {exc}")
    if len(tr) == 0:
        return CommandOutcome(EXIT_CONFIG, f"bad trace: {trace_path} has no samples")
    paths = write_plots(tr, out_dir, trace_path)
    return CommandOutcome(EXIT_OK, "\n".join(f"wrote {p}" for p in paths), [str(p) for p in paths])


def cmd_diffbench(signal, l0, dt, duration):
    from .diffbench import SIGNALS, run_benchmark
    if signal not in SIGNALS:
        return CommandOutcome(EXIT_CONFIG, f"unknown signal {signal!r}; choose from "
                              + ", ".join(sorted(SIGNALS)))
    try:
        res = run_benchmark(signal, l0, dt, duration)
    except ValueError as exc:
        return CommandOutcome(EXIT_CONFIG, f"bad arguments: {exc}")
    return CommandOutcome(EXIT_OK, res.report())


def _config_help():
    from .config import SECTIONS, ScenarioConfig, _fmt
    cfg = ScenarioConfig()
    lines = ["config keys (section, key, default):"]
    for name in SECTIONS:
        sec = getattr(cfg, name)
        for f in fields(sec):
            lines.append(f"  [{name}] {f.name} = {_fmt(getattr(sec, f.name))}")
    lines.append(f"relative config paths are also looked up in ${CONFIG_DIR_ENV};"
                 f" with no path, ${CONFIG_DIR_ENV}/{DEFAULT_CONFIG_NAME} or built-in defaults are used")
    return "\n".join(lines)


def build_parser():
    p = argparse.ArgumentParser(
        prog="stwobs",
        description="Adaptive super-twisting observer: design checks, simulation, plots.",
        epilog=_config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="solve and check the design conditions")
    d.add_argument("config", nargs="?", help="scenario config file")

    s = sub.add_parser("simulate", help="run a scenario and write its trace")
    s.add_argument("config", nargs="?", help="scenario config file")
    s.add_argument("--out", default="out", help="output directory (default: out)")
    s.add_argument("--seed", type=int, default=None, help="override the noise seed")

    pl = sub.add_parser("plot", help="write SVG figures and a gnuplot script for a trace")
    pl.add_argument("trace", help="trace CSV written by simulate")
    pl.add_argument("--out", default="plots", help="output directory (default: plots)")

    b = sub.add_parser("diffbench", help="benchmark the robust differentiator")
    b.add_argument("--signal", required=True, help="constant, ramp, sine or chirp")
    b.add_argument("--l0", type=float, required=True, help="differentiator gain L0")
    b.add_argument("--dt", type=float, required=True, help="step size, s")
    b.add_argument("--duration", type=float, required=True, help="length, s")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.command == "design":
        out = cmd_design(args.config)
    elif args.command == "simulate":
        out = cmd_simulate(args.config, args.out, args.seed)
    elif args.command == "plot":
        out = cmd_plot(args.trace, args.out)
    else:
        out = cmd_diffbench(args.signal, args.l0, args.dt, args.duration)
    stream = sys.stdout if out.code == EXIT_OK else sys.stderr
    print(out.report, file=stream)
    for a in out.artifacts:
        print(f"artifact: {a}")
    return out.code


if __name__ == "__main__":
    sys.exit(main())
