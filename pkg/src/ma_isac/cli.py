"""Command-line entry point.

Subcommands: run, sweep, beampattern, gainmap, selftest. Exit codes: 0 success,
1 infeasible, 2 usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .ao import AoConfig, Scheme, compare_schemes, evaluate_solution, run_algorithm1
from .bench import (
    SWEEP_PARAMS,
    BeampatternRequest,
    SweepSpec,
    beampattern,
    channel_gain_map,
    run_sweep,
    summarize,
    summary_path,
    target_direction,
)
from .channel import CONFIG_SCHEMA, ScenarioConfig, dump_realization, linear_to_db, load_config, sample_realization
from .convex import InfeasibleError, SolverError

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _schema() -> str:
    schemes = ", ".join(s.value for s in Scheme)
    params = "\n".join(f"  {k:<8} {v}" for k, v in SWEEP_PARAMS.items())
    return f"{CONFIG_SCHEMA}\nSchemes: {schemes}\nSweep parameters:\n{params}\n"


def _f(x) -> str:
    return repr(float(x))


def _parse_list(text, kind=float):
    try:
        return [kind(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad list {text!r}: {exc}") from None


def _parse_seeds(args):
    if args.seeds is None:
        return [args.seed]
    if "," in args.seeds or "-" in args.seeds:
        seeds = []
        for part in args.seeds.split(","):
            if "-" in part:
                a, b = part.split("-", 1)
                seeds.extend(range(int(a), int(b) + 1))
            elif part.strip():
                seeds.append(int(part))
        return seeds
    return [args.seed + i for i in range(int(args.seeds))]


def _schemes(text):
    try:
        return [Scheme.parse(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config(args) -> ScenarioConfig:
    if args.config is None:
        return ScenarioConfig()
    try:
        return load_config(args.config)
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ma-isac", description="Movable-antenna ISAC beamforming and position optimization.")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", type=Path, help="scenario config file (key = value lines)")
        sp.add_argument("--seed", type=int, default=0, help="realization seed")
        sp.add_argument("--out", type=Path, help="output file")
        sp.add_argument("--iter-max", type=int, default=30)
        sp.add_argument("--tol", type=float, default=1e-3)

    sp = sub.add_parser("run", help="optimize one realization")
    common(sp)
    sp.add_argument("--scheme", default="proposed")
    sp.add_argument("--trace", type=Path, help="write per-stage objective trace here")
    sp.add_argument("--dump-realization", type=Path, help="write the sampled paths here")

    sp = sub.add_parser("sweep", help="sweep one parameter over seeds and schemes")
    common(sp)
    sp.add_argument("--param", required=True)
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--scheme", default="fpa,receive_ma,transmit_ma,proposed")
    sp.add_argument("--seeds", help="count (from --seed), or list/ranges like 0-9,12")
    sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("beampattern", help="transmit gain versus elevation toward the target azimuth")
    common(sp)
    sp.add_argument("--scheme", default="fpa,transmit_ma")
    sp.add_argument("--points", type=int, default=361)
    sp.add_argument("--normalize", action="store_true")

    sp = sub.add_parser("gainmap", help="single-antenna target channel power over the receive region")
    common(sp)
    sp.add_argument("--resolution", type=int, default=61)
    sp.add_argument("--scheme", default=None, help="also list optimized receive positions of this scheme")

    sub.add_parser("selftest", help="run a quick invariant check suite")
    return p


def _ao(args, scheme=Scheme.PROPOSED) -> AoConfig:
    return AoConfig(tol=args.tol, iter_max=args.iter_max, scheme=scheme)


def cmd_run(args) -> int:
    config = _config(args)
    (scheme,) = _schemes(args.scheme)[:1] or [Scheme.PROPOSED]
    realization = sample_realization(config, args.seed)
    if args.dump_realization:
        args.dump_realization.write_text(dump_realization(realization))
    sol = run_algorithm1(realization, config, _ao(args, scheme))
    ev = evaluate_solution(sol, realization, config)
    lines = [
        f"scheme {scheme.value}",
        f"seed {args.seed}",
        f"sensing_sinr {_f(sol.sensing_sinr)}",
        f"sensing_sinr_db {_f(linear_to_db(sol.sensing_sinr))}",
        "comm_sinr " + " ".join(repr(float(c)) for c in sol.comm_sinrs),
        f"iterations {sol.iterations}",
        f"converged {int(sol.converged)}",
        f"violations {len(ev.violations)}",
    ]
    lines += [f"tx {i} {_f(x)} {_f(y)}" for i, (x, y) in enumerate(sol.layout.tx)]
    lines += [f"rx {i} {_f(x)} {_f(y)}" for i, (x, y) in enumerate(sol.layout.rx)]
    for n, w in enumerate(sol.beams.tx):
        lines.append(f"w {n} " + " ".join(f"{_f(z.real)}{float(z.imag):+}j" for z in w))
    lines.append("u " + " ".join(f"{_f(z.real)}{float(z.imag):+}j" for z in sol.beams.rx))
    text = "\n".join(lines) + "\n"
    if args.out:
        args.out.write_text(text)
    print("\n".join(lines[:8]))
    if args.trace:
        args.trace.write_text(sol.trace_text())
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = _config(args)
    values = _parse_list(args.values)
    if args.param not in SWEEP_PARAMS:
        raise UsageError(f"unknown sweep parameter {args.param!r}")
    spec = SweepSpec(args.param, tuple(values), tuple(_parse_seeds(args)), tuple(_schemes(args.scheme)), args.out)
    rows = run_sweep(spec, base, _ao(args), workers=max(1, args.workers))
    for s in summarize(rows):
        print(f"{s.param}={s.value:g} {s.scheme:<12} runs={s.runs} mean_db={s.mean_sinr_db:.3f}")
    if args.out:
        print(f"wrote {args.out} and {summary_path(args.out)}")
    return EXIT_OK


def cmd_beampattern(args) -> int:
    config = _config(args)
    schemes = _schemes(args.scheme)
    realization = sample_realization(config, args.seed)
    sols = compare_schemes(realization, config, _ao(args), schemes)
    el0, az0 = target_direction(realization)
    grid = np.linspace(-np.pi / 2, np.pi / 2, args.points)
    cols = {}
    for s in schemes:
        sol = sols[s]
        req = BeampatternRequest(grid, az0, sol.layout.tx, sol.beams.tx, config.wavelength, args.normalize)
        cols[s.value] = beampattern(req)
    lines = [f"# seed={args.seed} target_elevation={_f(el0)} azimuth={_f(az0)}", "elevation," + ",".join(f"gain_{k}" for k in cols)]
    for i, el in enumerate(grid):
        lines.append(f"{_f(el)}," + ",".join(repr(float(c[i])) for c in cols.values()))
    _emit(args.out, lines)
    return EXIT_OK


def cmd_gainmap(args) -> int:
    config = _config(args)
    realization = sample_realization(config, args.seed)
    gm = channel_gain_map(config.region, args.resolution, realization.rx_paths[0], config.wavelength)
    lines = [f"# seed={args.seed} resolution={args.resolution}"]
    if args.scheme:
        (scheme,) = _schemes(args.scheme)[:1]
        sol = run_algorithm1(realization, config, _ao(args, scheme))
        for m, (x, y) in enumerate(sol.layout.rx):
            lines.append(f"# rx {m} {_f(x)} {_f(y)} top_half={int(gm.in_top_half([(x, y)])[0])}")
    lines.append("x,y,gain")
    for j, y in enumerate(gm.ys):
        for i, x in enumerate(gm.xs):
            lines.append(f"{_f(x)},{_f(y)},{_f(gm.gains[j, i])}")
    _emit(args.out, lines)
    return EXIT_OK


def _emit(out, lines):
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
        print(f"wrote {out}")
    else:
        sys.stdout.write(text)


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    failures = run_selftest()
    for name, ok, detail in failures:
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")
    return EXIT_OK if all(ok for _, ok, _ in failures) else EXIT_NUMERICAL


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "beampattern": cmd_beampattern,
    "gainmap": cmd_gainmap,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}\n", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr)
        print(_schema(), file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
