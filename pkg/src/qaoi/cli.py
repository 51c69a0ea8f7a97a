"""``qaoi`` command line: solve, simulate, compare, reproduce."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import experiments as ex
from .delays import DistributionError
from .penalty import PenaltyError
from .policy import PolicyError, pow_grid, uow_optimal_policy, zero_wait
from .simulate import SimulationError, make_schedule, replicate, schedule_seed, simulate
from .solver import RefinedSolution, SolverError, load_solution, save_solution

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("qaoi")


class ConfigError(ValueError):
    pass


def read_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment, dashes and underscores are interchangeable."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        if not eq:
            raise ConfigError(f"{path}:{n}: expected key=value")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file supplying defaults for any flag")
    p.add_argument("--dist", help="delay law, e.g. exp:lambda=1, pareto:xm=1,alpha=3, det:d=1.5")
    p.add_argument("--penalty", help="identity, exp:alpha=2, affine:a=1,b=0 or table:file.csv")
    p.add_argument("--q", type=float, help="single-query horizon and query period (default period-mult * B_U)")
    p.add_argument("--period-mult", type=float, help="horizon as a multiple of the maximum delay (default 4)")
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--step", type=float, help="grid step (default 0.05)")
    grid.add_argument("--n", type=int, help="number of grid intervals")
    p.add_argument("--eps", type=float, help="refine the grid until upper - lower < eps")
    p.add_argument("--wait-cap", type=float, help="maximum wait M (default Q)")
    p.add_argument("--lower-mode", choices=("clamp", "keep"), help="zero-delay handling of the lower bound")
    p.add_argument("--horizon", type=float, help="simulated time (default horizon-periods * T)")
    p.add_argument("--horizon-periods", type=float)
    p.add_argument("--reps", type=int, help="replications (default 8)")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--workers", type=int, help="process pool size")
    p.add_argument("--out", help="output path")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qaoi", description="Query-aware age-of-information policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="compute the grid-optimal policy and its bounds")
    _common(p)

    p = sub.add_parser("simulate", help="simulate one policy")
    _common(p)
    p.add_argument("--policy", choices=ex.POLICY_NAMES, default="pow")
    p.add_argument("--solution", help="load a saved pow solution instead of solving")
    p.add_argument("--queries", choices=("periodic", "poisson"), default="periodic")
    p.add_argument("--trajectory", help="write the event trajectory of the first replication as CSV")

    p = sub.add_parser("compare", help="simulate several policies side by side")
    _common(p)
    p.add_argument("--policies", default=",".join(ex.POLICY_NAMES))
    p.add_argument("--solution", help="load a saved pow solution instead of solving")

    p = sub.add_parser("reproduce", help="regenerate a table or figure data set")
    _common(p)
    p.add_argument("target", choices=ex.TARGETS)
    p.add_argument("--check", action="store_true", help="exit 4 when results deviate beyond tolerance")
    return parser


_CFG_FIELDS = {f.name for f in fields(ex.ExperimentConfig)}


def to_config(args: argparse.Namespace) -> ex.ExperimentConfig:
    kw = {k: v for k, v in vars(args).items() if k in _CFG_FIELDS and v is not None}
    if kw.get("reps", 2) < 2:
        raise ConfigError("--reps must be at least 2 to form a confidence interval")
    if kw.get("workers", 1) < 1:
        raise ConfigError("--workers must be positive")
    return ex.ExperimentConfig(**kw)


def _apply_config_file(parser, argv):
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    values = read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        act = actions.get(key)
        if act is None or key in ("config", "help"):
            raise ConfigError(f"unknown config key {key!r}")
        if act.nargs == 0:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                defaults[key] = act.type(raw) if act.type else raw
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _write_csv(header, rows, out: str | None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    if out:
        Path(out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _load_pow(path: str) -> RefinedSolution:
    sol = load_solution(path)
    if not isinstance(sol, RefinedSolution):
        raise ConfigError(f"{path} does not hold a refined solution")
    return sol


def cmd_solve(args) -> int:
    cfg = to_config(args)
    sol = ex.solve_config(cfg)
    if args.out:
        save_solution(sol, args.out)
    print(
        f"lower={sol.lower_bound:.6f} upper={sol.upper_bound:.6f} "
        f"border_offset={sol.border_offset:.6g} N={sol.n_final} step={sol.effective_step:.6g} "
        f"evaluations={sol.evaluations} converged={sol.converged}"
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = to_config(args)
    dist, g = cfg.distribution(), cfg.penalty_fn()
    T = cfg.horizon_q(dist)
    horizon = cfg.sim_horizon(T)
    if args.policy in ("pow", "uow-constrained"):
        sol = _load_pow(args.solution) if args.solution else ex.solve_config(cfg)
        pol = pow_grid(sol.upper_solution, T)
        if args.policy == "uow-constrained":
            cyc = replicate(pol, dist, ("periodic", T), horizon, cfg.reps, cfg.seed, g).mean_cycle
            pol, _ = uow_optimal_policy(dist, g, min_mean_cycle=cyc)
    elif args.policy == "uow":
        pol, _ = uow_optimal_policy(dist, g)
    else:
        pol = zero_wait()
    param = 1.0 / T if args.queries == "poisson" else T
    agg = replicate(pol, dist, (args.queries, param), horizon, cfg.reps, cfg.seed, g, workers=cfg.workers)
    row = {"policy": args.policy, "describe": pol.describe(), **agg.as_row()}
    _write_csv(list(row), [list(row.values())], args.out)
    if args.trajectory:
        rng = schedule_seed(cfg.seed) if args.queries == "poisson" else None
        sched = make_schedule(args.queries, param, horizon, rng)
        simulate(pol, dist, sched, cfg.seed).dump_csv(args.trajectory, sched.instants)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = to_config(args)
    names = [p.strip() for p in args.policies.split(",") if p.strip()]
    bad = [p for p in names if p not in ex.POLICY_NAMES]
    if bad:
        raise ConfigError(f"unknown policies {bad}; choose from {', '.join(ex.POLICY_NAMES)}")
    sol = _load_pow(args.solution) if args.solution else None
    rows = ex.compare_policies(cfg, names, sol)
    header = list(rows[0])
    _write_csv(header, [list(r.values()) for r in rows], args.out)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = to_config(args)
    res = ex.reproduce(args.target, workers=cfg.workers, reps=cfg.reps, horizon_periods=cfg.horizon_periods,
                       seed=cfg.seed, lower_mode=cfg.lower_mode)
    out = args.out or f"{args.target}.csv"
    _write_csv(res.header, res.rows, out)
    msg = f"wrote {out}"
    if res.deviation is not None:
        label = "max ratio to reference" if args.target == "table3" else "max abs deviation from reference"
        msg += f"; {label}: {res.deviation:.4g}"
    print(msg)
    for f in res.failures or ():
        print(f"  deviation: {f}", file=sys.stderr)
    if args.check and res.failures:
        return EXIT_CHECK
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "compare": cmd_compare, "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except ConfigError as exc:
        print(f"qaoi: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DistributionError, PenaltyError, PolicyError) as exc:
        print(f"qaoi: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SimulationError, ArithmeticError) as exc:
        print(f"qaoi: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
