"""Command-line entry points.

Five subcommands, each driven by a strict JSON config: simulate (one
trajectory to CSV), sweep (steady state vs a gain grid), tune (gain
search toward a Bloch target), compare (moment engine vs exact filter
on matched noise), collapse (terminal-state statistics against the
initial distribution).  Exit codes: 0 success, 2 config error, 3
numerical abort (guard or trace blow-up, too many uncollapsed runs),
4 failed --check expectations.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import (load_collapse_config, load_compare_config,
                     load_run_config, load_sweep_config, load_tune_config)
from .errors import CollapseError, ConfigError, DivergenceError, IntegratorError
from .harness import collapse_statistics, compare_engines, run_sweep, tune_gains
from .moments import simulate_moments
from .records import InnovationSequence
from .sme import simulate_sme
from . import reports

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICS = 3
EXIT_CHECK = 4


def _out_dir(args, cfg_out) -> Path:
    out = args.out if args.out is not None else cfg_out
    if out is None:
        out = "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _apply_seed(params, args):
    if args.seed is None:
        return params
    if args.seed < 0:
        raise ConfigError(f"--seed must be a 64-bit unsigned integer, got {args.seed}")
    return replace(params, seed=args.seed)


def _run_checks(check_path, values: dict) -> int:
    """Evaluate a JSON expectation file against computed scalar values.

    The file holds {"checks": [{"name": <key>, "op": one of
    min/max/abs_max/equals, "value": number}, ...]}; name must be one of
    the scalars the subcommand published.  Returns the number of failed
    checks and prints one line per check.
    """
    import json
    try:
        doc = json.loads(Path(check_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read check file {check_path}: {exc}") from exc
    if not isinstance(doc, dict) or "checks" not in doc \
            or not isinstance(doc["checks"], list):
        raise ConfigError("check file must hold a list under \"checks\"")
    failed = 0
    for i, chk in enumerate(doc["checks"]):
        if not isinstance(chk, dict) or not {"name", "op", "value"} <= set(chk):
            raise ConfigError(f"check {i}: needs name, op, and value")
        name, op, bound = chk["name"], chk["op"], chk["value"]
        if name not in values:
            raise ConfigError(
                f"check {i}: unknown value {name!r}; available: {sorted(values)}")
        x = values[name]
        if op == "min":
            ok = x >= bound
        elif op == "max":
            ok = x <= bound
        elif op == "abs_max":
            ok = abs(x) <= bound
        elif op == "equals":
            ok = x == bound
        else:
            raise ConfigError(f"check {i}: unknown op {op!r}")
        status = "ok" if ok else "FAILED"
        print(f"check {name} {op} {bound}: got {x:.6g} ... {status}")
        failed += 0 if ok else 1
    return failed


def _cmd_simulate(args) -> int:
    cfg = load_run_config(args.config)
    params = _apply_seed(cfg.params, args)
    innovations = InnovationSequence.generate(params, trajectory_index=0)
    kwargs = dict(law=cfg.law, target=cfg.target, stride=cfg.stride,
                  feedback_delay_steps=cfg.feedback_delay_steps,
                  innovations=innovations, trajectory_index=0)
    if cfg.engine == "moment":
        record = simulate_moments(params, unnormalized_yz=cfg.unnormalized_yz,
                                  **kwargs)
    else:
        record = simulate_sme(params, **kwargs)
    out = _out_dir(args, cfg.out_dir)
    artifacts = ["trajectory.csv", "metadata.json"]
    if args.plot:
        artifacts.append("trajectory.svg")
    raw = dict(cfg.raw(), params=dict(cfg.raw()["params"], seed=params.seed))
    reports.write_trajectory_csv(out / "trajectory.csv", record, params.seed)
    reports.write_json(out / "metadata.json",
                       reports.provenance("simulate", raw, params.seed,
                                          params.tau0, artifacts))
    if args.plot:
        reports.plot_trajectory(out / "trajectory.svg", record)
    final = record.moments_at(len(record) - 1)
    print(f"simulate: engine={cfg.engine} N={params.n_atoms} steps={params.n_steps} "
          f"final (sx, sy, sz) = ({final.sx:+.4f}, {final.sy:+.4f}, {final.sz:+.4f})")
    print(f"wrote {out / 'trajectory.csv'}")
    if args.check:
        values = {"final_sx": final.sx, "final_sy": final.sy, "final_sz": final.sz,
                  "final_variance": float(record.variance[-1])}
        if record.purity is not None:
            values["final_purity"] = float(record.purity[-1])
        if _run_checks(args.check, values):
            return EXIT_CHECK
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_sweep_config(args.config)
    params = _apply_seed(cfg.params, args)
    result = run_sweep(cfg.spec, params, stride=cfg.stride)
    out = _out_dir(args, cfg.out_dir)
    artifacts = ["sweep.csv", "metadata.json"]
    if args.plot:
        artifacts.append("sweep.svg")
    raw = dict(cfg.raw(), params=dict(cfg.raw()["params"], seed=params.seed))
    reports.write_sweep_csv(out / "sweep.csv", result, params.seed)
    doc = reports.provenance("sweep", raw, params.seed, params.tau0, artifacts)
    doc["report"] = reports.sweep_report(result)
    reports.write_json(out / "metadata.json", doc)
    if args.plot:
        reports.plot_sweep(out / "sweep.svg", result)
    ndiv = int(result.n_diverged.sum())
    print(f"sweep: {cfg.spec.entry} over {len(result)} points x "
          f"{cfg.spec.repetitions} reps ({cfg.spec.engine} engine), "
          f"{ndiv} diverged trajectories")
    print(f"wrote {out / 'sweep.csv'}")
    if args.check:
        values = {"total_diverged": float(ndiv)}
        for a, name in enumerate(("sx", "sy", "sz")):
            values[f"first_mean_{name}"] = float(result.mean[0, a])
            values[f"last_mean_{name}"] = float(result.mean[-1, a])
        if _run_checks(args.check, values):
            return EXIT_CHECK
    return EXIT_OK


def _cmd_tune(args) -> int:
    cfg = load_tune_config(args.config)
    params = _apply_seed(cfg.params, args)
    result = tune_gains(cfg.spec, params, stride=cfg.stride)
    out = _out_dir(args, cfg.out_dir)
    artifacts = ["tune.json"]
    if args.plot:
        artifacts.append("tune.svg")
    raw = dict(cfg.raw(), params=dict(cfg.raw()["params"], seed=params.seed))
    doc = reports.provenance("tune", raw, params.seed, params.tau0, artifacts)
    doc["report"] = reports.tune_report(result)
    reports.write_json(out / "tune.json", doc)
    if args.plot:
        reports.plot_tune(out / "tune.svg", result)
    law_str = ", ".join(f"{k}={v:+.4g}" for k, v in
                        sorted(doc["report"]["law"].items())) or "zero law"
    print(f"tune: best {law_str} residual V={result.residual:.4g} "
          f"after {result.n_evaluations} evaluations"
          + (" (budget exhausted)" if result.budget_exhausted else ""))
    print(f"wrote {out / 'tune.json'}")
    if args.check:
        values = {"residual": result.residual,
                  "n_evaluations": float(result.n_evaluations)}
        for k, v in doc["report"]["law"].items():
            values[k] = v
        if _run_checks(args.check, values):
            return EXIT_CHECK
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfg = load_compare_config(args.config)
    params = _apply_seed(cfg.params, args)
    report = compare_engines(params, cfg.law, cfg.n_trajectories,
                             horizon=cfg.horizon, stride=cfg.stride)
    out = _out_dir(args, cfg.out_dir)
    artifacts = ["compare.json", "compare.csv"]
    if args.plot:
        artifacts.append("compare.svg")
    raw = dict(cfg.raw(), params=dict(cfg.raw()["params"], seed=params.seed))
    doc = reports.provenance("compare", raw, params.seed, params.tau0, artifacts)
    doc["report"] = reports.compare_report(report)
    reports.write_json(out / "compare.json", doc)
    reports.write_compare_csv(out / "compare.csv", report, params.seed)
    if args.plot:
        reports.plot_compare(out / "compare.svg", report)
    print(f"compare: {report.n_trajectories} matched trajectories, max "
          f"first-moment deviation {report.max_deviation_overall:.4g} "
          f"(diverged: moment {report.n_diverged_moment}, "
          f"filter {report.n_diverged_sme})")
    print(f"wrote {out / 'compare.json'}")
    if args.check:
        values = {"max_deviation_overall": report.max_deviation_overall,
                  "max_residual": float(report.max_residual.max()),
                  "n_diverged_moment": float(report.n_diverged_moment),
                  "n_diverged_sme": float(report.n_diverged_sme)}
        if _run_checks(args.check, values):
            return EXIT_CHECK
    return EXIT_OK


def _cmd_collapse(args) -> int:
    cfg = load_collapse_config(args.config)
    params = _apply_seed(cfg.params, args)
    report = collapse_statistics(params, cfg.initial, cfg.n_trajectories,
                                 threshold=cfg.threshold)
    out = _out_dir(args, cfg.out_dir)
    artifacts = ["collapse.json", "collapse.csv"]
    if args.plot:
        artifacts.append("collapse.svg")
    raw = dict(cfg.raw(), params=dict(cfg.raw()["params"], seed=params.seed))
    doc = reports.provenance("collapse", raw, params.seed, params.tau0, artifacts)
    doc["report"] = reports.collapse_report(report)
    reports.write_json(out / "collapse.json", doc)
    reports.write_collapse_csv(out / "collapse.csv", report, params.seed)
    if args.plot:
        reports.plot_collapse(out / "collapse.svg", report)
    print(f"collapse: {report.n_trajectories} trajectories, TV distance "
          f"{report.tv_distance:.4f}, uncollapsed {report.uncollapsed}")
    print(f"wrote {out / 'collapse.json'}")
    if args.check:
        values = {"tv_distance": report.tv_distance,
                  "uncollapsed_fraction": report.uncollapsed_fraction}
        if _run_checks(args.check, values):
            return EXIT_CHECK
    return EXIT_OK


_COMMANDS = {
    "simulate": (_cmd_simulate, "integrate one trajectory and write it to CSV"),
    "sweep": (_cmd_sweep, "steady-state statistics over a gain grid"),
    "tune": (_cmd_tune, "search gains that steer to a Bloch target"),
    "compare": (_cmd_compare, "moment closure vs exact filter on matched noise"),
    "collapse": (_cmd_collapse, "terminal-state histogram of the bare measurement"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinsteer",
        description="measurement-feedback simulations of a collective spin")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output directory "
                       "(default: config out_dir, else current directory)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
        p.add_argument("--plot", action="store_true", help="also write SVG plots")
        p.add_argument("--check", default=None, metavar="EXPECT.json",
                       help="evaluate expectations; exit 4 on failure")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = _COMMANDS[args.command][0]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegratorError, DivergenceError, CollapseError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
