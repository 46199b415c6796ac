"""``gpmpc`` command line: validate, train, run, compare and plot scenarios.

Exit codes: 0 success, 2 configuration error, 3 scenario failure
(hard constraint violated), 4 solver failure. Several ``--config`` files
run concurrently, one thread per scenario, each writing to
``OUT/<config stem>``; the exit code is then the largest of the runs.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from gpmpc.errors import ConfigError, GpMpcError, SolverFailure
from gpmpc.harness.config import validate_config
from gpmpc.harness.persist import dump_json, write_manifest
from gpmpc.harness.runner import compare_runs, export_plots, run_scenario, train_phase, write_run, write_training

EXIT_OK, EXIT_CONFIG, EXIT_SCENARIO, EXIT_SOLVER = 0, 2, 3, 4


def _load(path, seed_override):
    cfg = validate_config(path)
    return cfg if seed_override is None else cfg.with_seed(seed_override)


def _report(msg: str):
    print(msg, file=sys.stderr)


def _validate(args, cfg, out: Path | None) -> int:
    text = cfg.to_yaml()
    print(text, end="")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.yaml").write_text(text, encoding="utf-8")
        write_manifest(out)
    return EXIT_OK


def _train(args, cfg, out: Path) -> int:
    if cfg.application == "pathfollow" and not cfg.uses_gp:
        _report(f"controller {cfg.controller} uses no learned model; training with its GP variant")
    train = train_phase(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")
    write_training(train, cfg.application, out)
    write_manifest(out)
    print(f"models written to {out / 'models' / 'models.json'}")
    return EXIT_OK


def _run(args, cfg, out: Path) -> int:
    res = run_scenario(cfg)
    write_run(res, out)
    if args.plots:
        export_plots(res, out)
        write_manifest(out)
    print(dump_json(res.summary), end="")
    if res.failure is not None:
        _report(f"scenario failure at step {res.failure['step']}: {res.failure['reason']}")
        return EXIT_SCENARIO
    return EXIT_OK


def _plot(args, cfg, out: Path) -> int:
    res = run_scenario(cfg)
    write_run(res, out)
    paths = export_plots(res, out)
    write_manifest(out)
    for p in paths:
        print(p)
    return EXIT_SCENARIO if res.failure is not None else EXIT_OK


def _compare(args, cfg, out: Path) -> int:
    if args.against is None:
        raise ConfigError(["--against: required for compare"])
    other = _load(args.against, args.seed_override)
    a, b = run_scenario(cfg), run_scenario(other)
    out.mkdir(parents=True, exist_ok=True)
    write_run(a, out / "a")
    write_run(b, out / "b")
    result = compare_runs(a, b)
    result["failures"] = [a.failure, b.failure]
    (out / "comparison.json").write_text(dump_json(result), encoding="utf-8")
    write_manifest(out)
    print(dump_json(result), end="")
    return EXIT_OK


VERBS = {"validate": _validate, "train": _train, "run": _run, "compare": _compare, "plot": _plot}


def run_one(verb: str, args, config_path, out: Path | None) -> int:
    """Execute one verb on one configuration and map errors to exit codes."""
    try:
        cfg = _load(config_path, args.seed_override)
        if out is None and verb != "validate":
            raise ConfigError(["--out: required for this command"])
        return VERBS[verb](args, cfg, out)
    except ConfigError as exc:
        for e in exc.errors:
            _report(f"{config_path}: {e}")
        return EXIT_CONFIG
    except SolverFailure as exc:
        _report(f"{config_path}: solver failure: {exc}")
        return EXIT_SOLVER
    except GpMpcError as exc:
        _report(f"{config_path}: {type(exc).__name__}: {exc}")
        return EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpmpc", description="GP-based MPC scenario runner")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, help_text in (("validate", "check a configuration and print it with defaults filled in"),
                            ("train", "collect data with the nominal controller and fit the models"),
                            ("run", "train if needed, then run the closed loop"),
                            ("compare", "run two configurations and compare their metrics"),
                            ("plot", "run a scenario and render its SVG figures")):
        p = sub.add_parser(verb, help=help_text)
        p.add_argument("--config", nargs="+", required=True, type=Path, help="scenario YAML file(s)")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed-override", type=int, default=None, help="replace the seed of every scenario")
        p.add_argument("--jobs", type=int, default=None, help="threads for several configurations")
        if verb == "run":
            p.add_argument("--plots", action="store_true", help="also render SVG figures")
        if verb == "compare":
            p.add_argument("--against", type=Path, default=None, help="configuration B (A is --config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configs = args.config
    if len(configs) == 1:
        return run_one(args.verb, args, configs[0], args.out)
    if args.out is None and args.verb != "validate":
        _report("--out: required for this command")
        return EXIT_CONFIG
    stems = [c.stem for c in configs]
    if len(set(stems)) != len(stems):
        _report("--config: file names must be distinct in a batch")
        return EXIT_CONFIG
    outs = [None if args.out is None else args.out / s for s in stems]
    with ThreadPoolExecutor(max_workers=args.jobs or len(configs)) as pool:
        codes = list(pool.map(lambda co: run_one(args.verb, args, co[0], co[1]), zip(configs, outs)))
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
