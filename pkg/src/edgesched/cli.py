"""Command-line entry point: ``generate``, ``run`` and ``compare``.

Settings resolve as flags > ``--config`` JSON file > built-in defaults. The
resolved settings are embedded in every output file. Outputs are written to
a temporary name and renamed, so a failed command leaves nothing behind.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from .errors import EdgeSchedError
from .harness import ALGORITHMS, DEFAULT_REPETITIONS, ExperimentConfig, execute, export_csv, run_experiment
from .evaluation import DEFAULT_U_TH
from .scenario import TESTBED_SERVERS, PRESETS, Scenario, Service, generate_scenario, load_scenario, preset

SEED_ENV = "EDGESCHED_SEED"
DEFAULT_PRESET = "desk"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _flags(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _base_seed(args, file_cfg: dict) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in file_cfg:
        return int(file_cfg["seed"])
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SystemExit(f"error: {SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def _read_config(args) -> dict:
    if not args.config:
        return {}
    with open(args.config) as fh:
        return json.load(fh)


def _experiment_config(args, file_cfg: dict) -> ExperimentConfig:
    d = dict(file_cfg.get("experiment", {}))
    if args.uth is not None:
        d["u_th"] = args.uth
    if args.jobs is not None:
        d["jobs"] = args.jobs
    if getattr(args, "episodes", None) is not None:
        conv = dict(d.get("convergence", {}))
        conv["max_episodes"] = args.episodes
        d["convergence"] = conv
    if getattr(args, "hidden", None) is not None:
        hyper = dict(d.get("hyper", {}))
        hyper["hidden"] = list(args.hidden)
        d["hyper"] = hyper
    if getattr(args, "no_ram", False):
        d["measure_ram"] = False
    return ExperimentConfig.from_dict(d)


def _scenario(args, file_cfg: dict) -> tuple[Scenario, dict]:
    path = args.scenario or file_cfg.get("scenario")
    name = args.preset or file_cfg.get("preset")
    if path:
        return load_scenario(path), {"scenario": str(path)}
    name = name or DEFAULT_PRESET
    return preset(name), {"preset": name}


def cmd_generate(args) -> int:
    file_cfg = _read_config(args)
    seed = _base_seed(args, file_cfg)
    if args.preset:
        sc = preset(args.preset, seed=args.seed)
    else:
        users = args.users if args.users is not None else file_cfg.get("users", 4)
        servers = args.servers if args.servers is not None else file_cfg.get("servers", 2)
        zones = args.zones if args.zones is not None else file_cfg.get("zones", max(2, servers))
        sc = generate_scenario(_split_users(users), zones, _server_kinds(servers), seed)
    _atomic_write(Path(args.output), sc.to_json())
    print(f"wrote {args.output}: {len(sc.users)} users, {len(sc.tasks)} tasks, "
          f"{len(sc.servers)} servers, {len(sc.topology.zones)} zones")
    return 0


def _split_users(n: int) -> dict:
    services = list(Service)
    counts = {s: 0 for s in services}
    for i in range(n):
        counts[services[i % len(services)]] += 1
    return counts


def _server_kinds(n: int) -> list[str]:
    return [TESTBED_SERVERS[i % len(TESTBED_SERVERS)] for i in range(n)]


def cmd_run(args) -> int:
    file_cfg = _read_config(args)
    alg = args.alg
    seed = _base_seed(args, file_cfg)
    cfg = _experiment_config(args, file_cfg)
    sc, source = _scenario(args, file_cfg)
    out_dir = Path(args.out_dir or file_cfg.get("out_dir", "."))
    out = out_dir / f"run-{alg}-seed{seed}.json"
    debug = args.debug_log
    try:
        m = execute(sc, alg, seed, cfg, debug_log=debug)
        doc = {"command": "run", "flags": _flags(args), "algorithm": alg, "seed": seed, "source": source,
               "config": cfg.to_dict(), "result": m.to_dict()}
        _atomic_write(out, _dumps(doc))
    except BaseException:
        if debug and os.path.exists(debug):
            os.unlink(debug)
        raise
    conv = "-" if m.convergence_episode is None else m.convergence_episode
    print(f"{alg} seed={seed} hit_ratio={m.hit_ratio_final:.4f} runtime={m.runtime_seconds:.3f}s "
          f"convergence_episode={conv} -> {out}")
    return 0


def cmd_compare(args) -> int:
    file_cfg = _read_config(args)
    seed = _base_seed(args, file_cfg)
    reps = args.reps if args.reps is not None else int(file_cfg.get("reps", DEFAULT_REPETITIONS))
    cfg = _experiment_config(args, file_cfg)
    sc, source = _scenario(args, file_cfg)
    algs = args.algs or file_cfg.get("algs") or list(ALGORITHMS)
    out_dir = Path(args.out_dir or file_cfg.get("out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run_experiment(sc, algs, reps, seed, cfg)
    report.config = {"command": "compare", "flags": _flags(args), "source": source, **report.config}
    tmp = Path(tempfile.mkdtemp(dir=out_dir, prefix=".compare-"))
    try:
        paths = export_csv(report, tmp / "compare.csv")
        for p in paths.values():
            os.replace(p, out_dir / p.name)
    finally:
        for p in tmp.iterdir():
            p.unlink()
        tmp.rmdir()
    agg = report.aggregates
    print(f"{'algorithm':<9} {'median hit':>10} {'median runtime[s]':>18} {'median steps':>13}")
    for alg in report.algorithms:
        a = agg[alg]
        print(f"{alg:<9} {a['hit_ratio_final']['median']:>10.4f} {a['runtime_seconds']['median']:>18.3f} "
              f"{a['total_steps']['median']:>13}")
    print(f"wrote {out_dir / 'compare.csv'}, compare.svg, compare.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgesched", description="Deadline-aware edge task scheduling experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, help=f"base seed (fallback: ${SEED_ENV}, then 0)")
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--config", help="JSON file with default settings")

    def running(sp):
        common(sp)
        sp.add_argument("--scenario", help="scenario JSON file (default: desk preset)")
        sp.add_argument("--uth", type=float, help=f"availability threshold (default {DEFAULT_U_TH})")
        sp.add_argument("--jobs", type=int, help="parallel worker processes")
        sp.add_argument("--out-dir", help="directory for result files (default: .)")
        sp.add_argument("--episodes", type=int, help="episode budget of the learners")
        sp.add_argument("--hidden", type=int, nargs=2, metavar=("H1", "H2"), help="hidden layer widths")
        sp.add_argument("--no-ram", action="store_true", help="skip RSS sampling (allows --jobs)")

    g = sub.add_parser("generate", help="write a scenario JSON file")
    common(g)
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--users", type=int)
    g.add_argument("--servers", type=int)
    g.add_argument("--zones", type=int)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="one run of one algorithm")
    running(r)
    r.add_argument("--alg", choices=ALGORITHMS, required=True)
    r.add_argument("--debug-log", help="per-step JSON lines log (learners only)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="repeated runs of several algorithms")
    running(c)
    c.add_argument("--reps", type=int, help=f"repetitions per algorithm (default {DEFAULT_REPETITIONS})")
    c.add_argument("--algs", nargs="+", choices=ALGORITHMS)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EdgeSchedError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
