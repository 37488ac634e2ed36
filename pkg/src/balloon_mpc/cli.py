"""Command line: run, bench, ablate, replay.

Exit codes: 0 success, 1 some episode failed, 2 configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, RunConfig, load_config, to_dict

log = logging.getLogger("balloon_mpc")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def parse_seeds(text: str) -> list[int]:
    """``A..B`` is the half-open range [A, B); also accepts ``N`` or ``a,b,c``."""
    text = text.strip()
    m = re.fullmatch(r"(-?\d+)\.\.(-?\d+)", text)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        if b <= a:
            raise ConfigError(f"empty seed range {text!r}")
        return list(range(a, b))
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse seeds {text!r}") from None
    if not seeds:
        raise ConfigError("no seeds given")
    return seeds


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _spec(name: str, cfg: RunConfig) -> harness.AgentSpec:
    try:
        return harness.AgentSpec(name.strip(), cfg.fompc, cfg.discretize)
    except ValueError as err:
        raise ConfigError(str(err)) from err


def _progress(verbose):
    def report(tag, m):
        if m.failed:
            print(f"  FAILED {tag} seed={m.seed}: {m.error.splitlines()[0]}", file=sys.stderr)
        elif verbose:
            print(f"  {tag} seed={m.seed} twr={m.twr:.3f} violations={m.violations}", flush=True)
    return report


def _print_summary(summary):
    for tag, stats in summary.agents.items():
        parts = [f"{k}={v['mean']:.4g}±{v['ci']:.2g}" for k, v in stats.items()]
        print(f"{tag:28s} n={stats['twr']['n']:4d}  " + "  ".join(parts))
    for f in summary.failures:
        print(f"failed: {f['agent']} seed {f['seed']}", file=sys.stderr)


def cmd_run(args) -> int:
    cfg = _config(args)
    spec = _spec(args.agent, cfg)
    ep = cfg.episode.with_seed(args.seed)
    m = harness.run_episode_safe(spec, ep)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{harness._safe(spec.tag)}_seed{args.seed:05d}"
    d = m.to_dict()
    d["config"] = to_dict(cfg)
    harness._dump_json(out / f"{stem}.json", d)
    if m.failed:
        print(m.error, file=sys.stderr)
        return EXIT_FAILED
    harness.write_trajectory_csv(out / f"{stem}.csv", m.trajectory)
    if not args.no_plot:
        from .plotting import plot_trajectory
        plot_trajectory(m.trajectory, out / f"{stem}.png", ep.radius_km, ep.params.E_max,
                        f"{spec.tag} seed {args.seed}: TWR {m.twr:.3f}")
    print(f"agent={spec.tag} seed={args.seed} twr={m.twr:.4f} reward={m.reward:.2f} "
          f"violations={m.violations} mean_step_time={m.mean_step_time:.4f}s")
    print(f"wrote {out / stem}.{{json,csv}}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    specs = [_spec(a, cfg) for a in args.agents.split(",") if a.strip()]
    seeds = parse_seeds(args.seeds)
    s = harness.run_benchmark(specs, seeds, args.workers, cfg.episode, args.out, args.resume,
                              not args.no_trajectories, _progress(args.verbose))
    _print_summary(s)
    if not args.no_plot:
        from .plotting import plot_benchmark
        plot_benchmark(s, Path(args.out) / "twr.png")
    print(f"wrote {Path(args.out) / 'summary.csv'}")
    return EXIT_FAILED if s.failures else EXIT_OK


def _ablation_values(dimension: str, text: str | None):
    if text is None:
        return None
    vals = [v.strip() for v in text.split(",") if v.strip()]
    if dimension in ("horizon", "replan", "inits"):
        try:
            return [int(v) for v in vals]
        except ValueError:
            raise ConfigError(f"{dimension} values must be integers") from None
    return vals


def cmd_ablate(args) -> int:
    cfg = _config(args)
    try:
        specs = harness.ablation_specs(args.dimension, _ablation_values(args.dimension, args.values),
                                       cfg.fompc)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    seeds = parse_seeds(args.seeds)
    s = harness.run_benchmark(specs, seeds, args.workers, cfg.episode, args.out, args.resume,
                              False, _progress(args.verbose))
    _print_summary(s)
    if not args.no_plot:
        from .plotting import plot_ablation
        plot_ablation(s, Path(args.out) / "ablation.png", f"ablation: {args.dimension}")
    return EXIT_FAILED if s.failures else EXIT_OK


def cmd_replay(args) -> int:
    cfg = _config(args)
    path = Path(args.trajectory)
    try:
        rows = harness.read_trajectory_csv(path)
    except (OSError, KeyError, ValueError) as err:
        raise ConfigError(f"cannot read trajectory {path}: {err}") from err
    if not rows:
        raise ConfigError(f"{path} holds no steps")
    ep = cfg.episode
    twr = harness.time_within_radius([r["x"] for r in rows], [r["y"] for r in rows],
                                     ep.radius_km * 1000.0)
    stats = {"steps": len(rows), "twr": twr, "reward": harness.reward_episode(rows, ep),
             "violations": int(sum(r["gate"] for r in rows)),
             "max_dist_km": max(r["dist_km"] for r in rows),
             "final_dist_km": rows[-1]["dist_km"]}
    print(json.dumps(stats, indent=1))
    if args.plot:
        from .plotting import plot_trajectory
        plot_trajectory(rows, args.plot, ep.radius_km, ep.params.E_max)
    if args.grid_csv:
        seed = args.seed
        if seed is None:
            m = re.search(r"seed_?(\d+)", path.stem)
            if not m:
                raise ConfigError("--grid-csv needs --seed when the file name carries no seed")
            seed = int(m.group(1))
        from .windsim import dump_grid_csv
        wind, noise = harness._episode_world(ep.with_seed(seed))
        xs = np.array([r["x"] for r in rows])
        ys = np.array([r["y"] for r in rows])
        pad = 20e3
        gx = np.linspace(xs.min() - pad, xs.max() + pad, args.grid_points)
        gy = np.linspace(ys.min() - pad, ys.max() + pad, args.grid_points)
        gl = np.linspace(min(r["l"] for r in rows), max(r["l"] for r in rows), 5)
        dump_grid_csv(args.grid_csv, wind, noise, gx, gy, gl, [rows[0]["t"]])
        print(f"wrote {args.grid_csv}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="balloon-mpc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--no-plot", action="store_true", help="skip figure output")

    r = sub.add_parser("run", help="run one episode")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--agent", default="fompc", help=", ".join(harness.AGENTS))
    r.add_argument("--out", default="results/run")
    common(r)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run agents over a seed range")
    b.add_argument("--agents", default="fompc,greedy-column,coast")
    b.add_argument("--seeds", default="0..200", help="A..B (half-open), N or a,b,c")
    b.add_argument("--out", default="results/bench")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--resume", action="store_true", help="reuse matching saved episodes")
    b.add_argument("--no-trajectories", action="store_true")
    common(b)
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("ablate", help="vary one planner setting")
    a.add_argument("--dimension", required=True, choices=sorted(harness.ABLATION_GRIDS))
    a.add_argument("--values", help="comma list; default is the standard grid")
    a.add_argument("--seeds", default="0..200")
    a.add_argument("--out", default="results/ablate")
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--resume", action="store_true")
    common(a)
    a.set_defaults(func=cmd_ablate)

    rp = sub.add_parser("replay", help="statistics and plots from a trajectory CSV")
    rp.add_argument("--trajectory", required=True)
    rp.add_argument("--plot", help="write a trajectory figure here")
    rp.add_argument("--grid-csv", help="write the wind field around the track here")
    rp.add_argument("--seed", type=int, help="episode seed for --grid-csv")
    rp.add_argument("--grid-points", type=int, default=9)
    rp.add_argument("--config", help="YAML configuration file")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
