"""Command-line entry points: sweep, ternary, replay, probe, serve, snapshot."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .env import EnvConfig
from .lattice import FluidConfig, desk_config, init_lattice, save_snapshot, step as lattice_step


def load_configs(args) -> tuple[FluidConfig, EnvConfig]:
    """Resolve fluid + env configuration from --env JSON and profile flags."""
    fluid_data: dict = {}
    env_data: dict = {}
    if getattr(args, "env", None):
        with open(args.env) as fh:
            blob = json.load(fh)
        fluid_data = blob.get("fluid", {})
        env_data = blob.get("env", {})
    if getattr(args, "desk", False):
        fluid = desk_config(**fluid_data)
        cfg = EnvConfig.desk_profile(**env_data) if not env_data.get("episode_duration") \
            else EnvConfig.from_dict(env_data)
    else:
        fluid = FluidConfig(**fluid_data)
        cfg = EnvConfig.from_dict(env_data)
    if getattr(args, "task", None):
        cfg.task = args.task
    if getattr(args, "seed", None) is not None:
        fluid.seed = args.seed
    return fluid, cfg


def _ensure_tau_nc(fluid, cfg, episodes=2):
    from .env import calibrate_no_control

    if cfg.no_control_torque is None:
        print("calibrating no-control torque ...", file=sys.stderr)
        cfg.no_control_torque = calibrate_no_control(fluid, cfg, episodes=episodes)
        print(f"no-control torque: {cfg.no_control_torque:.3f} mN*m", file=sys.stderr)
    return cfg


def cmd_sweep(args) -> int:
    from .openloop import grid_sweep, paper_grid, sweep_to_csv

    fluid, cfg = load_configs(args)
    _ensure_tau_nc(fluid, cfg)
    if args.grid == "paper":
        amps, freqs = paper_grid()
    else:
        with open(args.grid) as fh:
            grid = json.load(fh)
        amps, freqs = grid["amplitudes"], grid["frequencies"]
    rows = grid_sweep(
        amps, freqs, args.reps, fluid, cfg,
        base_seed=fluid.seed, cache_dir=args.cache, workers=args.workers,
    )
    sweep_to_csv(rows, args.out)
    best = rows[0]
    print(f"best cell: A={best['amplitude']} rad/s f={best['frequency']} Hz "
          f"mean={best['mean']:.2f}%")
    print(f"table written to {args.out}")
    return 0


def cmd_ternary(args) -> int:
    from .openloop import ternary_search_env

    fluid, cfg = load_configs(args)
    _ensure_tau_nc(fluid, cfg)
    result = ternary_search_env(
        args.A, args.flo, args.fhi, args.steps, args.reps, fluid, cfg,
        base_seed=fluid.seed,
    )
    print(f"f* = {result.frequency:.4f} Hz  score = {result.score:.2f}%  "
          f"final interval [{result.interval[0]:.4f}, {result.interval[1]:.4f}]")
    return 0


def cmd_replay(args) -> int:
    from .replay import ActionTrajectory, replay

    fluid, cfg = load_configs(args)
    _ensure_tau_nc(fluid, cfg)
    traj = ActionTrajectory.load(args.traj)
    curves = replay(traj, args.reps, fluid, cfg, seed_policy=args.seeds,
                    base_seed=fluid.seed)
    curves.to_csv(args.out)
    print(f"final scores per repetition: "
          + ", ".join(f"{v:.2f}%" for v in curves.final_scores))
    print(f"curves written to {args.out}")
    return 0


def cmd_probe(args) -> int:
    from .openloop import SinusoidPolicy
    from .replay import anti_alignment_probe

    fluid, cfg = load_configs(args)
    _ensure_tau_nc(fluid, cfg)
    if args.mode == "step":
        policies = [("step_spin_up", lambda t: 1.0)]
    else:
        policies = [(f"sin_A{args.A}_f{args.f}", SinusoidPolicy(args.A, args.f))]
    report = anti_alignment_probe(fluid, cfg, policies, base_seed=fluid.seed)
    for entry in report.entries:
        print(f"{entry.name}: initial {entry.initial_change:+.3f} mN*m, "
              f"long-run {entry.long_run_change:+.3f} mN*m, "
              f"anti-aligned: {entry.anti_aligned}")
    if args.out:
        report.to_json(args.out)
        print(f"report written to {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .bridge import serve

    fluid, cfg = load_configs(args)
    _ensure_tau_nc(fluid, cfg)
    addr = os.environ.get("CYLDRAG_ADDR", args.addr)
    log_dir = os.environ.get("CYLDRAG_LOG_DIR", args.log_dir)

    def ready(host, port):
        print(f"listening on {host}:{port}", flush=True)

    serve(addr, fluid, cfg, pacing=args.pacing, log_dir=log_dir,
          ready_callback=ready)
    return 0


def cmd_snapshot(args) -> int:
    fluid, _ = load_configs(args)
    state = init_lattice(fluid)
    for _ in range(args.steps):
        lattice_step(state, args.omega)
    save_snapshot(state, png_path=args.png, raw_path=args.raw)
    print(f"snapshot after {args.steps} steps -> {args.png or ''} {args.raw or ''}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", help="JSON file with {'fluid': {...}, 'env': {...}}")
    p.add_argument("--desk", action="store_true",
                   help="desk profile: small fast channel, 20 s episodes")
    p.add_argument("--task", choices=["maximize", "minimize"])
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cyldrag",
        description="Spinning-cylinder drag-control channel: sweeps, replays, serving",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="score a sinusoid grid")
    _add_common(p)
    p.add_argument("--grid", default="paper", help="'paper' or a JSON grid file")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--cache", help="cell cache directory (resumable sweeps)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ternary", help="refine a frequency by ternary search")
    _add_common(p)
    p.add_argument("--A", type=float, default=15.7)
    p.add_argument("--flo", type=float, default=0.71)
    p.add_argument("--fhi", type=float, default=0.89)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(func=cmd_ternary)

    p = sub.add_parser("replay", help="replay a recorded trajectory open-loop")
    _add_common(p)
    p.add_argument("--traj", required=True)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seeds", choices=["same", "fresh"], default="fresh")
    p.add_argument("--out", default="curves.csv")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("probe", help="early-vs-long-run torque response probe")
    _add_common(p)
    p.add_argument("--mode", choices=["step", "sinusoid"], default="step")
    p.add_argument("--A", type=float, default=15.7)
    p.add_argument("--f", type=float, default=0.8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("serve", help="serve environments to agents")
    _add_common(p)
    p.add_argument("--addr", default="127.0.0.1:7777",
                   help="'host:port' (0 = ephemeral) or 'stdio'; env CYLDRAG_ADDR overrides")
    p.add_argument("--pacing", choices=["realtime", "fast"], default="fast")
    p.add_argument("--log-dir", default="bridge_logs",
                   help="env CYLDRAG_LOG_DIR overrides")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("snapshot", help="export a vorticity snapshot")
    _add_common(p)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--omega", type=float, default=0.0)
    p.add_argument("--png")
    p.add_argument("--raw")
    p.set_defaults(func=cmd_snapshot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
