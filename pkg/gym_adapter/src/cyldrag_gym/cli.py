"""cyldrag-train: run a training experiment against a served channel."""

from __future__ import annotations

import argparse
import sys

from .client import ServerProcess
from .presets import PresetConfig, available_presets
from .runner import run_experiment


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cyldrag-train",
        description="Drive an agent against the drag-control channel server",
    )
    parser.add_argument("--preset", default="noflow", choices=available_presets())
    parser.add_argument("--task", default="maximize", choices=["maximize", "minimize"])
    parser.add_argument("--budget", default="60ep", help="episodes, e.g. 60ep")
    parser.add_argument("--repetitions", type=int, default=1)
    parser.add_argument("--agent", default="random",
                        help="'random' or a 'module:callable' factory")
    parser.add_argument("--endpoint",
                        help="host:port of a running server; omit to launch one")
    parser.add_argument("--env-file", help="server config JSON when auto-launching")
    parser.add_argument("--profile", default="desk", choices=["desk", "paper"])
    parser.add_argument("--pacing", default="fast", choices=["fast", "realtime"])
    parser.add_argument("--out", default="training_out")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    preset = PresetConfig(name=args.preset, task=args.task,
                          pacing=args.pacing, profile=args.profile)
    episode_duration = 60.0 if args.profile == "paper" else 20.0

    def run(endpoint):
        path = run_experiment(
            args.agent, preset, args.budget, args.repetitions, endpoint,
            args.out, episode_duration=episode_duration, base_seed=args.seed,
        )
        print(f"learning curve written to {path}")

    if args.endpoint:
        run(args.endpoint)
    else:
        with ServerProcess(env_file=args.env_file, pacing=args.pacing,
                           profile=args.profile, log_dir=args.out + "/server_logs") as server:
            run(server.endpoint)
    return 0


if __name__ == "__main__":
    sys.exit(main())
