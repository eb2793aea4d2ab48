"""Command-line entry points: gen-data, eval, rollout, serve."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .errors import StereonavError


def _load_world(path):
    from .world import World

    with open(path, "r", encoding="utf-8") as f:
        return World.from_json(f.read())


def _extractor_for(model, world, mode=None):
    from .perception import FeatureExtractor, SyntheticSceneProvider

    cfg = model.config
    return FeatureExtractor(
        SyntheticSceneProvider(world),
        grid_h=cfg.grid_h,
        grid_w=cfg.grid_w,
        appearance_dim=cfg.appearance_dim,
        mode=mode or cfg.mode,
        m_trk=cfg.m_trk,
    )


def cmd_gen_data(args):
    from .episodes import generate_dataset, save_dataset
    from .sim import random_world

    if args.world:
        world = _load_world(args.world)
    else:
        world = random_world(args.seed, n_obstacles=args.obstacles)
    episodes = generate_dataset(args.seed, args.episodes, args.length, world)
    save_dataset(args.out, episodes)
    world_path = args.out + ".world.json"
    with open(world_path, "w", encoding="utf-8") as f:
        f.write(world.to_json())
    print(f"wrote {len(episodes)} episodes to {args.out} (world: {world_path})")
    return 0


def cmd_eval(args):
    from .episodes import load_dataset
    from .evaluate import evaluate_model
    from .metrics import write_report
    from .policy import PolicyModel

    model = PolicyModel.load(args.checkpoint)
    world = _load_world(args.world)
    extractor = _extractor_for(model, world)
    episodes = load_dataset(args.dataset)
    report, samples = evaluate_model(model, extractor, episodes, r=args.radius)
    json_out = os.path.splitext(args.out)[0] + ".json"
    write_report(report, args.out, json_out)
    print(report.to_tsv())
    print(f"evaluated {len(samples)} windows; report: {args.out}, {json_out}")
    return 0


def cmd_rollout(args):
    from .policy import PolicyModel
    from .sim import build_visibility_graph, random_route, rollout

    model = PolicyModel.load(args.checkpoint)
    world = _load_world(args.world)
    extractor = _extractor_for(model, world)
    rng = np.random.default_rng(args.seed)
    graph = build_visibility_graph(world, rng)
    lines = ["route\tsuccess\tcollided\ttimed_out\tsteps"]
    pos_lines = ["route\tstep\tx\ty"]
    n_success = 0
    for i in range(args.routes):
        route = random_route(graph, rng)
        waypoints = np.array([graph.nodes[j] for j in route])
        result = rollout(
            model, world, waypoints, extractor,
            max_steps=args.max_steps, context_n=model.config.context_n,
        )
        n_success += result.success
        lines.append(
            f"{i}\t{int(result.success)}\t{int(result.collided)}"
            f"\t{int(result.timed_out)}\t{result.steps}"
        )
        for step, p in enumerate(result.trajectory):
            pos_lines.append(f"{i}\t{step}\t{p[0]:.6f}\t{p[1]:.6f}")
    body = "\n".join(lines) + "\n\n" + "\n".join(pos_lines) + "\n"
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(body)
    print(f"success rate {n_success}/{args.routes}; trajectories: {args.out}")
    return 0


def cmd_serve(args):
    import uvicorn

    from .server import BIND_ENV_VAR, InferenceService, create_app

    extractor = None
    if args.world:
        from .policy import PolicyModel

        model = PolicyModel.load(args.checkpoint)
        world = _load_world(args.world)
        extractor = _extractor_for(model, world)
    service = InferenceService.from_checkpoint(args.checkpoint, extractor=extractor)
    app = create_app(service)
    host = os.environ.get(BIND_ENV_VAR, "127.0.0.1")
    uvicorn.run(app, host=host, port=args.port)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="stereonav")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic episode dataset")
    g.add_argument("--episodes", type=int, default=24)
    g.add_argument("--length", type=int, default=20, help="episode length in seconds")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--world", default=None, help="world JSON (default: random from seed)")
    g.add_argument("--obstacles", type=int, default=3)
    g.set_defaults(fn=cmd_gen_data)

    e = sub.add_parser("eval", help="offline metrics for a checkpoint on a dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--world", required=True, help="world JSON the dataset was generated in")
    e.add_argument("--radius", type=float, default=1.0)
    e.add_argument("--out", required=True, help="TSV report path")
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("rollout", help="closed-loop rollouts on random routes")
    r.add_argument("--world", required=True)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--routes", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--max-steps", type=int, default=80)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_rollout)

    s = sub.add_parser("serve", help="run the waypoint HTTP service")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--port", type=int, default=8321)
    s.add_argument("--world", default=None, help="enables seeds-mode requests")
    s.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (StereonavError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
