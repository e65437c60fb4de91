"""Command line entry points.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .frames import FrameFormatError, export_frames, load_frames
from .mesh import MeshError
from .metrics import MetricsRecord, compute_frame_metrics, write_metrics_csv
from .scene import (SOLVER_NAMES, SceneConfig, SceneError, build_scene,
                    run_scene, save_scene_subspace)
from .solver import SolverError
from .subspace import SubspaceError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="submfem",
        description="Subspace mixed-FEM elastodynamics toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-subspace",
                       help="build and store the subspace artifact for a scene")
    p.add_argument("scene", help="scene JSON file")
    p.add_argument("--out", help="artifact path (defaults to the scene's "
                                 "subspace.artifact entry)")

    p = sub.add_parser("simulate", help="run a scene headless and export frames")
    p.add_argument("scene", help="scene JSON file")
    p.add_argument("--solver", choices=SOLVER_NAMES, default="mfem")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--gradient-norms", action="store_true",
                   help="record per-frame full-space gradient norms (slow)")

    p = sub.add_parser("metrics", help="recompute metrics from exported frames")
    p.add_argument("frames", help="frames file (jsonl or binary)")
    p.add_argument("scene", help="scene JSON file")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--gradient-norms", action="store_true")

    p = sub.add_parser("serve", help="run the interactive WebSocket service")
    p.add_argument("scene", help="scene JSON file")
    p.add_argument("--bind", default="127.0.0.1:8765", help="host:port")
    p.add_argument("--realtime", action="store_true",
                   help="pace stepping to the solver dt on the wall clock")
    return parser


def _cmd_build_subspace(args) -> int:
    config = SceneConfig.from_file(args.scene)
    scene = build_scene(config, use_artifact=False)
    path = save_scene_subspace(scene, args.out)
    print(f"subspace artifact written to {path} "
          f"(m={scene.subspace.m}, |C|={scene.scheme.num_points})")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    config = SceneConfig.from_file(args.scene)
    scene = build_scene(config)
    frames, record = run_scene(scene, solver=args.solver, steps=args.steps,
                               gradient_norms=args.gradient_norms)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_frames(frames, out / "frames.jsonl", format="jsonl")
    export_frames(frames, out / "frames.smfx", format="binary")
    write_metrics_csv(record, out / "metrics.csv")
    print(f"{len(frames)} frames written to {out}")
    if record.error is not None:
        print(f"run truncated: {record.error}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_metrics(args) -> int:
    config = SceneConfig.from_file(args.scene)
    scene = build_scene(config)
    frames = load_frames(args.frames, dt=config.solver.dt)
    record = MetricsRecord(dt=config.solver.dt)
    compute_frame_metrics(scene, frames, record,
                          gradient_norms=args.gradient_norms)
    write_metrics_csv(record, args.out)
    print(f"metrics for {len(frames)} frames written to {args.out}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    from .server import serve  # deferred: pulls in websockets

    config = SceneConfig.from_file(args.scene)
    scene = build_scene(config)
    host, _, port = args.bind.rpartition(":")
    try:
        port = int(port)
    except ValueError as exc:
        raise SceneError(f"invalid bind address {args.bind!r}") from exc
    serve(scene, host or "127.0.0.1", port, realtime=args.realtime)
    return EXIT_OK


_COMMANDS = {
    "build-subspace": _cmd_build_subspace,
    "simulate": _cmd_simulate,
    "metrics": _cmd_metrics,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (SceneError, MeshError, FrameFormatError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SubspaceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
