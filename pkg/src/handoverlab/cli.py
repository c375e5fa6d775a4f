"""Command-line front end for the handover benchmark pipeline.

Exit codes: 0 success, 1 input error, 2 empty result (no grasp survivors,
nothing to aggregate), 3 internal invariant breach. Environment overrides
are limited to HANDOVERLAB_OUTPUT_DIR (prefix for relative output paths)
and HANDOVERLAB_JOBS (default worker count); all other behavior comes from
explicit arguments and config files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .alignment import MODES
from .configio import (RunManifest, atomic_write_text, build_episode_config,
                       build_suite, check_config, config_hash, load_config,
                       manifest_path, read_episode_log, utc_now,
                       write_episode_log, write_manifest)
from .episode import run_benchmark, run_episode
from .errors import EmptyInputError, HandoverError, NoValidGraspError
from .geometry import Pose3, Rotation3
from .grasping import StabilityParams, filter_candidates, sample_candidates
from .hand import default_hand_config, load_hand_config, validate_hand
from .icp import IcpParams, load_xyz, track_sequence
from .mesh import load_mesh, parse_mesh_file, validate_mesh
from .metrics import DEFAULT_TAU_PEN, approach_metrics, emit_report

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_EMPTY = 2
EXIT_INTERNAL = 3

ENV_OUTPUT_DIR = "HANDOVERLAB_OUTPUT_DIR"
ENV_JOBS = "HANDOVERLAB_JOBS"

BENCHMARK_DOF = 22
GRASP_FILE_VERSION = 1
TRACK_FILE_VERSION = 1


def _resolve_out(path) -> Path:
    base = os.environ.get(ENV_OUTPUT_DIR)
    p = Path(path)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def _default_jobs() -> int:
    return max(1, int(os.environ.get(ENV_JOBS, "1")))


def _emit_manifest(out_path: Path, cfg_hash: str, seeds, started: str,
                   outputs) -> None:
    write_manifest(manifest_path(out_path),
                   RunManifest(config_hash=cfg_hash, seeds=tuple(seeds),
                               started=started, finished=utc_now(),
                               outputs=tuple(str(p) for p in outputs)))


# ---------------------------------------------------------------------------
# generate-grasps
# ---------------------------------------------------------------------------

def _grasp_doc(cand) -> dict:
    pose = cand.relative.pose
    return {
        "index": cand.index,
        "translation": [float(x) for x in pose.translation],
        "quaternion": [float(pose.rotation.w), float(pose.rotation.x),
                       float(pose.rotation.y), float(pose.rotation.z)],
        "articulation": [float(x) for x in cand.relative.articulation],
        "contacts": [{"point": [float(x) for x in c.point],
                      "normal": [float(x) for x in c.normal],
                      "link": c.link} for c in cand.contacts],
        "stable6": cand.stable6,
        "collision_free": cand.collision_free,
    }


def cmd_generate_grasps(args) -> int:
    started = utc_now()
    mesh = load_mesh(args.mesh)
    hand = (load_hand_config(args.hand) if args.hand
            else default_hand_config())
    params = StabilityParams(friction=args.friction)
    candidates = sample_candidates(mesh, hand, args.count, args.seed)
    filtered = filter_candidates(candidates, mesh, hand, params)
    survivors = [c for c in filtered if c.surviving()]
    out = _resolve_out(args.out)
    doc = {
        "format_version": GRASP_FILE_VERSION,
        "mesh": str(args.mesh),
        "count": args.count,
        "seed": args.seed,
        "friction": args.friction,
        "survivors": len(survivors),
        "candidates": [_grasp_doc(c) for c in filtered],
    }
    atomic_write_text(out, json.dumps(doc, indent=2) + "\n")
    effective = {"command": "generate-grasps", "mesh": str(args.mesh),
                 "hand": str(args.hand) if args.hand else None,
                 "count": args.count, "seed": args.seed,
                 "friction": args.friction}
    _emit_manifest(out, config_hash(effective), [args.seed], started, [out])
    print(f"{len(survivors)} of {len(filtered)} candidates survived "
          f"both filters -> {out}")
    return EXIT_OK if survivors else EXIT_EMPTY


# ---------------------------------------------------------------------------
# run-episode / run-benchmark
# ---------------------------------------------------------------------------

def cmd_run_episode(args) -> int:
    started = utc_now()
    doc = load_config(args.config)
    base = Path(args.config).parent
    cfg = build_episode_config(doc, base, mode=args.mode, seed=args.seed)
    episode = run_episode(cfg)
    out = _resolve_out(args.out)
    write_episode_log(out, episode, args.mode)
    _emit_manifest(out, config_hash(doc), [cfg.seed], started, [out])
    print(f"outcome {episode.outcome} after {len(episode.frames)} frames "
          f"-> {out}")
    return EXIT_OK


def cmd_run_benchmark(args) -> int:
    started = utc_now()
    doc = load_config(args.config)
    base = Path(args.config).parent
    suite = build_suite(doc, base, mode=args.mode)
    episodes = run_benchmark(suite, jobs=args.jobs)
    out_dir = _resolve_out(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for cfg, ep in zip(suite, episodes):
        log_path = out_dir / f"episode-{cfg.seed:04d}.jsonl"
        write_episode_log(log_path, ep, args.mode)
        outputs.append(log_path)
    label = suite[0].label or suite[0].policy
    report = emit_report({label: approach_metrics(episodes,
                                                  suite[0].tau_pen)},
                         args.report_format)
    ext = {"table": "txt", "csv": "csv", "plot-data": "dat"}
    report_path = out_dir / f"report.{ext[args.report_format]}"
    atomic_write_text(report_path, report)
    outputs.append(report_path)
    _emit_manifest(out_dir / "run", config_hash(doc),
                   [c.seed for c in suite], started, outputs)
    done = sum(1 for ep in episodes if ep.outcome == "SUCCESS")
    print(f"{len(episodes)} episodes ({done} SUCCESS), U = "
          f"{suite[0].alignment.threshold} -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# icp-track
# ---------------------------------------------------------------------------

def cmd_icp_track(args) -> int:
    started = utc_now()
    frames = [load_xyz(p).points for p in args.frames]
    init = Pose3(Rotation3(*args.init_quaternion),
                 np.array(args.init_translation, dtype=float))
    params = IcpParams(max_iterations=args.max_iterations,
                       tolerance=args.tolerance,
                       max_correspondence=args.max_correspondence,
                       trim_fraction=args.trim_fraction)
    results = track_sequence(frames, init, params)
    out = _resolve_out(args.out)
    doc = {
        "format_version": TRACK_FILE_VERSION,
        "frames": [{
            "frame": i,
            "translation": [float(x) for x in r.pose.translation],
            "quaternion": [float(r.pose.rotation.w), float(r.pose.rotation.x),
                           float(r.pose.rotation.y),
                           float(r.pose.rotation.z)],
            "rmse": r.rmse,
            "iterations": r.iterations,
            "converged": r.converged,
        } for i, r in enumerate(results)],
    }
    atomic_write_text(out, json.dumps(doc, indent=2) + "\n")
    effective = {"command": "icp-track",
                 "frames": [str(p) for p in args.frames],
                 "init_translation": list(args.init_translation),
                 "init_quaternion": list(args.init_quaternion),
                 "max_iterations": args.max_iterations,
                 "tolerance": args.tolerance,
                 "max_correspondence": args.max_correspondence,
                 "trim_fraction": args.trim_fraction}
    _emit_manifest(out, config_hash(effective), [], started, [out])
    print(f"tracked {len(results)} frames -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def cmd_metrics(args) -> int:
    started = utc_now()
    episodes = [read_episode_log(p) for p in args.logs]
    groups: dict[str, list] = {}
    for ep in episodes:
        groups.setdefault(ep.config.label or "run", []).append(ep)
    table = {label: approach_metrics(eps, args.tau_pen)
             for label, eps in sorted(groups.items())}
    text = emit_report(table, args.format)
    if args.out:
        out = _resolve_out(args.out)
        atomic_write_text(out, text)
        effective = {"command": "metrics",
                     "logs": [str(p) for p in args.logs],
                     "format": args.format, "tau_pen": args.tau_pen}
        _emit_manifest(out, config_hash(effective), [], started, [out])
        print(f"{len(episodes)} episodes in {len(table)} groups -> {out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def _config_violations(path) -> list[str]:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except Exception as exc:
        return [f"{path}: unreadable: {exc}"]
    problems = [f"{path}: {p}" for p in check_config(doc)]
    if problems:
        return problems
    try:
        build_episode_config(doc, Path(path).parent)
        if doc.get("benchmark"):
            build_suite(doc, Path(path).parent)
    except Exception as exc:
        problems.append(f"{path}: {exc}")
    return problems


def _mesh_violations(path) -> list[str]:
    try:
        vertices, triangles = parse_mesh_file(path)
    except Exception as exc:
        return [f"{path}: unreadable: {exc}"]
    return [f"{path}: {p}" for p in validate_mesh(vertices, triangles)]


def _hand_violations(path) -> list[str]:
    try:
        hand = load_hand_config(path)
    except Exception as exc:
        return [f"{path}: {exc}"]
    problems = [f"{path}: {p}" for p in validate_hand(hand)]
    if hand.articulation_dim != BENCHMARK_DOF:
        problems.append(
            f"{path}: articulation_dim is {hand.articulation_dim}; the "
            f"benchmark hand must have {BENCHMARK_DOF}")
    return problems


def cmd_validate(args) -> int:
    if not (args.config or args.mesh or args.hand):
        print("nothing to validate (pass --config, --mesh, or --hand)")
        return EXIT_OK
    problems = []
    for path in args.config or []:
        problems += _config_violations(path)
    for path in args.mesh or []:
        problems += _mesh_violations(path)
    for path in args.hand or []:
        problems += _hand_violations(path)
    for p in problems:
        print(p)
    if not problems:
        print("all inputs valid")
    return EXIT_OK if not problems else EXIT_INPUT_ERROR


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="handoverlab",
        description="Simulation and benchmark harness for dexterous "
                    "human-to-robot handover.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-grasps",
                       help="sample and filter grasp candidates on a mesh")
    g.add_argument("--mesh", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--hand", default=None)
    g.add_argument("--count", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--friction", type=float, default=0.5)
    g.set_defaults(func=cmd_generate_grasps)

    e = sub.add_parser("run-episode", help="simulate one handover episode")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--mode", choices=sorted(MODES), default=None)
    e.add_argument("--seed", type=int, default=None)
    e.set_defaults(func=cmd_run_episode)

    b = sub.add_parser("run-benchmark",
                       help="run a seeded episode suite and aggregate")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--mode", choices=sorted(MODES), default=None)
    b.add_argument("--jobs", type=int, default=_default_jobs())
    b.add_argument("--report-format", choices=("table", "csv", "plot-data"),
                   default="csv")
    b.set_defaults(func=cmd_run_benchmark)

    t = sub.add_parser("icp-track",
                       help="recover object poses from point-cloud frames")
    t.add_argument("frames", nargs="+")
    t.add_argument("--out", required=True)
    t.add_argument("--init-translation", type=float, nargs=3,
                   default=(0.0, 0.0, 0.0))
    t.add_argument("--init-quaternion", type=float, nargs=4,
                   default=(1.0, 0.0, 0.0, 0.0))
    t.add_argument("--max-iterations", type=int, default=50)
    t.add_argument("--tolerance", type=float, default=1e-6)
    t.add_argument("--max-correspondence", type=float, default=0.05)
    t.add_argument("--trim-fraction", type=float, default=0.0)
    t.set_defaults(func=cmd_icp_track)

    m = sub.add_parser("metrics",
                       help="aggregate episode logs into a report")
    m.add_argument("logs", nargs="+")
    m.add_argument("--out", default=None)
    m.add_argument("--format", choices=("table", "csv", "plot-data"),
                   default="table")
    m.add_argument("--tau-pen", type=float, default=DEFAULT_TAU_PEN)
    m.set_defaults(func=cmd_metrics)

    v = sub.add_parser("validate",
                       help="check configs, meshes, and hand files")
    v.add_argument("--config", action="append")
    v.add_argument("--mesh", action="append")
    v.add_argument("--hand", action="append")
    v.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (EmptyInputError, NoValidGraspError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (HandoverError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except Exception as exc:
        print(f"internal error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
