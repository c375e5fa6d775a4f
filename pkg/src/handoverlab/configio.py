"""Config files, episode logs, and run manifests.

Run configs are YAML documents carrying a format_version; episode logs are
line-delimited JSON (one header line, one line per frame, one footer);
manifests are JSON. Every writer goes through a write-temp-then-rename, so a
reader never observes a partial file. The config hash is a sha256 over the
canonicalized document (keys sorted, whitespace and comments discarded), so
reformatting a config does not change its identity.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .alignment import DISTANCE_MODES, MODES, AlignmentParams
from .episode import (DEFAULT_GOAL_ROT_WEIGHT, Episode, EpisodeConfig,
                      FrameRecord)
from .errors import ConfigMismatchError
from .geometry import Pose3, Rotation3
from .grasping import StabilityParams
from .hand import HandConfig, HandState, default_hand_config, load_hand_config
from .mesh import ObjectMesh, Sphere, box_mesh, icosphere_mesh, load_mesh
from .policy import POLICIES, PolicyParams
from .world import TRAJECTORY_KINDS, GiverTrajectory, Scene

CONFIG_FORMAT_VERSION = 1
LOG_FORMAT_VERSION = 1
MANIFEST_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Atomic writes and hashing
# ---------------------------------------------------------------------------

def atomic_write_text(path, text: str) -> None:
    """Write via a sibling temp file and rename; partial files never land."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".",
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_config_text(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def config_hash(doc) -> str:
    """sha256 of the canonicalized config; accepts a dict or YAML text."""
    if isinstance(doc, str):
        doc = yaml.safe_load(doc)
    return hashlib.sha256(canonical_config_text(doc).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

_MESH_KEYS = ("box", "sphere", "path")


def _is_vec3(v) -> bool:
    return (isinstance(v, (list, tuple)) and len(v) == 3
            and all(isinstance(x, (int, float)) for x in v))


def _is_quat(v) -> bool:
    return (isinstance(v, (list, tuple)) and len(v) == 4
            and all(isinstance(x, (int, float)) for x in v))


def _check_pose(doc, where, out):
    if not isinstance(doc, dict):
        out.append(f"{where}: must be a mapping")
        return
    if not _is_vec3(doc.get("translation")):
        out.append(f"{where}.translation: must be a 3-vector")
    if "quaternion" in doc and not _is_quat(doc["quaternion"]):
        out.append(f"{where}.quaternion: must be [w, x, y, z]")


def _check_number(doc, where, key, out, minimum=None, integer=False):
    if key not in doc:
        return
    v = doc[key]
    kinds = (int,) if integer else (int, float)
    if not isinstance(v, kinds) or isinstance(v, bool):
        out.append(f"{where}.{key}: must be a number")
        return
    if minimum is not None and v < minimum:
        out.append(f"{where}.{key}: must be >= {minimum}")


def _check_mesh(doc, out):
    if not isinstance(doc, dict):
        out.append("scene.mesh: must be a mapping")
        return
    given = [k for k in _MESH_KEYS if k in doc]
    if len(given) != 1:
        out.append(f"scene.mesh: exactly one of {_MESH_KEYS} required")
        return
    k = given[0]
    if k == "box" and not _is_vec3(doc["box"]):
        out.append("scene.mesh.box: must be [sx, sy, sz]")
    if k == "sphere":
        s = doc["sphere"]
        if not isinstance(s, dict) or "radius" not in s:
            out.append("scene.mesh.sphere: needs a radius")
    if k == "path" and not isinstance(doc["path"], str):
        out.append("scene.mesh.path: must be a string")


def _check_trajectory(doc, out, where="scene.trajectory"):
    if not isinstance(doc, dict):
        out.append(f"{where}: must be a mapping")
        return
    kind = doc.get("kind")
    if kind not in TRAJECTORY_KINDS:
        out.append(f"{where}.kind: must be one of {TRAJECTORY_KINDS}")
    if "start" not in doc:
        out.append(f"{where}.start: required")
    else:
        _check_pose(doc["start"], f"{where}.start", out)
    if not isinstance(doc.get("duration"), int) or doc.get("duration", 0) < 1:
        out.append(f"{where}.duration: must be a positive integer")
    for key in ("speed", "radius", "angular_rate", "period", "spin_rate",
                "translation_cap", "rotation_cap"):
        _check_number(doc, where, key, out)
    for key in ("direction", "amplitude", "spin_axis"):
        if key in doc and not _is_vec3(doc[key]):
            out.append(f"{where}.{key}: must be a 3-vector")
    if kind == "linear" and "speed" not in doc:
        out.append(f"{where}.speed: required for linear trajectories")
    if kind == "piecewise-waypoint":
        wps = doc.get("waypoints")
        if not isinstance(wps, list) or not wps:
            out.append(f"{where}.waypoints: required, a nonempty list")
        else:
            for i, wp in enumerate(wps):
                if not isinstance(wp, dict) or "frame" not in wp:
                    out.append(f"{where}.waypoints[{i}]: needs a frame")
                else:
                    _check_pose(wp, f"{where}.waypoints[{i}]", out)


def _check_scene(doc, out):
    if not isinstance(doc, dict):
        out.append("scene: must be a mapping")
        return
    if "mesh" not in doc:
        out.append("scene.mesh: required")
    else:
        _check_mesh(doc["mesh"], out)
    if "hand_start" not in doc:
        out.append("scene.hand_start: required")
    else:
        _check_pose(doc["hand_start"], "scene.hand_start", out)
    if "trajectory" not in doc:
        out.append("scene.trajectory: required")
    else:
        _check_trajectory(doc["trajectory"], out)
    _check_number(doc, "scene", "object_samples", out, minimum=8,
                  integer=True)
    for i, p in enumerate(doc.get("proxies", []) or []):
        if (not isinstance(p, dict) or not _is_vec3(p.get("center"))
                or not isinstance(p.get("radius"), (int, float))):
            out.append(f"scene.proxies[{i}]: needs center [x,y,z] and radius")


def _check_episode(doc, out):
    if not isinstance(doc, dict):
        out.append("episode: must be a mapping")
        return
    policy = doc.get("policy", "velocity_matching")
    if policy not in POLICIES:
        out.append(f"episode.policy: must be one of {sorted(POLICIES)}")
    for key, minimum in (("candidates", 1), ("max_frames", 1),
                         ("reselect_every", 1), ("seed", 0)):
        _check_number(doc, "episode", key, out, minimum=minimum, integer=True)
    _check_number(doc, "episode", "tau_pen", out, minimum=1e-9)
    _check_number(doc, "episode", "goal_rot_weight", out, minimum=0.0)
    align = doc.get("alignment", {})
    if align and not isinstance(align, dict):
        out.append("episode.alignment: must be a mapping")
    elif align:
        for key in ("threshold", "velocity", "stop", "collision_tolerance"):
            _check_number(align, "episode.alignment", key, out, minimum=1e-9)
        if ("distance_mode" in align
                and align["distance_mode"] not in DISTANCE_MODES):
            out.append("episode.alignment.distance_mode: must be one of "
                       f"{DISTANCE_MODES}")
    pol = doc.get("policy_params", {})
    if pol and not isinstance(pol, dict):
        out.append("episode.policy_params: must be a mapping")
    elif pol:
        for key in ("gain", "step_cap"):
            _check_number(pol, "episode.policy_params", key, out,
                          minimum=1e-9)
        for key in ("horizon", "executed_prefix", "window"):
            _check_number(pol, "episode.policy_params", key, out, minimum=1,
                          integer=True)
    stab = doc.get("stability", {})
    if stab and not isinstance(stab, dict):
        out.append("episode.stability: must be a mapping")
    elif stab:
        _check_number(stab, "episode.stability", "friction", out, minimum=0)
        for key in ("test_force_scale", "force_budget", "object_mass"):
            _check_number(stab, "episode.stability", key, out, minimum=1e-9)
        _check_number(stab, "episode.stability", "cone_edges", out,
                      minimum=3, integer=True)


def check_config(doc) -> list[str]:
    """All schema violations as dotted-path messages; empty when clean."""
    out: list[str] = []
    if not isinstance(doc, dict):
        return ["config: document must be a mapping"]
    version = doc.get("format_version")
    if version != CONFIG_FORMAT_VERSION:
        out.append(f"format_version: expected {CONFIG_FORMAT_VERSION}, "
                   f"got {version!r}")
    if "scene" not in doc:
        out.append("scene: required")
    else:
        _check_scene(doc["scene"], out)
    _check_episode(doc.get("episode", {}), out)
    hand = doc.get("hand")
    if hand is not None:
        if not isinstance(hand, dict) or \
                len([k for k in ("path", "builtin") if k in hand]) != 1:
            out.append("hand: must give exactly one of path or builtin")
        elif "builtin" in hand:
            _check_number(hand["builtin"] or {}, "hand.builtin", "seed", out,
                          minimum=0, integer=True)
    bench = doc.get("benchmark")
    if bench is not None:
        if not isinstance(bench, dict):
            out.append("benchmark: must be a mapping")
        else:
            seeds = bench.get("seeds")
            if isinstance(seeds, list):
                if not seeds or not all(isinstance(s, int) and s >= 0
                                        for s in seeds):
                    out.append("benchmark.seeds: must be a nonempty list of "
                               "nonnegative integers")
            elif isinstance(seeds, dict):
                for key in ("first", "count"):
                    if not isinstance(seeds.get(key), int):
                        out.append(f"benchmark.seeds.{key}: required integer")
                if isinstance(seeds.get("count"), int) and seeds["count"] < 1:
                    out.append("benchmark.seeds.count: must be >= 1")
            else:
                out.append("benchmark.seeds: must be a list or "
                           "{first, count}")
            trajs = bench.get("trajectories")
            if trajs is not None:
                if not isinstance(trajs, list) or not trajs:
                    out.append("benchmark.trajectories: must be a nonempty "
                               "list of trajectory mappings")
                else:
                    for i, t in enumerate(trajs):
                        _check_trajectory(t, out,
                                          f"benchmark.trajectories[{i}]")
    return out


def load_config(path) -> dict:
    """Parse and validate a run config; raises on the first violation."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigMismatchError(f"{path}: not valid YAML: {exc}") from exc
    problems = check_config(doc)
    if problems:
        raise ConfigMismatchError(f"{path}: {problems[0]}")
    return doc


# ---------------------------------------------------------------------------
# Builders: config document -> runtime objects
# ---------------------------------------------------------------------------

def _pose_from(doc) -> Pose3:
    q = doc.get("quaternion", (1.0, 0.0, 0.0, 0.0))
    return Pose3(Rotation3(*[float(x) for x in q]),
                 np.array(doc["translation"], dtype=float))


def build_mesh(doc, base_dir=".") -> ObjectMesh:
    if "box" in doc:
        return box_mesh(tuple(float(x) for x in doc["box"]))
    if "sphere" in doc:
        s = doc["sphere"]
        return icosphere_mesh(float(s["radius"]),
                              int(s.get("subdivisions", 2)))
    return load_mesh(Path(base_dir) / doc["path"])


def build_trajectory(doc) -> GiverTrajectory:
    kw = {}
    for key in ("speed", "radius", "angular_rate", "period", "spin_rate",
                "translation_cap", "rotation_cap"):
        if key in doc:
            kw[key] = float(doc[key])
    for key in ("direction", "amplitude", "spin_axis"):
        if key in doc:
            kw[key] = np.array(doc[key], dtype=float)
    if doc["kind"] == "piecewise-waypoint":
        kw["waypoints"] = tuple((int(w["frame"]), _pose_from(w))
                                for w in doc["waypoints"])
    return GiverTrajectory(doc["kind"], _pose_from(doc["start"]),
                           int(doc["duration"]), **kw)


def build_scene(doc, base_dir=".") -> Scene:
    start = doc["hand_start"]
    articulation = start.get("articulation")
    proxies = tuple(Sphere(np.array(p["center"], dtype=float),
                           float(p["radius"]))
                    for p in doc.get("proxies", []) or [])
    kw = {}
    if "object_samples" in doc:
        kw["object_samples"] = int(doc["object_samples"])
    return Scene(mesh=build_mesh(doc["mesh"], base_dir),
                 trajectory=build_trajectory(doc["trajectory"]),
                 hand_start_pose=_pose_from(start),
                 hand_start_articulation=(
                     None if articulation is None
                     else np.array(articulation, dtype=float)),
                 proxies_local=proxies, **kw)


def build_hand(doc, base_dir=".") -> HandConfig:
    if doc is None:
        return default_hand_config()
    if "path" in doc:
        return load_hand_config(Path(base_dir) / doc["path"])
    builtin = doc.get("builtin") or {}
    return default_hand_config(seed=int(builtin.get("seed", 0)))


def _params_from(doc, cls, **extra):
    kw = dict(extra)
    for f in cls.__dataclass_fields__:
        if f in doc:
            kw[f] = doc[f]
    return cls(**kw)


def build_episode_config(doc, base_dir=".", mode: str | None = None,
                         seed: int | None = None,
                         label: str | None = None) -> EpisodeConfig:
    """Materialize one EpisodeConfig; mode/seed/label override the document."""
    ep = doc.get("episode", {}) or {}
    align_doc = dict(ep.get("alignment", {}) or {})
    if mode is not None:
        if mode not in MODES:
            raise ConfigMismatchError(
                f"mode: must be one of {sorted(MODES)}")
        align_doc["threshold"] = MODES[mode]
    alignment = _params_from(align_doc, AlignmentParams)
    policy_params = _params_from(ep.get("policy_params", {}) or {},
                                 PolicyParams)
    stability = _params_from(ep.get("stability", {}) or {}, StabilityParams)
    if label is None:
        label = ep.get("label", "")
    return EpisodeConfig(
        scene=build_scene(doc["scene"], base_dir),
        hand=build_hand(doc.get("hand"), base_dir),
        policy=ep.get("policy", "velocity_matching"),
        policy_params=policy_params,
        alignment=alignment,
        stability=stability,
        candidates=int(ep.get("candidates", 16)),
        seed=int(ep.get("seed", 0) if seed is None else seed),
        max_frames=int(ep.get("max_frames", 120)),
        tau_pen=float(ep.get("tau_pen", 0.005)),
        reselect_every=int(ep.get("reselect_every", 10)),
        goal_rot_weight=float(ep.get("goal_rot_weight",
                                     DEFAULT_GOAL_ROT_WEIGHT)),
        label=label,
    )


def benchmark_seeds(doc) -> list[int]:
    bench = doc.get("benchmark")
    if not bench:
        raise ConfigMismatchError("benchmark: section required for suites")
    seeds = bench["seeds"]
    if isinstance(seeds, dict):
        return [seeds["first"] + i for i in range(seeds["count"])]
    return list(seeds)


def build_suite(doc, base_dir=".", mode: str | None = None
                ) -> list[EpisodeConfig]:
    """One EpisodeConfig per benchmark seed; episode i takes trajectory
    i mod n when benchmark.trajectories lists n alternatives."""
    ep = doc.get("episode", {}) or {}
    policy = ep.get("policy", "velocity_matching")
    label = ep.get("label") or (f"{policy}-{mode}" if mode else policy)
    trajectories = (doc.get("benchmark") or {}).get("trajectories")
    configs = []
    for i, seed in enumerate(benchmark_seeds(doc)):
        current = doc
        if trajectories:
            current = copy.deepcopy(doc)
            current["scene"]["trajectory"] = \
                trajectories[i % len(trajectories)]
        configs.append(build_episode_config(current, base_dir, mode=mode,
                                            seed=seed, label=label))
    return configs


# ---------------------------------------------------------------------------
# Run manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    seeds: tuple[int, ...]
    started: str
    finished: str
    outputs: tuple[str, ...]
    tool: str = "handoverlab"
    version: str = __version__
    format_version: int = MANIFEST_FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "outputs",
                           tuple(str(p) for p in self.outputs))


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(path, manifest: RunManifest) -> None:
    doc = {
        "format_version": manifest.format_version,
        "tool": manifest.tool,
        "version": manifest.version,
        "config_hash": manifest.config_hash,
        "seeds": list(manifest.seeds),
        "started": manifest.started,
        "finished": manifest.finished,
        "outputs": list(manifest.outputs),
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def read_manifest(path) -> RunManifest:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise ConfigMismatchError(
            f"{path}: unsupported manifest format_version "
            f"{doc.get('format_version')!r}")
    return RunManifest(config_hash=doc["config_hash"],
                       seeds=tuple(doc["seeds"]),
                       started=doc["started"], finished=doc["finished"],
                       outputs=tuple(doc["outputs"]), tool=doc["tool"],
                       version=doc["version"])


def manifest_path(output_path) -> Path:
    output_path = Path(output_path)
    return output_path.with_name(output_path.name + ".manifest.json")


# ---------------------------------------------------------------------------
# Episode logs (line-delimited JSON)
# ---------------------------------------------------------------------------

def _floats(a) -> list[float]:
    return [float(x) for x in np.asarray(a).ravel()]


def _quat(rotation: Rotation3) -> list[float]:
    return [float(rotation.w), float(rotation.x), float(rotation.y),
            float(rotation.z)]


def episode_log_text(episode: Episode, mode: str | None = None) -> str:
    """Serialize one episode as header, frame lines, and a DONE footer."""
    cfg = episode.config
    header = {
        "record": "header",
        "format_version": LOG_FORMAT_VERSION,
        "label": cfg.label,
        "seed": cfg.seed,
        "policy": cfg.policy,
        "mode": mode,
        "U": cfg.alignment.threshold,
        "velocity": cfg.alignment.velocity,
        "stop": cfg.alignment.stop,
        "max_frames": cfg.max_frames,
        "tau_pen": cfg.tau_pen,
        "hand_start": _floats(cfg.scene.hand_start_pose.translation),
        "hand_start_quaternion": _quat(cfg.scene.hand_start_pose.rotation),
    }
    lines = [json.dumps(header)]
    for r in episode.frames:
        lines.append(json.dumps({
            "record": "frame",
            "frame": r.frame,
            "phase": r.phase,
            "wrist": _floats(r.hand_state.pose.translation),
            "wrist_quaternion": _quat(r.hand_state.pose.rotation),
            "articulation": _floats(r.hand_state.articulation),
            "object": _floats(r.object_pose.translation),
            "object_quaternion": _quat(r.object_pose.rotation),
            "distance": r.distance,
            "penetration": r.penetration,
            "goal_id": r.goal_id,
        }))
    footer = {
        "record": "footer",
        "phase": "DONE",
        "outcome": episode.outcome,
        "frames": len(episode.frames),
        "succ1": episode.succ1,
        "succ6": episode.succ6,
        "goal_id": episode.goal_id,
        "error": episode.error,
    }
    lines.append(json.dumps(footer))
    return "\n".join(lines) + "\n"


def write_episode_log(path, episode: Episode, mode: str | None = None) -> None:
    atomic_write_text(path, episode_log_text(episode, mode))


@dataclass(frozen=True)
class LogScene:
    hand_start_pose: Pose3


@dataclass(frozen=True)
class LogConfig:
    """Header view of a logged episode; quacks like EpisodeConfig for
    metric aggregation."""

    scene: LogScene
    label: str
    seed: int
    policy: str
    mode: str | None
    threshold: float
    max_frames: int
    tau_pen: float


def read_episode_log(path) -> Episode:
    lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
    if len(lines) < 2:
        raise ConfigMismatchError(f"{path}: truncated episode log")
    records = [json.loads(l) for l in lines]
    header, footer = records[0], records[-1]
    if header.get("record") != "header" or footer.get("record") != "footer":
        raise ConfigMismatchError(
            f"{path}: log must start with a header and end with a footer")
    if header.get("format_version") != LOG_FORMAT_VERSION:
        raise ConfigMismatchError(
            f"{path}: unsupported log format_version "
            f"{header.get('format_version')!r}")
    cfg = LogConfig(
        scene=LogScene(Pose3(Rotation3(*header["hand_start_quaternion"]),
                             np.array(header["hand_start"], dtype=float))),
        label=header["label"], seed=header["seed"], policy=header["policy"],
        mode=header.get("mode"), threshold=header["U"],
        max_frames=header["max_frames"], tau_pen=header["tau_pen"])
    frames = []
    for i, rec in enumerate(records[1:-1]):
        if rec.get("record") != "frame":
            raise ConfigMismatchError(f"{path}: line {i + 2} is not a frame")
        if rec["frame"] != i:
            raise ConfigMismatchError(
                f"{path}: frame indices must be contiguous from 0, "
                f"got {rec['frame']} at position {i}")
        state = HandState(Pose3(Rotation3(*rec["wrist_quaternion"]),
                                np.array(rec["wrist"], dtype=float)),
                          np.array(rec["articulation"], dtype=float))
        obj = Pose3(Rotation3(*rec["object_quaternion"]),
                    np.array(rec["object"], dtype=float))
        frames.append(FrameRecord(rec["frame"], rec["phase"], state, obj,
                                  rec["distance"], rec["penetration"],
                                  rec["goal_id"]))
    if footer.get("frames") != len(frames):
        raise ConfigMismatchError(
            f"{path}: footer frame count {footer.get('frames')} != "
            f"{len(frames)} frame lines")
    return Episode(config=cfg, frames=tuple(frames),
                   outcome=footer["outcome"], succ1=footer.get("succ1"),
                   succ6=footer.get("succ6"), goal_id=footer.get("goal_id"),
                   error=footer.get("error"))
