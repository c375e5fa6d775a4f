"""Benchmark metrics over grasp sets and episode logs, plus report rendering.

All aggregations reduce with math.fsum, so every metric is exactly invariant
under permutation and duplication of its inputs. div uses the population
standard deviation over the 28 pose parameters (3 translation + 3 rotation as
a rotation vector + 22 articulation), averaged across dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import EmptyInputError, UsageError
from .geometry import Pose3
from .grasping import (SIX_DIRECTIONS, GraspCandidate, StabilityParams,
                       hand_penetration, stability_test)
from .hand import HandConfig
from .mesh import ObjectMesh
from .episode import (OUTCOME_ERROR, OUTCOME_SUCCESS, OUTCOME_TIMEOUT,
                      Episode)

DEFAULT_TAU_PEN = 0.005
METERS_TO_CM = 100.0


@dataclass(frozen=True)
class GraspMetrics:
    succ1: float        # fraction surviving one random-direction force
    succ6: float        # fraction surviving all six axis-aligned forces
    pen_dep: float      # mean penetration of the hand into the object, cm
    div: float          # mean per-dimension std of pose params, succ6 set

    def __post_init__(self):
        for name in ("succ1", "succ6"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a fraction in [0,1]")
        if self.pen_dep < 0 or self.div < 0:
            raise ValueError("pen_dep and div must be nonnegative")


@dataclass(frozen=True)
class ApproachMetrics:
    succ: float         # % episodes reaching CLOSE with a holding grasp
    traj_len: float     # mean wrist path length, meters
    infer_fr: float     # mean frames to done (timeouts count max frames)
    pen_dep: float      # mean of per-episode mean penetration, cm
    pen_fr: float       # mean count of frames with penetration > tau_pen
    safe: float         # % episodes with mean penetration <= tau_pen

    def __post_init__(self):
        for name in ("succ", "safe"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} must be a percentage")
        if self.traj_len < 0 or self.infer_fr < 0:
            raise ValueError("traj_len and infer_fr must be nonnegative")


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def _population_std(values) -> float:
    values = list(values)
    m = _mean(values)
    return math.sqrt(math.fsum((v - m) ** 2 for v in values) / len(values))


def grasp_parameters(cand: GraspCandidate) -> np.ndarray:
    """28-vector of pose parameters: translation, rotation vector, joints."""
    pose = cand.relative.pose
    return np.concatenate([pose.translation, pose.rotation.as_rotvec(),
                           cand.relative.articulation])


def grasp_metrics(grasps, mesh: ObjectMesh, hand: HandConfig,
                  params: StabilityParams, seed: int = 0) -> GraspMetrics:
    grasps = list(grasps)
    if not grasps:
        raise EmptyInputError("no grasps to score")
    rng = np.random.default_rng(seed)
    succ1_flags = []
    succ6_flags = []
    pens = []
    for cand in grasps:
        pull = rng.normal(size=3)
        pull /= np.linalg.norm(pull)
        succ1_flags.append(stability_test(cand, mesh, params, [pull])[0])
        succ6_flags.append(all(stability_test(cand, mesh, params,
                                              SIX_DIRECTIONS)))
        pens.append(hand_penetration(hand, cand.relative, mesh,
                                     Pose3.identity()))
    survivors = [grasp_parameters(c)
                 for c, ok in zip(grasps, succ6_flags) if ok]
    if survivors:
        table = np.array(survivors)
        div = _mean(_population_std(table[:, j])
                    for j in range(table.shape[1]))
    else:
        div = 0.0
    return GraspMetrics(succ1=_mean(map(float, succ1_flags)),
                        succ6=_mean(map(float, succ6_flags)),
                        pen_dep=_mean(pens) * METERS_TO_CM,
                        div=div)


def episode_wrist_path(ep: Episode) -> float:
    """Total wrist travel from the scene's start pose, meters."""
    prev = ep.config.scene.hand_start_pose.translation
    total = []
    for r in ep.frames:
        t = r.hand_state.pose.translation
        total.append(float(np.linalg.norm(t - prev)))
        prev = t
    return math.fsum(total)


def episode_mean_penetration(ep: Episode) -> float:
    if not ep.frames:
        return 0.0
    return _mean(r.penetration for r in ep.frames)


def episode_frames_to_done(ep: Episode) -> float:
    if ep.outcome in (OUTCOME_TIMEOUT, OUTCOME_ERROR):
        return float(ep.config.max_frames)
    return float(len(ep.frames))


def approach_metrics(episodes, tau_pen: float = DEFAULT_TAU_PEN
                     ) -> ApproachMetrics:
    """Aggregate approach-phase metrics over a suite of episodes.

    TIMEOUT and ERROR episodes contribute max_frames to infer_fr. Episodes
    that never produced a frame (no valid grasp) contribute zero path
    length, zero frames, zero penetration, and therefore count as safe.
    """
    episodes = list(episodes)
    if not episodes:
        raise EmptyInputError("no episodes to score")
    succ = [ep.outcome == OUTCOME_SUCCESS and bool(ep.succ1)
            for ep in episodes]
    mean_pens = [episode_mean_penetration(ep) for ep in episodes]
    pen_counts = [sum(1 for r in ep.frames if r.penetration > tau_pen)
                  for ep in episodes]
    return ApproachMetrics(
        succ=100.0 * _mean(map(float, succ)),
        traj_len=_mean(episode_wrist_path(ep) for ep in episodes),
        infer_fr=_mean(episode_frames_to_done(ep) for ep in episodes),
        pen_dep=_mean(mean_pens) * METERS_TO_CM,
        pen_fr=_mean(map(float, pen_counts)),
        # <= not <: a run whose every frame stays at the threshold has
        # pen_fr 0 and must count safe.
        safe=100.0 * _mean(float(p <= tau_pen) for p in mean_pens),
    )


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

REPORT_FORMATS = ("table", "csv", "plot-data")


def _columns(metrics: dict) -> list[str]:
    kinds = {type(m) for m in metrics.values()}
    if len(kinds) != 1 or kinds.pop() not in (GraspMetrics, ApproachMetrics):
        raise UsageError("report needs a uniform mapping of label to "
                         "GraspMetrics or ApproachMetrics")
    first = next(iter(metrics.values()))
    return [f.name for f in fields(first)]


def emit_report(metrics: dict, fmt: str = "table") -> str:
    """Render {label: metrics} rows; labels keep their insertion order."""
    if fmt not in REPORT_FORMATS:
        raise UsageError(f"unknown report format {fmt!r}; choose from "
                         f"{REPORT_FORMATS}")
    if not metrics:
        raise EmptyInputError("nothing to report")
    cols = _columns(metrics)
    if fmt == "csv":
        lines = ["label," + ",".join(cols)]
        for label, m in metrics.items():
            lines.append(label + "," +
                         ",".join(repr(getattr(m, c)) for c in cols))
        return "\n".join(lines) + "\n"
    if fmt == "plot-data":
        labels = list(metrics)
        lines = ["# plot-data series: x = run index"]
        lines.append("labels=" + ",".join(labels))
        for c in cols:
            pts = " ".join(f"({i},{getattr(m, c)!r})"
                           for i, m in enumerate(metrics.values()))
            lines.append(f"{c}: {pts}")
        return "\n".join(lines) + "\n"
    widths = {c: max(len(c), *(len(f"{getattr(m, c):.4f}")
                               for m in metrics.values())) for c in cols}
    label_w = max(len("run"), *(len(l) for l in metrics))
    header = "run".ljust(label_w) + "  " + \
        "  ".join(c.rjust(widths[c]) for c in cols)
    rows = [header, "-" * len(header)]
    for label, m in metrics.items():
        rows.append(label.ljust(label_w) + "  " +
                    "  ".join(f"{getattr(m, c):.4f}".rjust(widths[c])
                              for c in cols))
    return "\n".join(rows) + "\n"


def parse_report_csv(text: str) -> dict:
    """Inverse of emit_report(..., "csv")."""
    lines = [l for l in text.strip().splitlines() if l]
    if not lines:
        raise UsageError("empty csv report")
    header = lines[0].split(",")
    if header[:1] != ["label"]:
        raise UsageError("csv report must start with a label column")
    cols = header[1:]
    by_fields = {tuple(f.name for f in fields(k)): k
                 for k in (GraspMetrics, ApproachMetrics)}
    kind = by_fields.get(tuple(cols))
    if kind is None:
        raise UsageError(f"unrecognized metric columns {cols}")
    out = {}
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != len(cols) + 1:
            raise UsageError(f"malformed csv row {line!r}")
        out[parts[0]] = kind(**{c: float(v)
                                for c, v in zip(cols, parts[1:])})
    return out
