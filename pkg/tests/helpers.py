"""Shared test utilities: random rigid transforms and independent oracles."""

from __future__ import annotations

import numpy as np

from handoverlab.geometry import Pose3, Rotation3


def random_rotation(rng: np.random.Generator) -> Rotation3:
    q = rng.normal(size=4)
    return Rotation3(*(q / np.linalg.norm(q)))


def random_pose(rng: np.random.Generator, trans_scale: float = 0.2) -> Pose3:
    return Pose3(random_rotation(rng), rng.normal(scale=trans_scale, size=3))


def random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)
