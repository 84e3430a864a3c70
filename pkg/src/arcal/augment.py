"""Label-consistent point cloud augmentation and fixed-size subsampling.

Every transform moves the label box together with the points, so membership
of any point in the box is preserved exactly. RNG state is always passed in
explicitly to keep parallel data loading reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .boxes import OrientedBox, points_in_box, wrap_angle
from .clouds import PointCloud, load_ply, save_ply

LABEL_CLASS = "robot"


@dataclass
class LabeledCloud:
    cloud: PointCloud
    box: OrientedBox | None
    cloud_id: str
    has_object: bool = True

    def __post_init__(self):
        if self.has_object and self.box is None:
            raise ValueError("has_object requires a box")


def random_scale(lc, factor):
    """Scale points, box center and box size by `factor`; yaw unchanged."""
    if factor <= 0:
        raise ValueError(f"scale factor must be > 0, got {factor}")
    cloud = PointCloud(lc.cloud.points * factor, lc.cloud.features)
    box = lc.box
    if box is not None:
        box = OrientedBox(box.center * factor, box.size * factor, box.yaw)
    return replace(lc, cloud=cloud, box=box)


def flip_axis(lc, axis):
    """Mirror the scene against the x or y axis.

    Against x: (x, y, z) -> (x, -y, z), yaw -> -yaw.
    Against y: (x, y, z) -> (-x, y, z), yaw -> pi - yaw.
    """
    pts = lc.cloud.points.copy()
    if axis == "x":
        pts[:, 1] = -pts[:, 1]
    elif axis == "y":
        pts[:, 0] = -pts[:, 0]
    else:
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    cloud = PointCloud(pts, lc.cloud.features)
    box = lc.box
    if box is not None:
        center = box.center.copy()
        if axis == "x":
            center[1] = -center[1]
            yaw = -box.yaw
        else:
            center[0] = -center[0]
            yaw = math.pi - box.yaw
        box = OrientedBox(center, box.size, wrap_angle(yaw))
    return replace(lc, cloud=cloud, box=box)


def rotate_z(lc, angle):
    """Rotate the whole scene about +z; yaw advances by the same angle."""
    if not math.isfinite(angle):
        raise ValueError("angle must be finite")
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    cloud = PointCloud(lc.cloud.points @ rot.T, lc.cloud.features)
    box = lc.box
    if box is not None:
        box = OrientedBox(rot @ box.center, box.size, wrap_angle(box.yaw + angle))
    return replace(lc, cloud=cloud, box=box)


def subsample(cloud, n, seed):
    """Exactly n points: without replacement when possible, deterministic per seed."""
    if n <= 0:
        raise ValueError(f"subsample count must be > 0, got {n}")
    if len(cloud) == 0:
        raise ValueError("cannot subsample an empty cloud")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(cloud), size=n, replace=len(cloud) < n)
    feats = cloud.features[idx] if cloud.features is not None else None
    return PointCloud(cloud.points[idx], feats)


def augment_sample(lc, rng, flip=True, rotate=True, scale=True,
                   scale_range=(0.85, 1.15)):
    """One training-time draw: independent 0.5 flips per axis, then rotate, then scale."""
    out = lc
    if flip:
        if rng.random() < 0.5:
            out = flip_axis(out, "x")
        if rng.random() < 0.5:
            out = flip_axis(out, "y")
    if rotate:
        out = rotate_z(out, rng.uniform(-math.pi, math.pi))
    if scale:
        out = random_scale(out, rng.uniform(*scale_range))
    return out


# ---------------------------------------------------------------------------
# On-disk pairing: <cloud_id>.ply + <cloud_id>.json
# ---------------------------------------------------------------------------

def label_to_dict(lc):
    return {
        "cloud_id": lc.cloud_id,
        "class": LABEL_CLASS,
        "center": [float(v) for v in lc.box.center],
        "size": [float(v) for v in lc.box.size],
        "yaw": float(lc.box.yaw),
    }


def box_from_label(data):
    return OrientedBox(np.array(data["center"], dtype=np.float64),
                       np.array(data["size"], dtype=np.float64),
                       float(data["yaw"]))


def save_labeled(lc, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_ply(lc.cloud, directory / f"{lc.cloud_id}.ply")
    if lc.has_object:
        with open(directory / f"{lc.cloud_id}.json", "w") as f:
            json.dump(label_to_dict(lc), f, indent=2)


def load_labeled(directory, cloud_id):
    directory = Path(directory)
    cloud = load_ply(directory / f"{cloud_id}.ply")
    label_path = directory / f"{cloud_id}.json"
    if label_path.exists():
        with open(label_path) as f:
            data = json.load(f)
        return LabeledCloud(cloud, box_from_label(data), cloud_id, has_object=True)
    return LabeledCloud(cloud, None, cloud_id, has_object=False)


def load_corpus(directory):
    """All PLY/JSON pairs in a directory, sorted by cloud id."""
    directory = Path(directory)
    ids = sorted(p.stem for p in directory.glob("*.ply"))
    return [load_labeled(directory, cid) for cid in ids]


def membership(lc):
    """Index set of cloud points inside the label box (empty when no object)."""
    if not lc.has_object:
        return np.array([], dtype=int)
    return points_in_box(lc.cloud, lc.box)
