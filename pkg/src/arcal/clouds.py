"""Point cloud data model, depth-frame unprojection, PLY IO and rigid transforms.

Coordinates are meters throughout. Depth frames carry the per-pixel (u, v)
coordinates on the camera unit plane (z = 1), so unprojection is sensor
agnostic: any intrinsics model that can produce unit-plane coordinates works.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

# Long-throw depth sensors return valid measurements in this window.
DEFAULT_MIN_RANGE = 0.4
DEFAULT_MAX_RANGE = 4.0


class PlyParseError(ValueError):
    """Malformed PLY input. `offset` is the byte offset of the failure."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class PointCloud:
    """Unordered set of 3D points with optional per-point feature vectors."""

    points: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.ndim != 2 or len(self.features) != len(self.points):
                raise ValueError("features must be (n_points, width)")

    def __len__(self):
        return len(self.points)


@dataclass
class DepthFrame:
    """Per-pixel depth D plus unit-plane (u, v) rays for one sensor frame.

    `depth` is (height, width) with 0 encoding an invalid pixel;
    `unit_plane` is (height, width, 2) holding (u, v) per pixel.
    """

    width: int
    height: int
    depth: np.ndarray
    unit_plane: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.unit_plane = np.asarray(self.unit_plane, dtype=np.float64)
        if self.depth.shape != (self.height, self.width):
            raise ValueError(
                f"depth shape {self.depth.shape} != (height, width) "
                f"({self.height}, {self.width})"
            )
        if self.unit_plane.shape != (self.height, self.width, 2):
            raise ValueError(
                f"unit_plane shape {self.unit_plane.shape} != "
                f"({self.height}, {self.width}, 2)"
            )
        if np.any(self.depth < 0):
            raise ValueError("depth values must be non-negative (0 = invalid)")


def pinhole_unit_plane(width, height, fx, fy, cx, cy):
    """Unit-plane (u, v) grid for a pinhole camera: u=(px-cx)/fx, v=(py-cy)/fy."""
    px = np.arange(width, dtype=np.float64)
    py = np.arange(height, dtype=np.float64)
    u = (px[None, :] - cx) / fx
    v = (py[:, None] - cy) / fy
    uv = np.stack([np.broadcast_to(u, (height, width)),
                   np.broadcast_to(v, (height, width))], axis=-1)
    return uv


def depth_to_cloud(frame, min_range=DEFAULT_MIN_RANGE, max_range=DEFAULT_MAX_RANGE):
    """Unproject a depth frame to a point cloud, keeping D in [min_range, max_range].

    Each valid pixel maps to (X, Y, Z) = D * (u, v, 1) / sqrt(u^2 + v^2 + 1),
    so the emitted point norm equals D. Output order is row-major over pixels.
    """
    if min_range >= max_range:
        raise ValueError("min_range must be < max_range")
    d = frame.depth.reshape(-1)
    uv = frame.unit_plane.reshape(-1, 2)
    keep = (d >= min_range) & (d <= max_range)
    d = d[keep]
    u = uv[keep, 0]
    v = uv[keep, 1]
    inv_norm = 1.0 / np.sqrt(u * u + v * v + 1.0)
    pts = np.stack([d * u * inv_norm, d * v * inv_norm, d * inv_norm], axis=-1)
    return PointCloud(pts)


def filter_range(cloud, min_range=DEFAULT_MIN_RANGE, max_range=DEFAULT_MAX_RANGE):
    """Keep exactly the points whose Euclidean norm lies in the closed interval."""
    if min_range >= max_range:
        raise ValueError("min_range must be < max_range")
    if len(cloud) == 0:
        return PointCloud(np.zeros((0, 3)))
    norms = np.linalg.norm(cloud.points, axis=1)
    keep = (norms >= min_range) & (norms <= max_range)
    feats = cloud.features[keep] if cloud.features is not None else None
    return PointCloud(cloud.points[keep], feats)


# ---------------------------------------------------------------------------
# ASCII PLY IO
# ---------------------------------------------------------------------------

def save_ply(cloud, path):
    """Write an ASCII PLY with x/y/z float properties, 6 decimal digits."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    body = "\n".join("%.6f %.6f %.6f" % (p[0], p[1], p[2]) for p in cloud.points)
    text = "\n".join(lines) + "\n" + (body + "\n" if body else "")
    with open(path, "w") as f:
        f.write(text)


def loads_ply(data):
    """Parse ASCII PLY bytes/str into a PointCloud.

    Raises PlyParseError naming the byte offset of the first malformed token.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("ascii")
        except UnicodeDecodeError as e:
            raise PlyParseError("non-ascii byte in PLY", e.start) from None

    offset = 0
    lines = []
    for line in io.StringIO(data):
        lines.append((offset, line.rstrip("\r\n")))
        offset += len(line)
    pos = 0

    def next_line():
        nonlocal pos
        if pos >= len(lines):
            raise PlyParseError("unexpected end of file", len(data))
        off, text = lines[pos]
        pos += 1
        return off, text

    off, magic = next_line()
    if magic.strip() != "ply":
        raise PlyParseError("missing 'ply' magic", off)
    off, fmt = next_line()
    if fmt.strip() != "format ascii 1.0":
        raise PlyParseError("unsupported format, need 'format ascii 1.0'", off)

    n_vertex = None
    props = []
    while True:
        off, line = next_line()
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "end_header":
            break
        if tokens[0] == "element":
            if len(tokens) != 3 or tokens[1] != "vertex":
                raise PlyParseError("only 'element vertex N' is supported", off)
            try:
                n_vertex = int(tokens[2])
            except ValueError:
                raise PlyParseError("vertex count is not an integer", off) from None
        elif tokens[0] == "property":
            if len(tokens) != 3 or tokens[1] not in ("float", "float32", "double", "float64"):
                raise PlyParseError("only scalar float properties are supported", off)
            props.append(tokens[2])
        else:
            raise PlyParseError(f"unexpected header line {tokens[0]!r}", off)

    if n_vertex is None:
        raise PlyParseError("header has no 'element vertex'", off)
    try:
        ix, iy, iz = props.index("x"), props.index("y"), props.index("z")
    except ValueError:
        raise PlyParseError("vertex element lacks x/y/z properties", off) from None

    pts = np.empty((n_vertex, 3), dtype=np.float64)
    for i in range(n_vertex):
        off, line = next_line()
        tokens = line.split()
        if len(tokens) != len(props):
            raise PlyParseError(
                f"vertex line has {len(tokens)} values, expected {len(props)}", off)
        try:
            pts[i, 0] = float(tokens[ix])
            pts[i, 1] = float(tokens[iy])
            pts[i, 2] = float(tokens[iz])
        except ValueError:
            raise PlyParseError("vertex coordinate is not a number", off) from None
    return PointCloud(pts)


def load_ply(path):
    with open(path, "rb") as f:
        return loads_ply(f.read())


# ---------------------------------------------------------------------------
# Rigid transforms
# ---------------------------------------------------------------------------

@dataclass
class RigidTransform:
    """Rotation (3x3, det +1) plus translation; maps x -> R @ x + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation is not orthonormal (max |R R^T - I| = {err:.2e})")
        det = np.linalg.det(self.rotation)
        if abs(det - 1.0) > 1e-9:
            raise ValueError(f"rotation determinant {det:.12f} != 1")

    @staticmethod
    def identity():
        return RigidTransform()

    @staticmethod
    def from_translation(t):
        return RigidTransform(np.eye(3), t)

    @staticmethod
    def rotation_z(angle):
        c, s = math.cos(angle), math.sin(angle)
        return RigidTransform(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))


def compose(a, b):
    """Transform mapping x -> a(b(x))."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def invert(t):
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def apply_transform(t, cloud):
    pts = cloud.points @ t.rotation.T + t.translation
    return PointCloud(pts, cloud.features)


def apply_to_point(t, p):
    return t.rotation @ np.asarray(p, dtype=np.float64) + t.translation


def calibrate_ar_to_map(robot_in_map, robot_in_ar):
    """AR-device-to-map transform from the robot pose seen in both frames.

    Solves T_ar_to_map such that T_ar_to_map o robot_in_ar == robot_in_map.
    robot_in_ar typically comes from a detection lifted via `box_to_transform`.
    """
    return compose(robot_in_map, invert(robot_in_ar))
