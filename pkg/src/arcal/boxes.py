"""Oriented-box geometry behind the 3-corner labeling workflow.

A box is parameterized by center, (length, width, height) and a yaw about +z.
Labels are produced from three user-picked base corners (b shared, edges b->a
and b->c); evaluation uses an exact yaw-aware IoU via convex polygon clipping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .clouds import RigidTransform

# Edges picked by a human are rarely exactly perpendicular; accept up to this
# deviation from 90 degrees and re-orthogonalize.
ORTHO_TOLERANCE_RAD = math.radians(15.0)
DEFAULT_HEIGHT_THRESHOLD = 1.0


class DegenerateCornersError(ValueError):
    """Corner triple is collinear or otherwise unusable."""


class OrthogonalityError(ValueError):
    """Base edges deviate from perpendicular beyond tolerance."""


class EmptyObjectError(ValueError):
    """No cloud point above the base plane inside the base rectangle."""


def wrap_angle(a):
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class OrientedBox:
    center: np.ndarray
    size: np.ndarray
    yaw: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)
        if np.any(self.size <= 0):
            raise ValueError(f"all size components must be > 0, got {self.size}")
        self.yaw = float(wrap_angle(float(self.yaw)))

    @property
    def volume(self):
        return float(np.prod(self.size))


@dataclass
class CornerTriple:
    """Three base corners; b is the shared one (edges run b->a and b->c)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64).reshape(3)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(3)
        self.c = np.asarray(self.c, dtype=np.float64).reshape(3)
        e1 = self.a - self.b
        e2 = self.c - self.b
        n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
        if n1 < 1e-12 or n2 < 1e-12 or np.linalg.norm(self.a - self.c) < 1e-12:
            raise DegenerateCornersError("corners must be pairwise distinct")
        if np.linalg.norm(np.cross(e1, e2)) < 1e-12 * n1 * n2:
            raise DegenerateCornersError("corners are collinear")


def fourth_corner(t):
    """Complete the base parallelogram: d = a + c - b."""
    return t.a + t.c - t.b


def base_plane(t, cloud=None):
    """Plane through the corner triple as (unit normal, offset), n.x = offset.

    Without a cloud the normal is oriented upward (positive z, ties broken by
    y then x). With a cloud it is oriented so the majority of points sit on
    the positive side, i.e. above the base the object stands on.
    """
    e1 = t.a - t.b
    e2 = t.c - t.b
    n = np.cross(e1, e2)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise DegenerateCornersError("corners are collinear")
    n = n / norm

    flip = False
    if cloud is not None and len(cloud) > 0:
        d = cloud.points @ n - float(n @ t.b)
        above, below = int(np.sum(d > 1e-12)), int(np.sum(d < -1e-12))
        if above != below:
            flip = below > above
        else:
            flip = _points_down(n)
    else:
        flip = _points_down(n)
    if flip:
        n = -n
    return n, float(n @ t.b)


def _points_down(n):
    for comp in (n[2], n[1], n[0]):
        if abs(comp) > 1e-12:
            return comp < 0
    return False


def _base_frame(t):
    """Orthonormal in-plane axes of the base rectangle and its extents."""
    e1 = t.a - t.b
    e2 = t.c - t.b
    len1, len2 = np.linalg.norm(e1), np.linalg.norm(e2)
    u1 = e1 / len1
    angle = math.acos(float(np.clip(u1 @ (e2 / len2), -1.0, 1.0)))
    if abs(angle - math.pi / 2.0) > ORTHO_TOLERANCE_RAD:
        raise OrthogonalityError(
            f"base edges meet at {math.degrees(angle):.1f} deg, "
            f"outside 90 +/- {math.degrees(ORTHO_TOLERANCE_RAD):.0f}")
    e2o = e2 - (e2 @ u1) * u1
    u2 = e2o / np.linalg.norm(e2o)
    return u1, u2, float(len1), float(len2)


def box_from_corners(cloud, t, height_threshold=DEFAULT_HEIGHT_THRESHOLD):
    """Fit an oriented box from three base corners and the cloud above them.

    Cloud points are projected onto the base plane; those projecting inside
    the completed rectangle are object candidates. The box height is the
    largest signed distance above the plane among candidates not exceeding
    height_threshold, the center sits half that height above the rectangle
    centroid, and yaw follows the b->a edge.
    """
    if len(cloud) == 0:
        raise EmptyObjectError("cloud is empty")
    u1, u2, len1, len2 = _base_frame(t)
    normal, offset = base_plane(t, cloud)

    rel = cloud.points - t.b
    s = rel @ u1
    w = rel @ u2
    inside = (s >= 0) & (s <= len1) & (w >= 0) & (w <= len2)
    d = cloud.points @ normal - offset
    heights = d[inside & (d > 1e-12) & (d <= height_threshold)]
    if heights.size == 0:
        raise EmptyObjectError(
            "no candidate point above the base plane within the height threshold")
    height = float(heights.max())

    centroid = t.b + u1 * (len1 / 2.0) + u2 * (len2 / 2.0)
    center = centroid + normal * (height / 2.0)
    yaw = math.atan2(u1[1], u1[0])
    return OrientedBox(center, (len1, len2, height), yaw)


def points_in_box(cloud, box):
    """Indices of points inside the closed box volume, in the box yaw frame."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rel = cloud.points - box.center
    # rotate by -yaw into the box frame
    x = c * rel[:, 0] + s * rel[:, 1]
    y = -s * rel[:, 0] + c * rel[:, 1]
    z = rel[:, 2]
    half = box.size / 2.0
    inside = (np.abs(x) <= half[0]) & (np.abs(y) <= half[1]) & (np.abs(z) <= half[2])
    return np.flatnonzero(inside)


def box_to_transform(box):
    """Lift a detection to a rigid transform: yaw about +z, origin at center."""
    t = RigidTransform.rotation_z(box.yaw)
    return RigidTransform(t.rotation, box.center)


def base_corners(box):
    """The true base corner triple of a box (b shared, b->a the length edge)."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    l, w, h = box.size
    z = box.center[2] - h / 2.0

    def corner(dx, dy):
        return np.array([box.center[0] + c * dx - s * dy,
                         box.center[1] + s * dx + c * dy, z])

    return CornerTriple(a=corner(l / 2.0, -w / 2.0),
                        b=corner(-l / 2.0, -w / 2.0),
                        c=corner(-l / 2.0, w / 2.0))


def box_corners_3d(box):
    """All 8 corners, bottom face first, CCW in the box frame."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    l, w, h = box.size / 2.0
    out = []
    for dz in (-h, h):
        for dx, dy in ((l, w), (-l, w), (-l, -w), (l, -w)):
            out.append([box.center[0] + c * dx - s * dy,
                        box.center[1] + s * dx + c * dy,
                        box.center[2] + dz])
    return np.array(out)


# ---------------------------------------------------------------------------
# Yaw-aware 3D IoU via Sutherland-Hodgman clipping in the base plane
# ---------------------------------------------------------------------------

def _rect_xy(box):
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    l, w = box.size[0] / 2.0, box.size[1] / 2.0
    corners = []
    for dx, dy in ((l, w), (-l, w), (-l, -w), (l, -w)):  # CCW
        corners.append((box.center[0] + c * dx - s * dy,
                        box.center[1] + s * dx + c * dy))
    return corners


def _clip_polygon(subject, clip):
    """Clip `subject` by convex CCW polygon `clip` (Sutherland-Hodgman)."""
    output = list(subject)
    for i in range(len(clip)):
        if not output:
            return []
        cp1 = clip[i]
        cp2 = clip[(i + 1) % len(clip)]
        edge = (cp2[0] - cp1[0], cp2[1] - cp1[1])

        def inside(p):
            return edge[0] * (p[1] - cp1[1]) - edge[1] * (p[0] - cp1[0]) >= 0.0

        def intersect(p, q):
            dpx, dpy = q[0] - p[0], q[1] - p[1]
            denom = edge[0] * dpy - edge[1] * dpx
            num = edge[1] * (p[0] - cp1[0]) - edge[0] * (p[1] - cp1[1])
            tpar = num / denom
            return (p[0] + tpar * dpx, p[1] + tpar * dpy)

        input_list = output
        output = []
        prev = input_list[-1]
        for cur in input_list:
            if inside(cur):
                if not inside(prev):
                    output.append(intersect(prev, cur))
                output.append(cur)
            elif inside(prev):
                output.append(intersect(prev, cur))
            prev = cur
    return output


def _polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    area = 0.0
    for i in range(len(poly)):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % len(poly)]
        area += x1 * y2 - x2 * y1
    return abs(area) / 2.0


def box_iou(a, b):
    """3D IoU of two yaw boxes: clipped base-rectangle overlap x vertical overlap."""
    inter_area = _polygon_area(_clip_polygon(_rect_xy(a), _rect_xy(b)))
    za0, za1 = a.center[2] - a.size[2] / 2.0, a.center[2] + a.size[2] / 2.0
    zb0, zb1 = b.center[2] - b.size[2] / 2.0, b.center[2] + b.size[2] / 2.0
    inter_z = max(0.0, min(za1, zb1) - max(za0, zb0))
    inter = inter_area * inter_z
    union = a.volume + b.volume - inter
    return inter / union if union > 0 else 0.0
