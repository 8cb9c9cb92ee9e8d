"""Point-cloud kernels: count normalization, sampling, ball query, box tests.

Axis convention used everywhere in this package: x forward, y left, z up.
A box's heading is its rotation about +z measured from +x; its length runs
along the heading direction, its width across it and its height along z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffcore import ContractError, EmptyInputError

SENSOR = "sensor"
SEARCH = "search-local"
TEMPLATE = "template-local"


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = np.mod(a + math.pi, 2 * math.pi) - math.pi
    out = np.where(out == -math.pi, math.pi, out)
    return float(out) if out.ndim == 0 else out


@dataclass
class Box3D:
    center: np.ndarray
    extents: np.ndarray  # width, length, height
    heading: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.extents = np.asarray(self.extents, dtype=float).reshape(3)
        if np.any(self.extents <= 0):
            raise ContractError(f"box extents must be positive, got {self.extents}")
        self.heading = wrap_angle(float(self.heading))

    @property
    def width(self):
        return self.extents[0]

    @property
    def length(self):
        return self.extents[1]

    @property
    def height(self):
        return self.extents[2]

    def as_array(self):
        """Seven numbers: cx, cy, cz, width, length, height, heading."""
        return np.concatenate([self.center, self.extents, [self.heading]])

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(a[:3], a[3:6], a[6])

    def corners_bev(self):
        """Four (x, y) corners counter-clockwise."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = self.length / 2, self.width / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center[:2]

    def volume(self):
        return float(np.prod(self.extents))


@dataclass
class PointCloud:
    points: np.ndarray
    frame: str = SENSOR

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.points)


def _rng(seed):
    return np.random.default_rng(seed)


def _rot_z(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def normalize_count(points, n, rng=None):
    """Randomly drop or duplicate points until exactly ``n`` remain."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    m = len(points)
    if m == 0:
        raise EmptyInputError("normalize_count: empty cloud")
    rng = _rng(rng)
    if m >= n:
        idx = rng.choice(m, n, replace=False)
    else:
        idx = np.concatenate([np.arange(m), rng.choice(m, n - m, replace=True)])
        rng.shuffle(idx)
    return points[idx]


def random_subsample(points, m_out, rng=None, features=None):
    """Uniform sample of ``m_out`` rows without replacement.

    Returns ``(points, features, idx)``; features travel with their points.
    """
    points = np.asarray(points)
    m_in = len(points)
    if m_out > m_in:
        raise ContractError(f"random_subsample: cannot draw {m_out} from {m_in}")
    idx = _rng(rng).permutation(m_in)[:m_out]
    feats = None if features is None else features[idx]
    return points[idx], feats, idx


def ball_query(centers, points, radius, max_k):
    """Indices of points strictly within ``radius`` of each center.

    Members are listed in ascending index order, capped at ``max_k`` and padded
    by repeating the first member. A center with no member falls back to its
    nearest point and is flagged in the returned ``degenerate`` mask.
    Returns ``(idx (K, max_k), degenerate (K,))``.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyInputError("ball_query: no points")
    if radius <= 0 or max_k < 1:
        raise ContractError("ball_query: radius must be > 0 and max_k >= 1")
    d2 = ((centers[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    inside = d2 < radius * radius
    return _ball_from_mask(inside, d2, max_k)


def _ball_from_mask(inside, d2, max_k):
    K, M = inside.shape
    # stable sort puts members first, in index order
    order = np.argsort(~inside, axis=1, kind="stable")[:, :max_k]
    count = inside.sum(axis=1)
    degenerate = count == 0
    first = np.where(degenerate, np.argmin(d2, axis=1), order[:, 0])
    slot = np.arange(order.shape[1])[None, :]
    idx = np.where(slot < count[:, None], order, first[:, None])
    if idx.shape[1] < max_k:
        idx = np.concatenate([idx, np.repeat(first[:, None], max_k - idx.shape[1], axis=1)], axis=1)
    return idx, degenerate


def batched_ball_query(centers, points, radius, max_k):
    """Ball query over a batch: centers (B, K, 3), points (B, M, 3)."""
    d2 = ((centers[:, :, None, :] - points[:, None, :, :]) ** 2).sum(-1)
    inside = d2 < radius * radius
    B, K, M = inside.shape
    idx, deg = _ball_from_mask(inside.reshape(B * K, M), d2.reshape(B * K, M), max_k)
    return idx.reshape(B, K, max_k), deg.reshape(B, K)


def to_box_local(points, box: Box3D):
    """Express points in box axes (translate to center, rotate by -heading)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    return (points - box.center) @ _rot_z(-box.heading).T


def points_in_box(points, box: Box3D, enlarge=0.0):
    """Mask of points inside ``box`` grown by ``enlarge`` on every extent.

    ``enlarge`` is the total growth per axis (half on each side).
    """
    if isinstance(points, PointCloud):
        points = points.points
    local = to_box_local(points, box)
    half = box.extents[[1, 0, 2]] / 2 + enlarge / 2
    return np.all(np.abs(local) <= half, axis=1)


def crop_points(cloud, box: Box3D, enlarge=0.0):
    if isinstance(cloud, PointCloud):
        return PointCloud(cloud.points[points_in_box(cloud.points, box, enlarge)], cloud.frame)
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    return cloud[points_in_box(cloud, box, enlarge)]


def to_search_frame(points, reference: Box3D):
    """Translate by -reference.center and rotate by -reference.heading."""
    if isinstance(points, PointCloud):
        return PointCloud(to_box_local(points.points, reference), SEARCH)
    return to_box_local(points, reference)


def from_search_frame_points(points, reference: Box3D):
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    return points @ _rot_z(reference.heading).T + reference.center


def box_to_frame(box: Box3D, reference: Box3D) -> Box3D:
    center = to_box_local(box.center, reference)[0]
    return Box3D(center, box.extents, box.heading - reference.heading)


def from_search_frame(box: Box3D, reference: Box3D) -> Box3D:
    """Inverse of :func:`box_to_frame`."""
    center = from_search_frame_points(box.center, reference)[0]
    return Box3D(center, box.extents, box.heading + reference.heading)


def transform_box(box: Box3D, rotation_z, translation) -> Box3D:
    """Apply a rigid yaw rotation about the origin followed by a translation."""
    center = _rot_z(rotation_z) @ box.center + np.asarray(translation, dtype=float)
    return Box3D(center, box.extents, box.heading + rotation_z)


def transform_points(points, rotation_z, translation):
    return np.asarray(points, dtype=float) @ _rot_z(rotation_z).T + np.asarray(translation, dtype=float)
