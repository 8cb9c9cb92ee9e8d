"""One Pass Evaluation: rotated 3D IoU, Success, Precision and point-count
analyses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import ContractError
from .pcops import Box3D, points_in_box

CLIP_EPS = 1e-9
PRECISION_MAX_DIST = 2.0
PRECISION_THRESHOLDS = 201


class UndefinedMetricError(ValueError):
    pass


def polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject, clip):
    """Sutherland-Hodgman clipping of ``subject`` by counter-clockwise ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for k in range(n):
        if not out:
            break
        a, b = clip[k], clip[(k + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]

        def side(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

        inp, out = out, []
        for i in range(len(inp)):
            p, q = inp[i], inp[(i + 1) % len(inp)]
            sp, sq = side(p), side(q)
            if sp >= -CLIP_EPS:
                out.append(p)
                if sq < -CLIP_EPS:
                    t = sp / (sp - sq)
                    out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
            elif sq >= -CLIP_EPS:
                t = sp / (sp - sq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return np.array(out) if out else np.zeros((0, 2))


def iou3d(a: Box3D, b: Box3D) -> float:
    """Bird's-eye-view polygon intersection times vertical overlap over the
    union of volumes."""
    if np.any(a.extents <= 0) or np.any(b.extents <= 0):
        raise ContractError("iou3d: degenerate box extents")
    inter_bev = polygon_area(clip_convex(a.corners_bev(), b.corners_bev()))
    za0, za1 = a.center[2] - a.height / 2, a.center[2] + a.height / 2
    zb0, zb1 = b.center[2] - b.height / 2, b.center[2] + b.height / 2
    dz = max(0.0, min(za1, zb1) - max(za0, zb0))
    inter = inter_bev * dz
    union = a.volume() + b.volume() - inter
    return float(min(max(inter / union, 0.0), 1.0))


def center_error(a: Box3D, b: Box3D) -> float:
    return float(np.linalg.norm(a.center - b.center))


def success_auc(ious) -> float:
    """Area under the success plot; for a step-function curve this equals
    the mean overlap, times 100."""
    ious = np.asarray(ious, dtype=float)
    if ious.size == 0:
        raise UndefinedMetricError("success over zero frames")
    return float(np.clip(ious, 0, 1).mean() * 100.0)


def precision_auc(errors, max_dist=PRECISION_MAX_DIST) -> float:
    """Area under fraction-of-frames-with-error-below-d for d in [0, max_dist],
    normalized by max_dist, times 100. The empirical curve is a step function,
    so the exact area per frame is ``1 - min(e, max_dist) / max_dist``."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise UndefinedMetricError("precision over zero frames")
    return float(np.mean(1.0 - np.minimum(errors, max_dist) / max_dist) * 100.0)


def success_curve(ious, n=101):
    thr = np.linspace(0, 1, n)
    ious = np.asarray(ious, dtype=float)
    return thr, np.array([(ious > t).mean() for t in thr])


def precision_curve(errors, n=PRECISION_THRESHOLDS, max_dist=PRECISION_MAX_DIST):
    thr = np.linspace(0, max_dist, n)
    errors = np.asarray(errors, dtype=float)
    return thr, np.array([(errors < t).mean() for t in thr])


@dataclass
class OpeReport:
    success: float
    precision: float
    ious: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def frames(self):
        return len(self.ious)

    def as_dict(self):
        return {"success": self.success, "precision": self.precision, "frames": self.frames}


def evaluate(pred_boxes, gt_boxes) -> OpeReport:
    if len(pred_boxes) != len(gt_boxes):
        raise ContractError(f"{len(pred_boxes)} predictions for {len(gt_boxes)} frames")
    ious = [iou3d(p, g) for p, g in zip(pred_boxes, gt_boxes)]
    errs = [center_error(p, g) for p, g in zip(pred_boxes, gt_boxes)]
    return OpeReport(success_auc(ious), precision_auc(errs), ious, errs)


def merge_reports(reports) -> OpeReport:
    """Pool frames of several tracklets (frame-count weighting)."""
    ious = [v for r in reports for v in r.ious]
    errs = [v for r in reports for v in r.errors]
    return OpeReport(success_auc(ious), precision_auc(errs), ious, errs)


def category_mean(per_category: dict) -> tuple[float, float]:
    """Mean over categories weighted by their frame numbers."""
    total = sum(r.frames for r in per_category.values())
    s = sum(r.success * r.frames for r in per_category.values()) / total
    p = sum(r.precision * r.frames for r in per_category.values()) / total
    return s, p


def on_target_counts(tracklets):
    """Number of points inside each GT box, per frame, over all tracklets."""
    counts = []
    for tr in tracklets:
        for t, box in enumerate(tr.boxes):
            counts.append(int(points_in_box(tr.cloud(t), box, 0.0).sum()))
    return np.array(counts, dtype=int)


def points_histogram(tracklets, bin_edges):
    counts = on_target_counts(tracklets)
    hist, _ = np.histogram(counts, bins=np.asarray(bin_edges))
    return hist, counts


def fraction_below(counts, threshold=50):
    counts = np.asarray(counts)
    return float((counts < threshold).mean()) if counts.size else float("nan")


def success_vs_initial_points(results, tracklets, intervals):
    """Average Success per bucket of first-frame on-target point count.

    ``results`` holds one OpeReport per tracklet; ``intervals`` are
    (low, high) half-open ranges. Empty buckets are left out.
    """
    firsts = [int(points_in_box(tr.cloud(0), tr.boxes[0], 0.0).sum()) for tr in tracklets]
    rows = []
    for lo, hi in intervals:
        members = [r for r, n in zip(results, firsts) if lo <= n < hi]
        if members:
            rows.append({"low": lo, "high": hi, "tracklets": len(members),
                         "success": float(np.mean([r.success for r in members]))})
    return rows
