"""Training objectives: vote regression, seed/proposal classification, box
regression and their weighted total."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .config import LossWeights
from .diffcore import Tensor
from .pcops import Box3D, points_in_box

POSITIVE_RADIUS = 0.3
NEGATIVE_RADIUS = 0.6


@dataclass
class FrameTargets:
    gt_box: Box3D
    seed_mask: np.ndarray  # (M2,) bool, seed on target
    seed_offsets: np.ndarray  # (M2, 3) GT center - seed position
    proposal_distances: np.ndarray | None = None  # (K,)


def frame_targets(seed_positions, gt_box: Box3D) -> FrameTargets:
    seed_positions = np.asarray(seed_positions, dtype=float)
    return FrameTargets(gt_box, points_in_box(seed_positions, gt_box, 0.0),
                        gt_box.center - seed_positions)


def _as_zero():
    return Tensor(0.0)


def reg_loss(dx, dgt, mask, norm="l1"):
    """Mean over on-target seeds of ||Δx - Δgt|| (L1 or L2 per seed)."""
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        warnings.warn("reg_loss: no on-target seeds", RuntimeWarning, stacklevel=2)
        return _as_zero()
    diff = dx - Tensor(np.asarray(dgt, dtype=float))
    if norm == "l1":
        per = dc.abs_(diff).sum(axis=-1)
    elif norm == "l2":
        per = dc.sqrt(dc.square(diff).sum(axis=-1) + 1e-12)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return dc.mul((per * mask.astype(float)).sum(), 1.0 / n)


def seed_cls_loss(logits, mask):
    """Mean BCE over all seeds; label is the on-target mask."""
    labels = np.asarray(mask, dtype=float).reshape(logits.shape)
    return dc.bce_with_logits(logits, labels).mean()


def proposal_labels(distances):
    d = np.asarray(distances, dtype=float)
    return d < POSITIVE_RADIUS, d > NEGATIVE_RADIUS


def proposal_cls_loss(logits, distances):
    """BCE over proposals within 0.3 m (positive) or beyond 0.6 m (negative)."""
    pos, neg = proposal_labels(distances)
    penal = pos | neg
    n = int(penal.sum())
    if n == 0:
        return _as_zero()
    per = dc.bce_with_logits(logits, pos.astype(float))
    return dc.mul((per * penal.astype(float)).sum(), 1.0 / n)


def heading_residual(pred, target):
    """pred - target wrapped to (-pi, pi]; the wrap shift is constant."""
    pred = dc.as_tensor(pred)
    raw = pred.data - np.asarray(target, dtype=float)
    shift = 2 * math.pi * np.round(raw / (2 * math.pi))
    return pred - Tensor(np.asarray(target, dtype=float) + shift)


def box_loss(pred_offsets, pred_heading, target_offsets, target_heading, positive_mask, delta=1.0):
    """Smooth-L1 over (3 offsets + heading), averaged over the 4 parameters
    and over positive proposals."""
    pos = np.asarray(positive_mask, dtype=bool)
    n = int(pos.sum())
    if n == 0:
        return _as_zero()
    off = dc.smooth_l1(pred_offsets - Tensor(np.asarray(target_offsets, dtype=float)), delta).sum(axis=-1)
    head = dc.smooth_l1(heading_residual(pred_heading, target_heading), delta)
    per = (off + head) * 0.25
    return dc.mul((per * pos.astype(float)).sum(), 1.0 / n)


def total_loss(l_reg, l_cla, l_prop, l_box, weights: LossWeights | None = None):
    w = weights or LossWeights()
    return l_reg + w.cla * dc.as_tensor(l_cla) + w.prop * dc.as_tensor(l_prop) + w.box * dc.as_tensor(l_box)
