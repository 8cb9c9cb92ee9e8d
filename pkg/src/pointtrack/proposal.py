"""Voting to potential target centers, seed targetness, clustering, proposals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ContractError, Mlp, Tensor
from .pcops import Box3D, batched_ball_query


@dataclass
class PotentialCenters:
    positions: Tensor  # (B, M2, 3)
    features: Tensor  # (B, M2, d2)
    offsets: Tensor  # (B, M2, 3), the voted Δx
    seed_scores: Tensor | None = None  # (B, M2, 1) in [0, 1]


@dataclass
class Clusters:
    centroid_idx: np.ndarray  # (B, K)
    member_idx: np.ndarray  # (B, K, k)
    centroids: Tensor  # (B, K, 3)
    descriptors: Tensor  # (B, K, k, [1 +] 3 + d2)


@dataclass
class Proposals:
    centers: Tensor  # (B, K, 3) centroid + offsets
    heading: Tensor  # (B, K)
    logits: Tensor  # (B, K)
    centroids: Tensor  # (B, K, 3)
    raw: Tensor  # (B, K, 5)

    def scores(self):
        return 0.5 * (1.0 + np.tanh(0.5 * self.logits.data))


class VoteHead:
    """Per-seed MLP to a center offset and a feature residual.

    With ``use_position`` the MLP reads ``[x; f^t]``; in the canonical search
    frame the seed position is a strong cue for where the target sits.
    Without it the offsets depend on features alone, so centers move rigidly
    with the seeds.
    """

    def __init__(self, dim, hidden, name="vote", use_position=True):
        self.dim = dim
        self.use_position = use_position
        self.mlp = Mlp(name, dim + 3 * use_position, (hidden, hidden, 3 + dim))

    def init(self, store, rng):
        self.mlp.init(store, rng)
        return self

    def __call__(self, store, aug, training=True):
        """``c = (x + Δx, f^t + Δf)``."""
        inp = aug.features
        if self.use_position:
            inp = dc.concat([Tensor(aug.positions), aug.features], axis=-1)
        out = self.mlp(store, inp, training)
        dx = out[..., :3]
        df = out[..., 3:]
        return PotentialCenters(Tensor(aug.positions) + dx, aug.features + df, dx)


class TargetnessHead:
    def __init__(self, dim, hidden, name="seedcls"):
        self.mlp = Mlp(name, dim, (hidden, hidden, 1))

    def init(self, store, rng):
        self.mlp.init(store, rng)
        return self

    def __call__(self, store, aug, training=True):
        """Seed-wise targetness logits (B, M2, 1)."""
        return self.mlp(store, aug.features, training)


def seed_targetness(store, head, aug, training=True):
    logits = head(store, aug, training)
    return logits, dc.sigmoid(logits)


def cluster(centers: PotentialCenters, K, radius, rngs, max_k=32, use_scores=True, centroid_idx=None):
    """Sample K centroids among the centers and group neighbours within ``radius``.

    Member descriptors are ``[s^s; x_c - x_centroid; f_c]`` (score dropped when
    ``use_scores`` is False or scores are absent).
    """
    pos = centers.positions
    B, M = pos.shape[:2]
    if K > M:
        raise ContractError(f"cluster: K={K} exceeds number of centers {M}")
    if centroid_idx is None:
        centroid_idx = np.stack([rng.permutation(M)[:K] for rng in rngs])
    bidx = np.arange(B)[:, None]
    cpos = pos.data[bidx, centroid_idx]
    member_idx, _ = batched_ball_query(cpos, pos.data, radius, max_k)
    centroids = dc.gather_rows(pos, centroid_idx)
    rel = dc.gather_rows(pos, member_idx) - dc.expand_dims(centroids, 2)
    parts = [rel, dc.gather_rows(centers.features, member_idx)]
    if use_scores and centers.seed_scores is not None:
        parts.insert(0, dc.gather_rows(centers.seed_scores, member_idx))
    return Clusters(centroid_idx, member_idx, centroids, dc.concat(parts, axis=-1))


class ProposalHead:
    """MLP over cluster members, maxpool, MLP to (dx, dy, dz, heading, logit)."""

    def __init__(self, in_dim, hidden, name="theta"):
        self.pre = Mlp(f"{name}.pre", in_dim, (hidden,) * 3, final_plain=False)
        self.post = Mlp(f"{name}.post", hidden, (hidden, hidden, 5))

    def init(self, store, rng):
        self.pre.init(store, rng)
        self.post.init(store, rng)
        return self

    def __call__(self, store, clusters: Clusters, training=True):
        if clusters.descriptors.shape[2] == 0:
            raise ContractError("propose: empty cluster")
        h = self.pre(store, clusters.descriptors, training)
        out = self.post(store, dc.maxpool_set(h, axis=2), training)
        return Proposals(clusters.centroids + out[..., :3], out[..., 3], out[..., 4],
                         clusters.centroids, out)


def select_best(centers, headings, scores, extents) -> tuple[Box3D, int]:
    """Highest-scoring proposal as a box (first index wins ties)."""
    scores = np.asarray(scores, dtype=float).reshape(-1)
    if scores.size == 0:
        raise ContractError("select_best: no proposals")
    i = int(np.argmax(scores))
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    headings = np.asarray(headings, dtype=float).reshape(-1)
    return Box3D(centers[i], extents, headings[i]), i
