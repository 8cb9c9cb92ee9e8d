"""Point-set encoder: three set-abstraction layers with random sampling.

Each layer halves the point count, groups neighbours of every sampled
centroid with a ball query, runs a shared per-point MLP on
``[relative xyz; features]`` and max-pools over the group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ContractError, Mlp, Tensor
from .pcops import batched_ball_query


@dataclass
class SaLayerSpec:
    n_out: int
    radius: float
    max_k: int
    widths: tuple


@dataclass
class SeedSet:
    positions: np.ndarray  # (B, M, 3)
    features: Tensor  # (B, M, d)

    @property
    def count(self):
        return self.positions.shape[1]


def layer_specs(cfg, n_in):
    specs, n = [], n_in
    for radius, widths in zip(cfg.sa_radii, cfg.sa_widths):
        n //= 2
        specs.append(SaLayerSpec(n, radius, cfg.sa_max_k, tuple(widths)))
    return specs


class Backbone:
    def __init__(self, cfg, name="backbone"):
        self.cfg = cfg
        self.mlps = []
        c_in = 0
        for i, widths in enumerate(cfg.sa_widths):
            # hidden layers and the last one all carry BN + ReLU, as in PointNet++
            self.mlps.append(Mlp(f"{name}.sa{i}", 3 + c_in, widths, final_plain=False))
            c_in = widths[-1]

    def init(self, store, rng):
        for m in self.mlps:
            m.init(store, rng)
        return self

    def encode(self, store, points, rngs, training=True, centroid_idx=None):
        """Encode a batch of clouds (B, N, 3) into seeds.

        ``rngs`` holds one generator per sample. ``centroid_idx`` optionally
        pins the sampled centroid indices per layer (list of (B, n_out) arrays).
        """
        points = np.asarray(points, dtype=float)
        B, N, _ = points.shape
        if N < 8:
            raise ContractError(f"encode: need at least 8 points, got {N}")
        pos, feats = points, None
        for i, (spec, mlp) in enumerate(zip(layer_specs(self.cfg, N), self.mlps)):
            pinned = None if centroid_idx is None else centroid_idx[i]
            pos, feats = set_abstraction(store, mlp, pos, feats, spec, rngs, training, pinned)
        return SeedSet(pos, feats)


def sample_centroids(n_in, n_out, rngs):
    return np.stack([rng.permutation(n_in)[:n_out] for rng in rngs])


def set_abstraction(store, mlp, positions, features, spec: SaLayerSpec, rngs, training=True, centroid_idx=None):
    """One sampling + grouping + MLP + maxpool layer.

    positions (B, N, 3) array; features (B, N, C) Tensor or None.
    Returns new positions (B, S, 3) and features Tensor (B, S, C').
    """
    B, N, _ = positions.shape
    if N < spec.n_out:
        raise ContractError(f"set_abstraction: {N} points cannot yield {spec.n_out} centroids")
    if centroid_idx is None:
        centroid_idx = sample_centroids(N, spec.n_out, rngs)
    bidx = np.arange(B)[:, None]
    centers = positions[bidx, centroid_idx]
    idx, _ = batched_ball_query(centers, positions, spec.radius, spec.max_k)
    rel = positions[bidx[:, :, None], idx] - centers[:, :, None, :]
    grouped = Tensor(rel)
    if features is not None:
        grouped = dc.concat([grouped, dc.gather_rows(features, idx)], axis=-1)
    h = mlp(store, grouped, training)
    return centers, dc.maxpool_set(h, axis=2)
