"""Target-specific feature augmentation.

For every search seed r_j the network sees, per template seed q_i, the row
``[Sim[j, i]; x_qi; f_qi]``. A shared MLP maps each row, a max over i removes
any dependence on template-seed order, and a second MLP produces f^t_j.

The first linear layer acts on a concatenation, so it is evaluated as a sum
of per-part products broadcast over (j, i) instead of materializing the
(M2, M1, 1 + 3 + d) input tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .backbone import SeedSet
from .diffcore import ContractError, Mlp, Tensor


def similarity_map(q_features, r_features):
    """Cosine similarity (B, M2, M1) between search rows and template rows.

    Rows with zero norm contribute similarity 0.
    """
    qn = dc.normalize_rows(q_features)
    rn = dc.normalize_rows(r_features)
    if qn.ndim == 2:
        return dc.matmul(rn, dc.transpose(qn, (1, 0)))
    return dc.matmul(rn, dc.transpose(qn, (0, 2, 1)))


@dataclass
class AugmentedSeedSet:
    positions: np.ndarray  # (B, M2, 3)
    features: Tensor  # (B, M2, d2)


class FeatureAugmenter:
    """The MLP-Maxpool-MLP network over similarity, template coords and features."""

    def __init__(self, feat_dim, hidden, variant="default", name="tsfa"):
        self.variant = variant
        self.feat_dim = feat_dim
        self.use_sim = variant != "no_similarity"
        self.use_tfeat = variant != "no_template_features"
        self.dup_search = variant == "search_features_A"
        self.post_search = variant == "search_features_B"
        in_dim = int(self.use_sim) + 3 + feat_dim * int(self.use_tfeat) + feat_dim * int(self.dup_search)
        self.pre = Mlp(f"{name}.pre", in_dim, (hidden,) * 3, final_plain=False)
        post_in = hidden + feat_dim * int(self.post_search)
        self.post = Mlp(f"{name}.post", post_in, (hidden,) * 3)

    @property
    def in_dim(self):
        return self.pre.in_dim

    def init(self, store, rng):
        self.pre.init(store, rng)
        self.post.init(store, rng)
        return self

    def row_layout(self):
        """Column slices of the per-row input: name -> (start, stop)."""
        parts, at = {}, 0
        for name, width, on in (("sim", 1, self.use_sim), ("xyz", 3, True),
                                ("tfeat", self.feat_dim, self.use_tfeat),
                                ("sfeat", self.feat_dim, self.dup_search)):
            if on:
                parts[name] = (at, at + width)
                at += width
        return parts

    def first_layer(self, store, sim, q_pos, q_feat, r_feat):
        """Pre-activation of the first layer for all (j, i) pairs: (B, M2, M1, h)."""
        w = self.pre.weight(store, 0)
        b = self.pre.bias(store, 0)
        lay = self.row_layout()
        s, e = lay["xyz"]
        per_q = dc.matmul(Tensor(q_pos), w[s:e])
        if self.use_tfeat:
            s, e = lay["tfeat"]
            per_q = per_q + dc.matmul(q_feat, w[s:e])
        h = dc.expand_dims(per_q, 1) + b  # (B, 1, M1, h)
        if self.use_sim:
            s, e = lay["sim"]
            h = h + dc.expand_dims(sim, -1) * w[s:e].reshape(-1)
        if self.dup_search:
            s, e = lay["sfeat"]
            h = h + dc.expand_dims(dc.matmul(r_feat, w[s:e]), 2)
        M2 = r_feat.shape[1]
        if h.shape[1] != M2:
            # no per-seed column: every search seed sees the same rows
            h = h + Tensor(np.zeros((1, M2, 1, 1)))
        return h

    def __call__(self, store, R: SeedSet, Q: SeedSet, sim, template_positions, training=True):
        B, M2 = R.positions.shape[:2]
        M1 = Q.positions.shape[1]
        if sim is not None and tuple(sim.shape) != (B, M2, M1):
            raise ContractError(f"augment: similarity shape {sim.shape} != {(B, M2, M1)}")
        if self.use_sim and sim is None:
            raise ContractError(f"augment: variant {self.variant!r} needs a similarity map")
        h = self.first_layer(store, sim, template_positions, Q.features, R.features)
        h = self.pre.forward_from(store, h, training)
        pooled = dc.maxpool_set(h, axis=2)
        if self.post_search:
            pooled = dc.concat([pooled, R.features], axis=-1)
        return AugmentedSeedSet(R.positions, self.post(store, pooled, training))

    def explicit_rows(self, sim, q_pos, q_feat, r_feat):
        """Materialize the (B, M2, M1, in_dim) row tensor (reference path)."""
        B, M2 = r_feat.shape[:2]
        M1 = q_pos.shape[1]
        cols = []
        if self.use_sim:
            cols.append(np.asarray(sim)[..., None])
        cols.append(np.broadcast_to(np.asarray(q_pos)[:, None], (B, M2, M1, 3)))
        if self.use_tfeat:
            qf = np.asarray(q_feat)
            cols.append(np.broadcast_to(qf[:, None], (B, M2, M1, qf.shape[-1])))
        if self.dup_search:
            rf = np.asarray(r_feat)
            cols.append(np.broadcast_to(rf[:, :, None], (B, M2, M1, rf.shape[-1])))
        return np.concatenate(cols, axis=-1)


def augment(store, augmenter: FeatureAugmenter, R: SeedSet, Q: SeedSet, training=True):
    """Similarity map + augmentation; template seed positions used as given."""
    sim = similarity_map(Q.features, R.features) if augmenter.use_sim else None
    return augmenter(store, R, Q, sim, Q.positions, training)
