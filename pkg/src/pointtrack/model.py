"""Full network: encoder, feature augmentation, voting, targetness, proposals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .backbone import Backbone, SeedSet
from .config import LossWeights, NetConfig
from .diffcore import ParamStore, Tensor
from .losses import (box_loss, frame_targets, proposal_cls_loss, proposal_labels, reg_loss,
                     seed_cls_loss, total_loss)
from .proposal import (Clusters, PotentialCenters, ProposalHead, Proposals, TargetnessHead, VoteHead,
                       cluster)
from .tsfa import AugmentedSeedSet, FeatureAugmenter, augment


@dataclass
class ForwardOutput:
    template_seeds: SeedSet
    search_seeds: SeedSet
    augmented: AugmentedSeedSet
    centers: PotentialCenters
    seed_logits: Tensor | None
    clusters: Clusters
    proposals: Proposals


class TrackerNet:
    def __init__(self, cfg: NetConfig):
        self.cfg = cfg
        self.backbone = Backbone(cfg, "backbone")
        self.template_backbone = self.backbone if cfg.shared_backbone else Backbone(cfg, "backbone_t")
        self.tsfa = FeatureAugmenter(cfg.feature_dim, cfg.hidden, cfg.tsfa_variant)
        self.vote = VoteHead(cfg.hidden, cfg.hidden, use_position=cfg.vote_position)
        self.seedcls = None if cfg.targetness == "no_branch" else TargetnessHead(cfg.hidden, cfg.hidden)
        self.concat_scores = cfg.targetness == "default"
        self.theta = ProposalHead(int(self.concat_scores) + 3 + cfg.hidden, cfg.hidden)

    def init(self, seed=0) -> ParamStore:
        rng = np.random.default_rng(seed)
        store = ParamStore()
        self.backbone.init(store, rng)
        if not self.cfg.shared_backbone:
            self.template_backbone.init(store, rng)
        self.tsfa.init(store, rng)
        self.vote.init(store, rng)
        if self.seedcls is not None:
            self.seedcls.init(store, rng)
        self.theta.init(store, rng)
        return store

    def forward(self, store, template_points, search_points, rngs, training=True, proposals=None,
                pinned=None):
        """Run the whole pipeline on a batch.

        template_points (B, N1, 3) in template-canonical frames, search_points
        (B, N2, 3) in search frames; ``rngs`` one generator per sample.
        ``pinned`` may fix random draws: dict with ``template``/``search``
        (per-layer centroid indices) and ``cluster`` (B, K).
        """
        pinned = pinned or {}
        K = proposals or self.cfg.proposals
        Q = self.template_backbone.encode(store, template_points, rngs, training, pinned.get("template"))
        R = self.backbone.encode(store, search_points, rngs, training, pinned.get("search"))
        aug = augment(store, self.tsfa, R, Q, training)
        centers = self.vote(store, aug, training)
        seed_logits = None
        if self.seedcls is not None:
            seed_logits = self.seedcls(store, aug, training)
            centers.seed_scores = dc.sigmoid(seed_logits)
        K = min(K, R.count)
        cl = cluster(centers, K, self.cfg.cluster_radius, rngs, self.cfg.cluster_max_k,
                     use_scores=self.concat_scores, centroid_idx=pinned.get("cluster"))
        props = self.theta(store, cl, training)
        return ForwardOutput(Q, R, aug, centers, seed_logits, cl, props)

    def losses(self, out: ForwardOutput, gt_boxes, weights: LossWeights | None = None, reg_norm="l1"):
        """Total loss and components for search-frame GT boxes (one per sample)."""
        weights = weights or LossWeights()
        seeds = out.search_seeds.positions
        B = seeds.shape[0]
        masks, dgts, dists, tgt_off, tgt_head = [], [], [], [], []
        cdata = out.clusters.centroids.data
        for b in range(B):
            ft = frame_targets(seeds[b], gt_boxes[b])
            masks.append(ft.seed_mask)
            dgts.append(ft.seed_offsets)
            dists.append(np.linalg.norm(cdata[b] - gt_boxes[b].center, axis=-1))
            tgt_off.append(np.broadcast_to(gt_boxes[b].center, cdata[b].shape))
            tgt_head.append(np.full(cdata.shape[1], gt_boxes[b].heading))
        mask = np.stack(masks)
        dist = np.stack(dists)
        l_reg = reg_loss(out.centers.offsets, np.stack(dgts), mask, reg_norm)
        l_cla = seed_cls_loss(out.seed_logits, mask) if out.seed_logits is not None else Tensor(0.0)
        l_prop = proposal_cls_loss(out.proposals.logits, dist)
        pos, _ = proposal_labels(dist)
        # absolute centers, so the residual also reaches the votes through the centroid
        l_box = box_loss(out.proposals.centers, out.proposals.heading, np.stack(tgt_off),
                         np.stack(tgt_head), pos)
        total = total_loss(l_reg, l_cla, l_prop, l_box, weights)
        comps = {"reg": float(l_reg.data), "cla": float(l_cla.data), "prop": float(l_prop.data),
                 "box": float(l_box.data), "total": float(total.data),
                 "on_target": float(mask.mean()), "positives": float(pos.mean())}
        return total, comps
