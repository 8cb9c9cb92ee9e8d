"""Training loop, frame-by-frame tracking, baselines and ablation grids."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffcore as dc
from .config import TEMPLATE_MODES, TSFA_VARIANTS, NetConfig, TrackConfig, TrainConfig
from .dataio import (SearchStarvation, TemplateStarvation, Tracklet, augment_training_sample,
                     build_search_area, build_template)
from .diffcore import ParamStore, adam_step
from .evalkit import OpeReport, evaluate, merge_reports
from .model import TrackerNet
from .pcops import Box3D, from_search_frame
from .proposal import select_best

log = logging.getLogger(__name__)


class NumericalAbort(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


# ------------------------------------------------------------------ training

def training_pairs(tracklets):
    return [(i, t) for i, tr in enumerate(tracklets) for t in range(1, len(tr))]


def build_samples(tracklets, pairs, seed, epoch, net_cfg, train_cfg, threads=1):
    """Augmented samples for ``pairs``, in the order given; None marks a skip."""
    def one(pair):
        i, t = pair
        rng = np.random.default_rng([seed, epoch, i, t])
        return augment_training_sample(tracklets[i], t, rng, net_cfg, train_cfg)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, pairs))
    return [one(p) for p in pairs]


def train_step(net, store, samples, rngs, lr, train_cfg):
    store.zero_grad()
    tpl = np.stack([s.template for s in samples])
    srch = np.stack([s.search for s in samples])
    out = net.forward(store, tpl, srch, rngs, training=True)
    total, comps = net.losses(out, [s.gt_box for s in samples], train_cfg.weights, train_cfg.reg_norm)
    if not math.isfinite(comps["total"]):
        raise NumericalAbort("non-finite loss", comps)
    total.backward()
    adam_step(store, store.grads(), lr)
    return comps


@dataclass
class TrainResult:
    store: ParamStore
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = float("nan")
    skipped: int = 0


def train(tracklets, net_cfg: NetConfig, train_cfg: TrainConfig, val_tracklets=None, log_file=None,
          threads=1, track_cfg: TrackConfig | None = None):
    """Train from scratch; keeps the best validation checkpoint when a
    validation set is given and ``select_by == 'validation'``."""
    if not tracklets:
        raise ValueError("train: empty dataset")
    net = TrackerNet(net_cfg)
    store = net.init(train_cfg.seed)
    pairs = training_pairs(tracklets)
    result = TrainResult(store)
    best = None
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        lr = train_cfg.lr_at(epoch)
        order = np.random.default_rng([train_cfg.seed, epoch, 7]).permutation(len(pairs))
        samples = build_samples(tracklets, [pairs[k] for k in order], train_cfg.seed, epoch,
                                net_cfg, train_cfg, threads)
        kept = [(k, s) for k, s in zip(order, samples) if s is not None]
        result.skipped += len(samples) - len(kept)
        sums, nb = {}, 0
        for start in range(0, len(kept), train_cfg.batch_size):
            chunk = kept[start:start + train_cfg.batch_size]
            rngs = [np.random.default_rng([train_cfg.seed, epoch, step, b]) for b in range(len(chunk))]
            try:
                comps = train_step(net, store, [s for _, s in chunk], rngs, lr, train_cfg)
            except NumericalAbort as e:
                e.diagnostics.update({"epoch": epoch, "step": step,
                                      "batch": [list(pairs[k]) for k, _ in chunk]})
                raise
            step += 1
            nb += 1
            for k, v in comps.items():
                sums[k] = sums.get(k, 0.0) + v
            rec = {"epoch": epoch, "step": step, "lr": lr, **comps}
            if log_file is not None:
                log_file.write(json.dumps(rec) + "\n")
            if train_cfg.max_steps and step >= train_cfg.max_steps:
                break
        rec = {"epoch": epoch, "lr": lr, "batches": nb, **{k: v / max(nb, 1) for k, v in sums.items()}}
        if val_tracklets and train_cfg.select_by == "validation":
            rep = evaluate_tracklets(store, net_cfg, val_tracklets, track_cfg or TrackConfig())
            rec["val_success"] = rep.success
            rec["val_precision"] = rep.precision
            if best is None or rep.success > result.best_score:
                result.best_score, result.best_epoch, best = rep.success, epoch, store.copy()
        result.history.append(rec)
        log.info("epoch %d %s", epoch, {k: round(v, 4) for k, v in rec.items() if isinstance(v, float)})
        if train_cfg.max_steps and step >= train_cfg.max_steps:
            break
    if best is not None:
        result.store = best
    else:
        result.best_epoch = len(result.history)
    return result


def overfit(sample, net_cfg, train_cfg, steps=200):
    """Repeatedly fit one sample; returns the per-step total losses."""
    net = TrackerNet(net_cfg)
    store = net.init(train_cfg.seed)
    losses = []
    for k in range(steps):
        rng = [np.random.default_rng([train_cfg.seed, 0])]
        losses.append(train_step(net, store, [sample], rng, train_cfg.lr, train_cfg)["total"])
    return losses, store


# ------------------------------------------------------------------ tracking

@dataclass
class TrackResult:
    boxes: list  # Box3D per frame, sensor frame
    timings: list  # (preprocess, forward, postprocess) ms per frame
    flags: list  # per-frame notes ("", "search_starved", "template_fallback")

    def to_rows(self):
        return [[t, *b.as_array().tolist(), *tm] for t, (b, tm) in enumerate(zip(self.boxes, self.timings))]


RESULT_HEADER = "frame,cx,cy,cz,width,length,height,heading,preprocess_ms,forward_ms,postprocess_ms"


def write_track_result(res: TrackResult, path):
    with open(path, "w") as f:
        f.write(RESULT_HEADER + "\n")
        for row in res.to_rows():
            f.write(",".join([str(row[0])] + [repr(float(v)) for v in row[1:]]) + "\n")


def read_track_result(path) -> TrackResult:
    boxes, timings = [], []
    with open(path) as f:
        header = f.readline().strip()
        if header != RESULT_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in f:
            if line.strip():
                v = [float(x) for x in line.split(",")]
                boxes.append(Box3D.from_array(v[1:8]))
                timings.append(tuple(v[8:11]))
    return TrackResult(boxes, timings, [""] * len(boxes))


def track(store, net_cfg: NetConfig, tracklet: Tracklet, initial_box: Box3D, track_cfg=None,
          proposals=None, rng=None) -> TrackResult:
    """Frame-by-frame inference; frame t only sees frames <= t."""
    track_cfg = track_cfg or TrackConfig()
    net = TrackerNet(net_cfg)
    rng = np.random.default_rng(track_cfg.seed if rng is None else rng)
    boxes, timings, flags = [initial_box], [(0.0, 0.0, 0.0)], [""]
    for t in range(1, len(tracklet)):
        t0 = time.perf_counter()
        prev = boxes[-1]
        flag = ""
        try:
            tpl, _ = build_template(tracklet, t, track_cfg.template_mode, boxes, rng, net_cfg.n_template)
        except TemplateStarvation:
            tpl, _ = build_template(tracklet, t, "first_gt", boxes, rng, net_cfg.n_template)
            flag = "template_fallback"
        try:
            search = build_search_area(tracklet.cloud(t), prev, rng, net_cfg.n_search, track_cfg.search_enlarge)
        except SearchStarvation:
            boxes.append(prev)
            flags.append("search_starved")
            timings.append(((time.perf_counter() - t0) * 1e3, 0.0, 0.0))
            continue
        t1 = time.perf_counter()
        with dc.no_grad():
            out = net.forward(store, tpl[None], search.points[None], [rng], training=False, proposals=proposals)
        t2 = time.perf_counter()
        p = out.proposals
        local, _ = select_best(p.centers.data[0], p.heading.data[0], p.logits.data[0], initial_box.extents)
        boxes.append(from_search_frame(local, prev))
        t3 = time.perf_counter()
        flags.append(flag)
        timings.append(((t1 - t0) * 1e3, (t2 - t1) * 1e3, (t3 - t2) * 1e3))
    return TrackResult(boxes, timings, flags)


def evaluate_tracklets(store, net_cfg, tracklets, track_cfg=None, proposals=None, return_results=False,
                       threads=1):
    """Track every tracklet from its first GT box and pool the frames.

    Each tracklet draws from its own generator, so the result does not
    depend on ``threads``.
    """
    track_cfg = track_cfg or TrackConfig()

    def one(i):
        return track(store, net_cfg, tracklets[i], tracklets[i].boxes[0], track_cfg, proposals,
                     rng=np.random.default_rng([track_cfg.seed, i]))

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one, range(len(tracklets))))
    else:
        results = [one(i) for i in range(len(tracklets))]
    reports = [evaluate(res.boxes, tr.boxes) for res, tr in zip(results, tracklets)]
    merged = merge_reports(reports)
    return (merged, reports, results) if return_results else merged


def static_baseline(tracklet: Tracklet):
    """A tracker that never moves: every frame reports its previous output."""
    return [tracklet.boxes[0]] * len(tracklet)


def previous_gt_baseline(tracklet: Tracklet):
    """Reports the previous frame's ground truth (an oracle-assisted baseline)."""
    return [tracklet.boxes[0]] + list(tracklet.boxes[:-1])


def evaluate_baseline(tracklets, fn) -> OpeReport:
    return merge_reports([evaluate(fn(tr), tr.boxes) for tr in tracklets])


# ------------------------------------------------------------------ ablations

EXPERIMENTS = ("tsfa_variants", "targetness", "template_modes", "proposal_counts")
PROPOSAL_SWEEP = (4, 8, 12, 16, 20, 32, 48, 64)


def run_ablation(experiment_id, train_tracklets, test_tracklets, net_cfg: NetConfig, train_cfg: TrainConfig,
                 track_cfg: TrackConfig | None = None, store=None, val_tracklets=None, threads=1):
    """Train/track/evaluate over one switch and return a table.

    ``store`` (a trained default model) is reused by the template-mode and
    proposal-count experiments, which need no retraining.
    """
    if experiment_id not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {experiment_id!r}; choose from {EXPERIMENTS}")
    track_cfg = track_cfg or TrackConfig()

    def fit(cfg):
        return train(train_tracklets, cfg, train_cfg, val_tracklets, track_cfg=track_cfg, threads=threads).store

    def score(store, cfg, tcfg=None, proposals=None):
        return evaluate_tracklets(store, cfg, test_tracklets, tcfg or track_cfg, proposals, threads=threads)

    rows = []
    if experiment_id == "tsfa_variants":
        labels = {"default": "Default setting", "no_template_features": "Without template features",
                  "no_similarity": "Without similarity map", "search_features_A": "With search area features A",
                  "search_features_B": "With search area features B"}
        for v in TSFA_VARIANTS:
            cfg = replace(net_cfg, tsfa_variant=v)
            rep = score(fit(cfg), cfg)
            rows.append({"setting": labels[v], **rep.as_dict()})
    elif experiment_id == "targetness":
        labels = {"default": "Default setting", "no_concat": "Without concatenation",
                  "no_branch": "Without the whole branch"}
        for m in ("default", "no_concat", "no_branch"):
            cfg = replace(net_cfg, targetness=m)
            rep = score(fit(cfg), cfg)
            rows.append({"setting": labels[m], **rep.as_dict()})
    elif experiment_id == "template_modes":
        store = store or fit(net_cfg)
        labels = {"first_gt": "The first GT", "previous_result": "Previous result",
                  "first_and_previous": "First & Previous", "all_previous": "All previous results"}
        for mode in TEMPLATE_MODES:
            rep = score(store, net_cfg, replace(track_cfg, template_mode=mode))
            rows.append({"setting": labels[mode], **rep.as_dict()})
    else:
        store = store or fit(net_cfg)
        for k in PROPOSAL_SWEEP:
            if k > net_cfg.search_seeds:
                continue
            rep = score(store, net_cfg, proposals=k)
            rows.append({"setting": f"K={k}", "proposals": k, **rep.as_dict()})
    return {"experiment": experiment_id, "columns": ["setting", "success", "precision", "frames"], "rows": rows}


def format_table(table) -> str:
    width = max(len(str(r["setting"])) for r in table["rows"]) if table["rows"] else 10
    lines = [f"{'setting':<{width}}  {'Success':>8}  {'Precision':>9}  {'frames':>6}"]
    for r in table["rows"]:
        lines.append(f"{r['setting']:<{width}}  {r['success']:8.1f}  {r['precision']:9.1f}  {r['frames']:6d}")
    return "\n".join(lines)
