"""Tracklets from KITTI tracking files or a synthetic generator, and the
template / search-area sample builders used for training and tracking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import TEMPLATE_MODES
from .diffcore import ContractError, EmptyInputError
from .pcops import (SEARCH, Box3D, PointCloud, box_to_frame, crop_points, normalize_count,
                    points_in_box, to_box_local, to_search_frame, wrap_angle)

CATEGORIES = ("Car", "Pedestrian", "Van", "Cyclist")
TRAIN_SCENES = tuple(range(0, 17))
VAL_SCENES = (17, 18)
TEST_SCENES = (19, 20)


class ParseError(ValueError):
    pass


class FormatError(ValueError):
    pass


class TemplateStarvation(EmptyInputError):
    pass


class SearchStarvation(EmptyInputError):
    pass


@dataclass
class Tracklet:
    boxes: list  # Box3D per frame, sensor frame
    frames: list | None = None  # PointCloud per frame, or a path to a velodyne file
    category: str = "Car"
    scene: str = "0000"
    track_id: int = 0
    frame_ids: list = field(default_factory=list)
    calib: np.ndarray | None = None  # 4x4 velodyne -> internal transform

    def __len__(self):
        return len(self.boxes)

    def cloud(self, t) -> np.ndarray:
        f = self.frames[t]
        if isinstance(f, PointCloud):
            return f.points
        if isinstance(f, np.ndarray):
            return f
        pts = load_velodyne_bin(Path(f).read_bytes()).points
        if self.calib is not None:
            pts = pts @ self.calib[:3, :3].T + self.calib[:3, 3]
        return pts


# ----------------------------------------------------------------- KITTI

def camera_box_to_internal(h, w, l, x, y, z, ry) -> Box3D:
    """KITTI rectified-camera box (bottom-center location, y down) to the
    internal x-forward / y-left / z-up convention."""
    cy = y - h / 2.0
    return Box3D([z, -x, -cy], [w, l, h], -ry - math.pi / 2)


def parse_kitti_labels(label_text: str, scene="0000") -> list[Tracklet]:
    """One tracklet per track id, frames in time order, boxes only."""
    tracks: dict[int, list] = {}
    meta: dict[int, str] = {}
    for lineno, line in enumerate(label_text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 17:
            raise ParseError(f"line {lineno}: expected 17 fields, got {len(parts)}")
        try:
            frame, tid = int(parts[0]), int(parts[1])
            kind = parts[2]
            h, w, l, x, y, z, ry = (float(v) for v in parts[10:17])
        except ValueError as e:
            raise ParseError(f"line {lineno}: {e}") from None
        if kind not in CATEGORIES:
            continue
        tracks.setdefault(tid, []).append((frame, camera_box_to_internal(h, w, l, x, y, z, ry)))
        meta[tid] = kind
    out = []
    for tid in sorted(tracks):
        rows = sorted(tracks[tid], key=lambda r: r[0])
        out.append(Tracklet([b for _, b in rows], None, meta[tid], scene, tid, [f for f, _ in rows]))
    return out


def write_kitti_labels(tracklets, frame_offset=0) -> str:
    """Fixture writer: inverse of :func:`parse_kitti_labels` for our fields."""
    rows = []
    for tr in tracklets:
        fids = tr.frame_ids or list(range(frame_offset, frame_offset + len(tr)))
        for fid, b in zip(fids, tr.boxes):
            w, l, h = (float(v) for v in b.extents)
            x, y, z = float(-b.center[1]), float(-b.center[2] + h / 2), float(b.center[0])
            ry = float(wrap_angle(-b.heading - math.pi / 2))
            rows.append((fid, tr.track_id, f"{fid} {tr.track_id} {tr.category} 0 0 0 0 0 0 0 "
                         f"{h!r} {w!r} {l!r} {x!r} {y!r} {z!r} {ry!r}"))
    rows.sort(key=lambda r: (r[0], r[1]))
    return "".join(r[2] + "\n" for r in rows)


def load_velodyne_bin(data: bytes) -> PointCloud:
    """Little-endian float32 records (x, y, z, intensity); intensity dropped."""
    if len(data) % 16:
        raise FormatError(f"velodyne payload of {len(data)} bytes is not a multiple of 16")
    arr = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    return PointCloud(arr[:, :3].astype(float))


def write_velodyne_bin(points, intensity=None) -> bytes:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    inten = np.zeros(len(points)) if intensity is None else np.asarray(intensity, dtype=float)
    return np.column_stack([points, inten]).astype("<f4").tobytes()


def parse_calib(text: str) -> np.ndarray:
    """Velodyne -> internal 4x4 transform from a KITTI tracking calib file."""
    vals = {}
    for line in text.splitlines():
        parts = line.replace(":", " ").split()
        if parts:
            vals[parts[0]] = np.array([float(v) for v in parts[1:]])
    tr = vals.get("Tr_velo_cam", vals.get("Tr_velo_to_cam"))
    rect = vals.get("R_rect", vals.get("R0_rect"))
    if tr is None or rect is None:
        raise FormatError("calib file lacks Tr_velo_cam / R_rect")
    velo_cam = np.eye(4)
    velo_cam[:3, :4] = tr.reshape(3, 4)
    r = np.eye(4)
    r[:3, :3] = rect.reshape(3, 3)
    cam_internal = np.array([[0, 0, 1, 0], [-1, 0, 0, 0], [0, -1, 0, 0], [0, 0, 0, 1]], dtype=float)
    return cam_internal @ r @ velo_cam


def load_kitti_scene(root, scene, categories=CATEGORIES) -> list[Tracklet]:
    """Tracklets of one scene with lazily loaded velodyne frames."""
    root = Path(root)
    scene = f"{int(scene):04d}"
    text = (root / "label_02" / f"{scene}.txt").read_text()
    calib_path = root / "calib" / f"{scene}.txt"
    calib = parse_calib(calib_path.read_text()) if calib_path.exists() else None
    out = []
    for tr in parse_kitti_labels(text, scene):
        if tr.category not in categories:
            continue
        tr.frames = [root / "velodyne" / scene / f"{f:06d}.bin" for f in tr.frame_ids]
        tr.calib = calib
        out.append(tr)
    return out


def load_kitti(root, scenes, categories=CATEGORIES) -> list[Tracklet]:
    out = []
    for s in scenes:
        out.extend(load_kitti_scene(root, s, categories))
    return out


def write_split_files(directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, scenes in (("train", TRAIN_SCENES), ("val", VAL_SCENES), ("test", TEST_SCENES)):
        (d / f"{name}.txt").write_text("".join(f"{s}\n" for s in scenes))


def read_split_file(path) -> list[int]:
    return [int(t) for t in Path(path).read_text().split()]


# ------------------------------------------------------------- synthetic

@dataclass
class SynthSpec:
    num_frames: int = 10
    extents: tuple = (1.8, 4.2, 1.6)
    extent_jitter: float = 0.1
    points_on_target: int = 128
    clutter: int = 1024
    clutter_half_extent: float = 8.0
    clutter_height: float = 3.0
    noise: float = 0.0
    speed: tuple = (0.3, 0.8)
    max_accel: float = 0.1
    max_turn_deg: float = 4.0
    resample_surface: bool = True


def sample_box_surface(extents, n, rng, shrink=0.98):
    """``n`` points uniformly on the faces of a box centred at the origin
    (length along x), pulled in by ``shrink`` so they stay strictly inside."""
    w, l, h = extents
    hx, hy, hz = l / 2 * shrink, w / 2 * shrink, h / 2 * shrink
    areas = np.array([w * h, w * h, l * h, l * h, l * w, l * w])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1, 1, size=(n, 3)) * np.array([hx, hy, hz])
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    bound = np.array([hx, hy, hz])[axis]
    u[np.arange(n), axis] = sign * bound
    return u


def generate_synthetic_tracklet(spec: SynthSpec, rng=None, track_id=0) -> Tracklet:
    """A box moving along a smooth random walk, surface samples plus clutter."""
    rng = np.random.default_rng(rng)
    ext = np.asarray(spec.extents, dtype=float) * (1 + rng.uniform(-spec.extent_jitter, spec.extent_jitter, 3))
    center = np.array([rng.uniform(-20, 20), rng.uniform(-20, 20), ext[2] / 2])
    heading = rng.uniform(-math.pi, math.pi)
    speed = rng.uniform(*spec.speed)
    turn = math.radians(spec.max_turn_deg)
    local = sample_box_surface(ext, spec.points_on_target, rng)
    boxes, frames = [], []
    for t in range(spec.num_frames):
        if t > 0:
            heading += rng.uniform(-turn, turn)
            speed = float(np.clip(speed + rng.uniform(-spec.max_accel, spec.max_accel), *spec.speed))
            center = center + speed * np.array([math.cos(heading), math.sin(heading), 0.0])
        box = Box3D(center, ext, heading)
        if spec.resample_surface and t > 0:
            local = sample_box_surface(ext, spec.points_on_target, rng)
        c, s = math.cos(box.heading), math.sin(box.heading)
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        target = local @ rot.T + box.center
        if spec.noise > 0:
            target = target + rng.normal(0, spec.noise, target.shape)
        clutter = np.column_stack([
            rng.uniform(-spec.clutter_half_extent, spec.clutter_half_extent, (spec.clutter, 2)) + center[:2],
            rng.uniform(0, spec.clutter_height, spec.clutter)])
        clutter = clutter[~points_in_box(clutter, box, 0.0)]
        boxes.append(box)
        frames.append(PointCloud(np.concatenate([target, clutter])))
    return Tracklet(boxes, frames, "Car", "synthetic", track_id, list(range(spec.num_frames)))


def generate_dataset(spec: SynthSpec, count, seed=0) -> list[Tracklet]:
    seeds = np.random.SeedSequence(seed).spawn(count)
    return [generate_synthetic_tracklet(spec, np.random.default_rng(s), i) for i, s in enumerate(seeds)]


def synth_spec_from_dict(d: dict) -> SynthSpec:
    return replace(SynthSpec(), **{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


# --------------------------------------------------------- sample building

def _canonical_crop(points, box):
    return to_box_local(crop_points(points, box, 0.0), box)


def build_template(tracklet: Tracklet, frame_idx, mode, previous_results, rng=None, n_points=512):
    """Template cloud for tracking frame ``frame_idx``.

    ``previous_results[t]`` is the box reported for frame t < frame_idx (frame
    0 holds the first GT). Each crop is expressed in its own box frame before
    fusion. Returns ``(points (n_points, 3), reference box)``.
    """
    if mode not in TEMPLATE_MODES:
        raise ContractError(f"unknown template mode {mode!r}")
    first = tracklet.boxes[0]
    prev_t = max(frame_idx - 1, 0)
    if mode == "first_gt":
        sources = [(0, first)]
    elif mode == "previous_result":
        sources = [(prev_t, previous_results[prev_t])]
    elif mode == "first_and_previous":
        sources = [(0, first)] + ([(prev_t, previous_results[prev_t])] if prev_t > 0 else [])
    else:
        sources = [(t, previous_results[t]) for t in range(0, max(frame_idx, 1))]
    parts = [_canonical_crop(tracklet.cloud(t), b) for t, b in sources]
    pts = np.concatenate(parts) if parts else np.zeros((0, 3))
    if len(pts) == 0:
        raise TemplateStarvation(f"no template points for frame {frame_idx} (mode {mode})")
    return normalize_count(pts, n_points, rng), sources[-1][1]


def build_search_area(frame_points, previous_box: Box3D, rng=None, n_points=1024, enlarge=2.0):
    """Crop around the enlarged previous box, map to its frame, fix the count."""
    crop = crop_points(np.asarray(frame_points), previous_box, enlarge)
    if len(crop) == 0:
        raise SearchStarvation("no points in search area")
    pc = to_search_frame(PointCloud(crop), previous_box)
    return PointCloud(normalize_count(pc.points, n_points, rng), SEARCH)


@dataclass
class TrainingSample:
    template: np.ndarray  # (N1, 3)
    search: np.ndarray  # (N2, 3), search frame
    gt_box: Box3D  # search frame
    reference: Box3D  # sensor frame box defining the search frame


def jitter_box(box: Box3D, rng, offset, heading_deg) -> Box3D:
    d = rng.uniform(-offset, offset, 2)
    dh = math.radians(rng.uniform(-heading_deg, heading_deg))
    return Box3D(box.center + np.array([d[0], d[1], 0.0]), box.extents, box.heading + dh)


def augment_training_sample(tracklet: Tracklet, frame_idx, rng=None, net_cfg=None, train_cfg=None,
                            counter=None):
    """Training sample for ``frame_idx`` (>= 1) with random offsets.

    Template: first GT crop fused with a crop around the randomly offset
    previous GT. Search: current GT offset the same way, enlarged and cropped.
    Returns None (and bumps ``counter['skipped']``) when the search area
    holds no on-target points.
    """
    from .config import NetConfig, TrainConfig

    net_cfg = net_cfg or NetConfig()
    train_cfg = train_cfg or TrainConfig()
    if frame_idx < 1:
        raise ContractError("augment_training_sample needs a predecessor frame")
    rng = np.random.default_rng(rng)
    prev_box = jitter_box(tracklet.boxes[frame_idx - 1], rng, train_cfg.template_offset,
                          train_cfg.template_heading_offset_deg)
    parts = [_canonical_crop(tracklet.cloud(0), tracklet.boxes[0]),
             _canonical_crop(tracklet.cloud(frame_idx - 1), prev_box)]
    tpl = np.concatenate(parts)
    gt = tracklet.boxes[frame_idx]
    ref = jitter_box(gt, rng, train_cfg.search_offset, train_cfg.search_heading_offset_deg)
    cloud = tracklet.cloud(frame_idx)
    crop = crop_points(cloud, ref, train_cfg.search_enlarge)
    gt_local = box_to_frame(gt, ref)
    search_local = to_box_local(crop, ref)
    if len(tpl) == 0 or not points_in_box(search_local, gt_local, 0.0).any():
        if counter is not None:
            counter["skipped"] = counter.get("skipped", 0) + 1
        return None
    return TrainingSample(normalize_count(tpl, net_cfg.n_template, rng),
                          normalize_count(search_local, net_cfg.n_search, rng), gt_local, ref)
