"""Command-line entry point.

    pointtrack {train,track,eval,ablate,bench,synth,report} [options]

Configuration is layered: built-in defaults, ``--preset``, ``--config`` file
(key = value lines, or a run manifest), ``--set key=value`` and finally the
dedicated flags, which always win. Every command writes ``manifest.json``
into its output directory; passing it back with ``--manifest`` reruns the
command with the identical resolved configuration and reports whether the
metrics were reproduced.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import dataio, evalkit
from . import tracker as T
from .config import (TEMPLATE_MODES, NetConfig, TrackConfig, TrainConfig, apply_overrides,
                     desk_preset, flatten, parse_kv)
from .diffcore import EmptyInputError, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATA_ENV = "POINTTRACK_DATA"
SPLITS = ("train", "val", "test", "all")
# network keys that only affect inference and may differ from the checkpoint
INFERENCE_NET_KEYS = ("proposals", "cluster_radius", "cluster_max_k")

log = logging.getLogger("pointtrack")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunOptions:
    source: str = "kitti"  # kitti | synthetic
    data: str = ""
    split_dir: str = ""
    category: str = "Car"
    split: str = "test"
    checkpoint: str = ""
    results: str = ""
    experiment: str = ""
    threads: int = 1
    synth_seed: int = 0
    synth_train: int = 200
    synth_val: int = 0
    synth_test: int = 50
    bench_frames: int = 50


# ------------------------------------------------------------------ parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("configuration")
    g.add_argument("--config", help="key = value file (or a manifest.json)")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    g.add_argument("--preset", choices=("full", "desk"), help="start from a named preset")
    g.add_argument("--manifest", help="rerun exactly from a manifest written by an earlier run")
    g.add_argument("--seed", type=int, help="single source of all randomness")
    g.add_argument("--threads", type=int, help="worker cap for sample preparation and evaluation")
    g.add_argument("--out", help="output directory (default runs/<command>)")
    d = common.add_argument_group("data")
    d.add_argument("--data", help=f"KITTI tracking root (fallback: ${DATA_ENV})")
    d.add_argument("--synthetic", metavar="SPEC", help="synthetic dataset spec file (key = value)")
    d.add_argument("--split-dir", help="directory holding train.txt / val.txt / test.txt")
    d.add_argument("--category", help="object category to keep (default Car)")
    d.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="pointtrack", description="Point-cloud single-object tracker.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    tr = sub.add_parser("train", parents=[common], help="train a model")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--checkpoint", help="output checkpoint path (default <out>/model.ckpt)")

    tk = sub.add_parser("track", parents=[common], help="track every tracklet of a split")
    tk.add_argument("--checkpoint")
    tk.add_argument("--split", choices=SPLITS)
    _inference_flags(tk)

    ev = sub.add_parser("eval", parents=[common], help="score result files against labels")
    ev.add_argument("--results", help="directory of per-tracklet result files")
    ev.add_argument("--split", choices=SPLITS)

    ab = sub.add_parser("ablate", parents=[common], help="run one ablation grid")
    ab.add_argument("--experiment", choices=T.EXPERIMENTS)
    ab.add_argument("--checkpoint", help="trained default model reused where no retraining is needed")
    ab.add_argument("--epochs", type=int)
    _inference_flags(ab)

    bn = sub.add_parser("bench", parents=[common], help="time the tracking loop")
    bn.add_argument("--checkpoint")
    bn.add_argument("--frames", type=int)
    _inference_flags(bn)

    sub.add_parser("synth", parents=[common], help="write a synthetic dataset in KITTI layout")

    rp = sub.add_parser("report", parents=[common], help="plot data and figures")
    rp.add_argument("--results", help="optional directory of result files")
    rp.add_argument("--split", choices=SPLITS)
    return p


def _inference_flags(p):
    p.add_argument("--proposals", type=int, help="number of proposals K")
    p.add_argument("--cluster-radius", type=float, help="cluster radius R in meters")
    p.add_argument("--template-mode", choices=TEMPLATE_MODES)


FLAG_KEYS = {
    "threads": ("run.threads",), "data": ("run.data",), "split_dir": ("run.split_dir",),
    "category": ("run.category",), "checkpoint": ("run.checkpoint",), "results": ("run.results",),
    "split": ("run.split",), "experiment": ("run.experiment",), "frames": ("run.bench_frames",),
    "epochs": ("train.epochs",), "proposals": ("net.proposals",), "cluster_radius": ("net.cluster_radius",),
    "template_mode": ("track.template_mode",),
    "seed": ("train.seed", "track.seed", "run.synth_seed"),
}


def default_flat(preset=None) -> dict:
    net, train = desk_preset() if preset == "desk" else (NetConfig(), TrainConfig())
    flat = {}
    for prefix, obj in (("net", net), ("train", train), ("track", TrackConfig()),
                        ("synth", dataio.SynthSpec()), ("run", RunOptions())):
        flat.update(flatten(prefix, obj))
    return flat


def read_config_file(path) -> dict:
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return json.loads(text)["config"]
    return parse_kv(text)


def resolve(args) -> dict:
    """Flat, fully resolved configuration for ``args``."""
    if args.manifest:
        man = json.loads(Path(args.manifest).read_text())
        if man.get("command") != args.command:
            raise UsageError(f"--manifest was written by {man.get('command')!r}, not {args.command!r}")
        return dict(man["config"])
    flat = default_flat(args.preset)
    if args.config:
        flat.update(read_config_file(args.config))
    if args.synthetic:
        flat.update(read_config_file(args.synthetic))
        flat["run.source"] = "synthetic"
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        flat.update(parse_kv(item))
    for name, keys in FLAG_KEYS.items():
        value = getattr(args, name, None)
        if value is not None:
            for k in keys:
                flat[k] = value
    if getattr(args, "data", None):
        flat["run.source"] = "kitti"
    known = set(default_flat())
    unknown = sorted(k for k in flat if k not in known and not k.startswith("train.weights."))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return flat


def configs(flat):
    try:
        net = apply_overrides(NetConfig(), flat, "net")
        train = apply_overrides(TrainConfig(), flat, "train")
        track = apply_overrides(TrackConfig(), flat, "track")
        synth = apply_overrides(dataio.SynthSpec(), flat, "synth")
        run = apply_overrides(RunOptions(), flat, "run")
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None
    return net, train, track, synth, run


# --------------------------------------------------------------------- data

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def split_scenes(run, root, split):
    if split == "all":
        return list(dataio.TRAIN_SCENES + dataio.VAL_SCENES + dataio.TEST_SCENES)
    split_dir = Path(run.split_dir) if run.split_dir else root / "splits"
    f = split_dir / f"{split}.txt"
    if f.exists():
        return dataio.read_split_file(f)
    defaults = {"train": dataio.TRAIN_SCENES, "val": dataio.VAL_SCENES, "test": dataio.TEST_SCENES}
    return list(defaults[split])


def data_root(run):
    root = run.data or os.environ.get(DATA_ENV, "")
    if not root:
        raise UsageError(f"no dataset: pass --data ROOT (or set {DATA_ENV}), or --synthetic SPEC")
    root = Path(root)
    if not (root / "label_02").is_dir() and (root / "training" / "label_02").is_dir():
        root = root / "training"
    if not (root / "label_02").is_dir():
        raise DataError(f"--data {root}: no label_02/ directory found (expected the KITTI tracking layout)")
    return root


def load_split(run, synth, split, inputs=None):
    """Tracklets of one split; label and split files are recorded in ``inputs``."""
    if run.source == "synthetic":
        counts = {"train": run.synth_train, "val": run.synth_val, "test": run.synth_test}
        index = {"train": 0, "val": 1, "test": 2}
        if split == "all":
            return [t for s in ("train", "val", "test") for t in load_split(run, synth, s)]
        return dataio.generate_dataset(synth, counts[split], seed=[run.synth_seed, index[split]])
    root = data_root(run)
    scenes = split_scenes(run, root, split)
    try:
        out = dataio.load_kitti(root, scenes, (run.category,))
    except FileNotFoundError as e:
        raise DataError(f"missing file: {e.filename}") from None
    except dataio.ParseError as e:
        raise DataError(str(e)) from None
    if inputs is not None:
        for s in scenes:
            f = root / "label_02" / f"{int(s):04d}.txt"
            inputs[f"labels/{f.name}"] = {"path": str(f), "sha256": sha256_file(f)}
    return [t for t in out if len(t) >= 2]


def tracklet_name(tr):
    return f"{tr.scene}_{tr.track_id:04d}"


# ------------------------------------------------------------------ commands

def _net_from_checkpoint(meta, flat):
    """Network structure from the checkpoint; inference knobs from ``flat``."""
    net = NetConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in meta["net"].items()})
    for k in INFERENCE_NET_KEYS:
        flat_key = f"net.{k}"
        if flat_key in flat:
            setattr(net, k, flat[flat_key])
    for k, v in flatten("net", net).items():
        flat[k] = v
    return net


def _load_model(run, flat, inputs):
    if not run.checkpoint:
        raise UsageError("--checkpoint is required")
    path = Path(run.checkpoint)
    if not path.exists():
        raise DataError(f"--checkpoint {path}: file not found")
    try:
        store, meta = load_checkpoint(path)
    except ValueError as e:
        raise DataError(f"--checkpoint {path}: {e}") from None
    inputs["checkpoint"] = {"path": str(path), "sha256": sha256_file(path)}
    return store, _net_from_checkpoint(meta, flat)


def cmd_train(flat, out, inputs):
    net, train, track, synth, run = configs(flat)
    data = load_split(run, synth, "train", inputs)
    if not data:
        raise DataError("training split holds no tracklets")
    val = None
    if run.source == "synthetic" and run.synth_val > 0 or run.source == "kitti":
        val = load_split(run, synth, "val", inputs) or None
    ckpt = Path(run.checkpoint) if run.checkpoint else out / "model.ckpt"
    with open(out / "train_log.jsonl", "w") as logf:
        res = T.train(data, net, train, val, logf, threads=run.threads, track_cfg=track)
    meta = {"net": json.loads(json.dumps(asdict(net))), "best_epoch": res.best_epoch}
    save_checkpoint(res.store, ckpt, meta)
    last = res.history[-1]
    metrics = {k: last[k] for k in ("reg", "cla", "prop", "box", "total") if k in last}
    metrics.update(best_epoch=res.best_epoch, epochs=len(res.history), skipped=res.skipped,
                   checkpoint_sha256=sha256_file(ckpt))
    if "val_success" in last:
        metrics["best_val_success"] = res.best_score
    print(f"checkpoint {ckpt}")
    print("epoch,lr,total,reg,cla,prop,box" + (",val_success" if val else ""))
    for h in res.history:
        row = [h["epoch"], h["lr"], h.get("total"), h.get("reg"), h.get("cla"), h.get("prop"), h.get("box")]
        if val:
            row.append(h.get("val_success"))
        print(",".join(_num(v) for v in row))
    return metrics, {"checkpoint": ckpt, "train_log": out / "train_log.jsonl"}


def cmd_track(flat, out, inputs):
    *_, run = configs(flat)
    store, net = _load_model(run, flat, inputs)
    _, _, track, synth, run = configs(flat)
    data = load_split(run, synth, run.split, inputs)
    rep, reps, results = T.evaluate_tracklets(store, net, data, track, return_results=True, threads=run.threads)
    rdir = out / "results"
    rdir.mkdir(exist_ok=True)
    print("tracklet,frames,success,precision")
    for tr, r, res in zip(data, reps, results):
        T.write_track_result(res, rdir / f"{tracklet_name(tr)}.csv")
        print(f"{tracklet_name(tr)},{r.frames},{r.success:.4f},{r.precision:.4f}")
    print(f"ALL,{rep.frames},{rep.success:.4f},{rep.precision:.4f}")
    metrics = {"success": rep.success, "precision": rep.precision, "frames": rep.frames,
               "tracklets": len(data), "proposals": net.proposals}
    return metrics, {}


def cmd_eval(flat, out, inputs):
    *_, synth, run = configs(flat)
    if not run.results:
        raise UsageError("--results is required")
    rdir = Path(run.results)
    if not rdir.is_dir():
        raise DataError(f"--results {rdir}: not a directory")
    data = load_split(run, synth, run.split, inputs)
    problems, per_cat, rows = [], {}, []
    for tr in data:
        f = rdir / f"{tracklet_name(tr)}.csv"
        if not f.exists():
            problems.append(f"{tracklet_name(tr)}: result file missing")
            continue
        res = T.read_track_result(f)
        if len(res.boxes) != len(tr):
            problems.append(f"{tracklet_name(tr)}: {len(res.boxes)} frames, expected {len(tr)}")
            continue
        inputs[f"results/{f.name}"] = {"path": str(f), "sha256": sha256_file(f)}
        rep = evalkit.evaluate(res.boxes, tr.boxes)
        per_cat.setdefault(tr.category, []).append(rep)
        rows.append({"tracklet": tracklet_name(tr), "category": tr.category, **rep.as_dict()})
    if problems:
        raise DataError("incomplete results:\n  " + "\n  ".join(problems))
    if not rows:
        raise DataError("no tracklets to evaluate")
    merged = {c: evalkit.merge_reports(r) for c, r in per_cat.items()}
    mean_s, mean_p = evalkit.category_mean(merged)
    table = ["category,frames,success,precision"]
    for c, r in sorted(merged.items()):
        table.append(f"{c},{r.frames},{r.success:.4f},{r.precision:.4f}")
    frames = sum(r.frames for r in merged.values())
    table.append(f"Mean,{frames},{mean_s:.4f},{mean_p:.4f}")
    (out / "report.txt").write_text("\n".join(table) + "\n")
    with open(out / "report.jsonl", "w") as f:
        for r in rows:
            f.write(json.dumps(r) + "\n")
        f.write(json.dumps({"summary": True, "success": mean_s, "precision": mean_p, "frames": frames}) + "\n")
    print("\n".join(table))
    metrics = {"success": mean_s, "precision": mean_p, "frames": frames,
               "per_category": {c: r.as_dict() for c, r in merged.items()}}
    return metrics, {"report": out / "report.txt", "records": out / "report.jsonl"}


def cmd_ablate(flat, out, inputs):
    net, train, track, synth, run = configs(flat)
    if not run.experiment:
        raise UsageError(f"--experiment is required (one of {', '.join(T.EXPERIMENTS)})")
    store = None
    if run.checkpoint:
        store, net = _load_model(run, flat, inputs)
    data = load_split(run, synth, "train", inputs)
    test = load_split(run, synth, run.split, inputs)
    val = None
    if run.source == "kitti" or run.synth_val > 0:
        val = load_split(run, synth, "val", inputs) or None
    table = T.run_ablation(run.experiment, data, test, net, train, track, store, val, threads=run.threads)
    text = T.format_table(table)
    (out / f"{run.experiment}.txt").write_text(text + "\n")
    (out / f"{run.experiment}.json").write_text(json.dumps(table, indent=1) + "\n")
    print(text)
    return {"rows": table["rows"]}, {"table": out / f"{run.experiment}.txt"}


def cmd_bench(flat, out, inputs):
    *_, run = configs(flat)
    store, net = _load_model(run, flat, inputs)
    _, _, track, synth, run = configs(flat)
    spec = dataio.SynthSpec(**{**asdict(synth), "num_frames": run.bench_frames + 1})
    tr = dataio.generate_synthetic_tracklet(spec, run.synth_seed)
    # one untimed pass loads compiled kernels and warms caches
    T.track(store, net, dataio.Tracklet(tr.boxes[:2], tr.frames[:2]), tr.boxes[0], track)
    res = T.track(store, net, tr, tr.boxes[0], track)
    tm = np.array(res.timings[1:])
    pre, fwd, post = tm.mean(axis=0)
    total = pre + fwd + post
    metrics = {"preprocess_ms": pre, "forward_ms": fwd, "postprocess_ms": post, "total_ms": total,
               "fps": 1000.0 / total, "frames": len(tm)}
    print("phase,ms")
    for k in ("preprocess_ms", "forward_ms", "postprocess_ms", "total_ms"):
        print(f"{k[:-3]},{metrics[k]:.3f}")
    print(f"fps,{metrics['fps']:.2f}")
    (out / "bench.json").write_text(json.dumps(metrics, indent=1) + "\n")
    # timings are hardware-dependent, so they are not part of the reproducible metrics
    return {"frames": len(tm)}, {"bench": out / "bench.json"}


def cmd_synth(flat, out, inputs):
    *_, synth, run = configs(flat)
    run.source = "synthetic"
    (out / "label_02").mkdir(exist_ok=True)
    (out / "splits").mkdir(exist_ok=True)
    scene = 0
    for split in ("train", "val", "test"):
        ids = []
        for k, tr in enumerate(load_split(run, synth, split)):
            name = f"{scene:04d}"
            tr.track_id = 0
            tr.frame_ids = list(range(len(tr)))
            tr.category = run.category
            (out / "label_02" / f"{name}.txt").write_text(dataio.write_kitti_labels([tr]))
            vdir = out / "velodyne" / name
            vdir.mkdir(parents=True, exist_ok=True)
            for t in range(len(tr)):
                (vdir / f"{t:06d}.bin").write_bytes(dataio.write_velodyne_bin(tr.cloud(t)))
            ids.append(scene)
            scene += 1
        (out / "splits" / f"{split}.txt").write_text("".join(f"{s}\n" for s in ids))
        print(f"{split},{len(ids)}")
    return {"scenes": scene}, {}


HIST_EDGES = [0, 25, 50, 100, 150, 200, 300, 400, 600, 800, 1000, 1500, 2000, 4000, 10 ** 6]
POINT_BUCKETS = [(0, 50), (50, 100), (100, 200), (200, 400), (400, 10 ** 6)]


def cmd_report(flat, out, inputs):
    from . import plotting

    *_, synth, run = configs(flat)
    data = load_split(run, synth, run.split, inputs)
    if not data:
        raise DataError("split holds no tracklets")
    hist, counts = evalkit.points_histogram(data, HIST_EDGES)
    frac = evalkit.fraction_below(counts, 50)
    files = {}
    files["points_hist"], files["points_hist_png"] = plotting.histogram_figure(out, "points_histogram",
                                                                             HIST_EDGES, hist)
    print("bin_low,bin_high,frames")
    for lo, hi, c in zip(HIST_EDGES[:-1], HIST_EDGES[1:], hist):
        print(f"{lo},{hi},{c}")
    print(f"fraction_below_50,{frac:.6f}")
    metrics = {"frames": int(len(counts)), "fraction_below_50": frac, "histogram": hist.tolist(),
               "tracklets": len(data)}
    if run.results:
        rdir = Path(run.results)
        reports = []
        for tr in data:
            f = rdir / f"{tracklet_name(tr)}.csv"
            if not f.exists():
                raise DataError(f"{f}: result file missing")
            inputs[f"results/{f.name}"] = {"path": str(f), "sha256": sha256_file(f)}
            reports.append(evalkit.evaluate(T.read_track_result(f).boxes, tr.boxes))
        merged = evalkit.merge_reports(reports)
        thr, sc = evalkit.success_curve(merged.ious)
        files["success"], files["success_png"] = plotting.curve_figure(
            out, "success_curve", thr, {"success": sc}, "overlap threshold", "fraction of frames")
        thr, pc = evalkit.precision_curve(merged.errors)
        files["precision"], files["precision_png"] = plotting.curve_figure(
            out, "precision_curve", thr, {"precision": pc}, "center error threshold (m)", "fraction of frames")
        rows = evalkit.success_vs_initial_points(reports, data, POINT_BUCKETS)
        files["buckets"], files["buckets_png"] = plotting.bucket_figure(out, "success_vs_points", rows)
        metrics.update(success=merged.success, precision=merged.precision, buckets=rows)
        print(f"success,{merged.success:.4f}")
        print(f"precision,{merged.precision:.4f}")
    return metrics, files


COMMANDS = {"train": cmd_train, "track": cmd_track, "eval": cmd_eval, "ablate": cmd_ablate,
            "bench": cmd_bench, "synth": cmd_synth, "report": cmd_report}


# ------------------------------------------------------------------- driver

def _num(v):
    if v is None:
        return ""
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def run_command(args) -> int:
    flat = resolve(args)
    out = Path(args.out or Path("runs") / args.command)
    out.mkdir(parents=True, exist_ok=True)
    inputs = {}
    for label, path in (("config", args.config), ("synthetic_spec", args.synthetic), ("manifest", args.manifest)):
        if path:
            inputs[label] = {"path": str(path), "sha256": sha256_file(path)}
    metrics, outputs = COMMANDS[args.command](flat, out, inputs)
    manifest = {"tool": "pointtrack", "version": __version__, "command": args.command,
                "config": flat, "inputs": inputs,
                "outputs": {k: {"path": str(p), "sha256": sha256_file(p)} for k, p in outputs.items()},
                "metrics": metrics}
    if args.manifest:
        before = json.loads(Path(args.manifest).read_text())
        _check_inputs(before.get("inputs", {}), inputs)
        same = json.dumps(before.get("metrics"), sort_keys=True) == json.dumps(metrics, sort_keys=True)
        manifest["reproduces"] = {"manifest": str(args.manifest), "metrics_identical": same}
        print(f"reproduced,{'yes' if same else 'no'}")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def _check_inputs(recorded, current):
    for k, v in recorded.items():
        if k in ("config", "synthetic_spec", "manifest"):
            continue
        if k in current and current[k]["sha256"] != v["sha256"]:
            log.warning("input %s changed since the manifest was written", k)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run_command(args)
    except UsageError as e:
        print(f"pointtrack {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EmptyInputError, dataio.FormatError) as e:
        print(f"pointtrack {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except T.NumericalAbort as e:
        out = Path(args.out or Path("runs") / args.command)
        (out / "abort.json").write_text(json.dumps(e.diagnostics, indent=1, default=str) + "\n")
        print(f"pointtrack {args.command}: numerical abort: {e} (diagnostics in {out / 'abort.json'})",
              file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
