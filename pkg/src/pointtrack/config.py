"""Run configuration: network constants, training schedule, key-value files.

Every default is the value used in the original tracker description;
``desk_preset`` shrinks widths and point counts so that CPU-only training
finishes in minutes.

Config file format: one ``key = value`` per line, ``#`` starts a comment,
keys are dotted (``net.hidden``, ``train.epochs``, ``synth.num_tracklets``).
Values are parsed as JSON when possible, otherwise kept as strings; tuples
may be written as JSON lists.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

TSFA_VARIANTS = ("default", "no_template_features", "no_similarity", "search_features_A", "search_features_B")
TARGETNESS_MODES = ("default", "no_concat", "no_branch")
TEMPLATE_MODES = ("first_gt", "previous_result", "first_and_previous", "all_previous")


@dataclass
class NetConfig:
    n_template: int = 512
    n_search: int = 1024
    sa_radii: tuple = (0.3, 0.5, 0.7)
    sa_max_k: int = 32
    sa_widths: tuple = ((64, 64, 128), (128, 128, 256), (256, 256, 256))
    hidden: int = 256
    tsfa_variant: str = "default"
    targetness: str = "default"
    proposals: int = 64
    cluster_radius: float = 0.3
    cluster_max_k: int = 32
    shared_backbone: bool = True
    vote_position: bool = True

    def __post_init__(self):
        self.sa_radii = tuple(float(r) for r in self.sa_radii)
        self.sa_widths = tuple(tuple(int(w) for w in ws) for ws in self.sa_widths)
        if self.tsfa_variant not in TSFA_VARIANTS:
            raise ValueError(f"unknown tsfa variant {self.tsfa_variant!r}; choose from {TSFA_VARIANTS}")
        if self.targetness not in TARGETNESS_MODES:
            raise ValueError(f"unknown targetness mode {self.targetness!r}; choose from {TARGETNESS_MODES}")

    @property
    def feature_dim(self):
        return self.sa_widths[-1][-1]

    @property
    def template_seeds(self):
        return self.n_template // 8

    @property
    def search_seeds(self):
        return self.n_search // 8


@dataclass
class LossWeights:
    cla: float = 0.2
    prop: float = 1.5
    box: float = 0.2


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_decay: float = 5.0
    lr_decay_every: int = 10
    batch_size: int = 32
    epochs: int = 40
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    reg_norm: str = "l1"
    search_offset: float = 0.3
    search_heading_offset_deg: float = 5.0
    template_offset: float = 0.3
    template_heading_offset_deg: float = 5.0
    search_enlarge: float = 2.0
    select_by: str = "validation"
    max_steps: int = 0

    def lr_at(self, epoch):
        """Learning rate for a 1-based epoch number."""
        return self.lr / self.lr_decay ** ((epoch - 1) // self.lr_decay_every)


@dataclass
class TrackConfig:
    template_mode: str = "first_and_previous"
    search_enlarge: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.template_mode not in TEMPLATE_MODES:
            raise ValueError(f"unknown template mode {self.template_mode!r}; choose from {TEMPLATE_MODES}")


def desk_preset() -> tuple[NetConfig, TrainConfig]:
    """Reduced network and schedule for single-core CPU experiments."""
    net = NetConfig(n_template=256, n_search=512, sa_max_k=16,
                    sa_widths=((32, 32, 64), (64, 64, 64), (64, 64, 64)),
                    hidden=64, proposals=64, cluster_max_k=16)
    train = TrainConfig(batch_size=8, epochs=36, lr_decay_every=24,
                        search_offset=0.8, search_heading_offset_deg=10.0,
                        template_offset=0.3, template_heading_offset_deg=5.0)
    return net, train


def _coerce(value: str):
    try:
        return json.loads(value)
    except (json.JSONDecodeError, ValueError):
        low = value.lower()
        if low in ("true", "false"):
            return low == "true"
        return value


def parse_kv(text: str) -> dict:
    """Parse ``key = value`` lines into a flat dict of dotted keys."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(value)
    return out


def dump_kv(flat: dict) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in sorted(flat.items()))


def apply_overrides(obj, flat: dict, prefix: str):
    """Return a copy of dataclass ``obj`` with ``prefix.*`` keys applied."""
    names = {f.name for f in fields(obj)}
    changes = {}
    for key, value in flat.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1:]
        if name.startswith("weights.") and prefix == "train":
            w = changes.get("weights", obj.weights)
            changes["weights"] = replace(w, **{name.split(".", 1)[1]: float(value)})
            continue
        if name not in names:
            raise ValueError(f"unknown config key {key!r}")
        changes[name] = value
    return replace(obj, **changes)


def flatten(prefix: str, obj) -> dict:
    out = {}
    for k, v in asdict(obj).items():
        if isinstance(v, dict):
            for k2, v2 in v.items():
                out[f"{prefix}.{k}.{k2}"] = v2
        else:
            out[f"{prefix}.{k}"] = list(v) if isinstance(v, tuple) else v
    return json.loads(json.dumps(out))


def net_from_dict(d: dict) -> NetConfig:
    return NetConfig(**d)
