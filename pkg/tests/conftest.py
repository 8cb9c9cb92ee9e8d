import numpy as np
import pytest

from pointtrack.config import NetConfig, TrainConfig
from pointtrack.dataio import SynthSpec, generate_dataset
from pointtrack.model import TrackerNet
from pointtrack.pcops import Box3D


def tiny_net(**kw):
    base = dict(n_template=64, n_search=128, sa_widths=((8, 8, 8), (8, 8, 8), (8, 8, 8)), hidden=8,
                proposals=8, sa_max_k=8, cluster_max_k=8)
    base.update(kw)
    return NetConfig(**base)


def tiny_train(**kw):
    base = dict(batch_size=8, epochs=1)
    base.update(kw)
    return TrainConfig(**base)


def pinned_pipeline_loss(seed=0):
    """Tiny batch (8 template / 16 search points) with every random draw
    pinned; GT centers sit near the first cluster centroid so that all four
    loss terms are active."""
    rng = np.random.default_rng(seed)
    cfg = tiny_net(n_template=8, n_search=16, sa_widths=((4, 4), (4, 4), (4, 5)), hidden=4,
                   proposals=2, sa_max_k=4, cluster_max_k=4, cluster_radius=1.0)
    net = TrackerNet(cfg)
    store = net.init(seed + 1)
    tpl = rng.uniform(-1, 1, (2, 8, 3))
    srch = rng.uniform(-1.5, 1.5, (2, 16, 3))
    pinned = {"template": [np.stack([np.random.default_rng([9, b, i]).permutation(n)[:n // 2]
                                     for b in range(2)]) for i, n in enumerate((8, 4, 2))],
              "search": [np.stack([np.random.default_rng([8, b, i]).permutation(n)[:n // 2]
                                   for b in range(2)]) for i, n in enumerate((16, 8, 4))]}
    probe = net.forward(store, tpl, srch, [np.random.default_rng(s) for s in (5, 6)], pinned=pinned)
    pinned["cluster"] = probe.clusters.centroid_idx
    c = probe.clusters.centroids.data
    gts = [Box3D(c[b, 0] + [0.1, 0.05, -0.07], [2.5, 3.0, 3.0], 0.3 * (1 - 2 * b)) for b in range(2)]

    def loss(st):
        out = net.forward(st, tpl, srch, None, training=True, pinned=pinned)
        return net.losses(out, gts)[0]
    return loss, store


@pytest.fixture
def tiny_data():
    spec = SynthSpec(num_frames=4, clutter=300)
    return generate_dataset(spec, 3, seed=1), generate_dataset(spec, 2, seed=2)


TINY_CFG = """\
# tiny network for smoke tests
net.n_template = 64
net.n_search = 128
net.sa_widths = [[8, 8, 8], [8, 8, 8], [8, 8, 8]]
net.hidden = 8
net.proposals = 8
net.sa_max_k = 8
net.cluster_max_k = 8
train.batch_size = 8
train.epochs = 1
"""

SYNTH_CFG = """\
run.synth_train = 3
run.synth_val = 2
run.synth_test = 2
synth.num_frames = 4
synth.clutter = 300
"""


@pytest.fixture
def cfg_files(tmp_path):
    (tmp_path / "tiny.cfg").write_text(TINY_CFG)
    (tmp_path / "synth.cfg").write_text(SYNTH_CFG)
    return tmp_path / "tiny.cfg", tmp_path / "synth.cfg"


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
