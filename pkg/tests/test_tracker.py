import numpy as np
import pytest
from conftest import pinned_pipeline_loss, tiny_net, tiny_train

from pointtrack import tracker as T
from pointtrack.config import TrackConfig, TrainConfig
from pointtrack.dataio import SynthSpec, Tracklet, generate_synthetic_tracklet
from pointtrack.gradcheck import check_store


def test_lr_schedule():
    cfg = TrainConfig()
    assert cfg.lr_at(1) == 0.001 and cfg.lr_at(10) == 0.001
    assert cfg.lr_at(11) == pytest.approx(0.0002)
    assert cfg.lr_at(21) == pytest.approx(0.00004)


def test_training_is_deterministic(tiny_data):
    train, _ = tiny_data
    a = T.train(train, tiny_net(), tiny_train(epochs=2))
    b = T.train(train, tiny_net(), tiny_train(epochs=2))
    assert a.history == b.history
    assert all(np.array_equal(a.store[k].data, b.store[k].data) for k in a.store.params)


def test_training_log_records(tiny_data, tmp_path):
    import json
    train, val = tiny_data
    with open(tmp_path / "log.jsonl", "w") as f:
        res = T.train(train, tiny_net(), tiny_train(epochs=2), val, f)
    recs = [json.loads(line) for line in open(tmp_path / "log.jsonl")]
    assert {"epoch", "step", "lr", "reg", "cla", "prop", "box", "total"} <= set(recs[0])
    assert res.best_epoch in (1, 2) and "val_success" in res.history[0]


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        T.train([], tiny_net(), tiny_train())


def test_numerical_abort_carries_diagnostics(tiny_data):
    train, _ = tiny_data
    cfg = tiny_train(lr=float("nan"), epochs=2)
    with pytest.raises(T.NumericalAbort) as info:
        T.train(train, tiny_net(), cfg)
    d = info.value.diagnostics
    assert "batch" in d and "epoch" in d and "total" in d


@pytest.mark.parametrize("mode", ["no_branch", "no_concat"])
def test_targetness_switches_still_train(tiny_data, mode):
    train, _ = tiny_data
    res = T.train(train, tiny_net(targetness=mode), tiny_train())
    assert np.isfinite(res.history[-1]["total"])
    if mode == "no_branch":
        assert res.history[-1]["cla"] == 0.0
        assert not any(k.startswith("seedcls") for k in res.store.params)


@pytest.mark.parametrize("variant", ["no_template_features", "no_similarity", "search_features_A",
                                     "search_features_B"])
def test_tsfa_variants_train(tiny_data, variant):
    train, _ = tiny_data
    res = T.train(train, tiny_net(tsfa_variant=variant), tiny_train(max_steps=1))
    assert np.isfinite(res.history[-1]["total"])


def test_full_pipeline_gradient_check():
    loss, store = pinned_pipeline_loss()
    worst, per = check_store(loss, store)
    assert worst < 1e-4, sorted(per.items(), key=lambda kv: -kv[1])[:3]


def test_track_protocol(tiny_data):
    train, test = tiny_data
    store = T.train(train, tiny_net(), tiny_train(max_steps=1)).store
    tr = test[0]
    res = T.track(store, tiny_net(), tr, tr.boxes[0])
    assert res.boxes[0] is tr.boxes[0]
    assert len(res.boxes) == len(tr) == len(res.timings)
    assert all(len(t) == 3 and min(t) >= 0 for t in res.timings)
    assert all(sum(t) > 0 for t in res.timings[1:])


def test_track_has_no_lookahead(tiny_data):
    train, test = tiny_data
    store = T.train(train, tiny_net(), tiny_train(max_steps=1)).store
    tr = test[0]
    full = T.track(store, tiny_net(), tr, tr.boxes[0], rng=3)
    cut = Tracklet(tr.boxes[:2] + [tr.boxes[0]] * 2, tr.frames[:2] + [np.zeros((5, 3))] * 2)
    part = T.track(store, tiny_net(), cut, tr.boxes[0], rng=3)
    np.testing.assert_array_equal(full.boxes[1].as_array(), part.boxes[1].as_array())


def test_track_search_starvation_reports_previous_box(tiny_data):
    train, _ = tiny_data
    store = T.train(train, tiny_net(), tiny_train(max_steps=1)).store
    tr = generate_synthetic_tracklet(SynthSpec(num_frames=3, clutter=100), 4)
    tr.frames[1] = tr.cloud(1) + 1000.0
    res = T.track(store, tiny_net(), tr, tr.boxes[0])
    assert res.flags[1] == "search_starved"
    assert res.boxes[1] is res.boxes[0]


def test_track_template_fallback(tiny_data):
    train, _ = tiny_data
    store = T.train(train, tiny_net(), tiny_train(max_steps=1)).store
    tr = generate_synthetic_tracklet(SynthSpec(num_frames=3, clutter=100), 4)
    tr.frames[1] = tr.cloud(1)[128:]  # target vanishes in frame 1
    res = T.track(store, tiny_net(), tr, tr.boxes[0], TrackConfig(template_mode="previous_result"))
    assert res.flags[2] in ("template_fallback", "")
    assert len(res.boxes) == 3


def test_result_file_round_trip(tiny_data, tmp_path):
    tr = tiny_data[1][0]
    res = T.TrackResult(list(tr.boxes), [(1.0, 2.0, 3.0)] * len(tr), [""] * len(tr))
    T.write_track_result(res, tmp_path / "r.csv")
    back = T.read_track_result(tmp_path / "r.csv")
    for a, b in zip(res.boxes, back.boxes):
        np.testing.assert_array_equal(a.as_array(), b.as_array())
    assert back.timings[0] == (1.0, 2.0, 3.0)


def test_baselines(tiny_data):
    tr = tiny_data[1][0]
    assert all(b is tr.boxes[0] for b in T.static_baseline(tr))
    prev = T.previous_gt_baseline(tr)
    assert prev[0] is tr.boxes[0] and prev[2] is tr.boxes[1]
    assert T.evaluate_baseline([tr], lambda t: t.boxes).success == pytest.approx(100.0)


def test_evaluation_independent_of_threads(tiny_data):
    train, test = tiny_data
    store = T.train(train, tiny_net(), tiny_train(max_steps=1)).store
    a = T.evaluate_tracklets(store, tiny_net(), test)
    b = T.evaluate_tracklets(store, tiny_net(), test, threads=2)
    assert a.ious == b.ious


def test_ablation_tables(tiny_data):
    train, test = tiny_data
    t = T.run_ablation("targetness", train, test, tiny_net(), tiny_train(max_steps=1))
    assert [r["setting"] for r in t["rows"]] == ["Default setting", "Without concatenation",
                                                 "Without the whole branch"]
    store = T.train(train, tiny_net(), tiny_train(max_steps=1)).store
    k = T.run_ablation("proposal_counts", train, test, tiny_net(proposals=16), tiny_train(), store=store)
    assert 20 not in [r["proposals"] for r in k["rows"]]  # 16 seeds cap the sweep
    assert "K=4" in T.format_table(k)
    with pytest.raises(ValueError):
        T.run_ablation("nope", train, test, tiny_net(), tiny_train())
