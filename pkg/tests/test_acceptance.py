"""Acceptance criteria, each at its stated tolerance.

A PASS/FAIL line per criterion is printed in the terminal summary (see conftest).
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from gradnap import cli, clustering, export, netcore, profiles, respviz
from gradnap.netcore import LossSpec

from conftest import fd_logit, naive_complete_linkage, partition, random_input, random_model, rel_err, silhouette_oracle

CONFIG = Path(__file__).parent / "data" / "acceptance.ini"
BAND_CENTERS = {"a": 6, "b": 16, "c": 25}  # from acceptance.ini


def criterion(number, title):
    return pytest.mark.criterion(number, title)


# -- 1 ------------------------------------------------------------------------

def _input_fd(spec, w, x, loss_spec, idx, h=1e-5):
    """Central difference of the input-optimization loss; None across a relu or |x| kink."""
    if abs(x[idx]) < 10 * h:
        return None
    xp, xm = x.copy(), x.copy()
    xp[idx] += h
    xm[idx] -= h
    tp, tm = netcore.forward(spec, w, xp, upto=loss_spec.layer), netcore.forward(spec, w, xm, upto=loss_spec.layer)
    for zp, zm in zip(tp.pre[1:], tm.pre[1:]):
        if not np.array_equal(zp > 0, zm > 0):
            return None
    return (netcore.loss_and_grad(spec, w, xp, loss_spec)[0] - netcore.loss_and_grad(spec, w, xm, loss_spec)[0]) / (2 * h)


@criterion(1, "gradient correctness on 50 random models")
def test_gradients_match_finite_differences():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, checked = 0.0, 0
    for _ in range(50):
        spec, w = random_model(rng)
        x = random_input(rng, spec)
        tr = netcore.forward(spec, w, x)
        c = int(rng.integers(tr.logits.shape[0]))
        t = int(rng.integers(tr.logits.shape[1]))
        sens = netcore.backward_onehot(spec, w, tr, c, t)
        for l in range(spec.num_layers):
            for pos in np.ndindex(tr.act[l].shape):
                n = fd_logit(spec, w, l, tr.act[l], pos, c, t)
                if n is not None:
                    worst = max(worst, rel_err(sens.grads[l][pos], n))
                    checked += 1

        layer = int(rng.integers(1, spec.num_layers + 1))
        rf = netcore.receptive_field(spec, layer).size
        xin = rng.normal(size=(spec.input_bins, rf))
        channels = spec.channels(layer)
        picks = rng.choice(channels, size=min(3, channels), replace=False)
        ls = LossSpec(layer, [(int(n), int(rng.choice([-1, 1]))) for n in picks],
                      l1=float(rng.uniform(0, 1)), l2=float(rng.uniform(0, 1)))
        g = netcore.grad_wrt_input(spec, w, xin, ls)
        for idx in np.ndindex(xin.shape):
            n = _input_fd(spec, w, xin, ls, idx)
            if n is not None:
                worst = max(worst, rel_err(g[idx], n))
                checked += 1
    elapsed = time.perf_counter() - t0
    print(f"max relative error {worst:.3e} over {checked} entries in {elapsed:.1f}s")
    assert checked > 1000
    assert worst < 1e-4
    assert elapsed < 60


# -- 2 ------------------------------------------------------------------------

@criterion(2, "responsiveness exactness and top-k scaling invariance")
def test_responsiveness_exact():
    rng = np.random.default_rng(7)
    rows = rng.normal(size=(1000, 9)) * rng.uniform(0.01, 10, size=(1000, 1))
    r = respviz.responsiveness(rows)
    for i, row in enumerate(rows):
        total = sum(float(v) for v in row)
        sign = 1.0 if total > 0 else -1.0 if total < 0 else 0.0
        assert abs(r[i] - sign * sum(abs(float(v)) for v in row)) < 1e-12

    for _ in range(50):
        m = rng.normal(size=(16, 7))
        base = respviz.top_responsive(respviz.responsiveness(m), 5)
        for c in (0.25, 2.0, 1e3, 0.37, 17.0):
            assert respviz.top_responsive(respviz.responsiveness(c * m), 5) == base


# -- 3, 4 -----------------------------------------------------------------------

@criterion(3, "self-baseline nullity")
def test_single_group_is_null(toy):
    spec, w, ds = toy
    everything = {name: "all" for name in ds.class_names}
    res = profiles.run_pipeline(spec, w, ds, group_map=everything)
    assert res.groups == ["all"]
    worst = max(float(np.max(np.abs(nap.values))) for nap in res.gradnaps["all"])
    assert worst < 1e-9


@criterion(4, "zero-gradient entries are exactly zero")
def test_zero_gradient_masking(toy):
    spec, w, ds = toy
    cut = w.copy()
    cut.kernels[1][:, 0, :] = 0.0  # layer-1 channel 0 no longer reaches the output
    res = profiles.run_pipeline(spec, cut, ds)
    diffs = _activation_differences(spec, cut, ds, res.window_input)
    for g, naps in res.gradnaps.items():
        assert np.all(naps[1].mask[0] == 0.0)
        assert np.all(naps[1].values[0] == 0.0)
        assert np.any(diffs[g][0] != 0.0)  # the zeros come from the mask, not from equal means
        for nap in naps:
            assert np.all(nap.values[nap.mask == 0] == 0.0)


def _activation_differences(spec, w, ds, window):
    """Layer-1 group-mean minus overall-mean activations, straight from the aligned windows."""
    opts = {"grouping": "by_predicted", "exclude": {ds.silence_index}, "mode": "logit",
            "window": window, "reduction": "sum"}
    per_group = {}
    for i, ex in enumerate(ds.examples):
        found, _ = profiles._example_windows(spec, w, ex, i, opts)
        for occ, windows in found:
            per_group.setdefault(ds.label_name(occ.label), []).append(windows[1].activation)
    overall = np.mean([a for acts in per_group.values() for a in acts], axis=0)
    return {g: np.mean(acts, axis=0) - overall for g, acts in per_group.items()}


# -- 5 ------------------------------------------------------------------------

@criterion(5, "clustering oracle equivalence on 200 instances")
def test_clustering_oracles():
    rng = np.random.default_rng(99)
    for _ in range(200):
        n = int(rng.integers(2, 13))
        dim = int(rng.integers(1, 6))
        items = [rng.normal(size=(1, dim)) for _ in range(n)]
        dm = clustering.pairwise_distances(items)
        sq = dm.square()
        tree = clustering.complete_linkage(dm)
        ref = naive_complete_linkage(sq)
        assert [(m.left, m.right) for m in tree.merges] == [(a, b) for a, b, _ in ref]
        assert max(abs(m.height - d) for m, (_, _, d) in zip(tree.merges, ref)) < 1e-9
        for t in clustering.percentile_thresholds(dm):
            members = {i: {i} for i in range(n)}
            live = {i: {i} for i in range(n)}
            for k, (a, b, d) in enumerate(ref):
                members[n + k] = members[a] | members[b]
                if d <= t:
                    del live[a], live[b]
                    live[n + k] = members[n + k]
            labels = clustering.cut_tree(tree, t)
            assert partition(labels) == {frozenset(s) for s in live.values()}
            k = len(set(labels))
            if 2 <= k <= n - 1:
                assert abs(clustering.silhouette(dm, labels) - silhouette_oracle(sq, list(labels))) < 1e-9
            else:
                with pytest.raises(clustering.UndefinedScore):
                    clustering.silhouette(dm, labels)


# -- 6 to 9: end to end on acceptance.ini ---------------------------------------------

@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    out = []
    for name in ("first", "second"):
        t0 = time.perf_counter()
        assert cli.main(["run-all", "--config", str(CONFIG), "--out", str(root / name)]) == 0
        out.append((root / name, time.perf_counter() - t0))
    return out


def _manifest(run):
    return json.loads((run / "manifest.json").read_text())


@criterion(6, "toy model accuracy and input-layer band localization")
def test_end_to_end_bands(runs):
    run, _ = runs[0]
    m = _manifest(run)
    print(f"frame accuracy {m['counters']['frame_accuracy']:.4f}, training {m['timings']['train']:.1f}s")
    assert m["counters"]["frame_accuracy"] >= 0.95
    assert m["timings"]["train"] < 300
    for cls, center in BAND_CENTERS.items():
        v = export.read_matrix_csv(run / "gradnap" / f"{cls}_L0.csv")
        pos = np.clip(v, 0, None).sum(axis=1)
        share = pos[max(center - 3, 0):center + 4].sum() / pos.sum()
        print(f"class {cls}: {share:.3f} of positive input mass within 3 bins of {center}")
        assert share >= 0.6


@criterion(7, "optimal input for layer 2 hits the class band with the fixed hyperparameters")
def test_feature_visualization(runs):
    run, _ = runs[0]
    m = _manifest(run)
    rf2 = 1 + (5 - 1) * 1 + (5 - 1) * 1  # kernels 5, 5; stride before layer 2 is 1
    for cls, center in BAND_CENTERS.items():
        key = f"{cls}_L2"
        doc = json.loads((run / "featviz" / key / "featviz.json").read_text())
        assert len(doc["neurons"]) <= 5
        print(f"{key}: argmax bin {doc['argmax_bin']} (band {center}), loss {doc['initial_loss']:.4g} -> "
              f"{doc['final_loss']:.4g}")
        assert abs(doc["argmax_bin"] - center) <= 3
        assert doc["final_loss"] < doc["initial_loss"]
        h = m["hyperparameters"]["featviz"][key]
        assert h["lr"] == 0.05 and h["steps"] == 16 and h["init_std"] == 0.001
        assert h["receptive_field"] == rf2
        assert h["l1"] == pytest.approx(15 / rf2, rel=1e-15)
        assert h["l2"] == pytest.approx(0.1 / rf2, rel=1e-15)


@criterion(8, "silhouette report shape")
def test_silhouette_report(runs):
    for run, _ in runs:
        doc = json.loads((run / "report" / "clustering" / "silhouette.json").read_text())
        assert [ls["layer"] for ls in doc["layers"]] == [0, 1, 2, 3]
        for ls in doc["layers"]:
            assert [t["percentile"] for t in ls["thresholds"]] == [75, 80, 85, 90, 95]
            defined = [t["score"] for t in ls["thresholds"] if t["score"] is not None]
            assert ls["mean"] == (pytest.approx(float(np.mean(defined))) if defined else None)
            ks = [t["clusters"] for t in ls["thresholds"]]
            assert all(a >= b for a, b in zip(ks, ks[1:]))


@criterion(9, "run-all reproducibility")
def test_reproducible(runs):
    (a, _), (b, _) = runs
    da, db = export.digest_tree(a), export.digest_tree(b)
    assert da == db
    assert _manifest(a)["outputs"] == _manifest(b)["outputs"]
