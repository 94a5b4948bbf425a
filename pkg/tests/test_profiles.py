import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gradnap import netcore, profiles
from gradnap.data import Dataset
from gradnap.errors import ConfigError
from gradnap.netcore import ArchitectureSpec
from gradnap.profiles import AlignedWindow, GroupOccurrence, NAPAccumulator

small = st.floats(-10, 10, allow_nan=False)


def windows(arrs):
    return [AlignedWindow(l, a, g) for l, (a, g) in enumerate(arrs)]


class TestOccurrences:
    def test_runs(self):
        labels = [0, 0, 1, 1, 1, 0]
        logits = np.zeros((2, 6))
        logits[1, 3] = 5.0
        occ = profiles.find_occurrences(labels, logits)
        assert [(o.label, o.start, o.stop, o.output_frame) for o in occ] == [
            (0, 0, 2, 0), (1, 2, 5, 3), (0, 5, 6, 5)]

    def test_tie_takes_earliest(self):
        occ = profiles.find_occurrences([2, 2, 2], np.ones((3, 3)))
        assert occ[0].output_frame == 0

    def test_target_is_predicted_class(self):
        occ = profiles.find_occurrences([0, 0], np.zeros((2, 2)), predicted=[1, 0])
        assert occ[0].target_class == 1

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=30))
    def test_runs_partition_sequence(self, labels):
        logits = np.random.default_rng(len(labels)).normal(size=(4, len(labels)))
        occ = profiles.find_occurrences(labels, logits)
        assert occ[0].start == 0 and occ[-1].stop == len(labels)
        for a, b in zip(occ, occ[1:]):
            assert a.stop == b.start and a.label != b.label
        for o in occ:
            assert set(labels[o.start:o.stop]) == {o.label}
            seg = logits[o.label, o.start:o.stop]
            assert o.output_frame == o.start + int(np.flatnonzero(seg == seg.max())[0])


class TestAlignment:
    def test_half_widths(self):
        spec = ArchitectureSpec.build(1, [dict(out_channels=1, kernel=3, stride=2),
                                          dict(out_channels=1, kernel=3, stride=2)])
        assert profiles.half_widths(spec, 11) == [5, 2, 1]
        assert profiles.half_widths(spec, 10) == [5, 2, 1]  # forced odd

    def test_scores(self):
        act = np.array([[1.0, 2.0], [3.0, -1.0]])
        grad = np.array([[-1.0, 1.0], [1.0, 2.0]])
        np.testing.assert_array_equal(profiles.alignment_scores(act, grad, "sum"), [4.0, 0.0])
        np.testing.assert_array_equal(profiles.alignment_scores(act, grad, "max"), [3.0, 2.0])

    def test_matches_brute_force(self, toy):
        spec, w, ds = toy
        ex = ds.examples[0]
        trace = netcore.forward(spec, w, ex.spectrogram)
        window = netcore.receptive_field(spec, spec.num_layers).size
        for occ in profiles.find_occurrences(np.argmax(trace.logits, 0), trace.logits):
            sens = netcore.backward_onehot(spec, w, trace, occ.target_class, occ.output_frame)
            got = profiles.align_occurrence(spec, trace, sens, occ, window)
            halves = profiles.half_widths(spec, window)
            expected, crosses = [], False
            for l in range(spec.num_layers + 1):
                lo, hi = netcore.cone(spec, l, spec.num_layers, occ.output_frame)
                best, best_t = None, None
                for t in range(lo, hi):
                    if l == 0:
                        s = sum(abs(sens.grads[0][c, t]) for c in range(spec.input_bins))
                    else:
                        s = sum(abs(sens.grads[l][c, t]) * trace.act[l][c, t] for c in range(spec.channels(l)))
                    if best is None or s > best:
                        best, best_t = s, t
                crosses |= best_t - halves[l] < 0 or best_t + halves[l] >= trace.act[l].shape[1]
                expected.append(best_t)
            if crosses:
                assert got is None
            else:
                assert occ.centers == expected
                for l, win in enumerate(got):
                    t = expected[l]
                    np.testing.assert_array_equal(win.activation, trace.act[l][:, t - halves[l]:t + halves[l] + 1])

    def test_center_lies_in_cone(self, toy):
        spec, w, ds = toy
        trace = netcore.forward(spec, w, ds.examples[1].spectrogram)
        occ = GroupOccurrence(1, 0, 10, 11, 10, 0)
        sens = netcore.backward_onehot(spec, w, trace, 0, 10)
        if profiles.align_occurrence(spec, trace, sens, occ, 3) is not None:
            for l, t in enumerate(occ.centers):
                lo, hi = netcore.cone(spec, l, spec.num_layers, 10)
                assert lo <= t < hi


class TestAccumulator:
    def test_mean(self):
        acc = NAPAccumulator([(1, 2)])
        acc.add(windows([(np.array([[1.0, 2.0]]), np.array([[-1.0, 1.0]]))]))
        acc.add(windows([(np.array([[3.0, 0.0]]), np.array([[1.0, 1.0]]))]))
        np.testing.assert_array_equal(acc.mean_activation(0), [[2.0, 1.0]])
        np.testing.assert_array_equal(acc.abs_grad[0] / acc.count, [[1.0, 1.0]])
        np.testing.assert_array_equal(acc.grad[0] / acc.count, [[0.0, 1.0]])

    def test_opposite_windows_cancel(self):
        a = np.array([[1.5, -2.0, 4.0]])
        acc = NAPAccumulator([(1, 3)]).add(windows([(a, a)])).add(windows([(-a, -a)]))
        np.testing.assert_array_equal(acc.mean_activation(0), 0)
        np.testing.assert_array_equal(acc.grad[0], 0)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            NAPAccumulator([(1, 3)]).add(windows([(np.zeros((1, 2)), np.zeros((1, 2)))]))

    @given(st.lists(st.tuples(arrays(np.float64, (2, 3), elements=small),
                              arrays(np.float64, (2, 3), elements=small)), min_size=1, max_size=8),
           st.randoms())
    def test_order_invariant(self, items, rnd):
        a = NAPAccumulator([(2, 3)])
        for x in items:
            a.add(windows([x]))
        shuffled = list(items)
        rnd.shuffle(shuffled)
        b = NAPAccumulator([(2, 3)])
        for x in shuffled:
            b.add(windows([x]))
        np.testing.assert_allclose(a.mean_activation(0), b.mean_activation(0), atol=1e-12)
        np.testing.assert_allclose(a.abs_grad[0], b.abs_grad[0], atol=1e-12)


def acc_of(items, shape):
    acc = NAPAccumulator([shape])
    for a, g in items:
        acc.add(windows([(a, g)]))
    return acc


class TestFinalize:
    def test_self_baseline_is_zero(self):
        rng = np.random.default_rng(0)
        items = [(rng.normal(size=(3, 5)), rng.normal(size=(3, 5))) for _ in range(4)]
        acc = acc_of(items, (3, 5))
        nap = profiles.finalize("g", acc, acc)[0]
        assert np.max(np.abs(nap.values)) < 1e-9

    def test_constant_gradient_gives_unit_mask(self):
        a = np.arange(6.0).reshape(2, 3)
        group = acc_of([(a, np.full((2, 3), -2.0))], (2, 3))
        base = acc_of([(np.zeros((2, 3)), np.zeros((2, 3)))], (2, 3))
        nap = profiles.finalize("g", group, base)[0]
        np.testing.assert_array_equal(nap.mask, 1.0)
        np.testing.assert_array_equal(nap.values, a)

    def test_minmax_mask(self):
        g = np.array([[-1.0, 0.0, 3.0]])
        mask, degenerate = profiles.gradient_mask(np.abs(g), g, "minmax")
        np.testing.assert_array_equal(mask, [[0.0, 0.25, 1.0]])
        assert not degenerate

    def test_all_zero_gradient_is_degenerate(self):
        z = np.zeros((1, 3))
        nap = profiles.finalize("g", acc_of([(np.ones((1, 3)), z)], (1, 3)),
                                acc_of([(z, z)], (1, 3)))[0]
        assert nap.degenerate
        np.testing.assert_array_equal(nap.values, 0.0)

    @given(st.lists(st.tuples(arrays(np.float64, (2, 4), elements=small),
                              arrays(np.float64, (2, 4), elements=small)), min_size=1, max_size=5),
           st.lists(st.tuples(arrays(np.float64, (2, 4), elements=small),
                              arrays(np.float64, (2, 4), elements=small)), min_size=1, max_size=5))
    def test_oracle_and_mask_range(self, group_items, other_items):
        group = acc_of(group_items, (2, 4))
        base = acc_of(group_items + other_items, (2, 4))
        nap = profiles.finalize("g", group, base)[0]
        abs_mean = np.mean([np.abs(g) for _, g in group_items], axis=0)
        diff = np.mean([a for a, _ in group_items], axis=0) - np.mean([a for a, _ in group_items + other_items], axis=0)
        mask = abs_mean / abs_mean.max() if abs_mean.max() > 0 else np.zeros_like(abs_mean)
        assert np.all((0 <= nap.mask) & (nap.mask <= 1))
        np.testing.assert_allclose(nap.values, diff * mask, atol=1e-9)
        assert np.all(nap.values[abs_mean == 0] == 0.0)


@pytest.fixture(scope="module")
def result(toy):
    spec, w, ds = toy
    return profiles.run_pipeline(spec, w, ds)


class TestPipeline:
    def test_shapes(self, toy, result):
        spec, _, ds = toy
        rf = netcore.receptive_field(spec, spec.num_layers).size
        assert result.groups == ["a", "b", "c"]
        for naps in result.gradnaps.values():
            assert len(naps) == spec.num_layers + 1
            for l, nap in enumerate(naps):
                h = profiles.half_widths(spec, rf)[l]
                assert nap.values.shape == (spec.channels(l), 2 * h + 1)
                assert nap.layer == l
        assert result.baseline_count == len(result.occurrences)
        assert sum(n[0].count for n in result.gradnaps.values()) == result.baseline_count

    def test_input_profile_marks_class_band(self, toy, result):
        spec, _, ds = toy
        for c, cls in enumerate(ds.class_specs):
            v = result.gradnaps[cls.name][0].values
            pos = np.clip(v, 0, None).sum(axis=1)
            center = cls.bands[0][0]
            near = pos[max(center - 3, 0):center + 4].sum()
            assert near / pos.sum() >= 0.6

    def test_deterministic_and_worker_independent(self, toy, result):
        spec, w, ds = toy
        again = profiles.run_pipeline(spec, w, ds, workers=3)
        for g in result.groups:
            for a, b in zip(result.gradnaps[g], again.gradnaps[g]):
                assert a.values.tobytes() == b.values.tobytes()

    def test_example_permutation(self, toy, result):
        spec, w, ds = toy
        perm = np.random.default_rng(0).permutation(len(ds.examples))
        shuffled = Dataset([ds.examples[i] for i in perm], ds.class_names, ds.mean, ds.std, ds.class_specs)
        other = profiles.run_pipeline(spec, w, shuffled)
        for g in result.groups:
            for a, b in zip(result.gradnaps[g], other.gradnaps[g]):
                np.testing.assert_allclose(a.values, b.values, atol=1e-12)

    def test_duplication(self, toy, result):
        spec, w, ds = toy
        doubled = Dataset(ds.examples * 2, ds.class_names, ds.mean, ds.std, ds.class_specs)
        other = profiles.run_pipeline(spec, w, doubled)
        for g in result.groups:
            for a, b in zip(result.gradnaps[g], other.gradnaps[g]):
                assert b.count == 2 * a.count
                np.testing.assert_allclose(a.values, b.values, atol=1e-12)

    def test_true_label_grouping_and_silence(self, toy):
        spec, w, ds = toy
        res = profiles.run_pipeline(spec, w, ds, grouping="by_true_label", include_silence=True)
        assert res.groups == ["a", "b", "c", "sil"]

    def test_group_map_merges(self, toy, result):
        spec, w, ds = toy
        res = profiles.run_pipeline(spec, w, ds, group_map={"a": "ab", "b": "ab"})
        assert res.groups == ["ab", "c"]
        assert res.gradnaps["ab"][0].count == result.gradnaps["a"][0].count + result.gradnaps["b"][0].count

    def test_bad_options(self, toy):
        spec, w, ds = toy
        with pytest.raises(ConfigError):
            profiles.run_pipeline(spec, w, ds, grouping="by_magic")
        with pytest.raises(ConfigError):
            profiles.run_pipeline(spec, w, ds, reduction="mean")
