"""GradNAP computation: occurrences, alignment, accumulation, normalization and masking.

For every occurrence of a group the network is run forward and the
sensitivity of the predicted class at a representative output frame is
propagated back. Each layer is then cropped around its most
prediction-relevant frame (strong activation with large absolute gradient;
for the input, largest absolute gradient), aligned windows are averaged per
group and over all occurrences, and the group mean minus the overall mean is
weighted by the group's absolute gradient mean scaled to [0, 1].
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import netcore
from .data import Dataset
from .errors import ConfigError, DataError
from .model import output_labels, predict_frames

log = logging.getLogger(__name__)

GROUPINGS = ("by_predicted", "by_true_label")
REDUCTIONS = ("sum", "max")
MASK_MODES = ("absmax", "minmax")


@dataclass
class GroupOccurrence:
    example_id: int
    label: int  # label index of the run
    start: int  # run bounds in output frames, [start, stop)
    stop: int
    output_frame: int  # representative frame
    target_class: int  # predicted class at output_frame (gradient target)
    centers: list = field(default_factory=list)  # aligned t*_l per layer, layer 0 first


@dataclass
class AlignedWindow:
    layer: int
    activation: np.ndarray  # (C_l, W_l)
    gradient: np.ndarray  # (C_l, W_l)


def find_occurrences(labels, logits, predicted=None, example_id: int = 0) -> list[GroupOccurrence]:
    """One occurrence per maximal run of identical labels.

    The representative frame is the one with the largest logit of the run's
    label (earliest on ties); the gradient target is the predicted class at
    that frame.
    """
    labels = np.asarray(labels)
    if predicted is None:
        predicted = labels
    out = []
    n = len(labels)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and labels[stop] == labels[start]:
            stop += 1
        lab = int(labels[start])
        frame = start + int(np.argmax(logits[lab, start:stop]))
        out.append(GroupOccurrence(example_id, lab, start, stop, frame, int(predicted[frame])))
        start = stop
    return out


def half_widths(spec: netcore.ArchitectureSpec, window_input: int) -> list[int]:
    """Per-layer half-widths for an input-frame window (forced odd)."""
    w = window_input if window_input % 2 else window_input + 1
    return [int(np.floor(w / netcore.receptive_field(spec, l).stride / 2))
            for l in range(spec.num_layers + 1)]


def alignment_scores(act: np.ndarray, grad: np.ndarray, reduction: str = "sum") -> np.ndarray:
    prod = np.abs(grad) * act
    return prod.sum(axis=0) if reduction == "sum" else prod.max(axis=0)


def align_occurrence(spec, trace, sens, occurrence: GroupOccurrence, window_input: int, reduction: str = "sum"):
    """Crop every layer around its most relevant frame inside the occurrence's receptive cone.

    Returns one AlignedWindow per layer (input first), or None if any window
    would cross a sequence boundary. Sets ``occurrence.centers``.
    """
    L = spec.num_layers
    halves = half_widths(spec, window_input)
    centers, windows = [], []
    for l in range(L + 1):
        lo, hi = netcore.cone(spec, l, L, occurrence.output_frame)
        g = sens.grads[l]
        a = trace.act[l]
        if l == 0:
            score = np.abs(g[:, lo:hi]).sum(axis=0)
        else:
            score = alignment_scores(a[:, lo:hi], g[:, lo:hi], reduction)
        t = lo + int(np.argmax(score))
        h = halves[l]
        if t - h < 0 or t + h >= a.shape[1]:
            return None
        centers.append(t)
        windows.append(AlignedWindow(l, a[:, t - h:t + h + 1], g[:, t - h:t + h + 1]))
    occurrence.centers = centers
    return windows


class NAPAccumulator:
    """Running per-layer sums of aligned activations, |gradients| and signed gradients."""

    def __init__(self, shapes):
        self.shapes = [tuple(s) for s in shapes]
        self.act = [np.zeros(s) for s in self.shapes]
        self.abs_grad = [np.zeros(s) for s in self.shapes]
        self.grad = [np.zeros(s) for s in self.shapes]
        self.count = 0

    def add(self, windows) -> "NAPAccumulator":
        if len(windows) != len(self.shapes):
            raise ConfigError(f"got {len(windows)} layer windows, accumulator has {len(self.shapes)}")
        for l, w in enumerate(windows):
            if w.activation.shape != self.shapes[l] or w.gradient.shape != self.shapes[l]:
                raise ConfigError(f"layer {l}: window {w.activation.shape} vs accumulator {self.shapes[l]}")
            self.act[l] += w.activation
            self.abs_grad[l] += np.abs(w.gradient)
            self.grad[l] += w.gradient
        self.count += 1
        return self

    def merge(self, other: "NAPAccumulator") -> "NAPAccumulator":
        if other.shapes != self.shapes:
            raise ConfigError("cannot merge accumulators with different window shapes")
        for l in range(len(self.shapes)):
            self.act[l] += other.act[l]
            self.abs_grad[l] += other.abs_grad[l]
            self.grad[l] += other.grad[l]
        self.count += other.count
        return self

    def mean_activation(self, l: int) -> np.ndarray:
        return self.act[l] / self.count


@dataclass
class GradNAP:
    group: str
    layer: int
    values: np.ndarray  # (C_l, W_l)
    count: int
    mask: np.ndarray | None = None
    degenerate: bool = False

    @property
    def width(self) -> int:
        return self.values.shape[1]


def gradient_mask(abs_mean: np.ndarray, signed_mean: np.ndarray | None = None, mode: str = "absmax"):
    """Scale gradients to [0, 1]. Returns (mask, degenerate)."""
    if mode == "absmax":
        top = abs_mean.max()
        if top <= 0:
            return np.zeros_like(abs_mean), True
        return abs_mean / top, False
    if mode == "minmax":
        lo, hi = signed_mean.min(), signed_mean.max()
        if hi <= lo:
            return np.zeros_like(signed_mean), True
        return (signed_mean - lo) / (hi - lo), False
    raise ConfigError(f"unknown mask mode {mode!r}")


def finalize(group: str, group_acc: NAPAccumulator, baseline_acc: NAPAccumulator, mask_mode: str = "absmax"):
    if group_acc.count < 1 or baseline_acc.count < 1:
        raise DataError(f"group {group!r}: no occurrences to average")
    out = []
    for l in range(len(group_acc.shapes)):
        normalized = group_acc.mean_activation(l) - baseline_acc.mean_activation(l)
        mask, degenerate = gradient_mask(
            group_acc.abs_grad[l] / group_acc.count, group_acc.grad[l] / group_acc.count, mask_mode
        )
        out.append(GradNAP(group, l, normalized * mask, group_acc.count, mask, degenerate))
    return out


@dataclass
class PipelineResult:
    gradnaps: dict  # group -> [GradNAP per layer, input first]
    occurrences: list
    skipped: int
    empty_groups: list
    degenerate: list  # (group, layer)
    window_input: int
    baseline_count: int = 0

    @property
    def groups(self) -> list[str]:
        return list(self.gradnaps)


def _example_windows(spec, weights, ex, example_id, opts):
    trace = netcore.forward(spec, weights, ex.spectrogram)
    track = predict_frames(spec, weights, ex.spectrogram, trace)
    if opts["grouping"] == "by_predicted":
        labels = track.classes
    else:
        labels = output_labels(spec, ex.labels, len(track.classes))
    found, skipped = [], 0
    for occ in find_occurrences(labels, track.logits, track.classes, example_id):
        if occ.label in opts["exclude"]:
            continue
        sens = netcore.backward_onehot(spec, weights, trace, occ.target_class, occ.output_frame, opts["mode"])
        windows = align_occurrence(spec, trace, sens, occ, opts["window"], opts["reduction"])
        if windows is None:
            skipped += 1
            continue
        found.append((occ, windows))
    return found, skipped


def run_pipeline(
    spec,
    weights,
    dataset: Dataset,
    grouping: str = "by_predicted",
    window_input: int | None = None,
    include_silence: bool = False,
    group_map: dict | None = None,
    reduction: str = "sum",
    mask_mode: str = "absmax",
    sensitivity_mode: str = "logit",
    workers: int = 1,
) -> PipelineResult:
    """Compute GradNAPs for every group and layer (input layer included).

    ``group_map`` renames label names into coarser groups (e.g. merging
    classes); unmapped names keep their own group.
    """
    if grouping not in GROUPINGS:
        raise ConfigError(f"grouping must be one of {GROUPINGS}")
    if reduction not in REDUCTIONS:
        raise ConfigError(f"reduction must be one of {REDUCTIONS}")
    if dataset.bins != spec.input_bins:
        raise ConfigError(f"dataset has {dataset.bins} bins, model expects {spec.input_bins}")
    if spec.num_classes != dataset.num_labels:
        raise ConfigError(f"model has {spec.num_classes} outputs, dataset has {dataset.num_labels} labels")
    if window_input is None:
        window_input = netcore.receptive_field(spec, spec.num_layers).size
    window_input = window_input if window_input % 2 else window_input + 1
    group_map = group_map or {}
    opts = {
        "grouping": grouping,
        "exclude": set() if include_silence else {dataset.silence_index},
        "mode": sensitivity_mode,
        "window": window_input,
        "reduction": reduction,
    }
    shapes = [(spec.channels(l), 2 * h + 1) for l, h in enumerate(half_widths(spec, window_input))]

    def job(i):
        return _example_windows(spec, weights, dataset.examples[i], i, opts)

    n = len(dataset.examples)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, range(n)))
    else:
        results = [job(i) for i in range(n)]

    # reduction in example order keeps the sums bit-identical for any worker count
    baseline = NAPAccumulator(shapes)
    groups: dict[str, NAPAccumulator] = {}
    occurrences, skipped = [], 0
    for found, n_skipped in results:
        skipped += n_skipped
        for occ, windows in found:
            name = dataset.label_name(occ.label)
            name = group_map.get(name, name)
            groups.setdefault(name, NAPAccumulator(shapes)).add(windows)
            baseline.add(windows)
            occurrences.append(occ)
    if skipped:
        log.warning("skipped %d occurrence(s) whose window crosses a sequence boundary", skipped)

    wanted = [dataset.label_name(i) for i in range(dataset.num_labels)
              if i not in opts["exclude"]]
    wanted = list(dict.fromkeys(group_map.get(n, n) for n in wanted))
    empty = [g for g in wanted if g not in groups]
    for g in empty:
        log.warning("group %r has no usable occurrences; skipped", g)

    gradnaps, degenerate = {}, []
    for name in sorted(groups, key=lambda g: (wanted.index(g) if g in wanted else len(wanted), g)):
        gradnaps[name] = finalize(name, groups[name], baseline, mask_mode)
        degenerate += [(name, g.layer) for g in gradnaps[name] if g.degenerate]
    return PipelineResult(gradnaps, occurrences, skipped, empty, degenerate, window_input, baseline.count)
