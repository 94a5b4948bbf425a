"""Architecture config files, weight persistence, frame-wise prediction and a toy trainer."""

from __future__ import annotations

import configparser
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import netcore
from .data import Dataset
from .errors import ConfigError, DataError, FormatError, NumericError
from .netcore import AdamState, ArchitectureSpec, LayerSpec, ModelWeights

WEIGHT_MAGIC = b"GNW1"


# -- architecture config -------------------------------------------------------
#
#   [model]
#   input_bins = 32
#   [layer1]
#   out_channels = 16
#   kernel = 5
#   stride = 1
#   activation = relu

def parse_arch(text: str) -> ArchitectureSpec:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"architecture config: {e}") from None
    if not cp.has_option("model", "input_bins"):
        raise ConfigError("architecture config: [model] input_bins is required")
    layers = []
    i = 1
    while cp.has_section(f"layer{i}"):
        sec = cp[f"layer{i}"]
        for key in ("out_channels", "kernel"):
            if key not in sec:
                raise ConfigError(f"architecture config [layer{i}]: {key} is required")
        try:
            layers.append({
                "out_channels": sec.getint("out_channels"),
                "kernel": sec.getint("kernel"),
                "stride": sec.getint("stride", 1),
                "activation": sec.get("activation", "relu"),
            })
        except (TypeError, ValueError) as e:
            raise ConfigError(f"architecture config [layer{i}]: {e}") from None
        i += 1
    return ArchitectureSpec.build(cp.getint("model", "input_bins"), layers)


def load_arch(path) -> ArchitectureSpec:
    return parse_arch(Path(path).read_text())


def format_arch(spec: ArchitectureSpec) -> str:
    lines = ["[model]", f"input_bins = {spec.input_bins}", ""]
    for i, layer in enumerate(spec.layers, start=1):
        lines += [
            f"[layer{i}]",
            f"out_channels = {layer.out_channels}",
            f"kernel = {layer.kernel}",
            f"stride = {layer.stride}",
            f"activation = {layer.activation}",
            "",
        ]
    return "\n".join(lines)


# -- weight file ---------------------------------------------------------------

def save_weights(path, weights: ModelWeights, spec: ArchitectureSpec) -> None:
    buf = bytearray(WEIGHT_MAGIC)
    buf += struct.pack("<I", spec.num_layers)
    for layer, w, b in zip(spec.layers, weights.kernels, weights.biases):
        buf += struct.pack("<IIII", layer.out_channels, layer.in_channels, layer.kernel, layer.stride)
        buf += np.ascontiguousarray(w, dtype="<f4").tobytes()
        buf += np.ascontiguousarray(b, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def read_weight_file(path):
    """Parse a weight file into ([(out, in, kernel, stride), ...], ModelWeights)."""
    buf = Path(path).read_bytes()
    if buf[:4] != WEIGHT_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {WEIGHT_MAGIC!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{path}: truncated at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    shapes, kernels, biases = [], [], []
    for _ in range(count):
        out, inp, k, s = struct.unpack("<IIII", take(16))
        shapes.append((out, inp, k, s))
        kernels.append(np.frombuffer(take(4 * out * inp * k), "<f4").reshape(out, inp, k).astype(np.float64))
        biases.append(np.frombuffer(take(4 * out), "<f4").astype(np.float64))
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return shapes, ModelWeights(kernels, biases)


def load_weights(path, spec: ArchitectureSpec) -> ModelWeights:
    shapes, weights = read_weight_file(path)
    if len(shapes) != spec.num_layers:
        raise FormatError(f"{path}: {len(shapes)} layers in file, architecture has {spec.num_layers}")
    for i, (shape, layer) in enumerate(zip(shapes, spec.layers), start=1):
        expected = (layer.out_channels, layer.in_channels, layer.kernel, layer.stride)
        if shape != expected:
            raise FormatError(
                f"{path}: layer {i} is (out,in,kernel,stride)={shape}, architecture expects {expected}"
            )
    weights.check(spec)
    return weights


def arch_from_weight_file(path, activations=None) -> ArchitectureSpec:
    """Architecture implied by a weight file; hidden layers relu, last identity unless given."""
    shapes, _ = read_weight_file(path)
    if activations is None:
        activations = ["relu"] * (len(shapes) - 1) + ["identity"]
    if not shapes:
        raise FormatError(f"{path}: no layers")
    layers = [LayerSpec(i, o, k, s, a) for (o, i, k, s), a in zip(shapes, activations)]
    return ArchitectureSpec(shapes[0][1], tuple(layers))


def quantize(weights: ModelWeights) -> ModelWeights:
    """Round to float32 precision so a save/load round trip is exact."""
    return ModelWeights(
        [w.astype(np.float32).astype(np.float64) for w in weights.kernels],
        [b.astype(np.float32).astype(np.float64) for b in weights.biases],
    )


# -- prediction ----------------------------------------------------------------

@dataclass
class PredictionTrack:
    classes: np.ndarray  # (T_L,) argmax class per output frame
    logits: np.ndarray  # (num_classes, T_L)
    field: netcore.ReceptiveField

    def centers(self) -> np.ndarray:
        return self.field.center(np.arange(len(self.classes)))


def predict_frames(spec, weights, spectrogram, trace=None) -> PredictionTrack:
    if trace is None:
        trace = netcore.forward(spec, weights, spectrogram)
    logits = trace.logits
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return PredictionTrack(np.argmax(logits, axis=0), logits,
                           netcore.receptive_field(spec, spec.num_layers))


def output_labels(spec: ArchitectureSpec, labels: np.ndarray, frames: int | None = None) -> np.ndarray:
    """Input-frame labels sampled at each output frame's receptive-field centre."""
    rf = netcore.receptive_field(spec, spec.num_layers)
    t_out = frames if frames is not None else output_frames(spec, len(labels))
    centers = rf.center(np.arange(t_out))
    if t_out < 1 or centers[-1] >= len(labels):
        raise DataError(f"{len(labels)} labels cannot cover {t_out} output frames")
    return labels[centers]


def output_frames(spec: ArchitectureSpec, t: int) -> int:
    for layer in spec.layers:
        t = netcore.output_length(t, layer.kernel, layer.stride)
    return t


def frame_accuracy(spec, weights, dataset: Dataset) -> float:
    hit = total = 0
    for ex in dataset.examples:
        track = predict_frames(spec, weights, ex.spectrogram)
        target = output_labels(spec, ex.labels, len(track.classes))
        hit += int(np.sum(track.classes == target))
        total += len(target)
    return hit / total


# -- toy trainer ---------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size) < 1 or self.lr <= 0:
            raise ConfigError("epochs, batch_size and lr must be positive")


def _cross_entropy(logits: np.ndarray, target: np.ndarray):
    """Summed frame-wise cross-entropy and its gradient w.r.t. the logits."""
    p = netcore.softmax(logits, axis=0)
    cols = np.arange(logits.shape[1])
    loss = -np.sum(np.log(np.maximum(p[target, cols], 1e-300)))
    grad = p
    grad[target, cols] -= 1.0
    return loss, grad


def dataset_loss(spec, weights, dataset: Dataset) -> float:
    total = frames = 0
    for ex in dataset.examples:
        trace = netcore.forward(spec, weights, ex.spectrogram)
        target = output_labels(spec, ex.labels, trace.logits.shape[1])
        total += _cross_entropy(trace.logits, target)[0]
        frames += len(target)
    return total / frames


def train_toy(spec: ArchitectureSpec, dataset: Dataset, cfg: TrainConfig, history: list | None = None) -> ModelWeights:
    """Mean frame-wise cross-entropy minimised with Adam; deterministic given ``cfg.seed``.

    If ``history`` is a list, the dataset loss at initialization and after
    every epoch is appended to it.
    """
    if spec.input_bins != dataset.bins:
        raise ConfigError(f"architecture expects {spec.input_bins} bins, dataset has {dataset.bins}")
    if spec.num_classes != dataset.num_labels:
        raise ConfigError(
            f"final layer has {spec.num_classes} outputs, dataset has {dataset.num_labels} labels (incl. silence)"
        )
    for i, ex in enumerate(dataset.examples):
        if len(ex.labels) != ex.spectrogram.shape[1]:
            raise DataError(f"example {i}: {len(ex.labels)} labels for {ex.spectrogram.shape[1]} frames")
    rng = np.random.default_rng(cfg.seed)
    weights = netcore.init_weights(spec, rng)
    targets = [output_labels(spec, ex.labels) for ex in dataset.examples]
    L = spec.num_layers
    params = weights.kernels + weights.biases
    states = [AdamState(lr=cfg.lr) for _ in params]
    if history is not None:
        history.append(dataset_loss(spec, weights, dataset))

    n = len(dataset.examples)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grads = [np.zeros_like(p) for p in params]
            frames = sum(len(targets[i]) for i in batch)
            for i in batch:
                trace = netcore.forward(spec, weights, dataset.examples[i].spectrogram)
                _, dlogits = _cross_entropy(trace.logits, targets[i])
                dk, db = netcore.param_gradients(spec, weights, trace, dlogits / frames)
                for g, d in zip(grads, dk + db):
                    g += d
            for j, (p, g, st) in enumerate(zip(params, grads, states)):
                params[j], _ = netcore.adam_step(st, p, g)
            weights = ModelWeights(params[:L], params[L:])
        if not all(np.all(np.isfinite(p)) for p in params):
            raise NumericError("training diverged (non-finite weights)")
        if history is not None:
            history.append(dataset_loss(spec, weights, dataset))
    return quantize(weights)
