"""Numeric core: valid 1D convolution, reverse-mode gradients, receptive fields, Adam.

Layer indices follow one convention everywhere: layer 0 is the input
spectrogram, layers 1..L are the convolutional layers. Everything is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, InputTooShortError

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class LayerSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    activation: str = "relu"


@dataclass(frozen=True)
class ArchitectureSpec:
    input_bins: int
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ConfigError("architecture has no layers")
        prev = self.input_bins
        for i, layer in enumerate(self.layers, start=1):
            if layer.in_channels != prev:
                raise ConfigError(
                    f"layer {i}: in_channels={layer.in_channels}, expected {prev}"
                )
            if layer.kernel < 1 or layer.stride < 1 or layer.out_channels < 1:
                raise ConfigError(f"layer {i}: kernel, stride and out_channels must be >= 1")
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"layer {i}: unknown activation {layer.activation!r}")
            prev = layer.out_channels

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_channels

    def channels(self, l: int) -> int:
        return self.input_bins if l == 0 else self.layers[l - 1].out_channels

    @classmethod
    def build(cls, input_bins: int, layers: Sequence[dict]) -> "ArchitectureSpec":
        """Build from dicts without ``in_channels``; input widths are chained."""
        out, prev = [], input_bins
        for d in layers:
            d = dict(d)
            d.setdefault("in_channels", prev)
            out.append(LayerSpec(**d))
            prev = d["out_channels"]
        return cls(input_bins, tuple(out))


@dataclass
class ModelWeights:
    kernels: list[np.ndarray]  # each (out, in, kernel)
    biases: list[np.ndarray]  # each (out,)

    def check(self, spec: ArchitectureSpec) -> None:
        if len(self.kernels) != spec.num_layers or len(self.biases) != spec.num_layers:
            raise ConfigError(
                f"weights have {len(self.kernels)} layers, architecture has {spec.num_layers}"
            )
        for i, (layer, w, b) in enumerate(zip(spec.layers, self.kernels, self.biases), start=1):
            expected = (layer.out_channels, layer.in_channels, layer.kernel)
            if w.shape != expected or b.shape != (layer.out_channels,):
                raise ConfigError(
                    f"layer {i}: kernel shape {w.shape} / bias {b.shape}, expected {expected}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigError(f"layer {i}: non-finite weights")

    def copy(self) -> "ModelWeights":
        return ModelWeights([w.copy() for w in self.kernels], [b.copy() for b in self.biases])


def init_weights(spec: ArchitectureSpec, rng: np.random.Generator) -> ModelWeights:
    """He-uniform kernels, zero biases."""
    kernels, biases = [], []
    for layer in spec.layers:
        fan_in = layer.in_channels * layer.kernel
        bound = np.sqrt(6.0 / fan_in)
        kernels.append(rng.uniform(-bound, bound, (layer.out_channels, layer.in_channels, layer.kernel)))
        biases.append(np.zeros(layer.out_channels))
    return ModelWeights(kernels, biases)


# -- activations ---------------------------------------------------------------

def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z.copy()


def activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


# -- convolution ---------------------------------------------------------------

def output_length(t: int, kernel: int, stride: int) -> int:
    return (t - kernel) // stride + 1


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid 1D convolution (cross-correlation). x: (C_in, T), w: (C_out, C_in, K)."""
    c_out, c_in, k = w.shape
    if x.ndim != 2 or x.shape[0] != c_in:
        raise ConfigError(f"input has shape {x.shape}, kernel expects {c_in} channels")
    if x.shape[1] < k:
        raise InputTooShortError(f"input length {x.shape[1]} shorter than kernel {k}")
    windows = sliding_window_view(x, k, axis=1)[:, ::stride, :]  # (C_in, T', K)
    return np.einsum("oik,itk->ot", w, windows) + b[:, None]


def conv1d_backward_input(dz: np.ndarray, w: np.ndarray, stride: int, t_in: int) -> np.ndarray:
    """Gradient w.r.t. the input of conv1d_forward, given upstream dz (C_out, T')."""
    _, c_in, k = w.shape
    t_out = dz.shape[1]
    dx = np.zeros((c_in, t_in))
    stop = stride * (t_out - 1) + 1
    for j in range(k):
        dx[:, j:j + stop:stride] += w[:, :, j].T @ dz
    return dx


def conv1d_backward_params(dz: np.ndarray, x: np.ndarray, k: int, stride: int):
    windows = sliding_window_view(x, k, axis=1)[:, ::stride, :]
    return np.einsum("ot,itk->oik", dz, windows), dz.sum(axis=1)


# -- receptive fields ----------------------------------------------------------

@dataclass(frozen=True)
class ReceptiveField:
    size: int  # input frames seen by one frame of the layer
    stride: int  # product of strides up to the layer
    center_offset: int

    def center(self, t):
        """Input-frame centre of layer frame(s) t."""
        return t * self.stride + self.center_offset


def receptive_field(spec: ArchitectureSpec, l: int) -> ReceptiveField:
    if not 0 <= l <= spec.num_layers:
        raise IndexError(f"layer index {l} outside 0..{spec.num_layers}")
    rf, s = 1, 1
    for layer in spec.layers[:l]:
        rf += (layer.kernel - 1) * s
        s *= layer.stride
    return ReceptiveField(rf, s, (rf - 1) // 2)


def cone(spec: ArchitectureSpec, l: int, top: int, t: int) -> tuple[int, int]:
    """Frames [start, stop) of layer ``l`` that influence frame ``t`` of layer ``top``."""
    start, stop = t, t + 1
    for layer in reversed(spec.layers[l:top]):
        start = start * layer.stride
        stop = (stop - 1) * layer.stride + layer.kernel
    return start, stop


# -- forward / backward --------------------------------------------------------

@dataclass
class LayerTrace:
    """pre[l] and act[l] for l = 0..L; pre[0] is None and act[0] is the input."""

    pre: list
    act: list

    @property
    def logits(self) -> np.ndarray:
        return self.act[-1]

    def lengths(self) -> list[int]:
        return [a.shape[1] for a in self.act]


@dataclass
class SensitivityTrace:
    grads: list  # grads[l] = d target / d act[l], grads[0] w.r.t. the input
    class_index: int
    output_frame: int
    mode: str = "logit"


def _as_input(spec: ArchitectureSpec, x, upto: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != spec.input_bins:
        raise ConfigError(f"spectrogram has shape {x.shape}, architecture expects {spec.input_bins} bins")
    need = receptive_field(spec, spec.num_layers if upto is None else upto).size
    if x.shape[1] < need:
        raise InputTooShortError(f"input has {x.shape[1]} frames, receptive field needs {need}")
    return x


def forward(spec: ArchitectureSpec, weights: ModelWeights, spectrogram, upto: int | None = None) -> LayerTrace:
    x = _as_input(spec, spectrogram, upto)
    return forward_from(spec, weights, 0, x, upto)


def forward_from(spec, weights, l, a, upto=None) -> LayerTrace:
    """Continue the forward pass from activation ``a`` of layer ``l``.

    Layers before ``l`` are absent from the returned trace (None entries).
    """
    upto = spec.num_layers if upto is None else upto
    pre = [None] * (upto + 1)
    act = [None] * (upto + 1)
    act[l] = np.asarray(a, dtype=np.float64)
    for i in range(l + 1, upto + 1):
        layer = spec.layers[i - 1]
        pre[i] = conv1d_forward(act[i - 1], weights.kernels[i - 1], weights.biases[i - 1], layer.stride)
        act[i] = activate(layer.activation, pre[i])
    return LayerTrace(pre, act)


def backpropagate(spec, weights, trace, l_top, d_pre):
    """Push d target / d Z_{l_top} down to every layer; returns grads w.r.t. act[0..l_top-1]."""
    grads = [None] * l_top
    dz = d_pre
    for i in range(l_top, 0, -1):
        layer = spec.layers[i - 1]
        da = conv1d_backward_input(dz, weights.kernels[i - 1], layer.stride, trace.act[i - 1].shape[1])
        grads[i - 1] = da
        if i > 1:
            prev = spec.layers[i - 2]
            dz = da * activation_grad(prev.activation, trace.pre[i - 1], trace.act[i - 1])
    return grads


def param_gradients(spec, weights, trace, d_act_top):
    """Kernel and bias gradients given d loss / d act[L]."""
    L = spec.num_layers
    d_kernels, d_biases = [None] * L, [None] * L
    da = d_act_top
    for i in range(L, 0, -1):
        layer = spec.layers[i - 1]
        dz = da * activation_grad(layer.activation, trace.pre[i], trace.act[i])
        d_kernels[i - 1], d_biases[i - 1] = conv1d_backward_params(dz, trace.act[i - 1], layer.kernel, layer.stride)
        if i > 1:
            da = conv1d_backward_input(dz, weights.kernels[i - 1], layer.stride, trace.act[i - 1].shape[1])
    return d_kernels, d_biases


def softmax(z: np.ndarray, axis: int = 0) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def backward_onehot(spec, weights, trace, class_index: int, output_frame: int, mode: str = "logit") -> SensitivityTrace:
    """Sensitivity of one output score to every layer's activations and the input.

    ``mode="logit"`` differentiates the raw final-layer output; ``"softmax"``
    differentiates the class probability at that frame instead.
    """
    logits = trace.logits
    if not 0 <= class_index < logits.shape[0]:
        raise IndexError(f"class index {class_index} outside 0..{logits.shape[0] - 1}")
    if not 0 <= output_frame < logits.shape[1]:
        raise IndexError(f"output frame {output_frame} outside 0..{logits.shape[1] - 1}")
    g_top = np.zeros_like(logits)
    if mode == "logit":
        g_top[class_index, output_frame] = 1.0
    elif mode == "softmax":
        p = softmax(logits[:, output_frame])
        g_top[:, output_frame] = -p[class_index] * p
        g_top[class_index, output_frame] += p[class_index]
    else:
        raise ConfigError(f"unknown sensitivity mode {mode!r}")
    L = spec.num_layers
    last = spec.layers[-1]
    dz = g_top * activation_grad(last.activation, trace.pre[L], trace.act[L])
    grads = backpropagate(spec, weights, trace, L, dz) + [g_top]
    return SensitivityTrace(grads, class_index, output_frame, mode)


@dataclass
class LossSpec:
    """Signed pre-activation target at one frame of layer ``layer``, plus L1/L2 on the input.

    loss = -sum_{sign>0} Z[n, t] + sum_{sign<0} Z[n, t] + l1 * sum|x| + l2 * sum x^2
    """

    layer: int
    neurons: list  # [(channel, +1 | -1), ...]
    time: int = 0
    l1: float = 0.0
    l2: float = 0.0


def loss_and_grad(spec, weights, x, loss_spec: LossSpec):
    x = np.asarray(x, dtype=np.float64)
    l = loss_spec.layer
    if not 1 <= l <= spec.num_layers:
        raise IndexError(f"layer {l} outside 1..{spec.num_layers}")
    trace = forward_from(spec, weights, 0, x, upto=l)
    z = trace.pre[l]
    if not 0 <= loss_spec.time < z.shape[1]:
        raise IndexError(f"time {loss_spec.time} outside layer {l} length {z.shape[1]}")
    dz = np.zeros_like(z)
    for n, sign in loss_spec.neurons:
        if not 0 <= n < z.shape[0]:
            raise IndexError(f"neuron {n} outside layer {l} width {z.shape[0]}")
        dz[n, loss_spec.time] -= np.sign(sign)
    loss = float(np.sum(dz * z))
    loss += loss_spec.l1 * float(np.abs(x).sum()) + loss_spec.l2 * float((x * x).sum())
    grad = backpropagate(spec, weights, trace, l, dz)[0]
    grad = grad + loss_spec.l1 * np.sign(x) + 2.0 * loss_spec.l2 * x
    return loss, grad


def grad_wrt_input(spec, weights, x, loss_spec: LossSpec) -> np.ndarray:
    return loss_and_grad(spec, weights, x, loss_spec)[1]


# -- Adam ----------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


def adam_step(state: AdamState, x: np.ndarray, g: np.ndarray):
    """One bias-corrected Adam update. Mutates ``state``; returns (new_x, state)."""
    g = np.asarray(g, dtype=np.float64)
    if state.m is None:
        state.m = np.zeros_like(g)
        state.v = np.zeros_like(g)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return x - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon), state
