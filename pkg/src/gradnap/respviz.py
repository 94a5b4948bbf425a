"""Neuron responsiveness, top-k selection, optimal-input synthesis and action-potential series."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import netcore
from .errors import NumericError
from .netcore import AdamState, LossSpec

# optimal-input hyperparameters
LEARNING_RATE = 0.05
STEPS = 16
INIT_STD = 0.001
L1_SCALE = 15.0
L2_SCALE = 0.1


def responsiveness(values: np.ndarray) -> np.ndarray:
    """Signed per-channel score: sign(row sum) * row sum of absolute values."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty GradNAP")
    return np.sign(values.sum(axis=1)) * np.abs(values).sum(axis=1)


def top_responsive(r, k: int = 5) -> list[tuple[int, int]]:
    """The k channels with largest |r| (lower index first on ties), with their signs."""
    r = np.asarray(r)
    if k > len(r):
        raise ValueError(f"k={k} exceeds channel count {len(r)}")
    order = np.lexsort((np.arange(len(r)), -np.abs(r)))[:k]
    return [(int(n), int(np.sign(r[n]))) for n in order]


def regularization(spec, layer: int) -> tuple[float, float]:
    rf = netcore.receptive_field(spec, layer).size
    return L1_SCALE / rf, L2_SCALE / rf


@dataclass
class OptimalInput:
    values: np.ndarray  # (F, RF_l)
    losses: list  # loss before the first step and after each step
    layer: int
    neurons: list
    hyperparameters: dict = field(default_factory=dict)


def optimize_input(spec, weights, layer: int, neurons, seed: int = 0,
                   lr: float = LEARNING_RATE, steps: int = STEPS, init_std: float = INIT_STD,
                   l1: float | None = None, l2: float | None = None) -> OptimalInput:
    """Adam on the input of one receptive field of ``layer``.

    Maximizes the pre-activation of positively responsive neurons and
    minimizes it for negative ones, with L1/L2 penalties on the input scaled
    by the inverse receptive-field size. The input is RF_l frames long, so
    the layer produces exactly one frame.
    """
    default_l1, default_l2 = regularization(spec, layer)
    l1 = default_l1 if l1 is None else l1
    l2 = default_l2 if l2 is None else l2
    rf = netcore.receptive_field(spec, layer).size
    neurons = [(int(n), int(s)) for n, s in neurons if s != 0]
    loss_spec = LossSpec(layer, neurons, 0, l1, l2)

    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, init_std, (spec.input_bins, rf))
    state = AdamState(lr=lr)
    losses = []
    for _ in range(steps):
        loss, grad = netcore.loss_and_grad(spec, weights, x, loss_spec)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericError(f"non-finite loss at step {state.step} (layer {layer})")
        losses.append(loss)
        x, state = netcore.adam_step(state, x, grad)
    loss, _ = netcore.loss_and_grad(spec, weights, x, loss_spec)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite final loss (layer {layer})")
    losses.append(loss)
    hyper = {"lr": lr, "steps": steps, "init_std": init_std, "l1": l1, "l2": l2,
             "receptive_field": rf, "seed": seed, "beta1": state.beta1, "beta2": state.beta2,
             "epsilon": state.epsilon}
    return OptimalInput(x, losses, layer, neurons, hyper)


@dataclass
class ActionPotentials:
    offsets: np.ndarray  # window offset from the alignment centre
    series: np.ndarray  # (C, W) one row per channel
    highlighted: list  # [(channel, sign)] for the most responsive channels


def action_potentials(values: np.ndarray, top=None, k: int = 5) -> ActionPotentials:
    values = np.asarray(values, dtype=np.float64)
    if top is None:
        top = top_responsive(responsiveness(values), min(k, values.shape[0]))
    h = values.shape[1] // 2
    return ActionPotentials(np.arange(-h, values.shape[1] - h), values, list(top))
