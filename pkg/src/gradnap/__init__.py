"""Gradient-adjusted neuron activation profiles for 1D convolutional networks."""

__version__ = "0.1.0"
