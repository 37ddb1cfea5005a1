"""Gradient descent and Adam applied to accumulated per-step gradients.

Adam follows the reordered formulation in which the per-step learning rate
eta^t = eta * sqrt(1 - beta2^t) / (1 - beta1^t) multiplies m / (sqrt(v) +
eps_hat) with a constant eps_hat (TensorFlow convention), summed over the
sequence and applied once at its end.  The moment estimates must be updated
sequentially, so the optimizer consumes per-step gradients, not their sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

OPT_GD = "gd"
OPT_ADAM = "adam"


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = OPT_GD
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eps_hat: float = 1e-7
    batch_size: int = 1

    def __post_init__(self) -> None:
        if self.kind not in (OPT_GD, OPT_ADAM):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class AdamState:
    """First/second moment estimates and the per-parameter step counter."""

    m: float = 0.0
    v: float = 0.0
    t: int = 0


def gd_update(weight: float, grad_sum: float, eta: float) -> float:
    """Plain gradient descent: w <- w - eta * grad_sum."""
    return weight - eta * grad_sum


def adam_step_delta(state: AdamState, grad: float, cfg: OptimizerConfig) -> float:
    """Advance Adam by one per-step gradient; returns this step's weight delta.

    Deltas accumulate over a sequence and are applied once at its end, but
    each delta is independent of the weight, so applying them immediately
    (per-spike policies) yields the same trajectory.
    """
    state.t += 1
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    eta_t = cfg.eta * math.sqrt(1.0 - cfg.beta2**state.t) / (1.0 - cfg.beta1**state.t)
    return -eta_t * state.m / (math.sqrt(state.v) + cfg.eps_hat)


def adam_update(
    state: AdamState, weight: float, grads: Iterable[float], cfg: OptimizerConfig
) -> tuple[AdamState, float]:
    """Consume per-step gradients in order; single weight update at the end."""
    delta = 0.0
    for g in grads:
        delta += adam_step_delta(state, g, cfg)
    return state, weight + delta


def batch_average(grad_sums: Iterable[float]) -> float:
    """Arithmetic mean of accumulated gradients over a mini-batch."""
    sums = list(grad_sums)
    if not sums:
        raise ValueError("batch_average needs at least one gradient")
    return sum(sums) / len(sums)


class AdamArrays:
    """Vectorized Adam state over a weight array (engine internal).

    The step counter is shared because every synapse of a projection advances
    through the same per-step gradient sequence.
    """

    def __init__(self, shape: tuple[int, ...], cfg: OptimizerConfig):
        self.cfg = cfg
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step_delta(self, grads: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        self.t += 1
        self.m *= cfg.beta1
        self.m += (1.0 - cfg.beta1) * grads
        self.v *= cfg.beta2
        self.v += (1.0 - cfg.beta2) * (grads * grads)
        eta_t = cfg.eta * math.sqrt(1.0 - cfg.beta2**self.t) / (1.0 - cfg.beta1**self.t)
        return -eta_t * self.m / (np.sqrt(self.v) + cfg.eps_hat)
