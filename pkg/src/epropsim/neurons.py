"""Discrete-time neuron dynamics for recurrent spiking networks.

Implements the recurrent LIF/ALIF update with its binary spike state and
adaptive threshold, the non-spiking leaky-integrator readout, four surrogate
gradient functions, and the periodic ignore-and-fire unit used by the scaling
benchmark.  All transitions are pure value-semantics state updates; the
simulation engine vectorizes the same recursions with numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

RESET_SUBTRACT = "subtract-threshold"
RESET_TO_VALUE = "reset-to-value"

PIECEWISE_LINEAR = "piecewise-linear"
EXPONENTIAL = "exponential"
FAST_SIGMOID = "fast-sigmoid"
ARCTAN = "arctan"
SURROGATE_KINDS = (PIECEWISE_LINEAR, EXPONENTIAL, FAST_SIGMOID, ARCTAN)


class NumericInputError(ValueError):
    """Raised when a dynamics update receives a non-finite drive."""


@dataclass(frozen=True)
class SurrogateSpec:
    """Pseudo-derivative of the spike nonlinearity.

    All kinds evaluate to ``gamma`` at the effective threshold; ``beta``
    scales the width (units 1/mV).
    """

    kind: str = PIECEWISE_LINEAR
    gamma: float = 0.3
    beta: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in SURROGATE_KINDS:
            raise ValueError(f"unknown surrogate kind {self.kind!r}")
        if not self.gamma > 0:
            raise ValueError("surrogate gamma must be > 0")
        if not self.beta > 0:
            raise ValueError("surrogate beta must be > 0")


def surrogate_gradient(v, v_th_t, spec: SurrogateSpec):
    """Evaluate the surrogate gradient at membrane voltage ``v``.

    Accepts scalars or arrays.  Peaks with magnitude ``gamma`` at
    ``v == v_th_t`` for every kind.
    """
    u = np.asarray(v, dtype=float) - np.asarray(v_th_t, dtype=float)
    g, b = spec.gamma, spec.beta
    if spec.kind == PIECEWISE_LINEAR:
        out = g * np.maximum(0.0, 1.0 - b * np.abs(u))
    elif spec.kind == EXPONENTIAL:
        out = g * np.exp(-b * np.abs(u))
    elif spec.kind == FAST_SIGMOID:
        out = g / (1.0 + b * np.abs(u)) ** 2
    else:  # arctan-style bell (derivative of an inverse tangent)
        out = g / (1.0 + (b * u) ** 2)
    if np.ndim(v) == 0 and np.ndim(v_th_t) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class LifParams:
    """Parameters of a recurrent LIF/ALIF unit on a fixed step grid.

    ``alpha`` and ``rho`` are the per-step decay factors of the membrane
    voltage and the threshold adaptation; they default to
    exp(-dt/tau_m) and exp(-dt/tau_a) and must stay consistent with
    (dt, tau_m, tau_a) to 1e-15 if given explicitly.  ``beta_a = 0`` yields a
    plain LIF with constant threshold.
    """

    dt: float = 1.0
    tau_m: float = 30.0
    v_th: float = 0.6
    beta_a: float = 0.0
    tau_a: float = 1200.0
    reset_mode: str = RESET_SUBTRACT
    v_reset: float = 0.0
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)
    alpha: float = None  # type: ignore[assignment]
    rho: float = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.reset_mode not in (RESET_SUBTRACT, RESET_TO_VALUE):
            raise ValueError(f"unknown reset_mode {self.reset_mode!r}")
        alpha = math.exp(-self.dt / self.tau_m)
        rho = math.exp(-self.dt / self.tau_a)
        if self.alpha is None:
            object.__setattr__(self, "alpha", alpha)
        elif abs(self.alpha - alpha) > 1e-15:
            raise ValueError("alpha inconsistent with exp(-dt/tau_m)")
        if self.rho is None:
            object.__setattr__(self, "rho", rho)
        elif abs(self.rho - rho) > 1e-15:
            raise ValueError("rho inconsistent with exp(-dt/tau_a)")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if not (0.0 < self.rho < 1.0):
            raise ValueError("rho must lie in (0, 1)")


@dataclass
class RecurrentNeuronState:
    """Dynamic variables (v, a, z) of one recurrent unit plus its threshold."""

    v: float = 0.0
    a: float = 0.0
    z: int = 0
    v_th_t: float = 0.6


def step_recurrent(
    state: RecurrentNeuronState,
    p: LifParams,
    rec_drive: float,
    in_drive: float,
) -> RecurrentNeuronState:
    """Advance one recurrent unit by one step.

    ``rec_drive``/``in_drive`` are the already-summed weighted spike inputs.
    The adaptation updates first (a <- rho*a + z_prev), the voltage integrates
    with the previous spike's reset, and the new spike state is exactly
    H(v - v_th_t).
    """
    if not (math.isfinite(rec_drive) and math.isfinite(in_drive)):
        raise NumericInputError("non-finite synaptic drive")
    a_new = p.rho * state.a + state.z
    v_th_t = p.v_th + p.beta_a * a_new
    drive = rec_drive + in_drive
    if p.reset_mode == RESET_SUBTRACT:
        v_new = p.alpha * state.v + drive - state.z * v_th_t
    else:
        base = p.v_reset if state.z else state.v
        v_new = p.alpha * base + drive
    z_new = 1 if v_new >= v_th_t else 0
    return RecurrentNeuronState(v=v_new, a=a_new, z=z_new, v_th_t=v_th_t)


@dataclass
class ReadoutState:
    """Leaky-integrator readout: y decays by ``kappa`` per step under zero drive."""

    y: float = 0.0
    kappa: float = 0.966

    @classmethod
    def from_tau(cls, dt: float, tau_m_out: float, y: float = 0.0) -> "ReadoutState":
        return cls(y=y, kappa=math.exp(-dt / tau_m_out))


def step_readout(state: ReadoutState, drive: float) -> ReadoutState:
    """Advance one readout by one step: y <- kappa*y + drive."""
    if not math.isfinite(drive):
        raise NumericInputError("non-finite readout drive")
    return replace(state, y=state.kappa * state.y + drive)


@dataclass
class IgnoreAndFireState:
    """Counter neuron emitting exactly one spike every ``period`` steps.

    ``phase`` is the current counter position in [0, period); it is usually
    initialized uniformly at random so a population fires at randomized
    phases.  Input is ignored entirely.
    """

    period: int
    phase: int = 0

    def __post_init__(self) -> None:
        if self.period <= 0:
            raise ValueError("ignore-and-fire period must be >= 1")
        if not 0 <= self.phase < self.period:
            raise ValueError("phase must lie in [0, period)")


def step_ignore_and_fire(state: IgnoreAndFireState) -> tuple[IgnoreAndFireState, int]:
    """Advance the counter by one step; spike exactly when it wraps."""
    phase = state.phase + 1
    if phase == state.period:
        return IgnoreAndFireState(period=state.period, phase=0), 1
    return IgnoreAndFireState(period=state.period, phase=phase), 0
