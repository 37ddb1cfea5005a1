"""Eligibility traces, low-pass filters, per-step gradients, regularization.

Per-synapse Hebbian bookkeeping: the eligibility vector combines the
alpha-filtered presynaptic spike train with an adaptation component driven by
the postsynaptic surrogate gradient; the eligibility trace is read out of it
each step, low-pass filtered, and multiplied with the learning signal.  Three
firing-rate regularization variants add a rate-deviation term to recurrent
gradients only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .neurons import LifParams

REG_STATIC = "static"
REG_CUMULATIVE = "cumulative"
REG_EMA = "ema"
REG_MODES = (REG_STATIC, REG_CUMULATIVE, REG_EMA)

# conversion from a raw spikes/step mean to the firing-rate unit used by the
# regularization target (spikes per 1000 steps)
RATE_UNIT_STEPS = 1000.0


@dataclass
class FilterState:
    """Running low-pass filter F_gamma: value <- gamma*value + u, F[u^0] = 0."""

    gamma: float
    value: float = 0.0

    def step(self, u: float) -> float:
        self.value = self.gamma * self.value + u
        return self.value


@dataclass
class EmaState:
    """Exponential moving average G_beta: value <- beta*value + (1-beta)*u."""

    beta: float
    value: float = 0.0

    def step(self, u: float) -> float:
        self.value = self.beta * self.value + (1.0 - self.beta) * u
        return self.value


@dataclass
class CumulativeMeanState:
    """Running arithmetic mean via the time-varying filter beta^t = t/(t+1)."""

    value: float = 0.0
    n: int = 0

    def step(self, u: float) -> float:
        b = self.n / (self.n + 1.0)
        self.value = b * self.value + (1.0 - b) * u
        self.n += 1
        return self.value


def filter_step(f: FilterState, u: float) -> float:
    """Advance a low-pass filter by one input; returns the new value."""
    return f.step(u)


@dataclass
class RegularizationParams:
    """Firing-rate regularization settings.

    ``f_star`` is the target rate in spikes per 1000 steps.  ``mode`` selects
    the static sample-average variant, the cumulative running mean, or the
    exponential moving average with constant ``beta_reg``.
    """

    c_reg: float = 0.0
    f_star: float = 10.0
    mode: str = REG_STATIC
    beta_reg: float = 0.99

    def __post_init__(self) -> None:
        if self.c_reg < 0:
            raise ValueError("c_reg must be >= 0")
        if self.mode not in REG_MODES:
            raise ValueError(f"unknown regularization mode {self.mode!r}")

    @property
    def enabled(self) -> bool:
        return self.c_reg > 0.0


@dataclass
class EligibilityState:
    """Per-synapse traces and the accumulated gradient.

    ``eps_v`` is the alpha-filtered presynaptic spike train, ``eps_a`` the
    adaptation component (stays 0 for LIF), ``filt`` the kappa-filtered
    eligibility trace entering the gradient, ``reg_trace`` the
    regularization-filtered trace, and ``grad_accum`` the sum of per-step
    gradient contributions.
    """

    eps_v: float = 0.0
    eps_a: float = 0.0
    filt: FilterState = field(default_factory=lambda: FilterState(gamma=0.966))
    reg_trace: EmaState = field(default_factory=lambda: EmaState(beta=0.99))
    grad_accum: float = 0.0

    def reset_traces(self) -> None:
        self.eps_v = 0.0
        self.eps_a = 0.0
        self.filt.value = 0.0
        self.reg_trace.value = 0.0


def eligibility_step(e: EligibilityState, z_pre: int, psi_prev: float, p: LifParams) -> None:
    """Advance the eligibility vector by one step.

    ``psi_prev`` is the postsynaptic surrogate gradient of the previous step.
    The adaptation component consumes the old eps_v before eps_v itself
    integrates the new presynaptic spike.
    """
    if p.beta_a != 0.0:
        e.eps_a = psi_prev * e.eps_v + (p.rho - psi_prev * p.beta_a) * e.eps_a
    e.eps_v = p.alpha * e.eps_v + z_pre


def eligibility_trace(e: EligibilityState, psi: float, p: LifParams) -> float:
    """Eligibility trace e^t = psi * (eps_v - beta_a * eps_a) at the current step."""
    return psi * (e.eps_v - p.beta_a * e.eps_a)


def grad_step_recurrent(
    e: EligibilityState, lsig: float, e_t: float, reg_contrib: float = 0.0
) -> float:
    """One recurrent gradient contribution g^t = L^t * F_kappa[e^t] + g_reg^t.

    The filtered trace is advanced here; pass ``e_t`` from
    :func:`eligibility_trace`.  The contribution is added to ``grad_accum``
    and returned.
    """
    filt = e.filt.step(e_t)
    g = lsig * filt + reg_contrib
    e.grad_accum += g
    return g


# input synapses share the recurrent rule with x_i in place of z_i
grad_step_input = grad_step_recurrent


def grad_step_output(e: EligibilityState, err: float, z_pre_delayed: int) -> float:
    """One output gradient contribution g^t = E_k^t * F_kappa[z_j^{t-d}].

    ``z_pre_delayed`` is the presynaptic spike state already delayed by the
    configured transmission delay; the kappa filter runs over it here.
    """
    filt = e.filt.step(z_pre_delayed)
    g = err * filt
    e.grad_accum += g
    return g


def firing_rate_regularization(
    reg: RegularizationParams,
    rate_value: float,
    trace_value: float,
    sample_steps: int | None = None,
) -> float:
    """Regularization gradient contribution for one step.

    ``rate_value`` is the mode-appropriate firing rate in raw spikes/step
    units (sample mean for static, running mean for cumulative, EMA value
    otherwise); ``trace_value`` the matching eligibility-trace factor (raw
    e^t for static, filtered trace for the dynamic modes).  Static mode
    requires the sample length.
    """
    if not reg.enabled:
        return 0.0
    deviation = rate_value * RATE_UNIT_STEPS - reg.f_star
    if reg.mode == REG_STATIC:
        if sample_steps is None or sample_steps <= 0:
            raise ValueError("static regularization requires a known sample length")
        return (reg.c_reg / sample_steps) * deviation * trace_value
    return reg.c_reg * deviation * trace_value


def offline_recurrent_gradient(
    out_weights: np.ndarray,
    errors: np.ndarray,
    elig_traces: np.ndarray,
    kappa: float,
) -> np.ndarray:
    """Brute-force double-sum gradient before index flipping.

    Computes sum_{t'} sum_k W^o_kj sum_{t >= t'} E_k^t kappa^{t-t'} e_ji^{t'}
    for every synapse; used as the independent oracle against the online
    accumulation.  ``errors`` has shape (T, K), ``elig_traces`` (T, J, I),
    ``out_weights`` (K, J) (pass the feedback matrix transposed for the
    broadcast-alignment form).
    """
    n_steps, n_out = errors.shape
    _, n_rec, n_in = elig_traces.shape
    grad = np.zeros((n_rec, n_in))
    for t_prime in range(n_steps):
        future = np.zeros(n_out)
        for t in range(t_prime, n_steps):
            future += errors[t] * kappa ** (t - t_prime)
        lsig = out_weights.T @ future  # (J,)
        grad += lsig[:, None] * elig_traces[t_prime]
    return grad


def index_flip_sums(a: np.ndarray) -> tuple[float, float]:
    """Both sides of the index-flipping identity on an upper-triangular sum.

    Returns (sum_{t'} sum_{t >= t'} A[t', t], sum_t sum_{t' <= t} A[t', t]);
    they agree exactly for any square matrix.
    """
    n = a.shape[0]
    lhs = 0.0
    for t_prime in range(n):
        for t in range(t_prime, n):
            lhs += a[t_prime, t]
    rhs = 0.0
    for t in range(n):
        for t_prime in range(t + 1):
            rhs += a[t_prime, t]
    return lhs, rhs
