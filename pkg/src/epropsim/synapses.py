"""Per-synapse update algorithms, delay bookkeeping, and update scheduling.

Five update schemes over the same per-step arithmetic: time-driven gradient
accumulation with a single update, time-driven per-step weight updates, and
event-driven variants triggered by presynaptic spikes that replay the
left-open inter-spike window from archived postsynaptic histories, either
with a FIFO queue of recent states or a sparse list of spike timestamps.

The per-step contribution at loop step t pairs the learning signal
L^{t - d_ls} with the kappa-filtered eligibility trace at t - d - d_ls, which
reduces to L^t * F_kappa[e^{t-d}] without a learning-signal delay and to the
base rule for d = 0.  All strategies share the identical operation order, so
their accumulated gradients agree bit-for-bit on identical histories.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .optim import OPT_ADAM, OPT_GD, AdamState, OptimizerConfig, adam_step_delta
from .plasticity import (
    REG_CUMULATIVE,
    REG_EMA,
    REG_STATIC,
    RegularizationParams,
    firing_rate_regularization,
)

PER_ITERATION = "per-iteration"
PER_SPIKE = "per-spike"

STRATEGY_E_QUEUE = "e-queue"
STRATEGY_Z_QUEUE = "z-queue"
STRATEGY_TIMES = "times"


class HistoryUnavailableError(RuntimeError):
    """A replay requested history that was never written or already cleaned."""


@dataclass(frozen=True)
class DelayConfig:
    """Transmission and learning-signal delays in steps.

    ``d`` delays recurrent activity on its way to the readout, ``d_ls``
    delays the learning signal on its way back; their sum is the
    synchronization delay applied to the eligibility side of each pairing.
    ``cutoff`` truncates history replay between sparse spikes (per-spike
    policy only).
    """

    d: int = 0
    d_ls: int = 0
    cutoff: int = 64

    def __post_init__(self) -> None:
        if self.d < 0 or self.d_ls < 0:
            raise ValueError("delays must be >= 0")
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")

    @property
    def d_sync(self) -> int:
        return self.d + self.d_ls


@dataclass(frozen=True)
class UpdatePolicy:
    """When accumulated gradients turn into weight updates.

    Per-iteration updates happen at t = shift + update_interval * i; the
    per-spike policy updates at every presynaptic spike instead.
    """

    mode: str = PER_ITERATION
    update_interval: int = 1000
    batch_size: int = 1
    shift: int = 0

    def __post_init__(self) -> None:
        if self.mode not in (PER_ITERATION, PER_SPIKE):
            raise ValueError(f"unknown update policy {self.mode!r}")
        if self.mode == PER_ITERATION and self.update_interval < 1:
            raise ValueError("update_interval must be >= 1")

    def next_update_time(self, t: int) -> int:
        """First scheduled update time >= t (per-iteration mode)."""
        if t <= self.shift:
            return self.shift
        k = -((self.shift - t) // self.update_interval)  # ceil division
        return self.shift + k * self.update_interval


def delayed_pairing_indices(t: int, delays: DelayConfig) -> tuple[int, int]:
    """(learning-signal step, eligibility-trace step) paired at loop step t."""
    return t - delays.d_ls, t - delays.d_sync


@dataclass
class SynapseHistory:
    """Dense per-step signals seen by one synapse, indexed by step t.

    Arrays are padded so that index t holds the value at step t (index 0 of
    ``psi``/``lsig``/``f_rate`` is unused); ``z_pre[t]`` is the presynaptic
    spike state z^t for t = 0..n_steps.
    """

    psi: np.ndarray
    lsig: np.ndarray
    f_rate: np.ndarray
    z_pre: np.ndarray
    n_steps: int

    @classmethod
    def from_signals(cls, psi, lsig, z_pre, f_rate=None) -> "SynapseHistory":
        psi = np.asarray(psi, dtype=float)
        n = psi.shape[0]
        lsig = np.asarray(lsig, dtype=float)
        z = np.asarray(z_pre, dtype=float)
        f = np.zeros(n) if f_rate is None else np.asarray(f_rate, dtype=float)
        if not (lsig.shape[0] == n and f.shape[0] == n and z.shape[0] == n):
            raise ValueError("history arrays must share one length")
        pad = lambda a: np.concatenate(([0.0], a))
        return cls(
            psi=pad(psi), lsig=pad(lsig), f_rate=pad(f),
            z_pre=np.concatenate((z, [0.0])), n_steps=n,
        )

    @classmethod
    def random(cls, rng: np.random.Generator, n_steps: int, p_spike: float = 0.1) -> "SynapseHistory":
        return cls.from_signals(
            psi=rng.uniform(0.0, 0.5, n_steps),
            lsig=rng.normal(0.0, 1.0, n_steps),
            z_pre=(rng.random(n_steps) < p_spike).astype(float),
            f_rate=rng.uniform(0.0, 0.05, n_steps),
        )

    def arrival_times(self) -> list[int]:
        """Steps at which a presynaptic spike arrives (one step after emission)."""
        return [t + 1 for t in range(self.n_steps) if self.z_pre[t] == 1.0]


@dataclass
class GradientRule:
    """Constants of the per-step gradient arithmetic."""

    alpha: float
    kappa_filt: float  # filter constant of the eligibility trace (0 = unfiltered)
    delays: DelayConfig = field(default_factory=DelayConfig)
    reg: RegularizationParams = field(default_factory=RegularizationParams)
    update_interval: int | None = None  # for the static-mode c/T coefficient


class _RegTrace:
    """Mode-appropriate filter over delayed eligibility values."""

    def __init__(self, reg: RegularizationParams):
        self.mode = reg.mode
        self.beta = reg.beta_reg
        self.value = 0.0
        self.n = 0

    def step(self, u: float) -> float:
        if self.mode == REG_STATIC:
            self.value = u
        elif self.mode == REG_EMA:
            self.value = self.beta * self.value + (1.0 - self.beta) * u
        else:  # cumulative running mean, beta^t = t / (t + 1)
            b = self.n / (self.n + 1.0)
            self.value = b * self.value + (1.0 - b) * u
            self.n += 1
        return self.value

    def fast_forward(self, n: int) -> None:
        if self.mode == REG_STATIC:
            self.value = 0.0
        elif self.mode == REG_EMA:
            self.value *= self.beta**n
        else:
            if self.n + n > 0:
                self.value *= self.n / (self.n + n)
            self.n += n

    def reset(self) -> None:
        self.value = 0.0
        self.n = 0


class GradientKernel:
    """Sequential per-step gradient arithmetic shared by all five algorithms.

    ``strategy`` selects how the delayed eligibility value is produced: from
    a FIFO queue of eligibility values, a FIFO queue of presynaptic spike
    states, or a sparse list of spike timestamps.  All strategies execute the
    same floating-point operations in the same order.
    """

    def __init__(self, rule: GradientRule, strategy: str = STRATEGY_E_QUEUE):
        if strategy not in (STRATEGY_E_QUEUE, STRATEGY_Z_QUEUE, STRATEGY_TIMES):
            raise ValueError(f"unknown kernel strategy {strategy!r}")
        self.rule = rule
        self.strategy = strategy
        self.f_alpha = 0.0
        self.f_kappa = 0.0
        self.reg_trace = _RegTrace(rule.reg)
        d = rule.delays.d
        self.e_queue: deque[float] = deque([0.0] * d)
        self.z_queue: deque[float] = deque([0.0] * d)
        self.times: list[int] = []

    def reset_traces(self) -> None:
        d = self.rule.delays.d
        self.f_alpha = 0.0
        self.f_kappa = 0.0
        self.reg_trace.reset()
        self.e_queue = deque([0.0] * d)
        self.z_queue = deque([0.0] * d)
        self.times = []

    def _delayed_elig(self, s: int, hist: SynapseHistory) -> float:
        """Produce e^{s-d} while advancing internal state to position s."""
        rule = self.rule
        d = rule.delays.d
        if self.strategy == STRATEGY_E_QUEUE:
            self.f_alpha = rule.alpha * self.f_alpha + hist.z_pre[s - 1]
            self.e_queue.append(hist.psi[s] * self.f_alpha)
            return self.e_queue.popleft()
        if self.strategy == STRATEGY_Z_QUEUE:
            self.z_queue.append(hist.z_pre[s - 1])
            z_del = self.z_queue.popleft()  # z^{s-d-1}
            self.f_alpha = rule.alpha * self.f_alpha + z_del
            psi_del = hist.psi[s - d] if s - d >= 1 else 0.0
            return psi_del * self.f_alpha
        # sparse timestamps: store s when z^{s-1} = 1, consume at s - d
        if hist.z_pre[s - 1] == 1.0:
            self.times.append(s)
        if self.times and self.times[0] == s - d:
            self.times.pop(0)
            self.f_alpha = rule.alpha * self.f_alpha + 1.0
        else:
            self.f_alpha = rule.alpha * self.f_alpha + 0.0
        psi_del = hist.psi[s - d] if s - d >= 1 else 0.0
        return psi_del * self.f_alpha

    def step(self, t: int, hist: SynapseHistory) -> float:
        """Gradient contribution g^t at loop step t (0 before signals exist)."""
        rule = self.rule
        s = t - rule.delays.d_ls
        if s < 1:
            return 0.0
        e_del = self._delayed_elig(s, hist)
        self.f_kappa = rule.kappa_filt * self.f_kappa + e_del
        g = hist.lsig[s] * self.f_kappa
        if rule.reg.enabled:
            trace = self.reg_trace.step(e_del)
            pos = s - rule.delays.d
            f_val = hist.f_rate[pos] if pos >= 1 else 0.0
            g += firing_rate_regularization(
                rule.reg, f_val, trace, sample_steps=rule.update_interval
            )
        return g

    def fast_forward(self, n: int) -> None:
        """Skip n steps of silent history: filters decay, contributions drop."""
        if n <= 0:
            return
        rule = self.rule
        self.f_alpha *= rule.alpha**n
        self.f_kappa *= rule.kappa_filt**n
        self.reg_trace.fast_forward(n)
        d = rule.delays.d
        for _ in range(min(n, d)):
            self.e_queue.append(0.0)
            self.e_queue.popleft()
        for _ in range(min(n, d)):
            self.z_queue.append(0.0)
            self.z_queue.popleft()
        self.times = []


class StepOptimizer:
    """Per-step weight-delta source; deltas are independent of the weight."""

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.adam = AdamState() if cfg.kind == OPT_ADAM else None

    def delta(self, grad: float) -> float:
        if self.adam is None:
            return -self.cfg.eta * grad
        return adam_step_delta(self.adam, grad, self.cfg)


@dataclass
class EpropSynapse:
    """One plastic synapse with its replay state.

    ``t_prev_spike`` is the last processed presynaptic arrival step (0 before
    the first spike); ``t_processed`` the last history step already consumed;
    ``next_boundary`` the first per-iteration update time not yet applied.
    """

    weight: float
    source: int = 0
    target: int = 0
    rule: GradientRule = field(default_factory=lambda: GradientRule(alpha=0.9, kappa_filt=0.0))
    policy: UpdatePolicy = field(default_factory=UpdatePolicy)
    strategy: str = STRATEGY_Z_QUEUE
    optimizer: StepOptimizer = None  # type: ignore[assignment]
    t_prev_spike: int = 0
    t_processed: int = 0
    grad_accum: float = 0.0
    delta_pending: float = 0.0
    next_boundary: int = None  # type: ignore[assignment]
    kernel: GradientKernel = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.kernel is None:
            self.kernel = GradientKernel(self.rule, self.strategy)
        if self.optimizer is None:
            self.optimizer = StepOptimizer(OptimizerConfig(kind=OPT_GD, eta=0.0))
        if self.next_boundary is None:
            first = self.policy.shift
            if first <= 0:
                first += self.policy.update_interval
            self.next_boundary = first


def time_driven_gradient(
    syn: EpropSynapse, hist: SynapseHistory, n_steps: int
) -> tuple[float, float]:
    """Time-driven gradient computation: accumulate over all steps, update once.

    Returns (accumulated gradient, updated weight).
    """
    if hist.n_steps < n_steps:
        raise HistoryUnavailableError("history shorter than requested step count")
    delta = 0.0
    for t in range(1, n_steps + 1):
        g = syn.kernel.step(t, hist)
        syn.grad_accum += g
        delta += syn.optimizer.delta(g)
    syn.weight += delta
    syn.t_processed = n_steps
    return syn.grad_accum, syn.weight


def time_driven_weight_update(
    syn: EpropSynapse, hist: SynapseHistory, n_steps: int
) -> float:
    """Time-driven per-step weight updates (truncated scheme): returns the weight."""
    if hist.n_steps < n_steps:
        raise HistoryUnavailableError("history shorter than requested step count")
    for t in range(1, n_steps + 1):
        g = syn.kernel.step(t, hist)
        syn.grad_accum += g
        syn.weight += syn.optimizer.delta(g)
    syn.t_processed = n_steps
    return syn.weight


def _apply_pending(syn: EpropSynapse) -> None:
    syn.weight += syn.delta_pending
    syn.delta_pending = 0.0


def _replay_window(syn: EpropSynapse, t_event: int, hist: SynapseHistory) -> None:
    """Process history steps (t_processed, t_event] with cutoff truncation."""
    start = syn.t_processed + 1
    if t_event > hist.n_steps:
        raise HistoryUnavailableError("event beyond available history")
    exact_end = t_event
    skipped = 0
    if syn.policy.mode == PER_SPIKE:
        cut_end = syn.t_processed + syn.rule.delays.cutoff
        if cut_end < t_event:
            exact_end = cut_end
            skipped = t_event - cut_end
    per_step_apply = syn.policy.mode == PER_SPIKE
    for t in range(start, exact_end + 1):
        # a pending per-iteration update lands between boundary step b and b+1,
        # so the first transmission needing the new weight uses the right value
        while syn.policy.mode == PER_ITERATION and t > syn.next_boundary:
            _apply_pending(syn)
            syn.next_boundary += syn.policy.update_interval
        g = syn.kernel.step(t, hist)
        syn.grad_accum += g
        d = syn.optimizer.delta(g)
        if per_step_apply:
            syn.weight += d
        else:
            syn.delta_pending += d
    if skipped:
        syn.kernel.fast_forward(skipped)
        for _ in range(skipped):
            d = syn.optimizer.delta(0.0)
            if per_step_apply:
                syn.weight += d
            else:
                syn.delta_pending += d
    syn.t_processed = t_event


def event_driven_update(
    syn: EpropSynapse, t_spike: int, hist: SynapseHistory, is_spike: bool = True
) -> float:
    """Event-driven weight update using a FIFO queue of presynaptic states.

    Called at a presynaptic spike arrival (or with ``is_spike=False`` to
    flush through ``t_spike``); replays the left-open interval
    (t_prev_spike, t_spike] from the archived postsynaptic history.
    """
    if is_spike and t_spike <= syn.t_prev_spike:
        raise ValueError("spike arrivals must be strictly increasing")
    _replay_window(syn, t_spike, hist)
    if syn.policy.mode == PER_SPIKE:
        _apply_pending(syn)
    if is_spike:
        syn.t_prev_spike = t_spike
    return syn.weight


def optimized_event_update(
    syn: EpropSynapse, t_spike: int, hist: SynapseHistory, is_spike: bool = True
) -> float:
    """Optimized event-driven update storing only presynaptic spike timestamps."""
    if syn.strategy != STRATEGY_TIMES:
        raise ValueError("optimized update requires the sparse-times strategy")
    return event_driven_update(syn, t_spike, hist, is_spike=is_spike)


def apply_iteration_boundary(syn: EpropSynapse) -> float:
    """Apply the pending accumulated update at a per-iteration boundary."""
    _apply_pending(syn)
    return syn.weight
