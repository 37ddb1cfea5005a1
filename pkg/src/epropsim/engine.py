"""Network construction and the hybrid simulation loop.

One forward simulator (time-driven neuron updates on a shared reference
timeline) drives two gradient paths: the time-driven mode accumulates every
plastic synapse's gradient inline at each step, while the event-driven mode
writes per-neuron history archives during the forward pass and replays them
afterwards, per completed sample under the fixed-interval policy or per
presynaptic spike under the per-spike policy.  Both paths execute the same
per-step arithmetic in the same order, so their losses agree to floating-point
precision; weights change only at iteration boundaries (fixed-interval) or at
spikes (per-spike).

Input and recurrent synapses share one fused kernel over a concatenated
presynaptic axis: the fused presynaptic state at position p is
u^p = [x^p, z^{p-1}], matching the one-step offset between the input and
recurrent eligibility recursions.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .archive import (
    MODE_FIXED_INTERVAL,
    MODE_PER_SPIKE,
    ArchiveConfig,
    ReadoutEpropHistory,
    RecurrentEpropHistory,
)
from .neurons import (
    RESET_SUBTRACT,
    RESET_TO_VALUE,
    LifParams,
    SurrogateSpec,
    surrogate_gradient,
)
from .optim import OPT_ADAM, AdamArrays, OptimizerConfig
from .plasticity import RATE_UNIT_STEPS, REG_EMA, REG_STATIC, RegularizationParams
from .signals import (
    LOSS_CROSS_ENTROPY,
    LOSS_MSE,
    learning_signal,
    prediction,
    random_feedback,
    softmax,
    step_loss_and_error,
)
from .synapses import PER_ITERATION, PER_SPIKE, DelayConfig
from .tasks import SampleSpec

VARIANT_BSSHSLM = "bsshslm2020"
VARIANT_EPROP_PLUS = "eprop-plus"
MODE_TIME = "time-driven"
MODE_EVENT = "event-driven"

PHASE_TRAIN = "train"
PHASE_EVAL = "eval"


@dataclass(frozen=True)
class ProjectionSpec:
    """Weight initialization and plasticity flag for one projection."""

    plastic: bool = True
    scale: float = 1.0  # weight std = scale / sqrt(fan_in)


@dataclass
class NetworkConfig:
    n_in: int = 100
    n_rec: int = 100
    n_out: int = 1
    lif: LifParams = field(default_factory=LifParams)
    alif_fraction: float = 0.0
    tau_m_out: float = 30.0
    proj_in: ProjectionSpec = field(default_factory=ProjectionSpec)
    proj_rec: ProjectionSpec = field(default_factory=ProjectionSpec)
    proj_out: ProjectionSpec = field(default_factory=ProjectionSpec)
    feedback_scale: float = 1.0
    loss: str = LOSS_MSE
    reg: RegularizationParams = field(default_factory=lambda: RegularizationParams(c_reg=0.0))
    opt: OptimizerConfig = field(default_factory=OptimizerConfig)
    delays: DelayConfig = field(default_factory=DelayConfig)
    update_mode: str = PER_ITERATION
    update_interval: int = 1000
    variant: str = VARIANT_BSSHSLM
    reset_between_iterations: bool = True
    elig_filter: float | None = None  # decoupled eligibility-trace filter constant
    seed: int = 1

    def __post_init__(self) -> None:
        if self.variant not in (VARIANT_BSSHSLM, VARIANT_EPROP_PLUS):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == VARIANT_BSSHSLM:
            if self.update_mode != PER_ITERATION:
                raise ValueError("bsshslm2020 requires the fixed-interval update policy")
            if self.reg.enabled and self.reg.mode == REG_EMA:
                raise ValueError("EMA regularization belongs to the eprop-plus variant")
        else:
            self.reset_between_iterations = False
            if self.loss == LOSS_CROSS_ENTROPY:
                raise ValueError("eprop-plus avoids the softmax exchange; use temporal-mse")
            if self.reg.enabled and self.reg.mode != REG_EMA:
                raise ValueError("eprop-plus uses the EMA regularization variant")
        if self.update_mode == PER_SPIKE:
            if self.variant != VARIANT_EPROP_PLUS:
                raise ValueError("per-spike updates require the eprop-plus variant")
            if self.opt.batch_size != 1:
                raise ValueError("per-spike updates are incompatible with mini-batches")
        if self.reg.enabled and self.reg.mode == REG_STATIC and self.opt.kind == OPT_ADAM:
            raise ValueError(
                "static regularization needs the end-of-sample rate and cannot feed "
                "per-step Adam; use the cumulative variant"
            )
        if not 0.0 <= self.alif_fraction <= 1.0:
            raise ValueError("alif_fraction must lie in [0, 1]")

    @property
    def kappa_out(self) -> float:
        return math.exp(-self.lif.dt / self.tau_m_out)

    @property
    def kappa_filt(self) -> float:
        """Eligibility-trace filter constant; decoupled when elig_filter is set."""
        if self.elig_filter is not None:
            return self.elig_filter
        return 0.0 if self.variant == VARIANT_EPROP_PLUS else self.kappa_out


def default_config(variant: str = VARIANT_BSSHSLM, **overrides) -> NetworkConfig:
    """Variant-appropriate defaults: surrogate kind, reset mode, regularization."""
    if variant == VARIANT_EPROP_PLUS:
        if "lif" not in overrides:
            overrides["lif"] = LifParams(
                surrogate=SurrogateSpec(kind="exponential", gamma=0.3, beta=1.7),
                reset_mode=RESET_TO_VALUE,
            )
        if "reg" not in overrides:
            overrides["reg"] = RegularizationParams(c_reg=0.0, mode=REG_EMA)
        return NetworkConfig(variant=variant, **overrides)
    return NetworkConfig(variant=variant, **overrides)


@dataclass
class SampleResult:
    loss: float
    prediction: int | None
    n_rec_spikes: int
    spikes: list[tuple[int, int]] | None = None  # (step, neuron)
    readout_trace: np.ndarray | None = None


@dataclass
class MetricsRow:
    iteration: int
    phase: str
    loss: float
    prediction_error: float | None
    spikes_recurrent: int
    runtime_s: float


class _SignalRing:
    """Bounded per-step vector history indexed by global step."""

    def __init__(self, depth: int, width: int):
        self.depth = max(depth, 1)
        self.buf = np.zeros((self.depth, width))
        self.t_last = 0
        self._zeros = np.zeros(width)

    def push(self, t: int, vec: np.ndarray) -> None:
        self.buf[t % self.depth] = vec
        self.t_last = t

    def get(self, t: int) -> np.ndarray:
        if t < 1 or t > self.t_last or t <= self.t_last - self.depth:
            return self._zeros
        return self.buf[t % self.depth]

    def rows(self, ts: np.ndarray) -> np.ndarray:
        """Stacked rows for the given steps; invalid steps give zero rows."""
        out = self.buf[ts % self.depth]
        bad = (ts < 1) | (ts > self.t_last) | (ts <= self.t_last - self.depth)
        if bad.any():
            out = out.copy()
            out[bad] = 0.0
        return out

    def clear(self) -> None:
        self.buf[:] = 0.0
        self.t_last = 0


class _FusedKernel:
    """Vectorized eligibility/gradient recursion over the fused presynaptic axis.

    The caller supplies, for each effective step, the fused presynaptic state
    u at the delayed position p, the surrogate gradients at p and p-1, the
    learning signal at s, and the firing-rate value at p; the kernel returns
    the (n_post, len(cols)) gradient contribution.  Firing-rate
    regularization applies to the recurrent columns only.
    """

    def __init__(
        self,
        n_post: int,
        n_in: int,
        alpha: float,
        rho: float,
        beta_a_vec: np.ndarray,
        kappa_filt: float,
        reg: RegularizationParams,
        update_interval: int,
    ):
        n_pre = n_in + n_post
        self.n_in = n_in
        self.alpha = alpha
        self.rho = rho
        self.beta_a = beta_a_vec
        self.alif = bool(np.any(beta_a_vec != 0.0))
        self.kappa_filt = kappa_filt
        self.reg = reg
        self.update_interval = update_interval
        self.eps_v = np.zeros(n_pre)
        self.eps_a = np.zeros((n_post, n_pre)) if self.alif else None
        self.filt = np.zeros((n_post, n_pre))
        dynamic_reg = reg.enabled and reg.mode != REG_STATIC
        self.reg_trace = np.zeros((n_post, n_post)) if dynamic_reg else None
        self.reg_n = 0
        self.sum_e = np.zeros((n_post, n_post)) if reg.enabled and reg.mode == REG_STATIC else None
        # scratch for the full-width fast path
        self._e = np.zeros((n_post, n_pre))
        self._g = np.zeros((n_post, n_pre))

    def reset(self) -> None:
        self.eps_v[:] = 0.0
        if self.eps_a is not None:
            self.eps_a[:] = 0.0
        self.filt[:] = 0.0
        if self.reg_trace is not None:
            self.reg_trace[:] = 0.0
        self.reg_n = 0
        if self.sum_e is not None:
            self.sum_e[:] = 0.0

    def _reg_step_full(self, g: np.ndarray, e: np.ndarray, f_p: np.ndarray) -> None:
        e_rec = e[:, self.n_in :]
        if self.reg.mode == REG_STATIC:
            self.sum_e += e_rec
            return
        if self.reg.mode == REG_EMA:
            b = self.reg.beta_reg
        else:
            b = self.reg_n / (self.reg_n + 1.0)
            self.reg_n += 1
        self.reg_trace *= b
        self.reg_trace += (1.0 - b) * e_rec
        deviation = f_p * RATE_UNIT_STEPS - self.reg.f_star
        g[:, self.n_in :] += (self.reg.c_reg * deviation)[:, None] * self.reg_trace

    def step_full(self, u_p, psi_p, psi_pm1, lsig_s, f_p) -> np.ndarray:
        """Full-width contribution with preallocated scratch (hot path)."""
        e, g = self._e, self._g
        if self.eps_a is not None:
            # eps_a <- (rho - psi_pm1*beta_a)[:,None]*eps_a + psi_pm1[:,None]*eps_v
            coeff = self.rho - psi_pm1 * self.beta_a
            self.eps_a *= coeff[:, None]
            self.eps_a += psi_pm1[:, None] * self.eps_v[None, :]
        self.eps_v *= self.alpha
        self.eps_v += u_p
        if self.eps_a is not None:
            np.multiply(self.beta_a[:, None], self.eps_a, out=e)
            np.subtract(self.eps_v[None, :], e, out=e)
            e *= psi_p[:, None]
        else:
            np.multiply(psi_p[:, None], self.eps_v[None, :], out=e)
        self.filt *= self.kappa_filt
        self.filt += e
        np.multiply(lsig_s[:, None], self.filt, out=g)
        if self.reg.enabled:
            self._reg_step_full(g, e, f_p)
        return g

    def step_cols(self, u_p, psi_p, psi_pm1, lsig_s, f_p, cols) -> np.ndarray:
        """Column-subset contribution (per-spike replay path)."""
        if self.eps_a is not None:
            eps_a = (self.rho - psi_pm1 * self.beta_a)[:, None] * self.eps_a[:, cols]
            eps_a += psi_pm1[:, None] * self.eps_v[None, cols]
            self.eps_a[:, cols] = eps_a
        self.eps_v[cols] = self.alpha * self.eps_v[cols] + u_p
        if self.eps_a is not None:
            e = psi_p[:, None] * (self.eps_v[None, cols] - self.beta_a[:, None] * self.eps_a[:, cols])
        else:
            e = psi_p[:, None] * self.eps_v[None, cols]
        filt = self.kappa_filt * self.filt[:, cols] + e
        self.filt[:, cols] = filt
        g = lsig_s[:, None] * filt
        if self.reg.enabled:
            rcols = cols - self.n_in
            valid = rcols >= 0
            if self.reg.mode == REG_STATIC:
                if valid.any():
                    self.sum_e[:, rcols[valid]] += e[:, valid]
            else:
                if self.reg.mode == REG_EMA:
                    b = self.reg.beta_reg
                else:
                    b = self.reg_n / (self.reg_n + 1.0)
                    self.reg_n += 1
                if valid.any():
                    rc = rcols[valid]
                    trace = b * self.reg_trace[:, rc] + (1.0 - b) * e[:, valid]
                    self.reg_trace[:, rc] = trace
                    deviation = f_p * RATE_UNIT_STEPS - self.reg.f_star
                    g[:, valid] += (self.reg.c_reg * deviation)[:, None] * trace
        return g

    def static_reg_matrix(self, f_sample: np.ndarray) -> np.ndarray:
        """End-of-sample static regularization (c/T)(f - f*) * sum(e), recurrent part."""
        dev = f_sample * RATE_UNIT_STEPS - self.reg.f_star
        out = (self.reg.c_reg / self.update_interval) * dev[:, None] * self.sum_e
        self.sum_e[:] = 0.0
        return out

    def fast_forward(self, n: int, cols=slice(None)) -> None:
        """Decay filter states through n silent, history-free steps."""
        self.eps_v[cols] *= self.alpha**n
        self.filt[:, cols] *= self.kappa_filt**n
        if self.eps_a is not None:
            self.eps_a[:, cols] *= self.rho**n
        if self.reg_trace is not None:
            if isinstance(cols, slice):
                rcols: slice | np.ndarray = cols
                apply = True
            else:
                rcols = cols - self.n_in
                rcols = rcols[rcols >= 0]
                apply = rcols.size > 0
            if self.reg.mode == REG_EMA:
                if apply:
                    self.reg_trace[:, rcols] *= self.reg.beta_reg**n
            else:
                if apply and self.reg_n + n > 0:
                    self.reg_trace[:, rcols] *= self.reg_n / (self.reg_n + n)
                self.reg_n += n


class _OutputKernel:
    """Filtered presynaptic trace F_kappa[z^{t-d}], shared across readouts."""

    def __init__(self, n_pre: int, kappa: float):
        self.kappa = kappa
        self.filt = np.zeros(n_pre)

    def reset(self) -> None:
        self.filt[:] = 0.0

    def step(self, z_del, err, cols=slice(None)) -> np.ndarray:
        filt = self.kappa * self.filt[cols] + z_del
        self.filt[cols] = filt
        return err[:, None] * filt[None, :]

    def fast_forward(self, n: int, cols=slice(None)) -> None:
        self.filt[cols] *= self.kappa**n


class _Plastic:
    """Weight matrix plus optimizer and gradient aggregation state."""

    def __init__(self, name: str, weights: np.ndarray, opt: OptimizerConfig, diag_offset: int | None = None):
        self.name = name
        self.w = weights
        self.opt = opt
        self.diag_offset = diag_offset  # column where the no-autapse diagonal starts
        self.adam = AdamArrays(weights.shape, opt) if opt.kind == OPT_ADAM else None
        self.grad_total = np.zeros_like(weights)
        self.delta_pending = np.zeros_like(weights)
        self.seq_buffer: np.ndarray | None = None

    def needs_seq_buffer(self) -> bool:
        return self.adam is not None and self.opt.batch_size > 1

    def ensure_seq_buffer(self, n_steps: int) -> None:
        shape = (n_steps, *self.w.shape)
        if self.seq_buffer is None or self.seq_buffer.shape != shape:
            self.seq_buffer = np.zeros(shape)

    def _mask_diag(self) -> None:
        if self.diag_offset is not None:
            n_post = self.w.shape[0]
            idx = np.arange(n_post)
            self.w[idx, self.diag_offset + idx] = 0.0

    def consume_step(self, s: int, g: np.ndarray, cols=slice(None)) -> None:
        """Route one per-step gradient contribution (1-based local step s)."""
        if self.needs_seq_buffer():
            self.seq_buffer[s - 1][:, cols] += g
        elif self.adam is not None:
            full = np.zeros_like(self.w)
            full[:, cols] = g
            self.delta_pending += self.adam.step_delta(full)
        self.grad_total[:, cols] += g

    def apply_iteration(self, n_batch: int, n_steps: int) -> None:
        """Apply the batch-averaged update at an iteration boundary."""
        if self.needs_seq_buffer():
            inv = 1.0 / n_batch
            for s in range(n_steps):
                self.delta_pending += self.adam.step_delta(self.seq_buffer[s] * inv)
            self.seq_buffer[:] = 0.0
            self.w += self.delta_pending
        elif self.adam is not None:
            self.w += self.delta_pending
        else:
            self.w += -self.opt.eta * (self.grad_total / n_batch)
        self._mask_diag()
        self.delta_pending[:] = 0.0
        self.grad_total[:] = 0.0

    def apply_per_spike(self, g: np.ndarray, cols) -> None:
        self.grad_total[:, cols] += g
        if self.adam is not None:
            full = np.zeros_like(self.w)
            full[:, cols] = g
            self.w += self.adam.step_delta(full)
        else:
            self.w[:, cols] += -self.opt.eta * g
        self._mask_diag()


class Network:
    """A recurrent e-prop network supporting both gradient modes."""

    def __init__(self, cfg: NetworkConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.rng_weights, self.rng_task = rng.spawn(2)
        i, j, k = cfg.n_in, cfg.n_rec, cfg.n_out
        self.n_in, self.n_rec, self.n_out = i, j, k
        r = self.rng_weights
        self.w_inrec = np.zeros((j, i + j))
        self.w_inrec[:, :i] = r.normal(0.0, cfg.proj_in.scale / math.sqrt(max(i, 1)), size=(j, i))
        self.w_inrec[:, i:] = r.normal(0.0, cfg.proj_rec.scale / math.sqrt(j), size=(j, j))
        self.w_in = self.w_inrec[:, :i]
        self.w_rec = self.w_inrec[:, i:]
        np.fill_diagonal(self.w_rec, 0.0)  # no autapses
        self.w_out = r.normal(0.0, cfg.proj_out.scale / math.sqrt(j), size=(k, j))
        self.feedback = random_feedback(j, k, r, scale=cfg.feedback_scale / math.sqrt(k))
        n_alif = int(round(cfg.alif_fraction * j))
        self.beta_a_vec = np.where(np.arange(j) < n_alif, cfg.lif.beta_a, 0.0)

        self.v = np.zeros(j)
        self.a = np.zeros(j)
        self.z = np.zeros(j)
        self.psi = np.zeros(j)
        self.y = np.zeros(k)
        self.f_rate = np.zeros(j)
        self.f_n = 0
        self.global_t = 0
        self._zq_fwd: deque[np.ndarray] = deque(
            [np.zeros(j) for _ in range(cfg.delays.d)], maxlen=max(cfg.delays.d, 1)
        )

        in_plastic = cfg.proj_in.plastic
        rec_plastic = cfg.proj_rec.plastic
        if in_plastic != rec_plastic and in_plastic:
            raise ValueError("input-only plasticity without recurrent plasticity is unsupported")
        self.plastics: dict[str, _Plastic] = {}
        self.inrec_kernel: _FusedKernel | None = None
        if rec_plastic:
            # input columns stay frozen when proj_in is static: their gradients
            # are computed but masked at apply time
            self.plastics["inrec"] = _Plastic("inrec", self.w_inrec, cfg.opt, diag_offset=i)
            self.inrec_kernel = self._make_kernel()
            self.in_frozen = not in_plastic
        else:
            self.in_frozen = False
        if cfg.proj_out.plastic:
            self.plastics["out"] = _Plastic("out", self.w_out, cfg.opt)
            self.out_kernel: _OutputKernel | None = _OutputKernel(j, cfg.kappa_out)
        else:
            self.out_kernel = None

        depth = cfg.delays.d_sync + 3
        if cfg.update_mode == PER_SPIKE:
            depth = max(depth, cfg.delays.cutoff + cfg.delays.d_sync + 4)
        self.logs = {
            "xz": _SignalRing(depth, i + j),
            "z": _SignalRing(depth, j),
            "psi": _SignalRing(depth, j),
            "lsig": _SignalRing(depth, j),
            "f": _SignalRing(depth, j),
            "err": _SignalRing(depth, k),
        }
        self._zeros_j = np.zeros(j)
        self._zeros_ij = np.zeros(i + j)
        self._zeros_k = np.zeros(k)

        arch_mode = MODE_PER_SPIKE if cfg.update_mode == PER_SPIKE else MODE_FIXED_INTERVAL
        self.arch_cfg = ArchiveConfig(
            mode=arch_mode, update_interval=cfg.update_interval, shift=0, cutoff=cfg.delays.cutoff
        )
        self._rec_arch_read = self.inrec_kernel is not None
        self._out_arch_read = "out" in self.plastics
        self.rec_arch = [RecurrentEpropHistory(self.arch_cfg) for _ in range(j)]
        self.out_arch = [ReadoutEpropHistory(self.arch_cfg) for _ in range(k)]
        self._arch_registered = False
        self._arch_front = 0

        # per-spike replay bookkeeping: last processed step per fused presyn group
        self.pre_processed = np.zeros(i + j, dtype=np.int64)
        self.out_processed = np.zeros(j, dtype=np.int64)

    def _make_kernel(self) -> _FusedKernel:
        cfg = self.cfg
        return _FusedKernel(
            self.n_rec,
            self.n_in,
            alpha=cfg.lif.alpha,
            rho=cfg.lif.rho,
            beta_a_vec=self.beta_a_vec,
            kappa_filt=cfg.kappa_filt,
            reg=cfg.reg,
            update_interval=cfg.update_interval,
        )

    # -- state management ------------------------------------------------------

    def reset_dynamics(self) -> None:
        """Zero neuron dynamics, traces, and signal rings (sample boundary)."""
        self.v[:] = 0.0
        self.a[:] = 0.0
        self.z[:] = 0.0
        self.psi[:] = 0.0
        self.y[:] = 0.0
        self.f_rate[:] = 0.0
        self.f_n = 0
        if self.inrec_kernel is not None:
            self.inrec_kernel.reset()
        if self.out_kernel is not None:
            self.out_kernel.reset()
        for ring in self.logs.values():
            ring.clear()
        for _ in range(self.cfg.delays.d):
            self._zq_fwd.append(np.zeros(self.n_rec))

    def weight_checksum(self) -> float:
        return float(np.sum(self.w_inrec) + np.sum(self.w_out))

    def weights_copy(self) -> dict[str, np.ndarray]:
        return {"in": self.w_in.copy(), "rec": self.w_rec.copy(), "out": self.w_out.copy()}

    # -- forward dynamics ----------------------------------------------------------

    def _forward_step(self, x_t, target_row, window_bit, forced):
        """Advance neurons, readout, loss, and learning signals by one step."""
        cfg = self.cfg
        p = cfg.lif
        z_prev = self.z
        self.a = p.rho * self.a + z_prev
        v_th_t = p.v_th + self.beta_a_vec * self.a
        xz = np.concatenate((x_t, z_prev))
        drive = self.w_inrec @ xz
        if p.reset_mode == RESET_SUBTRACT:
            self.v = p.alpha * self.v + drive - z_prev * v_th_t
        else:
            self.v = p.alpha * np.where(z_prev == 1.0, p.v_reset, self.v) + drive
        z_new = (self.v >= v_th_t).astype(float)
        if forced:
            z_new[list(forced)] = 1.0
        self.z = z_new
        self.psi = surrogate_gradient(self.v, v_th_t, p.surrogate)
        reg = cfg.reg
        if reg.mode == REG_EMA:
            self.f_rate = reg.beta_reg * self.f_rate + (1.0 - reg.beta_reg) * self.z
        else:
            b = self.f_n / (self.f_n + 1.0)
            self.f_rate = b * self.f_rate + (1.0 - b) * self.z
            self.f_n += 1
        d = cfg.delays.d
        if d == 0:
            z_del = self.z
        else:
            z_del = self._zq_fwd[0].copy()
            self._zq_fwd.append(self.z)
        self.y = cfg.kappa_out * self.y + self.w_out @ z_del
        loss_t, err = step_loss_and_error(cfg.loss, self.y, target_row, window_bit)
        lsig = learning_signal(self.feedback, err)
        return xz, loss_t, err, lsig, z_del

    def _push_logs(self, t, xz, lsig, err) -> None:
        logs = self.logs
        logs["xz"].push(t, xz)
        logs["z"].push(t, self.z)
        logs["psi"].push(t, self.psi)
        logs["lsig"].push(t, lsig)
        logs["f"].push(t, self.f_rate)
        logs["err"].push(t, err)

    # -- archives ---------------------------------------------------------------------

    def _archive_step(self, t: int, lsig, err) -> None:
        if self._rec_arch_read:
            psi, f = self.psi, self.f_rate
            for jdx, arch in enumerate(self.rec_arch):
                arch.append_written(t, psi[jdx], lsig[jdx], f[jdx])
        if self._out_arch_read:
            for kdx, arch in enumerate(self.out_arch):
                arch.append_written(t, err[kdx])

    def _register_archives_initial(self) -> None:
        if self._arch_registered:
            return
        in_deg = (self.n_in if ("inrec" in self.plastics and not self.in_frozen) else 0) + (
            self.n_rec - 1 if "inrec" in self.plastics else 0
        )
        if self._rec_arch_read:
            for arch in self.rec_arch:
                for _ in range(in_deg):
                    arch.register_initial(0)
        if self._out_arch_read:
            for arch in self.out_arch:
                for _ in range(self.n_rec):
                    arch.register_initial(0)
        self._arch_registered = True
        self._arch_front = 0

    def _advance_archives(self, t_old: int, t_new: int) -> None:
        """Move every synapse's registration forward, then clean the archives."""
        arches = (self.rec_arch if self._rec_arch_read else []) + (
            self.out_arch if self._out_arch_read else []
        )
        for arch in arches:
            uh = arch.update_history
            n = uh.counter(t_old)
            for _ in range(n):
                uh.register_update(t_old, t_new)
            arch.erase_used_history()
        self._arch_front = t_new

    # -- sample runners ------------------------------------------------------------------

    def run_sample(
        self,
        sample: SampleSpec,
        mode: str = MODE_TIME,
        learn: bool = True,
        forced_spikes: dict[int, list[int]] | None = None,
        record_spikes: bool = False,
    ) -> SampleResult:
        if mode not in (MODE_TIME, MODE_EVENT):
            raise ValueError(f"unknown mode {mode!r}")
        if self.cfg.update_mode == PER_ITERATION and sample.n_steps != self.cfg.update_interval:
            raise ValueError("fixed-interval policy requires sample duration == update_interval")
        if learn:
            for plast in self.plastics.values():
                if plast.needs_seq_buffer():
                    plast.ensure_seq_buffer(self.cfg.update_interval)
        if self.cfg.update_mode == PER_SPIKE:
            return self._run_sample_per_spike(sample, mode, learn, forced_spikes, record_spikes)
        return self._run_sample_fixed(sample, mode, learn, forced_spikes, record_spikes)

    # ---- fixed-interval policy ----

    def _run_sample_fixed(self, sample, mode, learn, forced_spikes, record_spikes):
        cfg = self.cfg
        n_steps = sample.n_steps
        x = sample.spike_matrix()
        targets, window = sample.target.values, sample.target.window
        d, d_ls, d_sync = cfg.delays.d, cfg.delays.d_ls, cfg.delays.d_sync
        time_grad = learn and mode == MODE_TIME and bool(self.plastics)
        event = learn and mode == MODE_EVENT and bool(self.plastics)
        if event:
            self._register_archives_initial()

        loss = 0.0
        signals_trace = np.zeros((n_steps, cfg.n_out))
        spikes: list[tuple[int, int]] = []
        n_spikes = 0
        t0 = self.global_t

        if event:
            # local logs with d_sync+1 carry rows holding the pre-sample tail
            # (zeros under per-sample resets)
            carry = d_sync + 1
            i, j, k = self.n_in, self.n_rec, self.n_out
            xz_log = np.zeros((carry + n_steps + 1, i + j))
            z_log = np.zeros((carry + n_steps + 1, j))
            psi_log = np.zeros((carry + n_steps + 1, j))
            lsig_log = np.zeros((carry + n_steps + 1, j))
            f_log = np.zeros((carry + n_steps + 1, j))
            err_log = np.zeros((carry + n_steps + 1, k))
            if not cfg.reset_between_iterations:
                for back in range(carry + 1):
                    tg = t0 - back
                    row = carry - back
                    xz_log[row] = self.logs["xz"].get(tg)
                    z_log[row] = self.logs["z"].get(tg)
                    psi_log[row] = self.logs["psi"].get(tg)
                    lsig_log[row] = self.logs["lsig"].get(tg)
                    f_log[row] = self.logs["f"].get(tg)
                    err_log[row] = self.logs["err"].get(tg)

        for t in range(1, n_steps + 1):
            forced = set(forced_spikes.get(t, [])) if forced_spikes else None
            x_t = x[t - 1]
            xz, loss_t, err, lsig, z_del = self._forward_step(
                x_t, targets[t - 1], int(window[t - 1]), forced
            )
            loss += loss_t
            n_spikes += int(self.z.sum())
            if record_spikes:
                spikes.extend((t, int(jj)) for jj in np.flatnonzero(self.z))
            signals_trace[t - 1] = softmax(self.y) if cfg.loss == LOSS_CROSS_ENTROPY else self.y
            self.global_t += 1
            tg = self.global_t
            self._push_logs(tg, xz, lsig, err)

            if event:
                self._archive_step(tg, lsig, err)
                row = carry + t
                xz_log[row] = xz
                z_log[row] = self.z
                psi_log[row] = self.psi
                lsig_log[row] = lsig
                f_log[row] = self.f_rate
                err_log[row] = err
            if time_grad:
                # contributions pair L^{t-d_ls} with the trace at t-d-d_ls; the
                # first d_ls pairings of a sample are dropped in both modes,
                # keeping the per-iteration chunking well defined
                s_local = t - d_ls
                if s_local >= 1 and self.inrec_kernel is not None:
                    pp = tg - d_sync
                    g = self.inrec_kernel.step_full(
                        self.logs["xz"].get(pp),
                        self.logs["psi"].get(pp),
                        self.logs["psi"].get(pp - 1),
                        self.logs["lsig"].get(tg - d_ls),
                        self.logs["f"].get(pp),
                    )
                    self.plastics["inrec"].consume_step(s_local, g)
                if "out" in self.plastics:
                    g = self.out_kernel.step(z_del, err)
                    self.plastics["out"].consume_step(t, g)

        if time_grad:
            self._finish_static_reg(self.f_rate)
        if event:
            self._replay_sample(t0, n_steps, carry, xz_log, z_log, psi_log, lsig_log, f_log, err_log)

        pred = None
        if window.sum() and cfg.n_out > 1:
            pred = prediction(signals_trace, window)
        return SampleResult(loss, pred, n_spikes, spikes if record_spikes else None, signals_trace)

    def _finish_static_reg(self, f_sample: np.ndarray) -> None:
        if not (self.cfg.reg.enabled and self.cfg.reg.mode == REG_STATIC):
            return
        if self.inrec_kernel is not None:
            reg_mat = self.inrec_kernel.static_reg_matrix(f_sample)
            self.plastics["inrec"].grad_total[:, self.n_in :] += reg_mat

    def _replay_sample(self, t0, n_steps, carry, xz_log, z_log, psi_log, lsig_log, f_log, err_log):
        """Event-driven per-sample replay: identical arithmetic, deferred.

        Silent presynaptic columns could be skipped under per-sample resets
        with plain GD (their gradients are identically zero); the full-width
        replay is kept so the arithmetic matches the time-driven path
        bit-for-bit in every configuration.
        """
        cfg = self.cfg
        d, d_ls, d_sync = cfg.delays.d, cfg.delays.d_ls, cfg.delays.d_sync
        if self._rec_arch_read:
            for arch in self.rec_arch:
                arch.get_range(t0, t0 + n_steps)
        if self._out_arch_read:
            for arch in self.out_arch:
                arch.get_range(t0, t0 + n_steps)
        if self.inrec_kernel is not None:
            kern, plast = self.inrec_kernel, self.plastics["inrec"]
            for t in range(1, n_steps + 1):
                s = t - d_ls
                if s < 1:
                    continue
                row = carry + t - d_sync
                g = kern.step_full(
                    xz_log[row], psi_log[row], psi_log[row - 1], lsig_log[carry + s], f_log[row]
                )
                plast.consume_step(s, g)
        if "out" in self.plastics:
            plast, kern = self.plastics["out"], self.out_kernel
            for t in range(1, n_steps + 1):
                g = kern.step(z_log[carry + t - d], err_log[carry + t])
                plast.consume_step(t, g)
        self._finish_static_reg(f_log[carry + n_steps])
        self._advance_archives(self._arch_front, t0 + n_steps)

    # ---- per-spike policy (eprop-plus) ----

    def _run_sample_per_spike(self, sample, mode, learn, forced_spikes, record_spikes):
        """Per-spike policy: weights update at every presynaptic spike.

        In event-driven mode each presynaptic group replays its left-open
        inter-spike window at spike arrival (or at the cutoff horizon, which
        keeps the rolling logs bounded); in time-driven mode every synapse
        advances synchronously each step, the per-step truncated scheme.
        """
        cfg = self.cfg
        n_steps = sample.n_steps
        x = sample.spike_matrix()
        targets, window = sample.target.values, sample.target.window
        loss = 0.0
        signals_trace = np.zeros((n_steps, cfg.n_out))
        spikes: list[tuple[int, int]] = []
        n_spikes = 0
        event = learn and mode == MODE_EVENT and bool(self.plastics)
        time_grad = learn and mode == MODE_TIME and bool(self.plastics)
        n_in = self.n_in

        for t_local in range(1, n_steps + 1):
            t = self.global_t + 1
            forced = set(forced_spikes.get(t_local, [])) if forced_spikes else None
            x_t = x[t_local - 1]
            if event and self.inrec_kernel is not None:
                # input-synapse updates trigger on arrival, before the spike
                # lands on the membrane; their windows end at the last
                # archived step
                for idx in np.flatnonzero(x_t):
                    self._replay_group_inrec(int(idx), t - 1)
            xz, loss_t, err, lsig, z_del = self._forward_step(
                x_t, targets[t_local - 1], int(window[t_local - 1]), forced
            )
            loss += loss_t
            n_spikes += int(self.z.sum())
            if record_spikes:
                spikes.extend((t_local, int(jj)) for jj in np.flatnonzero(self.z))
            signals_trace[t_local - 1] = self.y
            self.global_t = t
            self._push_logs(t, xz, lsig, err)
            if event:
                arrivals = np.flatnonzero(self.z)
                for idx in arrivals:
                    self._replay_group_inrec(n_in + int(idx), t)
                    self._replay_group_out(int(idx), t)
                self._horizon_replay(t)
            elif time_grad:
                self._per_step_truncated(t)

        pred = None
        if window.sum() and cfg.n_out > 1:
            pred = prediction(signals_trace, window)
        return SampleResult(loss, pred, n_spikes, spikes if record_spikes else None, signals_trace)

    def _per_step_truncated(self, t: int) -> None:
        """Synchronous per-step weight updates (time-driven per-spike analogue)."""
        cfg = self.cfg
        d, d_ls, d_sync = cfg.delays.d, cfg.delays.d_ls, cfg.delays.d_sync
        s = t - d_ls
        logs = self.logs
        if s >= 1 and self.inrec_kernel is not None:
            pp = t - d_sync
            g = self.inrec_kernel.step_full(
                logs["xz"].get(pp),
                logs["psi"].get(pp),
                logs["psi"].get(pp - 1),
                logs["lsig"].get(s),
                logs["f"].get(pp),
            )
            self.plastics["inrec"].apply_per_spike(g, slice(None))
        if "out" in self.plastics:
            g = self.out_kernel.step(logs["z"].get(t - d), logs["err"].get(t))
            self.plastics["out"].apply_per_spike(g, slice(None))
        self.pre_processed[:] = t
        self.out_processed[:] = t

    def _horizon_replay(self, t: int) -> None:
        """Eagerly replay groups whose pending window reached the cutoff."""
        cutoff = self.cfg.delays.cutoff
        if self.inrec_kernel is not None:
            for idx in np.flatnonzero(t - self.pre_processed >= cutoff + 1):
                self._replay_group_inrec(int(idx), t)
        if "out" in self.plastics:
            for idx in np.flatnonzero(t - self.out_processed >= cutoff + 1):
                self._replay_group_out(int(idx), t)

    def _replay_group_inrec(self, pre_idx: int, t: int) -> None:
        """Replay one fused presynaptic group's window (processed, t].

        LIF networks with plain GD take a vectorized path over the window
        (constant-coefficient recursions via lfilter); ALIF or Adam
        configurations fall back to the per-step kernel.
        """
        cfg = self.cfg
        d_ls, d_sync = cfg.delays.d_ls, cfg.delays.d_sync
        start = int(self.pre_processed[pre_idx]) + 1
        if t < start:
            return
        kern, plast = self.inrec_kernel, self.plastics["inrec"]
        cols = np.array([pre_idx])
        exact_end = min(start + cfg.delays.cutoff - 1, t)
        logs = self.logs
        vector_path = (
            kern.eps_a is None and plast.adam is None and exact_end - start >= 3
        )
        if vector_path:
            tts = np.arange(start, exact_end + 1)
            pps = tts - d_sync
            ss = tts - d_ls
            u_win = logs["xz"].rows(pps)[:, pre_idx]
            psi_win = logs["psi"].rows(pps)
            lsig_win = logs["lsig"].rows(ss)
            lsig_win[ss < 1] = 0.0
            ev0 = kern.eps_v[pre_idx]
            ev = lfilter([1.0], [1.0, -kern.alpha], u_win, zi=np.array([kern.alpha * ev0]))[0]
            e_win = psi_win * ev[:, None]
            kf = kern.kappa_filt
            if kf == 0.0:
                filt_win = e_win
            else:
                zi = (kf * kern.filt[:, pre_idx])[None, :]
                filt_win = lfilter([1.0], [1.0, -kf], e_win, axis=0, zi=zi)[0]
            g_win = lsig_win * filt_win
            if kern.reg.enabled and pre_idx >= kern.n_in:
                rcol = pre_idx - kern.n_in
                b = kern.reg.beta_reg
                zi = (b * kern.reg_trace[:, rcol])[None, :]
                trace_win = lfilter([1.0 - b], [1.0, -b], e_win, axis=0, zi=zi)[0]
                f_win = logs["f"].rows(pps)
                dev = f_win * RATE_UNIT_STEPS - kern.reg.f_star
                g_win = g_win + kern.reg.c_reg * dev * trace_win
                kern.reg_trace[:, rcol] = trace_win[-1]
            kern.eps_v[pre_idx] = ev[-1]
            kern.filt[:, pre_idx] = filt_win[-1]
            g_total = g_win.sum(axis=0)
            plast.apply_per_spike(g_total[:, None], cols)
        else:
            for tt in range(start, exact_end + 1):
                s = tt - d_ls
                if s < 1:
                    continue
                pp = tt - d_sync
                u_p = logs["xz"].get(pp)[cols]
                g = kern.step_cols(
                    u_p,
                    logs["psi"].get(pp),
                    logs["psi"].get(pp - 1),
                    logs["lsig"].get(s),
                    logs["f"].get(pp),
                    cols,
                )
                plast.apply_per_spike(g, cols)
        if t > exact_end:
            kern.fast_forward(t - exact_end, cols)
        self.pre_processed[pre_idx] = t

    def _replay_group_out(self, pre_idx: int, t: int) -> None:
        if "out" not in self.plastics:
            return
        cfg = self.cfg
        d = cfg.delays.d
        start = int(self.out_processed[pre_idx]) + 1
        if t < start:
            return
        kern, plast = self.out_kernel, self.plastics["out"]
        cols = np.array([pre_idx])
        exact_end = min(start + cfg.delays.cutoff - 1, t)
        logs = self.logs
        if plast.adam is None and exact_end - start >= 3:
            tts = np.arange(start, exact_end + 1)
            z_win = logs["z"].rows(tts - d)[:, pre_idx]
            err_win = logs["err"].rows(tts)
            zi = np.array([kern.kappa * kern.filt[pre_idx]])
            filt_win = lfilter([1.0], [1.0, -kern.kappa], z_win, zi=zi)[0]
            kern.filt[pre_idx] = filt_win[-1]
            g_total = err_win.T @ filt_win  # (K,)
            plast.apply_per_spike(g_total[:, None], cols)
        else:
            for tt in range(start, exact_end + 1):
                z_del = logs["z"].get(tt - d)[cols]
                g = kern.step(z_del, logs["err"].get(tt), cols)
                plast.apply_per_spike(g, cols)
        if t > exact_end:
            kern.fast_forward(t - exact_end, cols)
        self.out_processed[pre_idx] = t

    def flush_per_spike(self) -> None:
        """Bring every pending per-spike window up to the current step."""
        if self.cfg.update_mode != PER_SPIKE:
            return
        t = self.global_t
        if self.inrec_kernel is not None:
            for idx in np.flatnonzero(self.pre_processed < t):
                self._replay_group_inrec(int(idx), t)
        if "out" in self.plastics:
            for idx in np.flatnonzero(self.out_processed < t):
                self._replay_group_out(int(idx), t)

    # -- iteration-level API ----------------------------------------------------------

    def apply_iteration_updates(self) -> None:
        for plast in self.plastics.values():
            if plast.name == "inrec" and self.in_frozen:
                plast.grad_total[:, : self.n_in] = 0.0
                plast.delta_pending[:, : self.n_in] = 0.0
                if plast.seq_buffer is not None:
                    plast.seq_buffer[:, :, : self.n_in] = 0.0
            plast.apply_iteration(self.cfg.opt.batch_size, self.cfg.update_interval)


def build_network(cfg: NetworkConfig) -> Network:
    """Instantiate populations, projections, and feedback; deterministic in the seed."""
    return Network(cfg)


def run_training(
    net: Network,
    sample_stream,
    n_iterations: int,
    mode: str = MODE_TIME,
    eval_every: int = 0,
    eval_samples: int = 0,
) -> list[MetricsRow]:
    """Mini-batch training loop with optional frozen-plasticity evaluations.

    ``sample_stream(iteration, index, training)`` must return a SampleSpec;
    evaluation iterations freeze plasticity and never mutate weights.
    """
    cfg = net.cfg
    rows: list[MetricsRow] = []
    n_batch = cfg.opt.batch_size
    for it in range(n_iterations):
        t_start = time.perf_counter()
        losses, errors = [], []
        spikes = 0
        for b in range(n_batch):
            if cfg.reset_between_iterations:
                net.reset_dynamics()
            sample = sample_stream(it, b, True)
            res = net.run_sample(sample, mode=mode, learn=True)
            losses.append(res.loss)
            spikes += res.n_rec_spikes
            if res.prediction is not None and sample.label is not None:
                errors.append(float(res.prediction != sample.label))
        if cfg.update_mode == PER_ITERATION:
            net.apply_iteration_updates()
        runtime = time.perf_counter() - t_start
        rows.append(
            MetricsRow(
                iteration=it,
                phase=PHASE_TRAIN,
                loss=float(np.mean(losses)),
                prediction_error=float(np.mean(errors)) if errors else None,
                spikes_recurrent=spikes,
                runtime_s=runtime,
            )
        )
        if eval_every and (it + 1) % eval_every == 0 and eval_samples:
            rows.append(run_evaluation(net, sample_stream, it, eval_samples, mode))
    return rows


def run_evaluation(net: Network, sample_stream, iteration: int, n_samples: int, mode: str) -> MetricsRow:
    """Frozen-plasticity evaluation pass; weights are never mutated."""
    t_start = time.perf_counter()
    net.flush_per_spike()
    t_eval_start = net.global_t
    losses, errors = [], []
    spikes = 0
    for b in range(n_samples):
        if net.cfg.reset_between_iterations:
            net.reset_dynamics()
        sample = sample_stream(iteration, b, False)
        res = net.run_sample(sample, mode=mode, learn=False)
        losses.append(res.loss)
        spikes += res.n_rec_spikes
        if res.prediction is not None and sample.label is not None:
            errors.append(float(res.prediction != sample.label))
    if net.cfg.update_mode == PER_SPIKE:
        # plasticity was frozen across the eval span: park the replay pointers
        # and decay the traces through it
        span = net.global_t - t_eval_start
        if span:
            if net.inrec_kernel is not None:
                net.inrec_kernel.fast_forward(span)
            if net.out_kernel is not None:
                net.out_kernel.fast_forward(span)
            net.pre_processed[:] = net.global_t
            net.out_processed[:] = net.global_t
    return MetricsRow(
        iteration=iteration,
        phase=PHASE_EVAL,
        loss=float(np.mean(losses)),
        prediction_error=float(np.mean(errors)) if errors else None,
        spikes_recurrent=spikes,
        runtime_s=time.perf_counter() - t_start,
    )
