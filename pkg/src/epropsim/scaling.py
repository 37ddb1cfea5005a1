"""Weak/strong scaling harness on the ignore-and-fire workload.

Neurons spike periodically at randomized phases and ignore their inputs, so
spike trains are activity-invariant: identical across worker counts and
between static and plastic runs.  The plastic configuration exercises the
per-spike recurrent weight-update arithmetic (eligibility decay, filtered
trace, learning-signal products, cutoff truncation) on every delivered spike;
the static configuration only delivers spikes.  Workers are deterministic
round-robin partitions of neurons processed within a single process; synapse
work runs on the owner of the postsynaptic neuron and reduces sequentially
per synapse, so per-synapse results are worker-count independent.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .neurons import SurrogateSpec, surrogate_gradient
from .tasks import ScalingNetwork


@dataclass
class ScalingResult:
    workers: int
    plastic: bool
    duration_s: float
    runtime_s: float
    real_time_factor: float
    rate_hz: float
    n_spikes: int
    spike_hash: str


def _csr_by_source(src: np.ndarray, dst: np.ndarray, n_src: int):
    """Group edge arrays by source for spike-triggered delivery."""
    order = np.argsort(src, kind="stable")
    src_sorted = src[order]
    ptr = np.searchsorted(src_sorted, np.arange(n_src + 1))
    return order, ptr


def _gather_targets(ptr, dst_sorted, w_sorted, sources):
    if len(sources) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    parts_d = [dst_sorted[ptr[s] : ptr[s + 1]] for s in sources]
    parts_w = [w_sorted[ptr[s] : ptr[s + 1]] for s in sources]
    return np.concatenate(parts_d), np.concatenate(parts_w)


def run_scaling_benchmark(
    net: ScalingNetwork,
    duration_s: float = 20.0,
    workers: int = 1,
    plastic: bool = True,
    seed: int = 12345,
    cutoff: int = 64,
    kappa_filt: float = 0.85,
    eta: float = 1e-5,
    tau_m_out: float = 100.0,
) -> ScalingResult:
    """Simulate the ignore-and-fire network and report runtime metrics.

    Plasticity follows the per-spike policy on the recurrent projection (the
    only plastic one): each delivered spike replays the presynaptic group's
    inter-spike window up to the cutoff against the rolling learning-signal
    history, filters the eligibility trace, and applies an immediate
    gradient-descent update per synapse.
    """
    n_steps = int(round(duration_s * 1000.0 / net.dt_ms))
    j, i, k = net.n_rec, net.n_in, net.n_out
    period = net.period
    phases = net.phases
    rng_in = np.random.default_rng(seed)
    p_in = net.input_rate_hz * net.dt_ms / 1000.0

    slices = [np.arange(w, j, workers) for w in range(workers)]

    rec_order, rec_ptr = _csr_by_source(net.rec_src, net.rec_dst, j)
    rec_dst_sorted = net.rec_dst[rec_order]
    rec_w_sorted = np.full(rec_dst_sorted.shape[0], 0.1)
    in_order, in_ptr = _csr_by_source(net.in_src, net.in_dst, i)
    in_dst_sorted = net.in_dst[in_order]
    in_w_sorted = np.full(in_dst_sorted.shape[0], 0.1)
    out_order, out_ptr = _csr_by_source(net.out_src, net.out_dst, j)
    out_dst_sorted = net.out_dst[out_order]
    out_w_sorted = np.full(out_dst_sorted.shape[0], 0.05)

    if plastic:
        alpha = math.exp(-net.dt_ms / 30.0)
        kappa = math.exp(-net.dt_ms / tau_m_out)
        # ignore-and-fire units have a constant pseudo-voltage, so the
        # surrogate gradient is one constant per neuron
        psi_const = float(
            surrogate_gradient(0.0, 0.6, SurrogateSpec(kind="exponential", gamma=0.3, beta=1.7))
        )
        filt = np.zeros(rec_dst_sorted.shape[0])
        eps_v = np.zeros(j)
        t_prev = np.zeros(j, dtype=np.int64)
        depth = cutoff + 4
        lsig_ring = np.zeros((depth, j))
        fb_b = np.full(net.fb_src.shape[0], 0.5)
        y = np.zeros(k)
        omega = 2.0 * math.pi / 1000.0
        al_pows = alpha ** np.arange(cutoff + 2)
        kf_pows = kappa_filt ** np.arange(cutoff + 2)
        b_taps, a_taps = np.array([1.0]), np.array([1.0, -kappa_filt])

    drive = np.zeros(j)
    digest = hashlib.sha256()
    n_spikes = 0

    t_start = time.perf_counter()
    for t in range(1, n_steps + 1):
        # (1) parallel neuron updates per worker, (2) deterministic spike merge
        spiking_parts = [sl[(phases[sl] + t) % period == 0] for sl in slices]
        spiking = np.sort(np.concatenate(spiking_parts))
        n_spikes += spiking.size
        digest.update(spiking.astype(np.int64).tobytes())

        x_spikes = np.flatnonzero(rng_in.random(i) < p_in)

        # (3) spike delivery; drives integrate but the neurons ignore them
        d_idx, d_w = _gather_targets(in_ptr, in_dst_sorted, in_w_sorted, x_spikes)
        r_idx, r_w = _gather_targets(rec_ptr, rec_dst_sorted, rec_w_sorted, spiking)
        drive = np.bincount(
            np.concatenate((d_idx, r_idx)), weights=np.concatenate((d_w, r_w)), minlength=j
        )
        o_idx, o_w = _gather_targets(out_ptr, out_dst_sorted, out_w_sorted, spiking)
        y_drive = np.bincount(o_idx, weights=o_w, minlength=k)[:k]

        if plastic:
            y = kappa * y + y_drive
            target = np.sin(t * omega + np.arange(k))
            err = y - target
            lsig = np.bincount(net.fb_dst, weights=fb_b * err[net.fb_src], minlength=j)
            lsig_ring[t % depth] = lsig

            # (4) event-driven synapse updates on the owning worker
            for s in spiking:
                gap = int(t - t_prev[s])
                win = min(gap, cutoff)
                start = t - win + 1
                skipped = gap - win
                ev0 = eps_v[s]
                if skipped > 0:
                    # the spike at t_prev+1 lands inside the skipped span;
                    # the span can exceed the power table, so use scalar powers
                    ev_base = alpha**skipped * ev0 + alpha ** (skipped - 1)
                    e_shared = psi_const * ev_base * al_pows[1 : win + 1]
                    eps_v[s] = ev_base * al_pows[win]
                else:
                    e_shared = psi_const * (al_pows[1 : win + 1] * ev0 + al_pows[:win])
                    eps_v[s] = al_pows[win] * ev0 + al_pows[win - 1]
                shared = lfilter(b_taps, a_taps, e_shared)
                lo, hi = rec_ptr[s], rec_ptr[s + 1]
                fl = filt[lo:hi]
                if skipped > 0:
                    fl = fl * kappa_filt**skipped
                tgt = rec_dst_sorted[lo:hi]
                rows = (np.arange(start, t + 1) % depth)[:, None]
                lrows = lsig_ring[rows, tgt[None, :]]  # (win, n_targets)
                a_coef = lrows.T @ kf_pows[1 : win + 1]
                b_coef = lrows.T @ shared
                grad = fl * a_coef + b_coef
                filt[lo:hi] = fl * kf_pows[win] + shared[-1]
                rec_w_sorted[lo:hi] -= eta * grad
                t_prev[s] = t

    runtime = time.perf_counter() - t_start
    simulated = n_steps * net.dt_ms / 1000.0
    rate_hz = n_spikes / (j * simulated)
    return ScalingResult(
        workers=workers,
        plastic=plastic,
        duration_s=simulated,
        runtime_s=runtime,
        real_time_factor=simulated / runtime,
        rate_hz=rate_hz,
        n_spikes=int(n_spikes),
        spike_hash=digest.hexdigest(),
    )
