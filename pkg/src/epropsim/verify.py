"""Self-check suite: algorithm equality, index flipping, finite differences.

Each check returns (name, passed, detail); the CLI ``verify`` subcommand runs
them all and reports pass/fail per line.  These are the oracle-style checks
that gate correctness of the gradient machinery.
"""

from __future__ import annotations

import numpy as np

from .engine import MODE_TIME, NetworkConfig, ProjectionSpec, build_network
from .neurons import LifParams
from .optim import OptimizerConfig
from .plasticity import index_flip_sums, offline_recurrent_gradient
from .synapses import (
    PER_ITERATION,
    PER_SPIKE,
    STRATEGY_E_QUEUE,
    STRATEGY_TIMES,
    STRATEGY_Z_QUEUE,
    DelayConfig,
    EpropSynapse,
    GradientRule,
    StepOptimizer,
    SynapseHistory,
    UpdatePolicy,
    apply_iteration_boundary,
    event_driven_update,
    optimized_event_update,
    time_driven_gradient,
    time_driven_weight_update,
)
from .tasks import gen_pattern_task


def _drive_events(syn, hist, n_steps, update_fn):
    arrivals = [t for t in hist.arrival_times() if t <= n_steps]
    for t in arrivals:
        update_fn(syn, t, hist)
    if not arrivals or arrivals[-1] < n_steps:
        update_fn(syn, n_steps, hist, is_spike=False)


def check_algorithm_equality(n_instances: int = 50, seed: int = 0) -> tuple[str, bool, str]:
    """Algorithms 1/3/5 agree bit-for-bit; 2/4 final weights agree to 1e-12."""
    rng = np.random.default_rng(seed)
    worst24 = 0.0
    for _ in range(n_instances):
        n_steps = int(rng.integers(20, 201))
        d = int(rng.integers(0, 3))
        d_ls = int(rng.integers(0, 3))
        hist = SynapseHistory.random(rng, n_steps, p_spike=0.15)
        delays = DelayConfig(d=d, d_ls=d_ls, cutoff=n_steps + 1)
        rule = GradientRule(alpha=0.8, kappa_filt=0.7, delays=delays, update_interval=n_steps)
        pol = UpdatePolicy(mode=PER_ITERATION, update_interval=n_steps)
        opt = OptimizerConfig(kind="gd", eta=0.01)

        def mk(strategy, policy=pol):
            return EpropSynapse(weight=0.0, rule=rule, policy=policy, strategy=strategy,
                                optimizer=StepOptimizer(opt))

        s1 = mk(STRATEGY_E_QUEUE)
        g1, _ = time_driven_gradient(s1, hist, n_steps)
        s3 = mk(STRATEGY_Z_QUEUE)
        _drive_events(s3, hist, n_steps, event_driven_update)
        apply_iteration_boundary(s3)
        s5 = mk(STRATEGY_TIMES)
        _drive_events(s5, hist, n_steps, optimized_event_update)
        apply_iteration_boundary(s5)
        if not (s3.grad_accum == g1 and s5.grad_accum == g1):
            return ("algorithm-equality", False,
                    f"gradient mismatch: alg1={g1} alg3={s3.grad_accum} alg5={s5.grad_accum}")

        spol = UpdatePolicy(mode=PER_SPIKE, update_interval=n_steps)
        s2 = mk(STRATEGY_E_QUEUE, spol)
        w2 = time_driven_weight_update(s2, hist, n_steps)
        s4 = mk(STRATEGY_Z_QUEUE, spol)
        _drive_events(s4, hist, n_steps, event_driven_update)
        worst24 = max(worst24, abs(s4.weight - w2))
    ok = worst24 < 1e-12
    return ("algorithm-equality", ok, f"max |w_alg2 - w_alg4| = {worst24:.3e}")


def check_index_flipping(n_trials: int = 50, seed: int = 1) -> tuple[str, bool, str]:
    """Interchanging the summation indices leaves the double sum unchanged."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_trials):
        n = int(rng.integers(2, 40))
        a = rng.normal(size=(n, n))
        lhs, rhs = index_flip_sums(a)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-12))
    ok = worst < 1e-10
    return ("index-flipping", ok, f"max relative difference = {worst:.3e}")


def check_online_offline(n_trials: int = 20, seed: int = 2) -> tuple[str, bool, str]:
    """Online accumulation equals the offline future-facing double sum."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_trials):
        n_rec = int(rng.integers(2, 9))
        n_in = int(rng.integers(2, 6))
        n_steps = int(rng.integers(10, 51))
        cfg = NetworkConfig(
            n_in=n_in, n_rec=n_rec, n_out=2, loss="mse",
            lif=LifParams(tau_m=20.0, v_th=0.5, beta_a=0.5, tau_a=200.0),
            alif_fraction=1.0,
            proj_in=ProjectionSpec(False), proj_rec=ProjectionSpec(True),
            proj_out=ProjectionSpec(False),
            opt=OptimizerConfig(kind="gd", eta=0.0),
            update_interval=n_steps, seed=int(rng.integers(1 << 31)),
        )
        net = build_network(cfg)
        sample = gen_pattern_task(int(rng.integers(1 << 31)), n_steps=n_steps, n_in=n_in,
                                  n_readouts=2)
        net.reset_dynamics()
        errs = np.zeros((n_steps, 2))
        elig = np.zeros((n_steps, n_rec, n_rec))
        net2 = build_network(cfg)
        net2.reset_dynamics()
        x = sample.spike_matrix()
        p = cfg.lif
        eps_v = np.zeros(n_rec)
        eps_a = np.zeros((n_rec, n_rec))
        psi_prev = np.zeros(n_rec)
        beta_vec = net2.beta_a_vec
        for t in range(1, n_steps + 1):
            z_prev = net2.z.copy()
            _, _, err, _, _ = net2._forward_step(
                x[t - 1], sample.target.values[t - 1], int(sample.target.window[t - 1]), None
            )
            errs[t - 1] = err
            eps_a = psi_prev[:, None] * eps_v[None, :] + (p.rho - psi_prev * beta_vec)[:, None] * eps_a
            eps_v = p.alpha * eps_v + z_prev
            elig[t - 1] = net2.psi[:, None] * (eps_v[None, :] - beta_vec[:, None] * eps_a)
            psi_prev = net2.psi
        net.run_sample(sample, mode=MODE_TIME, learn=True)
        g_online = net.plastics["inrec"].grad_total[:, n_in:]
        g_offline = offline_recurrent_gradient(net.feedback.matrix.T, errs, elig, cfg.kappa_out)
        rel = np.abs(g_online - g_offline).max() / max(np.abs(g_offline).max(), 1e-12)
        worst = max(worst, rel)
    ok = worst < 1e-10
    return ("online-offline-oracle", ok, f"max relative difference = {worst:.3e}")


def check_readout_finite_differences(n_probes: int = 20, seed: int = 3) -> tuple[str, bool, str]:
    """Accumulated readout gradients match central finite differences."""
    cfg = NetworkConfig(
        n_in=30, n_rec=40, n_out=2, loss="mse",
        lif=LifParams(tau_m=30.0, v_th=0.6),
        proj_in=ProjectionSpec(False), proj_rec=ProjectionSpec(False),
        proj_out=ProjectionSpec(True),
        opt=OptimizerConfig(kind="gd", eta=0.0), update_interval=200, seed=seed,
    )
    net = build_network(cfg)
    sample = gen_pattern_task(seed, n_steps=200, n_in=30, n_readouts=2)
    net.reset_dynamics()
    net.run_sample(sample, mode=MODE_TIME, learn=True)
    g = net.plastics["out"].grad_total.copy()
    net.plastics["out"].grad_total[:] = 0.0

    def loss_of():
        net.reset_dynamics()
        return net.run_sample(sample, mode=MODE_TIME, learn=False).loss

    rng = np.random.default_rng(seed)
    h = 1e-5
    worst = 0.0
    for _ in range(n_probes):
        k = int(rng.integers(0, cfg.n_out))
        jj = int(rng.integers(0, cfg.n_rec))
        w0 = net.w_out[k, jj]
        net.w_out[k, jj] = w0 + h
        lp = loss_of()
        net.w_out[k, jj] = w0 - h
        lm = loss_of()
        net.w_out[k, jj] = w0
        fd = (lp - lm) / (2 * h)
        worst = max(worst, abs(fd - g[k, jj]) / max(abs(fd), 1e-12))
    ok = worst < 1e-5
    return ("readout-finite-differences", ok, f"max relative error = {worst:.3e}")


ALL_CHECKS = (
    check_algorithm_equality,
    check_index_flipping,
    check_online_offline,
    check_readout_finite_differences,
)


def run_all(verbose: bool = True) -> bool:
    all_ok = True
    for check in ALL_CHECKS:
        name, ok, detail = check()
        all_ok &= ok
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
