"""Engine: mode equivalence, determinism, batch semantics, eval freezing."""

import numpy as np
import pytest

from epropsim.engine import (
    MODE_EVENT,
    MODE_TIME,
    VARIANT_EPROP_PLUS,
    NetworkConfig,
    ProjectionSpec,
    build_network,
    default_config,
    run_evaluation,
    run_training,
)
from epropsim.neurons import LifParams, SurrogateSpec
from epropsim.optim import OptimizerConfig
from epropsim.plasticity import REG_CUMULATIVE, REG_EMA, REG_STATIC, RegularizationParams
from epropsim.synapses import PER_SPIKE, DelayConfig
from epropsim.tasks import EvidenceTaskConfig, gen_evidence_task, gen_pattern_task


def small_cfg(seed=1, n_steps=200, **kw):
    defaults = dict(
        n_in=20,
        n_rec=30,
        n_out=2,
        loss="mse",
        lif=LifParams(tau_m=25.0, v_th=0.6),
        opt=OptimizerConfig(kind="gd", eta=1e-5),
        update_interval=n_steps,
        seed=seed,
    )
    defaults.update(kw)
    return NetworkConfig(**defaults)


def pattern_stream(seed, n_steps=200, n_in=20, n_out=2):
    sample = gen_pattern_task(seed, n_steps=n_steps, n_in=n_in, n_readouts=n_out)
    return lambda it, b, train: sample


class TestModeEquivalence:
    @pytest.mark.parametrize("opt_kind", ["gd", "adam"])
    def test_losses_identical(self, opt_kind):
        losses = {}
        for mode in (MODE_TIME, MODE_EVENT):
            cfg = small_cfg(opt=OptimizerConfig(kind=opt_kind, eta=1e-4))
            net = build_network(cfg)
            rows = run_training(net, pattern_stream(1), 4, mode=mode)
            losses[mode] = [r.loss for r in rows]
        assert losses[MODE_TIME] == losses[MODE_EVENT]

    def test_weights_identical_after_training(self):
        nets = {}
        for mode in (MODE_TIME, MODE_EVENT):
            net = build_network(small_cfg())
            run_training(net, pattern_stream(2), 3, mode=mode)
            nets[mode] = net
        np.testing.assert_array_equal(nets[MODE_TIME].w_inrec, nets[MODE_EVENT].w_inrec)
        np.testing.assert_array_equal(nets[MODE_TIME].w_out, nets[MODE_EVENT].w_out)

    def test_equivalence_with_alif_reg_and_delays(self):
        losses = {}
        for mode in (MODE_TIME, MODE_EVENT):
            cfg = small_cfg(
                lif=LifParams(tau_m=25.0, v_th=0.6, beta_a=0.1, tau_a=300.0),
                alif_fraction=0.5,
                reg=RegularizationParams(c_reg=0.3, f_star=10.0, mode=REG_CUMULATIVE),
                delays=DelayConfig(d=1, d_ls=1, cutoff=300),
            )
            net = build_network(cfg)
            rows = run_training(net, pattern_stream(3), 4, mode=mode)
            losses[mode] = [r.loss for r in rows]
        assert losses[MODE_TIME] == losses[MODE_EVENT]

    def test_equivalence_cross_entropy(self):
        losses = {}
        for mode in (MODE_TIME, MODE_EVENT):
            cfg = small_cfg(loss="cross-entropy-softmax",
                            opt=OptimizerConfig(kind="adam", eta=1e-4))
            net = build_network(cfg)

            def stream(it, b, train, seed=4):
                rng = np.random.default_rng((seed, it, b))
                cfg_t = EvidenceTaskConfig(n_cues=2, cue_steps=20, gap_steps=5,
                                           delay_steps=50, recall_steps=50,
                                           n_left=5, n_right=5, n_background=5, n_recall=5)
                return gen_evidence_task(rng, cfg_t)

            cfg2 = small_cfg(n_in=20, loss="cross-entropy-softmax",
                             opt=OptimizerConfig(kind="adam", eta=1e-4),
                             update_interval=150)
            net = build_network(cfg2)
            rows = run_training(net, stream, 3, mode=mode)
            losses[mode] = [r.loss for r in rows]
        assert losses[MODE_TIME] == losses[MODE_EVENT]


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        runs = []
        for _ in range(2):
            net = build_network(small_cfg(seed=9))
            rows = run_training(net, pattern_stream(9), 3, mode=MODE_EVENT)
            runs.append(([r.loss for r in rows], net.weight_checksum()))
        assert runs[0] == runs[1]

    def test_different_seed_differs(self):
        net1 = build_network(small_cfg(seed=1))
        net2 = build_network(small_cfg(seed=2))
        assert net1.weight_checksum() != net2.weight_checksum()


class TestBatchSemantics:
    def test_sequential_equals_parallel_replicas(self):
        # parallel-replica oracle: run each batch sample on a fresh copy of
        # the pre-iteration weights, average the per-step gradient sequences,
        # apply one Adam pass; compare against the sequential engine
        n_steps, n_batch = 120, 3
        samples = [gen_pattern_task(50 + b, n_steps=n_steps, n_in=20, n_readouts=2)
                   for b in range(n_batch)]

        def stream(it, b, train):
            return samples[b]

        cfg = small_cfg(n_steps=n_steps,
                        opt=OptimizerConfig(kind="adam", eta=1e-3, batch_size=n_batch))
        seq_net = build_network(cfg)
        run_training(seq_net, stream, 1, mode=MODE_TIME)

        # replicas: identical initial weights, one sample each
        replica_grads = []
        for b in range(n_batch):
            rep_cfg = small_cfg(n_steps=n_steps,
                                opt=OptimizerConfig(kind="adam", eta=1e-3, batch_size=n_batch))
            rep = build_network(rep_cfg)
            rep.reset_dynamics()
            rep.run_sample(samples[b], mode=MODE_TIME, learn=True)
            replica_grads.append(
                {name: pl.seq_buffer.copy() for name, pl in rep.plastics.items()}
            )
        ref = build_network(small_cfg(n_steps=n_steps,
                                      opt=OptimizerConfig(kind="adam", eta=1e-3,
                                                          batch_size=n_batch)))
        for name, pl in ref.plastics.items():
            pl.ensure_seq_buffer(n_steps)
            for rg in replica_grads:
                pl.seq_buffer += rg[name]
            pl.apply_iteration(n_batch, n_steps)
        np.testing.assert_array_equal(seq_net.w_inrec, ref.w_inrec)
        np.testing.assert_array_equal(seq_net.w_out, ref.w_out)


class TestEvaluation:
    def test_eval_never_mutates_weights(self):
        cfg = small_cfg()
        net = build_network(cfg)
        stream = pattern_stream(11)
        run_training(net, stream, 2, mode=MODE_EVENT)
        before = net.weight_checksum()
        row = run_evaluation(net, stream, 2, 4, MODE_EVENT)
        assert net.weight_checksum() == before
        assert row.phase == "eval"
        assert np.isfinite(row.loss)


class TestPerturbation:
    def test_forced_spike_diverges_rasters_bounded_loss(self):
        cfg = small_cfg(n_steps=300, update_interval=300)
        sample = gen_pattern_task(12, n_steps=300, n_in=20, n_readouts=2)
        net_a = build_network(cfg)
        net_b = build_network(cfg)
        net_a.reset_dynamics()
        net_b.reset_dynamics()
        res_a = net_a.run_sample(sample, mode=MODE_TIME, learn=False, record_spikes=True)
        res_b = net_b.run_sample(
            sample, mode=MODE_TIME, learn=False, record_spikes=True,
            forced_spikes={150: [5]},
        )
        spikes_a = set(res_a.spikes)
        spikes_b = set(res_b.spikes)
        assert (150, 5) in spikes_b
        diverging = spikes_a.symmetric_difference(spikes_b)
        late_diffs = {s for s in diverging if s[0] > 150}
        assert len(late_diffs) > 1  # the cascade spreads beyond the forced spike
        assert res_a.loss != res_b.loss
        assert abs(res_b.loss - res_a.loss) < 10 * max(res_a.loss, 1.0)

    def test_zero_weight_network_silent(self):
        cfg = small_cfg(
            proj_in=ProjectionSpec(True, 0.0),
            proj_rec=ProjectionSpec(True, 0.0),
            proj_out=ProjectionSpec(True, 0.0),
        )
        net = build_network(cfg)
        sample = gen_pattern_task(13, n_steps=200, n_in=20, n_readouts=2)
        net.reset_dynamics()
        res = net.run_sample(sample, mode=MODE_TIME, learn=False)
        assert res.n_rec_spikes == 0
        # loss equals the target-only baseline
        baseline = 0.5 * float((sample.target.values**2).sum())
        assert res.loss == pytest.approx(baseline)


class TestPerSpikePolicy:
    def make_cfg(self, seed=21, **kw):
        return default_config(
            VARIANT_EPROP_PLUS,
            n_in=15,
            n_rec=20,
            n_out=2,
            loss="temporal-mse",
            opt=OptimizerConfig(kind="gd", eta=1e-4),
            update_mode=PER_SPIKE,
            update_interval=100,
            reg=RegularizationParams(c_reg=0.1, f_star=10.0, mode=REG_EMA, beta_reg=0.99),
            seed=seed,
            **kw,
        )

    def test_weights_change_within_sample(self):
        net = build_network(self.make_cfg())
        sample = gen_pattern_task(21, n_steps=100, n_in=15, n_readouts=2)
        w0 = net.weight_checksum()
        net.run_sample(sample, mode=MODE_EVENT, learn=True)
        assert net.weight_checksum() != w0

    def test_variable_duration_samples_accepted(self):
        net = build_network(self.make_cfg())
        for steps in (80, 120, 60):
            sample = gen_pattern_task(22, n_steps=steps, n_in=15, n_readouts=2)
            net.run_sample(sample, mode=MODE_EVENT, learn=True)

    def test_event_and_flush_cover_all_pending(self):
        net = build_network(self.make_cfg())
        sample = gen_pattern_task(23, n_steps=90, n_in=15, n_readouts=2)
        net.run_sample(sample, mode=MODE_EVENT, learn=True)
        net.flush_per_spike()
        assert np.all(net.pre_processed == net.global_t)
        assert np.all(net.out_processed == net.global_t)

    def test_vectorized_replay_matches_stepwise(self):
        # LIF+GD takes the lfilter path; forcing the per-step path by using
        # a tiny window must give the same totals
        cfg = self.make_cfg(seed=24)
        net_fast = build_network(cfg)
        net_slow = build_network(cfg)
        sample = gen_pattern_task(24, n_steps=100, n_in=15, n_readouts=2)
        net_fast.run_sample(sample, mode=MODE_EVENT, learn=True)
        # slow path: monkeypatch threshold so the vector path never triggers
        import epropsim.engine as eng

        orig = eng.Network._replay_group_inrec

        def stepwise(self, pre_idx, t):
            # temporarily disable the vector path by shrinking windows
            cfgd = self.cfg.delays
            kern, plast = self.inrec_kernel, self.plastics["inrec"]
            start = int(self.pre_processed[pre_idx]) + 1
            if t < start:
                return
            cols = np.array([pre_idx])
            exact_end = min(start + cfgd.cutoff - 1, t)
            logs = self.logs
            for tt in range(start, exact_end + 1):
                s = tt - cfgd.d_ls
                if s < 1:
                    continue
                pp = tt - cfgd.d_sync
                u_p = logs["xz"].get(pp)[cols]
                g = kern.step_cols(u_p, logs["psi"].get(pp), logs["psi"].get(pp - 1),
                                   logs["lsig"].get(s), logs["f"].get(pp), cols)
                plast.apply_per_spike(g, cols)
            if t > exact_end:
                kern.fast_forward(t - exact_end, cols)
            self.pre_processed[pre_idx] = t

        eng.Network._replay_group_inrec = stepwise
        try:
            net_slow.run_sample(sample, mode=MODE_EVENT, learn=True)
        finally:
            eng.Network._replay_group_inrec = orig
        np.testing.assert_allclose(net_fast.w_inrec, net_slow.w_inrec, rtol=1e-10, atol=1e-14)


class TestConfigValidation:
    def test_variant_constraints(self):
        with pytest.raises(ValueError):
            NetworkConfig(update_mode=PER_SPIKE)  # bsshslm + per-spike
        with pytest.raises(ValueError):
            NetworkConfig(variant=VARIANT_EPROP_PLUS, loss="cross-entropy-softmax")
        with pytest.raises(ValueError):
            NetworkConfig(
                reg=RegularizationParams(c_reg=1.0, mode=REG_STATIC),
                opt=OptimizerConfig(kind="adam"),
            )
        cfg = NetworkConfig(variant=VARIANT_EPROP_PLUS, loss="temporal-mse",
                            reg=RegularizationParams(c_reg=0.0, mode=REG_EMA))
        assert cfg.reset_between_iterations is False

    def test_elig_filter_default_per_variant(self):
        bs = NetworkConfig()
        assert bs.kappa_filt == pytest.approx(bs.kappa_out)
        ep = default_config(VARIANT_EPROP_PLUS, loss="temporal-mse")
        assert ep.kappa_filt == 0.0
        custom = NetworkConfig(elig_filter=0.5)
        assert custom.kappa_filt == 0.5

    def test_sample_duration_mismatch_rejected(self):
        net = build_network(small_cfg(n_steps=100, update_interval=100))
        bad = gen_pattern_task(1, n_steps=50, n_in=20, n_readouts=2)
        with pytest.raises(ValueError):
            net.run_sample(bad, mode=MODE_TIME)

    def test_mixed_population_honors_per_neuron_beta(self):
        cfg = small_cfg(lif=LifParams(tau_m=25.0, v_th=0.6, beta_a=0.3, tau_a=100.0),
                        alif_fraction=0.5)
        net = build_network(cfg)
        assert (net.beta_a_vec[:15] == 0.3).all()
        assert (net.beta_a_vec[15:] == 0.0).all()

    def test_no_autapses(self):
        net = build_network(small_cfg())
        assert np.all(np.diag(net.w_rec) == 0.0)
        run_training(net, pattern_stream(30), 2, mode=MODE_TIME)
        assert np.all(np.diag(net.w_rec) == 0.0)
