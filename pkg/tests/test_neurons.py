"""Neuron dynamics: LIF/ALIF updates, readouts, surrogates, ignore-and-fire."""

import math

import numpy as np
import pytest

from epropsim.neurons import (
    ARCTAN,
    EXPONENTIAL,
    FAST_SIGMOID,
    PIECEWISE_LINEAR,
    RESET_TO_VALUE,
    SURROGATE_KINDS,
    IgnoreAndFireState,
    LifParams,
    NumericInputError,
    ReadoutState,
    RecurrentNeuronState,
    SurrogateSpec,
    step_ignore_and_fire,
    step_readout,
    step_recurrent,
    surrogate_gradient,
)


def tau_for_decay(decay: float) -> float:
    return -1.0 / math.log(decay)


class TestLifParams:
    def test_alpha_rho_derived(self):
        p = LifParams(dt=1.0, tau_m=30.0, tau_a=1200.0)
        assert p.alpha == pytest.approx(math.exp(-1.0 / 30.0), abs=1e-15)
        assert p.rho == pytest.approx(math.exp(-1.0 / 1200.0), abs=1e-15)
        assert 0.0 < p.alpha < 1.0 and 0.0 < p.rho < 1.0

    def test_explicit_alpha_must_match(self):
        good = math.exp(-1.0 / 30.0)
        LifParams(dt=1.0, tau_m=30.0, alpha=good)
        with pytest.raises(ValueError):
            LifParams(dt=1.0, tau_m=30.0, alpha=good + 1e-9)

    def test_bad_reset_mode(self):
        with pytest.raises(ValueError):
            LifParams(reset_mode="clamp")


class TestStepRecurrent:
    def test_zero_case(self):
        p = LifParams(tau_m=30.0, v_th=0.6)
        st = step_recurrent(RecurrentNeuronState(v_th_t=0.6), p, 0.0, 0.0)
        assert st.v == 0.0 and st.z == 0

    def test_voltage_decay_hand_value(self):
        # v=1, alpha=0.5, no drive, no prior spike -> v=0.5
        p = LifParams(tau_m=tau_for_decay(0.5), v_th=10.0)
        st = step_recurrent(RecurrentNeuronState(v=1.0, v_th_t=10.0), p, 0.0, 0.0)
        assert st.v == pytest.approx(0.5, abs=1e-15)
        assert st.z == 0

    def test_adaptation_recursion_hand_value(self):
        # a=1, rho=0.9, prior z=1 -> a=1.9
        p = LifParams(tau_m=30.0, tau_a=tau_for_decay(0.9), beta_a=1.0, v_th=5.0)
        st = step_recurrent(RecurrentNeuronState(v=0.0, a=1.0, z=1, v_th_t=6.0), p, 0.0, 0.0)
        assert st.a == pytest.approx(1.9, abs=1e-15)
        assert st.v_th_t == pytest.approx(5.0 + 1.9, abs=1e-14)

    def test_subtract_reset_uses_current_threshold(self):
        p = LifParams(tau_m=tau_for_decay(0.5), v_th=1.0)
        st = step_recurrent(RecurrentNeuronState(v=2.0, z=1, v_th_t=1.0), p, 0.0, 0.0)
        assert st.v == pytest.approx(0.5 * 2.0 - 1.0)

    def test_reset_to_value(self):
        p = LifParams(tau_m=tau_for_decay(0.5), v_th=1.0, reset_mode=RESET_TO_VALUE, v_reset=0.2)
        st = step_recurrent(RecurrentNeuronState(v=2.0, z=1, v_th_t=1.0), p, 0.3, 0.0)
        assert st.v == pytest.approx(0.5 * 0.2 + 0.3)

    def test_spike_iff_threshold_crossed(self):
        p = LifParams(tau_m=30.0, v_th=0.6)
        st = step_recurrent(RecurrentNeuronState(v_th_t=0.6), p, 0.7, 0.0)
        assert st.z == 1 and st.v >= st.v_th_t
        st2 = step_recurrent(RecurrentNeuronState(v_th_t=0.6), p, 0.59, 0.0)
        assert st2.z == 0

    def test_nonfinite_drive_rejected(self):
        p = LifParams()
        with pytest.raises(NumericInputError):
            step_recurrent(RecurrentNeuronState(), p, float("nan"), 0.0)
        with pytest.raises(NumericInputError):
            step_recurrent(RecurrentNeuronState(), p, 0.0, float("inf"))

    def test_lif_equals_alif_with_zero_beta(self):
        # beta_a = 0 must give bit-identical voltage trajectories
        rng = np.random.default_rng(0)
        p_lif = LifParams(tau_m=25.0, v_th=0.6, beta_a=0.0, tau_a=100.0)
        drives = rng.normal(0, 0.3, 200)
        s1 = RecurrentNeuronState(v_th_t=0.6)
        s2 = RecurrentNeuronState(v_th_t=0.6)
        for dr in drives:
            s1 = step_recurrent(s1, p_lif, dr, 0.0)
            s2 = step_recurrent(s2, p_lif, 0.0, dr)
            assert s1.v == s2.v and s1.z == s2.z and s1.v_th_t == 0.6


class TestReadout:
    def test_memoryless_kappa_zero(self):
        st = step_readout(ReadoutState(y=5.0, kappa=0.0), 1.25)
        assert st.y == 1.25

    def test_hand_decay(self):
        st = step_readout(ReadoutState(y=2.0, kappa=0.5), 0.0)
        assert st.y == 1.0

    def test_geometric_decay(self):
        st = ReadoutState(y=3.0, kappa=0.9)
        for t in range(1, 20):
            st = step_readout(st, 0.0)
            assert st.y == pytest.approx(3.0 * 0.9**t, rel=1e-12)

    def test_from_tau(self):
        st = ReadoutState.from_tau(1.0, 30.0)
        assert st.kappa == pytest.approx(math.exp(-1.0 / 30.0), abs=1e-15)


class TestSurrogates:
    def test_peak_at_threshold_all_kinds(self):
        for kind in SURROGATE_KINDS:
            s = SurrogateSpec(kind=kind, gamma=0.37, beta=2.5)
            assert surrogate_gradient(0.6, 0.6, s) == pytest.approx(0.37, abs=1e-15)

    def test_piecewise_linear_clamp(self):
        s = SurrogateSpec(kind=PIECEWISE_LINEAR, gamma=0.3, beta=2.0)
        assert surrogate_gradient(0.6 + 0.5, 0.6, s) == 0.0
        assert surrogate_gradient(0.6 - 0.7, 0.6, s) == 0.0

    def test_exponential_at_one_over_beta(self):
        s = SurrogateSpec(kind=EXPONENTIAL, gamma=0.3, beta=2.0)
        assert surrogate_gradient(0.6 + 0.5, 0.6, s) == pytest.approx(0.3 / math.e, rel=1e-12)

    def test_fast_sigmoid_and_arctan_forms(self):
        s = SurrogateSpec(kind=FAST_SIGMOID, gamma=1.0, beta=1.0)
        assert surrogate_gradient(1.6, 0.6, s) == pytest.approx(1.0 / 4.0)
        s = SurrogateSpec(kind=ARCTAN, gamma=1.0, beta=1.0)
        assert surrogate_gradient(1.6, 0.6, s) == pytest.approx(1.0 / 2.0)

    def test_even_bounded_maximal_at_zero(self):
        # evenness in (v - v_th_t): probe around a zero threshold so the
        # offsets are exact in floating point
        rng = np.random.default_rng(1)
        offsets = rng.uniform(0.0, 5.0, 200)
        for kind in SURROGATE_KINDS:
            s = SurrogateSpec(kind=kind, gamma=0.3, beta=1.7)
            plus = surrogate_gradient(offsets, 0.0, s)
            minus = surrogate_gradient(-offsets, 0.0, s)
            np.testing.assert_array_equal(plus, minus)
            assert np.all(plus >= 0.0)
            assert np.all(plus <= 0.3 + 1e-15)

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            SurrogateSpec(kind="linear")
        with pytest.raises(ValueError):
            SurrogateSpec(gamma=0.0)
        with pytest.raises(ValueError):
            SurrogateSpec(beta=-1.0)


class TestIgnoreAndFire:
    def test_exact_count_at_period_200(self):
        st = IgnoreAndFireState(period=200, phase=0)
        count = 0
        for _ in range(20_000):
            st, z = step_ignore_and_fire(st)
            count += z
        assert count == 100  # 5/s over 20 s at 1 ms steps

    def test_period_one_spikes_every_step(self):
        st = IgnoreAndFireState(period=1, phase=0)
        for _ in range(10):
            st, z = step_ignore_and_fire(st)
            assert z == 1

    def test_phases_give_shifted_copies(self):
        s1 = IgnoreAndFireState(period=200, phase=0)
        s2 = IgnoreAndFireState(period=200, phase=100)
        t1, t2 = [], []
        for t in range(1, 401):
            s1, z1 = step_ignore_and_fire(s1)
            s2, z2 = step_ignore_and_fire(s2)
            if z1:
                t1.append(t)
            if z2:
                t2.append(t)
        assert [t - 100 for t in t1] == t2

    def test_count_independent_of_phase(self):
        for phase in (0, 37, 199):
            st = IgnoreAndFireState(period=200, phase=phase)
            count = 0
            for _ in range(20_000):
                st, z = step_ignore_and_fire(st)
                count += z
            assert count == 100

    def test_invalid_period(self):
        with pytest.raises(ValueError):
            IgnoreAndFireState(period=0)
