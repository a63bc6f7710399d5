import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from ionpulse.errors import InvalidDecay
from ionpulse.quantum_core import (AtomModel, TrainParams, check_density_matrix,
                                   complete_decay, decay_kraus, decay_probabilities, ket,
                                   mc_final_labels, mc_trajectory_final_state, observables,
                                   projector, propagate_train, pure, rotation_unitary,
                                   simulate_train, step, z_rotation_unitary)

PI = math.pi
angles = st.floats(0.0, 2 * PI - 1e-9)


def _sigma_12():
    sx = np.zeros((3, 3), complex)
    sx[0, 1] = sx[1, 0] = 1
    sy = np.zeros((3, 3), complex)
    sy[0, 1], sy[1, 0] = -1j, 1j
    return sx, sy


def _random_state(seed):
    r = np.random.default_rng(seed)
    a = r.normal(size=(3, 3)) + 1j * r.normal(size=(3, 3))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


class TestAtomModel:
    def test_derived_rates(self):
        a = AtomModel()
        assert a.gamma_PS == pytest.approx((1 - 0.0587) / 6.924, rel=1e-15)
        assert a.gamma_PD == pytest.approx(0.0587 / 6.924, rel=1e-15)
        assert a.gamma_PS + a.gamma_PD == pytest.approx(a.gamma_total, rel=1e-15)

    @pytest.mark.parametrize("kwargs", [{"p52": 0.0}, {"p52": 1.0}, {"gamma_total": -1.0},
                                        {"decay_model": "lindblad"}])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            AtomModel(**kwargs)

    def test_train_params_defaults(self):
        p = TrainParams.from_rep_rate(0.3, 1.25)
        assert p.tau_pulse == 0.8
        assert p.theta_first == 0.3 and p.dphi_first == 0.0
        assert not p.has_anomaly
        with pytest.raises(ValueError):
            TrainParams(theta=7.0, tau_pulse=1.0)
        with pytest.raises(ValueError):
            TrainParams(theta=1.0, tau_pulse=0.0)


class TestRotations:
    def test_identity_at_zero(self):
        assert np.allclose(rotation_unitary(0.0, 1.234), np.eye(3), atol=1e-15)

    def test_full_flip(self):
        u = rotation_unitary(PI, 0.0)
        rho = u @ projector(1) @ u.conj().T
        assert rho[1, 1].real == pytest.approx(1.0, abs=1e-15)

    def test_half_flip_coherence(self):
        u = rotation_unitary(PI / 2, 0.0)
        rho = u @ projector(1) @ u.conj().T
        assert rho[1, 1].real == pytest.approx(0.5, abs=1e-15)
        assert abs(rho[0, 1]) == pytest.approx(0.5, abs=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(theta=angles, phi=angles)
    def test_matches_matrix_exponential(self, theta, phi):
        sx, sy = _sigma_12()
        ref = expm(0.5j * theta * (math.cos(phi) * sx + math.sin(phi) * sy))
        u = rotation_unitary(theta, phi)
        assert np.allclose(u, ref, atol=1e-12)
        assert np.allclose(u.conj().T @ u, np.eye(3), atol=1e-12)

    def test_broadcasts(self):
        u = rotation_unitary(np.linspace(0, 1, 4)[:, None], np.zeros(3))
        assert u.shape == (4, 3, 3, 3)

    def test_z_rotation_identity_and_wrap(self):
        assert np.allclose(z_rotation_unitary(0.0, 0.0, 0.37), np.eye(3))
        u = z_rotation_unitary(2 * PI, 0.0, 1.0)
        assert np.allclose(u, np.diag([-1, -1, 1]), atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(d=st.floats(-10, 10), dp=st.floats(-10, 10), tau=st.floats(0.01, 5))
    def test_z_rotation_matches_exponential(self, d, dp, tau):
        z = 0.5j * tau * (d * np.diag([1, -1, 0]) + dp * np.diag([1, 0, -1]))
        u = z_rotation_unitary(d, dp, tau)
        assert np.allclose(u, expm(z), atol=1e-12)
        assert np.allclose(np.abs(np.diag(u)), 1.0, atol=1e-14)

    def test_z_rotation_rejects_nonpositive_period(self):
        with pytest.raises(ValueError):
            z_rotation_unitary(0.0, 0.0, 0.0)


class TestDecayKraus:
    def test_zero_period_is_identity(self, per_channel_atom):
        n_op, d_op = decay_kraus(per_channel_atom, 0.0)
        assert np.allclose(n_op, np.eye(3))
        assert np.allclose(d_op, 0.0)

    @pytest.mark.parametrize("model", ["per_channel", "exact"])
    def test_completeness_at_5ghz(self, model):
        atom = AtomModel(decay_model=model)
        n_op, d_op = decay_kraus(atom, 0.2)
        total = n_op.conj().T @ n_op + d_op.conj().T @ d_op
        assert np.allclose(total, np.eye(3), atol=1e-14)

    def test_per_channel_probabilities(self, per_channel_atom):
        p, q = decay_probabilities(per_channel_atom, 0.2)
        assert p == pytest.approx(1 - math.exp(-0.9413 * 0.2 / 6.924), rel=1e-12)
        assert q == pytest.approx(1 - math.exp(-0.0587 * 0.2 / 6.924), rel=1e-12)
        _, d_op = decay_kraus(per_channel_atom, 0.2)
        assert d_op[0, 1] ** 2 == pytest.approx(p, rel=1e-12)
        assert d_op[2, 1] ** 2 == pytest.approx(q, rel=1e-12)

    def test_exact_model_branches_like_complete_decay(self, atom):
        p, q = decay_probabilities(atom, 0.8)
        assert q / (p + q) == pytest.approx(0.0587, rel=1e-13)
        assert 1 - p - q == pytest.approx(math.exp(-0.8 / 6.924), rel=1e-13)

    def test_invalid_decay_for_long_period(self):
        atom = AtomModel(gamma_total=50.0, decay_model="per_channel")
        with pytest.raises(InvalidDecay):
            decay_kraus(atom, 1.0)
        with pytest.raises(InvalidDecay):
            step(projector(1), TrainParams(PI, 1.0), atom)

    def test_exact_model_never_invalid(self):
        n_op, _ = decay_kraus(AtomModel(gamma_total=50.0), 1.0)
        assert n_op[1, 1].real >= 0


class TestStep:
    def test_ground_state_dark(self, atom):
        out = step(projector(1), TrainParams(0.0, 0.8), atom, is_first=True)
        assert np.allclose(out, projector(1), atol=1e-15)

    def test_flip_without_decay(self):
        out = step(projector(1), TrainParams(PI, 0.8), AtomModel(gamma_total=0.0))
        assert np.allclose(out, projector(2), atol=1e-15)

    @pytest.mark.parametrize("model", ["per_channel", "exact"])
    def test_one_period_populations(self, model):
        atom = AtomModel(decay_model=model)
        p, q = decay_probabilities(atom, 0.8)
        out = step(projector(1), TrainParams(PI, 0.8), atom)
        assert np.real(np.diag(out)) == pytest.approx([p, 1 - p - q, q], abs=1e-14)

    def test_first_flag_uses_anomaly(self, atom):
        params = TrainParams(0.1, 0.2, theta_first=PI, dphi_first=0.5)
        first = step(projector(1), params, atom, is_first=True)
        later = step(projector(1), params, atom, is_first=False)
        assert first[1, 1].real > 0.9
        assert later[1, 1].real < 0.01

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), theta=angles, phi=angles,
           d=st.floats(-5, 5), dp=st.floats(-5, 5), tau=st.floats(0.05, 3.0),
           model=st.sampled_from(["per_channel", "exact"]))
    def test_preserves_density_matrix(self, seed, theta, phi, d, dp, tau, model):
        params = TrainParams(theta, tau, d, dp, theta_first=theta, dphi_first=phi)
        out = step(_random_state(seed), params, AtomModel(decay_model=model), is_first=True)
        check_density_matrix(out)

    def test_per_channel_decay_order(self, per_channel_atom):
        # decay after the z-rotation: D @ Uz @ Ur rho Ur^+ Uz^+ @ D^+ + N ... N^+
        params = TrainParams(0.7, 0.4, 0.3, -0.2)
        rho = _random_state(1)
        a = z_rotation_unitary(0.3, -0.2, 0.4) @ rotation_unitary(0.7)
        n_op, d_op = decay_kraus(per_channel_atom, 0.4)
        mid = a @ rho @ a.conj().T
        ref = n_op @ mid @ n_op.conj().T + d_op @ mid @ d_op.conj().T
        assert np.allclose(step(rho, params, per_channel_atom), ref, atol=1e-14)


class TestCompleteDecay:
    def test_excited_state(self):
        assert np.allclose(complete_decay(projector(2)), np.diag([1 - 0.0587, 0, 0.0587]))

    def test_ground_state_unchanged(self):
        assert np.allclose(complete_decay(projector(1)), projector(1))

    def test_sd_coherence_kept(self):
        rho = pure(ket(1) + ket(3))
        assert np.allclose(complete_decay(rho), rho)

    def test_removes_p_coherences(self):
        out = complete_decay(_random_state(3))
        assert np.allclose(out[1, :], 0) and np.allclose(out[:, 1], 0)
        assert np.trace(out).real == pytest.approx(1.0, abs=1e-14)


class TestObservables:
    def test_mixed(self):
        o = observables(np.eye(3) / 3)
        assert (o.P1, o.P2, o.P3) == pytest.approx((1 / 3,) * 3)
        assert o.c13 == 0

    def test_sd_superposition(self):
        assert observables(pure(ket(1) + ket(3))).c13 == pytest.approx(0.5)

    def test_half_pulse(self):
        u = rotation_unitary(PI / 2)
        o = observables(u @ projector(1) @ u.conj().T)
        assert (o.P1, o.P2) == pytest.approx((0.5, 0.5))


class TestSimulateTrain:
    def test_single_pulse_closed_form(self, atom):
        for theta in (0.1 * PI, 0.5, PI, 1.7 * PI):
            out = simulate_train(projector(1), TrainParams(theta, 0.8), atom, 1)
            assert out[2, 2].real == pytest.approx(math.sin(theta / 2) ** 2 * 0.0587, abs=1e-12)

    def test_n_zero(self, atom):
        rho = _random_state(5)
        assert np.allclose(simulate_train(rho, TrainParams(1.0, 0.8), atom, 0),
                           complete_decay(rho, atom))

    def test_composition_without_decay(self):
        atom = AtomModel(gamma_total=0.0)
        theta, n = 0.123, 37
        out = simulate_train(projector(1), TrainParams(theta, 0.8), atom, n, decay=False)
        u = rotation_unitary((n * theta) % (2 * PI))
        assert np.max(np.abs(out - u @ projector(1) @ u.conj().T)) <= 1e-9
        assert out[1, 1].real == pytest.approx(math.sin(n * theta / 2) ** 2, abs=1e-12)

    def test_saturation_at_1p25ghz(self, atom):
        out = propagate_train(projector(1), 0.345 * PI, 0.8, atom, [5000])[0]
        assert out[2, 2].real > 0.99

    def test_negative_n(self, atom):
        with pytest.raises(ValueError):
            simulate_train(projector(1), TrainParams(1.0, 0.8), atom, -1)


class TestPropagateTrain:
    @pytest.mark.parametrize("model", ["per_channel", "exact"])
    def test_matches_step_loop(self, model):
        atom = AtomModel(decay_model=model)
        params = TrainParams(0.9, 0.3, 0.4, -0.7, theta_first=2.1, dphi_first=4.0)
        rho0 = _random_state(7)
        ns = [0, 1, 2, 7, 64, 65, 300]
        fast = propagate_train(rho0, 0.9, 0.3, atom, ns, delta=0.4, delta_prime=-0.7,
                               theta_first=2.1, dphi_first=4.0)
        for k, n in enumerate(ns):
            slow = simulate_train(rho0, params, atom, n)
            assert np.max(np.abs(fast[k] - slow)) <= 1e-12

    def test_order_of_counts_irrelevant(self, atom):
        a = propagate_train(projector(1), 1.0, 0.8, atom, [5, 100, 3])
        b = propagate_train(projector(1), 1.0, 0.8, atom, [3, 5, 100])
        assert np.allclose(a[[2, 0, 1]], b, atol=1e-14)

    def test_batch_shape(self, atom):
        out = propagate_train(projector(1), np.full((2, 1), 1.0), 0.8, atom, [1, 2, 3],
                              delta=np.linspace(-1, 1, 5))
        assert out.shape == (2, 5, 3, 3, 3)
        ref = propagate_train(projector(1), 1.0, 0.8, atom, [1, 2, 3], delta=0.5)
        assert np.allclose(out[1, 3], ref, atol=1e-14)

    def test_long_train_stays_physical(self, atom):
        out = propagate_train(_random_state(2), 1.3, 0.2, atom, [5000], delta=0.9,
                              delta_prime=0.2)[0]
        check_density_matrix(out)


class TestMonteCarloOracle:
    def test_dark_ground_state(self, atom):
        labels = mc_final_labels(ket(1), TrainParams(0.0, 0.8), atom, 50, 1000, seed=1)
        assert np.all(labels == 1)

    def test_deterministic(self, atom):
        params = TrainParams(1.0, 0.8)
        a = mc_final_labels(ket(1), params, atom, 20, 500, seed=4)
        b = mc_final_labels(ket(1), params, atom, 20, 500, seed=4)
        assert np.array_equal(a, b)
        assert mc_trajectory_final_state(ket(1), params, atom, 20, 9) in (1, 3)

    def test_single_pi_pulse(self, atom):
        shots = 100_000
        labels = mc_final_labels(ket(1), TrainParams(PI, 0.8), atom, 1, shots, seed=11)
        frac = np.mean(labels == 3)
        sigma = math.sqrt(0.0587 * (1 - 0.0587) / shots)
        assert abs(frac - 0.0587) <= 3 * sigma

    @pytest.mark.slow
    def test_long_train(self, atom):
        shots = 100_000
        params = TrainParams(0.345 * PI, 0.8)
        labels = mc_final_labels(ket(1), params, atom, 500, shots, seed=12)
        p3 = simulate_train(projector(1), params, atom, 500)[2, 2].real
        sigma = math.sqrt(max(p3 * (1 - p3), 1.0 / shots) / shots)
        assert abs(np.mean(labels == 3) - p3) <= 3 * sigma
