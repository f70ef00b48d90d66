import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from urbanmpc import (ControlInput, SteeringDomainError, VehicleParams,
                      VehicleState, eval_continuous, sensitivities, step_rk4)
from urbanmpc.vehicle import (f_continuous_batch, sensitivities_batch,
                              step_rk4_batch)


def ivp_oracle(state, inp, params, t_end, tol=1e-10):
    """Adaptive error-controlled integration of the bicycle equations."""
    def rhs(_t, y):
        return f_continuous_batch(y[None, :], inp.as_array()[None, :], params)[0]

    out = solve_ivp(rhs, (0.0, t_end), state.as_array(), method="DOP853",
                    rtol=tol, atol=tol)
    return out.y[:, -1]


class TestEvalContinuous:
    def test_straight_coasting(self, params):
        d = eval_continuous(VehicleState(v=10.0), ControlInput(a=1.0), params)
        np.testing.assert_allclose(d, [10.0, 0.0, 1.0, 0.0, 0.0, 0.0])

    def test_unit_yaw_rate_at_wheelbase_speed(self, params):
        s = VehicleState(v=2.984, delta=np.pi / 4)
        d = eval_continuous(s, ControlInput(), params)
        assert d[3] == pytest.approx(1.0, abs=1e-12)

    def test_actuator_acceleration(self, params):
        s = VehicleState(delta=0.0, omega=0.0)
        d = eval_continuous(s, ControlInput(delta_sp=0.1), params)
        assert d[5] == pytest.approx(40.0, abs=1e-12)

    def test_rejects_steering_singularity(self, params):
        with pytest.raises(SteeringDomainError):
            eval_continuous(VehicleState(delta=np.pi / 2), ControlInput(), params)


class TestStepRk4:
    def test_zero_fixed_point(self, params):
        nxt = step_rk4(VehicleState(), ControlInput(), params)
        np.testing.assert_allclose(nxt.as_array(), np.zeros(6))

    def test_constant_velocity_translation(self, params):
        nxt = step_rk4(VehicleState(v=10.0), ControlInput(), params)
        np.testing.assert_allclose(nxt.as_array(), [0.5, 0, 10, 0, 0, 0],
                                   atol=1e-12)

    def test_matches_adaptive_oracle(self, params):
        s = VehicleState(v=10.0, delta=0.1)
        u = ControlInput(a=0.0, delta_sp=0.1)
        got = step_rk4(s, u, params).as_array()
        want = ivp_oracle(s, u, params, params.dt)
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_translation_equivariance(self, params):
        s = VehicleState(x=0.0, y=0.0, v=7.0, theta=0.3, delta=0.05, omega=0.01)
        u = ControlInput(a=0.5, delta_sp=0.1)
        base = step_rk4(s, u, params).as_array()
        shifted = step_rk4(VehicleState(x=13.0, y=-4.0, v=7.0, theta=0.3,
                                        delta=0.05, omega=0.01), u, params).as_array()
        np.testing.assert_allclose(shifted[:2], base[:2] + [13.0, -4.0],
                                   atol=1e-12)
        np.testing.assert_allclose(shifted[2:], base[2:], atol=1e-12)

    @given(psi=st.floats(-3.0, 3.0))
    @settings(max_examples=25, deadline=None)
    def test_rotation_equivariance(self, psi):
        params = VehicleParams()
        u = ControlInput(a=0.3, delta_sp=0.08)
        s = np.array([1.0, 2.0, 6.0, 0.4, 0.06, 0.02])
        rot = np.array([[np.cos(psi), -np.sin(psi)], [np.sin(psi), np.cos(psi)]])
        s_rot = s.copy()
        s_rot[:2] = rot @ s[:2]
        s_rot[3] += psi
        base = step_rk4_batch(s, u.as_array(), params)[0]
        turned = step_rk4_batch(s_rot, u.as_array(), params)[0]
        np.testing.assert_allclose(turned[:2], rot @ base[:2], atol=1e-9)
        np.testing.assert_allclose(turned[3], base[3] + psi, atol=1e-9)
        np.testing.assert_allclose(turned[[2, 4, 5]], base[[2, 4, 5]], atol=1e-9)

    def test_steering_subsystem_superposition(self, params):
        def steer_block(delta0, omega0, sp):
            s = np.array([0, 0, 5.0, 0, delta0, omega0])
            return step_rk4_batch(s, np.array([0.0, sp]), params)[0][[4, 5]]

        a = steer_block(0.05, 0.02, 0.1)
        b = steer_block(0.02, -0.01, -0.04)
        zero = steer_block(0.0, 0.0, 0.0)
        both = steer_block(0.07, 0.01, 0.06)
        np.testing.assert_allclose(a + b - zero, both, atol=1e-12)


class TestSensitivities:
    def test_residual_zero_on_exact_rollout(self, params):
        s = VehicleState(v=8.0, theta=0.2, delta=0.05, omega=0.01)
        u = ControlInput(a=0.4, delta_sp=0.07)
        nxt = step_rk4(s, u, params)
        sens = sensitivities(s, u, nxt, params)
        np.testing.assert_allclose(sens.b, np.zeros(6), atol=1e-12)

    def test_jacobians_match_finite_differences(self, params, rng):
        h = 1e-6
        worst = 0.0
        for _ in range(100):
            x = rng.uniform([-5, -5, 0, -np.pi, -0.4, -0.15],
                            [5, 5, 15, np.pi, 0.4, 0.15])
            u = rng.uniform([-2, -0.4], [1, 0.4])
            A, B, _ = sensitivities_batch(x[None], u[None], x[None], params)
            A, B = A[0], B[0]
            for j in range(6):
                dx = np.zeros(6)
                dx[j] = h
                fp = step_rk4_batch(x + dx, u, params)[0]
                fm = step_rk4_batch(x - dx, u, params)[0]
                col = (fp - fm) / (2 * h)
                worst = max(worst, np.max(np.abs(col - A[:, j]) /
                                          np.maximum(np.abs(col), 1.0)))
            for j in range(2):
                du = np.zeros(2)
                du[j] = h
                fp = step_rk4_batch(x, u + du, params)[0]
                fm = step_rk4_batch(x, u - du, params)[0]
                col = (fp - fm) / (2 * h)
                worst = max(worst, np.max(np.abs(col - B[:, j]) /
                                          np.maximum(np.abs(col), 1.0)))
        assert worst <= 1e-5

    def test_theta_delta_entry_zero_at_origin(self, params):
        x = np.zeros(6)
        u = np.zeros(2)
        A, _, _ = sensitivities_batch(x[None], u[None], x[None], params)
        assert A[0][3, 4] == pytest.approx(0.0, abs=1e-14)

    def test_first_order_accuracy_quadratic_decay(self, params, rng):
        x = np.array([1.0, -2.0, 9.0, 0.3, 0.08, 0.02])
        u = np.array([0.5, 0.1])
        A, B, _ = sensitivities_batch(x[None], u[None], x[None], params)
        A, B = A[0], B[0]
        f0 = step_rk4_batch(x, u, params)[0]
        dx = rng.standard_normal(6)
        du = rng.standard_normal(2)
        errs = []
        for scale in (1e-2, 5e-3, 2.5e-3, 1.25e-3):
            fp = step_rk4_batch(x + scale * dx, u + scale * du, params)[0]
            lin = f0 + A @ (scale * dx) + B @ (scale * du)
            errs.append(np.linalg.norm(fp - lin))
        ratios = [errs[i] / errs[i + 1] for i in range(3)]
        for rho in ratios:
            assert 3.3 < rho < 4.7  # halving the perturbation quarters the error
