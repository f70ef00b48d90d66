"""Kinematic bicycle model with a second-order steering actuator.

State vector (6): x, y [m] rear-wheel position, v [m/s] speed along the
heading, theta [rad] heading, delta [rad] steering angle, omega [rad/s]
steering angle rate.  Input vector (2): a [m/s^2] longitudinal
acceleration, delta_sp [rad] steering angle setpoint.

The continuous dynamics are

    xdot     = v cos(theta)
    ydot     = v sin(theta)
    vdot     = a
    thetadot = v / l_w * tan(delta)
    deltadot = omega
    omegadot = w0^2 (delta_sp - delta) - 2 zeta omega

discretized with classical RK4 over ``dt`` split into ``n_rk4_steps``
equal substeps.  Discrete-map Jacobians are obtained by forward-mode
differentiation chained through every RK4 stage, so they are exact for
the integrator (no finite-difference noise), which the SQP linearization
relies on.

All heavy entry points have batched variants operating on stacked
arrays; the scalar API wraps them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NX = 6
NU = 2

# index aliases into the state vector
IX, IY, IV, ITHETA, IDELTA, IOMEGA = range(6)


class SteeringDomainError(ValueError):
    """Steering angle at or beyond +-pi/2 where tan(delta) blows up."""


@dataclass(frozen=True)
class VehicleParams:
    """Model constants: wheel base, actuator dynamics, discretization."""

    l_w: float = 2.984        # wheel base [m]
    w0: float = 20.0          # actuator natural frequency [1/s]
    zeta: float = 0.9         # actuator damping coefficient [1/s]
    dt: float = 0.05          # discretization time [s]
    n_rk4_steps: int = 5      # integrator substeps per dt

    def __post_init__(self):
        if not (self.l_w > 0 and self.w0 > 0 and self.zeta >= 0 and self.dt > 0):
            raise ValueError(f"invalid vehicle parameters: {self}")
        if self.n_rk4_steps < 1:
            raise ValueError("n_rk4_steps must be >= 1")


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    v: float = 0.0
    theta: float = 0.0
    delta: float = 0.0
    omega: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.theta, self.delta, self.omega])

    @staticmethod
    def from_array(vec) -> "VehicleState":
        x, y, v, theta, delta, omega = (float(c) for c in vec)
        return VehicleState(x, y, v, theta, delta, omega)


@dataclass(frozen=True)
class ControlInput:
    a: float = 0.0
    delta_sp: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.delta_sp])

    @staticmethod
    def from_array(vec) -> "ControlInput":
        return ControlInput(float(vec[0]), float(vec[1]))


@dataclass(frozen=True)
class Sensitivities:
    """Jacobians of the discrete map and the integration residual.

    A = d f / d x, B = d f / d u at the linearization guess, and
    b = f(x_guess, u_guess) - x_next_guess.  When the guess is an exact
    one-step rollout, b vanishes to integration accuracy.
    """

    A: np.ndarray  # (6, 6)
    B: np.ndarray  # (6, 2)
    b: np.ndarray  # (6,)


def _check_delta(delta: np.ndarray) -> None:
    if np.any(np.abs(delta) >= np.pi / 2):
        raise SteeringDomainError(
            "steering angle at or beyond pi/2; tan(delta) is singular"
        )


def f_continuous_batch(states: np.ndarray, inputs: np.ndarray,
                       params: VehicleParams) -> np.ndarray:
    """Continuous-time state derivative for stacked (n, 6) states, (n, 2) inputs."""
    states = np.atleast_2d(states)
    inputs = np.atleast_2d(inputs)
    _check_delta(states[:, IDELTA])
    v = states[:, IV]
    theta = states[:, ITHETA]
    delta = states[:, IDELTA]
    omega = states[:, IOMEGA]
    out = np.empty_like(states)
    out[:, IX] = v * np.cos(theta)
    out[:, IY] = v * np.sin(theta)
    out[:, IV] = inputs[:, 0]
    out[:, ITHETA] = v / params.l_w * np.tan(delta)
    out[:, IDELTA] = omega
    out[:, IOMEGA] = params.w0 ** 2 * (inputs[:, 1] - delta) - 2.0 * params.zeta * omega
    return out


def eval_continuous(state: VehicleState, inp: ControlInput,
                    params: VehicleParams) -> np.ndarray:
    """State derivative of the bicycle equations, as a 6-vector."""
    return f_continuous_batch(state.as_array()[None, :], inp.as_array()[None, :],
                              params)[0]


def _jacobians_batch(states: np.ndarray, params: VehicleParams):
    """Continuous-dynamics Jacobians Jx (n,6,6), Ju (n,6,2) at stacked states."""
    n = states.shape[0]
    v = states[:, IV]
    theta = states[:, ITHETA]
    delta = states[:, IDELTA]
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    tan_d = np.tan(delta)
    sec2_d = 1.0 / np.cos(delta) ** 2

    Jx = np.zeros((n, NX, NX))
    Jx[:, IX, IV] = cos_t
    Jx[:, IX, ITHETA] = -v * sin_t
    Jx[:, IY, IV] = sin_t
    Jx[:, IY, ITHETA] = v * cos_t
    Jx[:, ITHETA, IV] = tan_d / params.l_w
    Jx[:, ITHETA, IDELTA] = v * sec2_d / params.l_w
    Jx[:, IDELTA, IOMEGA] = 1.0
    Jx[:, IOMEGA, IDELTA] = -params.w0 ** 2
    Jx[:, IOMEGA, IOMEGA] = -2.0 * params.zeta

    Ju = np.zeros((n, NX, NU))
    Ju[:, IV, 0] = 1.0
    Ju[:, IOMEGA, 1] = params.w0 ** 2
    return Jx, Ju


def step_rk4_batch(states: np.ndarray, inputs: np.ndarray,
                   params: VehicleParams) -> np.ndarray:
    """One discretization step (dt, piecewise-constant input) for stacked guesses."""
    x = np.atleast_2d(np.asarray(states, dtype=float)).copy()
    u = np.atleast_2d(np.asarray(inputs, dtype=float))
    h = params.dt / params.n_rk4_steps
    for _ in range(params.n_rk4_steps):
        k1 = f_continuous_batch(x, u, params)
        k2 = f_continuous_batch(x + 0.5 * h * k1, u, params)
        k3 = f_continuous_batch(x + 0.5 * h * k2, u, params)
        k4 = f_continuous_batch(x + h * k3, u, params)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def step_rk4(state: VehicleState, inp: ControlInput,
             params: VehicleParams) -> VehicleState:
    """Integrate one dt with classical RK4 over n_rk4_steps substeps."""
    nxt = step_rk4_batch(state.as_array()[None, :], inp.as_array()[None, :], params)
    return VehicleState.from_array(nxt[0])


def sensitivities_batch(states: np.ndarray, inputs: np.ndarray,
                        next_states: np.ndarray, params: VehicleParams):
    """Exact discrete-map Jacobians for stacked guesses.

    Forward-mode chain rule through every RK4 stage: per substep the map is
    x+ = x + h/6 (k1 + 2 k2 + 2 k3 + k4) and each ki's Jacobian is chained
    through the Jacobian of the stage it was evaluated at.  Returns
    (A (n,6,6), B (n,6,2), b (n,6)) with b the integration residual.
    """
    x = np.atleast_2d(np.asarray(states, dtype=float)).copy()
    u = np.atleast_2d(np.asarray(inputs, dtype=float))
    xn = np.atleast_2d(np.asarray(next_states, dtype=float))
    n = x.shape[0]
    h = params.dt / params.n_rk4_steps

    Phi = np.broadcast_to(np.eye(NX), (n, NX, NX)).copy()   # d x / d x0
    Psi = np.zeros((n, NX, NU))                             # d x / d u
    eye = np.broadcast_to(np.eye(NX), (n, NX, NX))

    for _ in range(params.n_rk4_steps):
        k1 = f_continuous_batch(x, u, params)
        J1x, J1u = _jacobians_batch(x, params)

        x2 = x + 0.5 * h * k1
        k2 = f_continuous_batch(x2, u, params)
        J2x_loc, J2u_loc = _jacobians_batch(x2, params)
        J2x = J2x_loc @ (eye + 0.5 * h * J1x)
        J2u = J2x_loc @ (0.5 * h * J1u) + J2u_loc

        x3 = x + 0.5 * h * k2
        k3 = f_continuous_batch(x3, u, params)
        J3x_loc, J3u_loc = _jacobians_batch(x3, params)
        J3x = J3x_loc @ (eye + 0.5 * h * J2x)
        J3u = J3x_loc @ (0.5 * h * J2u) + J3u_loc

        x4 = x + h * k3
        k4 = f_continuous_batch(x4, u, params)
        J4x_loc, J4u_loc = _jacobians_batch(x4, params)
        J4x = J4x_loc @ (eye + h * J3x)
        J4u = J4x_loc @ (h * J3u) + J4u_loc

        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        Phi_sub = eye + (h / 6.0) * (J1x + 2.0 * J2x + 2.0 * J3x + J4x)
        Psi_sub = (h / 6.0) * (J1u + 2.0 * J2u + 2.0 * J3u + J4u)
        Psi = Phi_sub @ Psi + Psi_sub
        Phi = Phi_sub @ Phi

    b = x - xn
    return Phi, Psi, b


def sensitivities(state_guess: VehicleState, input_guess: ControlInput,
                  next_state_guess: VehicleState,
                  params: VehicleParams) -> Sensitivities:
    """Exact Jacobians of the RK4 map plus integration residual at one guess."""
    A, B, b = sensitivities_batch(state_guess.as_array()[None, :],
                                  input_guess.as_array()[None, :],
                                  next_state_guess.as_array()[None, :], params)
    return Sensitivities(A=A[0], B=B[0], b=b[0])
