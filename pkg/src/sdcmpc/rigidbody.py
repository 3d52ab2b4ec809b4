"""Rigid-body quadrotor model.

State layout (12 states):
    x = [p, v, eta, omega]
with world-frame position p and velocity v, ZYX Euler angles
eta = [phi, theta, psi] (roll, pitch, yaw) and body angular rates omega.
Inputs are a collective thrust along the body z-axis and three body torques,
u = [T, tau_phi, tau_theta, tau_psi].  A six-entry vector d stacks a world
force disturbance on top of a body torque disturbance.

Translational dynamics:  m * vdot = m * g_vec + R(eta) e3 * T + d_f
Attitude kinematics:     etadot = W(eta) omega
Rotational dynamics:     J * omegadot = tau - omega x (J omega) + d_tau
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

GRAVITY = 9.81

N_STATES = 12
N_INPUTS = 4
N_DISTURBANCES = 6

POS = slice(0, 3)
VEL = slice(3, 6)
ATT = slice(6, 9)
RATE = slice(9, 12)

#: pitch must stay this far away from +/- pi/2 for W(eta) to be well defined
GIMBAL_MARGIN = 1e-3


class GimbalLockError(ValueError):
    """Pitch is within GIMBAL_MARGIN of +/- pi/2; Euler rates are undefined."""


@dataclass(frozen=True)
class QuadrotorParams:
    """Vehicle constants; defaults reproduce the benchmark quadrotor."""

    mass: float = 1.0
    inertia_diag: tuple[float, float, float] = (0.029, 0.029, 0.055)
    gravity: float = GRAVITY
    u_min: tuple[float, float, float, float] = (0.0, -1.0, -1.0, -0.5)
    u_max: tuple[float, float, float, float] = (20.0, 1.0, 1.0, 0.5)

    def __post_init__(self) -> None:
        if self.mass <= 0.0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if any(j <= 0.0 for j in self.inertia_diag):
            raise ValueError(f"inertia must be positive, got {self.inertia_diag}")
        if self.gravity <= 0.0:
            raise ValueError(f"gravity must be positive, got {self.gravity}")
        lo, hi = np.asarray(self.u_min), np.asarray(self.u_max)
        if not np.all(lo < hi):
            raise ValueError("u_min must be elementwise below u_max")
        hover = self.mass * self.gravity
        if not (self.u_min[0] < hover < self.u_max[0]):
            raise ValueError(
                f"hover thrust {hover:.3f} N falls outside the thrust bounds "
                f"[{self.u_min[0]}, {self.u_max[0]}]"
            )

    @property
    def inertia(self) -> NDArray[np.floating]:
        return np.diag(self.inertia_diag)

    @property
    def inertia_inv(self) -> NDArray[np.floating]:
        return np.diag(1.0 / np.asarray(self.inertia_diag))


def skew(v: NDArray[np.floating]) -> NDArray[np.floating]:
    """Skew-symmetric matrix S(v) with S(v) @ w == cross(v, w)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rotation_matrix(eta: NDArray[np.floating]) -> NDArray[np.floating]:
    """Body-to-world rotation for ZYX Euler angles [phi, theta, psi]."""
    cphi, sphi = np.cos(eta[0]), np.sin(eta[0])
    cth, sth = np.cos(eta[1]), np.sin(eta[1])
    cpsi, spsi = np.cos(eta[2]), np.sin(eta[2])
    return np.array([
        [cpsi * cth, cpsi * sth * sphi - spsi * cphi, cpsi * sth * cphi + spsi * sphi],
        [spsi * cth, spsi * sth * sphi + cpsi * cphi, spsi * sth * cphi - cpsi * sphi],
        [-sth, cth * sphi, cth * cphi],
    ])


def _check_pitch(theta: float) -> None:
    if abs(np.cos(theta)) < GIMBAL_MARGIN:
        raise GimbalLockError(
            f"pitch {theta:.6f} rad is within {GIMBAL_MARGIN} of the "
            "Euler-rate singularity at +/- pi/2"
        )


def euler_rate_matrix(eta: NDArray[np.floating]) -> NDArray[np.floating]:
    """Map W(eta) from body rates to Euler-angle rates, etadot = W omega."""
    _check_pitch(eta[1])
    cphi, sphi = np.cos(eta[0]), np.sin(eta[0])
    cth = np.cos(eta[1])
    tth = np.tan(eta[1])
    return np.array([
        [1.0, sphi * tth, cphi * tth],
        [0.0, cphi, -sphi],
        [0.0, sphi / cth, cphi / cth],
    ])


def continuous_dynamics(
    x: NDArray[np.floating],
    u: NDArray[np.floating],
    d: NDArray[np.floating],
    params: QuadrotorParams,
) -> NDArray[np.floating]:
    """Time derivative of the 12-dimensional state."""
    v = x[VEL]
    eta = x[ATT]
    omega = x[RATE]
    R = rotation_matrix(eta)
    W = euler_rate_matrix(eta)

    xdot = np.empty(N_STATES)
    xdot[POS] = v
    xdot[VEL] = (R[:, 2] * u[0] + d[:3]) / params.mass
    xdot[5] -= params.gravity
    xdot[ATT] = W @ omega
    J_omega = np.asarray(params.inertia_diag) * omega
    xdot[RATE] = params.inertia_inv @ (u[1:4] - np.cross(omega, J_omega) + d[3:6])
    return xdot


def rk4_step(
    x: NDArray[np.floating],
    u: NDArray[np.floating],
    d: NDArray[np.floating],
    dt: float,
    params: QuadrotorParams,
) -> NDArray[np.floating]:
    """One classical Runge-Kutta step with zero-order-hold input and disturbance."""
    return rk4(lambda s: continuous_dynamics(s, u, d, params), x, dt)


def rk4(f, x: NDArray[np.floating], dt: float) -> NDArray[np.floating]:
    """Classical fourth-order Runge-Kutta step for an autonomous field f."""
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def hover_state(position: NDArray[np.floating]) -> NDArray[np.floating]:
    """State at rest at `position` with level attitude."""
    x = np.zeros(N_STATES)
    x[POS] = position
    return x


def hover_input(params: QuadrotorParams) -> NDArray[np.floating]:
    """Input that balances gravity at level attitude."""
    return np.array([params.mass * params.gravity, 0.0, 0.0, 0.0])
