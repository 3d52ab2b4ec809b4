"""State-dependent coefficient (SDC) form of the quadrotor dynamics.

The nonlinear model is rewritten exactly as

    xdot = A(x) x + B(x) u + C + E_d d

where A and B are re-evaluated at a linearization point every control step
and the constant C = f(x_lin, u_lin, 0) - A x_lin - B u_lin absorbs gravity
together with any factorization residue, so the identity holds exactly at
the linearization point.  The blocks of A are also the exact Jacobian
df/dx evaluated with the linearization thrust, which lets the SQP benchmark
reuse them as sensitivities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .rigidbody import (
    N_DISTURBANCES,
    N_INPUTS,
    N_STATES,
    QuadrotorParams,
    continuous_dynamics,
    euler_rate_matrix,
    rotation_matrix,
    skew,
)

__all__ = ["SdcModel", "build_A", "build_B", "affine_offset", "build_E_d", "sdc_model"]


@dataclass(frozen=True)
class SdcModel:
    """Pointwise-affine model valid exactly at (x_lin, u_lin)."""

    A: NDArray[np.floating]
    B: NDArray[np.floating]
    C: NDArray[np.floating]
    E_d: NDArray[np.floating]
    x_lin: NDArray[np.floating]
    u_lin: NDArray[np.floating]


def _thrust_axis_jacobian(eta: NDArray[np.floating]) -> NDArray[np.floating]:
    """d(R(eta) e3)/d eta for the ZYX convention."""
    cphi, sphi = np.cos(eta[0]), np.sin(eta[0])
    cth, sth = np.cos(eta[1]), np.sin(eta[1])
    cpsi, spsi = np.cos(eta[2]), np.sin(eta[2])
    return np.array([
        [-cpsi * sth * sphi + spsi * cphi, cpsi * cth * cphi, -spsi * sth * cphi + cpsi * sphi],
        [-spsi * sth * sphi - cpsi * cphi, spsi * cth * cphi, cpsi * sth * cphi + spsi * sphi],
        [-cth * sphi, -sth * cphi, 0.0],
    ])


def _euler_rate_state_jacobian(
    eta: NDArray[np.floating], omega: NDArray[np.floating]
) -> NDArray[np.floating]:
    """d(W(eta) omega)/d eta; yaw never enters W, so the last column is zero."""
    cphi, sphi = np.cos(eta[0]), np.sin(eta[0])
    cth, sth = np.cos(eta[1]), np.sin(eta[1])
    tth = sth / cth
    q, r = omega[1], omega[2]
    a = q * cphi - r * sphi
    b = q * sphi + r * cphi
    return np.array([
        [a * tth, b / cth**2, 0.0],
        [-b, 0.0, 0.0],
        [a / cth, b * sth / cth**2, 0.0],
    ])


def build_B(x: NDArray[np.floating], params: QuadrotorParams) -> NDArray[np.floating]:
    """Input matrix: thrust acts along the current body z-axis, torques via J^-1."""
    B = np.zeros((N_STATES, N_INPUTS))
    R = rotation_matrix(x[6:9])
    B[3:6, 0] = R[:, 2] / params.mass
    B[9:12, 1:4] = params.inertia_inv
    return B


def build_A(
    x: NDArray[np.floating], thrust: float, params: QuadrotorParams
) -> NDArray[np.floating]:
    """State coefficient matrix evaluated at x with the given thrust."""
    eta = x[6:9]
    omega = x[9:12]
    J = params.inertia
    A = np.zeros((N_STATES, N_STATES))
    A[0:3, 3:6] = np.eye(3)
    A[3:6, 6:9] = (thrust / params.mass) * _thrust_axis_jacobian(eta)
    A[6:9, 6:9] = _euler_rate_state_jacobian(eta, omega)
    A[6:9, 9:12] = euler_rate_matrix(eta)
    A[9:12, 9:12] = params.inertia_inv @ (skew(J @ omega) - skew(omega) @ J)
    return A


def affine_offset(
    x_lin: NDArray[np.floating],
    u_lin: NDArray[np.floating],
    A: NDArray[np.floating],
    B: NDArray[np.floating],
    params: QuadrotorParams,
) -> NDArray[np.floating]:
    """Constant making the affine model exact at the linearization point."""
    f = continuous_dynamics(x_lin, u_lin, np.zeros(N_DISTURBANCES), params)
    return f - A @ x_lin - B @ u_lin


def build_E_d(params: QuadrotorParams) -> NDArray[np.floating]:
    """Disturbance input map: world force on velocity, body torque on rates."""
    E = np.zeros((N_STATES, N_DISTURBANCES))
    E[3:6, 0:3] = np.eye(3) / params.mass
    E[9:12, 3:6] = params.inertia_inv
    return E


def sdc_model(
    x_lin: NDArray[np.floating],
    u_lin: NDArray[np.floating],
    params: QuadrotorParams,
) -> SdcModel:
    """Factor the dynamics about (x_lin, u_lin)."""
    A = build_A(x_lin, u_lin[0], params)
    B = build_B(x_lin, params)
    C = affine_offset(x_lin, u_lin, A, B, params)
    return SdcModel(A=A, B=B, C=C, E_d=build_E_d(params),
                    x_lin=np.asarray(x_lin, dtype=float).copy(),
                    u_lin=np.asarray(u_lin, dtype=float).copy())
