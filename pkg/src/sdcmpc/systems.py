"""Plant wrappers exposing the interface the controllers consume.

A system object answers four questions: how does the state evolve
(``dynamics``), what are the exact Jacobians at a point (``jacobians``),
what factored model represents the dynamics exactly at a point (``sdc``),
and what does the simulated plant do over one sample (``plant_step``).
``QuadrotorSystem`` wraps the rigid-body model; ``LinearSystem`` provides
an affine stand-in with the same interface so controller behavior can be
checked on plants where all three formulations must coincide.
"""
from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .rigidbody import (
    N_DISTURBANCES,
    N_INPUTS,
    N_STATES,
    QuadrotorParams,
    continuous_dynamics,
    hover_input,
    hover_state,
    rk4_step,
)
from .sdc import SdcModel, build_A, build_B, build_E_d, sdc_model


class QuadrotorSystem:
    """Quadrotor plant plus model factory for the controllers."""

    def __init__(self, params: QuadrotorParams | None = None,
                 plant_substeps: int = 10):
        if plant_substeps < 1:
            raise ValueError("plant_substeps must be at least 1")
        self.params = params if params is not None else QuadrotorParams()
        self.n_states = N_STATES
        self.n_inputs = N_INPUTS
        self.n_disturbances = N_DISTURBANCES
        self.plant_substeps = plant_substeps
        self.E_d = build_E_d(self.params)

    def dynamics(self, x: NDArray, u: NDArray, d: NDArray | None = None) -> NDArray:
        if d is None:
            d = np.zeros(N_DISTURBANCES)
        return continuous_dynamics(x, u, d, self.params)

    def jacobians(self, x: NDArray, u: NDArray) -> tuple[NDArray, NDArray]:
        """State and input Jacobians of the continuous dynamics at (x, u)."""
        return build_A(x, u[0], self.params), build_B(x, self.params)

    def sdc(self, x_lin: NDArray, u_lin: NDArray) -> SdcModel:
        return sdc_model(x_lin, u_lin, self.params)

    def plant_step(self, x: NDArray, u: NDArray, d: NDArray, ts: float) -> NDArray:
        """Integrate the true plant over one sample with substepped RK4."""
        dt = ts / self.plant_substeps
        for _ in range(self.plant_substeps):
            x = rk4_step(x, u, d, dt, self.params)
        return x

    def state_in_chart(self, x: NDArray) -> bool:
        """Whether the Euler parameterization is well conditioned here.

        Past one radian of roll or pitch the rate matrix is close enough
        to its singularity that linearizations stop resembling the plant;
        predictions that wander there are not worth keeping.
        """
        return bool(np.all(np.abs(x[6:8]) <= 1.0))

    def trim_state(self, position=(0.0, 0.0, 0.0)) -> NDArray:
        return hover_state(np.asarray(position, dtype=float))

    def trim_input(self) -> NDArray:
        return hover_input(self.params)


class LinearSystem:
    """Affine plant ``xdot = A x + B u + c + E_d d`` with the same interface.

    The factored model returned by :meth:`sdc` is state independent, so the
    per-step controller and the iterative one see literally the same data.
    """

    def __init__(self, A: NDArray, B: NDArray, c: NDArray | None = None,
                 E_d: NDArray | None = None, plant_substeps: int = 10):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        n, m = self.B.shape
        if self.A.shape != (n, n):
            raise ValueError("A and B have inconsistent shapes")
        self.c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
        self.E_d = (np.zeros((n, 1)) if E_d is None
                    else np.asarray(E_d, dtype=float))
        if self.c.shape != (n,) or self.E_d.shape[0] != n:
            raise ValueError("offset or disturbance map has wrong shape")
        self.n_states = n
        self.n_inputs = m
        self.n_disturbances = self.E_d.shape[1]
        self.plant_substeps = plant_substeps

    def dynamics(self, x: NDArray, u: NDArray, d: NDArray | None = None) -> NDArray:
        xdot = self.A @ x + self.B @ u + self.c
        if d is not None:
            xdot = xdot + self.E_d @ d
        return xdot

    def jacobians(self, x: NDArray, u: NDArray) -> tuple[NDArray, NDArray]:
        return self.A.copy(), self.B.copy()

    def sdc(self, x_lin: NDArray, u_lin: NDArray) -> SdcModel:
        return SdcModel(A=self.A.copy(), B=self.B.copy(), C=self.c.copy(),
                        E_d=self.E_d.copy(), x_lin=np.asarray(x_lin, float).copy(),
                        u_lin=np.asarray(u_lin, float).copy())

    def plant_step(self, x: NDArray, u: NDArray, d: NDArray, ts: float) -> NDArray:
        dt = ts / self.plant_substeps
        for _ in range(self.plant_substeps):
            k1 = self.dynamics(x, u, d)
            k2 = self.dynamics(x + 0.5 * dt * k1, u, d)
            k3 = self.dynamics(x + 0.5 * dt * k2, u, d)
            k4 = self.dynamics(x + dt * k3, u, d)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return x

    def state_in_chart(self, x: NDArray) -> bool:
        """A global linear model has no parameterization boundary."""
        return True

    def trim_state(self, position=None) -> NDArray:
        return np.zeros(self.n_states)

    def trim_input(self) -> NDArray:
        return np.zeros(self.n_inputs)
