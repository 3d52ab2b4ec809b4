"""Model-predictive controllers over a condensed tracking QP.

Three controllers share one QP backbone. ``build_tracking_qp`` condenses a
sequence of affine step models ``x+ = A x + B u + c (+ E d)`` into a dense
program over the input sequence only. ``SdcMpc`` feeds it a single factored
model refreshed at every measurement together with terminal ingredients from
the same factorization. ``RobustSdcMpc`` adds a disturbance estimate to the
model offsets. ``NmpcController`` iterates the QP inside an SQP loop on a
multiple-shooting iterate with exact discrete Jacobians of the RK4 map.

Obstacle avoidance enters as one halfspace per predicted step, linearized
at the previous prediction (or the reference when nothing better exists).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .observer import DisturbanceObserver
from .qp import QpStatus, QuadraticProgram, solve_qp, stacked_inequalities
from .riccati import TerminalIngredients, terminal_ingredients
from .rigidbody import GimbalLockError
from .sdc import SdcModel

DEFAULT_Q = np.diag([50.0, 50.0, 80.0, 20.0, 20.0, 20.0,
                     10.0, 10.0, 10.0, 2.0, 2.0, 2.0])
DEFAULT_R = np.diag([0.1, 0.5, 0.5, 0.2])
DEFAULT_U_MIN = np.array([0.0, -1.0, -1.0, -0.5])
DEFAULT_U_MAX = np.array([20.0, 1.0, 1.0, 0.5])

MERIT_DEFECT_WEIGHT = 1e3
MERIT_OBSTACLE_WEIGHT = 1e4
SOFT_OBSTACLE_WEIGHT = 1e4
# Torque per rad/s of body rate when a diverged warm start is rebuilt. The
# damping time constant is inertia over this, about 0.1 s, so total attitude
# travel during the rebuilt rollout is bounded by a tenth of the entry rate.
WARM_RATE_DAMP = 0.3

# Cushion between an obstacle row's offset and what the shifted previous
# plan reaches, so the retained candidate solution has strictly positive
# slack on every row it is used to admit.
ADMIT_SLACK = 1e-4
# Outward correction credited to moderate input effort when deciding how
# much of a row's tangent offset is attainable: roughly half the full-tilt
# lateral acceleration, applied after the four integrator stages torque
# needs to reach xy position. Rows this far out re-harden to their tangent
# planes in undisturbed flight, which is what keeps boundary riding from
# creeping inward.
ADMIT_LATERAL_ACCEL = 1.7
ADMIT_DEAD_STEPS = 4


class CenterCoincidenceError(ValueError):
    """Obstacle linearization point coincides with the obstacle center."""


class TerminalMode(Enum):
    COST_ONLY = "cost"
    COST_PLUS_PENALTY = "cost+penalty"


def _check_symmetric(M: NDArray, name: str) -> NDArray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(M, M.T, atol=1e-10 * max(1.0, np.abs(M).max())):
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class MpcConfig:
    """Shared knobs for all three controllers."""

    horizon: int = 20
    ts: float = 0.1
    Q: NDArray = field(default_factory=lambda: DEFAULT_Q.copy())
    R: NDArray = field(default_factory=lambda: DEFAULT_R.copy())
    u_min: NDArray = field(default_factory=lambda: DEFAULT_U_MIN.copy())
    u_max: NDArray = field(default_factory=lambda: DEFAULT_U_MAX.copy())
    terminal_mode: TerminalMode = TerminalMode.COST_ONLY
    terminal_penalty_weight: float = 0.0
    kappa: float = 0.1
    sqp_max_iters: int = 20
    sqp_tol: float = 1e-6
    linearize_at_reference: bool = False
    observer_alpha: float = 0.9
    observer_saturation: tuple[float, float] | None = None

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ValueError("horizon must be at least 1")
        object.__setattr__(self, "horizon", int(self.horizon))
        if self.ts <= 0.0:
            raise ValueError("ts must be positive")
        Q = _check_symmetric(self.Q, "Q")
        R = _check_symmetric(self.R, "R")
        if np.linalg.eigvalsh(Q).min() < -1e-10 * max(1.0, np.abs(Q).max()):
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 1e-12 * max(1.0, np.abs(R).max()):
            raise ValueError("R must be positive definite")
        u_min = np.asarray(self.u_min, dtype=float).ravel()
        u_max = np.asarray(self.u_max, dtype=float).ravel()
        if u_min.shape != u_max.shape:
            raise ValueError("u_min and u_max must have the same shape")
        if not np.all(u_min < u_max):
            raise ValueError("u_min must be strictly below u_max")
        if self.terminal_penalty_weight < 0.0:
            raise ValueError("terminal_penalty_weight must be nonnegative")
        if self.kappa < 0.0:
            raise ValueError("kappa must be nonnegative")
        if int(self.sqp_max_iters) < 1 or self.sqp_tol <= 0.0:
            raise ValueError("bad SQP settings")
        if not 0.0 <= self.observer_alpha < 1.0:
            raise ValueError("observer_alpha must lie in [0, 1)")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "u_min", u_min)
        object.__setattr__(self, "u_max", u_max)
        object.__setattr__(self, "sqp_max_iters", int(self.sqp_max_iters))


@dataclass(frozen=True)
class ObstacleSpec:
    """Cylindrical keep-out zone in the horizontal plane."""

    center: tuple[float, float] = (-1.0, -1.0)
    radius: float = 0.5
    margin: float = 0.25

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).ravel()
        if center.shape != (2,):
            raise ValueError("center must have two components")
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        if self.margin < 0.0:
            raise ValueError("margin must be nonnegative")
        object.__setattr__(self, "center", center)

    @property
    def inflated_radius(self) -> float:
        return self.radius + self.margin


@dataclass(frozen=True)
class DiscreteModel:
    """One-step affine model ``x+ = A_d x + B_d u + c_d + E_dd d``."""

    A_d: NDArray
    B_d: NDArray
    c_d: NDArray
    E_dd: NDArray | None = None


@dataclass(frozen=True)
class ReferenceWindow:
    """Reference states and inputs over one horizon."""

    states: NDArray  # (N+1, n)
    inputs: NDArray  # (N, m)


@dataclass
class ControlStepResult:
    u_applied: NDArray
    predicted_trajectory: NDArray  # (N+1, n) states, measurement first
    predicted_inputs: NDArray      # (N, m)
    objective: float
    qp_status: QpStatus
    qp_iterations: int
    sqp_iterations: int
    cpu_seconds: float
    feasible: bool
    obstacle_active: bool
    terminal_in_set: bool


def discretize_affine(model: SdcModel, ts: float) -> DiscreteModel:
    """Forward-Euler discretization of a factored affine model."""
    if ts <= 0.0:
        raise ValueError("ts must be positive")
    n = model.A.shape[0]
    return DiscreteModel(A_d=np.eye(n) + ts * model.A,
                         B_d=ts * model.B,
                         c_d=ts * model.C,
                         E_dd=ts * model.E_d)


def rk4_discrete(system, x: NDArray, u: NDArray, ts: float) -> NDArray:
    """One RK4 step of the undisturbed dynamics of ``system``."""
    k1 = system.dynamics(x, u)
    k2 = system.dynamics(x + 0.5 * ts * k1, u)
    k3 = system.dynamics(x + 0.5 * ts * k2, u)
    k4 = system.dynamics(x + ts * k3, u)
    return x + (ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_jacobians(system, x: NDArray, u: NDArray,
                  ts: float) -> tuple[NDArray, NDArray, NDArray]:
    """Exact Jacobians of the RK4 map, chained through its stages.

    Returns ``(dF/dx, dF/du, F(x, u))``; the stage Jacobians come from the
    system's continuous-time ones, so no finite differencing is involved.
    """
    n = x.shape[0]
    eye = np.eye(n)
    k1 = system.dynamics(x, u)
    A1, B1 = system.jacobians(x, u)
    x2 = x + 0.5 * ts * k1
    k2 = system.dynamics(x2, u)
    A2, B2 = system.jacobians(x2, u)
    J2 = A2 @ (eye + 0.5 * ts * A1)
    G2 = A2 @ (0.5 * ts * B1) + B2
    x3 = x + 0.5 * ts * k2
    k3 = system.dynamics(x3, u)
    A3, B3 = system.jacobians(x3, u)
    J3 = A3 @ (eye + 0.5 * ts * J2)
    G3 = A3 @ (0.5 * ts * G2) + B3
    x4 = x + ts * k3
    k4 = system.dynamics(x4, u)
    A4, B4 = system.jacobians(x4, u)
    J4 = A4 @ (eye + ts * J3)
    G4 = A4 @ (ts * G3) + B4
    A_d = eye + (ts / 6.0) * (A1 + 2.0 * J2 + 2.0 * J3 + J4)
    B_d = (ts / 6.0) * (B1 + 2.0 * G2 + 2.0 * G3 + G4)
    x_next = x + (ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return A_d, B_d, x_next


def linearize_obstacle(p_xy: NDArray, obstacle: ObstacleSpec) -> tuple[NDArray, float]:
    """Halfspace ``n @ p >= b`` separating ``p_xy``'s side from the obstacle.

    The normal points from the obstacle center toward the linearization
    point; every point of the inflated disk violates the halfspace.
    """
    p_xy = np.asarray(p_xy, dtype=float)
    delta = p_xy - obstacle.center
    dist = float(np.linalg.norm(delta))
    if dist < 1e-9:
        raise CenterCoincidenceError(
            "cannot orient the separating halfspace from the obstacle center")
    normal = delta / dist
    offset = float(normal @ obstacle.center) + obstacle.inflated_radius
    return normal, offset


# ---------------------------------------------------------------------------
# condensed tracking QP
# ---------------------------------------------------------------------------

@dataclass
class CondensedQp:
    """Input-to-state map of the condensed program: ``X = M u + m0``."""

    M: NDArray
    m0: NDArray  # (N, n) zero-input state predictions for steps 1..N
    x0: NDArray
    n_states: int
    n_inputs: int
    horizon: int

    @property
    def n_u(self) -> int:
        return self.horizon * self.n_inputs

    def predict(self, u_flat: NDArray) -> NDArray:
        """States 0..N reached by the input sequence ``u_flat``."""
        flat = self.M @ np.asarray(u_flat, dtype=float) + self.m0.ravel()
        return np.vstack([self.x0[None, :],
                          flat.reshape(self.horizon, self.n_states)])


def stage_objective(states: NDArray, inputs: NDArray, ref: ReferenceWindow,
                    cfg: MpcConfig, P_term: NDArray) -> float:
    """Tracking cost of a trajectory, terminal weight included.

    Inputs are penalized absolutely, not relative to a trim value, so a
    steady hover pays a small input cost and trades it against a small
    tracking offset.
    """
    inputs = np.asarray(inputs, dtype=float).reshape(cfg.horizon, -1)
    total = 0.0
    for i in range(cfg.horizon):
        e = states[i] - ref.states[i]
        total += e @ cfg.Q @ e + inputs[i] @ cfg.R @ inputs[i]
    e_term = states[cfg.horizon] - ref.states[cfg.horizon]
    return float(total + e_term @ P_term @ e_term)


def build_tracking_qp(models: Sequence[DiscreteModel], x0: NDArray,
                      ref: ReferenceWindow, cfg: MpcConfig, P_term: NDArray,
                      d_hat: NDArray | None = None,
                      halfspaces: Sequence[tuple[NDArray, float] | None] | None = None,
                      soft_obstacle_weight: float | None = None,
                      ) -> tuple[QuadraticProgram, CondensedQp]:
    """Condense step models, cost, and constraints into a dense QP.

    ``models[i]`` propagates step i; passing the same model N times gives
    the time-invariant case. ``halfspaces[i]`` (one per predicted step
    1..N, None to skip) become rows ``n @ p_xy >= b`` on the first two
    state components. With ``soft_obstacle_weight`` the rows get slack
    variables penalized linearly, so the program stays feasible.
    """
    N = cfg.horizon
    if len(models) != N:
        raise ValueError("need one step model per horizon step")
    n = models[0].A_d.shape[0]
    m = models[0].B_d.shape[1]
    x0 = np.asarray(x0, dtype=float)

    offsets = []
    for md in models:
        c_eff = md.c_d
        if d_hat is not None and md.E_dd is not None and np.any(d_hat != 0.0):
            c_eff = c_eff + md.E_dd @ np.asarray(d_hat, dtype=float)
        offsets.append(c_eff)

    m0 = np.empty((N, n))
    prev = x0
    for i, md in enumerate(models):
        prev = md.A_d @ prev + offsets[i]
        m0[i] = prev

    M = np.zeros((N * n, N * m))
    for j in range(N):
        block = models[j].B_d
        M[j * n:(j + 1) * n, j * m:(j + 1) * m] = block
        for i in range(j + 1, N):
            block = models[i].A_d @ block
            M[i * n:(i + 1) * n, j * m:(j + 1) * m] = block

    r_states = np.asarray(ref.states, dtype=float)[1:]
    QM = np.empty_like(M)
    Qe = np.empty(N * n)
    for i in range(N):
        W = cfg.Q if i < N - 1 else P_term
        QM[i * n:(i + 1) * n] = W @ M[i * n:(i + 1) * n]
        Qe[i * n:(i + 1) * n] = W @ (m0[i] - r_states[i])
    R_bar = np.kron(np.eye(N), cfg.R)
    H = 2.0 * (M.T @ QM + R_bar)
    H = 0.5 * (H + H.T)
    g = 2.0 * (M.T @ Qe)

    lb = np.tile(cfg.u_min, N)
    ub = np.tile(cfg.u_max, N)

    rows = []
    lows = []
    if halfspaces is not None:
        if len(halfspaces) != N:
            raise ValueError("need one halfspace entry per predicted step")
        for i, entry in enumerate(halfspaces):
            if entry is None:
                continue
            normal, offset = entry
            rows.append(normal @ M[i * n:i * n + 2, :])
            lows.append(offset - normal @ m0[i, 0:2])

    cond = CondensedQp(M=M, m0=m0, x0=x0, n_states=n, n_inputs=m, horizon=N)

    if not rows:
        qp = QuadraticProgram(H=H, g=g, lb=lb, ub=ub)
        return qp, cond

    A_in = np.vstack(rows)
    l_in = np.asarray(lows, dtype=float)
    u_in = np.full(len(rows), np.inf)
    if soft_obstacle_weight is None:
        qp = QuadraticProgram(H=H, g=g, A_in=A_in, l_in=l_in, u_in=u_in,
                              lb=lb, ub=ub)
        return qp, cond

    # slack-augmented variant: n @ p_i + s_i >= b_i with s_i >= 0
    k = len(rows)
    d = N * m
    H_ext = np.zeros((d + k, d + k))
    H_ext[:d, :d] = H
    g_ext = np.concatenate([g, np.full(k, float(soft_obstacle_weight))])
    A_ext = np.hstack([A_in, np.eye(k)])
    qp = QuadraticProgram(H=H_ext, g=g_ext, A_in=A_ext, l_in=l_in, u_in=u_in,
                          lb=np.concatenate([lb, np.zeros(k)]),
                          ub=np.concatenate([ub, np.full(k, np.inf)]))
    return qp, cond


# ---------------------------------------------------------------------------
# controllers
# ---------------------------------------------------------------------------

class _RecedingHorizonBase:
    """Shared bookkeeping: reference windows, obstacle rows, warm starts."""

    def __init__(self, system, cfg: MpcConfig,
                 obstacle: ObstacleSpec | None = None,
                 reference: Callable[[float], NDArray] | None = None):
        if reference is None:
            raise ValueError("a reference provider r(t) -> state is required")
        if cfg.u_min.shape != (system.n_inputs,):
            raise ValueError("input bounds do not match the system")
        self.system = system
        self.cfg = cfg
        self.obstacle = obstacle
        self.reference = reference
        self._u_trim = system.trim_input()
        self._u_bar_dist = np.minimum(self._u_trim - cfg.u_min,
                                      cfg.u_max - self._u_trim)
        self._u_prev = self._u_trim.copy()
        self._pred_states: NDArray | None = None
        self._prev_normals: list[NDArray | None] = [None] * cfg.horizon
        self._last_problem = None

    def _reference_window(self, t: float) -> ReferenceWindow:
        cfg = self.cfg
        states = np.stack([np.asarray(self.reference(t + i * cfg.ts), float)
                           for i in range(cfg.horizon + 1)])
        inputs = np.tile(self._u_trim, (cfg.horizon, 1))
        return ReferenceWindow(states=states, inputs=inputs)

    def _halfspaces_from_anchors(self, anchors: Sequence[NDArray],
                                 ref: ReferenceWindow):
        """One halfspace per step; degenerate anchors fall back to the last
        usable normal, then to the direction toward the current reference."""
        if self.obstacle is None:
            return None
        out = []
        for j, anchor in enumerate(anchors):
            try:
                normal, offset = linearize_obstacle(anchor, self.obstacle)
            except CenterCoincidenceError:
                normal = self._prev_normals[j]
                if normal is None:
                    direction = ref.states[0][0:2] - self.obstacle.center
                    norm = np.linalg.norm(direction)
                    normal = (direction / norm if norm > 1e-9
                              else np.array([1.0, 0.0]))
                offset = float(normal @ self.obstacle.center) \
                    + self.obstacle.inflated_radius
            self._prev_normals[j] = normal
            out.append((normal, offset))
        return out

    def _obstacle_activity(self, states: NDArray) -> bool:
        if self.obstacle is None:
            return False
        dists = np.linalg.norm(states[1:, 0:2] - self.obstacle.center, axis=1)
        return bool(dists.min() <= self.obstacle.inflated_radius + 1e-6)

    def _terminal_weight(self, ing: TerminalIngredients) -> NDArray:
        if self.cfg.terminal_mode is TerminalMode.COST_PLUS_PENALTY:
            return ing.P + self.cfg.terminal_penalty_weight * ing.S
        return ing.P

    def objective_of(self, u_flat: NDArray) -> float | None:
        """Cost of an input sequence on the most recently assembled problem,
        or None if it violates that problem's constraints."""
        if self._last_problem is None:
            return None
        qp, cond, ref, P_eff = self._last_problem
        u_flat = np.asarray(u_flat, dtype=float).ravel()
        lb = np.tile(self.cfg.u_min, self.cfg.horizon)
        ub = np.tile(self.cfg.u_max, self.cfg.horizon)
        if np.any(u_flat < lb - 1e-9) or np.any(u_flat > ub + 1e-9):
            return None
        if qp.A_in is not None and qp.A_in.shape[0]:
            if np.any(qp.A_in[:, :cond.n_u] @ u_flat < qp.l_in - 1e-9):
                return None
        states = cond.predict(u_flat)
        inputs = u_flat.reshape(self.cfg.horizon, -1)
        return stage_objective(states, inputs, ref, self.cfg, P_eff)


class SdcMpc(_RecedingHorizonBase):
    """Per-step QP controller on a measurement-refreshed factored model.

    Every call refactors the dynamics at the current state (input fixed at
    the previously applied one), recomputes terminal ingredients for that
    model, and solves a single tracking QP warm-started from the shifted
    previous solution. An infeasible program holds the previous input.
    """

    def __init__(self, system, cfg: MpcConfig,
                 obstacle: ObstacleSpec | None = None,
                 reference: Callable[[float], NDArray] | None = None):
        super().__init__(system, cfg, obstacle=obstacle, reference=reference)
        self._u_lin = self._u_trim.copy()
        self._warm_u: NDArray | None = None
        self._warm_duals: NDArray | None = None

    def _current_estimate(self) -> NDArray | None:
        return None

    def _after_step(self, x_meas: NDArray, u_applied: NDArray,
                    model: SdcModel) -> None:
        # The factorization loses xy-translational controllability as the
        # linearization thrust approaches zero (the attitude-to-acceleration
        # coupling scales with it), so a momentary near-zero applied thrust
        # would make the next Riccati problem unsolvable. Any factorization
        # point is exact by construction; keep the chosen one stabilizable.
        self._u_lin = u_applied.copy()
        self._u_lin[0] = max(self._u_lin[0], 0.2 * self._u_trim[0])

    def _admit_candidate(self, halfspaces, dm: DiscreteModel,
                         x_meas: NDArray, d_hat: NDArray | None):
        """Cap each obstacle row at what the retained plan still reaches.

        The rows are linearized at the previous plan, which no longer
        starts where the plant actually is. After a disturbance kick the
        early rows can demand corrections position dynamics cannot deliver
        in that many steps, and mid-horizon rows corrections that only a
        rail-to-rail input swing delivers; the program then either goes
        infeasible, leaving the loop to coast open-loop on the fallback
        input, or returns a plan whose first move is a full-range thrust
        and torque swing. Both are how tumbles start.

        Replaying the shifted previous input plan from the measured state
        under the current model gives a trajectory that is attainable by
        construction. Each offset is capped at that trajectory's reach
        plus an outward allowance that grows with the step's real control
        authority. Far rows keep their tangent planes in ordinary flight
        because the allowance there exceeds any drift, so the avoidance
        barrier never creeps; rows a kick has pushed beyond moderate
        authority are relaxed to what moderate authority attains, which
        also removes the optimizer's reason to pick extreme inputs, since
        against a reference inside the disk the relaxed row is the
        cost-preferred place to be.

        Concessions stop at the disk itself: a row may trade away the
        inflation margin when the plan cannot keep it, never the disk,
        or consecutive same-direction kicks ratchet the caps inward and
        the optimizer follows them through the obstacle.
        """
        c_eff = dm.c_d
        if d_hat is not None and dm.E_dd is not None and np.any(d_hat != 0.0):
            c_eff = c_eff + dm.E_dd @ np.asarray(d_hat, dtype=float)
        N = self.cfg.horizon
        m = self.system.n_inputs
        ts = self.cfg.ts
        if self._warm_u is not None:
            candidate = self._warm_u.reshape(N, m)
        else:
            candidate = np.tile(self._u_prev, (N, 1))
        center = np.asarray(self.obstacle.center, dtype=float)
        out = list(halfspaces)
        x = np.asarray(x_meas, dtype=float)
        for i in range(len(out)):
            x = dm.A_d @ x + dm.B_d @ candidate[i] + c_eff
            if out[i] is None:
                continue
            normal, offset = out[i]
            t_auth = max(i + 1 - ADMIT_DEAD_STEPS, 0) * ts
            allowance = 0.5 * ADMIT_LATERAL_ACCEL * t_auth * t_auth
            if allowance == 0.0:
                allowance = -ADMIT_SLACK
            reachable = float(normal @ x[0:2]) + allowance
            reachable = max(reachable,
                            float(normal @ center) + self.obstacle.radius)
            if reachable < offset:
                out[i] = (normal, reachable)
        return out

    def step(self, x_meas: NDArray, t: float) -> ControlStepResult:
        t0 = time.perf_counter()
        cfg = self.cfg
        N = cfg.horizon
        m = self.system.n_inputs
        x_meas = np.asarray(x_meas, dtype=float)
        ref = self._reference_window(t)

        if cfg.linearize_at_reference:
            model = self.system.sdc(ref.states[0], self._u_trim)
        else:
            model = self.system.sdc(x_meas, self._u_lin)
        ing = terminal_ingredients(model.A, model.B, cfg.Q, cfg.R,
                                   self._u_bar_dist, kappa=0.0)
        P_eff = self._terminal_weight(ing)
        dm = discretize_affine(model, cfg.ts)

        if self._pred_states is None:
            anchors = [ref.states[i][0:2] for i in range(1, N + 1)]
        else:
            anchors = [self._pred_states[min(i + 1, N)][0:2]
                       for i in range(1, N + 1)]
        halfspaces = self._halfspaces_from_anchors(anchors, ref)
        d_hat = self._current_estimate()
        if halfspaces is not None:
            halfspaces = self._admit_candidate(halfspaces, dm, x_meas, d_hat)

        qp, cond = build_tracking_qp([dm] * N, x_meas, ref, cfg, P_eff,
                                     d_hat=d_hat,
                                     halfspaces=halfspaces)
        sol = solve_qp(qp, warm_start=self._warm_u,
                       warm_duals=self._warm_duals)

        usable = sol.status is not QpStatus.INFEASIBLE
        if usable and sol.status is not QpStatus.OPTIMAL:
            # A solve that ran out of iterations is only trustworthy if the
            # plan it returned satisfies the constraints and is at least
            # near stationary; a stalled iterate can be constraint-feasible
            # yet carry arbitrary inputs, and applying one rail-to-rail
            # torque from such an iterate is enough to start a tumble.
            G_all, h_all = stacked_inequalities(qp)
            usable = (float((G_all @ sol.x_opt - h_all).max()) <= 1e-6
                      and sol.kkt_residual <= 1e-3)

        if not usable:
            feasible = False
            if (sol.status is not QpStatus.INFEASIBLE
                    and self._warm_u is not None):
                # Stalled but not infeasible: play the tail of the last
                # accepted plan. It was built to continue from here, so it
                # carries the counter-torques a plain input hold would
                # drop, and holding an aggressive input for even two
                # samples is how attitude divergence starts.
                u_seq = self._warm_u.reshape(N, m).copy()
                self._warm_u = np.concatenate([self._warm_u[m:],
                                               self._warm_u[-m:]])
            else:
                u_seq = np.tile(self._u_prev, (N, 1))
                self._warm_u = None
            states = cond.predict(u_seq.ravel())
            self._warm_duals = None
        else:
            feasible = True
            u_flat = sol.x_opt
            u_seq = u_flat.reshape(N, m)
            states = cond.predict(u_flat)
            self._warm_u = np.concatenate([u_flat[m:], u_flat[-m:]])
            self._warm_duals = sol.duals

        u_applied = np.clip(u_seq[0], cfg.u_min, cfg.u_max)
        objective = stage_objective(states, u_seq, ref, cfg, P_eff)
        e_term = states[-1] - ref.states[-1]
        terminal_in_set = bool(e_term @ ing.P @ e_term
                               <= ing.alpha * (1.0 + 1e-9) + 1e-12)
        obstacle_active = self._obstacle_activity(states)

        self._pred_states = states
        self._u_prev = u_applied.copy()
        self._after_step(x_meas, u_applied, model)
        self._last_problem = (qp, cond, ref, P_eff)

        return ControlStepResult(
            u_applied=u_applied, predicted_trajectory=states,
            predicted_inputs=u_seq, objective=objective,
            qp_status=sol.status, qp_iterations=sol.iterations,
            sqp_iterations=0, cpu_seconds=time.perf_counter() - t0,
            feasible=feasible, obstacle_active=obstacle_active,
            terminal_in_set=terminal_in_set)


class RobustSdcMpc(SdcMpc):
    """Per-step QP controller with a disturbance estimate in the model.

    ``observe`` must be called once per sample before ``step``; it folds the
    measured prediction error into a filtered disturbance estimate that the
    next program's offsets carry. The estimate is exactly zero until the
    observer has seen a prediction, so the first step reproduces the
    nominal controller bit for bit.
    """

    def __init__(self, system, cfg: MpcConfig,
                 obstacle: ObstacleSpec | None = None,
                 reference: Callable[[float], NDArray] | None = None):
        super().__init__(system, cfg, obstacle=obstacle, reference=reference)
        self.observer = DisturbanceObserver(
            E_dd=cfg.ts * system.E_d, alpha=cfg.observer_alpha,
            saturation=cfg.observer_saturation)

    def observe(self, x_meas: NDArray) -> NDArray:
        """Update the disturbance estimate from the new measurement."""
        return self.observer.update(np.asarray(x_meas, dtype=float))

    def _current_estimate(self) -> NDArray | None:
        return self.observer.d_hat.copy()

    def _after_step(self, x_meas: NDArray, u_applied: NDArray,
                    model: SdcModel) -> None:
        super()._after_step(x_meas, u_applied, model)
        self.observer.store_prediction(x_meas, u_applied, model, self.cfg.ts)


class NmpcController(_RecedingHorizonBase):
    """SQP controller on a multiple-shooting iterate.

    Terminal ingredients are fixed offline at the trim point. Each sample
    the previous input plan is shifted, the states are re-simulated from
    the measurement, and a few Gauss-Newton iterations run: linearize the
    RK4 map at the iterate, solve the condensed QP, line-search the full
    step on an l1 merit of cost plus dynamics defects plus obstacle
    violation. An infeasible subproblem is retried with obstacle slacks.
    """

    def __init__(self, system, cfg: MpcConfig,
                 obstacle: ObstacleSpec | None = None,
                 reference: Callable[[float], NDArray] | None = None):
        super().__init__(system, cfg, obstacle=obstacle, reference=reference)
        A0, B0 = system.jacobians(system.trim_state(), self._u_trim)
        self._ing = terminal_ingredients(A0, B0, cfg.Q, cfg.R,
                                         self._u_bar_dist, kappa=cfg.kappa)
        self._P_eff = self._terminal_weight(self._ing)
        self._iter_inputs: NDArray | None = None
        self._warm_duals: NDArray | None = None

    def _rollout(self, x0: NDArray,
                 inputs: NDArray) -> tuple[NDArray, bool]:
        """Re-simulate a plan; freeze the tail if the model leaves its chart.

        The plan is open loop, so from a noise-perturbed measurement its
        feedforward no longer cancels the body rates and the re-simulation
        can walk into the Euler-rate singularity within the horizon even
        when the plant itself is flying calmly. Freezing the remaining
        stages keeps every stored state evaluable; the returned flag tells
        the caller the iterate is not worth keeping.
        """
        states = np.empty((self.cfg.horizon + 1, self.system.n_states))
        states[0] = x0
        for i in range(self.cfg.horizon):
            try:
                states[i + 1] = rk4_discrete(self.system, states[i],
                                             inputs[i], self.cfg.ts)
            except GimbalLockError:
                states[i + 1:] = states[i]
                return states, False
            if not self.system.state_in_chart(states[i + 1]):
                states[i + 1:] = states[i]
                return states, False
        return states, True

    def _damped_plan(self, x0: NDArray) -> tuple[NDArray, NDArray]:
        """Replacement warm start that sheds body rate instead of replaying
        the discarded feedforward: trim thrust plus pure rate damping, so
        rotational energy only drains and the rollout stays near the entry
        attitude. Position drifts, which the first full SQP step corrects.
        Rigid-body input and state layout assumed; only that model raises
        the error that lands here.
        """
        N = self.cfg.horizon
        inputs = np.empty((N, self.system.n_inputs))
        states = np.empty((N + 1, self.system.n_states))
        states[0] = x0
        for i in range(N):
            u = self._u_trim.copy()
            u[1:4] -= WARM_RATE_DAMP * states[i][9:12]
            inputs[i] = np.clip(u, self.cfg.u_min, self.cfg.u_max)
            states[i + 1] = rk4_discrete(self.system, states[i], inputs[i],
                                         self.cfg.ts)
        return inputs, states

    def _merit(self, states: NDArray, inputs: NDArray,
               ref: ReferenceWindow) -> float:
        """l1 merit: cost + weighted defects + weighted obstacle violation."""
        J = stage_objective(states, inputs, ref, self.cfg, self._P_eff)
        defect = 0.0
        try:
            for i in range(self.cfg.horizon):
                pred = rk4_discrete(self.system, states[i], inputs[i],
                                    self.cfg.ts)
                defect += np.abs(pred - states[i + 1]).sum()
        except GimbalLockError:
            # Candidate outside the model's chart: infinitely bad, so the
            # line search backtracks toward the valid current iterate.
            return float("inf")
        violation = 0.0
        if self.obstacle is not None:
            dists = np.linalg.norm(states[1:, 0:2] - self.obstacle.center,
                                   axis=1)
            violation = np.maximum(self.obstacle.inflated_radius - dists,
                                   0.0).sum()
        return J + MERIT_DEFECT_WEIGHT * defect \
            + MERIT_OBSTACLE_WEIGHT * violation

    def step(self, x_meas: NDArray, t: float) -> ControlStepResult:
        t0 = time.perf_counter()
        cfg = self.cfg
        N = cfg.horizon
        m = self.system.n_inputs
        x_meas = np.asarray(x_meas, dtype=float)
        ref = self._reference_window(t)

        if self._iter_inputs is None:
            u_bar = np.tile(self._u_trim, (N, 1))
        else:
            u_bar = np.vstack([self._iter_inputs[1:], self._iter_inputs[-1:]])
        x_bar, intact = self._rollout(x_meas, u_bar)
        if not intact:
            u_bar, x_bar = self._damped_plan(x_meas)

        qp_iterations = 0
        sqp_iterations = 0
        feasible = True
        warm_duals = self._warm_duals
        last_assembled = None
        last_status = QpStatus.OPTIMAL

        for _ in range(cfg.sqp_max_iters):
            sqp_iterations += 1
            models = []
            for i in range(N):
                A_d, B_d, x_next = rk4_jacobians(self.system, x_bar[i],
                                                 u_bar[i], cfg.ts)
                c_d = x_next - A_d @ x_bar[i] - B_d @ u_bar[i]
                models.append(DiscreteModel(A_d=A_d, B_d=B_d, c_d=c_d))
            anchors = [x_bar[i][0:2] for i in range(1, N + 1)]
            halfspaces = self._halfspaces_from_anchors(anchors, ref)
            qp, cond = build_tracking_qp(models, x_meas, ref, cfg,
                                         self._P_eff, halfspaces=halfspaces)
            sol = solve_qp(qp, warm_start=u_bar.ravel(),
                           warm_duals=warm_duals)
            warm_duals = sol.duals
            if sol.status is QpStatus.INFEASIBLE:
                warm_duals = None
                if halfspaces is not None:
                    qp_soft, cond = build_tracking_qp(
                        models, x_meas, ref, cfg, self._P_eff,
                        halfspaces=halfspaces,
                        soft_obstacle_weight=SOFT_OBSTACLE_WEIGHT)
                    sol = solve_qp(qp_soft)
                if sol.status is QpStatus.INFEASIBLE:
                    feasible = sqp_iterations > 1
                    last_status = sol.status
                    break
            qp_iterations += sol.iterations
            last_status = sol.status
            last_assembled = (qp, cond, ref, self._P_eff)

            u_new = sol.x_opt[:cond.n_u].reshape(N, m)
            x_new = cond.predict(sol.x_opt[:cond.n_u])
            du = u_new - u_bar
            dx = x_new - x_bar
            step_norm = max(np.abs(du).max(), np.abs(dx).max())
            if step_norm <= cfg.sqp_tol:
                break

            phi0 = self._merit(x_bar, u_bar, ref)
            scale = 1.0
            accepted = False
            for _ in range(10):
                u_cand = u_bar + scale * du
                x_cand = x_bar + scale * dx
                if self._merit(x_cand, u_cand, ref) < phi0:
                    accepted = True
                    break
                scale *= 0.5
            if not accepted:
                break
            u_bar = u_cand
            x_bar = x_cand

        if not feasible:
            u_bar = np.tile(self._u_prev, (N, 1))
            x_bar, _ = self._rollout(x_meas, u_bar)

        u_applied = np.clip(u_bar[0], cfg.u_min, cfg.u_max)
        objective = stage_objective(x_bar, u_bar, ref, cfg, self._P_eff)
        e_term = x_bar[-1] - ref.states[-1]
        terminal_in_set = bool(e_term @ self._ing.P @ e_term
                               <= self._ing.alpha * (1.0 + 1e-9) + 1e-12)
        obstacle_active = self._obstacle_activity(x_bar)

        self._iter_inputs = u_bar
        self._warm_duals = warm_duals
        self._pred_states = x_bar
        self._u_prev = u_applied.copy()
        self._last_problem = last_assembled

        return ControlStepResult(
            u_applied=u_applied, predicted_trajectory=x_bar,
            predicted_inputs=u_bar, objective=objective,
            qp_status=last_status, qp_iterations=qp_iterations,
            sqp_iterations=sqp_iterations,
            cpu_seconds=time.perf_counter() - t0, feasible=feasible,
            obstacle_active=obstacle_active, terminal_in_set=terminal_in_set)


CONTROLLER_KINDS = ("nmpc", "sdc", "robust-sdc")


def make_controller(kind: str, system, cfg: MpcConfig,
                    obstacle: ObstacleSpec | None = None,
                    reference: Callable[[float], NDArray] | None = None):
    """Instantiate a controller by its benchmark name."""
    classes = {"nmpc": NmpcController, "sdc": SdcMpc,
               "robust-sdc": RobustSdcMpc}
    if kind not in classes:
        raise ValueError(f"unknown controller kind {kind!r}; "
                         f"expected one of {CONTROLLER_KINDS}")
    return classes[kind](system, cfg, obstacle=obstacle, reference=reference)
