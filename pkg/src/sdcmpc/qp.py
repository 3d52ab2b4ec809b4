"""Dense convex QP solver (Mehrotra predictor-corrector interior point).

Solves
    min  1/2 x' H x + g' x
    s.t. l_in <= A_in x <= u_in,   lb <= x <= ub

All inequalities are stacked internally into one-sided form G x <= h (see
`stacked_inequalities` for the row order, which fixes the meaning of the
dual vector).  The horizon sizes this package produces (80 variables, a
couple hundred rows) are far below the regime where sparse KKT solvers pay
off, so everything is dense and Cholesky-based.

The solver is deterministic: identical inputs produce bitwise-identical
iterate sequences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import cho_factor, cho_solve, LinAlgError

__all__ = [
    "QpStatus",
    "QuadraticProgram",
    "QpSolution",
    "solve_qp",
    "kkt_residual",
    "stacked_inequalities",
]

#: proactive diagonal regularization added to H before factorization
REG = 1e-9

#: fraction-to-boundary factor
STEP_SCALE = 0.995

#: slack-phase violation above this certifies primal infeasibility
INFEAS_TOL = 1e-6


class QpStatus(Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class QuadraticProgram:
    """Convex QP data. H must be symmetric PSD; infinities mark absent bounds."""

    H: NDArray[np.floating]
    g: NDArray[np.floating]
    A_in: NDArray[np.floating] | None = None
    l_in: NDArray[np.floating] | None = None
    u_in: NDArray[np.floating] | None = None
    lb: NDArray[np.floating] | None = None
    ub: NDArray[np.floating] | None = None

    def __post_init__(self) -> None:
        H = np.asarray(self.H, dtype=float)
        g = np.asarray(self.g, dtype=float)
        d = g.shape[0]
        if H.shape != (d, d):
            raise ValueError(f"H has shape {H.shape}, expected ({d}, {d})")
        h_scale = max(1.0, np.max(np.abs(H)))
        if np.max(np.abs(H - H.T)) > 1e-10 * h_scale:
            raise ValueError("H must be symmetric")
        try:
            np.linalg.cholesky(H + 1e-8 * h_scale * np.eye(d))
        except np.linalg.LinAlgError as exc:
            raise ValueError("H must be positive semidefinite") from exc
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "g", g)

        if self.A_in is not None:
            A = np.asarray(self.A_in, dtype=float)
            if A.ndim != 2 or A.shape[1] != d:
                raise ValueError(f"A_in has shape {A.shape}, expected (q, {d})")
            q = A.shape[0]
            if self.l_in is None or self.u_in is None:
                raise ValueError("A_in requires both l_in and u_in")
            l_in = np.asarray(self.l_in, dtype=float)
            u_in = np.asarray(self.u_in, dtype=float)
            if l_in.shape != (q,) or u_in.shape != (q,):
                raise ValueError("l_in/u_in must have one entry per A_in row")
            object.__setattr__(self, "A_in", A)
            object.__setattr__(self, "l_in", l_in)
            object.__setattr__(self, "u_in", u_in)
        elif self.l_in is not None or self.u_in is not None:
            raise ValueError("row bounds given without A_in")

        lb = np.full(d, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        ub = np.full(d, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if lb.shape != (d,) or ub.shape != (d,):
            raise ValueError("lb/ub must have one entry per variable")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def n_vars(self) -> int:
        return self.g.shape[0]

    def objective(self, x: NDArray[np.floating]) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass
class QpSolution:
    x_opt: NDArray[np.floating]
    objective: float
    status: QpStatus
    kkt_residual: float
    iterations: int
    solve_time: float
    duals: NDArray[np.floating]
    iterates: list[NDArray[np.floating]] | None = field(default=None, repr=False)


def stacked_inequalities(
    qp: QuadraticProgram,
) -> tuple[NDArray[np.floating], NDArray[np.floating]]:
    """One-sided form G x <= h.

    Row order: finite u_in rows of A_in, negated finite l_in rows, finite
    upper variable bounds, negated finite lower bounds.  Dual vectors
    returned by `solve_qp` follow this order.
    """
    d = qp.n_vars
    G_blocks: list[NDArray[np.floating]] = []
    h_blocks: list[NDArray[np.floating]] = []
    if qp.A_in is not None:
        up = np.isfinite(qp.u_in)
        lo = np.isfinite(qp.l_in)
        if np.any(up):
            G_blocks.append(qp.A_in[up])
            h_blocks.append(qp.u_in[up])
        if np.any(lo):
            G_blocks.append(-qp.A_in[lo])
            h_blocks.append(-qp.l_in[lo])
    eye = np.eye(d)
    up = np.isfinite(qp.ub)
    lo = np.isfinite(qp.lb)
    if np.any(up):
        G_blocks.append(eye[up])
        h_blocks.append(qp.ub[up])
    if np.any(lo):
        G_blocks.append(-eye[lo])
        h_blocks.append(-qp.lb[lo])
    if not G_blocks:
        return np.zeros((0, d)), np.zeros(0)
    return np.vstack(G_blocks), np.concatenate(h_blocks)


def kkt_residual(
    qp: QuadraticProgram,
    x: NDArray[np.floating],
    duals: NDArray[np.floating],
) -> float:
    """Max of stationarity, feasibility, and complementarity violations."""
    G, h = stacked_inequalities(qp)
    if G.shape[0] == 0:
        return float(np.max(np.abs(qp.H @ x + qp.g)))
    stationarity = float(np.max(np.abs(qp.H @ x + qp.g + G.T @ duals)))
    slack = h - G @ x
    feasibility = max(0.0, float(np.max(-slack)))
    complementarity = float(np.max(np.abs(duals * slack)))
    return max(stationarity, feasibility, complementarity)


def _max_step(v: NDArray[np.floating], dv: NDArray[np.floating]) -> float:
    """Largest alpha >= 0 keeping v + alpha * dv >= 0 (inf when unconstrained)."""
    neg = dv < 0.0
    if not np.any(neg):
        return float(np.inf)
    return float(np.min(-v[neg] / dv[neg]))


def _interior_point(
    H: NDArray[np.floating],
    g: NDArray[np.floating],
    G: NDArray[np.floating],
    h: NDArray[np.floating],
    x0: NDArray[np.floating] | None,
    lam0: NDArray[np.floating] | None,
    max_iter: int,
    tol: float,
    record: bool,
):
    """Core Mehrotra loop on min .5x'Hx+g'x s.t. Gx <= h. Returns iterate data."""
    d = g.shape[0]
    m = G.shape[0]
    H_reg = H + REG * np.eye(d)

    def factor(W: NDArray[np.floating]):
        M = H_reg + (G.T * W) @ G
        # The normal matrix picks up lam/s weights spanning ~12 orders of
        # magnitude near convergence, so the retry regularization must be
        # relative to its scale or it does nothing.
        scale = max(1.0, float(M.diagonal().max()))
        reg = REG * scale
        while True:
            try:
                return cho_factor(M, lower=True, check_finite=False)
            except (LinAlgError, np.linalg.LinAlgError):
                reg = reg * 100.0
                if reg > 1e-4 * scale:
                    raise
                M = M + reg * np.eye(d)

    if x0 is None:
        # Same guarded ladder as the in-loop factor: a soft-constrained
        # tracking program can carry a numerically semidefinite Hessian
        # whose fixed 1e-9 shift vanishes next to 1e4-scale entries.
        c = factor(np.zeros(m))
        x = cho_solve(c, -g, check_finite=False)
        s = np.maximum(h - G @ x, 1.0)
        lam = np.ones(m)
    else:
        x = np.asarray(x0, dtype=float).copy()
        raw = h - G @ x
        if lam0 is not None:
            # Floor the slacks at the worst violation of the warm point: an
            # exact re-solve keeps its (near-zero) slacks and passes the
            # convergence check untouched, while a shifted problem gets
            # sanely scaled slacks instead of 1e-12 ones whose lam/s weights
            # make the first Newton system unfactorable.
            viol = max(0.0, float(-raw.min())) if m else 0.0
            s = np.maximum(raw, max(1e-12, viol))
            lam = np.maximum(np.asarray(lam0, dtype=float), 1e-12)
        else:
            s = np.maximum(raw, 1e-4 * (1.0 + np.abs(h)))
            lam = 1e-2 / s

    iterates = [x.copy()] if record else None
    best = None
    best_key = None
    status = QpStatus.MAX_ITERATIONS
    it = 0
    for it in range(max_iter + 1):
        r_d = H @ x + g + G.T @ lam
        r_p = G @ x + s - h
        comp = s * lam
        kkt = max(np.max(np.abs(r_d)), np.max(np.abs(r_p)), np.max(comp))
        # Rank iterates by true constraint violation first, KKT error second,
        # so an early stall never hands back a point that breaks constraints
        # a later (or earlier) iterate satisfied.
        viol = max(0.0, float((r_p - s).max())) if m else 0.0
        key = (max(viol, 1e-9), kkt)
        if best_key is None or key < best_key:
            best = (kkt, x.copy(), lam.copy())
            best_key = key
        if kkt <= tol:
            status = QpStatus.OPTIMAL
            break
        if it == max_iter:
            break
        mu = comp.mean()

        w = lam / s
        try:
            chol = factor(w)
        except (LinAlgError, np.linalg.LinAlgError):
            break  # numerically indefinite (typically divergence on an
            # infeasible problem); fall back to the best iterate so far

        # predictor (affine scaling)
        rhs3 = -comp
        rhs_x = -r_d - G.T @ ((rhs3 + lam * r_p) / s)
        dx_aff = cho_solve(chol, rhs_x, check_finite=False)
        ds_aff = -r_p - G @ dx_aff
        dlam_aff = (rhs3 - lam * ds_aff) / s
        alpha_aff = min(1.0, _max_step(s, ds_aff), _max_step(lam, dlam_aff))
        mu_aff = np.dot(s + alpha_aff * ds_aff, lam + alpha_aff * dlam_aff) / m
        sigma = np.clip((mu_aff / mu) ** 3, 0.0, 1.0)

        # corrector
        rhs3 = -comp + sigma * mu - ds_aff * dlam_aff
        rhs_x = -r_d - G.T @ ((rhs3 + lam * r_p) / s)
        dx = cho_solve(chol, rhs_x, check_finite=False)
        ds = -r_p - G @ dx
        dlam = (rhs3 - lam * ds) / s

        # Scale only the blocking ratio: a full Newton step is taken whenever
        # the boundary is more than 1/STEP_SCALE away, which is what lets a
        # warm start on a slightly perturbed problem finish in one step.
        alpha = min(1.0, STEP_SCALE * min(_max_step(s, ds), _max_step(lam, dlam)))
        if alpha <= 1e-14:
            break  # stalled; let the caller decide what that means
        x = x + alpha * dx
        s = s + alpha * ds
        lam = lam + alpha * dlam
        if record:
            iterates.append(x.copy())

    kkt, x_best, lam_best = best
    return x_best, lam_best, kkt, it, status, iterates


def solve_qp(
    qp: QuadraticProgram,
    warm_start: NDArray[np.floating] | None = None,
    warm_duals: NDArray[np.floating] | None = None,
    *,
    max_iter: int = 50,
    tol: float = 1e-8,
    record_iterates: bool = False,
) -> QpSolution:
    """Solve the QP; optionally resume from a primal (and dual) warm start.

    The optimality test is relative to the gradient scale (with ``tol`` as
    the floor): condensed tracking programs carry gradients of 1e4 and
    more, and demanding an absolute 1e-8 on those burns the whole
    iteration budget polishing digits the control loop cannot use.
    """
    t0 = time.perf_counter()
    d = qp.n_vars
    tol = max(tol, 1e-9 * float(np.max(np.abs(qp.g), initial=1.0)))

    def finish(x, duals, status, iterations, iterates=None):
        return QpSolution(
            x_opt=x,
            objective=qp.objective(x),
            status=status,
            kkt_residual=kkt_residual(qp, x, duals),
            iterations=iterations,
            solve_time=time.perf_counter() - t0,
            duals=duals,
            iterates=iterates,
        )

    # contradictory bound data never reaches the iteration
    if np.any(qp.lb > qp.ub):
        x = np.zeros(d)
        return finish(x, np.zeros(stacked_inequalities(qp)[0].shape[0]),
                      QpStatus.INFEASIBLE, 0)
    if qp.A_in is not None and np.any(qp.l_in > qp.u_in):
        x = np.zeros(d)
        return finish(x, np.zeros(stacked_inequalities(qp)[0].shape[0]),
                      QpStatus.INFEASIBLE, 0)

    G, h = stacked_inequalities(qp)
    m = G.shape[0]
    if m == 0:
        c = cho_factor(qp.H + REG * np.eye(d), lower=True, check_finite=False)
        x = cho_solve(c, -qp.g, check_finite=False)
        return finish(x, np.zeros(0), QpStatus.OPTIMAL, 0,
                      [x.copy()] if record_iterates else None)

    if warm_duals is not None and warm_duals.shape[0] != m:
        warm_duals = None

    x, lam, kkt, iters, status, iterates = _interior_point(
        qp.H, qp.g, G, h, warm_start, warm_duals, max_iter, tol, record_iterates
    )

    if status is not QpStatus.OPTIMAL:
        # certify (or rule out) primal infeasibility with a slack-minimization
        # phase: min 1't (+ tiny strict convexity) s.t. Gx - t <= h, t >= 0
        rho = 1e-8
        H1 = rho * np.eye(d + m)
        g1 = np.concatenate([np.zeros(d), np.ones(m)])
        G1 = np.block([[G, -np.eye(m)], [np.zeros((m, d)), -np.eye(m)]])
        h1 = np.concatenate([h, np.zeros(m)])
        t_start = np.maximum(G @ x - h, 0.0) + 1.0
        z0 = np.concatenate([x, t_start])
        z, lam1, _, _, st1, _ = _interior_point(
            H1, g1, G1, h1, z0, None, max_iter, 1e-9 * max(1.0, np.max(np.abs(h))), False
        )
        if st1 is QpStatus.OPTIMAL and np.max(z[d:]) > INFEAS_TOL:
            status = QpStatus.INFEASIBLE
        else:
            # Even a stalled elastic solve can certify infeasibility: a
            # multiplier vector y >= 0 with G'y ~ 0 and h'y decisively
            # negative proves the rows inconsistent (Farkas). Require the
            # residual to sit six orders below the violation so feasible
            # programs with sloppy duals never trip this.
            y = lam1[:m]
            weight = np.abs(y).sum()
            if weight > 0.0:
                y = y / weight
                violation = float(h @ y)
                residual = float(np.abs(G.T @ y).max())
                if violation < -INFEAS_TOL and residual <= 1e-6 * (-violation):
                    status = QpStatus.INFEASIBLE

    return finish(x, lam, status, iters, iterates)
