"""Independent reference implementations used only by the test suite.

These deliberately take different algorithmic routes than the library:
the Riccati cross-check iterates Kleinman-Newton from a pole-placement
seed with scipy's Bartels-Stewart Lyapunov solver, and the QP oracle
enumerates active sets exhaustively.
"""
from itertools import combinations

import numpy as np
from scipy.linalg import solve_continuous_lyapunov
from scipy.signal import place_poles


def kleinman_newton_care(A, B, Q, R, tol=1e-12, max_iter=100):
    """Riccati solution via Newton iteration seeded from pole placement."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    poles = -np.linspace(1.0, 2.0, n)
    K = place_poles(A, B, poles).gain_matrix
    S_prev = None
    for _ in range(max_iter):
        A_cl = A - B @ K
        Qbar = Q + K.T @ R @ K
        S = solve_continuous_lyapunov(A_cl.T, -Qbar)
        S = 0.5 * (S + S.T)
        K = np.linalg.solve(R, B.T @ S)
        if S_prev is not None and np.max(np.abs(S - S_prev)) <= tol * (1.0 + np.max(np.abs(S))):
            return S
        S_prev = S
    raise RuntimeError("Kleinman-Newton iteration did not converge")


def random_stabilizable_triple(rng, n_max=6):
    """Random (A, B, Q, R) with controllable (A, B) and positive definite Q, R."""
    while True:
        n = int(rng.integers(2, n_max + 1))
        m = int(rng.integers(1, 3))
        A = rng.normal(size=(n, n))
        B = rng.normal(size=(n, m))
        blocks = [B]
        for _ in range(n - 1):
            blocks.append(A @ blocks[-1])
        if np.linalg.matrix_rank(np.hstack(blocks)) < n:
            continue
        if np.linalg.matrix_rank(B) < min(n, m):
            continue
        M = rng.normal(size=(n, n))
        Q = M.T @ M + 0.1 * np.eye(n)
        R = np.diag(rng.uniform(0.5, 2.0, size=m))
        return A, B, Q, R


def brute_force_qp(H, g, G, h, tol=1e-7):
    """Globally solve min .5 x'Hx + g'x  s.t. Gx <= h by active-set enumeration.

    Requires H positive definite.  Returns the optimal x or None when no
    KKT-consistent point exists (infeasible problem).
    """
    d = H.shape[0]
    m = G.shape[0]
    scale = max(1.0, np.max(np.abs(g)), np.max(np.abs(h)) if m else 1.0)
    best_x, best_obj = None, np.inf
    for k in range(0, d + 1):
        for rows in combinations(range(m), k):
            idx = list(rows)
            A_act = G[idx]
            kkt = np.block([
                [H, A_act.T],
                [A_act, np.zeros((k, k))],
            ])
            rhs = np.concatenate([-g, h[idx]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            if np.max(np.abs(kkt @ sol - rhs)) > 1e-8 * scale:
                continue  # nearly singular working set
            x, lam = sol[:d], sol[d:]
            if k and np.min(lam) < -tol:
                continue
            if m and np.max(G @ x - h) > tol * scale:
                continue
            obj = 0.5 * x @ H @ x + g @ x
            if obj < best_obj:
                best_x, best_obj = x, obj
    return best_x
