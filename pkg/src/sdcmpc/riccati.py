"""Continuous-time Riccati and Lyapunov solvers plus terminal-set sizing.

The Riccati solver takes the ordered real Schur decomposition of the
Hamiltonian and polishes the stable-subspace solution with one
Kleinman-Newton step; the Lyapunov solver vectorizes via the Kronecker
identity, which at the 12-state quadrotor size (a 144 x 144 dense solve)
is both simple and fast enough for per-step use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import schur

__all__ = [
    "NotStabilizableError",
    "NotHurwitzError",
    "IllConditionedError",
    "DegenerateBoundsError",
    "solve_care",
    "solve_lyapunov",
    "feedback_gain",
    "terminal_alpha",
    "TerminalIngredients",
    "terminal_ingredients",
]

#: eigenvalues closer to the imaginary axis than this are treated as on it
AXIS_TOL = 1e-9

#: condition-number ceiling for the stable-subspace basis
COND_LIMIT = 1e12


class NotStabilizableError(ValueError):
    """No stabilizing Riccati solution exists for the given (A, B, Q, R)."""


class NotHurwitzError(ValueError):
    """The Lyapunov equation was posed with a matrix that is not Hurwitz."""


class IllConditionedError(ValueError):
    """The computation lost too much accuracy to certify the result."""


class DegenerateBoundsError(ValueError):
    """Input box collapses at the operating point; no terminal level exists."""


def _symmetrize(M: NDArray[np.floating]) -> NDArray[np.floating]:
    return 0.5 * (M + M.T)


def solve_lyapunov(
    A_cl: NDArray[np.floating], Qbar: NDArray[np.floating]
) -> NDArray[np.floating]:
    """Solve A_cl' P + P A_cl + Qbar = 0 for a Hurwitz A_cl.

    Uses the Kronecker vectorization (I (x) A' + A' (x) I) vec(P) = -vec(Qbar).
    """
    A_cl = np.asarray(A_cl, dtype=float)
    Qbar = np.asarray(Qbar, dtype=float)
    n = A_cl.shape[0]
    spectral_abscissa = np.max(np.linalg.eigvals(A_cl).real)
    if spectral_abscissa >= -AXIS_TOL:
        raise NotHurwitzError(
            f"matrix has spectral abscissa {spectral_abscissa:.3e}; "
            "the Lyapunov equation needs a strictly stable matrix"
        )
    eye = np.eye(n)
    lhs = np.kron(eye, A_cl.T) + np.kron(A_cl.T, eye)
    p = np.linalg.solve(lhs, -Qbar.flatten(order="F"))
    P = _symmetrize(p.reshape((n, n), order="F"))
    resid = np.max(np.abs(A_cl.T @ P + P @ A_cl + Qbar))
    if resid > 1e-8 * (1.0 + np.max(np.abs(P))):
        raise IllConditionedError(f"Lyapunov residual {resid:.3e} too large")
    return P


def feedback_gain(
    S: NDArray[np.floating], B: NDArray[np.floating], R: NDArray[np.floating]
) -> NDArray[np.floating]:
    """LQR gain K = R^-1 B' S for the convention u = -K x."""
    return np.linalg.solve(R, B.T @ S)


def solve_care(
    A: NDArray[np.floating],
    B: NDArray[np.floating],
    Q: NDArray[np.floating],
    R: NDArray[np.floating],
) -> NDArray[np.floating]:
    """Stabilizing solution of A'S + SA - S B R^-1 B' S + Q = 0."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    n = A.shape[0]

    G = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -G], [-Q, -A.T]])

    ham_eigs = np.linalg.eigvals(H)
    axis_tol = AXIS_TOL * max(1.0, np.linalg.norm(H, np.inf))
    if np.min(np.abs(ham_eigs.real)) < axis_tol:
        raise NotStabilizableError(
            "Hamiltonian eigenvalues on the imaginary axis; "
            "(A, B) is not stabilizable or (A, Q) not detectable"
        )

    T, Z, sdim = schur(H, output="real", sort="lhp")
    if sdim != n:
        raise NotStabilizableError(
            f"stable invariant subspace has dimension {sdim}, expected {n}"
        )
    U1 = Z[:n, :n]
    U2 = Z[n:, :n]
    svals = np.linalg.svd(U1, compute_uv=False)
    if svals[-1] <= 1e-15 * max(1.0, svals[0]):
        raise NotStabilizableError("stable subspace is vertical; no stabilizing solution")
    if svals[0] / svals[-1] > COND_LIMIT:
        raise IllConditionedError(
            f"stable-subspace basis condition number {svals[0] / svals[-1]:.3e}"
        )
    S = _symmetrize(np.linalg.solve(U1.T, U2.T).T)

    # one Kleinman-Newton step wipes out most of the Schur roundoff
    K = feedback_gain(S, B, R)
    try:
        S = solve_lyapunov(A - B @ K, Q + K.T @ R @ K)
    except NotHurwitzError as exc:
        raise NotStabilizableError(
            "Schur solution failed to stabilize the closed loop"
        ) from exc

    resid = np.max(np.abs(A.T @ S + S @ A - S @ G @ S + Q))
    if resid > 1e-8 * (1.0 + np.max(np.abs(S))):
        raise IllConditionedError(f"Riccati residual {resid:.3e} too large")
    if np.min(np.linalg.eigvalsh(S)) < -1e-10 * (1.0 + np.max(np.abs(S))):
        raise IllConditionedError("Riccati solution lost positive semidefiniteness")
    return S


def terminal_alpha(
    S: NDArray[np.floating],
    K: NDArray[np.floating],
    u_bar: NDArray[np.floating],
) -> float:
    """Largest level alpha of {x : x'Sx <= alpha} kept feasible by u = -Kx.

    u_bar holds the per-input distance from the operating point to the
    nearest bound; the support function of the ellipsoid along row K_i is
    sqrt(alpha K_i S^-1 K_i'), so alpha_i = u_bar_i^2 / (K_i S^-1 K_i').
    """
    u_bar = np.asarray(u_bar, dtype=float)
    if np.any(u_bar <= 0.0):
        raise DegenerateBoundsError(
            f"operating point sits on or outside the input box: u_bar = {u_bar}"
        )
    if not np.any(K):
        return float(np.inf)
    denom = np.einsum("ij,ij->i", K, np.linalg.solve(S, K.T).T)
    alpha = np.inf
    for di, ui in zip(denom, u_bar):
        if di > 0.0:
            alpha = min(alpha, ui**2 / di)
    return float(alpha)


@dataclass(frozen=True)
class TerminalIngredients:
    """Riccati solution, gain, terminal weight and terminal level."""

    S: NDArray[np.floating]
    K: NDArray[np.floating]
    P: NDArray[np.floating]
    alpha: float


def terminal_ingredients(
    A: NDArray[np.floating],
    B: NDArray[np.floating],
    Q: NDArray[np.floating],
    R: NDArray[np.floating],
    u_bar: NDArray[np.floating],
    kappa: float = 0.0,
) -> TerminalIngredients:
    """Terminal cost P, gain K and level alpha for the closed loop at (A, B).

    With kappa = 0 the Lyapunov weight P coincides with the Riccati solution;
    kappa > 0 asks for an extra exponential decay margin, which makes the
    terminal cost strictly larger.
    """
    S = solve_care(A, B, Q, R)
    K = feedback_gain(S, B, R)
    A_shift = A - B @ K + kappa * np.eye(A.shape[0])
    P = solve_lyapunov(A_shift, Q + K.T @ R @ K)
    alpha = terminal_alpha(P, K, u_bar)
    return TerminalIngredients(S=S, K=K, P=P, alpha=alpha)
