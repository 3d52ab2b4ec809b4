"""Disturbance observer: prediction-error inversion plus low-pass filtering.

Each control step the measured state is compared against a one-step
prediction of the *nominal* discrete model (no disturbance input).  The
error is mapped back through the discrete disturbance matrix by least
squares, which ignores the unactuated rows, and smoothed with the filter

    d_hat(k) = alpha * d_hat(k-1) + (1 - alpha) * d_meas(k).

The observer stays inactive on the first step, before any prediction
exists.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .sdc import SdcModel

__all__ = [
    "RankDeficientError",
    "predict_nominal",
    "infer_disturbance",
    "update_estimate",
    "DisturbanceObserver",
]


class RankDeficientError(ValueError):
    """The disturbance map cannot be inverted on its actuated rows."""


def predict_nominal(
    x_prev: NDArray[np.floating],
    u_prev: NDArray[np.floating],
    model_prev: SdcModel,
    ts: float,
) -> NDArray[np.floating]:
    """One Euler step of the nominal affine model, disturbance set to zero."""
    return x_prev + ts * (model_prev.A @ x_prev + model_prev.B @ u_prev + model_prev.C)


def infer_disturbance(
    error: NDArray[np.floating], E_dd: NDArray[np.floating]
) -> NDArray[np.floating]:
    """Least-squares disturbance explaining the prediction error."""
    svals = np.linalg.svd(E_dd, compute_uv=False)
    if svals[-1] < 1e-10:
        raise RankDeficientError(
            f"discrete disturbance map has smallest singular value {svals[-1]:.3e}"
        )
    d, *_ = np.linalg.lstsq(E_dd, error, rcond=None)
    return d


def update_estimate(
    d_hat_prev: NDArray[np.floating],
    d_meas: NDArray[np.floating],
    alpha: float = 0.9,
) -> NDArray[np.floating]:
    """First-order low-pass filter step on the raw estimate."""
    return alpha * d_hat_prev + (1.0 - alpha) * d_meas


class DisturbanceObserver:
    """Stateful wrapper tying prediction, inversion, and filtering together.

    Parameters
    ----------
    E_dd : discrete disturbance input matrix (T_s * E_d for Euler models).
    alpha : filter pole in [0, 1]; larger is smoother and slower.
    saturation : optional (force_max, torque_max) clamp on the estimate,
        applied to the first and last three entries respectively.
    """

    def __init__(
        self,
        E_dd: NDArray[np.floating],
        alpha: float = 0.9,
        saturation: tuple[float, float] | None = None,
    ) -> None:
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        self.E_dd = np.asarray(E_dd, dtype=float)
        self.alpha = alpha
        self.saturation = saturation
        self.d_hat = np.zeros(self.E_dd.shape[1])
        self._x_pred: NDArray[np.floating] | None = None

    def update(self, x_meas: NDArray[np.floating]) -> NDArray[np.floating]:
        """Fold the newest measurement into the estimate and return it."""
        if self._x_pred is not None:
            d_meas = infer_disturbance(x_meas - self._x_pred, self.E_dd)
            d_hat = update_estimate(self.d_hat, d_meas, self.alpha)
            if self.saturation is not None:
                f_max, t_max = self.saturation
                d_hat[:3] = np.clip(d_hat[:3], -f_max, f_max)
                d_hat[3:] = np.clip(d_hat[3:], -t_max, t_max)
            self.d_hat = d_hat
        return self.d_hat.copy()

    def store_prediction(
        self,
        x_meas: NDArray[np.floating],
        u_applied: NDArray[np.floating],
        model: SdcModel,
        ts: float,
    ) -> None:
        """Record the nominal one-step prediction for the next update."""
        self._x_pred = predict_nominal(x_meas, u_applied, model, ts)
