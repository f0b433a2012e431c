"""Linear Gaussian state-space model, prediction, and two-point initialization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


@dataclass
class GaussianBelief:
    """State estimate: mean vector and positive-definite error covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def validate(self, rtol: float = 1e-10) -> None:
        scale = max(np.abs(self.cov).max(), 1e-300)
        if np.abs(self.cov - self.cov.T).max() > rtol * scale:
            raise ValueError("covariance is not symmetric")
        if np.linalg.eigvalsh(symmetrize(self.cov))[0] <= 0.0:
            raise ValueError("covariance is not positive definite")


@dataclass
class LinearModel:
    """Transition matrix F, process noise Q, measurement matrix H, and the
    measurement-noise shape matrix Rbar (normalized to unit determinant at
    construction, so a scalar variance factor carries all of the scale)."""

    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    Rbar: np.ndarray

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.H = np.asarray(self.H, dtype=float)
        self.Rbar = np.asarray(self.Rbar, dtype=float)
        if np.abs(self.Q - self.Q.T).max() > 1e-10 * max(np.abs(self.Q).max(), 1.0):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(symmetrize(self.Q))[0] < -1e-10:
            raise ValueError("Q must be positive semidefinite")
        w = np.linalg.eigvalsh(symmetrize(self.Rbar))
        if w[0] <= 0.0:
            raise ValueError("Rbar must be positive definite")
        m = self.Rbar.shape[0]
        det = np.linalg.det(self.Rbar)
        self.Rbar = self.Rbar / det ** (1.0 / m)

    @property
    def state_dim(self) -> int:
        return self.F.shape[0]

    @property
    def meas_dim(self) -> int:
        return self.H.shape[0]


def cv_transition(T: float) -> np.ndarray:
    """Constant-velocity transition matrix for state [x, y, xdot, ydot]."""
    return np.kron(np.array([[1.0, T], [0.0, 1.0]]), np.eye(2))


def cv_process_noise(T: float, q: float) -> np.ndarray:
    """White-acceleration process noise covariance for the same state order."""
    block = np.array([[T**3 / 3.0, T**2 / 2.0], [T**2 / 2.0, T]])
    return q * np.kron(block, np.eye(2))


def predict(belief: GaussianBelief, model: LinearModel) -> GaussianBelief:
    """One prediction step: mean F x, covariance F P F' + Q."""
    mean = model.F @ belief.mean
    cov = symmetrize(model.F @ belief.cov @ model.F.T + model.Q)
    return GaussianBelief(mean, cov)


def two_point_init(z0, z_minus1, T: float, R) -> GaussianBelief:
    """Initial state from two consecutive position measurements.

    Velocity is the finite difference (z0 - z_minus1) / T; with equal
    per-update measurement covariance R the initial covariance is the
    block matrix [[R, R/T], [R/T, 2R/T^2]], which makes the initial
    estimate consistent by construction.
    """
    if T <= 0.0:
        raise ValueError(f"two_point_init requires T > 0, got {T}")
    z0 = np.asarray(z0, dtype=float)
    z_minus1 = np.asarray(z_minus1, dtype=float)
    R = np.asarray(R, dtype=float)
    mean = np.concatenate([z0, (z0 - z_minus1) / T])
    blocks = np.array([[1.0, 1.0 / T], [1.0 / T, 2.0 / T**2]])
    cov = np.kron(blocks, R)
    return GaussianBelief(mean, symmetrize(cov))
