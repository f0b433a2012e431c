"""Standard Kalman measurement update, in covariance and information forms,
plus the posterior-information recursion used to normalize benchmark errors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError
from .statespace import GaussianBelief, LinearModel, symmetrize

# Innovation covariances worse conditioned than this are treated as singular
# rather than silently inverted.
COND_LIMIT = 1e12


@dataclass
class UpdateDiagnostics:
    innovation: np.ndarray
    innovation_cov: np.ndarray
    gain: np.ndarray


def _innovation_cov(P: np.ndarray, H: np.ndarray, R: np.ndarray) -> np.ndarray:
    S = symmetrize(H @ P @ H.T + R)
    w = np.linalg.eigvalsh(S)
    if w[0] <= 0.0 or w[-1] > COND_LIMIT * w[0]:
        raise NumericalError(
            f"innovation covariance is singular or ill conditioned "
            f"(eigenvalue range [{w[0]:.3e}, {w[-1]:.3e}])"
        )
    return S


def kf_update(prior: GaussianBelief, z, H, R):
    """Measurement update in covariance form.

    Returns the posterior belief and the innovation/gain diagnostics. The
    gain solve goes through a Cholesky factorization of the innovation
    covariance; the posterior covariance is re-symmetrized.
    """
    z = np.asarray(z, dtype=float)
    H = np.asarray(H, dtype=float)
    R = np.asarray(R, dtype=float)
    P = prior.cov
    S = _innovation_cov(P, H, R)
    gain = scipy.linalg.solve(S, H @ P, assume_a="pos").T
    innovation = z - H @ prior.mean
    mean = prior.mean + gain @ innovation
    cov = symmetrize((np.eye(P.shape[0]) - gain @ H) @ P)
    return GaussianBelief(mean, cov), UpdateDiagnostics(innovation, S, gain)


def kf_information_update(prior: GaussianBelief, z, H, R):
    """Measurement update through the information matrix.

    Posterior information is P^-1 + H' R^-1 H; the gain and mean are solved
    through that matrix instead of the innovation covariance. Agrees with
    kf_update on well-conditioned inputs.
    """
    z = np.asarray(z, dtype=float)
    H = np.asarray(H, dtype=float)
    R = np.asarray(R, dtype=float)
    P = prior.cov
    S = _innovation_cov(P, H, R)
    n = P.shape[0]
    prior_info = scipy.linalg.solve(P, np.eye(n), assume_a="pos")
    rinv_h = scipy.linalg.solve(R, H, assume_a="pos")
    info = symmetrize(prior_info + H.T @ rinv_h)
    gain = scipy.linalg.solve(info, rinv_h.T, assume_a="pos")
    innovation = z - H @ prior.mean
    mean = prior.mean + gain @ innovation
    cov = symmetrize(scipy.linalg.solve(info, np.eye(n), assume_a="pos"))
    return GaussianBelief(mean, cov), UpdateDiagnostics(innovation, S, gain)


def pcrlb_recursion(prior_info: np.ndarray, model: LinearModel, r: float) -> np.ndarray:
    """One predict-update step of the posterior Fisher information.

    The prediction propagates through the covariance domain,
    J -> (F J^-1 F' + Q)^-1, and the update adds (1/r) H' Rbar^-1 H. The
    inverse of the result is the matched Kalman filter's error covariance
    and the lower bound used as the error normalizer.
    """
    if r <= 0.0:
        raise ValueError(f"pcrlb_recursion requires r > 0, got {r}")
    n = prior_info.shape[0]
    cov = scipy.linalg.solve(prior_info, np.eye(n), assume_a="pos")
    pred_cov = symmetrize(model.F @ cov @ model.F.T + model.Q)
    pred_info = scipy.linalg.solve(pred_cov, np.eye(n), assume_a="pos")
    rbinv_h = scipy.linalg.solve(model.Rbar, model.H, assume_a="pos")
    return symmetrize(pred_info + (model.H.T @ rbinv_h) / r)
