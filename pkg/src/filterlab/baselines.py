"""Robust baseline updates: per-component outlier rejection with noise
inflation, and a single-target probabilistic data association update."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .kalman import kf_update
from .specfun import reg_lower_inc_gamma
from .statespace import GaussianBelief, symmetrize


@dataclass
class KforConfig:
    """Residual threshold tau and assumed uniform-outlier half width w."""

    tau: float
    w: float

    def __post_init__(self):
        if self.tau <= 0.0 or self.w <= 0.0:
            raise ValueError("tau and w must be positive")


@dataclass
class PdafConfig:
    """Detection probability, gating threshold g, clutter density per unit
    measurement volume, and the in-gate probability (derived from g and the
    measurement dimension when not given explicitly)."""

    p_detect: float
    gate: float
    clutter_density: float
    p_gate: float | None = None

    def __post_init__(self):
        if not 0.0 < self.p_detect <= 1.0:
            raise ValueError("p_detect must lie in (0, 1]")
        if self.gate <= 0.0:
            raise ValueError("gate must be positive")
        if self.clutter_density < 0.0:
            raise ValueError("clutter_density must be nonnegative")
        if self.p_gate is not None and not 0.0 < self.p_gate <= 1.0:
            raise ValueError("p_gate must lie in (0, 1]")

    def gate_probability(self, meas_dim: int) -> float:
        if self.p_gate is not None:
            return self.p_gate
        # Chi-square CDF of the squared gate with meas_dim degrees of freedom.
        return reg_lower_inc_gamma(meas_dim / 2.0, self.gate**2 / 2.0)


def kfor_update(prior: GaussianBelief, z, H, R, config: KforConfig):
    """Kalman update with per-component outlier detection.

    A component whose normalized residual exceeds tau gets its measurement
    noise inflated by the variance of a zero-mean uniform outlier of half
    width w (w^2 / 3); unflagged updates are plain Kalman updates.
    """
    z = np.asarray(z, dtype=float)
    H = np.asarray(H, dtype=float)
    R = np.asarray(R, dtype=float)
    residual = z - H @ prior.mean
    S = symmetrize(H @ prior.cov @ H.T + R)
    flags = np.abs(residual) / np.sqrt(np.diag(S)) > config.tau
    R_used = R + (config.w**2 / 3.0) * np.diag(flags.astype(float))
    posterior, _ = kf_update(prior, z, H, R_used)
    return posterior, flags


def pdaf_update(prior: GaussianBelief, z, H, R, config: PdafConfig) -> GaussianBelief:
    """Probabilistic data association update with one candidate measurement.

    The measurement is validated when its squared Mahalanobis innovation is
    within the squared gate; otherwise the prior is returned unchanged. For
    a validated measurement the association weights follow the parametric
    clutter model with density lambda_c:

        beta_1 = P_D * L / (lambda_c * (1 - P_D * P_G) + P_D * L)
        beta_0 = 1 - beta_1

    where L is the Gaussian likelihood of the innovation. The combined
    posterior covariance is beta_0 * P_prior + beta_1 * P_kalman plus the
    spread-of-means term beta_1 * (1 - beta_1) * G v v' G'.
    """
    z = np.asarray(z, dtype=float)
    H = np.asarray(H, dtype=float)
    R = np.asarray(R, dtype=float)
    m = z.shape[0]
    P = prior.cov
    S = symmetrize(H @ P @ H.T + R)
    innovation = z - H @ prior.mean
    s_inv_innovation = scipy.linalg.solve(S, innovation, assume_a="pos")
    d2 = float(innovation @ s_inv_innovation)
    if d2 > config.gate**2:
        return GaussianBelief(prior.mean, prior.cov)

    sign, logdet = np.linalg.slogdet(S)
    likelihood = math.exp(-0.5 * d2 - 0.5 * (m * math.log(2.0 * math.pi) + logdet))
    p_gate = config.gate_probability(m)
    weight_miss = config.clutter_density * (1.0 - config.p_detect * p_gate)
    weight_hit = config.p_detect * likelihood
    if weight_hit == 0.0 and weight_miss == 0.0:
        beta_1 = 1.0
    else:
        beta_1 = weight_hit / (weight_hit + weight_miss)
    beta_0 = 1.0 - beta_1

    gain = scipy.linalg.solve(S, H @ P, assume_a="pos").T
    gv = gain @ innovation
    mean = prior.mean + beta_1 * gv
    p_update = (np.eye(P.shape[0]) - gain @ H) @ P
    spread = beta_1 * (1.0 - beta_1) * np.outer(gv, gv)
    cov = symmetrize(beta_0 * P + beta_1 * p_update + spread)
    return GaussianBelief(mean, cov)
