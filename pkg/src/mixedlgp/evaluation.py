"""Model comparison by standardized squared-error loss, and convergence checks."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, ObservationSet
from .sampler import parameter_columns
from .stochastics import log_interval_prob, truncated_normal_median

PSRF_WARN = 1.2
_TINY_LOG_MASS = np.log(1e-300)


def fitted_z_hat(mu_z, sigma2_z, lo, hi) -> float:
    """Median of N(mu_z, sigma2_z) restricted to (lo, hi].

    Falls back to the interval midpoint, with a warning, when the interval
    is finite but carries less than 1e-300 of probability.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    sd = np.sqrt(sigma2_z)
    logmass = float(log_interval_prob((lo - mu_z) / sd, (hi - mu_z) / sd))
    if logmass < _TINY_LOG_MASS and np.isfinite(lo) and np.isfinite(hi):
        warnings.warn("interval mass below 1e-300, using midpoint", stacklevel=2)
        return 0.5 * (lo + hi)
    z = truncated_normal_median(mu_z, sigma2_z, lo, hi)
    # keep strictly inside the open interval
    return float(np.clip(z, np.nextafter(lo, np.inf), np.nextafter(hi, -np.inf)))


def z_hat_matrix(draws, data: ObservationSet, config: ModelConfig) -> np.ndarray:
    """Plug-in "true" latent values for every cell, n x J.

    Ordinal cells use posterior means of theta_j + omega_j H_i, sigma2_j and
    the cutpoints; continuous cells are the observations.
    """
    mu = (draws.theta[:, None, :] + draws.H[:, :, None] * draws.omega[:, None, :]).mean(axis=0)
    s2 = draws.sigma2.mean(axis=0)
    lam = draws.lam.mean(axis=0)  # sets x (K+1), infinities preserved
    out = data.Y.astype(float).copy()
    for j in config.ordinal_idx:
        cuts = lam[config.threshold_set(j)]
        y = data.Y[:, j].astype(int)
        out[:, j] = [fitted_z_hat(mu[i, j], s2[j], cuts[y[i] - 1], cuts[y[i]])
                     for i in range(data.n)]
    return out


def replicate_z(draws, rng: np.random.Generator) -> np.ndarray:
    """Posterior predictive latent responses, T x n x J."""
    T, n = draws.H.shape
    J = draws.theta.shape[1]
    return (draws.theta[:, None, :] + draws.H[:, :, None] * draws.omega[:, None, :]
            + np.sqrt(draws.sigma2)[:, None, :] * rng.standard_normal((T, n, J)))


def standardized_loss(Z_draws, Z_hat, scale=None) -> np.ndarray:
    """Median over draws and sites of (Z - Z_hat)^2 / var(Z_hat_j), per metric.

    ``scale`` overrides the per-metric variance; a zero variance yields NaN.
    """
    Z_draws = np.asarray(Z_draws, dtype=float)
    Z_hat = np.asarray(Z_hat, dtype=float)
    if scale is None:
        scale = Z_hat.var(axis=0, ddof=1)
    scale = np.asarray(scale, dtype=float)
    sq = (Z_draws - Z_hat[None]) ** 2
    J = Z_hat.shape[1]
    out = np.full(J, np.nan)
    for j in range(J):
        if scale[j] > 0:
            out[j] = np.median(sq[:, :, j]) / scale[j]
    return out


def loss_table(draws, data: ObservationSet, config: ModelConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(loss per metric, Z_hat)`` using posterior predictive latent draws."""
    Z_hat = z_hat_matrix(draws, data, config)
    return standardized_loss(replicate_z(draws, rng), Z_hat), Z_hat


def psrf(chains) -> float:
    """Gelman-Rubin potential scale reduction factor.

    ``chains`` is an (m, n) array of m equal-length chains. Uses
    sqrt(((n - 1)/n W + B/n) / W) without rank normalisation.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need >= 2 chains")
    m, n = x.shape
    if n < 2:
        raise ValueError("chains need at least 2 draws")
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


@dataclass
class Diagnostics:
    rows: list[tuple[str, float]]

    @property
    def flagged(self) -> list[str]:
        return [name for name, r in self.rows if not r < PSRF_WARN]

    @property
    def max(self) -> float:
        return max(r for _, r in self.rows)


def psrf_table(traces, config: ModelConfig) -> Diagnostics:
    """PSRF of every free parameter across chains (truncated to the shortest)."""
    if len(traces) < 2:
        raise ValueError("need >= 2 chains")
    T = min(len(t) for t in traces)
    if T < 2:
        raise ValueError("chains need at least 2 draws")
    p = traces[0].layout["beta"].stop
    rows = []
    for name, col in parameter_columns(config, p):
        rows.append((name, psrf(np.stack([t.params[:T, col] for t in traces]))))
    diag = Diagnostics(rows)
    if diag.flagged:
        warnings.warn(f"PSRF >= {PSRF_WARN} for {diag.flagged}", stacklevel=2)
    return diag
