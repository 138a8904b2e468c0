"""Posterior summaries: prediction at new sites, ranks, metric weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import rankdata

from .model import ModelConfig, alpha_to_lambda
from .sampler import TraceStore, parameter_columns
from .stochastics import chol_factor, distance_matrix, exp_correlation

LEVEL = 0.95


def _interval(x, axis=0, level=LEVEL):
    q = np.quantile(x, [0.5, (1 - level) / 2, (1 + level) / 2], axis=axis)
    return q[0], q[1], q[2]


@dataclass
class Draws:
    """Posterior draws pooled over chains, one row per draw."""

    params: np.ndarray
    H: np.ndarray
    layout: dict
    n_alpha_sets: int
    chain: np.ndarray
    p: int

    @classmethod
    def from_traces(cls, traces: list[TraceStore], thin: int = 1) -> "Draws":
        if not traces:
            raise ValueError("no traces")
        params = np.concatenate([t.params[::thin] for t in traces])
        H = np.concatenate([t.H[::thin] for t in traces])
        chain = np.concatenate([np.full(len(t.params[::thin]), t.chain_id) for t in traces])
        t0 = traces[0]
        return cls(params, H, t0.layout, t0.n_alpha_sets, chain, t0.layout["beta"].stop)

    def __len__(self):
        return self.params.shape[0]

    def _block(self, name):
        return self.params[:, self.layout[name]]

    beta = property(lambda self: self._block("beta"))
    theta = property(lambda self: self._block("theta"))
    omega = property(lambda self: self._block("omega"))
    sigma2 = property(lambda self: self._block("sigma2"))
    phi1 = property(lambda self: self._block("phi1")[:, 0])
    phi2 = property(lambda self: self._block("phi2")[:, 0])

    @property
    def lam(self) -> np.ndarray:
        a = self._block("alpha").reshape(len(self), self.n_alpha_sets, -1)
        return alpha_to_lambda(a)

    def flat(self, config: ModelConfig) -> dict[str, np.ndarray]:
        return {name: self.params[:, col] for name, col in parameter_columns(config, self.p)}

    def subset(self, idx) -> "Draws":
        return Draws(self.params[idx], self.H[idx], self.layout, self.n_alpha_sets,
                     self.chain[idx], self.p)


def summarize_parameters(draws: Draws, config: ModelConfig) -> list[dict]:
    rows = []
    for name, x in draws.flat(config).items():
        med, lo, hi = _interval(x)
        rows.append(dict(parameter=name, mean=float(np.mean(x)), median=float(med),
                         lo=float(lo), hi=float(hi)))
    lam = draws.lam
    for s in range(lam.shape[1]):
        for k in range(2, lam.shape[2] - 1):
            med, lo, hi = _interval(lam[:, s, k])
            name = f"lambda_{k}" if lam.shape[1] == 1 else f"lambda_{s + 1}_{k}"
            rows.append(dict(parameter=name, mean=float(np.mean(lam[:, s, k])),
                             median=float(med), lo=float(lo), hi=float(hi)))
    return rows


# -- prediction -------------------------------------------------------------------------

@dataclass
class PredictionResult:
    H_tilde: np.ndarray  # T x m
    Y_tilde: np.ndarray  # T x m x J
    ordinal: np.ndarray  # boolean mask over metrics
    K: int

    def H_summary(self):
        return _interval(self.H_tilde)

    def category_probabilities(self) -> np.ndarray:
        """m x J x K predictive category frequencies (NaN for continuous metrics)."""
        T, m, J = self.Y_tilde.shape
        out = np.full((m, J, self.K), np.nan)
        for j in np.flatnonzero(self.ordinal):
            y = self.Y_tilde[:, :, j].astype(int)
            for k in range(1, self.K + 1):
                out[:, j, k - 1] = np.mean(y == k, axis=0)
        return out

    def point_prediction(self) -> np.ndarray:
        """Posterior mode for ordinal metrics, median for continuous ones."""
        m, J = self.Y_tilde.shape[1:]
        out = np.median(self.Y_tilde, axis=0)
        probs = self.category_probabilities()
        for j in np.flatnonzero(self.ordinal):
            out[:, j] = np.argmax(probs[:, j, :], axis=1) + 1
        return out

    def Y_interval(self):
        return _interval(self.Y_tilde)


def predict_H(draws: Draws, coords, X, new_coords, new_X, rng: np.random.Generator,
              coincident_tol: float = 1e-12) -> np.ndarray:
    """Kriging draws of H at new sites, one per posterior draw.

    ``coords``/``X`` describe the observed sites. ``new_X`` must already be
    standardized with the training statistics.
    New sites coinciding with an observed site return that site's H draw.
    """
    new_coords = np.atleast_2d(np.asarray(new_coords, dtype=float))
    new_X = np.asarray(new_X, dtype=float).reshape(len(new_coords), -1)
    X = np.asarray(X, dtype=float)
    D_oo = distance_matrix(coords)
    D_no = distance_matrix(new_coords, coords)
    D_nn = distance_matrix(new_coords)
    nearest = D_no.argmin(axis=1)
    same = D_no[np.arange(len(new_coords)), nearest] <= coincident_tol
    free = ~same
    D_no_f, D_nn_f = D_no[free], D_nn[np.ix_(free, free)]

    T, m = len(draws), len(new_coords)
    out = np.empty((T, m))
    beta, phi1, phi2, H = draws.beta, draws.phi1, draws.phi2, draws.H
    # consecutive draws often share phi2 (rejected proposals), reuse the factorisation
    cache_key, W, Lc = None, None, None
    for t in range(T):
        if phi2[t] != cache_key:
            L = chol_factor(exp_correlation(D_oo, phi2[t]))
            C = exp_correlation(D_no_f, phi2[t])
            V = solve_triangular(L, C.T, lower=True, check_finite=False)
            W = solve_triangular(L.T, V, lower=False, check_finite=False).T
            cond = exp_correlation(D_nn_f, phi2[t]) - V.T @ V
            Lc = chol_factor(0.5 * (cond + cond.T)) if free.any() else np.zeros((0, 0))
            cache_key = phi2[t]
        resid = H[t] - X @ beta[t]
        mean = new_X[free] @ beta[t] + W @ resid
        out[t, free] = mean + np.sqrt(phi1[t]) * (Lc @ rng.standard_normal(Lc.shape[0]))
        out[t, same] = H[t, nearest[same]]
    return out


def predict_Y(H_tilde: np.ndarray, draws: Draws, config: ModelConfig,
              rng: np.random.Generator) -> PredictionResult:
    """Predictive responses at new sites given kriged H draws (aligned with ``draws``)."""
    theta, omega, sigma2, lam = draws.theta, draws.omega, draws.sigma2, draws.lam
    T, m = H_tilde.shape
    J = config.J
    Z = (theta[:, None, :] + H_tilde[:, :, None] * omega[:, None, :]
         + np.sqrt(sigma2)[:, None, :] * rng.standard_normal((T, m, J)))
    Y = Z.copy()
    ordinal = np.zeros(J, dtype=bool)
    ordinal[config.ordinal_idx] = True
    for j in config.ordinal_idx:
        cuts = lam[:, config.threshold_set(j), 1:-1]  # T x (K-1)
        # category k satisfies cut_{k-1} < z <= cut_k
        Y[:, :, j] = 1 + np.sum(Z[:, :, j, None] > cuts[:, None, :], axis=-1)
    return PredictionResult(H_tilde, Y, ordinal, config.K)


# -- ranks --------------------------------------------------------------------------

@dataclass
class RankSummary:
    median_rank: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    percentile: np.ndarray
    ranks: np.ndarray


def posterior_ranks(H: np.ndarray) -> RankSummary:
    """Per-draw ranks of locations by H (1 = smallest, ties averaged)."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[0] < 1:
        raise ValueError("need at least one draw")
    ranks = rankdata(H, axis=1, method="average")
    med, lo, hi = _interval(ranks)
    return RankSummary(med, lo, hi, med / (H.shape[1] + 1), ranks)


# -- multiple correlation -----------------------------------------------------------------

@dataclass
class CorrelationSummary:
    R: np.ndarray  # T x J
    R2_M: np.ndarray  # T
    contribution: np.ndarray  # T x J

    def table(self) -> list[dict]:
        rows = []
        Rm, Rl, Rh = _interval(self.R)
        Cm, Cl, Ch = _interval(self.contribution)
        order = np.argsort(-Rm)
        rank = np.empty(len(Rm), dtype=int)
        rank[order] = np.arange(1, len(Rm) + 1)
        for j in range(self.R.shape[1]):
            rows.append(dict(R_median=Rm[j], R_lo=Rl[j], R_hi=Rh[j], contribution_median=Cm[j],
                             contribution_lo=Cl[j], contribution_hi=Ch[j], rank=int(rank[j])))
        return rows


def multiple_correlation(Z: np.ndarray, H: np.ndarray) -> CorrelationSummary:
    """Correlation of each latent response with H, per draw.

    ``Z`` is T x n x J and ``H`` is T x n. Each draw's sample covariance of
    the J + 1 columns gives ``R_j = sqrt(cov(Z_j, H)^2 / (var Z_j var H))``
    and the overall ``R2_M = S_HZ S_ZZ^{-1} S_ZH / s_HH``. Columns with zero
    variance yield NaN.
    """
    Z = np.asarray(Z, dtype=float)
    H = np.asarray(H, dtype=float)
    if Z.ndim == 2:
        Z, H = Z[None], H[None]
    T, n, J = Z.shape
    Zc = Z - Z.mean(axis=1, keepdims=True)
    Hc = H - H.mean(axis=1, keepdims=True)
    S_zz = np.einsum("tij,tik->tjk", Zc, Zc) / (n - 1)
    S_zh = np.einsum("tij,ti->tj", Zc, Hc) / (n - 1)
    s_hh = np.einsum("ti,ti->t", Hc, Hc) / (n - 1)
    var_z = np.diagonal(S_zz, axis1=1, axis2=2)
    # variances at rounding level (constant columns after centering) count as zero
    eps = 64 * np.finfo(float).eps
    flat_z = var_z <= (eps * np.abs(Z).max(axis=1)) ** 2
    flat_h = s_hh <= (eps * np.abs(H).max(axis=1)) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        R2 = S_zh ** 2 / (var_z * s_hh[:, None])
        R = np.sqrt(np.clip(R2, 0.0, 1.0))
        R[~np.isfinite(R2) | flat_z | flat_h[:, None]] = np.nan
        R2_M = np.full(T, np.nan)
        for t in range(T):
            if flat_h[t] or flat_z[t].any():
                continue
            try:
                R2_M[t] = S_zh[t] @ np.linalg.solve(S_zz[t], S_zh[t]) / s_hh[t]
            except np.linalg.LinAlgError:
                pass
    return CorrelationSummary(R, R2_M, percent_contribution(R))


def percent_contribution(R: np.ndarray) -> np.ndarray:
    """Normalise correlations to weights summing to one per draw."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    total = R.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = R / total
    w[~(total[:, 0] > 0)] = np.nan
    return w


def correlation_from_traces(traces: list[TraceStore]) -> CorrelationSummary:
    Z = np.concatenate([t.Z for t in traces])
    H = np.concatenate([t.H_at_z() for t in traces])
    if len(Z) == 0:
        raise ValueError("no stored latent-response draws (thin_z = 0?)")
    return multiple_correlation(Z, H)


def effective_range(phi2) -> dict:
    """Distance 3/phi2 where exponential correlation falls to about 0.05."""
    r = 3.0 / np.asarray(phi2, dtype=float)
    med, lo, hi = _interval(np.atleast_1d(r))
    return dict(draws=r, median=float(med), lo=float(lo), hi=float(hi))
