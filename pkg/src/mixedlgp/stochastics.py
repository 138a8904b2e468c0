"""Linear algebra and seeded sampling kernels.

All samplers take an explicit :class:`numpy.random.Generator`; none touch
global state, so two chains with their own generators never interact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist
from scipy.special import log_ndtr, ndtr, ndtri, ndtri_exp

RIDGE = 1e-10
MAX_JITTER = 1e-6
# standardized lower bound beyond which inverse-CDF sampling loses precision
TAIL_SWITCH = 5.0


class CovarianceError(np.linalg.LinAlgError):
    pass


@dataclass
class SpatialCov:
    phi1: float
    phi2: float
    D: np.ndarray
    Sigma: np.ndarray


def distance_matrix(coords, other=None) -> np.ndarray:
    """Euclidean distances between rows of ``coords`` (and ``other`` if given)."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    if other is None:
        D = cdist(coords, coords)
        np.fill_diagonal(D, 0.0)
        return D
    return cdist(coords, np.atleast_2d(np.asarray(other, dtype=float)))


def exp_correlation(D, phi2) -> np.ndarray:
    return np.exp(-np.asarray(D) * phi2)


def exp_covariance(D, phi1, phi2) -> SpatialCov:
    if phi1 <= 0 or phi2 <= 0:
        raise ValueError("phi1 and phi2 must be positive")
    return SpatialCov(phi1, phi2, D, phi1 * exp_correlation(D, phi2))


def chol_factor(S) -> np.ndarray:
    """Lower Cholesky factor with escalating diagonal jitter.

    A ridge of 1e-10 times the mean diagonal is always added (covariances
    built from nearly coincident sites are otherwise numerically singular).
    The ridge grows by factors of 10 up to 1e-6 before giving up.
    """
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return S.copy()
    scale = float(np.mean(np.diag(S)))
    if not np.isfinite(scale) or scale <= 0:
        raise CovarianceError("covariance not PD")
    jitter = RIDGE
    idx = np.diag_indices_from(S)
    while jitter <= MAX_JITTER * (1 + 1e-9):
        A = S.copy()
        A[idx] += jitter * scale
        try:
            return np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise CovarianceError("covariance not PD")


def chol_logdet(L) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def chol_solve(L, b) -> np.ndarray:
    """Solve ``(L L^T) x = b``."""
    y = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L.T, y, lower=False, check_finite=False)


def mvn_sample(mean, chol, rng: np.random.Generator) -> np.ndarray:
    """One draw ``mean + L @ eta`` with ``eta`` standard normal."""
    mean = np.asarray(mean, dtype=float)
    eta = rng.standard_normal(mean.shape[0])
    return mean + np.asarray(chol) @ eta


def mvn_sample_precision(b, Q, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw from N(Q^{-1} b, Q^{-1}) given the precision ``Q``.

    Returns the draw and the conditional mean.
    """
    L = chol_factor(Q)
    mean = chol_solve(L, b)
    eta = rng.standard_normal(len(b))
    return mean + solve_triangular(L.T, eta, lower=False, check_finite=False), mean


def _log_diff_ndtr(a, b):
    """log(Phi(b) - Phi(a)) for a < b, accurate in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    out = np.empty(a.shape)
    upper = a > 0
    # upper tail: use the survival side, Phi(-a) - Phi(-b)
    la, lb = log_ndtr(-a[upper]), log_ndtr(-b[upper])
    with np.errstate(divide="ignore"):
        out[upper] = la + np.log1p(-np.exp(lb - la))
        la, lb = log_ndtr(a[~upper]), log_ndtr(b[~upper])
        out[~upper] = lb + np.log1p(-np.exp(la - lb))
    return out


log_interval_prob = _log_diff_ndtr


def _tail_exponential(a, b, rng):
    """Standard normal restricted to (a, b] with a >= TAIL_SWITCH.

    Rejection from an exponential translated to ``a`` with the optimal rate
    for the bound (Robert, 1995), itself truncated to the interval width.
    """
    x = np.empty(a.shape)
    todo = np.arange(a.size)
    rate = 0.5 * (a + np.sqrt(a * a + 4.0))
    width = b - a
    while todo.size:
        r, w, lo = rate[todo], width[todo], a[todo]
        u = rng.random(todo.size)
        # inverse CDF of an exponential truncated to [0, w]
        e = -np.log1p(-u * -np.expm1(-r * w)) / r
        cand = lo + e
        accept = np.log(rng.random(todo.size)) <= -0.5 * (cand - r) ** 2
        x[todo[accept]] = cand[accept]
        todo = todo[~accept]
    return x


def _standard_truncated(a, b, rng):
    """Standard normal draws on (a, b], vectorised."""
    out = np.empty(a.shape)
    flip = b <= 0
    a, b = np.where(flip, -b, a), np.where(flip, -a, b)
    # after flipping, any interval fully on one side lies in the upper half
    tail = a >= TAIL_SWITCH
    body = ~tail
    if np.any(body):
        ab, bb = a[body], b[body]
        u = rng.random(ab.size)
        upper = ab > 0
        x = np.empty(ab.size)
        # lower-CDF inversion for intervals crossing 0
        pa, pb = ndtr(ab[~upper]), ndtr(bb[~upper])
        x[~upper] = ndtri(pa + u[~upper] * (pb - pa))
        # survival-side inversion for intervals in the upper half
        qa, qb = ndtr(-ab[upper]), ndtr(-bb[upper])
        x[upper] = -ndtri(qa - u[upper] * (qa - qb))
        out[body] = x
    if np.any(tail):
        out[tail] = _tail_exponential(a[tail], b[tail], rng)
    out = np.clip(out, a, b)
    return np.where(flip, -out, out)


def truncated_normal_sample(mu, sigma2, lo, hi, rng: np.random.Generator):
    """Draw from N(mu, sigma2) restricted to (lo, hi].

    Inverse-CDF sampling in the body and exponential rejection once the
    interval sits more than ``TAIL_SWITCH`` sd from the mean, so intervals
    many sd away remain exact. Intervals narrower than 1e-12 return their
    midpoint. Broadcasts over array arguments.
    """
    mu, sigma2, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                               for v in (mu, sigma2, lo, hi)))
    shape = mu.shape
    mu, sigma2, lo, hi = (np.atleast_1d(v).ravel() for v in (mu, sigma2, lo, hi))
    sd = np.sqrt(sigma2)
    out = np.empty(mu.shape)
    narrow = (hi - lo) < 1e-12
    out[narrow] = 0.5 * (lo[narrow] + hi[narrow])
    ok = ~narrow
    if np.any(ok):
        a = (lo[ok] - mu[ok]) / sd[ok]
        b = (hi[ok] - mu[ok]) / sd[ok]
        draw = mu[ok] + sd[ok] * _standard_truncated(a, b, rng)
        out[ok] = np.clip(draw, np.nextafter(lo[ok], np.inf), hi[ok])
    return float(out[0]) if shape == () else out.reshape(shape)


def truncated_normal_moments(mu, sigma2, lo, hi) -> tuple[float, float]:
    """Analytic mean and variance of N(mu, sigma2) on (lo, hi]."""
    sd = np.sqrt(sigma2)
    a, b = (lo - mu) / sd, (hi - mu) / sd
    logz = float(_log_diff_ndtr(a, b))
    pdf = lambda t: 0.0 if np.isinf(t) else np.exp(-0.5 * t * t) / np.sqrt(2 * np.pi)
    ta = 0.0 if np.isinf(a) else a * pdf(a)
    tb = 0.0 if np.isinf(b) else b * pdf(b)
    z = np.exp(logz)
    m1 = (pdf(a) - pdf(b)) / z
    var = 1.0 + (ta - tb) / z - m1 * m1
    return mu + sd * m1, sigma2 * var


def truncated_normal_median(mu, sigma2, lo, hi) -> float:
    """Median of N(mu, sigma2) on (lo, hi], evaluated in log space."""
    sd = np.sqrt(sigma2)
    a, b = (lo - mu) / sd, (hi - mu) / sd
    if a > 0:
        # mirror into the lower tail
        return mu - sd * _lower_median(-b, -a)
    return mu + sd * _lower_median(a, b)


def _lower_median(a, b):
    if b > 0:
        return float(ndtri(0.5 * (ndtr(a) + ndtr(b))))
    target = np.logaddexp(log_ndtr(a), log_ndtr(b)) - np.log(2.0)
    return float(ndtri_exp(target))


def inv_gamma_sample(shape, scale, rng: np.random.Generator, size=None):
    """Inverse-gamma with density proportional to x^(-shape-1) exp(-scale/x)."""
    return scale / rng.gamma(shape, 1.0, size=size)


def gamma_sample(shape, rate, rng: np.random.Generator, size=None):
    return rng.gamma(shape, 1.0 / rate, size=size)
