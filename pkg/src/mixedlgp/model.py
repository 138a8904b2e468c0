"""Domain types, dataset validation and the ordinal threshold mapping.

Everything here is a plain value type. The sampler, posterior and evaluation
modules all consume a validated :class:`ObservationSet` together with a
:class:`ModelConfig`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ORDINAL = "ordinal"
CONTINUOUS = "continuous"
SHARED = "shared"
PER_METRIC = "per_metric"


class ValidationError(ValueError):
    """Raised when input data or configuration is unusable."""


@dataclass(frozen=True)
class MetricSpec:
    name: str
    kind: str
    categories: int | None = None

    def __post_init__(self):
        if self.kind not in (ORDINAL, CONTINUOUS):
            raise ValidationError(f"metric {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == ORDINAL and (self.categories is None or self.categories < 2):
            raise ValidationError(f"metric {self.name!r}: ordinal metrics need K >= 2")

    @property
    def is_ordinal(self) -> bool:
        return self.kind == ORDINAL


@dataclass
class PriorConfig:
    """Prior hyperparameters.

    ``b_phi1`` is the inverse-gamma scale of the sill prior and ``b_phi2`` is
    the gamma *scale* of the decay prior (prior mean ``a_phi2 * b_phi2``).
    ``alpha_mean``/``alpha_cov`` default to ``0`` and ``100 * I`` when left
    as ``None`` and are sized once K is known.
    """

    a_z: float = 1.0
    b_z: float = 1.0
    sigma2_beta: float = 100.0
    sigma2_theta: float = 100.0
    sigma2_omega: float = 100.0
    a_phi1: float = 1.0
    b_phi1: float = 1.0
    a_phi2: float = 2.0
    b_phi2: float = 2.0
    alpha_mean: np.ndarray | None = None
    alpha_cov: np.ndarray | None = None

    def resolved(self, n_alpha: int) -> "PriorConfig":
        """Return a copy with the cutpoint prior sized to ``n_alpha``."""
        mean = np.zeros(n_alpha) if self.alpha_mean is None else np.atleast_1d(
            np.asarray(self.alpha_mean, dtype=float))
        cov = 100.0 * np.eye(n_alpha) if self.alpha_cov is None else np.atleast_2d(
            np.asarray(self.alpha_cov, dtype=float))
        if mean.shape == (1,) and n_alpha > 1:
            mean = np.full(n_alpha, mean[0])
        if cov.shape == (1, 1) and n_alpha > 1:
            cov = cov[0, 0] * np.eye(n_alpha)
        out = PriorConfig(**{**self.__dict__, "alpha_mean": mean, "alpha_cov": cov})
        out.validate(n_alpha)
        return out

    def validate(self, n_alpha: int | None = None):
        for name in ("a_z", "b_z", "sigma2_beta", "sigma2_theta", "sigma2_omega",
                     "a_phi1", "b_phi1", "a_phi2", "b_phi2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValidationError(f"prior {name} must be a positive real, got {value}")
        if n_alpha is None or self.alpha_cov is None:
            return
        A = self.alpha_cov
        if self.alpha_mean.shape != (n_alpha,) or A.shape != (n_alpha, n_alpha):
            raise ValidationError(
                f"cutpoint prior must have mean length {n_alpha} and a "
                f"{n_alpha}x{n_alpha} covariance")
        if n_alpha and (not np.allclose(A, A.T) or np.linalg.eigvalsh(A).min() <= 0):
            raise ValidationError("alpha_cov must be symmetric positive definite")


@dataclass
class Constraints:
    """Identifiability constraints, indices refer to positions in the metric list."""

    reference_ordinal_metric: int = 0
    reference_loading_metric: int = 0
    fix_phi1: bool = True
    threshold_mode: str = SHARED


@dataclass
class SamplerSettings:
    phi2_proposal_sd: float = 0.3
    alpha_proposal_sd: float = 0.05
    adapt_interval: int = 50
    target_accept: tuple[float, float] = (0.2, 0.5)


@dataclass
class ModelConfig:
    metrics: tuple[MetricSpec, ...]
    priors: PriorConfig = field(default_factory=PriorConfig)
    constraints: Constraints | None = None
    sampler: SamplerSettings = field(default_factory=SamplerSettings)

    def __post_init__(self):
        self.metrics = tuple(self.metrics)
        ordinal = [j for j, m in enumerate(self.metrics) if m.is_ordinal]
        if not ordinal:
            raise ValidationError("at least one ordinal metric is required")
        ks = {self.metrics[j].categories for j in ordinal}
        if len(ks) != 1:
            raise ValidationError("all ordinal metrics must share the same number of categories")
        if len({m.name for m in self.metrics}) != len(self.metrics):
            raise ValidationError("metric names must be unique")
        if self.constraints is None:
            self.constraints = Constraints(
                reference_ordinal_metric=ordinal[0],
                reference_loading_metric=ordinal[0],
                fix_phi1=len(ordinal) == len(self.metrics),
            )
        c = self.constraints
        if c.threshold_mode not in (SHARED, PER_METRIC):
            raise ValidationError(f"unknown threshold_mode {c.threshold_mode!r}")
        if c.reference_ordinal_metric not in ordinal:
            raise ValidationError("reference_ordinal_metric must index an ordinal metric")
        if not 0 <= c.reference_loading_metric < len(self.metrics):
            raise ValidationError("reference_loading_metric out of range")
        self.priors = self.priors.resolved(self.n_alpha)

    @property
    def K(self) -> int:
        return self.metrics[self.ordinal_idx[0]].categories

    @property
    def J(self) -> int:
        return len(self.metrics)

    @property
    def ordinal_idx(self) -> np.ndarray:
        return np.array([j for j, m in enumerate(self.metrics) if m.is_ordinal])

    @property
    def continuous_idx(self) -> np.ndarray:
        return np.array([j for j, m in enumerate(self.metrics) if not m.is_ordinal], dtype=int)

    @property
    def n_alpha(self) -> int:
        return self.K - 2

    @property
    def n_threshold_sets(self) -> int:
        return 1 if self.constraints.threshold_mode == SHARED else len(self.ordinal_idx)

    def threshold_set(self, j: int) -> int:
        """Threshold-set row used by metric ``j``."""
        if self.constraints.threshold_mode == SHARED:
            return 0
        return int(np.flatnonzero(self.ordinal_idx == j)[0])

    def fixed_sigma2(self) -> np.ndarray:
        """Boolean mask of metrics whose variance is pinned at 1."""
        mask = np.zeros(self.J, dtype=bool)
        if self.constraints.threshold_mode == PER_METRIC:
            mask[self.ordinal_idx] = True
        else:
            mask[self.constraints.reference_ordinal_metric] = True
        return mask

    def fixed_omega(self) -> np.ndarray:
        mask = np.zeros(self.J, dtype=bool)
        mask[self.constraints.reference_loading_metric] = True
        return mask


@dataclass
class ObservationSet:
    site_ids: list[str]
    coords: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    metrics: tuple[MetricSpec, ...] = ()
    x_center: np.ndarray | None = None
    x_scale: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def J(self) -> int:
        return self.Y.shape[1]

    def standardize_new(self, X_new: np.ndarray) -> np.ndarray:
        """Apply the training standardization to covariates of new sites."""
        X_new = np.asarray(X_new, dtype=float).reshape(-1, self.p)
        if self.x_center is None:
            return X_new
        return (X_new - self.x_center) / self.x_scale


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center and scale columns to sample mean 0 and sample sd 1 (ddof=1)."""
    X = np.asarray(X, dtype=float)
    center = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1)
    if np.any(~(scale > 0)):
        bad = np.flatnonzero(~(scale > 0)).tolist()
        raise ValidationError(f"covariate columns {bad} are constant and cannot be scaled")
    return (X - center) / scale, center, scale


def validate_dataset(raw: ObservationSet, spec: Sequence[MetricSpec]) -> ObservationSet:
    """Check a parsed dataset and return it with standardized covariates.

    Duplicate sites, non-finite inputs and out-of-range ordinal codes raise
    :class:`ValidationError`. An ordinal category unobserved across every
    ordinal metric only warns, since its threshold is then weakly identified.
    """
    spec = tuple(spec)
    ids = [str(s) for s in raw.site_ids]
    if len(set(ids)) != len(ids):
        seen, dup = set(), []
        for s in ids:
            if s in seen:
                dup.append(s)
            seen.add(s)
        raise ValidationError(f"duplicate site id(s): {sorted(set(dup))}")
    coords = np.asarray(raw.coords, dtype=float)
    X = np.asarray(raw.X, dtype=float)
    Y = np.asarray(raw.Y, dtype=float)
    n = len(ids)
    if n < 2:
        raise ValidationError("need at least 2 sites")
    if coords.shape != (n, 2):
        raise ValidationError(f"coords must be {n}x2, got {coords.shape}")
    if X.ndim != 2 or X.shape[0] != n:
        raise ValidationError(f"covariate matrix must have {n} rows")
    if Y.shape != (n, len(spec)):
        raise ValidationError(f"responses must be {n}x{len(spec)}, got {Y.shape}")
    if not np.all(np.isfinite(coords)):
        raise ValidationError("non-finite coordinate")
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite covariate")
    if np.any(np.isnan(Y)):
        raise ValidationError("missing response cell")

    ordinal = [j for j, m in enumerate(spec) if m.is_ordinal]
    for j in ordinal:
        col = Y[:, j]
        K = spec[j].categories
        if np.any(col != np.round(col)):
            raise ValidationError(f"metric {spec[j].name!r}: ordinal values must be integers")
        if np.any((col < 1) | (col > K)):
            raise ValidationError(
                f"metric {spec[j].name!r}: category out of range [1, {K}]")
    for j, m in enumerate(spec):
        if not m.is_ordinal and not np.all(np.isfinite(Y[:, j])):
            raise ValidationError(f"metric {m.name!r}: non-finite continuous response")
    if ordinal:
        K = spec[ordinal[0]].categories
        present = np.unique(Y[:, ordinal])
        missing = sorted(set(range(1, K + 1)) - {int(v) for v in present})
        if missing:
            warnings.warn(f"category never observed in any ordinal metric: {missing} "
                          "(threshold weakly identified)", stacklevel=2)

    if X.shape[1]:
        Xs, center, scale = standardize(X)
    else:
        Xs, center, scale = X, np.zeros(0), np.ones(0)
    return ObservationSet(ids, coords, Xs, Y, spec, center, scale)


def map_to_ordinal(z, lam) -> np.ndarray | int:
    """Category k with ``lam[k-1] < z <= lam[k]``.

    ``lam`` is the full threshold vector ``(-inf, 0, ..., +inf)`` of length
    K + 1. Works elementwise on arrays.
    """
    lam = np.asarray(lam, dtype=float)
    k = np.searchsorted(lam, z, side="left")
    k = np.clip(k, 1, len(lam) - 1)
    return int(k) if np.ndim(k) == 0 else k


def alpha_to_lambda(alpha) -> np.ndarray:
    """Full threshold vector from the log-gap parameters.

    ``alpha`` holds the K-2 free entries; the first interior cut is pinned
    at 0 and the rest are cumulative sums of ``exp(alpha)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    interior = np.concatenate([np.zeros(alpha.shape[:-1] + (1,)),
                               np.cumsum(np.exp(alpha), axis=-1)], axis=-1)
    pad = np.full(alpha.shape[:-1] + (1,), np.inf)
    return np.concatenate([-pad, interior, pad], axis=-1)


def lambda_to_alpha(lam) -> np.ndarray:
    """Inverse of :func:`alpha_to_lambda`; accepts full or interior vectors."""
    lam = np.asarray(lam, dtype=float)
    interior = lam[..., 1:-1] if np.isinf(lam[..., 0]).all() else lam
    if not np.allclose(interior[..., 0], 0.0):
        raise ValidationError("first interior threshold must be 0")
    gaps = np.diff(interior, axis=-1)
    if np.any(gaps <= 0):
        raise ValidationError("thresholds must be strictly increasing")
    return np.log(gaps)
