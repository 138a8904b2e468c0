"""Synthetic datasets with known truth, and scoring of fits against them."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ORDINAL,
    MetricSpec,
    ModelConfig,
    ObservationSet,
    lambda_to_alpha,
    map_to_ordinal,
)
from .stochastics import chol_factor, distance_matrix, exp_correlation


@dataclass
class SimConfig:
    """Design and true parameter values of a simulated dataset.

    Defaults reproduce the three-metric study on a 3 x 3 square: 200 fitting
    sites, 100 held-out sites, five categories.
    """

    domain: float = 3.0
    n_fit: int = 200
    m_pred: int = 100
    K: int = 5
    kinds: tuple[str, ...] = (ORDINAL, ORDINAL, ORDINAL)
    beta: tuple[float, ...] = (0.22, 0.95)
    theta: tuple[float, ...] = (1.73, 3.80, 3.62)
    omega: tuple[float, ...] = (1.00, 1.37, -0.77)
    sigma2: tuple[float, ...] = (1.00, 2.75, 1.41)
    phi1: float = 1.0
    phi2: float = 15.76
    lam_interior: tuple[float, ...] = (0.0, 1.81, 3.26, 4.71)
    seed: int = 0

    def __post_init__(self):
        J = len(self.kinds)
        for name in ("theta", "omega", "sigma2"):
            if len(getattr(self, name)) != J:
                raise ValueError(f"{name} must have one entry per metric ({J})")
        if len(self.lam_interior) != self.K - 1:
            raise ValueError(f"need K-1 = {self.K - 1} interior thresholds")
        lambda_to_alpha(np.asarray(self.lam_interior))  # validates ordering and 0 start
        ordinal = [j for j, k in enumerate(self.kinds) if k == ORDINAL]
        if not ordinal:
            raise ValueError("at least one ordinal metric is required")
        if self.omega[ordinal[0]] != 1.0 or self.sigma2[ordinal[0]] != 1.0:
            raise ValueError("the reference ordinal metric needs omega = sigma2 = 1")

    @property
    def lam(self) -> np.ndarray:
        return np.concatenate([[-np.inf], self.lam_interior, [np.inf]])

    def metric_specs(self) -> tuple[MetricSpec, ...]:
        return tuple(MetricSpec(f"metric_{j + 1}", kind, self.K if kind == ORDINAL else None)
                     for j, kind in enumerate(self.kinds))

    def model_config(self, **kwargs) -> ModelConfig:
        return ModelConfig(self.metric_specs(), **kwargs)


@dataclass
class Truth:
    """Every latent quantity of a simulated dataset, for all n_fit + m_pred sites."""

    cfg: SimConfig
    coords: np.ndarray
    X: np.ndarray
    H: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    x_center: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x_scale: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def fit_index(self) -> slice:
        return slice(0, self.cfg.n_fit)

    @property
    def holdout_index(self) -> slice:
        return slice(self.cfg.n_fit, self.cfg.n_fit + self.cfg.m_pred)

    def parameter_values(self, config: ModelConfig) -> dict[str, float]:
        """True value of every free parameter, keyed like the trace columns."""
        c = self.cfg
        out = {f"beta_{k + 1}": b for k, b in enumerate(c.beta)}
        out.update({f"theta_{j + 1}": t for j, t in enumerate(c.theta)})
        for j in range(len(c.kinds)):
            if not config.fixed_omega()[j]:
                out[f"omega_{j + 1}"] = c.omega[j]
            if not config.fixed_sigma2()[j]:
                out[f"sigma2_{j + 1}"] = c.sigma2[j]
        out["phi2"] = c.phi2
        if not config.constraints.fix_phi1:
            out["phi1"] = c.phi1
        for k in range(2, c.K):
            out[f"lambda_{k}"] = c.lam_interior[k - 1]
        return out


def simulate_dataset(cfg: SimConfig, rng: np.random.Generator | None = None):
    """Simulate fitting and holdout sets from the generative model.

    Covariates are i.i.d. standard normal per site, then centered and scaled
    with the fitting-site statistics before building the mean of H, so the
    true coefficients hold exactly on the scale the fitter sees.

    Returns ``(fit, holdout, truth)``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    N = cfg.n_fit + cfg.m_pred
    p = len(cfg.beta)
    coords = rng.uniform(0.0, cfg.domain, size=(N, 2))
    X_raw = rng.standard_normal((N, p))
    center = X_raw[:cfg.n_fit].mean(axis=0)
    scale = X_raw[:cfg.n_fit].std(axis=0, ddof=1)
    X = (X_raw - center) / scale

    R = exp_correlation(distance_matrix(coords), cfg.phi2)
    L = chol_factor(cfg.phi1 * R)
    H = X @ np.asarray(cfg.beta) + L @ rng.standard_normal(N)

    J = len(cfg.kinds)
    theta, omega = np.asarray(cfg.theta), np.asarray(cfg.omega)
    Z = theta + H[:, None] * omega + np.sqrt(cfg.sigma2) * rng.standard_normal((N, J))
    Y = Z.copy()
    lam = cfg.lam
    for j, kind in enumerate(cfg.kinds):
        if kind == ORDINAL:
            Y[:, j] = map_to_ordinal(Z[:, j], lam)

    specs = cfg.metric_specs()
    for j, kind in enumerate(cfg.kinds):
        if kind != ORDINAL:
            continue
        seen = set(np.unique(Y[:cfg.n_fit, j]).astype(int))
        empty = sorted(set(range(1, cfg.K + 1)) - seen)
        if empty:
            warnings.warn(f"{specs[j].name}: category never observed {empty}", stacklevel=2)

    ids = [f"s{i + 1:04d}" for i in range(N)]
    fit = ObservationSet(ids[:cfg.n_fit], coords[:cfg.n_fit], X[:cfg.n_fit], Y[:cfg.n_fit],
                         specs)
    holdout = ObservationSet(ids[cfg.n_fit:], coords[cfg.n_fit:], X[cfg.n_fit:],
                             Y[cfg.n_fit:], specs)
    truth = Truth(cfg, coords, X, H, Z, Y, center, scale)
    return fit, holdout, truth


def interval_capture(draws, truth_value, level=0.95):
    lo, hi = np.quantile(draws, [(1 - level) / 2, (1 + level) / 2], axis=0)
    return lo, hi, (lo <= truth_value) & (truth_value <= hi)


@dataclass
class CoverageReport:
    parameters: list[dict]
    h_coverage: float
    h_captured: np.ndarray
    confusion: np.ndarray  # rows: predicted mode, columns: true category
    exact_rate: float
    within1_rate: float

    @property
    def n_captured(self) -> int:
        return sum(bool(r["captured"]) for r in self.parameters)

    @property
    def missed(self) -> list[str]:
        return [r["name"] for r in self.parameters if not r["captured"]]


def coverage_report(truth: Truth, draws, config: ModelConfig, prediction=None) -> CoverageReport:
    """Score posterior draws and holdout predictions against the truth.

    ``draws`` is a :class:`mixedlgp.posterior.Draws`; ``prediction`` a
    :class:`mixedlgp.posterior.PredictionResult` for the holdout sites.
    """
    flat = draws.flat(config)
    lam = draws.lam
    rows = []
    for name, value in truth.parameter_values(config).items():
        if name.startswith("lambda_"):
            k = int(name.split("_")[1])
            x = lam[:, 0, k]
        else:
            x = flat[name]
        lo, hi, ok = interval_capture(x, value)
        rows.append(dict(name=name, truth=value, median=float(np.median(x)), lo=float(lo),
                         hi=float(hi), captured=bool(ok)))

    K = truth.cfg.K
    conf = np.zeros((K, K), dtype=int)
    h_cov, h_cap, exact, within = float("nan"), np.zeros(0, bool), float("nan"), float("nan")
    if prediction is not None:
        H_true = truth.H[truth.holdout_index]
        _, _, h_cap = interval_capture(prediction.H_tilde, H_true)
        h_cov = float(np.mean(h_cap))
        Y_true = truth.Y[truth.holdout_index]
        modes = prediction.point_prediction()
        ords = config.ordinal_idx
        t, m = Y_true[:, ords].astype(int).ravel(), modes[:, ords].astype(int).ravel()
        np.add.at(conf, (m - 1, t - 1), 1)
        exact = float(np.mean(t == m))
        within = float(np.mean(np.abs(t - m) <= 1))
    return CoverageReport(rows, h_cov, h_cap, conf, exact, within)

