"""MCMC for the multilevel latent Gaussian process model.

One sweep updates, in order: the spatial covariance parameters (phi1 by
conjugate draw, phi2 by log-scale random-walk Metropolis-Hastings), the
regression coefficients and latent field H, the per-metric intercepts,
loadings and variances, the cutpoints (random-walk MH on the log-gap
parameters with the latent responses integrated out), and finally the
latent responses of the ordinal metrics.

Every ``update_*`` function mutates the state in place and returns it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .model import ModelConfig, ObservationSet, alpha_to_lambda
from .stochastics import (
    chol_factor,
    chol_logdet,
    chol_solve,
    distance_matrix,
    exp_correlation,
    inv_gamma_sample,
    log_interval_prob,
    mvn_sample_precision,
    truncated_normal_sample,
)

log = logging.getLogger(__name__)


class ChainError(RuntimeError):
    """A chain produced a non-finite value."""

    def __init__(self, chain_id, iteration, parameter):
        super().__init__(f"chain {chain_id}: non-finite {parameter} at iteration {iteration}")
        self.chain_id = chain_id
        self.iteration = iteration
        self.parameter = parameter


@dataclass
class Problem:
    """Validated data, configuration and quantities derived from them once."""

    data: ObservationSet
    config: ModelConfig
    D: np.ndarray
    ord_cols: np.ndarray
    y_ord: np.ndarray  # integer codes of the ordinal columns, n x J_o
    set_of_col: np.ndarray  # threshold-set row of each ordinal column
    fixed_omega: np.ndarray
    fixed_sigma2: np.ndarray

    @classmethod
    def build(cls, data: ObservationSet, config: ModelConfig) -> "Problem":
        if data.J != config.J:
            raise ValueError(f"data has {data.J} metrics, config declares {config.J}")
        ord_cols = config.ordinal_idx
        return cls(
            data=data,
            config=config,
            D=distance_matrix(data.coords),
            ord_cols=ord_cols,
            y_ord=data.Y[:, ord_cols].astype(int),
            set_of_col=np.array([config.threshold_set(j) for j in ord_cols]),
            fixed_omega=config.fixed_omega(),
            fixed_sigma2=config.fixed_sigma2(),
        )

    def with_responses(self, Y: np.ndarray) -> "Problem":
        """Same problem with replaced responses (used by simulation-based checks)."""
        data = ObservationSet(self.data.site_ids, self.data.coords, self.data.X, Y,
                              self.data.metrics, self.data.x_center, self.data.x_scale)
        out = Problem(**{**self.__dict__, "data": data})
        out.y_ord = Y[:, self.ord_cols].astype(int)
        return out


@dataclass
class CorrCache:
    """Cholesky factor, log determinant and inverse of R(phi2)."""

    phi2: float
    L: np.ndarray
    logdet: float
    _inv: np.ndarray | None = None

    @classmethod
    def build(cls, D, phi2):
        L = chol_factor(exp_correlation(D, phi2))
        return cls(phi2, L, chol_logdet(L))

    @property
    def inv(self) -> np.ndarray:
        if self._inv is None:
            Linv = solve_triangular(self.L, np.eye(self.L.shape[0]), lower=True,
                                    check_finite=False)
            self._inv = Linv.T @ Linv
        return self._inv

    def quad(self, r) -> float:
        """r^T R^{-1} r."""
        w = solve_triangular(self.L, r, lower=True, check_finite=False)
        return float(w @ w)


@dataclass
class ChainState:
    Z: np.ndarray
    H: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    sigma2: np.ndarray
    beta: np.ndarray
    phi1: float
    phi2: float
    alpha: np.ndarray  # n_threshold_sets x (K-2)
    phi2_sd: float = 0.3
    alpha_sd: float = 0.05
    accepts: dict = field(default_factory=lambda: {"phi2": [0, 0], "alpha": [0, 0]})
    corr: CorrCache | None = None

    @property
    def lam(self) -> np.ndarray:
        """Full threshold vectors, one row per threshold set."""
        return alpha_to_lambda(self.alpha)

    def copy(self) -> "ChainState":
        out = ChainState(self.Z.copy(), self.H.copy(), self.theta.copy(), self.omega.copy(),
                         self.sigma2.copy(), self.beta.copy(), self.phi1, self.phi2,
                         self.alpha.copy(), self.phi2_sd, self.alpha_sd,
                         {k: list(v) for k, v in self.accepts.items()}, self.corr)
        return out

    def ensure_corr(self, problem: Problem) -> CorrCache:
        if self.corr is None or self.corr.phi2 != self.phi2:
            self.corr = CorrCache.build(problem.D, self.phi2)
        return self.corr


def cell_bounds(state: ChainState, problem: Problem) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper cutpoints of every ordinal cell, each n x J_o."""
    lam = state.lam[problem.set_of_col]  # J_o x (K+1)
    cols = np.arange(len(problem.ord_cols))
    lo = lam[cols, problem.y_ord - 1]
    hi = lam[cols, problem.y_ord]
    return lo, hi


def init_state(problem: Problem, rng: np.random.Generator, disperse: float = 0.5) -> ChainState:
    """Starting values; ``disperse`` perturbs theta, beta and H between chains."""
    cfg, data = problem.config, problem.data
    n, J, p = data.n, data.J, data.p
    pri = cfg.priors
    alpha = np.zeros((cfg.n_threshold_sets, cfg.n_alpha))
    state = ChainState(
        Z=data.Y.astype(float).copy(),
        H=0.1 * rng.standard_normal(n),
        theta=np.zeros(J),
        omega=np.ones(J),
        sigma2=np.ones(J),
        beta=np.zeros(p),
        phi1=1.0,
        phi2=pri.a_phi2 * pri.b_phi2,
        alpha=alpha,
        phi2_sd=cfg.sampler.phi2_proposal_sd,
        alpha_sd=cfg.sampler.alpha_proposal_sd,
    )
    lo, hi = cell_bounds(state, problem)
    mid = 0.5 * (lo + hi)
    mid = np.where(np.isinf(lo), hi - 0.5, mid)
    mid = np.where(np.isinf(hi), lo + 0.5, mid)
    state.Z[:, problem.ord_cols] = mid
    if disperse:
        state.theta += disperse * rng.standard_normal(J)
        state.beta += disperse * rng.standard_normal(p)
        state.H += disperse * rng.standard_normal(n)
    state.ensure_corr(problem)
    return state


# -- step 1: spatial covariance ------------------------------------------------

def phi1_conditional(state: ChainState, problem: Problem) -> tuple[float, float]:
    """Shape and scale of the inverse-gamma full conditional of the sill."""
    pri = problem.config.priors
    corr = state.ensure_corr(problem)
    r = state.H - problem.data.X @ state.beta
    return pri.a_phi1 + 0.5 * problem.data.n, pri.b_phi1 + 0.5 * corr.quad(r)


def update_phi1(state: ChainState, problem: Problem, rng) -> ChainState:
    if problem.config.constraints.fix_phi1:
        return state
    shape, scale = phi1_conditional(state, problem)
    state.phi1 = float(inv_gamma_sample(shape, scale, rng))
    return state


def phi2_log_conditional(phi2, state: ChainState, problem: Problem, corr: CorrCache | None = None):
    """Unnormalised log full conditional of the decay parameter (on phi2 itself)."""
    pri = problem.config.priors
    if corr is None:
        corr = CorrCache.build(problem.D, phi2)
    r = state.H - problem.data.X @ state.beta
    n = problem.data.n
    loglik = -0.5 * (n * np.log(state.phi1) + corr.logdet) - 0.5 * corr.quad(r) / state.phi1
    logprior = (pri.a_phi2 - 1.0) * np.log(phi2) - phi2 / pri.b_phi2
    return loglik + logprior


def update_phi2(state: ChainState, problem: Problem, rng) -> ChainState:
    cur = state.ensure_corr(problem)
    prop = state.phi2 * np.exp(state.phi2_sd * rng.standard_normal())
    new = CorrCache.build(problem.D, prop)
    # log-scale walk: Jacobian contributes log(phi2') - log(phi2)
    log_ratio = (phi2_log_conditional(prop, state, problem, new)
                 - phi2_log_conditional(state.phi2, state, problem, cur)
                 + np.log(prop) - np.log(state.phi2))
    state.accepts["phi2"][1] += 1
    if np.log(rng.random()) < log_ratio:
        state.phi2, state.corr = float(prop), new
        state.accepts["phi2"][0] += 1
    return state


# -- step 2: regression coefficients and latent field ------------------------------

def beta_conditional(state: ChainState, problem: Problem) -> tuple[np.ndarray, np.ndarray]:
    """Precision matrix and canonical mean vector of the full conditional of beta."""
    X = problem.data.X
    corr = state.ensure_corr(problem)
    RiX = chol_solve(corr.L, X) / state.phi1
    Q = X.T @ RiX + np.eye(X.shape[1]) / problem.config.priors.sigma2_beta
    return Q, RiX.T @ state.H


def update_beta(state: ChainState, problem: Problem, rng) -> ChainState:
    if problem.data.X.shape[1] == 0:
        return state
    Q, b = beta_conditional(state, problem)
    state.beta, _ = mvn_sample_precision(b, Q, rng)
    return state


def h_conditional_precision(state: ChainState, problem: Problem) -> tuple[np.ndarray, np.ndarray]:
    """Precision matrix and canonical mean vector of the full conditional of H."""
    corr = state.ensure_corr(problem)
    n = problem.data.n
    w = state.omega / state.sigma2
    Q = corr.inv / state.phi1
    Q = Q + np.sum(state.omega * w) * np.eye(n)
    b = (corr.inv @ (problem.data.X @ state.beta)) / state.phi1
    b = b + (state.Z - state.theta) @ w
    return Q, b


def update_H(state: ChainState, problem: Problem, rng) -> ChainState:
    Q, b = h_conditional_precision(state, problem)
    state.H, _ = mvn_sample_precision(b, Q, rng)
    return state


# -- step 3: metric intercepts, loadings and variances -----------------------------

def theta_omega_conditional(state: ChainState, problem: Problem, j: int):
    """Precision and canonical mean of (theta_j, omega_j), or of theta_j alone
    when the loading of metric ``j`` is fixed."""
    pri = problem.config.priors
    z = state.Z[:, j]
    s2 = state.sigma2[j]
    n = len(z)
    if problem.fixed_omega[j]:
        Q = np.array([[n / s2 + 1.0 / pri.sigma2_theta]])
        b = np.array([np.sum(z - state.omega[j] * state.H) / s2])
        return Q, b
    H = state.H
    sh, shh = H.sum(), H @ H
    Q = np.array([[n / s2 + 1.0 / pri.sigma2_theta, sh / s2],
                  [sh / s2, shh / s2 + 1.0 / pri.sigma2_omega]])
    b = np.array([z.sum(), z @ H]) / s2
    return Q, b


def update_theta_omega(state: ChainState, problem: Problem, rng) -> ChainState:
    for j in range(problem.data.J):
        Q, b = theta_omega_conditional(state, problem, j)
        draw, _ = mvn_sample_precision(b, Q, rng)
        state.theta[j] = draw[0]
        if not problem.fixed_omega[j]:
            state.omega[j] = draw[1]
    return state


def sigma2_conditional(state: ChainState, problem: Problem, j: int) -> tuple[float, float]:
    pri = problem.config.priors
    r = state.Z[:, j] - state.theta[j] - state.omega[j] * state.H
    return pri.a_z + 0.5 * len(r), pri.b_z + 0.5 * float(r @ r)


def update_sigma2(state: ChainState, problem: Problem, rng) -> ChainState:
    for j in np.flatnonzero(~problem.fixed_sigma2):
        shape, scale = sigma2_conditional(state, problem, j)
        state.sigma2[j] = inv_gamma_sample(shape, scale, rng)
    return state


# -- step 4: cutpoints ------------------------------------------------------------

def threshold_log_likelihood(alpha_row, s: int, state: ChainState, problem: Problem) -> float:
    """Ordinal log likelihood of threshold set ``s`` with the latent Z integrated out."""
    lam = alpha_to_lambda(alpha_row)
    cols = np.flatnonzero(problem.set_of_col == s)
    if cols.size == 0:
        return 0.0
    js = problem.ord_cols[cols]
    mu = state.theta[js] + state.H[:, None] * state.omega[js]
    sd = np.sqrt(state.sigma2[js])
    y = problem.y_ord[:, cols]
    return float(np.sum(log_interval_prob((lam[y - 1] - mu) / sd, (lam[y] - mu) / sd)))


def alpha_log_prior(alpha_row, problem: Problem) -> float:
    pri = problem.config.priors
    d = alpha_row - pri.alpha_mean
    return -0.5 * float(d @ np.linalg.solve(pri.alpha_cov, d))


def update_thresholds(state: ChainState, problem: Problem, rng) -> ChainState:
    if problem.config.n_alpha == 0:
        return state
    for s in range(state.alpha.shape[0]):
        cur = state.alpha[s]
        prop = cur + state.alpha_sd * rng.standard_normal(cur.shape)
        log_ratio = (threshold_log_likelihood(prop, s, state, problem)
                     + alpha_log_prior(prop, problem)
                     - threshold_log_likelihood(cur, s, state, problem)
                     - alpha_log_prior(cur, problem))
        state.accepts["alpha"][1] += 1
        if np.log(rng.random()) < log_ratio:
            state.alpha[s] = prop
            state.accepts["alpha"][0] += 1
    return state


# -- step 5: latent ordinal responses ------------------------------------------------

def update_Z(state: ChainState, problem: Problem, rng) -> ChainState:
    js = problem.ord_cols
    lo, hi = cell_bounds(state, problem)
    mu = state.theta[js] + state.H[:, None] * state.omega[js]
    s2 = np.broadcast_to(state.sigma2[js], mu.shape)
    state.Z[:, js] = truncated_normal_sample(mu, s2, lo, hi, rng)
    return state


SWEEP = (
    ("phi1", update_phi1),
    ("phi2", update_phi2),
    ("beta", update_beta),
    ("H", update_H),
    ("theta_omega", update_theta_omega),
    ("sigma2", update_sigma2),
    ("alpha", update_thresholds),
    ("Z", update_Z),
)

_CHECKED = {
    "phi1": ("phi1",), "phi2": ("phi2",), "beta": ("beta",), "H": ("H",),
    "theta_omega": ("theta", "omega"), "sigma2": ("sigma2",), "alpha": ("alpha",), "Z": ("Z",),
}


def sweep(state: ChainState, problem: Problem, rng, *, iteration=0, chain_id=0) -> ChainState:
    for name, step in SWEEP:
        step(state, problem, rng)
        for attr in _CHECKED[name]:
            if not np.all(np.isfinite(getattr(state, attr))):
                raise ChainError(chain_id, iteration, attr)
    return state


def check_constraints(state: ChainState, problem: Problem) -> None:
    """Raise AssertionError if any identifiability constraint is violated."""
    cfg = problem.config
    assert np.all(state.omega[problem.fixed_omega] == 1.0), "loading constraint"
    assert np.all(state.sigma2[problem.fixed_sigma2] == 1.0), "variance constraint"
    if cfg.constraints.fix_phi1:
        assert state.phi1 == 1.0, "sill constraint"
    lam = state.lam
    assert np.all(lam[:, 1] == 0.0), "first cutpoint"
    assert np.all(np.diff(lam[:, 1:-1], axis=1) > 0), "cutpoint order"
    lo, hi = cell_bounds(state, problem)
    z = state.Z[:, problem.ord_cols]
    assert np.all((z > lo) & (z <= hi)), "latent response outside its interval"
    if cfg.continuous_idx.size:
        c = cfg.continuous_idx
        assert np.array_equal(state.Z[:, c], problem.data.Y[:, c]), "continuous column altered"


def _adapt(state: ChainState, window: dict, settings) -> None:
    lo, hi = settings.target_accept
    for key, attr in (("phi2", "phi2_sd"), ("alpha", "alpha_sd")):
        acc, tries = state.accepts[key]
        acc0, tries0 = window.get(key, (0, 0))
        if tries - tries0 == 0:
            continue
        rate = (acc - acc0) / (tries - tries0)
        if rate < lo:
            setattr(state, attr, getattr(state, attr) * 0.8)
        elif rate > hi:
            setattr(state, attr, getattr(state, attr) * 1.25)
        window[key] = (acc, tries)


# -- traces ---------------------------------------------------------------------------

def parameter_layout(config: ModelConfig, p: int) -> dict[str, slice]:
    """Column slices of each parameter block in a stored parameter row."""
    sizes = [("beta", p), ("theta", config.J), ("omega", config.J), ("sigma2", config.J),
             ("phi1", 1), ("phi2", 1), ("alpha", config.n_threshold_sets * config.n_alpha)]
    out, start = {}, 0
    for name, size in sizes:
        out[name] = slice(start, start + size)
        start += size
    return out


def parameter_columns(config: ModelConfig, p: int, free_only: bool = True) -> list[tuple[str, int]]:
    """Flat names and column indices of stored parameters.

    Metric and coefficient indices are 1-based. Fixed loadings, variances and
    a fixed sill are dropped when ``free_only`` is set.
    """
    layout = parameter_layout(config, p)
    fixed_omega, fixed_sigma2 = config.fixed_omega(), config.fixed_sigma2()
    cols = []
    for k in range(p):
        cols.append((f"beta_{k + 1}", layout["beta"].start + k))
    for j in range(config.J):
        cols.append((f"theta_{j + 1}", layout["theta"].start + j))
    for j in range(config.J):
        if not (free_only and fixed_omega[j]):
            cols.append((f"omega_{j + 1}", layout["omega"].start + j))
    for j in range(config.J):
        if not (free_only and fixed_sigma2[j]):
            cols.append((f"sigma2_{j + 1}", layout["sigma2"].start + j))
    cols.append(("phi2", layout["phi2"].start))
    if not (free_only and config.constraints.fix_phi1):
        cols.append(("phi1", layout["phi1"].start))
    start = layout["alpha"].start
    for s in range(config.n_threshold_sets):
        for k in range(config.n_alpha):
            name = f"alpha_{k + 1}" if config.n_threshold_sets == 1 else f"alpha_{s + 1}_{k + 1}"
            cols.append((name, start + s * config.n_alpha + k))
    return cols


@dataclass
class TraceStore:
    """Post burn-in draws of one chain.

    ``params`` holds one row per stored iteration (columns laid out by
    :func:`parameter_layout`), ``H`` the latent field at the same iterations
    and ``Z`` the latent responses at every ``thin_z``-th stored iteration.
    """

    chain_id: int
    layout: dict[str, slice]
    n_alpha_sets: int
    iterations: np.ndarray
    params: np.ndarray
    H: np.ndarray
    z_iterations: np.ndarray
    Z: np.ndarray
    acceptance: dict = field(default_factory=dict)
    _size: int = 0
    _zsize: int = 0

    @classmethod
    def allocate(cls, chain_id, config: ModelConfig, n, p, n_draws, thin_z):
        layout = parameter_layout(config, p)
        width = max(s.stop for s in layout.values())
        nz = 0 if thin_z <= 0 else -(-n_draws // thin_z)
        return cls(chain_id, layout, config.n_threshold_sets,
                   np.zeros(n_draws, dtype=int), np.zeros((n_draws, width)),
                   np.zeros((n_draws, n)), np.zeros(nz, dtype=int), np.zeros((nz, n, config.J)))

    def append(self, iteration: int, state: ChainState, store_z: bool) -> None:
        if self._size and iteration <= self.iterations[self._size - 1]:
            raise ValueError("trace iterations must be strictly increasing")
        row = self.params[self._size]
        L = self.layout
        row[L["beta"]] = state.beta
        row[L["theta"]] = state.theta
        row[L["omega"]] = state.omega
        row[L["sigma2"]] = state.sigma2
        row[L["phi1"]] = state.phi1
        row[L["phi2"]] = state.phi2
        row[L["alpha"]] = state.alpha.ravel()
        self.H[self._size] = state.H
        self.iterations[self._size] = iteration
        self._size += 1
        if store_z:
            self.Z[self._zsize] = state.Z
            self.z_iterations[self._zsize] = iteration
            self._zsize += 1

    def __len__(self):
        return len(self.iterations)

    def get(self, name: str) -> np.ndarray:
        """Draws of a parameter block, shape (T, size); ``lam`` gives thresholds."""
        if name == "lam":
            a = self.get("alpha").reshape(len(self), self.n_alpha_sets, -1)
            return alpha_to_lambda(a)
        if name == "H":
            return self.H
        return self.params[:, self.layout[name]]

    def H_at_z(self) -> np.ndarray:
        """H draws at the iterations where Z was stored."""
        idx = np.searchsorted(self.iterations, self.z_iterations)
        return self.H[idx]


@dataclass
class ChainSettings:
    iters: int = 100_000
    burnin: int = 10_000
    thin_z: int = 10
    seed: int = 0


def run_chain(problem: Problem, settings: ChainSettings, chain_id: int = 0,
              rng: np.random.Generator | None = None, init: ChainState | None = None) -> TraceStore:
    """Run one chain. The generator defaults to ``seed + chain_id``."""
    if settings.iters < 0 or settings.burnin < 0:
        raise ValueError("iteration counts must be non-negative")
    if rng is None:
        rng = np.random.default_rng(settings.seed + chain_id)
    data, cfg = problem.data, problem.config
    state = init if init is not None else init_state(problem, rng)
    n_draws = max(settings.iters - settings.burnin, 0)
    trace = TraceStore.allocate(chain_id, cfg, data.n, data.p, n_draws, settings.thin_z)
    window: dict = {}
    interval = cfg.sampler.adapt_interval
    for t in range(settings.iters):
        sweep(state, problem, rng, iteration=t, chain_id=chain_id)
        if t < settings.burnin:
            if interval and (t + 1) % interval == 0:
                _adapt(state, window, cfg.sampler)
            if t + 1 == settings.burnin:
                state.accepts = {"phi2": [0, 0], "alpha": [0, 0]}
            continue
        k = t - settings.burnin
        trace.append(t, state, settings.thin_z > 0 and k % settings.thin_z == 0)
    trace.acceptance = {
        key: (acc / tries if tries else float("nan")) for key, (acc, tries) in state.accepts.items()
    }
    trace.acceptance.update(phi2_sd=state.phi2_sd, alpha_sd=state.alpha_sd)
    log.info("chain %d done: acceptance %s", chain_id, trace.acceptance)
    return trace

