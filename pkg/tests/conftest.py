import numpy as np
import pytest

from mixedlgp.model import CONTINUOUS, ORDINAL, MetricSpec, ModelConfig, ObservationSet, validate_dataset
from mixedlgp.posterior import Draws
from mixedlgp.sampler import Problem, parameter_layout

LAM_TRUE = np.array([-np.inf, 0.0, 1.81, 3.26, 4.71, np.inf])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(n=12, kinds=(ORDINAL, ORDINAL), K=3, p=1, seed=0):
    """Small random dataset where every category of every ordinal metric appears."""
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0, 1, (n, 2))
    X = rng.standard_normal((n, p))
    Y = np.empty((n, len(kinds)))
    for j, kind in enumerate(kinds):
        if kind == ORDINAL:
            Y[:, j] = np.resize(np.arange(1, K + 1), n)
            rng.shuffle(Y[:, j])
        else:
            Y[:, j] = rng.normal(2.0, 1.0, n)
    specs = tuple(MetricSpec(f"m{j + 1}", k, K if k == ORDINAL else None)
                  for j, k in enumerate(kinds))
    raw = ObservationSet([f"s{i}" for i in range(n)], coords, X, Y, specs)
    return validate_dataset(raw, specs)


def make_problem(n=12, kinds=(ORDINAL, ORDINAL), K=3, p=1, seed=0, **config_kw):
    data = make_dataset(n, kinds, K, p, seed)
    config = ModelConfig(data.metrics, **config_kw)
    return Problem.build(data, config)


def fake_draws(config, T, n, p=1, beta=0.0, theta=None, omega=None, sigma2=None, phi1=1.0,
               phi2=3.0, alpha=None, H=None):
    """Draws object with constant parameter values."""
    layout = parameter_layout(config, p)
    width = max(s.stop for s in layout.values())
    params = np.zeros((T, width))
    params[:, layout["beta"]] = beta
    params[:, layout["theta"]] = 0.0 if theta is None else theta
    params[:, layout["omega"]] = 1.0 if omega is None else omega
    params[:, layout["sigma2"]] = 1.0 if sigma2 is None else sigma2
    params[:, layout["phi1"]] = np.reshape(phi1, (-1, 1))
    params[:, layout["phi2"]] = np.reshape(phi2, (-1, 1))
    params[:, layout["alpha"]] = 0.0 if alpha is None else alpha
    if H is None:
        H = np.zeros((T, n))
    return Draws(params, np.asarray(H, float), layout, config.n_threshold_sets, np.zeros(T, int), p)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, ok, detail):
    """Register one acceptance verdict for the end-of-run summary."""
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


__all__ = ["LAM_TRUE", "make_dataset", "make_problem", "CONTINUOUS", "ORDINAL", "fake_draws",
           "record_criterion"]
