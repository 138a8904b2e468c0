"""Command-line interface: ``mixedlgp <command> ...``.

Commands
--------
fit        run the chains and write traces, summaries and a manifest
predict    latent field and responses at new sites
rank       posterior ranks of the fitted sites
correlate  correlation of each metric with the latent field
evaluate   standardized squared-error loss per metric
diagnose   potential scale reduction factors
simulate   synthetic dataset with known truth
coverage   score a fit of simulated data against its truth
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .evaluation import loss_table, psrf_table
from .model import ModelConfig, ObservationSet, ValidationError, validate_dataset
from .posterior import (
    Draws,
    correlation_from_traces,
    effective_range,
    posterior_ranks,
    predict_H,
    predict_Y,
    summarize_parameters,
)
from .sampler import ChainError, ChainSettings, Problem, run_chain
from .simulation import SimConfig, Truth, coverage_report, simulate_dataset

log = logging.getLogger("mixedlgp")

WORKERS_ENV = "MIXEDLGP_WORKERS"
MAX_DRAWS = 4000
# stream tags so each post-processing step gets its own reproducible generator
_PREDICT, _EVALUATE, _COUNTS = 1, 2, 3


def _workers(chains: int) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"{WORKERS_ENV} must be an integer") from None
        return max(1, min(n, chains))
    return max(1, min(chains, os.cpu_count() or 1))


def _run_one(job):
    problem, settings, chain_id = job
    return run_chain(problem, settings, chain_id)


def run_chains(problem: Problem, settings: ChainSettings, chains: int) -> list:
    """Run chains in parallel worker processes; chain c uses seed + c."""
    jobs = [(problem, settings, c) for c in range(chains)]
    workers = _workers(chains)
    if workers == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


# -- fit directory ---------------------------------------------------------------------

class FitDir:
    """A completed fit loaded from disk (manifest verified)."""

    def __init__(self, path):
        self.path = Path(path)
        self.manifest = io.load_manifest(self.path)
        self.run = io.read_config(self.path / "config.ini")
        if self.run.model is None:
            raise ValidationError(f"{self.path}: config.ini has no [metrics]")
        self.config: ModelConfig = self.run.model
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self.data = validate_dataset(io.read_dataset(self.path / "data", self.config.metrics),
                                         self.config.metrics)
        self.chains = int(self.manifest["chains"])
        self.seed = int(self.manifest["seed"])
        self._traces = None

    @property
    def traces(self):
        if self._traces is None:
            self._traces = [io.read_trace(self.path, c, self.config, self.data.n, self.data.p)
                            for c in range(self.chains)]
        return self._traces

    def draws(self, thin: int = 0) -> Draws:
        return Draws.from_traces(self.traces, _auto_thin(self.traces, thin))


def _auto_thin(traces, thin: int) -> int:
    if thin > 0:
        return thin
    total = sum(len(t) for t in traces)
    return max(1, -(-total // MAX_DRAWS))


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([seed, tag])


# -- summaries -------------------------------------------------------------------------

def write_parameters(out: Path, draws: Draws, config: ModelConfig) -> Path:
    rows = summarize_parameters(draws, config)
    er = effective_range(draws.phi2)
    rows.append(dict(parameter="effective_range", mean=float(np.mean(er["draws"])),
                     median=er["median"], lo=er["lo"], hi=er["hi"]))
    path = out / "parameters.csv"
    io.write_rows(path, ["parameter", "mean", "median", "lo", "hi"],
                  ([r["parameter"], r["mean"], r["median"], r["lo"], r["hi"]] for r in rows))
    return path


def write_h_summary(out: Path, draws: Draws, data: ObservationSet) -> Path:
    H = draws.H
    q = np.quantile(H, [0.5, 0.025, 0.975], axis=0)
    path = out / "H_summary.csv"
    io.write_rows(path, ["site_id", "mean", "median", "lo", "hi"],
                  zip(data.site_ids, H.mean(axis=0), q[0], q[1], q[2]))
    return path


def write_ranks(out: Path, draws: Draws, data: ObservationSet) -> Path:
    r = posterior_ranks(draws.H)
    path = out / "ranks.csv"
    io.write_rows(path, ["site_id", "median_rank", "lo", "hi", "percentile"],
                  zip(data.site_ids, r.median_rank, r.lo, r.hi, r.percentile))
    return path


def write_weights(out: Path, traces, config: ModelConfig) -> list[Path]:
    corr = correlation_from_traces(traces)
    names = [m.name for m in config.metrics]
    rows = corr.table()
    path = out / "weights.csv"
    keys = ["R_median", "R_lo", "R_hi", "contribution_median", "contribution_lo",
            "contribution_hi", "rank"]
    io.write_rows(path, ["metric"] + keys, ([n] + [r[k] for k in keys] for n, r in zip(names, rows)))
    r2 = corr.R2_M[np.isfinite(corr.R2_M)]
    q = np.quantile(r2, [0.5, 0.025, 0.975]) if r2.size else np.full(3, np.nan)
    path2 = out / "multiple_r2.csv"
    io.write_rows(path2, ["statistic", "median", "lo", "hi"], [["R2_M", *q]])
    return [path, path2]


def write_loss(out: Path, draws: Draws, data: ObservationSet, config: ModelConfig,
               seed: int) -> list[Path]:
    loss, z_hat = loss_table(draws, data, config, _rng(seed, _EVALUATE))
    path = out / "loss.csv"
    io.write_rows(path, ["metric", "median_standardized_loss"], zip([m.name for m in config.metrics], loss))
    path2 = out / "z_hat.csv"
    io.write_rows(path2, ["site_id"] + [m.name for m in config.metrics],
                  ([s, *z] for s, z in zip(data.site_ids, z_hat)))
    return [path, path2]


def write_diagnostics(out: Path, traces, config: ModelConfig) -> Path:
    if len(traces) < 2:
        raise ValidationError("need ≥2 chains")
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        diag = psrf_table(traces, config)
    path = out / "diagnostics.csv"
    io.write_rows(path, ["parameter", "psrf", "flagged"],
                  ([n, r, int(not r < 1.2)] for n, r in diag.rows))
    if diag.flagged:
        log.warning("PSRF >= 1.2 for %s", diag.flagged)
    return path


def write_response_counts(out: Path, draws: Draws, data: ObservationSet, config: ModelConfig,
                          seed: int) -> Path:
    """Observed category counts beside posterior predictive expected counts."""
    pred = predict_Y(draws.H, draws, config, _rng(seed, _COUNTS))
    probs = pred.category_probabilities()
    rows = []
    for j in config.ordinal_idx:
        y = data.Y[:, j].astype(int)
        for k in range(1, config.K + 1):
            rows.append([config.metrics[j].name, k, int(np.sum(y == k)),
                         float(probs[:, j, k - 1].sum())])
    path = out / "response_counts.csv"
    io.write_rows(path, ["metric", "category", "observed", "expected"], rows)
    return path


def write_acceptance(out: Path, traces) -> Path:
    keys = sorted(traces[0].acceptance)
    path = out / "acceptance.csv"
    io.write_rows(path, ["chain"] + keys,
                  ([t.chain_id] + [t.acceptance[k] for k in keys] for t in traces))
    return path


# -- commands ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    run = io.read_config(args.config)
    if run.model is None:
        raise ValidationError(f"{args.config}: no [metrics] section")
    config = run.model
    s = run.run
    settings = ChainSettings(
        iters=s.iters if args.iters is None else args.iters,
        burnin=s.burnin if args.burnin is None else args.burnin,
        thin_z=s.thin_z if args.thin_z is None else args.thin_z,
        seed=s.seed if args.seed is None else args.seed,
    )
    chains = run.chains if args.chains is None else args.chains
    if settings.iters <= 0 or settings.iters <= settings.burnin:
        raise ValidationError("nothing to sample: iters must exceed burnin")
    if settings.burnin < 0 or settings.thin_z < 0:
        raise ValidationError("burnin and thin-z must be non-negative")
    if chains < 1:
        raise ValidationError("need at least 1 chain")

    data_dir = Path(args.data)
    raw = io.read_dataset(data_dir, config.metrics)
    data = validate_dataset(raw, config.metrics)
    out = Path(args.out)
    (out / "data").mkdir(parents=True, exist_ok=True)
    inputs = {}
    for name in ("sites.csv", "responses.csv"):
        shutil.copyfile(data_dir / name, out / "data" / name)
        inputs[name] = io.sha256_file(data_dir / name)
    config_text = io.model_config_text(config, settings, chains)
    (out / "config.ini").write_text(config_text, encoding="utf-8")

    problem = Problem.build(data, config)
    log.info("fitting %d chains x %d iterations on %d sites", chains, settings.iters, data.n)
    traces = run_chains(problem, settings, chains)

    outputs = []
    for t in traces:
        outputs += io.write_trace(out, t, config)
    draws = Draws.from_traces(traces, _auto_thin(traces, 0))
    outputs += [write_parameters(out, draws, config), write_h_summary(out, draws, data),
                write_ranks(out, draws, data), write_acceptance(out, traces),
                write_response_counts(out, draws, data, config, settings.seed)]
    outputs += write_loss(out, draws, data, config, settings.seed)
    if settings.thin_z > 0:
        outputs += write_weights(out, traces, config)
    if chains >= 2:
        outputs.append(write_diagnostics(out, traces, config))
    io.write_manifest(out, config_sha256=io.sha256_text(config_text),
                      settings=settings, chains=chains, inputs=inputs, outputs=outputs)
    print(f"fit written to {out}")
    return 0


def _out(args) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path(args.fit)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _refresh_manifest(fit: FitDir, out: Path, written: list[Path]) -> None:
    """Keep the manifest consistent when summaries are (re)written."""
    if out.resolve() == fit.path.resolve():
        outputs = {p.name for p in written} | set(fit.manifest["outputs"])
        m = fit.manifest
        io.write_manifest(out, config_sha256=m["config_sha256"],
                          settings=ChainSettings(m["iters"], m["burnin"], m["thin_z"], m["seed"]),
                          chains=m["chains"], inputs=m["inputs"],
                          outputs=[out / name for name in outputs])
    else:
        _derived_manifest(fit, out, written)


def _derived_manifest(fit: FitDir, out: Path, written: list[Path]) -> None:
    m = fit.manifest
    inputs = dict(m["inputs"], fit_manifest=io.sha256_file(fit.path / io.MANIFEST))
    io.write_manifest(out, config_sha256=m["config_sha256"],
                      settings=ChainSettings(m["iters"], m["burnin"], m["thin_z"], m["seed"]),
                      chains=m["chains"], inputs=inputs, outputs=written)


def cmd_rank(args) -> int:
    fit = FitDir(args.fit)
    out = _out(args)
    written = [write_ranks(out, fit.draws(args.thin), fit.data)]
    _refresh_manifest(fit, out, written)
    return 0


def cmd_correlate(args) -> int:
    fit = FitDir(args.fit)
    if int(fit.manifest["thin_z"]) <= 0:
        raise ValidationError("fit stored no latent responses (thin-z 0)")
    out = _out(args)
    _refresh_manifest(fit, out, write_weights(out, fit.traces, fit.config))
    return 0


def cmd_evaluate(args) -> int:
    fit = FitDir(args.fit)
    out = _out(args)
    seed = fit.seed if args.seed is None else args.seed
    _refresh_manifest(fit, out, write_loss(out, fit.draws(args.thin), fit.data, fit.config, seed))
    return 0


def cmd_diagnose(args) -> int:
    fit = FitDir(args.fit)
    if fit.chains < 2:
        raise ValidationError("need ≥2 chains")
    out = _out(args)
    _refresh_manifest(fit, out, [write_diagnostics(out, fit.traces, fit.config)])
    return 0


def predict_sites(fit: FitDir, ids, coords, X_raw, thin: int, seed: int):
    draws = fit.draws(thin)
    X_new = fit.data.standardize_new(X_raw)
    rng = _rng(seed, _PREDICT)
    H = predict_H(draws, fit.data.coords, fit.data.X, coords, X_new, rng)
    return predict_Y(H, draws, fit.config, rng)


def write_predictions(out: Path, pred, ids, config: ModelConfig) -> list[Path]:
    q = pred.H_summary()
    p1 = out / "H_predicted.csv"
    io.write_rows(p1, ["site_id", "median", "lo", "hi"], zip(ids, q[0], q[1], q[2]))
    point = pred.point_prediction()
    _, lo, hi = pred.Y_interval()
    probs = pred.category_probabilities()
    K = config.K
    rows = []
    for i, s in enumerate(ids):
        for j, m in enumerate(config.metrics):
            rows.append([s, m.name, point[i, j], lo[i, j], hi[i, j], *probs[i, j]])
    p2 = out / "predictions.csv"
    io.write_rows(p2, ["site_id", "metric", "point", "lo", "hi"]
                  + [f"p_{k}" for k in range(1, K + 1)], rows)
    return [p1, p2]


def cmd_predict(args) -> int:
    fit = FitDir(args.fit)
    ids, coords, X_raw, _ = io.read_sites(Path(args.newdata) / "sites.csv")
    if X_raw.shape[1] != fit.data.p:
        raise ValidationError(f"new sites have {X_raw.shape[1]} covariates, fit used {fit.data.p}")
    if not (np.all(np.isfinite(coords)) and np.all(np.isfinite(X_raw))):
        raise ValidationError("non-finite coordinate or covariate at new sites")
    seed = fit.seed if args.seed is None else args.seed
    pred = predict_sites(fit, ids, coords, X_raw, args.thin, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _derived_manifest(fit, out, write_predictions(out, pred, ids, fit.config))
    return 0


def cmd_simulate(args) -> int:
    run = io.read_config(args.config) if args.config else io.RunConfig(None)
    sim = run.simulation or SimConfig()
    if args.seed is not None:
        sim = SimConfig(**{**sim.__dict__, "seed": args.seed})
    fit, holdout, truth = simulate_dataset(sim)
    out = Path(args.out)
    names = [m.name for m in fit.metrics]
    io.write_dataset(out, fit, names)
    io.write_dataset(out / "holdout", holdout, names)
    config = run.model or sim.model_config()
    if run.model is not None:
        if [m.kind for m in config.metrics] != list(sim.kinds):
            raise ValidationError("[metrics] kinds disagree with [simulation] kinds")
        config = ModelConfig(sim.metric_specs(), config.priors, config.constraints, config.sampler)
    text = io.model_config_text(config, run.run, run.chains) + "\n" + io.sim_config_text(sim)
    (out / "config.ini").write_text(text, encoding="utf-8")
    values = truth.parameter_values(config)
    io.write_rows(out / "truth.csv", ["parameter", "value"], values.items())
    J = len(sim.kinds)
    split = ["fit"] * sim.n_fit + ["holdout"] * sim.m_pred
    ids = fit.site_ids + holdout.site_ids
    header = (["site_id", "split", "x", "y"] + [f"cov_{k + 1}" for k in range(truth.X.shape[1])]
              + ["H"] + [f"Z_{j + 1}" for j in range(J)] + [f"Y_{j + 1}" for j in range(J)])
    io.write_rows(out / "truth_sites.csv", header,
                  ([s, sp, *c, *x, h, *z, *y] for s, sp, c, x, h, z, y in
                   zip(ids, split, truth.coords, truth.X, truth.H, truth.Z, truth.Y)))
    files = [out / n for n in ("sites.csv", "responses.csv", "config.ini", "truth.csv",
                               "truth_sites.csv")]
    files += [out / "holdout" / "sites.csv", out / "holdout" / "responses.csv"]
    io.write_manifest(out, config_sha256=io.sha256_file(out / "config.ini"),
                      settings=ChainSettings(0, 0, 0, sim.seed), chains=0, inputs={},
                      outputs=files)
    print(f"simulated {sim.n_fit + sim.m_pred} sites into {out}")
    return 0


def read_truth(sim_dir: Path) -> Truth:
    run = io.read_config(sim_dir / "config.ini")
    if run.simulation is None:
        raise ValidationError(f"{sim_dir}: config.ini lacks [simulation]")
    cfg = run.simulation
    header, rows = io.read_rows(sim_dir / "truth_sites.csv")
    J = len(cfg.kinds)
    vals = np.array([[float(v) for v in r[2:]] for r in rows])
    p = len(cfg.beta)
    coords, X = vals[:, :2], vals[:, 2:2 + p]
    H = vals[:, 2 + p]
    Z = vals[:, 3 + p:3 + p + J]
    Y = vals[:, 3 + p + J:3 + p + 2 * J]
    return Truth(cfg, coords, X, H, Z, Y)


def cmd_coverage(args) -> int:
    fit = FitDir(args.fit)
    sim_dir = Path(args.sim)
    truth = read_truth(sim_dir)
    ids, coords, X_raw, _ = io.read_sites(sim_dir / "holdout" / "sites.csv")
    seed = fit.seed if args.seed is None else args.seed
    pred = predict_sites(fit, ids, coords, X_raw, args.thin, seed)
    report = coverage_report(truth, fit.draws(args.thin), fit.config, pred)
    out = Path(args.out) if args.out else fit.path / "coverage"
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "coverage.csv", out / "coverage_summary.csv", out / "confusion.csv"]
    io.write_rows(written[0], ["parameter", "truth", "median", "lo", "hi", "captured"],
                  ([r["name"], r["truth"], r["median"], r["lo"], r["hi"], int(r["captured"])]
                   for r in report.parameters))
    io.write_rows(written[1], ["statistic", "value"], [
        ["parameters_captured", report.n_captured],
        ["parameters_total", len(report.parameters)],
        ["h_coverage", report.h_coverage],
        ["exact_rate", report.exact_rate],
        ["within1_rate", report.within1_rate]])
    K = truth.cfg.K
    io.write_rows(written[2], ["predicted"] + [f"true_{k}" for k in range(1, K + 1)],
                  ([k + 1, *row] for k, row in enumerate(report.confusion)))
    _derived_manifest(fit, out, written)
    print(f"captured {report.n_captured}/{len(report.parameters)} parameters; "
          f"H coverage {report.h_coverage:.2f}; exact {report.exact_rate:.3f}; "
          f"within-1 {report.within1_rate:.3f}")
    return 0


# -- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixedlgp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run MCMC chains")
    p.add_argument("--data", required=True, help="directory with sites.csv and responses.csv")
    p.add_argument("--config", required=True)
    p.add_argument("--chains", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--thin-z", type=int, dest="thin_z")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict at new sites")
    p.add_argument("--fit", required=True)
    p.add_argument("--newdata", required=True, help="directory with sites.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--thin", type=int, default=0, help="draw thinning (0 = automatic)")
    p.set_defaults(func=cmd_predict)

    for name, func, doc in (("rank", cmd_rank, "posterior ranks of sites"),
                            ("correlate", cmd_correlate, "metric weights"),
                            ("evaluate", cmd_evaluate, "standardized loss"),
                            ("diagnose", cmd_diagnose, "PSRF diagnostics")):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--fit", required=True)
        p.add_argument("--out", help="output directory (default: the fit directory)")
        if name in ("rank", "evaluate"):
            p.add_argument("--thin", type=int, default=0)
        if name == "evaluate":
            p.add_argument("--seed", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("simulate", help="simulate a dataset with known truth")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("coverage", help="score a fit against simulation truth")
    p.add_argument("--fit", required=True)
    p.add_argument("--sim", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--thin", type=int, default=0)
    p.set_defaults(func=cmd_coverage)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ChainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
