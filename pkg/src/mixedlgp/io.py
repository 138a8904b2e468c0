"""File formats: site/response CSVs, the run configuration, traces and manifests."""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .model import (
    ORDINAL,
    Constraints,
    MetricSpec,
    ModelConfig,
    ObservationSet,
    PriorConfig,
    SamplerSettings,
    ValidationError,
)
from .sampler import ChainSettings, TraceStore, parameter_columns, parameter_layout
from .simulation import SimConfig

FLOAT_FMT = "{:.17g}"
MANIFEST = "manifest.json"


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if np.isnan(x):
        return "NA"
    return FLOAT_FMT.format(x)


def write_rows(path: Path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    return rows[0], rows[1:]


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# -- datasets -------------------------------------------------------------------

def read_sites(path: Path):
    header, rows = read_rows(path)
    if header[:3] != ["site_id", "x", "y"]:
        raise ValidationError(f"{path}: header must start with site_id,x,y")
    ids = [r[0] for r in rows]
    try:
        values = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(len(rows), -1)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return ids, values[:, :2], values[:, 2:], header[3:]


def read_dataset(directory: Path, metrics) -> ObservationSet:
    """Parse ``sites.csv`` and ``responses.csv`` (unvalidated)."""
    directory = Path(directory)
    ids, coords, X, _ = read_sites(directory / "sites.csv")
    header, rows = read_rows(directory / "responses.csv")
    if header[0] != "site_id":
        raise ValidationError("responses.csv must start with a site_id column")
    names = [m.name for m in metrics]
    missing = [n for n in names if n not in header]
    if missing:
        raise ValidationError(f"responses.csv lacks metric columns {missing}")
    cols = [header.index(n) for n in names]
    resp = {}
    for r in rows:
        if r[0] in resp:
            raise ValidationError(f"duplicate site id(s): ['{r[0]}']")
        resp[r[0]] = [float(r[c]) if r[c] not in ("", "NA") else np.nan for c in cols]
    unknown = set(resp) - set(ids)
    if unknown or len(resp) != len(ids):
        raise ValidationError("site ids of sites.csv and responses.csv differ")
    Y = np.array([resp[s] for s in ids], dtype=float).reshape(len(ids), len(names))
    return ObservationSet(ids, coords, X, Y, tuple(metrics))


def write_dataset(directory: Path, obs: ObservationSet, metric_names=None) -> None:
    directory = Path(directory)
    names = metric_names or [m.name for m in obs.metrics]
    covs = [f"cov_{k + 1}" for k in range(obs.X.shape[1])]
    write_rows(directory / "sites.csv", ["site_id", "x", "y"] + covs,
               ([s, *c, *x] for s, c, x in zip(obs.site_ids, obs.coords, obs.X)))
    ordinal = [m.kind == ORDINAL for m in obs.metrics] if obs.metrics else [False] * len(names)
    write_rows(directory / "responses.csv", ["site_id"] + list(names),
               ([s, *[int(v) if o else v for v, o in zip(y, ordinal)]]
                for s, y in zip(obs.site_ids, obs.Y)))


# -- configuration ------------------------------------------------------------------

_SECTIONS = {"metrics", "model", "priors", "sampler", "run", "simulation"}
_MODEL_KEYS = {"categories", "threshold_mode", "reference_ordinal_metric",
               "reference_loading_metric", "fix_phi1"}
_PRIOR_KEYS = {f.name for f in fields(PriorConfig)}
_SAMPLER_KEYS = {"phi2_proposal_sd", "alpha_proposal_sd", "adapt_interval",
                 "target_accept_low", "target_accept_high"}
_RUN_KEYS = {"chains", "iters", "burnin", "thin_z", "seed"}
_SIM_KEYS = {"domain", "n_fit", "m_pred", "categories", "kinds", "beta", "theta", "omega",
             "sigma2", "phi1", "phi2", "lambda", "seed"}


def _numbers(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _matrix(text: str, size: int) -> np.ndarray:
    rows = [r for r in text.split(";") if r.strip()]
    if len(rows) == 1 and len(_numbers(rows[0])) == 1:
        return _numbers(rows[0])[0] * np.eye(size)
    return np.array([_numbers(r) for r in rows])


def _check_keys(section, allowed, name):
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ValidationError(f"unknown key(s) in [{name}]: {unknown}")


@dataclass
class RunConfig:
    """Everything a configuration file can declare."""

    model: ModelConfig | None
    run: ChainSettings = field(default_factory=ChainSettings)
    chains: int = 2
    simulation: SimConfig | None = None
    text: str = ""

    @property
    def sha256(self) -> str:
        return sha256_text(self.text)


def parse_config(text: str) -> RunConfig:
    """Parse the key/value configuration text; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"config: {exc}") from None
    unknown = sorted(set(cp.sections()) - _SECTIONS)
    if unknown:
        raise ValidationError(f"unknown config section(s): {unknown}")

    def get(sec, key, conv, default):
        if not cp.has_section(sec) or key not in cp[sec]:
            return default
        try:
            return conv(cp[sec][key])
        except ValueError as exc:
            raise ValidationError(f"[{sec}] {key}: {exc}") from None

    model_sec = cp["model"] if cp.has_section("model") else {}
    _check_keys(model_sec, _MODEL_KEYS, "model")
    K = get("model", "categories", int, None)

    priors = PriorConfig()
    if cp.has_section("priors"):
        _check_keys(cp["priors"], _PRIOR_KEYS, "priors")
        for key, value in cp["priors"].items():
            if key == "alpha_mean":
                priors.alpha_mean = np.array(_numbers(value))
            elif key == "alpha_cov":
                priors.alpha_cov = _matrix(value, max((K or 2) - 2, 1))
            else:
                setattr(priors, key, get("priors", key, float, None))

    sampler = SamplerSettings()
    if cp.has_section("sampler"):
        _check_keys(cp["sampler"], _SAMPLER_KEYS, "sampler")
        sampler = SamplerSettings(
            phi2_proposal_sd=get("sampler", "phi2_proposal_sd", float, sampler.phi2_proposal_sd),
            alpha_proposal_sd=get("sampler", "alpha_proposal_sd", float, sampler.alpha_proposal_sd),
            adapt_interval=get("sampler", "adapt_interval", int, sampler.adapt_interval),
            target_accept=(get("sampler", "target_accept_low", float, sampler.target_accept[0]),
                           get("sampler", "target_accept_high", float, sampler.target_accept[1])),
        )

    model = None
    if cp.has_section("metrics"):
        if K is None:
            raise ValidationError("[model] categories is required")
        metrics = []
        for name, kind in cp["metrics"].items():
            kind = kind.strip().lower()
            metrics.append(MetricSpec(name, kind, K if kind == ORDINAL else None))
        names = [m.name for m in metrics]
        ordinal = [j for j, m in enumerate(metrics) if m.is_ordinal]
        if not ordinal:
            raise ValidationError("at least one ordinal metric is required")

        def index_of(key):
            name = model_sec.get(key)
            if name is None:
                return ordinal[0]
            if name not in names:
                raise ValidationError(f"[model] {key}: unknown metric {name!r}")
            return names.index(name)

        fix = model_sec.get("fix_phi1", "auto").strip().lower()
        if fix not in ("auto", "true", "false"):
            raise ValidationError("[model] fix_phi1 must be auto, true or false")
        constraints = Constraints(
            reference_ordinal_metric=index_of("reference_ordinal_metric"),
            reference_loading_metric=index_of("reference_loading_metric"),
            fix_phi1=(len(ordinal) == len(metrics)) if fix == "auto" else fix == "true",
            threshold_mode=model_sec.get("threshold_mode", "shared").strip(),
        )
        model = ModelConfig(tuple(metrics), priors, constraints, sampler)

    run = ChainSettings()
    chains = 2
    if cp.has_section("run"):
        _check_keys(cp["run"], _RUN_KEYS, "run")
        run = ChainSettings(iters=get("run", "iters", int, run.iters),
                            burnin=get("run", "burnin", int, run.burnin),
                            thin_z=get("run", "thin_z", int, run.thin_z),
                            seed=get("run", "seed", int, run.seed))
        chains = get("run", "chains", int, chains)

    sim = None
    if cp.has_section("simulation"):
        sec = cp["simulation"]
        _check_keys(sec, _SIM_KEYS, "simulation")
        kw = {}
        for key in ("domain", "phi1", "phi2"):
            if key in sec:
                kw[key] = get("simulation", key, float, None)
        for key in ("n_fit", "m_pred", "seed"):
            if key in sec:
                kw[key] = get("simulation", key, int, None)
        if "categories" in sec:
            kw["K"] = get("simulation", "categories", int, None)
        if "kinds" in sec:
            kw["kinds"] = tuple(sec["kinds"].replace(",", " ").split())
        for key in ("beta", "theta", "omega", "sigma2"):
            if key in sec:
                kw[key] = tuple(_numbers(sec[key]))
        if "lambda" in sec:
            kw["lam_interior"] = tuple(_numbers(sec["lambda"]))
        try:
            sim = SimConfig(**kw)
        except ValueError as exc:
            raise ValidationError(f"[simulation] {exc}") from None
    return RunConfig(model, run, chains, sim, text)


def read_config(path: Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _vec(x) -> str:
    return " ".join(fmt(v) for v in np.ravel(x))


def model_config_text(config: ModelConfig, run: ChainSettings | None = None, chains=2) -> str:
    """Render a model configuration in the text format read by :func:`parse_config`."""
    names = [m.name for m in config.metrics]
    c = config.constraints
    pri = config.priors
    lines = ["[metrics]"] + [f"{m.name} = {m.kind}" for m in config.metrics]
    lines += ["", "[model]", f"categories = {config.K}", f"threshold_mode = {c.threshold_mode}",
              f"reference_ordinal_metric = {names[c.reference_ordinal_metric]}",
              f"reference_loading_metric = {names[c.reference_loading_metric]}",
              f"fix_phi1 = {'true' if c.fix_phi1 else 'false'}", "", "[priors]"]
    for f in fields(PriorConfig):
        v = getattr(pri, f.name)
        if f.name == "alpha_cov":
            lines.append(f"alpha_cov = " + "; ".join(_vec(r) for r in v) if v.size else
                         "alpha_cov = 1")
        elif f.name == "alpha_mean":
            if v.size:
                lines.append(f"alpha_mean = {_vec(v)}")
        else:
            lines.append(f"{f.name} = {fmt(v)}")
    s = config.sampler
    lines += ["", "[sampler]", f"phi2_proposal_sd = {fmt(s.phi2_proposal_sd)}",
              f"alpha_proposal_sd = {fmt(s.alpha_proposal_sd)}",
              f"adapt_interval = {s.adapt_interval}",
              f"target_accept_low = {fmt(s.target_accept[0])}",
              f"target_accept_high = {fmt(s.target_accept[1])}"]
    if run is not None:
        lines += ["", "[run]", f"chains = {chains}", f"iters = {run.iters}",
                  f"burnin = {run.burnin}", f"thin_z = {run.thin_z}", f"seed = {run.seed}"]
    return "\n".join(lines) + "\n"


def sim_config_text(sim: SimConfig) -> str:
    return "\n".join([
        "[simulation]", f"domain = {fmt(sim.domain)}", f"n_fit = {sim.n_fit}",
        f"m_pred = {sim.m_pred}", f"categories = {sim.K}", f"kinds = {' '.join(sim.kinds)}",
        f"beta = {_vec(sim.beta)}", f"theta = {_vec(sim.theta)}", f"omega = {_vec(sim.omega)}",
        f"sigma2 = {_vec(sim.sigma2)}", f"phi1 = {fmt(sim.phi1)}", f"phi2 = {fmt(sim.phi2)}",
        f"lambda = {_vec(sim.lam_interior)}", f"seed = {sim.seed}",
    ]) + "\n"


# -- traces ------------------------------------------------------------------------

def write_trace(directory: Path, trace: TraceStore, config: ModelConfig) -> list[Path]:
    """Write ``trace_chain<c>.csv`` (parameters and H) and ``z_chain<c>.csv``."""
    directory = Path(directory)
    p = trace.layout["beta"].stop
    cols = parameter_columns(config, p)
    n = trace.H.shape[1]
    header = ["iteration"] + [c for c, _ in cols] + [f"H_{i + 1}" for i in range(n)]
    idx = [c for _, c in cols]
    tpath = directory / f"trace_chain{trace.chain_id}.csv"
    write_rows(tpath, header, ([it, *row[idx], *h] for it, row, h in
                               zip(trace.iterations, trace.params, trace.H)))
    zpath = directory / f"z_chain{trace.chain_id}.csv"
    J = trace.Z.shape[2]
    zheader = ["iteration"] + [f"Z_{i + 1}_{j + 1}" for i in range(n) for j in range(J)]
    write_rows(zpath, zheader, ([it, *z.ravel()] for it, z in zip(trace.z_iterations, trace.Z)))
    return [tpath, zpath]


def read_trace(directory: Path, chain_id: int, config: ModelConfig, n: int, p: int) -> TraceStore:
    directory = Path(directory)
    header, rows = read_rows(directory / f"trace_chain{chain_id}.csv")
    cols = parameter_columns(config, p)
    names = [c for c, _ in cols]
    if header[1:1 + len(names)] != names or len(header) != 1 + len(names) + n:
        raise ValidationError(f"trace_chain{chain_id}.csv does not match the configuration")
    values = np.array(rows, dtype=float).reshape(len(rows), len(header))
    layout = parameter_layout(config, p)
    width = max(s.stop for s in layout.values())
    params = np.zeros((len(rows), width))
    # fixed loadings, variances and sill are 1 by construction
    params[:, layout["omega"]] = 1.0
    params[:, layout["sigma2"]] = 1.0
    params[:, layout["phi1"]] = 1.0
    for k, (_, col) in enumerate(cols):
        params[:, col] = values[:, 1 + k]
    H = values[:, 1 + len(names):]
    zheader, zrows = read_rows(directory / f"z_chain{chain_id}.csv")
    J = config.J
    Zv = np.array(zrows, dtype=float).reshape(len(zrows), 1 + n * J)
    return TraceStore(chain_id, layout, config.n_threshold_sets,
                      values[:, 0].astype(int), params, H, Zv[:, 0].astype(int),
                      Zv[:, 1:].reshape(len(zrows), n, J), _size=len(rows), _zsize=len(zrows))


# -- manifest ---------------------------------------------------------------------

def write_manifest(directory: Path, *, config_sha256, settings: ChainSettings, chains: int,
                   inputs: dict[str, str], outputs: list[Path]) -> dict:
    directory = Path(directory)
    manifest = {
        "engine_version": __version__,
        "config_sha256": config_sha256,
        "seed": settings.seed,
        "chains": chains,
        "iters": settings.iters,
        "burnin": settings.burnin,
        "thin_z": settings.thin_z,
        "inputs": inputs,
        "outputs": {Path(p).relative_to(directory).as_posix(): sha256_file(p) for p in sorted(outputs)},
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(directory: Path) -> dict:
    """Read and verify a fit directory's manifest against the files it lists."""
    directory = Path(directory)
    path = directory / MANIFEST
    if not path.exists():
        raise ValidationError(f"{directory}: missing {MANIFEST}")
    manifest = json.loads(path.read_text())
    cfg = directory / "config.ini"
    if not cfg.exists() or sha256_file(cfg) != manifest["config_sha256"]:
        raise ValidationError(f"{directory}: config hash does not match manifest")
    for name, digest in manifest["outputs"].items():
        f = directory / name
        if not f.exists() or sha256_file(f) != digest:
            raise ValidationError(f"{directory}: {name} does not match manifest")
    return manifest
