"""Experiment runner: validated JSON configs, pipelines, run records and CSV output.

All randomness derives from the config's master seed through named
substreams.  Environment variables are never read.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import identifiability as ident
from .init_lowdim import InitConfig, InitError, NetConfig, initialize
from .instances import perturbed_means, planted_mixture
from .mixture import (
    DerivedStats,
    MixtureParams,
    load_mixture,
    match_means,
    mixture_from_dict,
    param_distance,
    sample,
    save_mixture,
)
from .numerics import SolveError
from .pca import reduce
from .refine import Known, RefineConfig, RefineError, refine

PIPELINES = ("refine-only", "separation-sweep", "full", "collide", "tournament")


class ConfigError(ValueError):
    """Configuration failed validation (CLI exit code 2)."""


class StageError(RuntimeError):
    """A pipeline stage failed (CLI exit code 3)."""

    def __init__(self, stage: str, message: str, payload: dict | None = None):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.payload = payload or {}


STAGE_ERRORS = (RefineError, SolveError, InitError, ident.TournamentError, ident.CollisionError)


# --------------------------------------------------------------------------
# Config
# --------------------------------------------------------------------------

_TOP_KEYS = {"pipeline", "seed", "mixture", "samples", "refine", "init", "sweep", "collide", "tournament", "out"}
_REFINE_KEYS = {"delta", "n_jacobian", "iterations", "exact_quadrature", "init_offset", "c0", "z", "control_variate"}
_INIT_KEYS = {"spacing", "ball_radius", "eps0", "radius", "kappa", "known"}
_GEN_KEYS = {"k", "d", "c", "weights", "sigmas", "spread"}


@dataclass(frozen=True)
class ExperimentConfig:
    pipeline: str
    seed: int
    raw: dict
    base_dir: Path = Path(".")

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _check_keys(obj, allowed: set, where: str) -> None:
    _require(isinstance(obj, dict), f"{where} must be an object")
    extra = set(obj) - allowed
    _require(not extra, f"unknown keys in {where}: {sorted(extra)}")


def validate_config(raw: dict, base_dir: Path | str = ".", seed: int | None = None) -> ExperimentConfig:
    """Check a config dict and return an :class:`ExperimentConfig`.

    ``seed`` (from the command line) replaces the config's seed.  A seed is
    mandatory.
    """
    base_dir = Path(base_dir)
    _check_keys(raw, _TOP_KEYS, "config")
    raw = json.loads(json.dumps(raw))
    pipeline = raw.get("pipeline")
    _require(pipeline in PIPELINES, f"pipeline must be one of {PIPELINES}, got {pipeline!r}")
    if seed is not None:
        raw["seed"] = seed
    _require("seed" in raw, "a seed is required (config 'seed' or --seed)")
    s = raw["seed"]
    _require(isinstance(s, int) and not isinstance(s, bool) and 0 <= s < 2**64, "seed must be an integer in [0, 2^64)")

    if pipeline in ("refine-only", "separation-sweep", "full"):
        _require("mixture" in raw, "a 'mixture' section is required")
        mix = raw["mixture"]
        _require(isinstance(mix, dict) and len(mix) == 1 and set(mix) <= {"file", "generate", "inline"},
                 "mixture must have exactly one of 'file', 'generate', 'inline'")
        if "file" in mix:
            path = base_dir / mix["file"]
            _require(path.is_file(), f"mixture file not found: {path}")
        elif "generate" in mix:
            gen = mix["generate"]
            _check_keys(gen, _GEN_KEYS, "mixture.generate")
            for key in ("k", "d"):
                _require(isinstance(gen.get(key), int) and gen[key] >= 1, f"mixture.generate.{key} must be a positive integer")
            if pipeline != "separation-sweep":
                _require(isinstance(gen.get("c"), (int, float)) and gen["c"] > 0, "mixture.generate.c must be positive")
            try:
                planted_mixture(gen["k"], gen["d"], gen.get("c", 1.0), int(s), weights=gen.get("weights", "uniform"),
                                sigmas=gen.get("sigmas", "unit"), spread=gen.get("spread", 1.6))
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"mixture.generate: {exc}") from exc
        else:
            try:
                mixture_from_dict(mix["inline"])
            except (ValueError, TypeError, KeyError) as exc:
                raise ConfigError(f"mixture.inline: {exc}") from exc
        _check_keys(raw.get("refine", {}), _REFINE_KEYS, "refine")
        rc = raw.get("refine", {})
        _require(0 < rc.get("delta", 1e-3) < 1, "refine.delta must lie in (0, 1)")
        if not rc.get("exact_quadrature", False):
            n = raw.get("samples", {}).get("n")
            _require(isinstance(n, int) and n >= 2, "samples.n (integer >= 2) is required unless exact_quadrature is set")
        _check_keys(raw.get("samples", {}), {"n"}, "samples")
    if pipeline == "separation-sweep":
        sw = raw.get("sweep")
        _check_keys(sw, {"c", "trials"}, "sweep")
        _require(isinstance(sw.get("c"), list) and sw["c"] and all(isinstance(v, (int, float)) and v > 0 for v in sw["c"]),
                 "sweep.c must be a non-empty list of positive numbers")
        _require("generate" in raw["mixture"], "separation-sweep needs a generated mixture")
    if pipeline == "full":
        _check_keys(raw.get("init", {}), _INIT_KEYS, "init")
    if pipeline == "collide":
        cc = raw.get("collide", {})
        _check_keys(cc, set(ident.CollisionConfig.__dataclass_fields__) - {"seed"} | {"sweep_bins", "per_bin", "emit_matrix"}, "collide")
        try:
            ident.CollisionConfig(seed=int(s), **{k: v for k, v in cc.items() if k not in ("sweep_bins", "per_bin", "emit_matrix")})
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"collide: {exc}") from exc
    if pipeline == "tournament":
        tc = raw.get("tournament")
        _check_keys(tc, {"candidates", "truth", "delta", "m", "n_mc"}, "tournament")
        _require(isinstance(tc.get("candidates"), list) and len(tc["candidates"]) >= 2, "tournament.candidates needs >= 2 entries")
        _require(isinstance(tc.get("delta"), (int, float)) and 0 < tc["delta"] < 1, "tournament.delta must lie in (0, 1)")
        for i, c in enumerate([*tc["candidates"], tc.get("truth")]):
            _require(c is not None, "tournament.truth is required")
            try:
                _load_mixture_ref(c, base_dir)
            except (ValueError, TypeError, KeyError, OSError) as exc:
                raise ConfigError(f"tournament mixture {i}: {exc}") from exc
    return ExperimentConfig(pipeline, int(raw["seed"]), raw, base_dir)


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate_config(raw, path.parent, seed)


def _load_mixture_ref(ref, base_dir: Path) -> MixtureParams:
    if isinstance(ref, str):
        return load_mixture(base_dir / ref)
    if isinstance(ref, dict) and "components" in ref:
        return mixture_from_dict(ref)
    raise ValueError("expected a mixture file path or an inline mixture object")


def build_mixture(cfg: ExperimentConfig, c: float | None = None) -> MixtureParams:
    spec = cfg.raw["mixture"]
    if "file" in spec:
        return load_mixture(cfg.base_dir / spec["file"])
    if "inline" in spec:
        return mixture_from_dict(spec["inline"])
    g = spec["generate"]
    return planted_mixture(g["k"], g["d"], c if c is not None else g["c"], cfg.seed,
                           weights=g.get("weights", "uniform"), sigmas=g.get("sigmas", "unit"),
                           spread=g.get("spread", 1.6))


# --------------------------------------------------------------------------
# Run record
# --------------------------------------------------------------------------

@dataclass
class RunRecord:
    pipeline: str
    config_hash: str
    seed: int
    stage_times: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    streams: list = field(default_factory=list)
    status: str = "ok"

    def add_stream(self, label: str) -> None:
        if label not in self.streams:
            self.streams.append(label)

    def to_dict(self, include_times: bool = True) -> dict:
        out = {
            "pipeline": self.pipeline,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "status": self.status,
            "outputs": self.outputs,
            "metrics": self.metrics,
            "streams": self.streams,
        }
        if include_times:
            out["stage_times"] = self.stage_times
        return out


class _Stage:
    def __init__(self, record: RunRecord, name: str):
        self.record, self.name = record, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.record.stage_times[self.name] = time.perf_counter() - self.t0
        if exc_type is not None and issubclass(exc_type, STAGE_ERRORS):
            payload = {}
            res = getattr(exc, "result", None) or getattr(exc, "report", None)
            if res is not None and hasattr(res, "to_dict"):
                payload = _jsonable(res.to_dict())
            elif isinstance(exc, InitError):
                payload = _jsonable(exc.diagnostics)
            raise StageError(self.name, str(exc), payload) from exc
        return False


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Plot data
# --------------------------------------------------------------------------

PLOT_KINDS = {
    "newton-trace": ["iteration", "max_error", "dominance_margin", "step_norm", "inverse_norm_bound"],
    "collision": ["pair_id", "moment_distance", "delta_param", "tv", "tv_ci"],
    "sweep": ["c", "trial", "final_error", "status"],
    "collision-sweep": ["bin_lo", "bin_hi", "n_pairs", "median_moment_distance", "median_tv"],
    "singular-values": ["index", "singular_value"],
}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_plotdata(record: RunRecord, kind: str, out_dir) -> Path:
    """Write the tidy CSV for ``kind`` and return its path."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {sorted(PLOT_KINDS)}")
    if kind not in record.tables:
        raise ValueError(f"record has no data for {kind!r}")
    path = Path(out_dir) / f"{kind}.csv"
    write_csv(path, PLOT_KINDS[kind], record.tables[kind])
    record.outputs[kind] = path.name
    return path


# --------------------------------------------------------------------------
# Pipelines
# --------------------------------------------------------------------------

def _refine_cfg(cfg: ExperimentConfig, seed: int) -> RefineConfig:
    rc = cfg.section("refine")
    return RefineConfig(
        delta=rc.get("delta", 1e-3),
        n_jacobian=rc.get("n_jacobian", 100_000),
        iterations=rc.get("iterations"),
        exact_quadrature=rc.get("exact_quadrature", False),
        seed=seed,
        c0=rc.get("c0", 1.0),
        z=rc.get("z", 3.0),
        control_variate=rc.get("control_variate", True),
    )


def newton_rows(result, truth: MixtureParams) -> list[dict]:
    errs = []
    for means in result.trajectory:
        e, perm = match_means(means, truth.means)
        errs.append(float((e / truth.sigmas[perm]).max()))
    rep = result.report
    rows = []
    for t, err in enumerate(errs):
        rows.append({
            "iteration": t,
            "max_error": err,
            "dominance_margin": rep.dominance_margins[t - 1] if t > 0 else None,
            "step_norm": rep.step_norms[t - 1] if t > 0 else None,
            "inverse_norm_bound": rep.inverse_norm_bounds[t - 1] if t > 0 else None,
        })
    return rows


def _refine_once(cfg: ExperimentConfig, mix: MixtureParams, seed: int, record: RunRecord, tag: str = ""):
    rc = _refine_cfg(cfg, seed)
    offset = cfg.section("refine").get("init_offset", 0.0)
    z0 = perturbed_means(mix, offset, seed) if offset > 0 else mix.means.copy()
    if rc.exact_quadrature:
        source = mix
    else:
        source = sample(mix, cfg.raw["samples"]["n"], seed, stream="refine-b")
        record.add_stream(f"{seed}:refine-b")
    record.add_stream(f"{seed}:refine:<t>:<i>")
    return refine(source, z0, Known.of(mix), rc), z0


def run_refine_only(cfg: ExperimentConfig, out: Path, record: RunRecord) -> None:
    with _Stage(record, "mixture"):
        mix = build_mixture(cfg)
        save_mixture(mix, out / "mixture.json")
        record.outputs["mixture"] = "mixture.json"
    with _Stage(record, "refine"):
        res, z0 = _refine_once(cfg, mix, cfg.seed, record)
    write_json(out / "initializers.json", {"means": z0})
    write_json(out / "solve_report.json", res.report.to_dict())
    record.outputs.update(initializers="initializers.json", solve_report="solve_report.json")
    record.tables["newton-trace"] = newton_rows(res, mix)
    emit_plotdata(record, "newton-trace", out)
    e, perm = match_means(res.means, mix.means)
    record.metrics.update(
        final_max_error=float((e / mix.sigmas[perm]).max()),
        per_mean_error=(e / mix.sigmas[perm]).tolist(),
        iterations=res.report.n_iterations,
        status=res.report.status,
    )


def run_separation_sweep(cfg: ExperimentConfig, out: Path, record: RunRecord) -> None:
    sw = cfg.raw["sweep"]
    trials = sw.get("trials", 1)
    rows = []
    for c in sw["c"]:
        for trial in range(trials):
            seed = cfg.seed + trial
            sub = ExperimentConfig(cfg.pipeline, seed, cfg.raw, cfg.base_dir)
            mix = build_mixture(sub, c=c)
            t0 = time.perf_counter()
            try:
                res, _ = _refine_once(sub, mix, seed, record)
                e, perm = match_means(res.means, mix.means)
                err, status = float((e / mix.sigmas[perm]).max()), res.report.status
            except (RefineError, SolveError) as exc:
                rep = getattr(exc, "result", None)
                last = rep.trajectory[-1] if rep is not None else None
                if last is not None:
                    e, perm = match_means(last, mix.means)
                    err = float((e / mix.sigmas[perm]).max())
                else:
                    err = math.inf
                status = "failed"
            record.stage_times[f"c={c}:trial={trial}"] = time.perf_counter() - t0
            rows.append({"c": float(c), "trial": trial, "final_error": err, "status": status})
    record.tables["sweep"] = rows
    emit_plotdata(record, "sweep", out)
    med = {}
    for c in sw["c"]:
        med[str(float(c))] = float(np.median([r["final_error"] for r in rows if r["c"] == float(c)]))
    record.metrics["median_final_error_by_c"] = med


def _stats_from(known: dict | None, mix: MixtureParams) -> DerivedStats:
    if not known:
        return mix.stats()
    st = mix.stats()
    return DerivedStats(known.get("w_min", st.w_min), st.w_max, known.get("sigma_min", st.sigma_min),
                        known.get("sigma_max", st.sigma_max), known.get("rho", st.rho), st.rho_sigma, st.rho_w)


def run_full(cfg: ExperimentConfig, out: Path, record: RunRecord) -> None:
    """sample -> PCA (when d > k) -> low-dimensional initializer -> lift -> refine."""
    with _Stage(record, "mixture"):
        mix = build_mixture(cfg)
        save_mixture(mix, out / "mixture.json")
        record.outputs["mixture"] = "mixture.json"
    k, d = mix.k, mix.d
    with _Stage(record, "sample"):
        smp = sample(mix, cfg.raw["samples"]["n"], cfg.seed, stream="full")
        record.add_stream(f"{cfg.seed}:full")
    with _Stage(record, "pca"):
        proj = reduce(smp, k, true_means=mix.means)
        low = proj.projected_samples
        record.tables["singular-values"] = [{"index": i, "singular_value": v} for i, v in enumerate(proj.singular_values)]
        emit_plotdata(record, "singular-values", out)
    ic = cfg.section("init")
    with _Stage(record, "init"):
        low_mix = MixtureParams(mix.weights, proj.projected_means_hint, mix.sigmas)
        stats = _stats_from(ic.get("known"), low_mix)
        net = NetConfig.from_stats(stats, low.shape[1], **{k2: ic[k2] for k2 in ("spacing", "ball_radius", "eps0", "radius") if k2 in ic})
        init = initialize(low, k, stats, InitConfig(net, kappa=ic.get("kappa", "gap")))
        z0 = init.means @ proj.basis.T
        write_json(out / "init_report.json", init.to_dict())
        record.outputs["init_report"] = "init_report.json"
    with _Stage(record, "refine"):
        e0, perm0 = match_means(z0, mix.means)
        known = Known(init.weights / init.weights.sum(), init.sigmas)
        res = refine(smp, z0, known, _refine_cfg(cfg, cfg.seed))
        write_json(out / "solve_report.json", res.report.to_dict())
        record.outputs["solve_report"] = "solve_report.json"
    record.tables["newton-trace"] = newton_rows(res, mix)
    emit_plotdata(record, "newton-trace", out)
    e, perm = match_means(res.means, mix.means)
    fitted = MixtureParams(known.weights, res.means, known.sigmas)
    record.metrics.update(
        projection_error=float(np.max(np.linalg.norm(mix.means - (mix.means @ proj.basis) @ proj.basis.T, axis=1))),
        init_max_error=float((e0 / mix.sigmas[perm0]).max()),
        final_max_error=float((e / mix.sigmas[perm]).max()),
        per_mean_error=(e / mix.sigmas[perm]).tolist(),
        delta_param=param_distance(fitted, mix)[0],
        status=res.report.status,
    )


def run_collide(cfg: ExperimentConfig, out: Path, record: RunRecord) -> None:
    cc = cfg.section("collide")
    bins = cc.pop("sweep_bins", 5)
    per_bin = cc.pop("per_bin", 15)
    emit_matrix = cc.pop("emit_matrix", None)
    ccfg = ident.CollisionConfig(seed=cfg.seed, **cc)
    with _Stage(record, "collide"):
        res = ident.collision_search(ccfg)
    with _Stage(record, "sweep"):
        sweep = ident.collision_sweep(res, n_bins=bins, per_bin=per_bin, tv_method=ccfg.tv_method,
                                      min_delta_param=ccfg.min_delta_param, seed=cfg.seed)
    b = res.best
    write_json(out / "pair_report.json", b.to_dict())
    record.outputs["pair_report"] = "pair_report.json"
    record.tables["collision"] = [{
        "pair_id": f"{b.i}-{b.j}", "moment_distance": b.moment_distance, "delta_param": b.delta_param,
        "tv": b.tv, "tv_ci": 1.96 * b.tv_stderr,
    }]
    record.tables["collision-sweep"] = sweep
    emit_plotdata(record, "collision", out)
    emit_plotdata(record, "collision-sweep", out)
    if emit_matrix if emit_matrix is not None else len(res.mean_sets) <= 500:
        n = len(res.mean_sets)
        write_csv(out / "moment_distances.csv", ["i", "j", "moment_distance"],
                  [{"i": i, "j": j, "moment_distance": res.distance_matrix[i, j]} for i in range(n) for j in range(i + 1, n)])
        record.outputs["moment_distances"] = "moment_distances.csv"
    record.metrics.update(moment_distance=b.moment_distance, lemma_eps=b.lemma_eps, delta_param=b.delta_param,
                          tv=b.tv, median_tv_by_bin=[r["median_tv"] for r in sweep])


def run_tournament(cfg: ExperimentConfig, out: Path, record: RunRecord) -> None:
    tc = cfg.section("tournament")
    cands = [_load_mixture_ref(c, cfg.base_dir) for c in tc["candidates"]]
    truth = _load_mixture_ref(tc["truth"], cfg.base_dir)
    tcfg = ident.TournamentConfig(tuple(cands), tc["delta"], tc.get("m"), tc.get("n_mc"))
    with _Stage(record, "sample"):
        data = sample(truth, tcfg.sample_budget, cfg.seed, stream="tournament-data")
        record.add_stream(f"{cfg.seed}:tournament-data")
    with _Stage(record, "tournament"):
        res = ident.scheffe_select(tcfg, data, seed=cfg.seed)
    tv = None
    if truth.d <= 2:
        tv = ident.tv_distance(cands[res.index], truth, "quadrature").value
    cert = res.to_dict()
    cert.update(m=tcfg.sample_budget, n_mc=tcfg.mc_budget, tv_to_truth=tv)
    write_json(out / "certificate.json", cert)
    record.outputs["certificate"] = "certificate.json"
    record.metrics.update(index=res.index, tv_to_truth=tv, m=tcfg.sample_budget)


RUNNERS = {
    "refine-only": run_refine_only,
    "separation-sweep": run_separation_sweep,
    "full": run_full,
    "collide": run_collide,
    "tournament": run_tournament,
}


def run(cfg: ExperimentConfig, out_dir) -> RunRecord:
    """Execute the configured pipeline, writing every artifact to ``out_dir``.

    ``record.json`` holds everything except wall times, which go to
    ``timings.json``, so reruns of an exact-mode config reproduce
    ``record.json`` byte for byte.  On stage failure the partial record is
    written with status ``failed`` and :class:`StageError` is raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = RunRecord(cfg.pipeline, cfg.hash, cfg.seed)
    write_json(out / "config.json", cfg.raw)
    try:
        RUNNERS[cfg.pipeline](cfg, out, record)
    except StageError as exc:
        record.status = "failed"
        record.metrics["failure"] = {"stage": exc.stage, "message": str(exc), "payload": exc.payload}
        raise
    finally:
        record.outputs["record"] = "record.json"
        write_json(out / "record.json", record.to_dict(include_times=False))
        write_json(out / "timings.json", record.stage_times)
    return record
