"""Command-line entry point.

Exit codes: 0 success, 2 validation failure, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .harness import ConfigError, StageError, write_csv, write_json
from .init_lowdim import InitConfig, InitError, NetConfig, initialize
from .mixture import DerivedStats, MixtureParams, load_mixture, match_means, sample
from .pca import reduce
from .refine import Known, RefineConfig, RefineError, refine

EXIT_OK, EXIT_INVALID, EXIT_STAGE = 0, 2, 3


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def _common(p: argparse.ArgumentParser, config_help: str) -> None:
    p.add_argument("--config", type=Path, help=config_help)
    p.add_argument("--out", type=Path, help="output directory (created if missing)")
    p.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="artifact", description="Spherical Gaussian mixture experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    flag_cfg = "JSON object supplying defaults for this command's flags"

    p = sub.add_parser("sample", help="draw samples from a mixture file")
    _common(p, flag_cfg)
    p.add_argument("--mixture", type=Path)
    p.add_argument("--n", type=int)

    p = sub.add_parser("pca", help="project samples onto the top-k subspace")
    _common(p, flag_cfg)
    p.add_argument("--samples", type=Path)
    p.add_argument("--k", type=int)

    p = sub.add_parser("init", help="low-dimensional initializer")
    _common(p, flag_cfg)
    p.add_argument("--samples", help="samples .npy file, or 'generate' to draw from --mixture")
    p.add_argument("--mixture", type=Path, help="mixture file (for 'generate', --exact and known bounds)")
    p.add_argument("--n", type=int, help="sample count for 'generate'")
    p.add_argument("--k", type=int)
    p.add_argument("--spacing", type=float)
    p.add_argument("--ball-radius", type=float)
    p.add_argument("--eps0", type=float)
    p.add_argument("--radius", type=float, help="net radius (default 2 rho)")
    p.add_argument("--kappa", help="'diameter', 'gap' or a positive number")
    p.add_argument("--w-min", type=float)
    p.add_argument("--sigma-min", type=float)
    p.add_argument("--sigma-max", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--exact", action="store_true", default=None, help="use the mixture's exact density")

    p = sub.add_parser("refine", help="Newton refinement of initial means")
    _common(p, flag_cfg)
    p.add_argument("--mixture", type=Path)
    p.add_argument("--init", type=Path, help="JSON with a 'means' list (an init report works)")
    p.add_argument("--delta", type=float)
    p.add_argument("--nb", type=int, help="samples for b")
    p.add_argument("--nj", type=int, help="samples per F and F' evaluation")
    p.add_argument("--iterations", type=int)
    p.add_argument("--exact-quadrature", action="store_true", default=None)

    p = sub.add_parser("collide", help="moment-collision search")
    _common(p, "experiment config (pipeline 'collide')")
    p.add_argument("--n-mixtures", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--R", type=int)
    p.add_argument("--min-delta-param", type=float)

    p = sub.add_parser("tournament", help="Scheffé tournament")
    _common(p, "experiment config (pipeline 'tournament')")

    p = sub.add_parser("run", help="run an experiment config")
    _common(p, "experiment config")
    return ap


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------

def _merge_flags(args: argparse.Namespace, names: list[str]) -> dict:
    """Flag values, falling back to the --config JSON object."""
    cfg = {}
    if args.config is not None:
        try:
            cfg = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(cfg) - set(names) - {"seed", "out"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for n in names + ["seed", "out"]:
        v = getattr(args, n, None)
        out[n] = v if v is not None else cfg.get(n)
    if out["seed"] is None:
        raise ConfigError("a seed is required (--seed or config 'seed')")
    if out["out"] is None:
        raise ConfigError("an output directory is required (--out or config 'out')")
    out["out"] = Path(out["out"])
    return out


def _need(opts: dict, *names: str) -> None:
    missing = [n for n in names if opts.get(n) is None]
    if missing:
        raise ConfigError("missing required options: " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _load_mix(path) -> MixtureParams:
    try:
        return load_mixture(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot load mixture {path}: {exc}") from exc


def _load_points(path) -> np.ndarray:
    try:
        pts = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load samples {path}: {exc}") from exc
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ConfigError("samples must be a 2-d array")
    return pts


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_sample(args) -> int:
    o = _merge_flags(args, ["mixture", "n"])
    _need(o, "mixture", "n")
    mix = _load_mix(o["mixture"])
    if o["n"] < 1:
        raise ConfigError("--n must be positive")
    batch = sample(mix, int(o["n"]), o["seed"])
    o["out"].mkdir(parents=True, exist_ok=True)
    np.save(o["out"] / "samples.npy", batch.points)
    write_json(o["out"] / "samples.json", {"n": int(o["n"]), "seed": o["seed"], "streams": list(batch.streams),
                                           "labels_file": "labels.npy"})
    np.save(o["out"] / "labels.npy", batch.component_labels)
    return EXIT_OK


def cmd_pca(args) -> int:
    o = _merge_flags(args, ["samples", "k"])
    _need(o, "samples", "k")
    pts = _load_points(o["samples"])
    try:
        rep = reduce(pts, int(o["k"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    o["out"].mkdir(parents=True, exist_ok=True)
    np.save(o["out"] / "projected.npy", rep.projected_samples)
    write_json(o["out"] / "pca.json", {"basis": rep.basis, "singular_values": rep.singular_values, "k": rep.k, "d": rep.d})
    write_csv(o["out"] / "singular-values.csv", ["index", "singular_value"],
              [{"index": i, "singular_value": v} for i, v in enumerate(rep.singular_values)])
    return EXIT_OK


def cmd_init(args) -> int:
    names = ["samples", "mixture", "n", "k", "spacing", "ball_radius", "eps0", "radius", "kappa",
             "w_min", "sigma_min", "sigma_max", "rho", "exact"]
    o = _merge_flags(args, names)
    _need(o, "k", "spacing", "ball_radius")
    mix = _load_mix(o["mixture"]) if o["mixture"] is not None else None
    if o["exact"]:
        if mix is None:
            raise ConfigError("--exact needs --mixture")
        source = mix
    elif o["samples"] == "generate":
        _need(o, "mixture", "n")
        source = sample(mix, int(o["n"]), o["seed"], stream="init").points
    else:
        _need(o, "samples")
        source = _load_points(o["samples"])
    d = source.d if isinstance(source, MixtureParams) else source.shape[1]
    if mix is not None:
        st = mix.stats()
        bounds = dict(w_min=st.w_min, sigma_min=st.sigma_min, sigma_max=st.sigma_max, rho=st.rho)
    else:
        bounds = {}
    for key in ("w_min", "sigma_min", "sigma_max", "rho"):
        if o[key] is not None:
            bounds[key] = o[key]
    _need(bounds, "w_min", "sigma_min", "sigma_max", "rho")
    stats = DerivedStats(bounds["w_min"], bounds["w_min"], bounds["sigma_min"], bounds["sigma_max"], bounds["rho"],
                         bounds["sigma_max"] / bounds["sigma_min"], 1.0)
    kappa = o["kappa"] or "diameter"
    if kappa not in ("diameter", "gap"):
        try:
            kappa = float(kappa)
        except ValueError as exc:
            raise ConfigError("--kappa must be 'diameter', 'gap' or a number") from exc
    over = {"spacing": o["spacing"], "ball_radius": o["ball_radius"]}
    for key in ("eps0", "radius"):
        if o[key] is not None:
            over[key] = o[key]
    try:
        icfg = InitConfig(NetConfig.from_stats(stats, d, **over), kappa=kappa)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    o["out"].mkdir(parents=True, exist_ok=True)
    try:
        rep = initialize(source, int(o["k"]), stats, icfg)
    except InitError as exc:
        write_json(o["out"] / "init_failure.json", {"message": str(exc), **exc.diagnostics})
        raise StageError("init", str(exc)) from exc
    out = rep.to_dict()
    if mix is not None and mix.k == rep.means.shape[0] and mix.d == d:
        e, _ = match_means(rep.means, mix.means)
        out["max_mean_error"] = float(e.max())
    write_json(o["out"] / "init.json", out)
    return EXIT_OK


def cmd_refine(args) -> int:
    o = _merge_flags(args, ["mixture", "init", "delta", "nb", "nj", "iterations", "exact_quadrature"])
    _need(o, "mixture", "init", "delta")
    mix = _load_mix(o["mixture"])
    try:
        z0 = np.asarray(json.loads(Path(o["init"]).read_text())["means"], dtype=float)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot read initializers {o['init']}: {exc}") from exc
    if z0.shape != mix.means.shape:
        raise ConfigError(f"initializers have shape {z0.shape}, mixture means {mix.means.shape}")
    exact = bool(o["exact_quadrature"])
    try:
        rcfg = RefineConfig(delta=o["delta"], n_jacobian=o["nj"] or 100_000, iterations=o["iterations"],
                            exact_quadrature=exact, seed=o["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if exact:
        if mix.d != 1:
            raise ConfigError("--exact-quadrature is available only for d = 1")
        source = mix
    else:
        _need(o, "nb")
        source = sample(mix, int(o["nb"]), o["seed"], stream="refine-b")
    o["out"].mkdir(parents=True, exist_ok=True)
    try:
        res = refine(source, z0, Known.of(mix), rcfg)
    except RefineError as exc:
        if exc.result is not None:
            write_json(o["out"] / "solve_report.json", exc.result.report.to_dict())
        raise StageError("refine", str(exc)) from exc
    write_json(o["out"] / "solve_report.json", res.report.to_dict())
    write_json(o["out"] / "refined.json", {"means": res.means, "status": res.report.status})
    rec = harness.RunRecord("refine", "", o["seed"])
    rec.tables["newton-trace"] = harness.newton_rows(res, mix)
    harness.emit_plotdata(rec, "newton-trace", o["out"])
    return EXIT_OK


def _experiment(args, pipeline: str | None) -> int:
    if args.config is None:
        raise ConfigError("--config is required")
    cfg = harness.load_config(args.config, seed=args.seed)
    if pipeline is not None and cfg.pipeline != pipeline:
        raise ConfigError(f"config pipeline is {cfg.pipeline!r}, expected {pipeline!r}")
    out = args.out or (Path(cfg.raw["out"]) if "out" in cfg.raw else None)
    if out is None:
        raise ConfigError("an output directory is required (--out or config 'out')")
    harness.run(cfg, out)
    return EXIT_OK


def cmd_collide(args) -> int:
    if args.config is not None:
        overrides = {k: getattr(args, a) for k, a in
                     [("n_mixtures", "n_mixtures"), ("k", "k"), ("d", "d"), ("R", "R"), ("min_delta_param", "min_delta_param")]
                     if getattr(args, a) is not None}
        if overrides:
            raise ConfigError("pass collision settings either in --config or as flags, not both")
        return _experiment(args, "collide")
    if args.seed is None:
        raise ConfigError("a seed is required (--seed)")
    if args.out is None:
        raise ConfigError("an output directory is required (--out)")
    section = {k: v for k, v in [("n_mixtures", args.n_mixtures), ("k", args.k), ("d", args.d), ("R", args.R),
                                 ("min_delta_param", args.min_delta_param)] if v is not None}
    cfg = harness.validate_config({"pipeline": "collide", "seed": args.seed, "collide": section})
    harness.run(cfg, args.out)
    return EXIT_OK


COMMANDS = {
    "sample": cmd_sample,
    "pca": cmd_pca,
    "init": cmd_init,
    "refine": cmd_refine,
    "collide": cmd_collide,
    "tournament": lambda a: _experiment(a, "tournament"),
    "run": lambda a: _experiment(a, None),
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
