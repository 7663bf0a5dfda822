"""Command-line interface.

Subcommands: ``analyze``, ``screen``, ``effects`` (real data in long CSV
format) and ``simulate``, ``power`` (Monte Carlo studies on the synthetic
generator).  Option values resolve as flags > ``--config`` JSON > defaults.

Exit codes: 0 success, 2 invalid input or usage, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .covariance import CorrelationStructure
from .dataset import CsvSchema, load_long_csv, normalize_times
from .effects import default_grid, estimate_effects, fit_joint_model
from .errors import NumericalError, ValidationError
from .permtest import fit_mediator_models
from .pipeline import AnalysisConfig, analyze, choose_basis, screen_dataset
from .simulation import DESK_DELTAS, SimulationConfig, run_estimation_study, run_power_study, run_screening_study
from .splines import DEFAULT_CANDIDATES

log = logging.getLogger("longmed")

THREADS_ENV = "LONGMED_THREADS"

DEFAULTS = {
    "structure": "diagonal",
    "S": None,  # resolved per command
    "b": 0.05,
    "seed": 0,
    "candidates": list(DEFAULT_CANDIDATES),
    "n_folds": 10,
    "weight_mode": "reuse",
    "pvalue_mode": "plain",
    "floor": "half",
    "contrast": [1.0, 0.0],
    "threads": None,
    # data schema
    "subject_col": "id",
    "time_col": "time",
    "outcome_col": "y",
    "exposure_col": "x",
    "mediators": [],
    "mediator_prefix": None,
    "covariates": [],
    "time_domain": None,
    "select": None,
}
DATA_KEYS = set(DEFAULTS)
DEFAULTS |= {
    "scenario": 1,
    "case": 1,
    "n": 100,
    "p": 50,
    "G": None,
    "delta": 1.0,
    "deltas": list(DESK_DELTAS),
    "structures": None,
    "b_levels": None,
    "studies": ["estimation"],
    "full_scale": False,
}
SIM_KEYS = set(DEFAULTS) - DATA_KEYS
COMMON_KEYS = {"structure", "S", "b", "seed", "candidates", "n_folds", "weight_mode", "pvalue_mode", "floor", "threads"}


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(v) for v in text.split(",") if v.strip() != ""]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return parse


def _structure(text):
    try:
        return CorrelationStructure.parse(text).value
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_common(p: argparse.ArgumentParser):
    # default=SUPPRESS keeps unset flags out of the namespace so that the
    # JSON config can fill them.
    S = argparse.SUPPRESS
    p.add_argument("--outdir", required=True, type=Path, help="output directory (created if missing)")
    p.add_argument("--config", type=Path, default=None, help="JSON file with option values")
    p.add_argument("--structure", type=_structure, default=S, help="diagonal, ar1, uniform or power")
    p.add_argument("-S", "--permutations", dest="S", type=int, default=S, help="permutation count")
    p.add_argument("--b", type=float, default=S, help="target FDR level")
    p.add_argument("--seed", type=int, default=S, help="master seed")
    p.add_argument("--candidates", type=_csv_list(int), default=S, help="interior knot counts for CV, e.g. 1,2,3")
    p.add_argument("--threads", type=int, default=S, help=f"worker count (default ${THREADS_ENV} or 1)")
    p.add_argument("--weight-mode", choices=["reuse", "refit"], default=S)
    p.add_argument("--pvalue-mode", choices=["plain", "smoothed"], default=S)
    p.add_argument("--floor", choices=["half", "none"], default=S, help="handling of zero permutation p-values")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_data(p: argparse.ArgumentParser):
    S = argparse.SUPPRESS
    p.add_argument("--input", required=True, type=Path, help="long-format CSV")
    p.add_argument("--subject-col", default=S)
    p.add_argument("--time-col", default=S)
    p.add_argument("--outcome-col", default=S)
    p.add_argument("--exposure-col", default=S)
    p.add_argument("--mediators", type=_csv_list(str), default=S, help="comma-separated mediator columns")
    p.add_argument("--mediator-prefix", default=S, help="take every column with this prefix as a mediator")
    p.add_argument("--covariates", type=_csv_list(str), default=S)
    p.add_argument("--time-domain", type=float, nargs=2, metavar=("LO", "HI"), default=S)
    p.add_argument("--contrast", type=float, nargs=2, metavar=("X", "X_STAR"), default=S)


def _add_sim(p: argparse.ArgumentParser):
    S = argparse.SUPPRESS
    p.add_argument("--scenario", type=int, choices=[1, 2, 3], default=S)
    p.add_argument("--case", type=int, choices=[1, 2, 3, 4], default=S)
    p.add_argument("--n", type=int, default=S, help="subjects per replicate")
    p.add_argument("--p", type=int, default=S, help="mediators per replicate")
    p.add_argument("-G", "--replicates", dest="G", type=int, default=S)
    scale = p.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", dest="full_scale", action="store_false", default=S, help="G=50, S=200 (default)")
    scale.add_argument("--full-scale", dest="full_scale", action="store_true", default=S, help="G=100, S=1000")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="longmed", description="Mediation analysis for sparse longitudinal outcomes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("screen", help="test every mediator and apply FDR screening")
    _add_common(p)
    _add_data(p)

    p = sub.add_parser("analyze", help="screen, then estimate effect curves on the selection")
    _add_common(p)
    _add_data(p)

    p = sub.add_parser("effects", help="effect curves for a given mediator set")
    _add_common(p)
    _add_data(p)
    p.add_argument("--select", type=_csv_list(str), default=argparse.SUPPRESS,
                   help="mediator names or 1-based indices (empty for none)")

    p = sub.add_parser("simulate", help="Monte Carlo estimation and screening studies")
    _add_common(p)
    _add_sim(p)
    p.add_argument("--studies", type=_csv_list(str), default=argparse.SUPPRESS, help="estimation,screening")
    p.add_argument("--b-levels", type=_csv_list(float), default=argparse.SUPPRESS, help="FDR levels for screening")
    p.add_argument("--delta", type=float, default=argparse.SUPPRESS, help="effect scale of mediator 6")

    p = sub.add_parser("power", help="power curve of the permutation test on mediator 6")
    _add_common(p)
    _add_sim(p)
    p.add_argument("--deltas", type=_csv_list(float), default=argparse.SUPPRESS)
    p.add_argument("--structures", type=_csv_list(_structure), default=argparse.SUPPRESS)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, JSON config and explicit flags (in increasing priority)."""
    cfg = dict(DEFAULTS)
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(from_file) - set(DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(from_file)
    flags = {k: v for k, v in vars(args).items() if k in DEFAULTS}
    cfg.update(flags)

    cfg["structure"] = CorrelationStructure.parse(cfg["structure"]).value
    if cfg["threads"] is None:
        cfg["threads"] = int(os.environ.get(THREADS_ENV, "1"))
    if cfg["threads"] < 1:
        raise ValidationError("--threads must be positive")
    if cfg["full_scale"]:
        cfg["G"] = cfg["G"] or 100
        cfg["S"] = cfg["S"] or 1000
    else:
        cfg["G"] = cfg["G"] or 50
        cfg["S"] = cfg["S"] or (1000 if args.command in ("analyze", "screen") else 200)
    if cfg["S"] < 1:
        raise ValidationError("S must be positive")
    if not 0 < cfg["b"] < 1:
        raise ValidationError("b must lie in (0, 1)")
    return cfg


def _analysis_config(cfg: dict) -> AnalysisConfig:
    return AnalysisConfig(
        structure=cfg["structure"],
        S=int(cfg["S"]),
        b=float(cfg["b"]),
        seed=int(cfg["seed"]),
        candidates=tuple(int(c) for c in cfg["candidates"]),
        n_folds=int(cfg["n_folds"]),
        weight_mode=cfg["weight_mode"],
        pvalue_mode=cfg["pvalue_mode"],
        floor=cfg["floor"],
        contrast=tuple(float(c) for c in cfg["contrast"]),
    )


def _sim_config(cfg: dict) -> SimulationConfig:
    return SimulationConfig(
        n=int(cfg["n"]),
        p=int(cfg["p"]),
        scenario=int(cfg["scenario"]),
        case=int(cfg["case"]),
        delta=float(cfg["delta"]),
        G=int(cfg["G"]),
        S=int(cfg["S"]),
        seed=int(cfg["seed"]),
        b=float(cfg["b"]),
        structure=cfg["structure"],
        candidates=tuple(int(c) for c in cfg["candidates"]),
        threads=int(cfg["threads"]),
    )


def _load(cfg: dict, input_path: Path):
    schema = CsvSchema(
        subject=cfg["subject_col"],
        time=cfg["time_col"],
        outcome=cfg["outcome_col"],
        exposure=cfg["exposure_col"],
        mediators=list(cfg["mediators"]),
        covariates=list(cfg["covariates"]),
        mediator_prefix=cfg["mediator_prefix"],
    )
    domain = tuple(cfg["time_domain"]) if cfg["time_domain"] else None
    ds = normalize_times(load_long_csv(input_path, schema, domain))
    if ds.p == 0:
        raise ValidationError("no mediator columns; use --mediators or --mediator-prefix")
    return ds


def write_csv(df: pd.DataFrame, path: Path):
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.12g")


def write_json(obj, path: Path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _summary(ds, res) -> str:
    s = res.screening
    lines = [
        f"subjects: {ds.n}  observations: {int(ds.n_obs.sum())}  mediators: {ds.p}  covariates: {ds.q}",
        f"basis: cubic B-spline, {res.basis.n_interior} interior knots (L={res.basis.dim})",
        f"covariance: {res.cov.structure.label}" + ("" if res.cov.rho is None else f", rho={res.cov.rho:.4g}"),
        f"null proportions: pi00={s.pi00:.4g} pi01={s.pi01:.4g} pi10={s.pi10:.4g}",
        f"FDR level b={s.b:g}: threshold {s.lambda_b:.4g}, {len(s.selected)} mediator(s) selected",
    ]
    for k in s.selected:
        lines.append(f"  {k + 1}\t{ds.mediator_names[k]}\tp_joint={res.table.p_joint[k]:.4g}")
    return "\n".join(lines) + "\n"


def cmd_screen(cfg: dict, args, outdir: Path, effects: bool = False) -> list:
    ds = _load(cfg, args.input)
    acfg = _analysis_config(cfg)
    res = analyze(ds, acfg) if effects else screen_dataset(ds, acfg)
    names = ds.mediator_names
    write_csv(res.table.to_frame(res.screening.selected), outdir / "tests.csv")
    screening = res.screening.to_json(names)
    screening["basis_interior_knots"] = res.basis.n_interior
    screening["structure"] = res.cov.structure.value
    screening["rho"] = res.cov.rho
    write_json(screening, outdir / "screening.json")
    (outdir / "summary.txt").write_text(_summary(ds, res), encoding="utf-8")
    files = ["tests.csv", "screening.json", "summary.txt"]
    if effects:
        write_csv(res.effects.table(default_grid()), outdir / "effects.csv")
        write_json(res.effects.metadata(), outdir / "effects.json")
        files += ["effects.csv", "effects.json"]
    return files


def _resolve_selection(ds, select) -> list:
    out = []
    for item in select or []:
        if item in ds.mediator_names:
            out.append(ds.mediator_names.index(item))
            continue
        try:
            k = int(item) - 1
        except ValueError:
            raise ValidationError(f"unknown mediator {item!r}") from None
        if not 0 <= k < ds.p:
            raise ValidationError(f"mediator index {item} out of range 1..{ds.p}")
        out.append(k)
    return out


def cmd_effects(cfg: dict, args, outdir: Path) -> list:
    ds = _load(cfg, args.input)
    acfg = _analysis_config(cfg)
    selected = _resolve_selection(ds, cfg["select"])
    basis = choose_basis(ds, acfg)
    joint = fit_joint_model(ds, selected, basis, acfg.structure)
    x, x_star = acfg.contrast
    curves = estimate_effects(
        joint, fit_mediator_models(ds, selected), x, x_star,
        names=tuple(ds.mediator_names[k] for k in selected), time_map=ds.time_map,
    )
    write_csv(curves.table(default_grid()), outdir / "effects.csv")
    write_json(curves.metadata(), outdir / "effects.json")
    return ["effects.csv", "effects.json"]


def cmd_simulate(cfg: dict, args, outdir: Path) -> list:
    scfg = _sim_config(cfg)
    studies = set(cfg["studies"])
    unknown = studies - {"estimation", "screening"}
    if unknown:
        raise ValidationError(f"unknown studies: {sorted(unknown)}")
    files = []
    if "estimation" in studies:
        write_csv(run_estimation_study(scfg), outdir / "table1.csv")
        files.append("table1.csv")
    if "screening" in studies:
        study = run_screening_study(scfg, cfg["b_levels"])
        write_csv(study.frequency, outdir / "frequency.csv")
        write_csv(study.fdr, outdir / "fdr.csv")
        files += ["frequency.csv", "fdr.csv"]
    return files


def cmd_power(cfg: dict, args, outdir: Path) -> list:
    scfg = _sim_config(cfg)
    df = run_power_study(scfg, tuple(cfg["deltas"]), cfg["structures"])
    write_csv(df, outdir / "power.csv")
    return ["power.csv"]


COMMANDS = {
    "screen": cmd_screen,
    "analyze": lambda cfg, args, outdir: cmd_screen(cfg, args, outdir, effects=True),
    "effects": cmd_effects,
    "simulate": cmd_simulate,
    "power": cmd_power,
}


def _manifest(command, cfg, files, started, elapsed) -> dict:
    return {
        "command": command,
        "config": cfg,
        "seed": cfg["seed"],
        "outputs": files,
        "versions": {
            "longmed": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
        "started": started,
        "wall_clock_seconds": round(elapsed, 3),
    }


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    try:
        cfg = resolve_config(args)
        if cfg["full_scale"] and args.command in ("simulate", "power"):
            log.warning("full-scale run: expect hours of compute on a single core")
        outdir = args.outdir
        outdir.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](cfg, args, outdir)
        relevant = (SIM_KEYS if args.command in ("simulate", "power") else DATA_KEYS) | COMMON_KEYS
        manifest_cfg = {k: v for k, v in cfg.items() if k in relevant}
        if getattr(args, "input", None) is not None:
            manifest_cfg["input"] = str(args.input)
        write_json(_manifest(args.command, manifest_cfg, files, started, time.perf_counter() - t0), outdir / "manifest.json")
    except ValidationError as exc:
        print(f"longmed: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"longmed: numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
