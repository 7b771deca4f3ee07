"""Command-line front end: ``skewtensor {fit,sample,density,simulate,study,report}``.

Exit status is 0 on success, 2 on invalid input and 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import io
from .distributions import FamilyParams, log_density, sample
from .ecm import FitConfig, ScaleUpdate, fit
from .family import Family
from .simulate import PROFILES, StudySpec, random_truth, run_study, simulate_dataset, summarize
from .tensor import ScaleSet

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
SCALAR_FLAGS = ("nu", "lam", "omega", "gamma", "kappa")


class UsageError(ValueError):
    pass


def _parse_dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in text.replace("x", ",").split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}; use e.g. 4,4,4") from None
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"bad dims {text!r}")
    return dims


def _parse_families(text: str) -> list[Family]:
    if text == "all":
        return list(Family)
    return [Family.parse(t) for t in text.split(",") if t]


def _add_scalars(p: argparse.ArgumentParser) -> None:
    for name in SCALAR_FLAGS:
        p.add_argument(f"--{name}", type=float, default=None, help=f"family scalar {name}")


def _given_scalars(args) -> dict[str, float]:
    return {k: getattr(args, k) for k in SCALAR_FLAGS if getattr(args, k) is not None}


def _load_params_doc(path: str) -> dict[str, Any]:
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict) and "params" in doc and isinstance(doc["params"], dict):
        doc = doc["params"]
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: expected a parameter object")
    return doc


def _build_params(args, dims: tuple[int, ...] | None = None) -> FamilyParams:
    """Parameters from ``--params`` (JSON) and/or ``--family``, ``--dims`` and scalar flags.

    Flags override the JSON; a family switch keeps location, skewness and
    scales and takes scalars from the flags.
    """
    scalars = _given_scalars(args)
    if args.params:
        doc = _load_params_doc(args.params)
        base = FamilyParams.from_dict(doc)
        family = Family.parse(args.family) if args.family else base.family
        if family is base.family:
            kw = {**base.scalars, **scalars}
        else:
            kw = {k: v for k, v in {**doc, **scalars}.items() if k in family.scalar_names}
        a = None if family is Family.NORMAL else base.a
        return FamilyParams(family, base.m, base.scales, a=a, **kw)
    if not args.family:
        raise UsageError("need --family or --params")
    family = Family.parse(args.family)
    dims = dims or getattr(args, "dims", None)
    if not dims:
        raise UsageError("need --dims when no --params file is given")
    a = None if family is Family.NORMAL else np.full(dims, float(getattr(args, "skew", 0.0) or 0.0))
    return FamilyParams(family, np.zeros(dims), ScaleSet.identity(dims), a=a, **scalars)


def _write_text(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_data(args) -> np.ndarray:
    if getattr(args, "ppm", None):
        imgs = [io.read_ppm(p) for p in args.ppm]
        shapes = {im.shape for im in imgs}
        if len(shapes) != 1:
            raise UsageError(f"PPM images differ in size: {sorted(shapes)}")
        return np.stack(imgs)
    if not args.data:
        raise UsageError("need --data (STVD file) or --ppm images")
    return io.read_dataset(args.data)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    x = _load_data(args)
    family_cfg, config = io.load_config(args.config) if args.config else (None, FitConfig())
    if args.family:
        families = _parse_families(args.family)
    elif family_cfg is not None:
        families = [family_cfg]
    else:
        raise UsageError("need --family or a config with 'family'")
    if family_cfg is not None and args.family and families != [family_cfg]:
        raise UsageError(f"--family {args.family} conflicts with config family {family_cfg.value}")
    kw = {}
    if args.scale_update:
        kw["scale_update"] = ScaleUpdate(args.scale_update)
    if args.seed is not None:
        kw["seed"] = args.seed
    if kw:
        config = FitConfig(**{**config.__dict__, **kw})
    reports = []
    for fam in families:
        t0 = time.perf_counter()
        res = fit(x, fam, config)
        reports.append(io.FitReport.from_result(res, time.perf_counter() - t0, config.scale_update))
    if len(reports) == 1:
        text = reports[0].to_json()
    else:
        ranked = sorted(reports, key=lambda r: r.bic)
        doc = {
            "best": ranked[0].family,
            "ranking": [{"family": r.family, "bic": r.bic, "loglik": r.loglik} for r in ranked],
            "fits": [json.loads(r.to_json()) for r in reports],
        }
        text = json.dumps(doc, indent=2)
    _write_text(text + "\n", args.out)
    return EXIT_OK


def cmd_sample(args) -> int:
    params = _build_params(args)
    rng = np.random.default_rng(args.seed)
    x = sample(params, args.n, rng)
    if not args.out:
        raise UsageError("sample needs --out for the STVD dataset")
    io.write_dataset(x, args.out, dims=params.dims)
    return EXIT_OK


def cmd_density(args) -> int:
    x = _load_data(args)
    params = _build_params(args, dims=x.shape[1:])
    vals = np.atleast_1d(log_density(x, params)) if x.shape[0] else np.zeros(0)
    _write_text("".join(format(float(v), ".17g") + "\n" for v in vals), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    family = Family.parse(args.family)
    scalars = _given_scalars(args) or None
    truth = random_truth(family, args.dims, rng, scalars, snr=args.snr, skew_snr=args.skew_snr)
    x = simulate_dataset(truth, args.n, rng)
    if not args.out:
        raise UsageError("simulate needs --out for the STVD dataset")
    io.write_dataset(x, args.out, dims=truth.dims)
    if args.truth_out:
        Path(args.truth_out).write_text(json.dumps(truth.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_study(args) -> int:
    overrides: dict[str, Any] = {"seed": args.seed or 0}
    if args.reps:
        overrides["reps"] = args.reps
    if args.dims:
        overrides["dims_grid"] = [args.dims]
    if args.n_grid:
        overrides["n_grid"] = args.n_grid
    if args.scale_update:
        overrides["scale_update"] = ScaleUpdate(args.scale_update)
    if args.max_iter:
        overrides["max_iter"] = args.max_iter
    if args.fit_families:
        overrides["families"] = tuple(_parse_families(args.fit_families))
    scalars = _given_scalars(args)
    if scalars:
        overrides["true_scalars"] = scalars
    spec = StudySpec.from_profile(args.profile, family_true=args.family or "st", **overrides)
    rows = run_study(spec)
    if not args.out:
        raise UsageError("study needs --out for the CSV table")
    io.write_rows_csv(rows, args.out, exclude=() if args.timing else ("wall_time_sec",))
    if args.svg:
        from .plotting import study_svg

        study_svg(rows, args.svg)
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.data:
        raise UsageError("report needs --data (a study CSV)")
    rows = io.read_rows_csv(args.data)
    lines = ["dims,N,family,metric,mean,median,lo,hi,n"]
    for metric in ("rel_err_mean", "rel_err_kron", "iterations", "bic"):
        for (dims, n, fam), s in sorted(summarize(rows, metric).items()):
            vals = ",".join(format(s[k], ".6g") for k in ("mean", "median", "lo", "hi"))
            lines.append(f"{dims},{n},{fam},{metric},{vals},{s['n']}")
    _write_text("\n".join(lines) + "\n", args.out)
    if args.svg:
        from .plotting import study_svg

        study_svg(rows, args.svg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="skewtensor", description="Skewed tensor-variate distributions.")
    sub = top.add_subparsers(dest="command", required=True)
    fam_help = "family: normal, st, gh, vg, sal, nig"

    p = sub.add_parser("fit", help="fit one or more families to a dataset")
    p.add_argument("--family", help=fam_help + "; a comma list or 'all' ranks by BIC")
    p.add_argument("--data", help="STVD dataset")
    p.add_argument("--ppm", nargs="+", help="binary PPM images forming the dataset")
    p.add_argument("--config", help="JSON fit config")
    p.add_argument("--out", help="JSON report path (default stdout)")
    p.add_argument("--seed", type=int)
    p.add_argument("--scale-update", choices=[s.value for s in ScaleUpdate])
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sample", help="draw a dataset from given parameters")
    p.add_argument("--family", help=fam_help)
    p.add_argument("--params", help="JSON parameters (or a fit report)")
    p.add_argument("--dims", type=_parse_dims, help="tensor dims when no --params (zero location, identity scales)")
    p.add_argument("--skew", type=float, default=0.0, help="constant skewness entry when no --params")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="STVD output")
    _add_scalars(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("density", help="log densities of a dataset, one per line")
    p.add_argument("--family", help=fam_help)
    p.add_argument("--params", help="JSON parameters (or a fit report)")
    p.add_argument("--skew", type=float, default=0.0)
    p.add_argument("--data", help="STVD dataset")
    p.add_argument("--ppm", nargs="+")
    p.add_argument("--out")
    _add_scalars(p)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("simulate", help="simulate a dataset from random true parameters")
    p.add_argument("--family", default="st", help=fam_help)
    p.add_argument("--dims", type=_parse_dims, default=(4, 4, 4))
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--snr", type=float, default=0.5)
    p.add_argument("--skew-snr", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="STVD output")
    p.add_argument("--truth-out", help="JSON file for the true parameters")
    _add_scalars(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("study", help="run a simulation study grid, write CSV")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--family", help="true family (default st)")
    p.add_argument("--fit-families", help="families to fit (comma list or 'all')")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int)
    p.add_argument("--dims", type=_parse_dims, help="single dims cell instead of the profile grid")
    p.add_argument("--n-grid", type=int, nargs="+")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--scale-update", choices=[s.value for s in ScaleUpdate])
    p.add_argument("--out", help="CSV output")
    p.add_argument("--svg", help="optional SVG summary plot")
    p.add_argument("--no-timing", dest="timing", action="store_false", help="omit wall_time_sec for byte-stable output")
    _add_scalars(p)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("report", help="summarize a study CSV")
    p.add_argument("--data", help="study CSV")
    p.add_argument("--out")
    p.add_argument("--svg")
    p.set_defaults(func=cmd_report)
    return top


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    try:
        return args.func(args)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"skewtensor: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"skewtensor: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
