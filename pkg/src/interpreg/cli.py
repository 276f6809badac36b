"""Command-line entry point: ``interpreg {fit,pd,ice,hstat,simulate,compare}``.

Every command writes plain CSV/JSON files plus a ``manifest.json`` recording
the tool version, master seed, resolved options and SHA-256 digests of the
inputs. Reruns with an identical manifest rewrite byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
from scipy import linalg

from . import __version__
from . import interpret as itp
from . import simulate as sim
from .data import DataError, apply_transforms, impute_mean, load_csv, split, standardize
from .models import (ModelConfig, ModelError, evaluate, fit, load_model, n_nonzero, predict,
                     save_model)

log = logging.getLogger("interpreg")

EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 2, 3, 4


class SchemaMismatch(DataError):
    pass


# ------------------------------------------------------------------- helpers

def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out: Path, args, inputs=(), outputs=()) -> None:
    opts = {k: v for k, v in sorted(vars(args).items())
            if k not in ("func", "out", "config", "verbose") and v is not None}
    doc = {
        "tool": "interpreg",
        "version": __version__,
        "command": args.command,
        "seed": args.seed,
        "options": {k: (str(v) if isinstance(v, Path) else v) for k, v in opts.items()},
        "inputs": {Path(p).name: _digest(p) for p in inputs},
        "outputs": sorted(outputs),
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def prepare_dataset(args):
    """load -> transform -> impute -> standardize, exactly as at fit time."""
    d = load_csv(args.data, args.spec)
    d = apply_transforms(d)
    d = impute_mean(d)
    return standardize(d, target=args.standardize_target)


def model_config(args, family=None) -> ModelConfig:
    family = family or args.model_family
    bw = args.bandwidth
    if bw not in (None, "median-heuristic"):
        bw = float(bw)
    return ModelConfig(
        family=family,
        lam=args.lam if args.lam is not None else (1e-3 if family == "krr" else 0.0),
        kernel_bandwidth=bw or "median-heuristic",
        hidden_units=args.hidden_units,
        l1_hidden=args.l1_hidden,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )


def _load_for_interpret(args):
    d = prepare_dataset(args)
    m = load_model(args.model)
    if tuple(d.names) != tuple(m.feature_names):
        raise SchemaMismatch(
            f"model features {list(m.feature_names)} do not match dataset columns {d.names}")
    return m, d


def _columns(args, d, minimum=1):
    cols = args.columns or [c for c in d.names if d.spec(c).ohe_group is None] + list(d.ohe_groups())
    if len(cols) < minimum:
        raise DataError(f"need at least {minimum} column(s)")
    return cols


# ------------------------------------------------------------------- commands

def cmd_fit(args) -> int:
    d = prepare_dataset(args)
    sp = split(d, args.test_fraction, args.seed)
    m = fit(d, sp, model_config(args))
    out = args.out
    save_model(m, out / "model.json")
    rows = []
    for name, idx in (("train", sp.train), ("test", sp.test)):
        met = evaluate(m, d, idx)
        rows.append([name, _fmt(met.mae), _fmt(met.r2), n_nonzero(m) if n_nonzero(m) is not None else ""])
        print(f"{name}: MAE={met.mae:.6g} R2={'undefined' if met.r2 is None else f'{met.r2:.6g}'}")
    _write_rows(out / "metrics.csv", ["split", "mae", "r2", "n_nonzero"], rows)
    _write_manifest(out, args, [args.data, args.spec], ["model.json", "metrics.csv"])
    return 0


def cmd_pd(args) -> int:
    m, d = _load_for_interpret(args)
    outputs = []
    for c in _columns(args, d):
        res = itp.compute_pd(m, d, itp.make_grid(d, c, args.grid))
        name = f"pd_{c}.csv"
        itp.write_pd_csv(res, args.out / name)
        outputs.append(name)
    _write_manifest(args.out, args, [args.data, args.spec, args.model], outputs)
    return 0


def cmd_ice(args) -> int:
    m, d = _load_for_interpret(args)
    outputs = []
    for c in _columns(args, d):
        res = itp.compute_ice(m, d, itp.make_grid(d, c, args.grid))
        name = f"ice_{c}.csv"
        itp.write_ice_csv(res, args.out / name)
        outputs.append(name)
    _write_manifest(args.out, args, [args.data, args.spec, args.model], outputs)
    return 0


def cmd_hstat(args) -> int:
    m, d = _load_for_interpret(args)
    report = itp.h_matrix(m, d, _columns(args, d, 2), max_points=args.max_points,
                          n_null=args.nulls or 0, seed=args.seed)
    itp.write_h_csv(report, args.out / "h_report.csv")
    for j, k, h in report.pairs:
        print(f"H({j}, {k}) = {h:.6g}")
    _write_manifest(args.out, args, [args.data, args.spec, args.model], ["h_report.csv"])
    return 0


# ablation -> (flag holding the sweep values, keyword of the ablation function)
_SWEEP_VALUES = {
    "interaction": ("alphas", "alphas"),
    "size": ("sizes", "sizes"),
    "missing": ("fractions", "fractions"),
    "binning": ("bins", "bin_counts"),
    "nuisance": ("extra", "extra_counts"),
}


def _base_config(name, args) -> sim.SimConfig:
    base = replace(sim.PANEL_DEFAULTS[name], seed=args.seed)
    overrides = {k: getattr(args, k) for k in ("n", "beta0", "beta1", "alpha", "gamma",
                                               "noise_mean", "noise_sd", "noise_param")
                 if getattr(args, k) is not None}
    return replace(base, **overrides)


def cmd_simulate(args) -> int:
    name = args.ablation
    if name not in sim.ABLATIONS:
        raise DataError(f"unknown ablation {name!r}; choose from {sorted(sim.ABLATIONS)}")
    kwargs = {"n_seeds": args.seeds, "test_fraction": args.test_fraction}
    flag, kw = _SWEEP_VALUES[name]
    if getattr(args, flag):
        kwargs[kw] = getattr(args, flag)
    if name == "nuisance" and args.rho is not None:
        kwargs["rho"] = args.rho
    result = sim.ABLATIONS[name](_base_config(name, args), **kwargs)
    fname = f"sweep_{name}.csv"
    sim.write_sweep_csv(result, args.out / fname)
    for p in result.points:
        cells = ", ".join(f"{f}={p.mean(f):.4g}±{p.sd(f):.2g}" for f in result.families)
        print(f"{result.axis}={p.value}: {cells}")
    args.replicate_seeds = [list(s) for s in result.seeds]
    args.base_config = asdict(result.base)
    _write_manifest(args.out, args, [], [fname])
    return 0


def cmd_compare(args) -> int:
    d = prepare_dataset(args)
    sp = split(d, args.test_fraction, args.seed)
    rows, preds = [], {}
    for fam in args.families:
        m = fit(d, sp, model_config(args, fam))
        tr, te = evaluate(m, d, sp.train), evaluate(m, d, sp.test)
        rows.append([fam, _fmt(tr.mae), _fmt(te.mae), _fmt(tr.r2), _fmt(te.r2)])
        preds[fam] = predict(m, d.features[sp.test])
        print(f"{fam}: test MAE={te.mae:.6g} test R2={'undefined' if te.r2 is None else f'{te.r2:.6g}'}")
    _write_rows(args.out / "comparison.csv",
                ["family", "train_mae", "test_mae", "train_r2", "test_r2"], rows)
    fams = list(args.families)
    corr = []
    for a in fams:
        line = [a]
        for b in fams:
            pa, pb = preds[a], preds[b]
            line.append(_fmt(1.0 if np.array_equal(pa, pb) else np.corrcoef(pa, pb)[0, 1]))
        corr.append(line)
    _write_rows(args.out / "prediction_correlation.csv", ["family", *fams], corr)
    _write_manifest(args.out, args, [args.data, args.spec],
                    ["comparison.csv", "prediction_correlation.csv"])
    return 0


# ------------------------------------------------------------------- parser

def _floats(s):
    return [float(v) for v in s.split(",") if v]


def _ints(s):
    return [int(v) for v in s.split(",") if v]


def _strs(s):
    return [v for v in s.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path, default=Path("out"))
    common.add_argument("--config", type=Path, help="JSON file supplying any option by its dest name; explicit flags win")
    common.add_argument("-v", "--verbose", action="count", default=0)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", type=Path, required=True)
    data.add_argument("--spec", type=Path, required=True)
    data.add_argument("--standardize-target", action="store_true")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model-family", default="ols", choices=["ols", "ridge", "lasso", "krr", "mlp"])
    model.add_argument("--lambda", dest="lam", type=float)
    model.add_argument("--bandwidth", default="median-heuristic")
    model.add_argument("--hidden-units", type=int, default=10)
    model.add_argument("--l1-hidden", type=float, default=0.0)
    model.add_argument("--epochs", type=int, default=2000)
    model.add_argument("--learning-rate", type=float, default=0.1)
    model.add_argument("--test-fraction", type=float, default=0.2)

    interp = argparse.ArgumentParser(add_help=False)
    interp.add_argument("--model", type=Path, required=True)
    interp.add_argument("--columns", type=_strs)
    interp.add_argument("--grid", type=int, default=itp.DEFAULT_GRID)

    p = argparse.ArgumentParser(prog="interpreg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", parents=[common, data, model])
    s.set_defaults(func=cmd_fit)
    for name, func in (("pd", cmd_pd), ("ice", cmd_ice)):
        s = sub.add_parser(name, parents=[common, data, interp])
        s.set_defaults(func=func)
    s = sub.add_parser("hstat", parents=[common, data, interp])
    s.add_argument("--nulls", type=int, help="null replicates per pair (>= 20)")
    s.add_argument("--max-points", type=int, help="cap on H evaluation rows")
    s.set_defaults(func=cmd_hstat)

    s = sub.add_parser("simulate", parents=[common])
    s.add_argument("--ablation", required=True)
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--test-fraction", type=float, default=0.2)
    for flag, conv in (("--alphas", _floats), ("--sizes", _ints), ("--fractions", _floats),
                       ("--bins", _ints), ("--extra", _ints)):
        s.add_argument(flag, type=conv)
    s.add_argument("--rho", type=float)
    s.add_argument("--n", type=int)
    for flag in ("--beta0", "--beta1", "--alpha", "--gamma", "--noise-mean", "--noise-sd"):
        s.add_argument(flag, type=float)
    s.add_argument("--noise-param", choices=["sd", "variance"])
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("compare", parents=[common, data, model])
    s.add_argument("--families", type=_strs, default=["ols", "krr", "mlp"])
    s.set_defaults(func=cmd_compare)
    return p


def parse_args(argv=None):
    """Parse ``argv``; keys of a ``--config`` JSON file become defaults that explicit flags override."""
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    if known.config is not None and known.command in subparsers:
        try:
            cfg = json.loads(known.config.read_text(encoding="utf-8"))
        except OSError as exc:
            raise OSError(f"cannot read config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{known.config}: invalid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise DataError(f"{known.config}: config must be a JSON object")
        sub = subparsers[known.command]
        unknown = set(cfg) - {a.dest for a in sub._actions}
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        for a in sub._actions:
            if a.dest in cfg:
                if a.type is not None and isinstance(cfg[a.dest], str):
                    cfg[a.dest] = a.type(cfg[a.dest])
                a.required = False
        sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        # argparse usage errors are validation failures
        return EXIT_VALIDATION if exc.code else 0
    except OSError as exc:
        print(f"interpreg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DataError, ValueError) as exc:
        print(f"interpreg: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except OSError as exc:
        print(f"interpreg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DataError, ValueError, KeyError) as exc:
        print(f"interpreg: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ModelError, ArithmeticError, linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        print(f"interpreg: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
