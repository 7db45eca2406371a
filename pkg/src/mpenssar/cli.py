"""Command-line entry points: simulate, fit, predict, evaluate, constants.

Every command writes ``manifest.json`` into its output directory before any
result (status ``running``) and rewrites it at the end (status ``complete``).

Exit codes: 0 success, 2 configuration or contract error, 3 numerical
error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
import time
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from .bundle import parse_matrix, read_bundle, write_bundle, write_matrix_csv
from .errors import ConfigError, ContractError, NumericalError
from .estimator import load_fit, save_fit
from .experiment import (
    LAMBDA_GRID,
    METHODS,
    SplitContext,
    make_split,
    predict_test,
    rmse,
    run_method,
)
from .selection import NestedSignatures
from .simulation import DESIGNS, SIGMA_DEFAULT, SimConfig, builtin_R, simulate
from .spatial import SplitPlan
from .theory import format_report, misselection_bound, theory_constants

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class Manifest:
    def __init__(self, out: FsPath, command: str, config: dict, seeds: dict):
        self.path = out / "manifest.json"
        self.t0 = time.time()
        self.data = {
            "command": command,
            "version": __version__,
            "status": "running",
            "config": config,
            "seeds": seeds,
            "artifacts": {},
            "wall_clock_seconds": None,
        }
        out.mkdir(parents=True, exist_ok=True)
        self.write()

    def add(self, role: str, path) -> None:
        self.data["artifacts"][role] = str(path)

    def write(self) -> None:
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=1, default=_jsonable)

    def finish(self, **extra) -> None:
        self.data.update(extra)
        self.data["status"] = "complete"
        self.data["wall_clock_seconds"] = round(time.time() - self.t0, 3)
        self.write()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _read_config(path: str | None, section: str) -> dict[str, str]:
    if path is None:
        return {}
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc)) from exc
    if not cp.has_section(section):
        raise ConfigError(section, f"section [{section}] missing from {path}")
    return dict(cp[section])


def _typed(cfg: dict, key: str, conv, default):
    if key not in cfg:
        return default
    try:
        return conv(cfg[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"cannot parse {cfg[key]!r}: {exc}") from exc


def _matrix_or_name(text: str) -> np.ndarray:
    text = text.strip()
    return builtin_R(text) if text in ("weak", "moderate", "high") else parse_matrix(text)


def _sim_config(cfg: dict, seed: int) -> tuple[SimConfig, int]:
    design = cfg.get("design", "sig2")
    if design not in DESIGNS:
        raise ConfigError("design", f"must be one of {', '.join(DESIGNS)}")
    try:
        R = _matrix_or_name(cfg.get("R", "weak"))
    except ContractError as exc:
        raise ConfigError("R", str(exc)) from exc
    except ValueError as exc:
        raise ConfigError("R", str(exc)) from exc
    Sigma = _typed(cfg, "Sigma", parse_matrix, SIGMA_DEFAULT.copy())
    Q = _typed(cfg, "Q", int, R.shape[0])
    kw = dict(
        P=_typed(cfg, "P", int, 2),
        Q=Q,
        n=_typed(cfg, "n", int, 200),
        grid_side=_typed(cfg, "grid_side", int, 60),
        design=design,
        R=R,
        Sigma=Sigma,
        n_times=_typed(cfg, "n_times", int, 101),
        k_neighbors=_typed(cfg, "k_neighbors", int, 8),
        normalize=_typed(cfg, "normalize", lambda s: s.lower() in ("1", "true", "yes"), True),
        seed=seed,
    )
    reps = _typed(cfg, "reps", int, 1)
    if reps < 1:
        raise ConfigError("reps", "must be >= 1")
    # name the offending field for the common validation failures
    Sigma = np.asarray(Sigma)
    pd = (Sigma.shape == (Q, Q) and np.allclose(Sigma, Sigma.T)
          and np.linalg.eigvalsh(Sigma).min() > 0)
    if not pd:
        raise ConfigError("Sigma", f"must be a symmetric positive definite {Q}x{Q} matrix")
    if R.shape != (Q, Q) or np.any(np.abs(R) > 1):
        raise ConfigError("R", f"must be a {Q}x{Q} matrix with entries in [-1, 1]")
    try:
        return SimConfig(**kw), reps
    except ContractError as exc:
        raise ConfigError("simulation", str(exc)) from exc


def cmd_simulate(args) -> int:
    cfg = _read_config(args.config, "simulation")
    base_seed = args.seed if args.seed is not None else _typed(cfg, "seed", int, 0)
    sim, reps = _sim_config(cfg, base_seed)
    if args.reps is not None:
        reps = args.reps
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(base_seed).spawn(reps)] \
        if reps > 1 else [base_seed]
    out = FsPath(args.out)
    resolved = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in vars(sim).items() if k != "seed"}
    resolved["reps"] = reps
    man = Manifest(out, "simulate", resolved, {"base": base_seed, "replications": seeds})
    for r, seed in enumerate(seeds):
        sim.seed = seed
        data = simulate(sim)
        target = out if reps == 1 else out / f"rep_{r + 1:03d}"
        for role, p in write_bundle(target, data).items():
            man.add(role if reps == 1 else f"rep_{r + 1:03d}/{role}", p)
        man.write()
    man.finish()
    return EXIT_OK


def _lambda_grid(args) -> tuple:
    return (float(args.lam),) if args.lam is not None else LAMBDA_GRID


_FIT_DEFAULTS = {"method": ("method", str, "mpenssar"), "split": ("split", str, "ov"),
                 "m": ("m", int, None), "lam": ("lambda", float, None),
                 "kpen": ("kpen", str, "auto"), "kappa": ("kappa", float, 0.4),
                 "m_max": ("m_max", int, None), "seed": ("seed", int, 0)}


def _fill_fit_args(args) -> None:
    cfg = _read_config(args.config, "fit")
    for attr, (key, conv, default) in _FIT_DEFAULTS.items():
        if getattr(args, attr) is None:
            setattr(args, attr, _typed(cfg, key, conv, default))
    if args.split not in ("ov", "sv"):
        raise ConfigError("split", "must be ov or sv")


def cmd_fit(args) -> int:
    _fill_fit_args(args)
    if args.method not in METHODS:
        raise ConfigError("method", f"must be one of {', '.join(METHODS)}")
    out = FsPath(args.out)
    kpen = None if args.kpen in (None, "auto") else _typed({"kpen": args.kpen}, "kpen", float, None)
    config = {"data": str(args.data), "method": args.method, "split": args.split,
              "m": args.m, "lambda": args.lam, "kpen": args.kpen, "kappa": args.kappa,
              "m_max": args.m_max}
    man = Manifest(out, "fit", config, {"split": args.seed})
    b = read_bundle(args.data)
    plan = make_split(args.split, b.n, b.coords, seed=args.seed)
    with open(out / "split.json", "w", encoding="utf-8") as fh:
        json.dump(plan.to_dict(), fh)
    man.add("split", out / "split.json")
    # a fixed order needs no higher levels
    cache = NestedSignatures(b.paths, args.m_max or args.m)
    ctx = SplitContext(cache, b.Y, b.W, plan)
    kw = {"lam_grid": _lambda_grid(args)}
    if args.method == "mpenssar":
        kw.update(kappa=args.kappa, K_pen=kpen, m=args.m)
    elif args.method == "penssar":
        kw["orders"] = None if args.m is None else [args.m]
    else:
        kw = {"orders": None if args.m is None else [args.m]}
    res = run_method(args.method, cache, b.Y, b.W, plan, context=ctx, **kw)
    names = []
    if args.method == "mpenssar":
        f = res.fits[0]
        names.append("fit.json")
        crit = f.extra.pop("criterion", None)
        if crit is not None:
            with open(out / "criterion.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["m", "L_hat", "pen", "criterion"])
                for row in crit:
                    w.writerow([row[0], *[repr(float(v)) for v in row[1:]]])
            man.add("criterion", out / "criterion.csv")
        save_fit(out / "fit.json", f)
    else:
        for q, f in enumerate(res.fits):
            names.append(f"fit_q{q + 1}.json")
            save_fit(out / names[-1], f)
    for nm in names:
        man.add(nm, out / nm)
    man.finish(selected=res.selected, validation_rmse=res.val_rmse, fits=names)
    return EXIT_OK


def _load_fits(fit_dir: FsPath):
    man_path = fit_dir / "manifest.json"
    with open(man_path, encoding="utf-8") as fh:
        man = json.load(fh)
    if man.get("status") != "complete":
        raise ContractError(f"{fit_dir} holds an incomplete fit run")
    fits = [load_fit(fit_dir / nm) for nm in man["fits"]]
    with open(fit_dir / "split.json", encoding="utf-8") as fh:
        plan = SplitPlan.from_dict(json.load(fh))
    return man, fits, plan


def _context_for(b, fits, plan) -> SplitContext:
    if plan.n != b.n:
        raise ContractError(f"split covers {plan.n} units, bundle has {b.n}")
    m_max = max(f.m for f in fits)
    return SplitContext(NestedSignatures(b.paths, m_max), b.Y, b.W, plan)


def cmd_predict(args) -> int:
    out = FsPath(args.out)
    man = Manifest(out, "predict", {"data": str(args.data), "fit": str(args.fit)}, {})
    b = read_bundle(args.data)
    _, fits, plan = _load_fits(FsPath(args.fit))
    pred = predict_test(_context_for(b, fits, plan), fits)
    write_matrix_csv(out / "predictions.csv", pred, [b.ids[i] for i in plan.test], "y")
    man.add("predictions", out / "predictions.csv")
    man.finish()
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = FsPath(args.out)
    man = Manifest(out, "evaluate", {"data": str(args.data), "fit": str(args.fit),
                                     "per_column_only": args.per_column_only}, {})
    b = read_bundle(args.data)
    fit_man, fits, plan = _load_fits(FsPath(args.fit))
    pred = predict_test(_context_for(b, fits, plan), fits)
    Y_test = b.Y[plan.test]
    if pred.shape != Y_test.shape:
        raise ContractError(f"predictions {pred.shape} do not match responses {Y_test.shape}")
    per_col, pooled = rmse(Y_test, pred)
    method = fit_man["config"]["method"]
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "response", "rmse"])
        for q, v in enumerate(per_col):
            w.writerow([method, f"y{q + 1}", repr(float(v))])
        if not args.per_column_only:
            w.writerow([method, "pooled", repr(pooled)])
    man.add("metrics", out / "metrics.csv")
    if b.truth is not None:
        if method == "mpenssar":
            R_hat = fits[0].R_hat
        else:
            inner = [f.fit if hasattr(f, "loadings") else f for f in fits]
            R_hat = np.full((len(fits), len(fits)), np.nan)
            np.fill_diagonal(R_hat, [g.R_hat[0, 0] for g in inner])
        R_true = b.truth["R"]
        with open(out / "r_error.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "q", "q_prime", "R_hat", "R_true", "abs_error"])
            for i in range(R_true.shape[0]):
                for j in range(R_true.shape[1]):
                    e = abs(R_hat[i, j] - R_true[i, j])
                    w.writerow([method, i + 1, j + 1, repr(float(R_hat[i, j])),
                                repr(float(R_true[i, j])), repr(float(e))])
        man.add("r_error", out / "r_error.csv")
    man.finish(pooled_rmse=pooled)
    return EXIT_OK


_CONST_FIELDS = ("K_Y", "K_X", "K_neighb", "alpha", "Q", "P", "sigma2", "L_gap")


def cmd_constants(args) -> int:
    cfg = _read_config(args.config, "constants")
    vals = {}
    for name in _CONST_FIELDS:
        if name not in cfg:
            raise ConfigError(name, "required")
        vals[name] = _typed(cfg, name, int if name in ("Q", "P") else float, None)
    m_star = _typed(cfg, "m_star", int, None)
    if m_star is None:
        raise ConfigError("m_star", "required")
    kappa = args.kappa if args.kappa_given else _typed(cfg, "kappa", float, 0.4)
    K_pen = _typed(cfg, "K_pen", float, 1.0)
    if args.kpen not in (None, "auto"):
        K_pen = _typed({"kpen": args.kpen}, "kpen", float, None)
    m = _typed(cfg, "m", int, None)
    delta = _typed(cfg, "delta", float, None)
    n = _typed(cfg, "n", int, None)
    tail = _typed(cfg, "tail_terms", int, 20)
    out = FsPath(args.out)
    man = Manifest(out, "constants", {**cfg, "kappa": kappa, "K_pen": K_pen}, {})
    c = theory_constants(**vals, m_star=m_star, kappa=kappa, K_pen=K_pen, m=m, delta=delta)
    bound = misselection_bound(c, n, tail_terms=tail) if n is not None else None
    text = format_report(c, bound)
    (out / "constants.ini").write_text(text, encoding="utf-8")
    man.add("report", out / "constants.ini")
    man.finish()
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpenssar", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, fit=False):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        if data:
            sp.add_argument("--data", required=True, help="dataset bundle directory")
        if fit:
            sp.add_argument("--fit", required=True, help="directory written by 'fit'")

    s = sub.add_parser("simulate", help="generate dataset bundles")
    common(s, data=False)
    s.add_argument("--config", help="INI file with a [simulation] section")
    s.add_argument("--reps", type=int, default=None)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a method on the training split")
    common(f)
    # defaults live in _FIT_DEFAULTS so a [fit] config section can fill unset flags
    f.add_argument("--config", help="INI file with a [fit] section; flags take precedence")
    f.add_argument("--method", choices=METHODS)
    f.add_argument("--split", choices=("ov", "sv"))
    f.add_argument("--m", type=int, help="fix the truncation order")
    f.add_argument("--lambda", dest="lam", type=float, help="fix the ridge level")
    f.add_argument("--kpen", help="'auto' (slope heuristic, default) or a value")
    f.add_argument("--kappa", type=float, help="penalty exponent (default 0.4)")
    f.add_argument("--m-max", dest="m_max", type=int)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="predict the test units of a fitted split")
    common(pr, fit=True)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="test RMSE and R estimation error")
    common(e, fit=True)
    e.add_argument("--per-column-only", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("constants", help="theory constants and misselection bound")
    common(c, data=False)
    c.add_argument("--config", required=True, help="INI file with a [constants] section")
    c.add_argument("--kpen", default=None)
    c.add_argument("--kappa", type=float, default=None)
    c.set_defaults(func=cmd_constants)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "constants":
        args.kappa_given = args.kappa is not None
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
