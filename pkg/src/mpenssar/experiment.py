"""Train / validate / test workflow comparing MPenSSAR with its per-response baselines.

Fits use the training units only, with the original weights restricted to
them (not re-normalized, so a training unit's lost neighbours simply drop
out of its spatial lag). Predictions use the original weights over all units: for
validation the held-out block (validation and test units) is solved jointly
given the training responses; for testing the validation responses are
observed as well and only the test block is solved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, HeuristicDegenerateError, NumericalError
from .estimator import ProjssarFit, fit_design, predict_design, projssar_fit
from .selection import NestedSignatures, PenaltyConfig, select_order, slope_heuristic
from .simulation import SimConfig, SimDataset, simulate
from .spatial import SpatialWeights, SplitPlan, split_ordinary, split_spatial

__all__ = [
    "LAMBDA_GRID",
    "METHODS",
    "MethodResult",
    "rmse",
    "run_mpenssar",
    "run_penssar",
    "run_projssar",
    "run_method",
    "make_split",
    "replicate",
    "SplitContext",
    "predict_test",
]

LAMBDA_GRID = tuple(10.0**k for k in range(-6, 3))
METHODS = ("mpenssar", "penssar", "projssar")


def rmse(Y_true, Y_pred) -> tuple[np.ndarray, float]:
    """Per-column RMSE and the pooled value over all entries."""
    Y_true = np.atleast_2d(np.asarray(Y_true, dtype=float).T).T
    Y_pred = np.atleast_2d(np.asarray(Y_pred, dtype=float).T).T
    if Y_true.shape != Y_pred.shape:
        raise ContractError(f"shape mismatch {Y_true.shape} vs {Y_pred.shape}")
    sq = (Y_true - Y_pred) ** 2
    return np.sqrt(sq.mean(axis=0)), float(np.sqrt(sq.mean()))


@dataclass
class MethodResult:
    method: str
    fits: list
    R_hat: np.ndarray
    test_pred: np.ndarray
    test_rmse: np.ndarray
    pooled_rmse: float
    val_rmse: float
    selected: list[dict] = field(default_factory=list)


def _block_weights(W: SpatialWeights, first, second) -> SpatialWeights:
    # a permutation of all units, so the original rows are kept as they are
    return W.subset(np.concatenate([first, second]), renormalize=False)


class SplitContext:
    """Per-split caches shared by all methods."""

    def __init__(self, cache: NestedSignatures, Y, W: SpatialWeights, plan: SplitPlan):
        self.cache = cache
        self.Y = np.asarray(Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        self.W = W
        self.plan = plan
        self.train = plan.train
        self.tr = cache.subset(plan.train)
        self.W_tr = W.subset(plan.train, renormalize=False)
        self.Y_tr = self.Y[plan.train]
        self._held = np.concatenate([plan.validation, plan.test])
        self._seen = np.concatenate([plan.train, plan.validation])
        self.W_val = _block_weights(W, plan.train, self._held)
        self.W_test = _block_weights(W, self._seen, plan.test)

    def predict(self, fit, m: int, target, cols=None) -> np.ndarray:
        """Predictions for ``target`` (the validation or the test units)."""
        cols = slice(None) if cols is None else cols
        if target is self.plan.validation:
            out = predict_design(fit, self.cache.S(m, self._held), self.W_val,
                                 self.Y_tr[:, cols])
            return out[: len(self.plan.validation)]
        return predict_design(fit, self.cache.S(m, target), self.W_test,
                              self.Y[self._seen][:, cols])


def _mpenssar_for_lambda(ctx: SplitContext, lam: float, kappa: float, K_pen, m):
    if m is None:
        K = K_pen
        if K is None:
            K = slope_heuristic(None, ctx.Y_tr, ctx.W_tr, lam, kappa, cache=ctx.tr)
        m, table = select_order(None, ctx.Y_tr, ctx.W_tr, lam,
                                PenaltyConfig(K, ctx.cache.P, kappa), cache=ctx.tr)
        info = {"K_pen": float(K), "criterion": [list(r) for r in table.rows()]}
    else:
        info = {}
    f = fit_design(ctx.tr.S(m), ctx.Y_tr, ctx.W_tr, lam, m=m, channels=ctx.cache.P,
                   design=ctx.tr.design(m))
    f.extra.update(info)
    return f


def run_mpenssar(ctx: SplitContext, lam_grid=LAMBDA_GRID, kappa: float = 0.4, K_pen=None,
                 m: int | None = None) -> MethodResult:
    """Order by penalized risk (slope-heuristic ``K_pen`` unless given); lambda by validation."""
    best = None
    failures = []
    for lam in lam_grid:
        try:
            f = _mpenssar_for_lambda(ctx, lam, kappa, K_pen, m)
            _, val = rmse(ctx.Y[ctx.plan.validation], ctx.predict(f, f.m, ctx.plan.validation))
        except (NumericalError, HeuristicDegenerateError) as exc:
            failures.append(f"lambda={lam}: {exc}")
            continue
        if best is None or val < best[0]:
            best = (val, f)
    if best is None:
        raise NumericalError("no lambda produced a usable MPenSSAR fit: " + "; ".join(failures))
    val, f = best
    pred = ctx.predict(f, f.m, ctx.plan.test)
    per_col, pooled = rmse(ctx.Y[ctx.plan.test], pred)
    sel = [{"m": f.m, "lambda": f.lam, "K_pen": f.extra.get("K_pen")}]
    return MethodResult("mpenssar", [f], f.R_hat.copy(), pred, per_col, pooled, val, sel)


def _per_column(ctx: SplitContext, make_fits, name: str) -> MethodResult:
    Q = ctx.Y.shape[1]
    fits, preds, sel, vals = [], [], [], []
    for q in range(Q):
        best = None
        for m, lam, f in make_fits(q):
            try:
                pv = ctx.predict(f, m, ctx.plan.validation, cols=[q])
            except NumericalError:
                continue
            _, val = rmse(ctx.Y[ctx.plan.validation, q], pv[:, 0])
            if best is None or val < best[0]:
                best = (val, m, lam, f)
        if best is None:
            raise NumericalError(f"{name}: no usable fit for response {q + 1}")
        val, m, lam, f = best
        fits.append(f)
        vals.append(val)
        preds.append(ctx.predict(f, m, ctx.plan.test, cols=[q])[:, 0])
        d = {"column": q + 1, "m": m, "lambda": lam}
        if isinstance(f, ProjssarFit):
            d["n_components"] = f.n_components
        sel.append(d)
    pred = np.column_stack(preds)
    per_col, pooled = rmse(ctx.Y[ctx.plan.test], pred)
    R_hat = np.diag([_inner(f).R_hat[0, 0] for f in fits])
    val_pooled = float(np.sqrt(np.mean(np.square(vals))))
    return MethodResult(name, fits, R_hat, pred, per_col, pooled, val_pooled, sel)


def _orders(ctx: SplitContext, orders):
    return range(1, ctx.cache.m_max + 1) if orders is None else list(orders)


def run_penssar(ctx: SplitContext, lam_grid=LAMBDA_GRID, orders=None) -> MethodResult:
    """One single-response fit per column; ``(m, lambda)`` by validation RMSE."""

    def fits(q):
        for m in _orders(ctx, orders):
            for lam in lam_grid:
                try:
                    f = fit_design(ctx.tr.S(m), ctx.Y_tr[:, [q]], ctx.W_tr, lam, m=m,
                                   channels=ctx.cache.P, design=ctx.tr.design(m))
                except NumericalError:
                    continue
                yield m, lam, f

    return _per_column(ctx, fits, "penssar")


def run_projssar(ctx: SplitContext, inertia_cap: float = 0.95, orders=None) -> MethodResult:
    """One PCA-score fit per column; ``m`` by validation RMSE."""

    def fits(q):
        for m in _orders(ctx, orders):
            try:
                f = projssar_fit(None, ctx.Y_tr[:, [q]], ctx.W_tr, m, inertia_cap,
                                 S=ctx.tr.S(m), channels=ctx.cache.P)
            except NumericalError:
                continue
            yield m, 0.0, f

    return _per_column(ctx, fits, "projssar")


def predict_test(ctx: SplitContext, fits) -> np.ndarray:
    """Test-block predictions from one joint fit or from one fit per response."""
    fits = list(fits)
    if len(fits) == 1 and _inner(fits[0]).Q == ctx.Y.shape[1]:
        return ctx.predict(fits[0], fits[0].m, ctx.plan.test)
    if len(fits) != ctx.Y.shape[1]:
        raise ContractError(f"{len(fits)} fits for {ctx.Y.shape[1]} responses")
    return np.column_stack(
        [ctx.predict(f, f.m, ctx.plan.test, cols=[q])[:, 0] for q, f in enumerate(fits)]
    )


def _inner(f):
    return f.fit if isinstance(f, ProjssarFit) else f


def make_split(kind: str, n: int, coords=None, seed=None) -> SplitPlan:
    if kind in ("ov", "ordinary"):
        return split_ordinary(n, seed=seed)
    if kind in ("sv", "spatial"):
        if coords is None:
            raise ContractError("spatial split needs coordinates")
        return split_spatial(coords, seed=seed)
    raise ContractError(f"unknown split {kind!r}; use ov or sv")


def run_method(method: str, cache: NestedSignatures, Y, W, plan: SplitPlan, **kw) -> MethodResult:
    ctx = kw.pop("context", None) or SplitContext(cache, Y, W, plan)
    if method == "mpenssar":
        return run_mpenssar(ctx, **kw)
    if method == "penssar":
        return run_penssar(ctx, **kw)
    if method == "projssar":
        return run_projssar(ctx, **kw)
    raise ContractError(f"unknown method {method!r}; choose from {METHODS}")


def replicate(cfg: SimConfig, split: str = "sv", methods=("mpenssar", "penssar"),
              m_max: int | None = None, data: SimDataset | None = None) -> dict:
    """Simulate one dataset (unless given), split it and run each method."""
    data = data or simulate(cfg)
    cache = NestedSignatures(data.fitting_paths(), m_max)
    plan = make_split(split, data.n, data.coords, seed=cfg.seed)
    ctx = SplitContext(cache, data.Y, data.W, plan)
    out = {"data": data, "plan": plan}
    for name in methods:
        out[name] = run_method(name, cache, data.Y, data.W, plan, context=ctx)
    return out
