"""Truncation-order selection by penalized empirical risk and the slope heuristic."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .errors import ContractError, HeuristicDegenerateError
from .estimator import SpectralDesign, _augmented, fit_design
from .signature import DEFAULT_DIM_CAP, max_order, sig_dim, sig_matrix
from .theory import BoundReport, TheoryConstants, misselection_bound, theory_constants

__all__ = [
    "PenaltyConfig",
    "NestedSignatures",
    "CriterionTable",
    "pen",
    "criterion_table",
    "empirical_risks",
    "select_order",
    "selected_orders",
    "dimension_jump",
    "default_kpen_grid",
    "slope_heuristic",
    "TheoryConstants",
    "BoundReport",
    "theory_constants",
    "misselection_bound",
]


@dataclass(frozen=True)
class PenaltyConfig:
    """``pen_n(m) = K_pen * n**(-kappa) * sqrt(s_P(m))``; ``P`` counts augmented channels."""

    K_pen: float
    P: int
    kappa: float = 0.4
    m_max: int | None = None

    def __post_init__(self):
        if not self.K_pen > 0:
            raise ContractError(f"K_pen must be > 0, got {self.K_pen}")
        if not 0 < self.kappa < 0.5:
            raise ContractError(f"kappa must lie in (0, 1/2), got {self.kappa}")
        if self.P < 1:
            raise ContractError(f"P must be >= 1, got {self.P}")
        if self.m_max is not None and self.m_max < 1:
            raise ContractError(f"m_max must be >= 1, got {self.m_max}")

    def resolved_m_max(self, cap: int = DEFAULT_DIM_CAP) -> int:
        return self.m_max if self.m_max is not None else max_order(self.P, cap)


def pen(n: int, m: int, cfg: PenaltyConfig) -> float:
    if n < 1 or m < 1:
        raise ContractError(f"pen needs n >= 1 and m >= 1, got n={n}, m={m}")
    return cfg.K_pen * n ** (-cfg.kappa) * np.sqrt(sig_dim(cfg.P, m))


class NestedSignatures:
    """Signatures at the largest order, sliced to any lower order on demand.

    Lower-order signatures are prefixes of higher-order ones, so one pass
    serves the whole range ``1..m_max``; SVDs are cached per order.
    """

    def __init__(self, paths=None, m_max: int | None = None, cap: int = DEFAULT_DIM_CAP, *,
                 S_full: np.ndarray | None = None, P: int | None = None):
        if S_full is None:
            aps = _augmented(paths)
            P = aps[0].channels
            m_max = m_max or max_order(P, cap)
            S_full = sig_matrix(aps, m_max, cap)
        elif P is None or m_max is None:
            raise ContractError("S_full needs P and m_max")
        if S_full.shape[1] != sig_dim(P, m_max):
            raise ContractError("S_full width does not match sig_dim(P, m_max)")
        self.S_full = np.asarray(S_full, dtype=float)
        self.P = int(P)
        self.m_max = int(m_max)
        self._designs: dict[tuple, SpectralDesign] = {}

    @property
    def n(self) -> int:
        return self.S_full.shape[0]

    def S(self, m: int, rows=None) -> np.ndarray:
        if not 1 <= m <= self.m_max:
            raise ContractError(f"order {m} outside 1..{self.m_max}")
        S = self.S_full[:, : sig_dim(self.P, m)]
        return S if rows is None else S[rows]

    def design(self, m: int, rows=None) -> SpectralDesign:
        key = (m, None if rows is None else tuple(np.asarray(rows).tolist()))
        if key not in self._designs:
            self._designs[key] = SpectralDesign(self.S(m, rows))
        return self._designs[key]

    def subset(self, rows) -> "NestedSignatures":
        return NestedSignatures(S_full=self.S_full[rows], P=self.P, m_max=self.m_max)


@dataclass(frozen=True)
class CriterionTable:
    m: np.ndarray
    L_hat: np.ndarray
    pen: np.ndarray

    @property
    def criterion(self) -> np.ndarray:
        return self.L_hat + self.pen

    @property
    def m_hat(self) -> int:
        # argmin returns the first minimizer, i.e. the smallest order on ties
        return int(self.m[np.argmin(self.criterion)])

    def rows(self):
        for m, l, p, c in zip(self.m, self.L_hat, self.pen, self.criterion):
            yield int(m), float(l), float(p), float(c)

    def to_csv(self, path: str | FsPath) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "L_hat", "pen", "criterion"])
            for m, l, p, c in self.rows():
                w.writerow([m, repr(l), repr(p), repr(c)])


def criterion_table(L_hat, n: int, cfg: PenaltyConfig, orders=None) -> CriterionTable:
    L_hat = np.asarray(L_hat, dtype=float)
    orders = np.arange(1, len(L_hat) + 1) if orders is None else np.asarray(orders, dtype=int)
    pens = np.array([pen(n, int(m), cfg) for m in orders])
    return CriterionTable(orders, L_hat, pens)


def empirical_risks(cache: NestedSignatures, Y, W, lam: float, orders=None) -> np.ndarray:
    """Unpenalized training risk of the fit at each order."""
    orders = range(1, cache.m_max + 1) if orders is None else orders
    out = []
    for m in orders:
        try:
            f = fit_design(cache.S(m), Y, W, lam, m=m, channels=cache.P, design=cache.design(m))
        except Exception as exc:
            exc.args = (f"fit failed at m={m}: {exc}",)
            raise
        out.append(f.train_objective)
    return np.array(out)


def select_order(paths, Y, W, lam: float, cfg: PenaltyConfig, *,
                 cache: NestedSignatures | None = None) -> tuple[int, CriterionTable]:
    """Smallest minimizer of ``L_hat(m) + pen_n(m)`` over ``m = 1..m_max``."""
    cache = cache or NestedSignatures(paths, cfg.resolved_m_max())
    m_max = min(cfg.resolved_m_max(), cache.m_max)
    L = empirical_risks(cache, Y, W, lam, range(1, m_max + 1))
    table = criterion_table(L, cache.n, cfg)
    return table.m_hat, table


def selected_orders(L_hat, dims, n: int, kappa: float, grid) -> np.ndarray:
    """``m_hat`` for each penalty constant in ``grid``; orders are 1-based."""
    L_hat = np.asarray(L_hat, dtype=float)
    root = np.sqrt(np.asarray(dims, dtype=float))
    crit = L_hat[None, :] + np.asarray(grid, dtype=float)[:, None] * n ** (-kappa) * root[None, :]
    return np.argmin(crit, axis=1) + 1


def dimension_jump(grid, m_hats) -> float:
    """Penalty constant at the largest single-step drop of ``m_hat``.

    Returns the first grid value past the drop; ties go to the earliest drop.
    """
    grid = np.asarray(grid, dtype=float)
    m_hats = np.asarray(m_hats)
    if grid.ndim != 1 or len(grid) < 10:
        raise ContractError("K_pen grid needs at least 10 points")
    if np.any(np.diff(grid) <= 0):
        raise ContractError("K_pen grid must be strictly increasing")
    if len(m_hats) != len(grid):
        raise ContractError("m_hats must match the grid")
    drops = m_hats[:-1] - m_hats[1:]
    if drops.max(initial=0) <= 0:
        raise HeuristicDegenerateError(
            "selected order does not decrease over the K_pen grid; try a wider grid"
        )
    j = int(np.argmax(drops))
    return float(grid[j + 1])


def default_kpen_grid(L_hat, n_points: int = 40) -> np.ndarray:
    L_hat = np.asarray(L_hat, dtype=float)
    spread = float(L_hat.max() - L_hat.min())
    if spread <= 0:
        spread = max(float(np.abs(L_hat).max()), 1.0)
    return np.logspace(-3, 2, n_points) * spread


def slope_heuristic(paths, Y, W, lam: float, kappa: float = 0.4, K_pen_grid=None, *,
                    cache: NestedSignatures | None = None, m_max: int | None = None,
                    return_details: bool = False):
    """Calibrate ``K_pen`` as twice the constant at the first big jump of ``m_hat``."""
    if not 0 < kappa < 0.5:
        raise ContractError(f"kappa must lie in (0, 1/2), got {kappa}")
    cache = cache or NestedSignatures(paths, m_max)
    top = cache.m_max if m_max is None else min(m_max, cache.m_max)
    L = empirical_risks(cache, Y, W, lam, range(1, top + 1))
    grid = default_kpen_grid(L) if K_pen_grid is None else np.asarray(K_pen_grid, dtype=float)
    dims = [sig_dim(cache.P, m) for m in range(1, top + 1)]
    m_hats = selected_orders(L, dims, cache.n, kappa, grid)
    K_pen = 2.0 * dimension_jump(grid, m_hats)
    if return_details:
        return K_pen, {"grid": grid, "m_hats": m_hats, "L_hat": L}
    return K_pen
