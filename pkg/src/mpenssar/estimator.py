"""MPenSSAR estimation: ridge-profiled intercept/slopes and a box-constrained R.

For a fixed R the unpenalized intercept and ridge-penalized slopes have a
closed form. Substituting it back leaves a convex quadratic in R which
separates over the columns of R; each column is a small box-constrained
least-squares problem solved by projected gradient.
"""

from __future__ import annotations

import json
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np
import scipy.sparse as sp
from scipy.optimize import lsq_linear
from scipy.sparse.linalg import splu

from .errors import ContractError, PredictionInfeasibleError, SingularityError
from .path import AugmentedPath, Path, augment
from .signature import DEFAULT_DIM_CAP, sig_dim, sig_matrix
from .spatial import SpatialWeights

__all__ = [
    "SpectralDesign",
    "MpenssarFit",
    "ProjssarFit",
    "profile_coefficients",
    "fit_R",
    "solve_box_lsq",
    "fit",
    "fit_design",
    "predict",
    "predict_design",
    "penssar_fit",
    "projssar_fit",
    "save_fit",
    "load_fit",
]


def _dense(W) -> np.ndarray | sp.csr_matrix:
    if isinstance(W, SpatialWeights):
        return W.matrix
    if sp.issparse(W):
        return sp.csr_matrix(W)
    return np.asarray(W, dtype=float)


def _as_2d(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.ndim != 2 or not np.all(np.isfinite(Y)):
        raise ContractError("responses must be a finite (n, Q) array")
    return Y


class SpectralDesign:
    """Thin SVD of a column-centered design, shared across ridge levels.

    With an unpenalized intercept the ridge problem reduces to the centered
    design, so one SVD serves every ``lam`` as well as both the fitted
    values and the coefficients.
    """

    def __init__(self, S: np.ndarray):
        S = np.asarray(S, dtype=float)
        if S.ndim != 2:
            raise ContractError("design must be 2-D")
        self.n, self.p = S.shape
        self.means = S.mean(axis=0)
        if self.p:
            self.U, self.s, self.Vt = np.linalg.svd(S - self.means, full_matrices=False)
        else:
            self.U, self.s, self.Vt = np.zeros((self.n, 0)), np.zeros(0), np.zeros((0, 0))

    def _check(self, lam: float) -> None:
        if lam < 0:
            raise ContractError(f"ridge parameter must be >= 0, got {lam}")
        if lam == 0 and self.p:
            tol = max(self.n, self.p) * np.finfo(float).eps * (self.s[0] if self.s.size else 0)
            if self.p >= self.n or self.s[-1] <= tol:
                raise SingularityError(
                    "normal equations are singular at lambda = 0; use lambda > 0"
                )

    def shrinkage(self, lam: float) -> np.ndarray:
        self._check(lam)
        s2 = self.s**2
        return s2 / (s2 + self.n * lam)

    def residual(self, M: np.ndarray, lam: float) -> np.ndarray:
        """``(I - P) M`` with ``P`` the ridge hat matrix including the intercept."""
        Mc = M - M.mean(axis=0)
        if not self.p:
            return Mc
        return Mc - self.U @ (self.shrinkage(lam)[:, None] * (self.U.T @ Mc))

    def coefficients(self, M: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
        """Intercept row (1, Q) and slopes (p, Q) of the ridge fit of ``M``."""
        mean = M.mean(axis=0)
        if not self.p:
            return mean[None, :], np.zeros((0, M.shape[1]))
        self._check(lam)
        s2 = self.s**2
        gain = self.s / (s2 + self.n * lam)
        beta = self.Vt.T @ (gain[:, None] * (self.U.T @ (M - mean)))
        mu = mean - self.means @ beta
        return mu[None, :], beta


def _split_unit(S_tilde) -> np.ndarray:
    S_tilde = np.asarray(S_tilde, dtype=float)
    if S_tilde.ndim != 2 or S_tilde.shape[1] < 1 or np.any(S_tilde[:, 0] != 1.0):
        raise ContractError("design must carry the unit column first")
    return S_tilde[:, 1:]


def profile_coefficients(S_tilde, Y, W, R, lam: float, design: SpectralDesign | None = None):
    """Ridge-profiled ``(mu, beta)`` for a fixed spatial matrix ``R``.

    Returns the minimizer of ``(1/n)||Y - W Y R - S_tilde [mu; beta]||^2
    + lam ||beta||^2``; the intercept (first row) is not penalized.
    """
    S = _split_unit(S_tilde)
    Y = _as_2d(Y)
    R = np.asarray(R, dtype=float).reshape(Y.shape[1], Y.shape[1])
    design = design or SpectralDesign(S)
    return design.coefficients(Y - _dense(W) @ Y @ R, lam)


def _grad_norm(H, G, R, scale) -> float:
    grad = scale * (H @ R - G)
    return float(np.linalg.norm(R - np.clip(R - grad, -1.0, 1.0)))


def _polish_column(B, a) -> np.ndarray:
    """Exact bounded least squares for one column (active-set BVLS)."""
    res = lsq_linear(B, a, bounds=(-1.0, 1.0), method="bvls", tol=1e-14)
    return np.clip(res.x, -1.0, 1.0)


def solve_box_lsq(B, A, tol: float = 1e-10, max_iter: int = 10_000):
    """Minimize ``(1/n)||A - B R||_F^2`` over ``R`` in ``[-1, 1]``, column by column.

    Returns ``(R, iterations, converged, projected_gradient_norm)``.
    """
    B = np.asarray(B, dtype=float)
    A = np.asarray(A, dtype=float)
    n = B.shape[0]
    H = B.T @ B
    G = B.T @ A
    k = H.shape[0]
    lip = 2.0 / n * np.linalg.eigvalsh(H).max(initial=0.0)
    g_scale = max(1.0, 2.0 / n * float(np.abs(G).max(initial=0.0)))
    if lip <= np.finfo(float).eps * max(1.0, 2.0 / n * np.abs(H).max(initial=0.0)) * k:
        # objective flat in R: canonical zero solution
        return np.zeros((k, A.shape[1])), 0, True, 0.0
    # warm start from an active-set solve; projected gradient certifies or refines it
    R = np.column_stack([_polish_column(B, A[:, q]) for q in range(A.shape[1])])
    it = 0
    converged = _grad_norm(H, G, R, 2.0 / n) <= tol * g_scale
    while not converged and it < max_iter:
        grad = 2.0 / n * (H @ R - G)
        R = np.clip(R - grad / lip, -1.0, 1.0)
        it += 1
        converged = _grad_norm(H, G, R, 2.0 / n) <= tol * g_scale
    return R, it, converged, _grad_norm(H, G, R, 2.0 / n)


def _profiled_blocks(design: SpectralDesign, Y, W, lam):
    WY = _dense(W) @ Y
    return design.residual(WY, lam), design.residual(Y, lam)


def fit_R(S_tilde, Y, W, lam: float, *, design: SpectralDesign | None = None,
          joint: bool = False, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Spatial matrix minimizing the profiled objective over ``[-1, 1]^{Q x Q}``.

    ``joint=True`` solves the Q*Q-dimensional problem in one piece instead of
    column by column; both give the same minimizer.
    """
    Y = _as_2d(Y)
    design = design or SpectralDesign(_split_unit(S_tilde))
    B, A = _profiled_blocks(design, Y, W, lam)
    if joint:
        Q = Y.shape[1]
        Bj = np.kron(np.eye(Q), B)
        r, *_ = solve_box_lsq(Bj, A.reshape(-1, 1, order="F"), tol, max_iter)
        return r.reshape(Q, Q, order="F")
    return solve_box_lsq(B, A, tol, max_iter)[0]


@dataclass
class MpenssarFit:
    """Fitted parameters of one spatial signature regression."""

    R_hat: np.ndarray
    mu_hat: np.ndarray
    beta_hat: np.ndarray
    m: int
    lam: float
    train_objective: float
    channels: int
    iterations: int = 0
    converged: bool = True
    pg_norm: float = 0.0
    sigma_hat: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def Q(self) -> int:
        return self.R_hat.shape[0]

    def transform(self, S: np.ndarray) -> np.ndarray:
        return S

    def to_dict(self) -> dict:
        d = {
            "kind": "mpenssar",
            "m": int(self.m),
            "lambda": float(self.lam),
            "channels": int(self.channels),
            "Q": self.Q,
            "R_hat": self.R_hat.ravel().tolist(),
            "mu_hat": self.mu_hat.ravel().tolist(),
            "beta_shape": list(self.beta_hat.shape),
            "beta_hat": self.beta_hat.ravel().tolist(),
            "diagnostics": {
                "train_objective": float(self.train_objective),
                "iterations": int(self.iterations),
                "converged": bool(self.converged),
                "pg_norm": float(self.pg_norm),
                "sigma_hat": None if self.sigma_hat is None else self.sigma_hat.ravel().tolist(),
            },
            "extra": self.extra,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MpenssarFit":
        Q = d["Q"]
        diag = d["diagnostics"]
        sig = diag.get("sigma_hat")
        return cls(
            R_hat=np.array(d["R_hat"], dtype=float).reshape(Q, Q),
            mu_hat=np.array(d["mu_hat"], dtype=float).reshape(1, Q),
            beta_hat=np.array(d["beta_hat"], dtype=float).reshape(d["beta_shape"]),
            m=d["m"],
            lam=d["lambda"],
            train_objective=diag["train_objective"],
            channels=d["channels"],
            iterations=diag["iterations"],
            converged=diag["converged"],
            pg_norm=diag["pg_norm"],
            sigma_hat=None if sig is None else np.array(sig, dtype=float).reshape(Q, Q),
            extra=d.get("extra", {}),
        )


def fit_design(S, Y, W, lam: float, *, m: int = 0, channels: int = 0,
               design: SpectralDesign | None = None, tol: float = 1e-10,
               max_iter: int = 10_000) -> MpenssarFit:
    """Fit on a precomputed shifted-signature (or score) matrix ``S``."""
    Y = _as_2d(Y)
    S = np.asarray(S, dtype=float)
    n, Q = Y.shape
    if S.shape[0] != n:
        raise ContractError(f"design has {S.shape[0]} rows, responses have {n}")
    Wd = _dense(W)
    if Wd.shape != (n, n):
        raise ContractError(f"weights shape {Wd.shape} does not match n={n}")
    design = design or SpectralDesign(S)
    B, A = _profiled_blocks(design, Y, Wd, lam)
    R, it, conv, pg = solve_box_lsq(B, A, tol, max_iter)
    mu, beta = design.coefficients(Y - Wd @ Y @ R, lam)
    resid = Y - Wd @ Y @ R - mu - S @ beta
    obj = float(np.sum(resid**2) / n)
    return MpenssarFit(R, mu, beta, m, float(lam), obj, channels, it, conv, pg,
                       sigma_hat=resid.T @ resid / n)


def _augmented(paths) -> list[AugmentedPath]:
    return [p if isinstance(p, AugmentedPath) else augment(p) for p in paths]


def fit(paths: Sequence[AugmentedPath | Path], Y, W, m: int, lam: float,
        cap: int = DEFAULT_DIM_CAP) -> MpenssarFit:
    """Fit at truncation order ``m`` and ridge level ``lam``.

    Plain :class:`Path` inputs are augmented (basepoint + time) first.
    """
    aps = _augmented(paths)
    S = sig_matrix(aps, m, cap)
    P = aps[0].channels
    out = fit_design(S, Y, W, lam, m=m, channels=P)
    assert out.beta_hat.shape == (sig_dim(P, m), out.Q)
    return out


def penssar_fit(paths, y, W, m: int, lam: float) -> MpenssarFit:
    """Single-response fit (Q = 1)."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 2 and y.shape[1] != 1:
        raise ContractError("penssar_fit takes one response column")
    return fit(paths, y.reshape(-1, 1), W, m, lam)


@dataclass
class ProjssarFit:
    """Spatial fit on principal-component scores of standardized signatures."""

    fit: MpenssarFit
    keep: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    loadings: np.ndarray
    explained: np.ndarray

    @property
    def n_components(self) -> int:
        return self.loadings.shape[1]

    @property
    def m(self) -> int:
        return self.fit.m

    @property
    def channels(self) -> int:
        return self.fit.channels

    def transform(self, S: np.ndarray) -> np.ndarray:
        return ((S[:, self.keep] - self.means) / self.scales) @ self.loadings

    def to_dict(self) -> dict:
        d = self.fit.to_dict()
        d["kind"] = "projssar"
        d["projection"] = {
            "keep": self.keep.tolist(),
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
            "loadings_shape": list(self.loadings.shape),
            "loadings": self.loadings.ravel().tolist(),
            "explained": self.explained.tolist(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProjssarFit":
        pr = d["projection"]
        return cls(
            MpenssarFit.from_dict(d),
            np.array(pr["keep"], dtype=bool),
            np.array(pr["means"], dtype=float),
            np.array(pr["scales"], dtype=float),
            np.array(pr["loadings"], dtype=float).reshape(pr["loadings_shape"]),
            np.array(pr["explained"], dtype=float),
        )


def n_components_below(explained_ratio: np.ndarray, cap: float) -> int:
    """Largest count whose cumulative explained share stays below ``cap`` (>= 1)."""
    cum = np.cumsum(explained_ratio)
    # guard against 1 - 1e-16 style round-off at the top
    return max(1, int(np.sum(cum < cap - 1e-12)))


def projssar_fit(paths, y, W, m: int, inertia_cap: float = 0.95, *, S=None,
                 channels: int = 0) -> ProjssarFit:
    """PCA on z-scored signature coefficients, then a Q = 1 spatial fit with lambda = 0."""
    if not 0 < inertia_cap < 1:
        raise ContractError(f"inertia_cap must lie in (0, 1), got {inertia_cap}")
    y = _as_2d(y)
    if y.shape[1] != 1:
        raise ContractError("projssar_fit takes one response column")
    P = channels
    if S is None:
        aps = _augmented(paths)
        S = sig_matrix(aps, m)
        P = aps[0].channels
    n = S.shape[0]
    if n < 2:
        raise ContractError("projssar_fit needs n >= 2")
    sd = S.std(axis=0, ddof=1)
    keep = sd > 1e-12 * max(1.0, float(np.abs(S).max(initial=0.0)))
    Sk = S[:, keep]
    means, scales = Sk.mean(axis=0), sd[keep]
    Z = (Sk - means) / scales
    # correlation eigenvalues are s**2 / (n - 1); the SVD avoids the p x p matrix
    _, s, Vt = np.linalg.svd(Z, full_matrices=False)
    ev = s**2
    ratio = ev / ev.sum()
    k = n_components_below(ratio, inertia_cap)
    loadings = Vt[:k].T
    scores = Z @ loadings
    inner = fit_design(scores, y, W, 0.0, m=m, channels=P)
    inner.extra["n_components"] = k
    return ProjssarFit(inner, keep, means, scales, loadings, ratio[:k])


def predict_design(fit, S_new, W_full, Y_obs) -> np.ndarray:
    """Predict the last block of units given observed responses for the first block.

    ``W_full`` covers observed units first, then the new ones. The new
    responses solve ``Y_T = W_TO Y_obs R + W_TT Y_T R + 1 mu + S_T beta``.
    """
    base = fit.fit if isinstance(fit, ProjssarFit) else fit
    Y_obs = _as_2d(Y_obs)
    X = fit.transform(np.asarray(S_new, dtype=float))
    n_obs, Q = Y_obs.shape
    n_new = X.shape[0]
    Wf = sp.csr_matrix(_dense(W_full))
    if Wf.shape != (n_obs + n_new, n_obs + n_new):
        raise ContractError(
            f"weights shape {Wf.shape} does not match {n_obs} observed + {n_new} new units"
        )
    R = base.R_hat
    W_TO = Wf[n_obs:, :n_obs]
    W_TT = Wf[n_obs:, n_obs:]
    rhs = W_TO @ Y_obs @ R + base.mu_hat + X @ base.beta_hat
    if not np.any(R) or W_TT.nnz == 0:
        return rhs
    system = (sp.identity(n_new * Q, format="csc") - sp.kron(R.T, W_TT, format="csc")).tocsc()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            lu = splu(system)
            out = lu.solve(rhs.ravel(order="F"))
    except (RuntimeError, Warning) as exc:
        raise PredictionInfeasibleError(
            f"I - kron(R^T, W_TT) could not be factorized: {exc}"
        ) from exc
    if not np.all(np.isfinite(out)):
        raise PredictionInfeasibleError("prediction system produced non-finite values")
    return out.reshape(n_new, Q, order="F")


def predict(fit, paths_test, W_full, Y_train) -> np.ndarray:
    aps = _augmented(paths_test)
    return predict_design(fit, sig_matrix(aps, fit.m), W_full, Y_train)


def save_fit(path: str | FsPath, fit) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit.to_dict(), fh, indent=1)


def load_fit(path: str | FsPath):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return ProjssarFit.from_dict(d) if d.get("kind") == "projssar" else MpenssarFit.from_dict(d)
