"""Synthetic spatial datasets with Gaussian-process functional covariates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cholesky
from scipy.sparse.linalg import splu

from .errors import ContractError, GenerationError, NumericalError
from .path import AugmentedPath, Path, augment
from .signature import sig_matrix
from .spatial import SpatialWeights, knn_weights

__all__ = [
    "DESIGNS",
    "SIGMA_DEFAULT",
    "SimConfig",
    "SimDataset",
    "builtin_R",
    "gen_coords",
    "gen_gp_paths",
    "gen_theta",
    "gen_response",
    "simulate",
]

DESIGNS = ("sig2", "terminal", "mixed")

_R_BUILTIN = {
    "weak": [
        [0.40, -0.10, 0.20, 0.05],
        [-0.20, 0.35, 0.10, -0.10],
        [0.15, 0.10, 0.30, 0.20],
        [0.05, -0.15, 0.15, 0.25],
    ],
    "moderate": [
        [0.6, -0.2, 0.4, 0.2],
        [-0.4, 0.6, 0.2, -0.2],
        [0.3, 0.2, 0.5, 0.4],
        [0.1, -0.3, 0.3, 0.4],
    ],
    "high": [
        [0.9, -0.6, 0.7, -0.7],
        [-0.8, 0.7, 0.8, 0.6],
        [0.6, 0.7, 0.7, 0.9],
        [-0.7, 0.8, 0.7, 0.6],
    ],
}

SIGMA_DEFAULT = np.full((4, 4), 0.1) + 0.3 * np.eye(4)


def builtin_R(name: str) -> np.ndarray:
    """The weak / moderate / high 4 x 4 spatial matrices of the simulation study."""
    try:
        return np.array(_R_BUILTIN[name], dtype=float)
    except KeyError:
        raise ContractError(f"unknown R matrix {name!r}; choose from {sorted(_R_BUILTIN)}") from None


@dataclass
class SimConfig:
    P: int = 2
    Q: int = 4
    n: int = 200
    grid_side: int = 60
    design: str = "sig2"
    R: np.ndarray = field(default_factory=lambda: builtin_R("weak"))
    Sigma: np.ndarray = field(default_factory=lambda: SIGMA_DEFAULT.copy())
    n_times: int = 101
    k_neighbors: int = 8
    normalize: bool = True
    seed: int = 0

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float)
        self.Sigma = np.asarray(self.Sigma, dtype=float)
        if self.design not in DESIGNS:
            raise ContractError(f"design must be one of {DESIGNS}, got {self.design!r}")
        if self.P < 1 or self.Q < 1:
            raise ContractError("P and Q must be positive")
        if self.R.shape != (self.Q, self.Q):
            raise ContractError(f"R must be {self.Q} x {self.Q}")
        if np.any(np.abs(self.R) > 1):
            raise ContractError("R entries must lie in [-1, 1]")
        if self.Sigma.shape != (self.Q, self.Q) or not np.allclose(self.Sigma, self.Sigma.T):
            raise ContractError("Sigma must be a symmetric Q x Q matrix")
        if np.linalg.eigvalsh(self.Sigma).min() <= 0:
            raise ContractError("Sigma must be positive definite")
        if self.n > self.grid_side**2:
            raise ContractError(f"n={self.n} exceeds the {self.grid_side}x{self.grid_side} grid")
        if self.n_times < 2:
            raise ContractError("n_times must be >= 2")


@dataclass
class SimDataset:
    coords: np.ndarray
    paths_X: list[Path]
    Y: np.ndarray
    theta: np.ndarray
    noise: np.ndarray
    W: SpatialWeights
    R: np.ndarray
    Sigma: np.ndarray
    eta: np.ndarray
    design: str
    seed: int
    paths_Z: list[Path] | None = None

    @property
    def n(self) -> int:
        return len(self.Y)

    def fitting_paths(self) -> list[Path]:
        """Covariates as fitters see them: the last stamp is dropped for terminal-value designs."""
        if self.design == "sig2":
            return list(self.paths_X)
        return [Path(p.times[:-1], p.values[:-1]) for p in self.paths_X]

    def augmented_paths(self) -> list[AugmentedPath]:
        return [augment(p) for p in self.fitting_paths()]

    def identity_residual(self) -> float:
        """Max-abs residual of ``Y - W Y R - theta - e``."""
        Wm = self.W.matrix
        return float(np.abs(self.Y - Wm @ self.Y @ self.R - self.theta - self.noise).max())


def gen_coords(grid_side: int, n: int, seed=None) -> np.ndarray:
    """``n`` distinct lattice points drawn without replacement from a square grid."""
    if n > grid_side**2 or n < 1:
        raise ContractError(f"cannot draw {n} points from a {grid_side}x{grid_side} grid")
    rng = np.random.default_rng(seed)
    cells = rng.choice(grid_side**2, size=n, replace=False)
    return np.column_stack([cells // grid_side, cells % grid_side]).astype(float)


def _exp_cov_factor(times: np.ndarray) -> np.ndarray:
    K = np.exp(-np.abs(times[:, None] - times[None, :]))
    jitter = 1e-10
    while jitter <= 1e-6:
        try:
            return cholesky(K + jitter * np.eye(len(times)), lower=True)
        except np.linalg.LinAlgError:
            jitter *= 10
    raise NumericalError("exponential covariance could not be factorized")


def gen_gp_paths(n: int, P: int, n_times: int = 101, slope_range=(-3.0, 3.0), seed=None,
                 return_slopes: bool = False):
    """Paths ``gamma * t + f(t)`` on an even grid of [0, 1].

    ``f`` is a zero-mean Gaussian process with covariance ``exp(-|s - t|)``
    and ``gamma`` is uniform on ``slope_range``, independently per unit and
    channel.
    """
    if n_times < 2:
        raise ContractError("n_times must be >= 2")
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n_times)
    L = _exp_cov_factor(t)
    slopes = rng.uniform(slope_range[0], slope_range[1], size=(n, P))
    f = rng.standard_normal((n, P, n_times)) @ L.T
    vals = slopes[:, :, None] * t[None, None, :] + f
    paths = [Path(t, vals[i].T) for i in range(n)]
    return (paths, slopes) if return_slopes else paths


def _draw_eta(rng, k: int, Q: int) -> np.ndarray:
    eta = rng.uniform(size=(k, Q))
    while np.any(eta.sum(axis=0) == 0):
        eta = rng.uniform(size=(k, Q))
    return eta


def _weighted(features: np.ndarray, eta: np.ndarray) -> np.ndarray:
    return features @ (eta / eta.sum(axis=0))


def gen_theta(design: str, paths_X, paths_Z=None, Q: int = 4, seed=None, eta=None,
              return_eta: bool = False):
    """Mean surface theta (n x Q) for one of the three designs.

    ``sig2`` uses order-2 signatures of the augmented paths; ``terminal`` the
    final values of X; ``mixed`` alternates X (columns 1, 3, ...) and Z
    (columns 2, 4, ...) terminal values.
    """
    rng = np.random.default_rng(seed)
    if design == "sig2":
        feats = sig_matrix([augment(p) for p in paths_X], 2)
        eta = _draw_eta(rng, feats.shape[1], Q) if eta is None else np.asarray(eta, float)
        theta = _weighted(feats, eta)
    elif design == "terminal":
        feats = np.array([p.values[-1] for p in paths_X])
        eta = _draw_eta(rng, feats.shape[1], Q) if eta is None else np.asarray(eta, float)
        theta = _weighted(feats, eta)
    elif design == "mixed":
        if paths_Z is None:
            raise ContractError("design 'mixed' needs Z paths")
        fx = np.array([p.values[-1] for p in paths_X])
        fz = np.array([p.values[-1] for p in paths_Z])
        eta = _draw_eta(rng, fx.shape[1], Q) if eta is None else np.asarray(eta, float)
        tx, tz = _weighted(fx, eta), _weighted(fz, eta)
        theta = np.where(np.arange(Q) % 2 == 0, tx, tz)
    else:
        raise ContractError(f"unknown design {design!r}")
    return (theta, eta) if return_eta else theta


def _solve_sar(M: np.ndarray, W, R: np.ndarray) -> np.ndarray:
    """Solve ``Y - W Y R = M`` through the sparse vec system."""
    Wm = W.matrix if isinstance(W, SpatialWeights) else sp.csr_matrix(W)
    n, Q = M.shape
    system = (sp.identity(n * Q, format="csc") - sp.kron(R.T, Wm, format="csc")).tocsc()
    try:
        lu = splu(system)
    except RuntimeError as exc:
        raise GenerationError(
            "I - kron(R^T, W) is singular: some product of eigenvalues of R and W equals 1"
        ) from exc
    Y = lu.solve(M.ravel(order="F")).reshape(n, Q, order="F")
    if not np.all(np.isfinite(Y)):
        raise GenerationError("SAR solve produced non-finite values")
    return Y


def gen_response(theta, W, R, Sigma, seed=None, return_noise: bool = False):
    """Draw Gaussian noise and solve ``Y = W Y R + theta + e`` for ``Y``."""
    theta = np.asarray(theta, dtype=float)
    R = np.asarray(R, dtype=float)
    rng = np.random.default_rng(seed)
    e = rng.multivariate_normal(np.zeros(theta.shape[1]), Sigma, size=theta.shape[0])
    Y = _solve_sar(theta + e, W, R)
    return (Y, e) if return_noise else Y


def simulate(cfg: SimConfig) -> SimDataset:
    """One dataset; independent child streams keep each component reproducible."""
    ss = np.random.SeedSequence(cfg.seed)
    s_coords, s_x, s_z, s_eta, s_noise = ss.spawn(5)
    coords = gen_coords(cfg.grid_side, cfg.n, s_coords)
    W = knn_weights(coords, cfg.k_neighbors, cfg.normalize)
    paths_X = gen_gp_paths(cfg.n, cfg.P, cfg.n_times, seed=s_x)
    paths_Z = gen_gp_paths(cfg.n, cfg.P, cfg.n_times, seed=s_z) if cfg.design == "mixed" else None
    theta, eta = gen_theta(cfg.design, paths_X, paths_Z, cfg.Q, seed=s_eta, return_eta=True)
    Y, e = gen_response(theta, W, cfg.R, cfg.Sigma, seed=s_noise, return_noise=True)
    return SimDataset(coords, paths_X, Y, theta, e, W, cfg.R.copy(), cfg.Sigma.copy(), eta,
                      cfg.design, cfg.seed, paths_Z)
