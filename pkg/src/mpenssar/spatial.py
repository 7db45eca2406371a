"""Spatial weight matrices and train/validation/test split plans."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans

from .errors import ClusteringError, ContractError

__all__ = [
    "SpatialWeights",
    "SplitPlan",
    "knn_weights",
    "inverse_distance_weights",
    "split_ordinary",
    "split_spatial",
    "read_coords_csv",
    "write_coords_csv",
    "read_weights_csv",
    "write_weights_csv",
]


@dataclass(frozen=True, eq=False)
class SpatialWeights:
    """Sparse nonnegative n x n weights with zero diagonal, entries in [0, 1]."""

    matrix: sp.csr_matrix
    row_normalized: bool = False
    tau: float | None = None

    def __post_init__(self):
        W = sp.csr_matrix(self.matrix, dtype=float)
        W.eliminate_zeros()
        W.sort_indices()
        n, n2 = W.shape
        if n != n2:
            raise ContractError(f"weights must be square, got {W.shape}")
        if W.nnz and (W.data.min() < 0 or W.data.max() > 1 or not np.all(np.isfinite(W.data))):
            raise ContractError("weights must lie in [0, 1]")
        if np.any(W.diagonal() != 0):
            raise ContractError("weights must have a zero diagonal")
        object.__setattr__(self, "matrix", W)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def neighbor_counts(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    @property
    def max_neighbors(self) -> int:
        return int(self.neighbor_counts.max(initial=0))

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def subset(self, idx, renormalize: bool | None = None) -> "SpatialWeights":
        """Restrict to the units ``idx`` (in that order).

        Row-normalized weights are re-normalized over the kept neighbours
        unless ``renormalize`` says otherwise.
        """
        idx = np.asarray(idx, dtype=int)
        W = self.matrix[idx][:, idx]
        if renormalize is None:
            renormalize = self.row_normalized
        if renormalize:
            W = _row_normalize(W)
        return SpatialWeights(W, row_normalized=bool(renormalize))


def _row_normalize(W: sp.spmatrix) -> sp.csr_matrix:
    W = sp.csr_matrix(W, dtype=float)
    sums = np.asarray(W.sum(axis=1)).ravel()
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    return sp.csr_matrix(sp.diags(scale) @ W)


def _check_coords(coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or not np.all(np.isfinite(coords)):
        raise ContractError("coordinates must be a finite (n, d) array")
    return coords


def knn_weights(coords, k: int, normalize: bool = True) -> SpatialWeights:
    """Binary k-nearest-neighbour weights; distance ties go to the smaller index."""
    coords = _check_coords(coords)
    n = len(coords)
    if not 1 <= k < n:
        raise ContractError(f"need 1 <= k < n, got k={k}, n={n}")
    D = cdist(coords, coords)
    np.fill_diagonal(D, np.inf)
    # stable sort keeps index order among equal distances
    nbrs = np.argsort(D, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    W = sp.csr_matrix((np.ones(n * k), (rows, nbrs.ravel())), shape=(n, n))
    if normalize:
        W = _row_normalize(W)
    return SpatialWeights(W, row_normalized=normalize)


def inverse_distance_weights(
    coords, min_neighbors: int = 4, normalize: bool = True
) -> SpatialWeights:
    """Weights ``1 / (1 + d)`` for pairs closer than a data-driven threshold.

    The threshold is the smallest value for which every unit has at least
    ``min_neighbors`` others strictly inside it; it is stored on the result
    as ``tau``.
    """
    coords = _check_coords(coords)
    n = len(coords)
    if not 1 <= min_neighbors < n:
        raise ContractError(f"need 1 <= min_neighbors < n, got {min_neighbors}, n={n}")
    D = cdist(coords, coords)
    off = D + np.diag(np.full(n, np.inf))
    kth = np.sort(off, axis=1)[:, min_neighbors - 1]
    radius = kth.max()
    if radius <= 0:
        raise ContractError("degenerate geometry: coincident points leave the threshold undefined")
    tau = np.nextafter(radius, np.inf)
    W = sp.csr_matrix(np.where(off < tau, 1.0 / (1.0 + D), 0.0))
    if normalize:
        W = _row_normalize(W)
    return SpatialWeights(W, row_normalized=normalize, tau=float(tau))


@dataclass(frozen=True, eq=False)
class SplitPlan:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    kind: str
    seed: int | None = None
    clusters: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        parts = [np.sort(np.asarray(a, dtype=int)) for a in (self.train, self.validation, self.test)]
        for name, a in zip(("train", "validation", "test"), parts):
            if a.size == 0:
                raise ContractError(f"{name} set is empty")
        allidx = np.concatenate(parts)
        n = allidx.size
        if np.unique(allidx).size != n or allidx.min() != 0 or allidx.max() != n - 1:
            raise ContractError("split parts must be disjoint and cover 0..n-1")
        if self.kind not in ("ordinary", "spatial"):
            raise ContractError(f"unknown split kind {self.kind!r}")
        object.__setattr__(self, "train", parts[0])
        object.__setattr__(self, "validation", parts[1])
        object.__setattr__(self, "test", parts[2])

    @property
    def n(self) -> int:
        return len(self.train) + len(self.validation) + len(self.test)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SplitPlan):
            return NotImplemented
        return (self.kind == other.kind and self.seed == other.seed
                and all(np.array_equal(a, b) for a, b in
                        zip((self.train, self.validation, self.test),
                            (other.train, other.validation, other.test))))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "train": self.train.tolist(),
            "validation": self.validation.tolist(),
            "test": self.test.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(d["train"], d["validation"], d["test"], d["kind"], d.get("seed"))


def split_ordinary(n: int, fractions=(0.5, 0.25, 0.25), seed: int | None = None) -> SplitPlan:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1) > 1e-9:
        raise ContractError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n_val = int(round(n * fractions[1]))
    n_test = int(round(n * fractions[2]))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ContractError(f"n={n} too small for fractions {fractions}")
    perm = np.random.default_rng(seed).permutation(n)
    return SplitPlan(
        perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:], "ordinary", seed
    )


def split_spatial(coords, K: int = 6, seed: int | None = None) -> SplitPlan:
    """K-means on coordinates; two random clusters become validation and test."""
    coords = _check_coords(coords)
    n = len(coords)
    if not 3 <= K <= n:
        raise ContractError(f"need 3 <= K <= n, got K={K}, n={n}")
    rng = np.random.default_rng(seed)
    labels = None
    for _ in range(K):
        km = KMeans(
            n_clusters=K,
            init="k-means++",
            n_init=1,
            max_iter=100,
            tol=1e-6,
            random_state=int(rng.integers(2**31 - 1)),
        )
        labels = km.fit_predict(coords)
        if np.unique(labels).size == K:
            break
    else:
        raise ClusteringError(f"k-means left an empty cluster after {K} attempts")
    val_c, test_c = rng.choice(K, size=2, replace=False)
    val = np.flatnonzero(labels == val_c)
    test = np.flatnonzero(labels == test_c)
    train = np.flatnonzero((labels != val_c) & (labels != test_c))
    return SplitPlan(train, val, test, "spatial", seed, clusters=labels)


def read_coords_csv(path: str | FsPath) -> tuple[list[str], np.ndarray]:
    ids, xy = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["unit_id", "sx", "sy"]:
            raise ContractError(f"{path}: expected header unit_id,sx,sy")
        for row in reader:
            if row:
                ids.append(row[0])
                xy.append((float(row[1]), float(row[2])))
    return ids, np.array(xy, dtype=float).reshape(-1, 2)


def write_coords_csv(path: str | FsPath, coords, ids=None) -> None:
    coords = np.asarray(coords, dtype=float)
    ids = ids if ids is not None else [str(i + 1) for i in range(len(coords))]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["unit_id", "sx", "sy"])
        for uid, (x, y) in zip(ids, coords):
            w.writerow([uid, repr(float(x)), repr(float(y))])


def write_weights_csv(path: str | FsPath, W: SpatialWeights) -> None:
    """COO triples ``i,j,w`` with 1-based indices."""
    coo = W.matrix.tocoo()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "w"])
        for i, j, v in zip(coo.row, coo.col, coo.data):
            w.writerow([int(i) + 1, int(j) + 1, repr(float(v))])


def read_weights_csv(path: str | FsPath, n: int, row_normalized: bool = True) -> SpatialWeights:
    rows, cols, vals = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["i", "j", "w"]:
            raise ContractError(f"{path}: expected header i,j,w")
        for row in reader:
            if row:
                rows.append(int(row[0]) - 1)
                cols.append(int(row[1]) - 1)
                vals.append(float(row[2]))
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return SpatialWeights(W, row_normalized=row_normalized)
