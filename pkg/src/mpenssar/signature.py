"""Truncated signatures of piecewise-linear paths.

Coefficients are stored level-major, lexicographic inside a level:
``(1), ..., (P), (1,1), (1,2), ..., (P,...,P)``. Each linear segment
contributes the truncated tensor exponential of its increment, and segments
are glued with the truncated tensor product (Chen's identity).
"""

from __future__ import annotations

import struct
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .errors import ContractError, DimensionCapError
from .path import AugmentedPath, Path

__all__ = [
    "DEFAULT_DIM_CAP",
    "SigVector",
    "sig_dim",
    "level_slices",
    "signature",
    "signature_levels",
    "with_unit",
    "sig_matrix",
    "tensor_exp",
    "chen_product",
    "max_order",
    "write_sig_matrix",
    "read_sig_matrix",
]

DEFAULT_DIM_CAP = 10_000
_INT64_MAX = 2**63 - 1


def sig_dim(P: int, m: int) -> int:
    """Length of the truncated shifted signature, ``P + P**2 + ... + P**m``."""
    if P < 1 or m < 1:
        raise ContractError(f"sig_dim needs P >= 1 and m >= 1, got P={P}, m={m}")
    dim = m if P == 1 else (P ** (m + 1) - P) // (P - 1)
    if dim > _INT64_MAX:
        raise OverflowError(f"sig_dim({P}, {m}) exceeds the 64-bit integer range")
    return dim


def max_order(P: int, cap: int = DEFAULT_DIM_CAP) -> int:
    """Largest m with ``sig_dim(P, m) <= cap`` (at least 1)."""
    m = 1
    while sig_dim(P, m + 1) <= cap:
        m += 1
        if P == 1 and m >= cap:
            break
    return m


def level_slices(P: int, m: int) -> list[slice]:
    """Slices of each level 1..m inside a shifted signature vector."""
    out, start = [], 0
    for k in range(1, m + 1):
        out.append(slice(start, start + P**k))
        start += P**k
    return out


@dataclass(frozen=True, eq=False)
class SigVector:
    channels: int
    order: int
    coeffs: np.ndarray
    includes_unit: bool = False

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        expected = sig_dim(self.channels, self.order) + int(self.includes_unit)
        if coeffs.shape != (expected,):
            raise ContractError(f"expected {expected} coefficients, got {coeffs.shape}")
        if self.includes_unit and coeffs[0] != 1.0:
            raise ContractError("unit coordinate must equal 1")
        object.__setattr__(self, "coeffs", coeffs)

    def __len__(self) -> int:
        return len(self.coeffs)


def _values_of(p) -> np.ndarray:
    if isinstance(p, AugmentedPath):
        return p.inner.values
    if isinstance(p, Path):
        return p.values
    values = np.asarray(p, dtype=float)
    return values[:, None] if values.ndim == 1 else values


def tensor_exp(delta: np.ndarray, m: int) -> list[np.ndarray]:
    """Levels 1..m of ``exp(delta)`` for a batch of increments, shape (n, P)."""
    delta = np.atleast_2d(delta)
    n, _ = delta.shape
    levels = [delta.copy()]
    for k in range(2, m + 1):
        levels.append((levels[-1][:, :, None] * delta[:, None, :]).reshape(n, -1) / k)
    return levels


def _mul_exp_inplace(levels: list[np.ndarray], delta: np.ndarray) -> None:
    """levels <- levels (x) exp(delta), truncated; Horner form per level."""
    n = delta.shape[0]
    m = len(levels)
    # high levels first: level k only reads levels < k, still unmodified
    for k in range(m, 0, -1):
        h = delta / k
        for j in range(1, k):
            h = h + levels[j - 1]
            h = (h[:, :, None] * delta[:, None, :]).reshape(n, -1) / (k - j)
        levels[k - 1] += h


def signature_levels(values_batch: np.ndarray, m: int) -> list[np.ndarray]:
    """Signature levels for a batch of equally long value sequences.

    Parameters
    ----------
    values_batch : ndarray, shape (n, N, P)
    m : int

    Returns
    -------
    list of ndarray, level k has shape (n, P**k)
    """
    values_batch = np.asarray(values_batch, dtype=float)
    n, N, P = values_batch.shape
    levels = [np.zeros((n, P**k)) for k in range(1, m + 1)]
    increments = np.diff(values_batch, axis=1)
    for s in range(N - 1):
        _mul_exp_inplace(levels, increments[:, s, :])
    return levels


def signature(ap: AugmentedPath | Path, m: int, cap: int = DEFAULT_DIM_CAP) -> SigVector:
    """Truncated shifted signature of the piecewise-linear interpolation of ``ap``."""
    if m < 1:
        raise ContractError(f"truncation order must be >= 1, got {m}")
    values = _values_of(ap)
    P = values.shape[1]
    dim = sig_dim(P, m)
    if dim > cap:
        raise DimensionCapError(dim, cap)
    levels = signature_levels(values[None], m)
    return SigVector(P, m, np.concatenate([lv[0] for lv in levels]))


def with_unit(s: SigVector) -> SigVector:
    if s.includes_unit:
        raise ContractError("signature already includes the unit coordinate")
    return SigVector(s.channels, s.order, np.concatenate([[1.0], s.coeffs]), True)


def sig_matrix(
    paths: Sequence[AugmentedPath | Path], m: int, cap: int = DEFAULT_DIM_CAP
) -> np.ndarray:
    """Stack shifted signatures row-wise, shape (n, sig_dim(P, m)).

    Paths of equal length are processed as one batch; rows keep input order.
    """
    if m < 1:
        raise ContractError(f"truncation order must be >= 1, got {m}")
    vals = [_values_of(p) for p in paths]
    if not vals:
        raise ContractError("no paths")
    P = vals[0].shape[1]
    if any(v.shape[1] != P for v in vals):
        raise ContractError("all paths must share a channel count")
    dim = sig_dim(P, m)
    if dim > cap:
        raise DimensionCapError(dim, cap)
    out = np.empty((len(vals), dim))
    by_len: dict[int, list[int]] = {}
    for i, v in enumerate(vals):
        by_len.setdefault(len(v), []).append(i)
    for idx in by_len.values():
        levels = signature_levels(np.stack([vals[i] for i in idx]), m)
        out[idx] = np.concatenate(levels, axis=1)
    return out


def chen_product(a: np.ndarray, b: np.ndarray, P: int, m: int) -> np.ndarray:
    """Truncated tensor product of two unit-extended signature vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    sl = [slice(0, 1)] + [slice(s.start + 1, s.stop + 1) for s in level_slices(P, m)]
    out = np.zeros(sl[-1].stop)
    for k in range(m + 1):
        acc = np.zeros(P**k)
        for i in range(k + 1):
            acc += np.outer(a[sl[i]], b[sl[k - i]]).ravel()
        out[sl[k]] = acc
    return out


def write_sig_matrix(path: str | FsPath, S: np.ndarray) -> None:
    """Binary dump: two little-endian uint32 (rows, cols) then float64 row-major."""
    S = np.ascontiguousarray(S, dtype="<f8")
    n, d = S.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", n, d))
        fh.write(S.tobytes(order="C"))


def read_sig_matrix(path: str | FsPath) -> np.ndarray:
    with open(path, "rb") as fh:
        n, d = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * d:
        raise ContractError(f"{path}: expected {n * d} doubles, found {data.size}")
    return data.reshape(n, d).astype(float)
