"""On-disk dataset bundles: CSV tables plus an INI truth manifest."""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .errors import ContractError
from .path import Path, read_paths_csv, write_paths_csv
from .simulation import SimDataset
from .spatial import (
    SpatialWeights,
    read_coords_csv,
    read_weights_csv,
    write_coords_csv,
    write_weights_csv,
)

__all__ = ["Bundle", "write_bundle", "read_bundle", "read_matrix_csv", "write_matrix_csv",
           "format_matrix", "parse_matrix"]

COORDS, PATHS, Y_FILE, WEIGHTS, TRUTH = "coords.csv", "paths.csv", "Y.csv", "weights.csv", "truth.ini"


def write_matrix_csv(path, M, ids, prefix: str) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["unit_id", *[f"{prefix}{q + 1}" for q in range(M.shape[1])]])
        for uid, row in zip(ids, M):
            w.writerow([uid, *[repr(float(v)) for v in row]])


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "unit_id" or len(header) < 2:
            raise ContractError(f"{path}: expected header unit_id,<cols>")
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ContractError(f"{path}:{lineno}: expected {len(header)} fields")
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return ids, np.array(rows, dtype=float).reshape(-1, len(header) - 1)


def format_matrix(M) -> str:
    """Rows separated by ``;``, entries by spaces, shortest round-trip decimals."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return "; ".join(" ".join(repr(float(v)) for v in row) for row in M)


def parse_matrix(text: str) -> np.ndarray:
    rows = [r.split() for r in text.strip().split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"malformed matrix {text!r}")
    return np.array([[float(v) for v in r] for r in rows], dtype=float)


@dataclass
class Bundle:
    ids: list[str]
    coords: np.ndarray
    paths: list[Path]
    Y: np.ndarray
    W: SpatialWeights
    truth: dict | None = None

    @property
    def n(self) -> int:
        return len(self.ids)


def write_bundle(directory, data: SimDataset) -> dict[str, str]:
    """Write a simulated dataset; returns the artifact paths by role.

    ``paths.csv`` holds the covariates as fitters see them; the complete
    generating paths are kept in ``paths_X_full.csv`` (and ``paths_Z_full.csv``).
    """
    d = FsPath(directory)
    d.mkdir(parents=True, exist_ok=True)
    ids = [str(i + 1) for i in range(data.n)]
    out = {}

    def emit(role, name):
        out[role] = str(d / name)
        return d / name

    write_coords_csv(emit("coords", COORDS), data.coords, ids)
    write_paths_csv(emit("paths", PATHS), dict(zip(ids, data.fitting_paths())))
    write_paths_csv(emit("paths_X_full", "paths_X_full.csv"), dict(zip(ids, data.paths_X)))
    if data.paths_Z is not None:
        write_paths_csv(emit("paths_Z_full", "paths_Z_full.csv"), dict(zip(ids, data.paths_Z)))
    write_matrix_csv(emit("Y", Y_FILE), data.Y, ids, "y")
    write_matrix_csv(emit("theta", "theta.csv"), data.theta, ids, "theta")
    write_matrix_csv(emit("noise", "noise.csv"), data.noise, ids, "e")
    write_weights_csv(emit("weights", WEIGHTS), data.W)

    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["truth"] = {
        "design": data.design,
        "seed": str(data.seed),
        "R": format_matrix(data.R),
        "Sigma": format_matrix(data.Sigma),
        "eta": format_matrix(data.eta),
        "row_normalized": str(data.W.row_normalized).lower(),
    }
    with open(emit("truth", TRUTH), "w", encoding="utf-8") as fh:
        cp.write(fh)
    return out


def read_truth(path) -> dict:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    t = cp["truth"]
    return {
        "design": t.get("design"),
        "seed": t.getint("seed"),
        "R": parse_matrix(t["R"]),
        "Sigma": parse_matrix(t["Sigma"]),
        "eta": parse_matrix(t["eta"]) if "eta" in t else None,
        "row_normalized": t.getboolean("row_normalized", fallback=True),
    }


def read_bundle(directory) -> Bundle:
    """Read a bundle; units follow the order of ``coords.csv``."""
    d = FsPath(directory)
    ids, coords = read_coords_csv(d / COORDS)
    truth = read_truth(d / TRUTH) if (d / TRUTH).exists() else None
    paths_by_id = read_paths_csv(d / PATHS)
    y_ids, Y = read_matrix_csv(d / Y_FILE)
    missing = [u for u in ids if u not in paths_by_id]
    if missing:
        raise ContractError(f"units without paths: {missing[:5]}")
    if y_ids != ids:
        raise ContractError("Y.csv units do not match coords.csv order")
    row_norm = truth["row_normalized"] if truth else True
    W = read_weights_csv(d / WEIGHTS, len(ids), row_normalized=row_norm)
    return Bundle(ids, coords, [paths_by_id[u] for u in ids], Y, W, truth)
