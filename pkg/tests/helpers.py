"""Small synthetic instances shared by several test modules."""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from mpenssar.path import augment
from mpenssar.signature import sig_matrix
from mpenssar.simulation import gen_gp_paths
from mpenssar.spatial import knn_weights


def sar_solve(M, W, R):
    """``Y`` with ``Y - W Y R = M`` via the dense vec system (test-only route)."""
    n, Q = M.shape
    Wd = W.toarray() if sp.issparse(W) else np.asarray(W)
    A = np.eye(n * Q) - np.kron(R.T, Wd)
    return np.linalg.solve(A, M.ravel(order="F")).reshape(n, Q, order="F")


def noiseless_instance(seed, n=120, P=2, m=2, Q=3, k=5, r_scale=0.5):
    rng = np.random.default_rng(seed)
    paths = gen_gp_paths(n, P, 21, seed=rng)
    aps = [augment(p) for p in paths]
    S = sig_matrix(aps, m)
    W = knn_weights(rng.uniform(0, 20, size=(n, 2)), k)
    R0 = rng.uniform(-r_scale, r_scale, size=(Q, Q))
    mu0 = rng.normal(size=(1, Q))
    beta0 = rng.normal(size=(S.shape[1], Q))
    Y = sar_solve(mu0 + S @ beta0, W.matrix, R0)
    return dict(paths=paths, aps=aps, S=S, W=W, R0=R0, mu0=mu0, beta0=beta0, Y=Y)
