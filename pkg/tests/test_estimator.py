import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import noiseless_instance, sar_solve
from oracles import (
    fixed_point_prediction,
    grid_box_minimum,
    normal_equations,
    penalized_gradient,
    profiled_objective,
)
from mpenssar.errors import ContractError, SingularityError
from mpenssar.estimator import (
    MpenssarFit,
    SpectralDesign,
    fit,
    fit_design,
    fit_R,
    load_fit,
    n_components_below,
    penssar_fit,
    predict_design,
    profile_coefficients,
    projssar_fit,
    save_fit,
    solve_box_lsq,
)
from mpenssar.selection import NestedSignatures, empirical_risks
from mpenssar.spatial import knn_weights


def unit(S):
    return np.column_stack([np.ones(len(S)), S])


def test_profile_interpolates_square_system():
    rng = np.random.default_rng(0)
    S = rng.normal(size=(4, 3))
    C = rng.normal(size=(4, 2))
    Y = unit(S) @ C
    mu, beta = profile_coefficients(unit(S), Y, np.zeros((4, 4)), np.zeros((2, 2)), 0.0)
    np.testing.assert_allclose(mu, C[:1], atol=1e-10)
    np.testing.assert_allclose(beta, C[1:], atol=1e-10)


def test_profile_large_lambda_limit():
    rng = np.random.default_rng(1)
    S = rng.normal(size=(20, 3))
    Y = rng.normal(size=(20, 2))
    mu, beta = profile_coefficients(unit(S), Y, np.zeros((20, 20)), np.zeros((2, 2)), 1e9)
    assert np.abs(beta).max() < 1e-7
    np.testing.assert_allclose(mu[0], Y.mean(axis=0), atol=1e-6)


def test_profile_matches_normal_equations():
    rng = np.random.default_rng(2)
    S = rng.normal(size=(6, 3))
    Y = rng.normal(size=(6, 2))
    W = knn_weights(rng.normal(size=(6, 2)), 2)
    R = rng.uniform(-1, 1, size=(2, 2))
    mu, beta = profile_coefficients(unit(S), Y, W, R, 0.1)
    M = Y - W.toarray() @ Y @ R
    mu_o, beta_o = normal_equations(unit(S), M, 0.1)
    np.testing.assert_allclose(mu, mu_o, atol=1e-10)
    np.testing.assert_allclose(beta, beta_o, atol=1e-10)
    assert np.abs(penalized_gradient(unit(S), M, mu, beta, 0.1)).max() < 1e-8


def test_profile_singular_at_zero_lambda():
    S = np.random.default_rng(3).normal(size=(5, 8))
    with pytest.raises(SingularityError, match="lambda > 0"):
        profile_coefficients(unit(S), np.ones((5, 1)), np.zeros((5, 5)), np.zeros((1, 1)), 0.0)


def test_profile_requires_unit_column():
    with pytest.raises(ContractError):
        profile_coefficients(np.zeros((3, 2)), np.ones((3, 1)), np.zeros((3, 3)), [[0.0]], 0.1)


def test_fit_R_flat_objective_gives_zero():
    rng = np.random.default_rng(4)
    R = fit_R(unit(rng.normal(size=(10, 2))), rng.normal(size=(10, 3)), np.zeros((10, 10)), 0.1)
    np.testing.assert_array_equal(R, 0.0)


@pytest.mark.parametrize("seed", range(6))
def test_fit_R_scalar_closed_form(seed):
    rng = np.random.default_rng(seed)
    n = 15
    S = rng.normal(size=(n, 2))
    W = knn_weights(rng.normal(size=(n, 2)), 3).toarray()
    y = rng.normal(size=(n, 1)) * rng.uniform(0.1, 5)
    design = SpectralDesign(S)
    a = design.residual(y, 0.05)[:, 0]
    b = design.residual(W @ y, 0.05)[:, 0]
    expected = np.clip((a @ b) / (b @ b), -1, 1)
    assert fit_R(unit(S), y, W, 0.05)[0, 0] == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_fit_R_matches_grid_search(seed):
    rng = np.random.default_rng(100 + seed)
    n = 12
    S = rng.normal(size=(n, 3))
    W = knn_weights(rng.normal(size=(n, 2)), 3).toarray()
    Y = rng.normal(size=(n, 2))
    R = fit_R(unit(S), Y, W, 0.1)
    obj = profiled_objective(S, Y, W, R, 0.1)
    grid_min, grid_arg = grid_box_minimum(S, Y, W, 0.1)
    assert obj <= grid_min + 1e-12
    # the grid point nearest the optimum is within one cell
    near = np.clip(np.round(R / 1e-3) * 1e-3, -1, 1)
    assert grid_min <= profiled_objective(S, Y, W, near, 0.1) + 1e-12


def test_joint_equals_columnwise():
    d = noiseless_instance(5)
    rng = np.random.default_rng(5)
    Y = d["Y"] + rng.normal(size=d["Y"].shape)
    St = unit(d["S"])
    a = fit_R(St, Y, d["W"], 0.01)
    b = fit_R(St, Y, d["W"], 0.01, joint=True)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_box_feasibility_and_convergence_flag():
    rng = np.random.default_rng(6)
    B = rng.normal(size=(30, 3)) * [1.0, 10.0, 100.0]
    A = rng.normal(size=(30, 3)) * 1e3
    R, it, conv, pg = solve_box_lsq(B, A)
    assert conv and pg <= 1e-10 * max(1.0, 2 / 30 * np.abs(B.T @ A).max())
    assert np.all(np.abs(R) <= 1.0)
    assert np.any(np.abs(R) == 1.0)


@pytest.mark.parametrize("seed", range(3))
def test_noiseless_recovery(seed):
    d = noiseless_instance(seed)
    f = fit(d["aps"], d["Y"], d["W"], 2, 1e-8)
    assert np.abs(f.R_hat - d["R0"]).max() < 1e-4
    assert f.train_objective < 1e-8
    assert f.beta_hat.shape == (12, 3) and f.converged  # 3 augmented channels


def test_plain_paths_are_augmented():
    d = noiseless_instance(7)
    a = fit(d["paths"], d["Y"], d["W"], 2, 1e-3)
    b = fit(d["aps"], d["Y"], d["W"], 2, 1e-3)
    np.testing.assert_array_equal(a.R_hat, b.R_hat)


def test_constant_responses():
    d = noiseless_instance(8)
    Y = np.tile([[2.0, -1.0]], (len(d["Y"]), 1))
    f = fit(d["aps"], Y, d["W"], 2, 1e-2)
    fitted = d["W"].matrix @ Y @ f.R_hat + f.mu_hat + d["S"] @ f.beta_hat
    np.testing.assert_allclose(fitted, Y, atol=1e-8)
    assert np.abs(f.beta_hat).max() < 1e-8


def test_penssar_is_single_column_fit():
    d = noiseless_instance(9)
    a = penssar_fit(d["aps"], d["Y"][:, 1], d["W"], 2, 0.1)
    b = fit(d["aps"], d["Y"][:, [1]], d["W"], 2, 0.1)
    np.testing.assert_array_equal(a.R_hat, b.R_hat)
    assert a.Q == 1
    with pytest.raises(ContractError):
        penssar_fit(d["aps"], d["Y"], d["W"], 2, 0.1)


@pytest.mark.parametrize("seed", range(3))
def test_penalized_objective_non_increasing_in_order(seed):
    # nested designs: padding beta with zeros keeps the lower-order value
    d = noiseless_instance(seed, n=80)
    Y = d["Y"] + np.random.default_rng(seed).normal(size=d["Y"].shape)
    cache = NestedSignatures(d["aps"], 4)
    for lam in (1e-6, 1e-2, 1.0):
        vals = []
        for m in range(1, 5):
            f = fit_design(cache.S(m), Y, d["W"], lam, design=cache.design(m))
            vals.append(f.train_objective + lam * np.sum(f.beta_hat**2))
        assert np.all(np.diff(vals) <= 1e-10)


def test_empirical_risk_non_increasing_near_zero_lambda():
    d = noiseless_instance(3, n=80)
    Y = d["Y"] + np.random.default_rng(3).normal(size=d["Y"].shape)
    L = empirical_risks(NestedSignatures(d["aps"], 4), Y, d["W"], 1e-8)
    assert np.all(np.diff(L) <= 1e-8)


def test_predict_without_spatial_term_is_plug_in():
    rng = np.random.default_rng(10)
    f = MpenssarFit(np.zeros((2, 2)), rng.normal(size=(1, 2)), rng.normal(size=(3, 2)), 1, 0.1,
                    0.0, 3)
    S_new = rng.normal(size=(4, 3))
    W = knn_weights(rng.normal(size=(9, 2)), 3)
    np.testing.assert_allclose(predict_design(f, S_new, W, rng.normal(size=(5, 2))),
                               f.mu_hat + S_new @ f.beta_hat)


def test_predict_matches_fixed_point_iteration():
    rng = np.random.default_rng(11)
    n_obs, n_new = 9, 3
    W = knn_weights(rng.normal(size=(n_obs + n_new, 2)), 3)
    R = rng.uniform(-0.4, 0.4, size=(2, 2))
    f = MpenssarFit(R, rng.normal(size=(1, 2)), rng.normal(size=(3, 2)), 1, 0.1, 0.0, 3)
    S_new = rng.normal(size=(n_new, 3))
    Y_obs = rng.normal(size=(n_obs, 2))
    got = predict_design(f, S_new, W, Y_obs)
    want = fixed_point_prediction(R, f.mu_hat, f.beta_hat, S_new, W.toarray(), Y_obs)
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_predict_reproduces_training_units():
    d = noiseless_instance(12)
    f = fit(d["aps"], d["Y"], d["W"], 2, 1e-10)
    n = len(d["Y"])
    obs = np.arange(n // 2)
    new = np.arange(n // 2, n)
    Wfull = d["W"].subset(np.r_[obs, new], renormalize=False)
    pred = predict_design(f, d["S"][new], Wfull, d["Y"][obs])
    np.testing.assert_allclose(pred, d["Y"][new], atol=1e-8)


def test_projssar_dominant_direction():
    rng = np.random.default_rng(13)
    n = 60
    z = rng.normal(size=(n, 1))
    S = z @ np.ones((1, 5)) + 1e-3 * rng.normal(size=(n, 5))
    W = knn_weights(rng.normal(size=(n, 2)), 4)
    f = projssar_fit(None, rng.normal(size=n), W, 1, 0.95, S=S)
    assert f.n_components == 1
    assert f.fit.extra["n_components"] == 1


def test_n_components_equal_eigenvalues():
    assert n_components_below(np.full(3, 1 / 3), 0.95) == 2
    assert n_components_below(np.array([0.99, 0.01]), 0.95) == 1


def test_projssar_count_matches_eigen_oracle():
    rng = np.random.default_rng(14)
    n = 50
    S = rng.normal(size=(n, 8)) @ rng.normal(size=(8, 8))
    S[:, 3] = 2.0  # constant column is dropped
    W = knn_weights(rng.normal(size=(n, 2)), 4)
    f = projssar_fit(None, rng.normal(size=n), W, 1, 0.9, S=S)
    keep = S.std(axis=0) > 0
    ev = np.sort(np.linalg.eigvalsh(np.corrcoef(S[:, keep], rowvar=False)))[::-1]
    cum = np.cumsum(ev) / ev.sum()
    assert f.n_components == max(1, int(np.sum(cum < 0.9)))
    assert not f.keep[3]


def test_fit_serialization_round_trip(tmp_path):
    d = noiseless_instance(15)
    f = fit(d["aps"], d["Y"], d["W"], 2, 0.1)
    save_fit(tmp_path / "f.json", f)
    g = load_fit(tmp_path / "f.json")
    for a in ("R_hat", "mu_hat", "beta_hat", "sigma_hat"):
        np.testing.assert_array_equal(getattr(f, a), getattr(g, a))
    assert (g.m, g.lam, g.train_objective) == (f.m, f.lam, f.train_objective)


def test_projssar_serialization_round_trip(tmp_path):
    d = noiseless_instance(16)
    f = projssar_fit(d["aps"], d["Y"][:, 0], d["W"], 2)
    save_fit(tmp_path / "p.json", f)
    g = load_fit(tmp_path / "p.json")
    S = d["S"]
    np.testing.assert_array_equal(f.transform(S), g.transform(S))


def test_diagonal_R_makes_joint_and_separate_fits_comparable():
    rng = np.random.default_rng(17)
    d = noiseless_instance(17, n=150, r_scale=0.0)
    R0 = np.diag([0.5, -0.3, 0.4])
    Y = sar_solve(d["mu0"] + d["S"] @ d["beta0"] + 0.5 * rng.normal(size=d["Y"].shape),
                  d["W"].matrix, R0)
    joint = fit_design(d["S"], Y, d["W"], 1e-3)
    sep = [fit_design(d["S"], Y[:, [q]], d["W"], 1e-3) for q in range(3)]
    np.testing.assert_allclose(np.diag(joint.R_hat), [s.R_hat[0, 0] for s in sep], atol=0.1)
    r_joint = joint.train_objective
    r_sep = sum(s.train_objective for s in sep)
    assert r_joint <= r_sep + 1e-12 and r_sep <= 1.2 * r_joint


@settings(max_examples=25, deadline=None)
@given(st.integers(5, 25), st.integers(1, 6), st.integers(1, 3),
       st.floats(1e-4, 10.0), st.integers(0, 2**31))
def test_profiled_gradient_vanishes(n, p, Q, lam, seed):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(n, p))
    Y = rng.normal(size=(n, Q))
    W = knn_weights(rng.normal(size=(n, 2)), 2)
    R = rng.uniform(-1, 1, size=(Q, Q))
    mu, beta = profile_coefficients(unit(S), Y, W, R, lam)
    M = Y - W.toarray() @ Y @ R
    assert np.abs(penalized_gradient(unit(S), M, mu, beta, lam)).max() < 1e-8
