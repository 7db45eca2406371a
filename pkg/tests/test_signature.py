import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import chen_oracle, riemann_signature
from mpenssar.errors import ContractError, DimensionCapError
from mpenssar.path import Path, augment
from mpenssar.signature import (
    chen_product,
    level_slices,
    max_order,
    read_sig_matrix,
    sig_dim,
    sig_matrix,
    signature,
    with_unit,
    write_sig_matrix,
)


@pytest.mark.parametrize("P,m,expected", [(1, 4, 4), (2, 2, 6), (3, 2, 12), (2, 8, 510),
                                          (3, 8, 9840), (11, 2, 132)])
def test_sig_dim(P, m, expected):
    assert sig_dim(P, m) == expected


def test_sig_dim_overflow_and_contract():
    with pytest.raises(OverflowError):
        sig_dim(10, 40)
    with pytest.raises(ContractError):
        sig_dim(0, 2)


def test_max_order_under_cap():
    assert max_order(3) == 8
    assert sig_dim(3, 9) > 10_000


def test_single_segment_closed_form():
    # exp of the increment (1, 2): levels d, d(x)d / 2
    s = signature(Path([0.0, 1.0], [[0.0, 0.0], [1.0, 2.0]]), 2)
    np.testing.assert_allclose(s.coeffs, [1, 2, 0.5, 1, 1, 2])


def test_level_one_is_total_increment():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(7, 3))
    s = signature(Path(np.arange(7.0), v), 3)
    np.testing.assert_allclose(s.coeffs[:3], v[-1] - v[0], atol=1e-14)


def test_symmetrized_level_two_is_half_outer_product():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(9, 2))
    c = signature(Path(np.arange(9.0), v), 2).coeffs
    L2 = c[2:].reshape(2, 2)
    d = v[-1] - v[0]
    np.testing.assert_allclose(L2 + L2.T, np.outer(d, d), atol=1e-12)


def test_matches_quadrature_oracle():
    rng = np.random.default_rng(2)
    v = rng.normal(scale=0.5, size=(6, 3))
    got = signature(Path(np.arange(6.0), v), 4).coeffs
    np.testing.assert_allclose(got, riemann_signature(v, 4, substeps=2000), atol=1e-6)


def test_chen_identity_against_multi_index_oracle():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(8, 2))
    a = with_unit(signature(Path(np.arange(5.0), v[:5]), 3)).coeffs
    b = with_unit(signature(Path(np.arange(4.0), v[4:]), 3)).coeffs
    whole = with_unit(signature(Path(np.arange(8.0), v), 3)).coeffs
    np.testing.assert_allclose(chen_product(a, b, 2, 3), whole, atol=1e-12)
    np.testing.assert_allclose(chen_oracle(a, b, 2, 3), whole, atol=1e-12)


def test_reparametrization_invariance_of_plain_signature():
    v = np.array([[0.0, 1.0], [1.0, 0.5], [2.0, 2.0]])
    a = signature(Path([0.0, 1.0, 2.0], v), 3).coeffs
    b = signature(Path([0.0, 0.1, 5.0], v), 3).coeffs
    np.testing.assert_array_equal(a, b)


def test_lower_order_is_prefix():
    rng = np.random.default_rng(4)
    paths = [augment(Path(np.arange(10.0), rng.normal(size=(10, 2)))) for _ in range(5)]
    S4 = sig_matrix(paths, 4)
    S2 = sig_matrix(paths, 2)
    np.testing.assert_array_equal(S4[:, : sig_dim(3, 2)], S2)


def test_sig_matrix_mixed_lengths_keeps_order():
    rng = np.random.default_rng(5)
    paths = [Path(np.arange(float(k)), rng.normal(size=(k, 2))) for k in (3, 5, 3, 7)]
    S = sig_matrix(paths, 3)
    for i, p in enumerate(paths):
        np.testing.assert_allclose(S[i], signature(p, 3).coeffs, atol=1e-14)


def test_dimension_cap():
    p = Path([0.0, 1.0], [[0.0] * 11, [1.0] * 11])
    with pytest.raises(DimensionCapError):
        signature(p, 4)
    assert len(signature(p, 2).coeffs) == 132


def test_with_unit_twice_rejected():
    s = with_unit(signature(Path([0, 1], [0.0, 1.0]), 2))
    assert s.coeffs[0] == 1.0
    with pytest.raises(ContractError):
        with_unit(s)


def test_binary_round_trip(tmp_path):
    S = np.random.default_rng(6).normal(size=(4, 6))
    write_sig_matrix(tmp_path / "s.bin", S)
    raw = (tmp_path / "s.bin").read_bytes()
    assert raw[:8] == (4).to_bytes(4, "little") + (6).to_bytes(4, "little")
    np.testing.assert_array_equal(read_sig_matrix(tmp_path / "s.bin"), S)


def test_level_slices_cover_vector():
    sl = level_slices(3, 3)
    assert [s.stop - s.start for s in sl] == [3, 9, 27]
    assert sl[-1].stop == sig_dim(3, 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**31))
def test_chen_split_anywhere(N, P, m, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(N + 1, P))
    k = int(rng.integers(1, N))
    t = np.arange(N + 1.0)
    a = with_unit(signature(Path(t[: k + 1], v[: k + 1]), m)).coeffs
    b = with_unit(signature(Path(t[k:], v[k:]), m)).coeffs
    whole = with_unit(signature(Path(t, v), m)).coeffs
    np.testing.assert_allclose(chen_product(a, b, P, m), whole, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 2**31))
def test_translation_invariance_without_basepoint(N, P, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(N, P))
    shift = rng.normal(size=P)
    a = signature(augment(Path(np.arange(N * 1.0), v), basepoint=False), 3).coeffs
    b = signature(augment(Path(np.arange(N * 1.0), v + shift), basepoint=False), 3).coeffs
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_basepoint_breaks_translation_invariance():
    v = np.array([[0.0], [1.0], [0.5]])
    a = signature(augment(Path([0.0, 1.0, 2.0], v)), 2).coeffs
    b = signature(augment(Path([0.0, 1.0, 2.0], v + 3.0)), 2).coeffs
    assert not np.allclose(a, b)


def test_words_ordering_is_lexicographic():
    # coefficient of word (i, j) for a path moving along channel 0 then channel 1
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    c = signature(Path([0.0, 1.0, 2.0], v), 2).coeffs[2:]
    words = list(itertools.product(range(2), repeat=2))
    got = dict(zip(words, c))
    assert got[(0, 1)] == pytest.approx(1.0)
    assert got[(1, 0)] == pytest.approx(0.0)
