import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from funcobs import numkit
from funcobs.errors import DimensionMismatch, NonFinite

from oracles import exact_pinv, exact_rank


def int_matrices(max_side=6, lo=-3, hi=3):
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shapes.flatmap(lambda s: arrays(np.int64, s, elements=st.integers(lo, hi)))


def factor_rank(rng, rows, cols, k):
    return rng.standard_normal((rows, k)) @ rng.standard_normal((k, cols))


# --- rank -------------------------------------------------------------------


def test_rank_identity():
    assert numkit.rank(np.eye(3)) == 3


def test_rank_singular_e():
    assert numkit.rank([[1, 0, 0], [0, 0, 0], [0, 1, 0]]) == 2


def test_rank_known_factor_rank():
    rng = np.random.default_rng(1)
    M = rng.standard_normal((5, 2)) @ rng.standard_normal((3, 2)).T
    assert numkit.rank(M) == 2


def test_rank_decision_fields():
    d = numkit.rank_tol(np.diag([3.0, 1e-20, 2.0]))
    assert d.rank == 2
    assert np.all(np.diff(d.singular_values) <= 0)
    assert d.tolerance_used == pytest.approx(3 * 3.0 * numkit.EPS)
    assert d.rank == int(np.sum(d.singular_values > d.tolerance_used))


def test_rank_override_tolerance():
    M = np.diag([1.0, 1e-6])
    assert numkit.rank(M) == 2
    assert numkit.rank(M, tol=1e-3) == 1


def test_rank_empty():
    assert numkit.rank(np.zeros((0, 3))) == 0


def test_nonfinite_rejected():
    with pytest.raises(NonFinite):
        numkit.rank([[1.0, np.nan]])
    with pytest.raises(NonFinite):
        numkit.pinv([[np.inf]])


@settings(max_examples=200, deadline=None)
@given(int_matrices())
def test_rank_matches_exact_oracle(M):
    assert numkit.rank(M) == exact_rank(M)


# --- pinv -------------------------------------------------------------------


def test_pinv_examples():
    assert np.allclose(numkit.pinv(np.eye(3)), np.eye(3))
    Z = numkit.pinv(np.zeros((2, 3)))
    assert Z.shape == (3, 2) and not Z.any()
    assert np.allclose(numkit.pinv([[-1.0, 0.0]]), [[-1.0], [0.0]])


def test_pinv_row_vector_formula():
    a = np.array([[3.0, -4.0, 12.0]])
    assert np.allclose(numkit.pinv(a), a.T / np.sum(a**2))


def penrose_defects(M, P):
    nM, nP = max(np.linalg.norm(M), 1e-300), max(np.linalg.norm(P), 1e-300)
    return (
        np.linalg.norm(M @ P @ M - M) / nM,
        np.linalg.norm(P @ M @ P - P) / nP,
        np.linalg.norm(M @ P - (M @ P).T),
        np.linalg.norm(P @ M - (P @ M).T),
    )


@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 8),
    st.integers(1, 8),
    st.integers(0, 8),
    st.integers(0, 2**32 - 1),
)
def test_penrose_conditions_random(rows, cols, k, seed):
    rng = np.random.default_rng(seed)
    k = min(k, rows, cols)
    M = factor_rank(rng, rows, cols, k) if k else np.zeros((rows, cols))
    assert max(penrose_defects(M, numkit.pinv(M))) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(int_matrices(max_side=5))
def test_pinv_matches_exact_oracle(M):
    P = numkit.pinv(M)
    assert np.allclose(P, exact_pinv(M), atol=1e-9)


# --- compressions -------------------------------------------------------------


def test_row_compress_full_row_rank():
    M = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 1.0]])
    U, r = numkit.row_compress(M)
    assert r == 2
    assert np.allclose(U.T @ U, np.eye(2))


def test_row_compress_single_row():
    U, r = numkit.row_compress([[0.0, 0.0], [1.0, 0.0]])
    assert r == 1
    assert np.allclose((U @ np.array([[0.0, 0.0], [1.0, 0.0]]))[1], 0.0)


def test_row_compress_rank_two():
    rng = np.random.default_rng(7)
    M = factor_rank(rng, 4, 4, 2)
    U, r = numkit.row_compress(M)
    assert r == 2
    assert np.linalg.norm((U @ M)[2:]) <= 1e-10 * np.linalg.norm(M)


def test_column_compress_zero():
    V, r = numkit.column_compress_right(np.zeros((2, 3)))
    assert r == 0
    assert np.allclose(V.T @ V, np.eye(3))


def test_column_compress_single_pivot():
    V, r = numkit.column_compress_right([[0.0, 1.0]])
    MV = np.array([[0.0, 1.0]]) @ V
    assert r == 1
    assert MV[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert abs(MV[0, 1]) == pytest.approx(1.0)


def test_column_compress_rank_two():
    rng = np.random.default_rng(8)
    M = factor_rank(rng, 3, 5, 2)
    V, r = numkit.column_compress_right(M)
    assert r == 2
    assert np.linalg.norm((M @ V)[:, :3]) <= 1e-10 * np.linalg.norm(M)


@settings(max_examples=200, deadline=None)
@given(int_matrices())
def test_compressions_sound(M):
    M = M.astype(float)
    r0 = numkit.rank(M)
    U, r = numkit.row_compress(M)
    V, c = numkit.column_compress_right(M)
    assert r == c == r0
    assert np.linalg.norm(U.T @ U - np.eye(U.shape[0])) <= 1e-10
    assert np.linalg.norm(V.T @ V - np.eye(V.shape[0])) <= 1e-10
    assert numkit.rank(U @ M) == r0
    assert numkit.rank(M @ V) == r0
    scale = max(np.linalg.norm(M), 1.0)
    assert np.linalg.norm((U @ M)[r:]) <= 1e-10 * scale
    MV = M @ V
    assert np.linalg.norm(MV[:, : M.shape[1] - c]) <= 1e-10 * scale
    # the surviving blocks have full rank
    assert numkit.rank((U @ M)[:r]) == r
    assert numkit.rank(MV[:, M.shape[1] - c :]) == c


def test_compressions_deterministic():
    M = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 1.0]])
    assert np.array_equal(numkit.row_compress(M)[0], numkit.row_compress(M.copy())[0])
    assert np.array_equal(numkit.column_compress_right(M)[0], numkit.column_compress_right(M.copy())[0])


# --- observability, eigenvalues ------------------------------------------------


def test_observability_examples():
    O = numkit.observability_matrix(np.zeros((2, 2)), np.eye(2))
    assert np.array_equal(O, np.vstack([np.eye(2), np.zeros((2, 2))]))
    O = numkit.observability_matrix([[-1.0]], [[1.0], [1.0]])
    assert np.array_equal(O, [[1.0], [1.0]])
    O = numkit.observability_matrix([[0.0, 1.0], [0.0, 0.0]], [[1.0, 0.0]])
    assert np.array_equal(O, np.eye(2))


def test_observability_dimension_errors():
    with pytest.raises(DimensionMismatch):
        numkit.observability_matrix(np.zeros((2, 3)), np.zeros((1, 3)))
    with pytest.raises(DimensionMismatch):
        numkit.observability_matrix(np.zeros((2, 2)), np.zeros((1, 3)))


def test_eigenvalue_examples():
    assert np.allclose(np.sort_complex(numkit.eigenvalues(np.diag([-1.0, 2.0]))), [-1, 2])
    ev = numkit.eigenvalues([[0.0, 1.0], [-1.0, 0.0]])
    assert np.allclose(np.sort_complex(ev), [-1j, 1j])
    companion = np.array([[3.0, -2.0], [1.0, 0.0]])
    assert np.allclose(np.sort_complex(numkit.eigenvalues(companion)), [1, 2])


def test_eigenvalues_nonsquare():
    with pytest.raises(DimensionMismatch):
        numkit.eigenvalues(np.zeros((2, 3)))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_gram_eigenvalues_are_squared_singular_values(rows, cols, seed):
    A = np.random.default_rng(seed).standard_normal((rows, cols))
    ev = numkit.eigenvalues(A.T @ A)
    assert np.all(np.abs(ev.imag) <= 1e-10)
    assert np.all(ev.real >= -1e-10)
    s = numkit.singular_values(A)
    got = np.sort(np.sqrt(np.clip(ev.real, 0, None)))[::-1][: len(s)]
    assert np.allclose(got, s, rtol=1e-8, atol=1e-8 * s[0])


def test_orth_rows_spans_row_space():
    M = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [0.0, 0.0, 3.0]])
    Q = numkit.orth_rows(M)
    assert Q.shape == (2, 3)
    assert np.allclose(Q @ Q.T, np.eye(2))
    assert numkit.rank(np.vstack([Q, M])) == 2
