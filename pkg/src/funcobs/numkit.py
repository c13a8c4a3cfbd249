"""
Tolerant-rank dense linear algebra.

Every rank decision in the package goes through :func:`rank_tol`, and both
orthogonal compressions are read off the same singular value decomposition
that decides the rank, so the rank and the orthogonal factor can never
disagree.

Default tolerance (same convention as MATLAB ``rank`` and
``numpy.linalg.matrix_rank``)::

    tol = max(rows, cols) * sigma_max * eps
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, NoConvergence, NonFinite

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class RankDecision:
    rank: int
    singular_values: np.ndarray
    tolerance_used: float


def as_matrix(M, dtype=float) -> np.ndarray:
    """Coerce to a finite 2-D array (raises NonFinite on NaN/Inf)."""
    arr = np.asarray(M, dtype=dtype)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 0)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite("matrix has NaN or Inf entries")
    return arr


def _coerce(M) -> np.ndarray:
    arr = np.asarray(M)
    return as_matrix(arr, dtype=complex if np.iscomplexobj(arr) else float)


def default_tolerance(shape, sigma_max: float) -> float:
    return max(shape) * sigma_max * EPS if max(shape, default=0) else 0.0


def singular_values(M) -> np.ndarray:
    A = _coerce(M)
    if A.size == 0:
        return np.zeros(0)
    try:
        return np.linalg.svd(A, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc


def rank_tol(M, tol: Optional[float] = None) -> RankDecision:
    """Numerical rank: count of singular values strictly above ``tol``."""
    A = _coerce(M)
    s = singular_values(A)
    smax = float(s[0]) if s.size else 0.0
    used = default_tolerance(A.shape, smax) if tol is None else float(tol)
    if used < 0:
        raise ValueError("tolerance must be nonnegative")
    return RankDecision(int(np.sum(s > used)), s, used)


def rank(M, tol: Optional[float] = None) -> int:
    return rank_tol(M, tol).rank


def _svd_full(A: np.ndarray):
    m, n = A.shape
    if A.size == 0:
        return np.eye(m), np.zeros(0), np.eye(n)
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    return U, s, Vt


def _fix_signs(Q: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive, for reproducibility
    if Q.size == 0:
        return Q
    idx = np.argmax(np.abs(Q), axis=0)
    signs = np.sign(Q[idx, np.arange(Q.shape[1])])
    signs[signs == 0] = 1.0
    return Q * signs


def pinv(M, tol: Optional[float] = None) -> np.ndarray:
    """Moore-Penrose inverse from the SVD, dropping singular values <= tol."""
    A = _coerce(M)
    m, n = A.shape
    if A.size == 0:
        return np.zeros((n, m), dtype=A.dtype)
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    used = default_tolerance(A.shape, float(s[0])) if tol is None else float(tol)
    keep = s > used
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (Vt.conj().T * inv) @ U.conj().T


def row_compress(M, tol: Optional[float] = None):
    """Orthogonal ``U`` with ``U @ M = [M_hat; 0]``, ``M_hat`` full row rank.

    Returns ``(U, top_rank)``.
    """
    A = as_matrix(M)
    r = rank_tol(A, tol).rank
    U, _, _ = _svd_full(A)
    U = _fix_signs(U)
    return U.T.copy(), r


def column_compress_right(M, tol: Optional[float] = None):
    """Orthogonal ``V`` with ``M @ V = [0 | A1]``, ``A1`` full column rank.

    The zero block takes the leading ``cols - right_rank`` columns.
    Returns ``(V, right_rank)``.
    """
    A = as_matrix(M)
    n = A.shape[1]
    r = rank_tol(A, tol).rank
    _, _, Vt = _svd_full(A)
    V = _fix_signs(Vt.T)
    V = np.hstack([V[:, r:], V[:, :r]]) if n else V
    return V, r


def observability_matrix(A_sq, C_any) -> np.ndarray:
    """Stack ``[C; CA; ...; CA^(q-1)]``."""
    A = as_matrix(A_sq)
    C = as_matrix(C_any)
    q = A.shape[0]
    if A.shape[1] != q:
        raise DimensionMismatch(f"A must be square, got {A.shape}")
    if C.shape[1] != q:
        raise DimensionMismatch(f"C has {C.shape[1]} columns, A is {q}x{q}")
    blocks = []
    Ck = C
    for _ in range(q):
        blocks.append(Ck)
        Ck = Ck @ A
    if not blocks:
        return np.zeros((0, 0))
    return np.vstack(blocks)


def eigenvalues(A_sq) -> np.ndarray:
    A = as_matrix(A_sq)
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"A must be square, got {A.shape}")
    if A.size == 0:
        return np.zeros(0, dtype=complex)
    try:
        return np.linalg.eigvals(A).astype(complex)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc


def orth_rows(M, tol: Optional[float] = None) -> np.ndarray:
    """Orthonormal basis (as rows) of the row space of ``M``."""
    A = as_matrix(M)
    r = rank_tol(A, tol).rank
    _, _, Vt = _svd_full(A)
    return _fix_signs(Vt[:r].T).T.copy()
