"""
Staircase decomposition and reduction to the surviving semistates.

The staircase peels off, one block at a time, semistate directions that the
algebraic rows force to zero.  After ``k - 1`` peeling steps the remaining
``n_k`` coordinates obey

    E11 x_k' = A11 x_k + B11 u
          0  = A21 x_k + B21 u

and the functional becomes ``z = K11 x_k``.  :func:`split_functional` then
separates the part of ``z`` that is an algebraic function of the output
``y1 = [-B21 u; y] = C11 x_k`` from the part ``S11 x_k`` that must be
estimated dynamically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import block_diag

from . import numkit
from .model import DescriptorSystem, TolerancePolicy

# multiple of eps * ||[E A B]|| treated as zero inside the staircase
NOISE_FACTOR = 10.0


@dataclass(frozen=True)
class PeelStep:
    """Bookkeeping for one peeling iteration.

    ``rows`` are the indices (in the final transformed row order) of the
    rows whose ``[E B]`` part vanished; ``cols`` is the number of columns
    still active when the step ran; the step split off the trailing
    ``a_rank`` of those columns.
    """

    rows: tuple
    cols: int
    a_rank: int
    n_rank: int


@dataclass(frozen=True, eq=False)
class StaircaseDecomposition:
    U: np.ndarray
    V: np.ndarray
    k: int
    col_block_sizes: tuple
    row_block_sizes: tuple
    E11: np.ndarray
    A11: np.ndarray
    B11: np.ndarray
    B21: np.ndarray
    A21: np.ndarray
    Ai_ranks: tuple
    steps: tuple = ()
    Ck: Optional[np.ndarray] = None

    @property
    def n_k(self) -> int:
        return self.col_block_sizes[0]

    @property
    def m1(self) -> int:
        return self.E11.shape[0]

    @property
    def m2(self) -> int:
        return self.A21.shape[0]

    @property
    def n_ranks(self) -> tuple:
        """Row ranks ``n_i`` of ``[E~_i B~_i]``, i = 1..k-1."""
        return tuple(s.n_rank for s in self.steps)

    def pattern_residual(self, E, A, B) -> float:
        """Largest norm among blocks that must vanish in ``UEV, UAV, UB``."""
        Et, At, Bt = self.U @ E @ self.V, self.U @ A @ self.V, self.U @ B
        worst = 0.0
        for s in self.steps:
            rows = list(s.rows)
            blocks = (
                Et[rows, : s.cols],
                At[rows, : s.cols - s.a_rank],
                Bt[rows, :],
            )
            worst = max([worst] + [np.linalg.norm(b) for b in blocks if b.size])
        alg = list(range(self.m1, self.m1 + self.m2))
        if alg and self.n_k:
            worst = max(worst, np.linalg.norm(Et[alg, : self.n_k]))
        return float(worst)

    def A_blocks(self, A) -> list[np.ndarray]:
        """The full-column-rank blocks ``A_1, ..., A_{k-1}`` in peeling order."""
        At = self.U @ A @ self.V
        return [At[list(s.rows), s.cols - s.a_rank : s.cols] for s in self.steps]


def staircase(E, A, B, tol: Optional[TolerancePolicy] = None) -> StaircaseDecomposition:
    """Orthogonal ``U, V`` exposing the forced-zero semistates of ``(E, A, B)``."""
    tol = tol or TolerancePolicy()
    rt = tol.rank_tol_override
    E = numkit.as_matrix(E)
    A = numkit.as_matrix(A)
    B = numkit.as_matrix(B)
    m, n = E.shape
    if B.shape[0] != m:
        B = B.reshape(m, -1)
    l = B.shape[1]

    # Blocks met after a few orthogonal updates carry rounding noise of order
    # eps * ||[E A B]||, which the per-block default tolerance does not see.
    noise = NOISE_FACTOR * max(m, n + l, 1) * numkit.EPS * max(
        [np.linalg.norm(X) for X in (E, A, B) if X.size] + [0.0]
    )

    def step_tol(M):
        if rt is not None:
            return rt
        s = numkit.singular_values(M)
        return max(numkit.default_tolerance(M.shape, s[0] if s.size else 0.0), noise)

    U_acc = np.eye(m)
    V_acc = np.eye(n)
    Eh, Ah, Bh = E, A, B
    rows_c, cols_c = m, n
    raw_steps = []  # (row_count_removed, cols_c, a_rank, n_rank)

    while True:
        EB = np.hstack([Eh, Bh])
        U1, r = numkit.row_compress(EB, step_tol(EB))
        if r == rows_c:
            break
        U1A = U1 @ Ah
        A_check, A_tilde = U1A[:r], U1A[r:]
        V1, a = numkit.column_compress_right(A_tilde, step_tol(A_tilde))
        keep = cols_c - a
        Eh = ((U1 @ Eh)[:r] @ V1)[:, :keep]
        Ah = (A_check @ V1)[:, :keep]
        Bh = (U1 @ Bh)[:r]
        U_acc = block_diag(U1, np.eye(m - rows_c)) @ U_acc
        V_acc = V_acc @ block_diag(V1, np.eye(n - cols_c))
        raw_steps.append((rows_c - r, cols_c, a, r))
        rows_c, cols_c = r, keep

    P_o, m1 = numkit.row_compress(Eh, step_tol(Eh))
    U = block_diag(P_o, np.eye(m - rows_c)) @ U_acc
    V = V_acc
    n_k = cols_c

    Et = _snap(U @ E @ V, noise)
    At = _snap(U @ A @ V, noise)
    Bt = _snap(U @ B, noise)
    E11 = Et[:m1, :n_k]
    A11 = At[:m1, :n_k]
    A21 = At[m1:rows_c, :n_k]
    B11 = Bt[:m1]
    B21 = Bt[m1:rows_c]

    # rows removed at step i sit directly below those removed at step i+1
    steps = []
    end = m
    for removed, cols, a, nr in raw_steps:
        steps.append(PeelStep(tuple(range(end - removed, end)), cols, a, nr))
        end -= removed

    Ai_ranks = tuple(s.a_rank for s in steps)
    return StaircaseDecomposition(
        U=U,
        V=V,
        k=len(steps) + 1,
        col_block_sizes=(n_k,) + tuple(reversed(Ai_ranks)),
        row_block_sizes=(m1, rows_c - m1) + tuple(len(s.rows) for s in reversed(steps)),
        E11=E11,
        A11=A11,
        B11=B11,
        B21=B21,
        A21=A21,
        Ai_ranks=Ai_ranks,
        steps=tuple(steps),
    )


def _snap(M: np.ndarray, floor: float) -> np.ndarray:
    """Zero the entries that are rounding residue of the orthogonal transforms."""
    M = M.copy()
    M[np.abs(M) <= floor] = 0.0
    return M


def _noise_floor(*mats) -> float:
    dims = max([1] + [max(X.shape) for X in mats if X.ndim == 2])
    scale = max([np.linalg.norm(X) for X in mats if X.size] + [0.0])
    return NOISE_FACTOR * dims * numkit.EPS * scale


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    E11: np.ndarray
    A11: np.ndarray
    B11: np.ndarray
    B21: np.ndarray
    A21: np.ndarray
    Ck: np.ndarray
    K11: np.ndarray
    C11: np.ndarray
    V: np.ndarray = field(repr=False, default=None)

    @property
    def n_k(self) -> int:
        return self.E11.shape[1]

    @property
    def m1(self) -> int:
        return self.E11.shape[0]

    @property
    def m2(self) -> int:
        return self.A21.shape[0]

    @property
    def l(self) -> int:
        return self.B11.shape[1]

    @property
    def p(self) -> int:
        return self.Ck.shape[0]

    @property
    def r(self) -> int:
        return self.K11.shape[0]

    def lift(self, x_k: np.ndarray) -> np.ndarray:
        """Map reduced coordinates back: ``x = V [x_k; 0]``."""
        x_k = np.asarray(x_k, dtype=float)
        n = self.V.shape[0]
        pad = np.zeros(x_k.shape[:-1] + (n - self.n_k,))
        return np.concatenate([x_k, pad], axis=-1) @ self.V.T

    def restrict(self, x: np.ndarray) -> np.ndarray:
        """Reduced coordinates of a full semistate ``x``."""
        return (np.asarray(x, dtype=float) @ self.V)[..., : self.n_k]

    def y1(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.concatenate([-self.B21 @ u, y])


def reduce(sys: DescriptorSystem, dec: StaircaseDecomposition) -> ReducedSystem:
    """Drop the forced-zero semistates and transform ``C``, ``K`` accordingly."""
    n_k = dec.n_k
    Ck = _snap((sys.C @ dec.V)[:, :n_k], _noise_floor(sys.C))
    K11 = _snap((sys.K @ dec.V)[:, :n_k], _noise_floor(sys.K))
    C11 = np.vstack([dec.A21, Ck])
    return ReducedSystem(
        E11=dec.E11,
        A11=dec.A11,
        B11=dec.B11,
        B21=dec.B21,
        A21=dec.A21,
        Ck=Ck,
        K11=K11,
        C11=C11,
        V=dec.V,
    )


@dataclass(frozen=True, eq=False)
class FunctionalSplit:
    """``K11 = coeff_S @ S11 + coeff_C @ C11`` with ``row(S11)`` independent of ``row(C11)``."""

    q: int
    S11: np.ndarray
    coeff_S: np.ndarray
    coeff_C: np.ndarray

    def residual(self, red: ReducedSystem) -> float:
        return float(np.linalg.norm(red.K11 - self.coeff_S @ self.S11 - self.coeff_C @ red.C11))


def split_functional(red: ReducedSystem, tol: Optional[TolerancePolicy] = None) -> FunctionalSplit:
    """Separate the dynamically estimated part of ``z`` from the part read off ``y1``.

    ``q = rank [K11; C11] - rank C11``.  ``S11`` is an orthonormal basis of a
    complement of ``row(K11) ∩ row(C11)`` inside ``row(K11)``: the left
    singular vectors of ``K11`` projected away from ``row(C11)`` pick the
    combinations of ``K11`` rows that carry new information.
    """
    tol = tol or TolerancePolicy()
    rt = tol.rank_tol_override
    K11, C11 = red.K11, red.C11
    n_k = red.n_k
    r = K11.shape[0]

    q = tol.rank(np.vstack([K11, C11])) - tol.rank(C11)
    q = max(0, min(q, r, n_k))

    if q == 0:
        S11 = np.zeros((0, n_k))
    else:
        proj = np.eye(n_k) - numkit.pinv(C11, rt) @ C11
        Uk, _, _ = np.linalg.svd(K11 @ proj, full_matrices=False)
        S_raw = Uk[:, :q].T @ K11
        _, _, Vt = np.linalg.svd(S_raw, full_matrices=False)
        S11 = numkit._fix_signs(Vt[:q].T).T.copy()

    stacked = np.vstack([S11, C11])
    coeffs = K11 @ numkit.pinv(stacked, rt) if stacked.size else np.zeros((r, stacked.shape[0]))
    return FunctionalSplit(q=q, S11=S11, coeff_S=coeffs[:, :q], coeff_C=coeffs[:, q:])
