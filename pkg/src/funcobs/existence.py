"""
Rank conditions for the existence of a functional ODE observer.

Two rank conditions are checked, in reduced form (normative) and optionally
on the full-size matrices as a cross-check:

* H1: ``rank Psi = rank Gamma`` -- the parameter equation
  ``[T Mbar Q -N] Gamma1 = [S11 0]`` is solvable;
* H2: ``rank Omega(lam) = rank Gamma`` for every ``Re lam >= 0`` -- some
  member of the solution family has a Hurwitz ``N``.

Under H1, H2 is equivalent to detectability of the pair ``(N1, N2)`` with
``N = N1 - Z N2``; that finite test replaces the sweep over ``lam``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from . import numkit
from .errors import PreconditionViolated, TooLarge
from .model import DescriptorSystem, TolerancePolicy
from .reduction import (
    FunctionalSplit,
    ReducedSystem,
    StaircaseDecomposition,
    reduce,
    split_functional,
    staircase,
)

# rank-drop decisions at numerically computed eigenvalues use a looser,
# sqrt(eps)-relative threshold (eigenvalue error dominates there)
DROP_RTOL = np.sqrt(numkit.EPS)
GENERIC_LAMBDA = 1.0 + 1.0j
# full-matrix rank drop: smallest relevant singular value relative to its generic-point value
FULL_DROP_RATIO = 1e-5
DEFAULT_MAX_N = 12


def gamma1(red: ReducedSystem, split: FunctionalSplit) -> np.ndarray:
    """``[E11 A11; C11 0; 0 C11; 0 S11]``."""
    C11, S11 = red.C11, split.S11
    zc, zs = np.zeros_like(C11), np.zeros_like(S11)
    return np.vstack(
        [
            np.hstack([red.E11, red.A11]),
            np.hstack([C11, zc]),
            np.hstack([zc, C11]),
            np.hstack([zs, S11]),
        ]
    )


def psi1(red: ReducedSystem, split: FunctionalSplit) -> np.ndarray:
    S11 = split.S11
    return np.vstack([gamma1(red, split), np.hstack([S11, np.zeros_like(S11)])])


def omega1(red: ReducedSystem, split: FunctionalSplit, lam: complex) -> np.ndarray:
    S11 = split.S11
    G = gamma1(red, split).astype(complex)
    rows = G.shape[0] - S11.shape[0]
    return np.vstack([G[:rows], np.hstack([S11, lam * S11])])


def _full_prefix(sys: DescriptorSystem) -> tuple[np.ndarray, int, int]:
    """``[F  cA  0; 0 E A]`` block rows shared by Gamma, Psi and Omega."""
    m, n, l, _, _ = sys.dims
    w = n + l
    calE = np.hstack([sys.E, np.zeros((m, l))])
    calA = np.hstack([sys.A, sys.B])
    F = np.zeros((n * m, n * w))
    for i in range(n):
        F[i * m : (i + 1) * m, i * w : (i + 1) * w] = calE
        if i + 1 < n:
            F[i * m : (i + 1) * m, (i + 1) * w : (i + 2) * w] = calA
    cA = np.zeros((n * m, n))
    if n:
        cA[(n - 1) * m :, :] = sys.A
    top = np.hstack([F, cA, np.zeros((n * m, n))])
    mid = np.hstack([np.zeros((m, n * w)), sys.E, sys.A])
    return np.vstack([top, mid]), n * w, n


def _tail(sys, width, n, left, right):
    return np.hstack([np.zeros((left.shape[0], width)), left, right])


def gamma_full(sys: DescriptorSystem) -> np.ndarray:
    head, w, n = _full_prefix(sys)
    C, K = sys.C, sys.K
    return np.vstack(
        [
            head,
            _tail(sys, w, n, C, np.zeros_like(C)),
            _tail(sys, w, n, np.zeros_like(C), C),
            _tail(sys, w, n, np.zeros_like(K), K),
        ]
    )


def psi_full(sys: DescriptorSystem) -> np.ndarray:
    head, w, n = _full_prefix(sys)
    K = sys.K
    return np.vstack([gamma_full(sys), _tail(sys, w, n, K, np.zeros_like(K))])


def omega_full(sys: DescriptorSystem, lam: complex) -> np.ndarray:
    head, w, n = _full_prefix(sys)
    C, K = sys.C, sys.K
    return np.vstack(
        [
            head.astype(complex),
            _tail(sys, w, n, C, np.zeros_like(C)),
            _tail(sys, w, n, np.zeros_like(C), C),
            _tail(sys, w, n, K.astype(complex), lam * K),
        ]
    )


@dataclass(frozen=True, eq=False)
class ExistenceMatrices:
    Gamma1: np.ndarray
    Psi1: np.ndarray
    red: ReducedSystem = field(repr=False)
    split: FunctionalSplit = field(repr=False)
    sys: Optional[DescriptorSystem] = field(repr=False, default=None)

    def Omega1_at(self, lam: complex) -> np.ndarray:
        return omega1(self.red, self.split, lam)

    @property
    def Gamma(self) -> np.ndarray:
        return gamma_full(self.sys)

    @property
    def Psi(self) -> np.ndarray:
        return psi_full(self.sys)

    def Omega_at(self, lam: complex) -> np.ndarray:
        return omega_full(self.sys, lam)


def existence_matrices(red, split, sys=None) -> ExistenceMatrices:
    return ExistenceMatrices(gamma1(red, split), psi1(red, split), red, split, sys)


@dataclass
class ExistenceReport:
    h1: bool
    h2: Optional[bool]
    q: int
    rank_Gamma1: int
    rank_Psi1: int
    unstable_witness: Optional[complex] = None
    static: bool = False
    rho_bookkeeping: Optional[dict] = None
    full_h1: Optional[bool] = None
    full_h2: Optional[bool] = None

    @property
    def ok(self) -> bool:
        return self.static or (self.h1 and bool(self.h2))


def _drop_tol(M, tol: TolerancePolicy) -> float:
    if tol.rank_tol_override is not None:
        return tol.rank_tol_override
    s = numkit.singular_values(M)
    return DROP_RTOL * max(1.0, float(s[0]) if s.size else 0.0)


def _axis_slack(M) -> float:
    """Eigenvalues this close to the stability boundary are treated as on it."""
    s = numkit.singular_values(M)
    return DROP_RTOL * max(1.0, float(s[0]) if s.size else 0.0)


def _rank_at_least(M, k: int, tol: TolerancePolicy) -> bool:
    """True when ``M`` robustly keeps rank ``>= k`` (its k-th singular value clears the drop threshold)."""
    if k <= 0:
        return True
    s = numkit.singular_values(M)
    return s.size >= k and s[k - 1] > _drop_tol(M, tol)


def check_h1_reduced(red: ReducedSystem, split: FunctionalSplit, tol: Optional[TolerancePolicy] = None) -> bool:
    tol = tol or TolerancePolicy()
    if split.q == 0:
        return True
    return tol.rank(psi1(red, split)) == tol.rank(gamma1(red, split))


def _selector(rows: int, q: int) -> np.ndarray:
    J = np.zeros((rows, q))
    J[rows - q :, :] = -np.eye(q)
    return J


def compute_N1_N2(red: ReducedSystem, split: FunctionalSplit, tol: Optional[TolerancePolicy] = None):
    """Affine parametrization ``N = N1 - Z N2`` of the admissible observer matrices.

    Returns ``(N1, N2, Gamma1_pinv)``.
    """
    tol = tol or TolerancePolicy()
    q = split.q
    G = gamma1(red, split)
    if q == 0:
        return np.zeros((0, 0)), np.zeros((G.shape[0], 0)), numkit.pinv(G, tol.rank_tol_override)
    if not check_h1_reduced(red, split, tol):
        raise PreconditionViolated("H1 does not hold: the parameter equation has no solution")
    Gp = numkit.pinv(G, tol.rank_tol_override)
    J = _selector(G.shape[0], q)
    S0 = np.hstack([split.S11, np.zeros_like(split.S11)])
    N1 = S0 @ Gp @ J
    N2 = (np.eye(G.shape[0]) - G @ Gp) @ J
    return N1, N2, Gp


def check_h2_via_detectability(N1, N2, tol: Optional[TolerancePolicy] = None):
    """PBH detectability test of ``(N1, N2)``.

    Returns ``(detectable, witness)``; ``witness`` is the first eigenvalue
    with ``Re >= -stability_margin`` at which ``[lam I - N1; N2]`` loses rank.
    """
    tol = tol or TolerancePolicy()
    N1 = numkit.as_matrix(N1)
    q = N1.shape[0]
    if q == 0:
        return True, None
    N2 = numkit.as_matrix(N2).reshape(-1, q)
    eigs = numkit.eigenvalues(N1)
    slack = _axis_slack(N1)
    for lam in sorted(eigs, key=lambda z: (-z.real, -abs(z.imag), -z.imag)):
        if lam.real < -tol.stability_margin - slack:
            continue
        pbh = np.vstack([lam * np.eye(q) - N1, N2])
        if not _rank_at_least(pbh, q, tol):
            return False, complex(lam)
    return True, None


def rho_formula(dec: StaircaseDecomposition, n: int) -> dict:
    """Rank offset between the full and the reduced test matrices.

    rho1 = sum_i [n_i + (k - i) rank A_i]
    rho2 = rho1 + (n - k) (sum_i rank A_i + rank [E11 B11; 0 B21])
    rho  = rho2 + rank E11 + 2 sum_i rank A_i
    """
    k = dec.k
    a = dec.Ai_ranks
    ni = dec.n_ranks
    rank_EB = dec.m1 + dec.m2
    rho1 = sum(ni[i] + (k - (i + 1)) * a[i] for i in range(k - 1))
    rho2 = rho1 + (n - k) * sum(a) + (n - k) * rank_EB
    rho = rho2 + dec.m1 + 2 * sum(a)
    return {"rho": rho, "rho1": rho1, "rho2": rho2, "k": k, "n_i": list(ni), "rank_A_i": list(a)}


def pencil_candidates(sys: DescriptorSystem) -> list[complex]:
    """Finite eigenvalues of the squared-up pencil ``([E; 0], [A; C])``."""
    m, n, _, p, _ = sys.dims
    Eb = np.vstack([sys.E, np.zeros((p, n))])
    Ab = np.vstack([sys.A, sys.C])
    s = max(Eb.shape)
    if s == 0:
        return []
    Es = np.zeros((s, s))
    As = np.zeros((s, s))
    Es[: Eb.shape[0], : Eb.shape[1]] = Eb
    As[: Ab.shape[0], : Ab.shape[1]] = Ab
    with np.errstate(all="ignore"):
        alpha, beta = scipy.linalg.eigvals(As, Es, homogeneous_eigvals=True)
    # beta ~ 0 relative to alpha marks an infinite eigenvalue
    scale = max(np.linalg.norm(As), np.linalg.norm(Es), 1.0)
    keep = np.abs(beta) > DROP_RTOL * np.maximum(np.abs(alpha), scale * numkit.EPS)
    return [complex(a / b) for a, b in zip(alpha[keep], beta[keep])]


def reduced_pipeline(sys: DescriptorSystem, tol: Optional[TolerancePolicy] = None):
    tol = tol or TolerancePolicy()
    dec = staircase(sys.E, sys.A, sys.B, tol)
    red = reduce(sys, dec)
    split = split_functional(red, tol)
    return dec, red, split


def check_reduced(sys: DescriptorSystem, tol: Optional[TolerancePolicy] = None, *, pipeline=None) -> ExistenceReport:
    """Normative check: static shortcut, then reduced H1 and detectability H2."""
    tol = tol or TolerancePolicy()
    dec, red, split = pipeline or reduced_pipeline(sys, tol)
    G1, P1 = gamma1(red, split), psi1(red, split)
    rep = ExistenceReport(
        h1=check_h1_reduced(red, split, tol),
        h2=None,
        q=split.q,
        rank_Gamma1=tol.rank(G1),
        rank_Psi1=tol.rank(P1),
        static=split.q == 0,
    )
    if rep.static:
        rep.h2 = True
    elif rep.h1:
        N1, N2, _ = compute_N1_N2(red, split, tol)
        rep.h2, rep.unstable_witness = check_h2_via_detectability(N1, N2, tol)
    return rep


def check_full_conditions(
    sys: DescriptorSystem,
    tol: Optional[TolerancePolicy] = None,
    *,
    max_n: int = DEFAULT_MAX_N,
    extra_lambdas=(),
) -> ExistenceReport:
    """H1/H2 on the full-size matrices, with the rank offset cross-check.

    Also runs the reduced path; ``h1``/``h2`` carry the full-matrix verdicts
    while ``rho_bookkeeping`` records both sides and whether the rank offsets
    agree with :func:`rho_formula`.
    """
    tol = tol or TolerancePolicy()
    m, n, l, p, r = sys.dims
    if n > max_n or m > max_n:
        raise TooLarge(f"full-matrix check capped at n, m <= {max_n} (got m={m}, n={n})")
    pipeline = reduced_pipeline(sys, tol)
    dec, red, split = pipeline
    reduced = check_reduced(sys, tol, pipeline=pipeline)

    G, P = gamma_full(sys), psi_full(sys)
    rG, rP = tol.rank(G), tol.rank(P)
    h1 = rP == rG

    candidates = [complex(c) for c in pencil_candidates(sys)]
    if split.q and reduced.h1:
        N1, _, _ = compute_N1_N2(red, split, tol)
        candidates += [complex(c) for c in numkit.eigenvalues(N1)]
    candidates += [complex(c) for c in extra_lambdas]
    candidates = [c for c in candidates if c.real >= -tol.stability_margin - DROP_RTOL * max(1.0, abs(c))]

    # like the reduced path, H2 is only meaningful once H1 holds
    generic = omega_full(sys, GENERIC_LAMBDA)
    h2 = (tol.rank(generic) == rG) if h1 else None
    witness = None if h2 is not False else GENERIC_LAMBDA
    if h2 and rG:
        # The full matrices are badly conditioned (block-Toeplitz in n), so a
        # drop is judged against the same singular value at the generic point.
        ref = numkit.singular_values(generic)[rG - 1]
        for lam in sorted(candidates, key=lambda z: (-z.real, -abs(z.imag))):
            Om = omega_full(sys, lam)
            sv = numkit.singular_values(Om)
            floor = numkit.default_tolerance(Om.shape, sv[0]) if tol.rank_tol_override is None else tol.rank_tol_override
            if sv[rG - 1] <= max(floor, FULL_DROP_RATIO * ref):
                h2, witness = False, lam
                break

    book = rho_formula(dec, n)
    lams = [GENERIC_LAMBDA] + candidates
    offsets_omega = [
        tol.rank(omega_full(sys, lam)) - tol.rank(omega1(red, split, lam)) for lam in lams
    ]
    book.update(
        rank_Gamma=rG,
        rank_Psi=rP,
        rank_Gamma1=reduced.rank_Gamma1,
        rank_Psi1=reduced.rank_Psi1,
        offset_Gamma=rG - reduced.rank_Gamma1,
        offset_Psi=rP - reduced.rank_Psi1,
        offsets_Omega=offsets_omega,
        sampled_lambdas=[[lam.real, lam.imag] for lam in lams],
    )
    book["consistent"] = (
        book["offset_Gamma"] == book["rho"]
        and book["offset_Psi"] == book["rho"]
        and all(o == book["rho"] for o in offsets_omega)
    )
    return ExistenceReport(
        h1=h1,
        h2=h2,
        q=split.q,
        rank_Gamma1=reduced.rank_Gamma1,
        rank_Psi1=reduced.rank_Psi1,
        unstable_witness=witness,
        static=reduced.static,
        rho_bookkeeping=book,
        full_h1=h1,
        full_h2=h2,
    )
