"""
Observer parameter solve, stabilization and assembly.

The observer has the form

    w'   = N w + H [u; y]
    zhat = R w + M [u; y]

with internal error ``e1 = w - T E11 x_k`` obeying ``e1' = N e1`` and
``zhat - z = R e1`` whenever

    T A11 + Q C11 - N S11 = 0,   T E11 + Mbar C11 = S11,   N Hurwitz.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.signal

from . import numkit
from .errors import (
    H1Failed,
    H2Failed,
    NoConvergence,
    NotDetectable,
    PlacementError,
    PreconditionViolated,
    ResidualTooLarge,
)
from .existence import (
    DROP_RTOL,
    check_h1_reduced,
    check_h2_via_detectability,
    compute_N1_N2,
    gamma1,
    reduced_pipeline,
)
from .model import DescriptorSystem, TolerancePolicy
from .reduction import FunctionalSplit, ReducedSystem

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Certificates:
    T: np.ndarray
    Mbar: np.ndarray
    Q: np.ndarray
    L: np.ndarray
    Z: np.ndarray
    P: np.ndarray
    residual_a: float
    residual_b: float
    eigs_N: np.ndarray


@dataclass(frozen=True, eq=False)
class ObserverRealization:
    q: int
    N: np.ndarray
    H: np.ndarray
    R: np.ndarray
    M: np.ndarray
    certificates: Certificates
    metadata: dict = field(default_factory=dict)

    @property
    def stable(self) -> bool:
        return self.q == 0 or bool(np.max(self.certificates.eigs_N.real) < 0)

    def __eq__(self, other):
        if not isinstance(other, ObserverRealization):
            return NotImplemented
        mats = ("N", "H", "R", "M")
        cmats = ("T", "Mbar", "Q", "L", "Z", "P")
        a, b = self.certificates, other.certificates
        return (
            self.q == other.q
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in mats)
            and all(np.array_equal(getattr(a, k), getattr(b, k)) for k in cmats)
            and a.residual_a == b.residual_a
            and a.residual_b == b.residual_b
            and np.array_equal(a.eigs_N, b.eigs_N)
            and self.metadata == other.metadata
        )

    __hash__ = None


def residuals(red: ReducedSystem, split: FunctionalSplit, T, Mbar, Q, N) -> tuple[float, float]:
    """Frobenius residuals of the two parameter equations, scaled by ``||S11|| + 1``."""
    S11 = split.S11
    scale = np.linalg.norm(S11) + 1.0
    ra = T @ red.A11 + Q @ red.C11 - N @ S11
    rb = T @ red.E11 + Mbar @ red.C11 - S11
    norm = lambda X: float(np.linalg.norm(X)) if X.size else 0.0
    return norm(ra) / scale, norm(rb) / scale


def solve_parameters(red: ReducedSystem, split: FunctionalSplit, Z, tol: Optional[TolerancePolicy] = None):
    """General solution ``[T Mbar Q -N] = [S11 0] G1^+ - Z (I - G1 G1^+)``.

    Returns ``(T, Mbar, Q, N)``.
    """
    tol = tol or TolerancePolicy()
    q, m1, c = split.q, red.m1, red.C11.shape[0]
    G = gamma1(red, split)
    if q == 0:
        return np.zeros((0, m1)), np.zeros((0, c)), np.zeros((0, c)), np.zeros((0, 0))
    if not check_h1_reduced(red, split, tol):
        raise PreconditionViolated("H1 does not hold: no parameters solve the observer equations")
    Z = np.asarray(Z, dtype=float).reshape(q, G.shape[0])
    Gp = numkit.pinv(G, tol.rank_tol_override)
    S0 = np.hstack([split.S11, np.zeros_like(split.S11)])
    X = S0 @ Gp - Z @ (np.eye(G.shape[0]) - G @ Gp)
    T = X[:, :m1]
    Mbar = X[:, m1 : m1 + c]
    Q = X[:, m1 + c : m1 + 2 * c]
    N = -X[:, m1 + 2 * c :]
    return T, Mbar, Q, N


def _stable_subspace_care(A, G, Qc):
    """Stabilizing solution of ``A^T X + X A - X G X + Qc = 0``.

    Ordered real Schur form of the Hamiltonian ``[[A, -G], [-Qc, -A^T]]``;
    the leading invariant subspace ``[U1; U2]`` gives ``X = U2 U1^{-1}``.
    """
    q = A.shape[0]
    Ham = np.block([[A, -G], [-Qc, -A.T]])
    try:
        _, Us, sdim = scipy.linalg.schur(Ham, output="real", sort="lhp")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NoConvergence(f"Hamiltonian Schur form failed: {exc}") from exc
    if sdim != q:
        raise NoConvergence(f"Hamiltonian has {sdim} stable eigenvalues, expected {q}")
    U1, U2 = Us[:q, :q], Us[q:, :q]
    if np.linalg.cond(U1) > 1e12:
        raise NoConvergence("stable invariant subspace is not a graph; pair not detectable")
    X = np.linalg.solve(U1.T, U2.T).T
    return (X + X.T) / 2


def stabilize(N1, N2, tol: Optional[TolerancePolicy] = None):
    """Output injection ``Z`` with ``N1 - Z N2`` Hurwitz (beyond the margin).

    Solves ``N1 P + P N1^T - P N2^T N2 P + I = 0`` and returns
    ``(Z, P)`` with ``Z = P N2^T``.
    """
    tol = tol or TolerancePolicy()
    N1 = numkit.as_matrix(N1)
    q = N1.shape[0]
    N2 = numkit.as_matrix(N2).reshape(-1, q)
    if q == 0:
        return np.zeros((0, N2.shape[0])), np.zeros((0, 0))
    ok, witness = check_h2_via_detectability(N1, N2, tol)
    if not ok:
        raise NotDetectable(f"(N1, N2) not detectable; unstable unobservable mode {witness}", witness)
    shifted = N1 + tol.stability_margin * np.eye(q)
    P = _stable_subspace_care(shifted.T, N2.T @ N2, np.eye(q))
    Z = P @ N2.T
    eigs = numkit.eigenvalues(N1 - Z @ N2)
    if not np.max(eigs.real) < -tol.stability_margin:
        raise NoConvergence(f"Riccati gain failed to stabilize: eigenvalues {eigs}")
    return Z, P


def place(N1, N2, poles: Sequence[float], tol: Optional[TolerancePolicy] = None):
    """Output injection ``Z`` placing the spectrum of ``N1 - Z N2`` at ``poles``."""
    tol = tol or TolerancePolicy()
    N1 = numkit.as_matrix(N1)
    q = N1.shape[0]
    N2 = numkit.as_matrix(N2).reshape(-1, q)
    poles = np.asarray(poles, dtype=complex)
    if len(poles) != q:
        raise PlacementError(f"need {q} poles, got {len(poles)}")
    if q == 0:
        return np.zeros((0, N2.shape[0]))
    Un, s, Vt = np.linalg.svd(N2, full_matrices=False)
    # N2 is a projector applied to unit vectors: singular values at rounding
    # level are noise, judged on an absolute scale as in the PBH test
    floor = tol.rank_tol_override
    if floor is None:
        floor = DROP_RTOL * max(1.0, float(s[0]) if s.size else 0.0)
    rw = int(np.sum(s > floor))
    if rw == 0:
        Z = np.zeros((q, N2.shape[0]))
    else:
        W = Vt[:rw]
        try:
            fb = scipy.signal.place_poles(N1.T, W.T, poles)
        except ValueError as exc:
            raise PlacementError(f"pole placement failed: {exc}") from exc
        Zr = fb.gain_matrix.T
        Z = Zr @ np.diag(1.0 / s[:rw]) @ Un[:, :rw].T
    got = np.sort_complex(numkit.eigenvalues(N1 - Z @ N2))
    want = np.sort_complex(poles)
    if not np.allclose(got, want, atol=1e-8, rtol=1e-8):
        fmt = lambda zs: "[" + ", ".join(f"{complex(z):.6g}".strip("()") for z in zs) + "]"
        raise PlacementError(f"cannot place poles {fmt(want)}; achievable spectrum {fmt(got)}")
    return Z


def assemble(red: ReducedSystem, split: FunctionalSplit, params, Z=None, P=None, tol=None, metadata=None):
    """Build ``(N, H, R, M)`` over ``[u; y]`` from solved parameters."""
    tol = tol or TolerancePolicy()
    T, Mbar, Q, N = params
    q, m2, l, p = split.q, red.m2, red.l, red.p
    cS, cC = split.coeff_S, split.coeff_C
    L = N @ Mbar - Q
    La, Lb = L[:, :m2], L[:, m2:]
    Ma, Mb = Mbar[:, :m2], Mbar[:, m2:]
    cCa, cCb = cC[:, :m2], cC[:, m2:]
    H = np.hstack([T @ red.B11 - La @ red.B21, Lb])
    M = np.hstack([-(cS @ Ma + cCa) @ red.B21, cS @ Mb + cCb])
    R = cS.copy()
    ra, rb = residuals(red, split, T, Mbar, Q, N)
    if max(ra, rb) > tol.residual_tol:
        raise ResidualTooLarge(f"residual_a={ra:.3e}, residual_b={rb:.3e} exceed {tol.residual_tol:g}")
    cert = Certificates(
        T=T,
        Mbar=Mbar,
        Q=Q,
        L=L,
        Z=np.zeros((q, 0)) if Z is None else np.asarray(Z, dtype=float),
        P=np.zeros((0, 0)) if P is None else np.asarray(P, dtype=float),
        residual_a=ra,
        residual_b=rb,
        eigs_N=numkit.eigenvalues(N),
    )
    return ObserverRealization(
        q=q,
        N=N,
        H=H.reshape(q, l + p),
        R=R.reshape(red.r, q),
        M=M.reshape(red.r, l + p),
        certificates=cert,
        metadata=dict(metadata or {}),
    )


def synthesize(
    sys: DescriptorSystem,
    tol: Optional[TolerancePolicy] = None,
    *,
    poles: Optional[Sequence[float]] = None,
    pipeline=None,
) -> ObserverRealization:
    """Full design: staircase, reduce, split, check, stabilize, solve, assemble.

    Raises :class:`H1Failed` / :class:`H2Failed` when the sufficient
    conditions do not hold (which does not prove that no observer exists).
    """
    tol = tol or TolerancePolicy()
    dec, red, split = pipeline or reduced_pipeline(sys, tol)
    m, n, l, p, r = sys.dims
    meta = {
        "name": sys.name,
        "dims": {"m": m, "n": n, "l": l, "p": p, "r": r, "n_k": red.n_k},
        "tolerance": tol.to_dict(),
        "static": split.q == 0,
    }
    if split.q == 0:
        log.info("rank [K11; C11] = rank C11: static observer")
        params = solve_parameters(red, split, None, tol)
        meta.update(h1=True, h2=True, stabilization="none")
        return assemble(red, split, params, tol=tol, metadata=meta)

    if not check_h1_reduced(red, split, tol):
        raise H1Failed("H1: fail (rank Psi1 != rank Gamma1)")
    N1, N2, _ = compute_N1_N2(red, split, tol)
    ok, witness = check_h2_via_detectability(N1, N2, tol)
    if not ok:
        raise H2Failed(f"H2: fail (undetectable mode at lambda = {witness})", witness)

    P = None
    if poles is not None:
        Z = place(N1, N2, poles, tol)
        meta["stabilization"] = "pole-placement"
        meta["poles"] = [float(np.real(v)) for v in poles]
    else:
        Z, P = stabilize(N1, N2, tol)
        meta["stabilization"] = "riccati"
    params = solve_parameters(red, split, Z, tol)
    N = params[3]
    if not np.max(numkit.eigenvalues(N).real) < -tol.stability_margin:
        raise H2Failed(f"N is not Hurwitz: eigenvalues {numkit.eigenvalues(N)}")
    meta.update(h1=True, h2=True)
    return assemble(red, split, params, Z=Z, P=P, tol=tol, metadata=meta)


def verify_condition_b_certificate(obs: ObserverRealization, tol: Optional[TolerancePolicy] = None) -> bool:
    """``rank O(N, R) == rank R``: a matched start can never lose track."""
    tol = tol or TolerancePolicy()
    if obs.q == 0:
        return True
    R = np.asarray(obs.R, dtype=float)
    N = np.asarray(obs.N, dtype=float)
    return tol.rank(numkit.observability_matrix(N, R)) == tol.rank(R)
