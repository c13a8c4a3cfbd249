"""
Command-line front end: ``funcobs {check,synthesize,simulate,verify}``.

Exit codes: 0 ok, 1 input error, 2 condition or certificate failure,
3 simulation infeasible (inconsistent initial data or dynamics).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from . import numkit
from .errors import (
    ConditionFailed,
    DimensionMismatch,
    FuncObsError,
    InconsistentDynamics,
    Infeasible,
    NoConvergence,
    NotDetectable,
    ParseError,
    PlacementError,
    ResidualTooLarge,
    TooLarge,
)
from .existence import check_full_conditions, check_reduced, reduced_pipeline
from .model import (
    TolerancePolicy,
    load_observer,
    load_system,
    observer_to_dict,
    parse_floats,
    parse_signal,
    save_observer,
    write_trajectory_csv,
)
from .simulation import SimulationConfig, check_matched_initialization, matched_config, simulate
from .synthesis import residuals, synthesize, verify_condition_b_certificate

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONDITION = 2
EXIT_INFEASIBLE = 3

CAVEAT = ConditionFailed.caveat


def _fmt_complex(z: complex) -> str:
    z = complex(z)
    if abs(z.imag) < 1e-14:
        return f"{z.real:.6g}"
    return f"{z.real:.6g}{z.imag:+.6g}j"


def _policy(args) -> TolerancePolicy:
    return TolerancePolicy(
        rank_tol_override=args.tol_rank,
        residual_tol=args.residual_tol,
        stability_margin=args.stability_margin,
    )


def _verdict(flag: Optional[bool]) -> str:
    if flag is None:
        return "not evaluated"
    return "pass" if flag else "fail"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_check(args) -> int:
    tol = _policy(args)
    system = load_system(args.system)
    rep = check_reduced(system, tol)
    line = f"H1: {_verdict(rep.h1)}, H2: {_verdict(rep.h2)}, order q = {rep.q}"
    if rep.static:
        line += " (static observer)"
    print(line)
    print(f"rank Gamma1 = {rep.rank_Gamma1}, rank Psi1 = {rep.rank_Psi1}")
    if rep.unstable_witness is not None:
        print(f"undetectable mode at lambda = {_fmt_complex(rep.unstable_witness)}")
    if args.full:
        full = check_full_conditions(system, tol)
        book = full.rho_bookkeeping
        print(f"full matrices: H1: {_verdict(full.h1)}, H2: {_verdict(full.h2)}")
        print(
            f"rho = {book['rho']} (k = {book['k']}, n_i = {book['n_i']}, rank A_i = {book['rank_A_i']}); "
            f"rank Gamma - rank Gamma1 = {book['offset_Gamma']}, "
            f"rank Psi - rank Psi1 = {book['offset_Psi']}, "
            f"consistent = {str(book['consistent']).lower()}"
        )
    if rep.ok:
        return EXIT_OK
    print(CAVEAT)
    return EXIT_CONDITION


def cmd_synthesize(args) -> int:
    tol = _policy(args)
    system = load_system(args.system)
    poles = parse_floats(args.place_poles) if args.place_poles is not None else None
    try:
        obs = synthesize(system, tol, poles=poles)
    except ConditionFailed as exc:
        print(str(exc))
        print(CAVEAT)
        return EXIT_CONDITION
    except (NotDetectable, PlacementError, ResidualTooLarge, NoConvergence) as exc:
        print(f"synthesis failed: {exc}")
        return EXIT_CONDITION
    cert = obs.certificates
    eigs = ", ".join(_fmt_complex(z) for z in cert.eigs_N) or "none"
    print(f"order q = {obs.q}{' (static observer)' if obs.q == 0 else ''}")
    print(f"eigenvalues of N: {eigs}")
    print(f"residual_a = {cert.residual_a:.3e}, residual_b = {cert.residual_b:.3e}")
    if args.out:
        save_observer(obs, args.out)
        print(f"observer written to {args.out}")
    else:
        print(json.dumps(observer_to_dict(obs), indent=2, sort_keys=True))
    return EXIT_OK


def _initial_state(args, red) -> Optional[np.ndarray]:
    if args.ic is not None and args.ic_full is not None:
        raise ParseError("--ic and --ic-full are mutually exclusive")
    if args.ic is not None:
        x = np.array(parse_floats(args.ic))
        if x.size != red.n_k:
            raise DimensionMismatch(f"--ic has {x.size} entries, reduced state has n_k={red.n_k}")
        return x
    if args.ic_full is not None:
        x = np.array(parse_floats(args.ic_full))
        if x.size != red.V.shape[0]:
            raise DimensionMismatch(f"--ic-full has {x.size} entries, system has n={red.V.shape[0]}")
        return red.restrict(x)
    return None


def cmd_simulate(args) -> int:
    tol = _policy(args)
    system = load_system(args.system)
    obs = load_observer(args.observer)
    _, red, split = reduced_pipeline(system, tol)
    u = parse_signal(args.input, red.l) if args.input else None
    w0 = np.array(parse_floats(args.w0)) if args.w0 is not None else None
    if w0 is not None and w0.size != obs.q:
        raise DimensionMismatch(f"--w0 has {w0.size} entries, observer order is q={obs.q}")
    cfg = SimulationConfig(
        t_end=args.horizon, dt=args.dt, x_k0=_initial_state(args, red), w0=w0, u=u
    )
    if args.matched_init:
        cfg = matched_config(red, obs, cfg)
    res = simulate(red, split, obs, cfg)
    print(f"converged = {str(res.converged).lower()}")
    print(f"final error norm = {res.final_error:.3e}")
    print(f"max constraint residual = {res.max_constraint_residual:.3e}")
    if res.flagged:
        print("warning: trajectory drifted off the algebraic constraint")
    if args.matched_init:
        print(f"max matched error = {float(np.max(np.linalg.norm(res.e, axis=1))):.3e}")
    if args.out:
        write_trajectory_csv(res, args.out)
        print(f"trajectory written to {args.out}")
    return EXIT_OK


def _shape_check(red, obs) -> None:
    l, p, r = red.l, red.p, red.r
    q = obs.q
    expected = {"N": (q, q), "H": (q, l + p), "R": (r, q), "M": (r, l + p)}
    for key, shape in expected.items():
        if getattr(obs, key).shape != shape:
            raise DimensionMismatch(f"observer {key} has shape {getattr(obs, key).shape}, expected {shape}")


def verify_observer(system, obs, tol: TolerancePolicy) -> list[str]:
    """Recompute every certificate of ``obs`` against ``system``; return the failures."""
    _, red, split = reduced_pipeline(system, tol)
    _shape_check(red, obs)
    failures = []
    if obs.q != split.q:
        return [f"order mismatch: observer q = {obs.q}, system requires q = {split.q}"]
    cert = obs.certificates
    T, Mbar, Q, N = cert.T, cert.Mbar, cert.Q, obs.N
    c = red.C11.shape[0]
    want = {"T": (obs.q, red.m1), "Mbar": (obs.q, c), "Q": (obs.q, c)}
    for key, shape in want.items():
        if getattr(cert, key).shape != shape:
            raise DimensionMismatch(f"certificate {key} has shape {getattr(cert, key).shape}, expected {shape}")

    ra, rb = residuals(red, split, T, Mbar, Q, N)
    if ra > tol.residual_tol:
        failures.append(f"residual_a too large ({ra:.3e} > {tol.residual_tol:g})")
    if rb > tol.residual_tol:
        failures.append(f"residual_b too large ({rb:.3e} > {tol.residual_tol:g})")

    if obs.q:
        eigs = numkit.eigenvalues(N)
        if not np.max(eigs.real) < -tol.stability_margin:
            failures.append("N not Hurwitz (eigenvalues " + ", ".join(_fmt_complex(z) for z in eigs) + ")")

    m2 = red.m2
    L = N @ Mbar - Q
    cS, cC = split.coeff_S, split.coeff_C
    H = np.hstack([T @ red.B11 - L[:, :m2] @ red.B21, L[:, m2:]]).reshape(obs.H.shape)
    M = np.hstack([-(cS @ Mbar[:, :m2] + cC[:, :m2]) @ red.B21, cS @ Mbar[:, m2:] + cC[:, m2:]]).reshape(obs.M.shape)
    scale = 1.0 + max(np.linalg.norm(H), np.linalg.norm(M))
    limit = tol.residual_tol * scale
    if np.linalg.norm(H - obs.H) > limit:
        failures.append("H inconsistent with (T, Mbar, Q, N)")
    if np.linalg.norm(M - obs.M) > limit or np.linalg.norm(cS - obs.R) > limit:
        failures.append("output map (R, M) inconsistent with the functional split")

    if not verify_condition_b_certificate(obs, tol):
        failures.append("rank certificate failed: rank O(N, R) != rank R")
    return failures


def cmd_verify(args) -> int:
    tol = _policy(args)
    system = load_system(args.system)
    obs = load_observer(args.observer)
    failures = verify_observer(system, obs, tol)
    if failures:
        print("verification failed:")
        for f in failures:
            print(f"  - {f}")
        return EXIT_CONDITION
    print(f"all certificates pass (order q = {obs.q})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funcobs", description="Functional observers for descriptor systems.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log pipeline decisions")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol-rank", type=float, default=None, help="absolute rank tolerance (default: max(m,n)*smax*eps)")
    common.add_argument("--residual-tol", type=float, default=1e-8, help="certificate residual tolerance")
    common.add_argument("--stability-margin", type=float, default=0.0, help="required decay margin for N")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common], help="test the existence conditions")
    p.add_argument("system")
    p.add_argument("--full", action="store_true", help="cross-check with the full-size rank tests")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("synthesize", parents=[common], help="design an observer")
    p.add_argument("system")
    p.add_argument("--place-poles", default=None, metavar="CSV", help="place the spectrum of N instead of the Riccati design")
    p.add_argument("--out", default=None, help="observer file (default: stdout)")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", parents=[common], help="simulate plant and observer")
    p.add_argument("system")
    p.add_argument("observer")
    p.add_argument("--horizon", type=float, default=20.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--ic", default=None, metavar="CSV", help="initial reduced state x_k(0)")
    p.add_argument("--ic-full", default=None, metavar="CSV", help="initial semistate x(0) in original coordinates")
    p.add_argument("--w0", default=None, metavar="CSV", help="initial observer state")
    p.add_argument("--input", default=None, metavar="SPEC", help="input signal, e.g. 'sin(t)' or 'sin(2*t),const(1)'")
    p.add_argument("--matched-init", action="store_true", help="start the observer with zero internal error")
    p.add_argument("--out", default=None, help="CSV trajectory path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", parents=[common], help="re-check an observer file")
    p.add_argument("system")
    p.add_argument("observer")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (InconsistentDynamics, Infeasible) as exc:
        print(f"simulation infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ParseError, DimensionMismatch, TooLarge, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FuncObsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONDITION


if __name__ == "__main__":
    sys.exit(main())
