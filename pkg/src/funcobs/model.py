"""
System and signal data model plus file I/O.

System files are JSON documents::

    {"name": "...", "m": 3, "n": 3, "l": 2, "p": 1, "r": 2,
     "E": [[...], ...], "A": ..., "B": ..., "C": ..., "K": ...}

Observer files carry ``q, N, H, R, M`` and a ``certificates`` block; the
simulation CSV has columns ``t, z_*, zhat_*, e_*, constraint_residual``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import numkit
from .errors import DimensionError, ParseError

# ---------------------------------------------------------------------------
# Descriptor system
# ---------------------------------------------------------------------------


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class DescriptorSystem:
    """``E x' = A x + B u``, ``y = C x``, ``z = K x``; E, A may be rectangular."""

    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    K: np.ndarray
    name: str = ""

    def __post_init__(self):
        for key in "EABCK":
            object.__setattr__(self, key, _frozen(numkit.as_matrix(getattr(self, key))))
        m, n = self.E.shape
        if self.A.shape != (m, n):
            raise DimensionError(f"A is {self.A.shape}, E is {(m, n)}")
        if self.B.shape[0] != m:
            raise DimensionError(f"B has {self.B.shape[0]} rows, expected m={m}")
        if self.C.shape[1] != n:
            raise DimensionError(f"C has {self.C.shape[1]} columns, expected n={n}")
        if self.K.shape[1] != n:
            raise DimensionError(f"K has {self.K.shape[1]} columns, expected n={n}")

    @property
    def dims(self) -> tuple[int, int, int, int, int]:
        """``(m, n, l, p, r)``."""
        m, n = self.E.shape
        return m, n, self.B.shape[1], self.C.shape[0], self.K.shape[0]

    def __eq__(self, other):
        if not isinstance(other, DescriptorSystem):
            return NotImplemented
        return self.name == other.name and all(
            getattr(self, k).shape == getattr(other, k).shape
            and np.array_equal(getattr(self, k), getattr(other, k))
            for k in "EABCK"
        )

    __hash__ = None


@dataclass(frozen=True)
class TolerancePolicy:
    """One tolerance policy threaded through a whole run."""

    rank_tol_override: Optional[float] = None
    residual_tol: float = 1e-8
    stability_margin: float = 0.0

    def __post_init__(self):
        if not self.residual_tol > 0:
            raise ValueError("residual_tol must be positive")
        if self.rank_tol_override is not None and self.rank_tol_override < 0:
            raise ValueError("rank tolerance must be nonnegative")
        if self.stability_margin < 0:
            raise ValueError("stability_margin must be nonnegative")

    def rank(self, M) -> int:
        return numkit.rank_tol(M, self.rank_tol_override).rank

    def to_dict(self) -> dict:
        return {
            "rank_tol_override": self.rank_tol_override,
            "residual_tol": self.residual_tol,
            "stability_margin": self.stability_margin,
        }


# ---------------------------------------------------------------------------
# Matrix (de)serialization helpers
# ---------------------------------------------------------------------------


def _matrix_from_json(value, rows: int, cols: int, label: str) -> np.ndarray:
    if not isinstance(value, list) or any(not isinstance(r, list) for r in value):
        raise ParseError(f"{label} must be an array of arrays")
    if len(value) != rows:
        raise DimensionError(f"{label} has {len(value)} rows, expected {rows}")
    for i, row in enumerate(value):
        if len(row) != cols:
            raise DimensionError(f"{label} row {i} has {len(row)} entries, expected {cols}")
    try:
        arr = np.array(value, dtype=float).reshape(rows, cols)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{label}: non-numeric entry") from exc
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{label}: non-finite entry")
    return arr


def _matrix_to_json(M: np.ndarray) -> list:
    return [[float(v) for v in row] for row in np.asarray(M, dtype=float)]


def system_from_dict(doc: dict) -> DescriptorSystem:
    if not isinstance(doc, dict):
        raise ParseError("system document must be an object")
    try:
        m, n, l, p, r = (int(doc[k]) for k in ("m", "n", "l", "p", "r"))
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ParseError("dimensions must be integers") from exc
    if min(m, n, l, p, r) < 0:
        raise ParseError("dimensions must be nonnegative")
    shapes = {"E": (m, n), "A": (m, n), "B": (m, l), "C": (p, n), "K": (r, n)}
    mats = {}
    for key, (rows, cols) in shapes.items():
        if key not in doc:
            raise ParseError(f"missing field {key!r}")
        mats[key] = _matrix_from_json(doc[key], rows, cols, key)
    return DescriptorSystem(name=str(doc.get("name", "")), **mats)


def system_to_dict(sys: DescriptorSystem) -> dict:
    m, n, l, p, r = sys.dims
    doc = {"name": sys.name, "m": m, "n": n, "l": l, "p": p, "r": r}
    for key in "EABCK":
        doc[key] = _matrix_to_json(getattr(sys, key))
    return doc


def load_system(path) -> DescriptorSystem:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return system_from_dict(doc)


def _dump_system(doc: dict) -> str:
    """JSON text with one matrix row per line."""
    lines = []
    for key, value in doc.items():
        if isinstance(value, list):
            rows = ",\n".join("    " + json.dumps(row) for row in value)
            lines.append(f'  {json.dumps(key)}: [\n{rows}\n  ]' if value else f"  {json.dumps(key)}: []")
        else:
            lines.append(f"  {json.dumps(key)}: {json.dumps(value)}")
    return "{\n" + ",\n".join(lines) + "\n}\n"


def save_system(sys: DescriptorSystem, path) -> None:
    Path(path).write_text(_dump_system(system_to_dict(sys)))


# ---------------------------------------------------------------------------
# Observer files
# ---------------------------------------------------------------------------

_OBS_MATRICES = ("N", "H", "R", "M")
_CERT_MATRICES = ("T", "Mbar", "Q", "L", "Z", "P")


def _packed(M) -> dict:
    M = np.asarray(M, dtype=float)
    return {"shape": list(M.shape), "data": _matrix_to_json(M)}


def _unpacked(entry, label: str) -> np.ndarray:
    try:
        rows, cols = (int(v) for v in entry["shape"])
        return _matrix_from_json(entry["data"], rows, cols, label)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{label}: expected {{'shape', 'data'}}") from exc


def observer_to_dict(obs) -> dict:
    cert = obs.certificates
    doc = {
        "format": "funcobs-observer/1",
        "q": obs.q,
        **{k: _packed(getattr(obs, k)) for k in _OBS_MATRICES},
        "certificates": {
            **{k: _packed(getattr(cert, k)) for k in _CERT_MATRICES},
            "residual_a": float(cert.residual_a),
            "residual_b": float(cert.residual_b),
            "eigs_N": [[float(z.real), float(z.imag)] for z in cert.eigs_N],
        },
        "metadata": dict(obs.metadata),
    }
    return doc


def observer_from_dict(doc: dict):
    from .synthesis import Certificates, ObserverRealization

    try:
        cert = doc["certificates"]
        certificates = Certificates(
            **{k: _unpacked(cert[k], k) for k in _CERT_MATRICES},
            residual_a=float(cert["residual_a"]),
            residual_b=float(cert["residual_b"]),
            eigs_N=np.array([complex(re_, im) for re_, im in cert["eigs_N"]], dtype=complex),
        )
        return ObserverRealization(
            q=int(doc["q"]),
            **{k: _unpacked(doc[k], k) for k in _OBS_MATRICES},
            certificates=certificates,
            metadata=dict(doc.get("metadata", {})),
        )
    except KeyError as exc:
        raise ParseError(f"observer file missing field {exc.args[0]!r}") from exc


def save_observer(obs, path) -> None:
    Path(path).write_text(json.dumps(observer_to_dict(obs), indent=2, sort_keys=True) + "\n")


def load_observer(path):
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return observer_from_dict(doc)


# ---------------------------------------------------------------------------
# Signals
# ---------------------------------------------------------------------------

_KINDS = ("sine", "exponential", "polynomial", "constant", "sum", "scaled")


@dataclass(frozen=True)
class Signal:
    """Scalar input signal with a closed-form derivative.

    ``sine``: sin(a t); ``exponential``: exp(a t); ``polynomial``:
    sum c_i t^i; ``constant``: c; ``scaled``: c * child; ``sum``: sum of
    children.
    """

    kind: str
    params: tuple = ()
    children: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}")

    def __call__(self, t):
        k, p = self.kind, self.params
        t = np.asarray(t, dtype=float)
        if k == "sine":
            out = np.sin(p[0] * t)
        elif k == "exponential":
            out = np.exp(p[0] * t)
        elif k == "polynomial":
            out = np.polynomial.polynomial.polyval(t, p) if p else np.zeros_like(t)
        elif k == "constant":
            out = np.full_like(t, p[0])
        elif k == "scaled":
            out = p[0] * self.children[0](t)
        else:
            out = sum((c(t) for c in self.children), np.zeros_like(t))
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, t):
        k, p = self.kind, self.params
        t = np.asarray(t, dtype=float)
        if k == "sine":
            out = p[0] * np.cos(p[0] * t)
        elif k == "exponential":
            out = p[0] * np.exp(p[0] * t)
        elif k == "polynomial":
            dp = np.polynomial.polynomial.polyder(p) if len(p) > 1 else ()
            out = np.polynomial.polynomial.polyval(t, dp) if len(dp) else np.zeros_like(t)
        elif k == "constant":
            out = np.zeros_like(t)
        elif k == "scaled":
            out = p[0] * self.children[0].derivative(t)
        else:
            out = sum((c.derivative(t) for c in self.children), np.zeros_like(t))
        return float(out) if np.ndim(out) == 0 else out


def sine(a: float = 1.0) -> Signal:
    return Signal("sine", (float(a),))


def exponential(a: float = 1.0) -> Signal:
    return Signal("exponential", (float(a),))


def polynomial(*coeffs: float) -> Signal:
    return Signal("polynomial", tuple(float(c) for c in coeffs))


def constant(c: float = 0.0) -> Signal:
    return Signal("constant", (float(c),))


@dataclass(frozen=True)
class VectorSignal:
    """One scalar :class:`Signal` per input channel."""

    components: tuple = ()

    @property
    def dimension(self) -> int:
        return len(self.components)

    def __call__(self, t) -> np.ndarray:
        """Value at ``t``; for an array of times, shape ``(len(t), dimension)``."""
        return self._stack([c(t) for c in self.components], t)

    def derivative(self, t) -> np.ndarray:
        return self._stack([c.derivative(t) for c in self.components], t)

    @staticmethod
    def _stack(vals, t) -> np.ndarray:
        if np.ndim(t) == 0:
            return np.array(vals, dtype=float)
        if not vals:
            return np.zeros((np.size(t), 0))
        return np.array(vals, dtype=float).reshape(len(vals), -1).T

    @classmethod
    def zeros(cls, dim: int) -> "VectorSignal":
        return cls(tuple(constant(0.0) for _ in range(dim)))


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_ATOM = re.compile(
    rf"^(?:(?P<fn>sin|exp)\((?:(?P<a>{_NUM})\s*\*\s*)?(?P<neg>-)?t\)"
    rf"|poly\((?P<poly>[^()]*)\)|const\((?P<c>{_NUM})\))$"
)
_SCALE = re.compile(rf"^(?P<k>{_NUM})\s*\*\s*(?P<rest>.+)$")


def _split_top(text: str, sep: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ParseError(f"unbalanced parentheses in {text!r}")
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise ParseError(f"unbalanced parentheses in {text!r}")
    parts.append("".join(cur))
    return parts


def _parse_term(text: str) -> Signal:
    text = text.strip()
    m = _SCALE.match(text)
    if m and not _ATOM.match(text):
        return Signal("scaled", (float(m["k"]),), (_parse_term(m["rest"]),))
    m = _ATOM.match(text)
    if not m:
        raise ParseError(f"cannot parse signal term {text!r}")
    if m["fn"]:
        a = float(m["a"]) if m["a"] is not None else 1.0
        a = -a if m["neg"] else a
        return sine(a) if m["fn"] == "sin" else exponential(a)
    if m["poly"] is not None:
        try:
            coeffs = [float(c) for c in m["poly"].split(",") if c.strip()]
        except ValueError as exc:
            raise ParseError(f"bad polynomial coefficients in {text!r}") from exc
        return polynomial(*coeffs)
    return constant(float(m["c"]))


def _parse_scalar(text: str) -> Signal:
    terms = [t for t in _split_top(text.replace(" ", ""), "+")]
    if any(not t for t in terms):
        raise ParseError(f"empty term in {text!r}")
    sigs = [_parse_term(t) for t in terms]
    return sigs[0] if len(sigs) == 1 else Signal("sum", (), tuple(sigs))


def parse_signal(spec: str, dimension: Optional[int] = None) -> VectorSignal:
    """Parse the comma-joined input mini-language.

    >>> parse_signal("sin(t),exp(-0.5*t)")(0.0)
    array([0., 1.])
    """
    comps = tuple(_parse_scalar(s) for s in _split_top(spec, ","))
    if dimension is not None and len(comps) != dimension:
        raise DimensionError(f"input spec has {len(comps)} channels, system has l={dimension}")
    return VectorSignal(comps)


# ---------------------------------------------------------------------------
# Simulation CSV
# ---------------------------------------------------------------------------


def csv_header(r: int) -> list[str]:
    return (
        ["t"]
        + [f"z_{i + 1}" for i in range(r)]
        + [f"zhat_{i + 1}" for i in range(r)]
        + [f"e_{i + 1}" for i in range(r)]
        + ["constraint_residual"]
    )


def write_trajectory_csv(result, path) -> None:
    r = result.z.shape[1]
    table = np.column_stack(
        [result.times, result.z, result.zhat, result.e, result.constraint_residual]
    )
    lines = [",".join(csv_header(r))]
    lines += [",".join(repr(float(v)) for v in row) for row in table]
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory_csv(path) -> tuple[list[str], np.ndarray]:
    rows = Path(path).read_text().strip().splitlines()
    header = rows[0].split(",")
    data = np.array([[float(v) for v in row.split(",")] for row in rows[1:]])
    return header, data.reshape(len(rows) - 1, len(header))


def parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ParseError(f"expected comma-separated numbers, got {text!r}") from exc
