"""Local convolution operators and feedback specifications.

A stencil is a finite-support real coefficient array over torus offsets; it
defines a circulant operator by circular convolution. Feedback laws are
either a single consensus array or a vehicular pair of relative stencils
plus absolute position/velocity gains and viscous friction. Structural
validation covers the usual requirements for spatially invariant feedback:
sum-zero relative arrays, locality radius q with 2q+1 <= N, reflection
symmetry (real Fourier symbols), and non-positive absolute gains.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import ConfigError, StructureError
from .torus import TorusShape, fold_offset

_SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class Stencil:
    """Sparse convolution coefficients over Z_N^d.

    Offsets are stored canonically in [0, N-1] per coordinate; zero
    coefficients are dropped. The radius q is the largest folded coordinate
    magnitude of the support and must satisfy 2q+1 <= N.
    """

    shape: TorusShape
    coeffs: Mapping[tuple[int, ...], float] = field(default_factory=dict)

    def __post_init__(self):
        normalized: dict[tuple[int, ...], float] = {}
        for offset, value in self.coeffs.items():
            if len(offset) != self.shape.d:
                raise ConfigError(f"offset {offset} has wrong arity for d={self.shape.d}")
            value = float(value)
            if not math.isfinite(value):
                raise ConfigError(f"non-finite coefficient at offset {offset}")
            if value == 0.0:
                continue
            key = tuple(int(c) % self.shape.N for c in offset)
            normalized[key] = normalized.get(key, 0.0) + value
        normalized = {k: v for k, v in normalized.items() if v != 0.0}
        object.__setattr__(self, "coeffs", normalized)
        q = self.radius
        if 2 * q + 1 > self.shape.N:
            raise StructureError(f"support radius {q} too wide for N={self.shape.N}")

    @property
    def radius(self) -> int:
        """Largest folded coordinate magnitude over the support."""
        q = 0
        for offset in self.coeffs:
            folded = fold_offset(self.shape, offset)
            q = max(q, max((abs(c) for c in folded), default=0))
        return q

    def folded_items(self):
        """(folded offset, coefficient) pairs, sorted for determinism."""
        items = [(fold_offset(self.shape, off), val) for off, val in self.coeffs.items()]
        return sorted(items)

    def coefficient(self, offset: tuple[int, ...]) -> float:
        key = tuple(int(c) % self.shape.N for c in offset)
        return self.coeffs.get(key, 0.0)

    def coefficient_sum(self) -> float:
        return math.fsum(self.coeffs.values())

    def linfty(self) -> float:
        """Max coefficient magnitude over the full array (zeros included)."""
        return max((abs(v) for v in self.coeffs.values()), default=0.0)

    def l1_off_center(self) -> float:
        center = (0,) * self.shape.d
        return math.fsum(abs(v) for k, v in self.coeffs.items() if k != center)

    def scaled(self, factor: float) -> "Stencil":
        return Stencil(self.shape, {k: factor * v for k, v in self.coeffs.items()})

    def is_symmetric(self, rtol: float = _SYMMETRY_RTOL) -> bool:
        """Reflection symmetry: coefficient at k equals coefficient at -k."""
        scale = max(self.linfty(), 1.0)
        for offset, value in self.coeffs.items():
            mirror = tuple((-c) % self.shape.N for c in offset)
            if abs(self.coeffs.get(mirror, 0.0) - value) > rtol * scale:
                return False
        return True


def zero_stencil(shape: TorusShape) -> Stencil:
    return Stencil(shape, {})


def delta_stencil(shape: TorusShape, offset: tuple[int, ...] = None, value: float = 1.0) -> Stencil:
    if offset is None:
        offset = (0,) * shape.d
    return Stencil(shape, {tuple(offset): value})


def standard_consensus_stencil(shape: TorusShape, beta: float) -> Stencil:
    """Equal-weight nearest-neighbor averaging array.

    Coefficient -2*d*beta at the origin and beta at each of the 2d unit
    offsets. Requires N >= 3 so the +1 and -1 offsets are distinct.
    """
    if shape.N < 3:
        raise ConfigError("standard consensus stencil needs N >= 3")
    if beta <= 0:
        raise ConfigError("beta must be positive")
    coeffs = {(0,) * shape.d: -2.0 * shape.d * beta}
    for r in range(shape.d):
        for sign in (+1, -1):
            offset = [0] * shape.d
            offset[r] = sign
            coeffs[tuple(offset)] = beta
    return Stencil(shape, coeffs)


class FeedbackKind(Enum):
    CONSENSUS = "consensus"
    VEHICULAR = "vehicular"


@dataclass(frozen=True)
class FeedbackSpec:
    """Consensus array a, or vehicular relative pair (g, f) plus absolute
    gains g_o, f_o and viscous friction mu.

    Absolute terms are kept out of the relative stencils so that relative
    and absolute contributions scale independently. Structural conformance
    is checked by :func:`validate_structure`, not at construction, so tests
    can build deliberately invalid specifications.
    """

    kind: FeedbackKind
    a: Stencil | None = None
    g_rel: Stencil | None = None
    f_rel: Stencil | None = None
    g_o: float = 0.0
    f_o: float = 0.0
    mu: float = 0.0

    def __post_init__(self):
        for name in ("g_o", "f_o", "mu"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.kind is FeedbackKind.CONSENSUS:
            if self.a is None:
                raise ConfigError("consensus spec needs the array a")
        else:
            if self.g_rel is None or self.f_rel is None:
                raise ConfigError("vehicular spec needs both relative stencils")
            if self.g_rel.shape != self.f_rel.shape:
                raise ConfigError("position and velocity stencils must share a shape")

    @property
    def shape(self) -> TorusShape:
        return self.a.shape if self.kind is FeedbackKind.CONSENSUS else self.g_rel.shape

    @classmethod
    def consensus(cls, a: Stencil) -> "FeedbackSpec":
        return cls(kind=FeedbackKind.CONSENSUS, a=a)

    @classmethod
    def vehicular(cls, g_rel: Stencil, f_rel: Stencil, g_o: float = 0.0,
                  f_o: float = 0.0, mu: float = 0.0) -> "FeedbackSpec":
        return cls(kind=FeedbackKind.VEHICULAR, g_rel=g_rel, f_rel=f_rel,
                   g_o=g_o, f_o=f_o, mu=mu)


def standard_consensus_spec(shape: TorusShape, beta: float) -> FeedbackSpec:
    return FeedbackSpec.consensus(standard_consensus_stencil(shape, beta))


def standard_vehicular_spec(shape: TorusShape, beta: float, g_o: float = 0.0,
                            f_o: float = 0.0, mu: float = 0.0) -> FeedbackSpec:
    """Nearest-neighbor relative position and velocity feedback with
    optional absolute gains; the four classic feedback scenarios are the
    sign patterns of (g_o, f_o)."""
    rel = standard_consensus_stencil(shape, beta)
    return FeedbackSpec.vehicular(rel, rel, g_o=g_o, f_o=f_o, mu=mu)


def stencil_from_platoon_gains(shape: TorusShape, g_plus: float, g_minus: float,
                               f_plus: float, f_minus: float,
                               g_o: float = 0.0, f_o: float = 0.0,
                               mu: float = 0.0) -> FeedbackSpec:
    """Vehicular spec from look-ahead/look-behind platoon gains (d=1 only)."""
    if shape.d != 1:
        raise ConfigError("platoon gains are defined for one-dimensional formations")
    for v in (g_plus, g_minus, f_plus, f_minus):
        if not math.isfinite(v):
            raise ConfigError("gains must be finite")
    g_rel = Stencil(shape, {(0,): -(g_plus + g_minus), (1,): g_plus, (-1,): g_minus})
    f_rel = Stencil(shape, {(0,): -(f_plus + f_minus), (1,): f_plus, (-1,): f_minus})
    return FeedbackSpec.vehicular(g_rel, f_rel, g_o=g_o, f_o=f_o, mu=mu)


@dataclass(frozen=True)
class StructureReport:
    """Pass/fail record for the structural assumptions on a feedback spec."""

    checks: Mapping[str, bool]
    details: Mapping[str, str]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": dict(self.checks),
                "details": dict(self.details)}


def _stencil_checks(prefix: str, s: Stencil, relative: bool, checks, details):
    scale = max(s.linfty(), 1.0)
    if relative:
        total = s.coefficient_sum()
        ok = abs(total) <= 1e-12 * scale
        checks[f"{prefix}_sum_zero"] = ok
        if not ok:
            details[f"{prefix}_sum_zero"] = f"coefficients sum to {total:g}"
    ok = 2 * s.radius + 1 <= s.shape.N
    checks[f"{prefix}_locality"] = ok
    if not ok:
        details[f"{prefix}_locality"] = f"2q+1={2 * s.radius + 1} exceeds N={s.shape.N}"
    ok = s.is_symmetric()
    checks[f"{prefix}_symmetry"] = ok
    if not ok:
        details[f"{prefix}_symmetry"] = "coefficients at k and -k differ"


def validate_structure(spec: FeedbackSpec) -> StructureReport:
    """Report conformance with the structural assumptions.

    Checks relative sum-zero, locality radius against N, reflection
    symmetry, and the sign conditions g_o <= 0, f_o <= 0, mu >= 0.
    """
    checks: dict[str, bool] = {}
    details: dict[str, str] = {}
    if spec.kind is FeedbackKind.CONSENSUS:
        _stencil_checks("a", spec.a, relative=True, checks=checks, details=details)
    else:
        _stencil_checks("g_rel", spec.g_rel, relative=True, checks=checks, details=details)
        _stencil_checks("f_rel", spec.f_rel, relative=True, checks=checks, details=details)
        checks["g_o_sign"] = spec.g_o <= 0.0
        checks["f_o_sign"] = spec.f_o <= 0.0
        checks["mu_sign"] = spec.mu >= 0.0
        for name in ("g_o_sign", "f_o_sign", "mu_sign"):
            if not checks[name]:
                details[name] = f"{name.split('_sign')[0]} has the wrong sign"
    return StructureReport(checks=checks, details=details)


def apply_convolution(s: Stencil, x: np.ndarray) -> np.ndarray:
    """Circular convolution of a state array (flat, enumeration order)."""
    x = np.asarray(x, dtype=float)
    M = s.shape.site_count
    if x.shape != (M,):
        raise ConfigError(f"state array must have {M} entries, got shape {x.shape}")
    return apply_convolution_batch(s, x[np.newaxis, :])[0]


def apply_convolution_batch(s: Stencil, x: np.ndarray) -> np.ndarray:
    """Convolution applied along the last axis of a (..., M) array."""
    shape = s.shape
    lead = x.shape[:-1]
    grid = x.reshape(lead + (shape.N,) * shape.d)
    out = np.zeros_like(grid)
    axes = tuple(range(len(lead), len(lead) + shape.d))
    for offset, value in s.coeffs.items():
        out += value * np.roll(grid, shift=offset, axis=axes)
    return out.reshape(x.shape)


def stencil_to_dict(s: Stencil) -> dict:
    return {
        "shape": {"d": s.shape.d, "N": s.shape.N},
        "q": s.radius,
        "entries": [{"offset": list(off), "value": val}
                    for off, val in sorted(s.coeffs.items())],
    }


def stencil_from_dict(doc: dict) -> Stencil:
    try:
        shape = TorusShape(int(doc["shape"]["d"]), int(doc["shape"]["N"]))
        coeffs = {tuple(int(c) for c in e["offset"]): float(e["value"])
                  for e in doc.get("entries", [])}
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed stencil document: {exc}") from exc
    return Stencil(shape, coeffs)


def spec_to_dict(spec: FeedbackSpec) -> dict:
    doc: dict = {"kind": spec.kind.value}
    if spec.kind is FeedbackKind.CONSENSUS:
        doc["a"] = stencil_to_dict(spec.a)
    else:
        doc["g_rel"] = stencil_to_dict(spec.g_rel)
        doc["f_rel"] = stencil_to_dict(spec.f_rel)
        doc["g_o"] = spec.g_o
        doc["f_o"] = spec.f_o
        doc["mu"] = spec.mu
    return doc


def spec_from_dict(doc: dict) -> FeedbackSpec:
    kind = doc.get("kind")
    if kind == FeedbackKind.CONSENSUS.value:
        return FeedbackSpec.consensus(stencil_from_dict(doc["a"]))
    if kind == FeedbackKind.VEHICULAR.value:
        return FeedbackSpec.vehicular(
            stencil_from_dict(doc["g_rel"]), stencil_from_dict(doc["f_rel"]),
            g_o=float(doc.get("g_o", 0.0)), f_o=float(doc.get("f_o", 0.0)),
            mu=float(doc.get("mu", 0.0)))
    raise ConfigError(f"unknown feedback kind {kind!r}")


def spec_digest(spec: FeedbackSpec) -> str:
    """Short stable identifier for a feedback spec, for report metadata."""
    blob = json.dumps(spec_to_dict(spec), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
