"""Closed-form H2 performance measures for consensus and vehicular systems.

The steady-state output variance under unit white noise decomposes over
wavenumbers. With real symbols the totals are

    consensus:  V = -(1/2) sum_{n!=0} |c_hat_n|^2 / Re(a_hat_n)
    vehicular:  V =  (d/2) sum_{n!=0} |c_hat_n|^2 / (g_hat_n f_hat_n)

where c_hat is the symbol of the output operator of the chosen measure.
The mean mode n=0 is excluded everywhere: it is unobservable under every
coherence output, and effort sums follow the same convention so that the
array bounds used by the lower-bound analysis hold verbatim. Per-wavenumber
terms can differ by factors up to N^4, so totals are accumulated with
compensated summation (math.fsum).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ParityError, StabilityError
from .spectral import (
    effective_symbols,
    standard_symbol_array,
    stability_offenders,
)
from .stencils import FeedbackKind, FeedbackSpec, Stencil, spec_digest
from .torus import TorusShape, site_coords


class MeasureKind(Enum):
    LOCAL_ERROR = "local"
    LONG_RANGE_DEVIATION = "lrd"
    DEVIATION_FROM_AVERAGE = "dav"
    CONTROL_EFFORT = "effort"


OUTPUT_MEASURES = (MeasureKind.LOCAL_ERROR, MeasureKind.LONG_RANGE_DEVIATION,
                   MeasureKind.DEVIATION_FROM_AVERAGE)


@dataclass(frozen=True)
class VarianceReport:
    """Total H2 value of one measure, with audit metadata."""

    kind: MeasureKind
    total: float
    per_site: float
    shape: TorusShape
    spec_digest: str
    formula: str
    beta_ref: float | None = None

    def to_dict(self) -> dict:
        doc = {
            "kind": self.kind.value,
            "total": self.total,
            "per_site": self.per_site,
            "shape": {"d": self.shape.d, "N": self.shape.N},
            "spec_digest": self.spec_digest,
            "formula": self.formula,
        }
        if self.beta_ref is not None:
            doc["beta_ref"] = self.beta_ref
        return doc


@dataclass(frozen=True)
class StabilityReport:
    passed: bool
    offending: tuple[tuple[int, ...], ...]

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "offending_wavenumbers": [list(n) for n in self.offending]}


def stability_check(spec: FeedbackSpec) -> StabilityReport:
    """Hurwitz check per wavenumber block, mean mode exempt."""
    offenders = stability_offenders(spec)
    return StabilityReport(passed=not offenders, offending=tuple(offenders))


def _require_stable(spec: FeedbackSpec) -> None:
    report = stability_check(spec)
    if not report.passed:
        raise StabilityError(
            f"{len(report.offending)} wavenumbers are not strictly stable",
            report.offending)


def infer_standard_beta(s: Stencil) -> float | None:
    """Weight beta if the stencil is exactly the standard array, else None."""
    d, N = s.shape.d, s.shape.N
    if N < 3 or len(s.coeffs) != 2 * d + 1:
        return None
    beta = -s.coefficient((0,) * d) / (2.0 * d)
    if beta <= 0:
        return None
    for r in range(d):
        for sign in (+1, -1):
            offset = [0] * d
            offset[r] = sign
            if s.coefficient(tuple(offset)) != beta:
                return None
    return beta


def _resolve_beta_ref(spec: FeedbackSpec, beta_ref: float | None) -> float:
    """Reference weight for the local-error normalization.

    The measure itself is defined by the difference output operator and does
    not depend on this choice (the beta_ref factors cancel); it is recorded
    so reports state which convention produced them. When the spec uses the
    standard array its own weight is inferred, otherwise 1.
    """
    if beta_ref is not None:
        if beta_ref <= 0:
            raise ConfigError("beta_ref must be positive")
        return float(beta_ref)
    base = spec.a if spec.kind is FeedbackKind.CONSENSUS else spec.g_rel
    inferred = infer_standard_beta(base)
    return inferred if inferred is not None else 1.0


def output_symbol_squared(kind: MeasureKind, shape: TorusShape,
                          beta_ref: float = 1.0) -> np.ndarray:
    """|c_hat_n|^2 of the output operator of a measure, per wavenumber.

    Local error uses the identity C*C = -(1/(2 d beta)) O against the
    standard array evaluated at beta_ref; long range deviation is 4 at odd
    coordinate-sum parity and 0 otherwise (even N only); deviation from
    average is 1 away from the mean mode.
    """
    n = site_coords(shape)
    nonzero = np.any(n != 0, axis=1)
    if kind is MeasureKind.LOCAL_ERROR:
        if beta_ref <= 0:
            raise ConfigError("beta_ref must be positive")
        return -standard_symbol_array(shape, beta_ref) / (2.0 * shape.d * beta_ref)
    if kind is MeasureKind.LONG_RANGE_DEVIATION:
        if shape.N % 2:
            raise ParityError("long range deviation requires an even side length")
        odd = (np.sum(n, axis=1) % 2).astype(bool)
        return np.where(odd, 4.0, 0.0)
    if kind is MeasureKind.DEVIATION_FROM_AVERAGE:
        return np.where(nonzero, 1.0, 0.0)
    raise ConfigError(f"{kind} is not an output measure")


def _formula_id(spec: FeedbackSpec, kind: MeasureKind) -> str:
    return f"h2.{spec.kind.value}.{kind.value}"


def consensus_variance(spec: FeedbackSpec, kind: MeasureKind,
                       beta_ref: float | None = None) -> VarianceReport:
    """Total and per-site variance of a consensus measure."""
    if spec.kind is not FeedbackKind.CONSENSUS:
        raise ConfigError("spec is not a consensus spec")
    if kind not in OUTPUT_MEASURES:
        raise ConfigError(f"{kind} is not an output measure")
    _require_stable(spec)
    shape = spec.shape
    bref = _resolve_beta_ref(spec, beta_ref)
    c2 = output_symbol_squared(kind, shape, bref)
    (ahat,) = effective_symbols(spec)
    n = site_coords(shape)
    nonzero = np.any(n != 0, axis=1)
    total = -0.5 * math.fsum((c2[nonzero] / ahat[nonzero]).tolist())
    return VarianceReport(kind=kind, total=total, per_site=total / shape.site_count,
                          shape=shape, spec_digest=spec_digest(spec),
                          formula=_formula_id(spec, kind),
                          beta_ref=bref if kind is MeasureKind.LOCAL_ERROR else None)


def vehicular_variance(spec: FeedbackSpec, kind: MeasureKind,
                       beta_ref: float | None = None) -> VarianceReport:
    """Total and per-site variance of a vehicular measure.

    The d vehicle coordinates decouple into identical scalar blocks, hence
    the overall d/2 factor.
    """
    if spec.kind is not FeedbackKind.VEHICULAR:
        raise ConfigError("spec is not a vehicular spec")
    if kind not in OUTPUT_MEASURES:
        raise ConfigError(f"{kind} is not an output measure")
    _require_stable(spec)
    shape = spec.shape
    bref = _resolve_beta_ref(spec, beta_ref)
    c2 = output_symbol_squared(kind, shape, bref)
    ghat, fhat = effective_symbols(spec)
    n = site_coords(shape)
    nonzero = np.any(n != 0, axis=1)
    terms = c2[nonzero] / (ghat[nonzero] * fhat[nonzero])
    total = (shape.d / 2.0) * math.fsum(terms.tolist())
    return VarianceReport(kind=kind, total=total, per_site=total / shape.site_count,
                          shape=shape, spec_digest=spec_digest(spec),
                          formula=_formula_id(spec, kind),
                          beta_ref=bref if kind is MeasureKind.LOCAL_ERROR else None)


def variance(spec: FeedbackSpec, kind: MeasureKind,
             beta_ref: float | None = None) -> VarianceReport:
    """Dispatch to the consensus or vehicular closed form."""
    if spec.kind is FeedbackKind.CONSENSUS:
        return consensus_variance(spec, kind, beta_ref)
    return vehicular_variance(spec, kind, beta_ref)


def control_effort(spec: FeedbackSpec) -> float:
    """Steady-state variance of the control signal at each site.

    Consensus: (1/2M) sum_{n!=0} (-a_hat_n). Vehicular:
    (d/2M) (sum_{n!=0} |f_hat_n| + sum_{n!=0} |g_hat_n| / |f_hat_n|).
    The n=0 term is excluded so the sums match the array bounds used by the
    lower-bound analysis; relative symbols vanish there anyway and absolute
    contributions act only on the unobservable mean.
    """
    _require_stable(spec)
    shape = spec.shape
    n = site_coords(shape)
    nonzero = np.any(n != 0, axis=1)
    M = shape.site_count
    if spec.kind is FeedbackKind.CONSENSUS:
        (ahat,) = effective_symbols(spec)
        return 0.5 / M * math.fsum((-ahat[nonzero]).tolist())
    ghat, fhat = effective_symbols(spec)
    g, f = np.abs(ghat[nonzero]), np.abs(fhat[nonzero])
    return shape.d / (2.0 * M) * (math.fsum(f.tolist()) + math.fsum((g / f).tolist()))


def _array_linfty(rel: Stencil, absolute: float) -> float:
    """Sup norm of a feedback array with the absolute term folded into the
    center coefficient."""
    center = (0,) * rel.shape.d
    worst = abs(rel.coefficient(center) + absolute)
    for offset, value in rel.coeffs.items():
        if offset != center:
            worst = max(worst, abs(value))
    return worst


@dataclass(frozen=True)
class Lemma2Report:
    """Array sup-norm bounds implied by a per-site control effort budget."""

    effort: float
    bounds: tuple[tuple[str, float, float], ...]  # (name, lhs, rhs)

    @property
    def passed(self) -> bool:
        return all(lhs <= rhs * (1.0 + 1e-12) for _, lhs, rhs in self.bounds)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "effort": self.effort,
                "bounds": [{"name": n, "lhs": l, "rhs": r} for n, l, r in self.bounds]}


def lemma2_bound_check(spec: FeedbackSpec) -> Lemma2Report:
    """Check the effort-to-array bounds.

    Consensus: ||a||_inf <= 2 E{u^2}. Vehicular: ||f||_inf <= (2/d) E{u^2}
    and ||g||_inf <= (2 (2q)^d / d) ||f||_inf E{u^2}, with q the locality
    radius (at least 1).
    """
    effort = control_effort(spec)
    d = spec.shape.d
    if spec.kind is FeedbackKind.CONSENSUS:
        bounds = (("a_inf", spec.a.linfty(), 2.0 * effort),)
    else:
        f_inf = _array_linfty(spec.f_rel, spec.f_o - spec.mu)
        g_inf = _array_linfty(spec.g_rel, spec.g_o)
        q = max(1, spec.g_rel.radius, spec.f_rel.radius)
        bounds = (
            ("f_inf", f_inf, 2.0 / d * effort),
            ("g_inf", g_inf, 2.0 * (2 * q)**d / d * f_inf * effort),
        )
    return Lemma2Report(effort=effort, bounds=bounds)
