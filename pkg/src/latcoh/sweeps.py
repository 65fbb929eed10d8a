"""Size sweeps, growth classification, lattice-sum asymptotics, and the
control-effort lower bound.

Per-site measures are computed analytically across increasing side lengths
and classified into one of three growth classes: bounded, logarithmic, or a
power of N. The classification rules are explicit because finite sweeps
must discriminate N, log N, and 1 at desk scale: the log-log slope must be
within 0.1 of zero for "bounded"; otherwise a linear fit of the value
against log N with R^2 > 0.99 means "logarithmic"; anything else is a power
law with the fitted exponent. Fits skip sizes below a configurable floor to
avoid pre-asymptotic bias.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ParityError
from .measures import MeasureKind, control_effort, variance
from .spectral import require_stable
from .stencils import FeedbackKind, FeedbackSpec
from .torus import TorusShape, fold_coords, site_coords

DEFAULT_FIT_FLOOR = 17
BOUNDED_SLOPE_TOL = 0.1
LOG_R2_THRESHOLD = 0.99
BRACKET_SPREAD_LIMIT = 1.5


@dataclass(frozen=True)
class GrowthFit:
    """Fitted growth class of a positive sequence against size."""

    growth_class: str  # 'bounded' | 'logarithmic' | 'power'
    exponent: float    # log-log slope (meaningful for 'power')
    loglog_r2: float
    linlog_r2: float
    fit_sizes: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"class": self.growth_class, "exponent": self.exponent,
                "loglog_r2": self.loglog_r2, "linlog_r2": self.linlog_r2,
                "fit_sizes": list(self.fit_sizes)}


def _linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    slope, _ = np.polyfit(x, y, 1)
    resid = y - np.polyval(np.polyfit(x, y, 1), x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def classify_growth(sizes: Sequence[int], values: Sequence[float],
                    fit_floor: int = DEFAULT_FIT_FLOOR) -> GrowthFit:
    """Classify growth of values over sizes; see module docstring for rules."""
    sizes = np.asarray(sizes, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = sizes >= fit_floor
    if keep.sum() < 3:
        raise ConfigError("need at least three sizes above the fit floor")
    if np.any(values[keep] <= 0):
        raise ConfigError("growth classification needs positive values")
    x = np.log(sizes[keep])
    slope, loglog_r2 = _linear_fit(x, np.log(values[keep]))
    linlog_slope, linlog_r2 = _linear_fit(x, values[keep])
    if abs(slope) <= BOUNDED_SLOPE_TOL:
        cls = "bounded"
    elif linlog_r2 > LOG_R2_THRESHOLD:
        cls = "logarithmic"
    else:
        cls = "power"
    return GrowthFit(growth_class=cls, exponent=slope, loglog_r2=loglog_r2,
                     linlog_r2=linlog_r2,
                     fit_sizes=tuple(int(s) for s in sizes[keep]))


@dataclass(frozen=True)
class SweepPlan:
    """One row of a scaling experiment: measure per-site values across N."""

    d: int
    sizes: tuple[int, ...]
    spec_factory: Callable[[int], FeedbackSpec]
    measure: MeasureKind
    label: str = ""
    fit_floor: int = DEFAULT_FIT_FLOOR
    theory_class: str | None = None
    theory_exponent: float | None = None
    exponent_band: float = 0.2

    def __post_init__(self):
        if list(self.sizes) != sorted(set(self.sizes)):
            raise ConfigError("sizes must be strictly increasing")
        if self.measure is MeasureKind.LONG_RANGE_DEVIATION:
            if any(N % 2 for N in self.sizes):
                raise ParityError("long range deviation sweeps need even sizes")


@dataclass(frozen=True)
class ScalingReport:
    label: str
    measure: MeasureKind
    sizes: tuple[int, ...]
    per_site: tuple[float, ...]
    fit: GrowthFit
    theory_class: str | None
    theory_exponent: float | None
    verdict: bool | None

    def to_dict(self) -> dict:
        return {"label": self.label, "measure": self.measure.value,
                "sizes": list(self.sizes), "per_site": list(self.per_site),
                "fit": self.fit.to_dict(), "theory_class": self.theory_class,
                "theory_exponent": self.theory_exponent, "verdict": self.verdict}


def sweep(plan: SweepPlan, workers: int = 1) -> ScalingReport:
    """Evaluate the analytic per-site measure across sizes and classify.

    Points are independent; with ``workers`` > 1 they are evaluated in a
    process pool and reassembled in size order.
    """
    def point(N: int) -> float:
        spec = plan.spec_factory(N)
        require_stable(spec)
        return variance(spec, plan.measure).per_site

    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(_SweepPoint(plan), plan.sizes))
    else:
        values = [point(N) for N in plan.sizes]
    fit = classify_growth(plan.sizes, values, plan.fit_floor)
    verdict = None
    if plan.theory_class is not None:
        verdict = fit.growth_class == plan.theory_class
        if verdict and plan.theory_class == "power" and plan.theory_exponent is not None:
            verdict = abs(fit.exponent - plan.theory_exponent) <= plan.exponent_band
    return ScalingReport(label=plan.label, measure=plan.measure, sizes=plan.sizes,
                         per_site=tuple(values), fit=fit,
                         theory_class=plan.theory_class,
                         theory_exponent=plan.theory_exponent, verdict=verdict)


class _SweepPoint:
    """Picklable per-size evaluator for process pools."""

    def __init__(self, plan: SweepPlan):
        self.plan = plan

    def __call__(self, N: int) -> float:
        spec = self.plan.spec_factory(N)
        require_stable(spec)
        return variance(spec, self.plan.measure).per_site


def lattice_sum(d: int, N: int, p: int) -> float:
    """Brute-force sum of 1/(n_1^2+...+n_d^2)^p over the folded cube.

    Odd N only; the cube is Z_Nbar^d with Nbar = (N+1)/2, the fundamental
    domain of the reflection symmetry, with n = 0 excluded. Summed slice by
    slice so memory stays O(Nbar^{d-1}).
    """
    if N < 3 or N % 2 == 0:
        raise ConfigError("lattice_sum needs odd N >= 3")
    if d < 1 or p < 1:
        raise ConfigError("d and p must be positive")
    nbar = (N + 1) // 2
    if d == 1:
        n = np.arange(1, nbar, dtype=float)
        return float(math.fsum((1.0 / n ** (2 * p)).tolist()))
    grids = np.meshgrid(*([np.arange(nbar)] * (d - 1)), indexing="ij")
    rest = sum(g.astype(float) ** 2 for g in grids).ravel()
    slices = []
    for n1 in range(nbar):
        s = rest + float(n1) ** 2
        if n1 == 0:
            s = s[1:]
        slices.append(float(np.sum(1.0 / s**p)))
    return float(math.fsum(slices))


def sum_theory_value(d: int, p: int, nbar: int) -> float:
    """Asymptotic comparison function g for the lattice sums:
    (1/(d-2p)) (Nbar^{d-2p} - 1) off the critical dimension, log(Nbar) at
    d = 2p."""
    if d == 2 * p:
        return math.log(nbar)
    e = d - 2 * p
    return (nbar**e - 1.0) / e


def sum_theory_class(d: int, p: int) -> str:
    if d > 2 * p:
        return "power"
    if d == 2 * p:
        return "logarithmic"
    return "bounded"


@dataclass(frozen=True)
class SumAsymptoticsReport:
    d: int
    p: int
    sizes: tuple[int, ...]
    values: tuple[float, ...]
    ratios: tuple[float, ...]
    theory_class: str
    detected: GrowthFit
    bracket_low: float
    bracket_high: float
    bracket_stable: bool
    verdict: bool

    def to_dict(self) -> dict:
        return {"d": self.d, "p": self.p, "sizes": list(self.sizes),
                "values": list(self.values), "ratios": list(self.ratios),
                "theory_class": self.theory_class,
                "detected": self.detected.to_dict(),
                "bracket": [self.bracket_low, self.bracket_high],
                "bracket_stable": self.bracket_stable, "verdict": self.verdict}


def verify_sum_asymptotics(d: int, p: int, sizes: Sequence[int],
                           fit_floor: int | None = None,
                           spread_limit: float = BRACKET_SPREAD_LIMIT) -> SumAsymptoticsReport:
    """Check the lattice sums against their asymptotic comparison function.

    The sums must bracket the theory value with constants that stay within
    ``spread_limit`` of each other over the upper half of the sweep, and the
    growth classifier applied to the raw sums must detect the theory class.
    """
    sizes = tuple(int(N) for N in sizes)
    if list(sizes) != sorted(set(sizes)):
        raise ConfigError("sizes must be strictly increasing")
    nbars = [(N + 1) // 2 for N in sizes]
    values = [lattice_sum(d, N, p) for N in sizes]
    ratios = [v / sum_theory_value(d, p, nb) for v, nb in zip(values, nbars)]
    if fit_floor is None:
        fit_floor = nbars[0]
    detected = classify_growth(nbars, values, fit_floor)
    upper = ratios[len(ratios) // 2:]
    lo, hi = min(upper), max(upper)
    stable = lo > 0 and hi / lo <= spread_limit
    theory = sum_theory_class(d, p)
    return SumAsymptoticsReport(
        d=d, p=p, sizes=sizes, values=tuple(values), ratios=tuple(ratios),
        theory_class=theory, detected=detected, bracket_low=lo, bracket_high=hi,
        bracket_stable=stable,
        verdict=(detected.growth_class == theory) and stable)


@dataclass(frozen=True)
class LowerBoundReport:
    """Explicit control-effort lower bound on the macroscopic measure."""

    effort: float
    radius: int
    measured: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.measured >= self.bound * (1.0 - 1e-12)

    def to_dict(self) -> dict:
        return {"effort": self.effort, "radius": self.radius,
                "measured": self.measured, "bound": self.bound,
                "holds": self.holds}


def lower_bound_check_consensus(spec: FeedbackSpec) -> LowerBoundReport:
    """Deviation-from-average lower bound from the per-site effort W.

    For a local (radius q), relative, symmetric, stable consensus array:

        V_dav >= N^2 / (pi^2 (2q)^{d+2} * 2 W) * sum_{n!=0} 1/(|n_1|+...+|n_d|)^2

    with the wavenumbers taken in the folded symmetric range so every term
    is finite. The 2 is the constant of the effort-to-array bound
    ||a||_inf <= 2 E{u^2}.
    """
    if spec.kind is not FeedbackKind.CONSENSUS:
        raise ConfigError("the lower-bound chain applies to consensus specs")
    require_stable(spec)
    shape = spec.shape
    q = max(1, spec.a.radius)
    W = control_effort(spec)
    folded = np.abs(fold_coords(shape, site_coords(shape)))
    s = np.sum(folded, axis=1).astype(float)
    terms = 1.0 / s[s > 0] ** 2
    lattice_factor = math.fsum(terms.tolist())
    bound = shape.N**2 / (math.pi**2 * (2 * q) ** (shape.d + 2) * 2.0 * W) * lattice_factor
    measured = variance(spec, MeasureKind.DEVIATION_FROM_AVERAGE).total
    return LowerBoundReport(effort=W, radius=q, measured=measured, bound=bound)


@dataclass(frozen=True)
class InequalityReport:
    """Sample counts and violations for the auxiliary scalar inequalities."""

    samples: int
    violations: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v == 0 for v in self.violations.values())

    def to_dict(self) -> dict:
        return {"samples": self.samples, "violations": dict(self.violations),
                "passed": self.passed}


def auxiliary_inequality_suite(samples: int = 10_000, seed: int = 0) -> InequalityReport:
    """Property-test the scalar facts behind the bound derivations.

    1 - cos(x) <= x^2 on wide reals (the sharp constant is 1/2, so this has
    slack); 1 - cos(y) >= (2/pi^2) y^2 on [-pi, pi]; and the Cauchy-Schwarz
    style count (n_1+...+n_d)^2 <= (2d+1)(n_1^2+...+n_d^2) on integer tuples
    for d <= 6.
    """
    rng = np.random.default_rng(seed)
    violations: dict[str, int] = {}
    x = rng.uniform(-50.0, 50.0, size=samples)
    violations["cos_upper"] = int(np.sum(1.0 - np.cos(x) > x**2 + 1e-15))
    y = rng.uniform(-np.pi, np.pi, size=samples)
    violations["cos_lower"] = int(np.sum(1.0 - np.cos(y) < (2.0 / np.pi**2) * y**2 - 1e-15))
    bad = 0
    for _ in range(samples):
        d = int(rng.integers(1, 7))
        n = rng.integers(-100, 101, size=d).astype(float)
        if np.sum(n) ** 2 > (2 * d + 1) * np.sum(n**2) + 1e-9:
            bad += 1
    violations["coordinate_sum_square"] = bad
    return InequalityReport(samples=samples, violations=violations)
