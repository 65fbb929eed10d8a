import math

import numpy as np
import pytest

from latcoh.errors import ConfigError, ParityError, StabilityError
from latcoh.measures import (
    MeasureKind,
    consensus_variance,
    control_effort,
    infer_standard_beta,
    lemma2_bound_check,
    output_symbol_squared,
    stability_check,
    variance,
    vehicular_variance,
)
from latcoh.stencils import (
    FeedbackSpec,
    Stencil,
    standard_consensus_spec,
    standard_consensus_stencil,
    standard_vehicular_spec,
)
from latcoh.torus import TorusShape


def random_symmetric_relative_stencil(shape, rng, qmax=3):
    """Random reflection-symmetric sum-zero array, mixed signs allowed."""
    q = int(rng.integers(1, min(qmax, (shape.N - 1) // 2) + 1))
    coeffs = {}
    total = 0.0
    for k in range(1, q + 1):
        c = float(rng.uniform(-0.3, 1.0))
        for r in range(shape.d):
            plus = [0] * shape.d
            plus[r] = k
            minus = [0] * shape.d
            minus[r] = -k
            coeffs[tuple(plus)] = c
            coeffs[tuple(minus)] = c
            total += 2 * c
    coeffs[(0,) * shape.d] = -total
    return Stencil(shape, coeffs)


def random_stable_consensus_spec(shape, rng, qmax=3):
    while True:
        spec = FeedbackSpec.consensus(random_symmetric_relative_stencil(shape, rng, qmax))
        if stability_check(spec).passed and spec.a.linfty() > 1e-3:
            return spec


def random_stable_vehicular_spec(shape, rng, qmax=2):
    while True:
        spec = FeedbackSpec.vehicular(
            random_symmetric_relative_stencil(shape, rng, qmax),
            random_symmetric_relative_stencil(shape, rng, qmax))
        if stability_check(spec).passed:
            return spec


def test_stability_standard_consensus():
    assert stability_check(standard_consensus_spec(TorusShape(2, 5), 2.0)).passed


def test_stability_negative_beta_fails_everywhere():
    good = standard_consensus_spec(TorusShape(1, 5), 1.0)
    bad = FeedbackSpec.consensus(good.a.scaled(-1.0))
    report = stability_check(bad)
    assert not report.passed
    assert len(report.offending) == 4


def test_stability_vehicular_zero_velocity_symbol():
    rel = standard_consensus_stencil(TorusShape(1, 5), 1.0)
    zero = Stencil(TorusShape(1, 5), {})
    spec = FeedbackSpec.vehicular(rel, zero, f_o=0.0)
    report = stability_check(spec)
    assert not report.passed
    assert len(report.offending) == 4


def test_output_symbol_squared_dav():
    c2 = output_symbol_squared(MeasureKind.DEVIATION_FROM_AVERAGE, TorusShape(2, 3))
    assert c2[0] == 0.0
    np.testing.assert_allclose(c2[1:], 1.0)


def test_output_symbol_squared_lrd():
    c2 = output_symbol_squared(MeasureKind.LONG_RANGE_DEVIATION, TorusShape(1, 4))
    np.testing.assert_allclose(c2, [0.0, 4.0, 0.0, 4.0])
    with pytest.raises(ParityError):
        output_symbol_squared(MeasureKind.LONG_RANGE_DEVIATION, TorusShape(1, 5))


def test_output_symbol_squared_local():
    c2 = output_symbol_squared(MeasureKind.LOCAL_ERROR, TorusShape(1, 4), beta_ref=1.0)
    np.testing.assert_allclose(c2, [0.0, 1.0, 2.0, 1.0], atol=1e-14)
    # the beta_ref normalization cancels by construction
    c2b = output_symbol_squared(MeasureKind.LOCAL_ERROR, TorusShape(1, 4), beta_ref=3.5)
    np.testing.assert_allclose(c2, c2b, atol=1e-14)


# Frozen values cross-checked against the full-state Lyapunov oracle in
# test_lyapunov.py; local error also equals (M-1)/(4 d beta).
def test_consensus_variance_examples():
    spec = standard_consensus_spec(TorusShape(1, 4), 1.0)
    assert consensus_variance(spec, MeasureKind.LOCAL_ERROR).total == pytest.approx(0.75, rel=1e-12)
    assert consensus_variance(spec, MeasureKind.DEVIATION_FROM_AVERAGE).total == pytest.approx(0.625, rel=1e-12)
    assert consensus_variance(spec, MeasureKind.LONG_RANGE_DEVIATION).total == pytest.approx(2.0, rel=1e-12)


def test_consensus_local_error_closed_form_any_shape():
    for d, N, beta in [(1, 6, 0.5), (2, 4, 1.0), (3, 3, 2.0)]:
        spec = standard_consensus_spec(TorusShape(d, N), beta)
        M = N**d
        expected = (M - 1) / (4.0 * d * beta)
        assert consensus_variance(spec, MeasureKind.LOCAL_ERROR).total == pytest.approx(
            expected, rel=1e-12)


def test_consensus_per_site_is_total_over_m():
    spec = standard_consensus_spec(TorusShape(2, 6), 1.0)
    rep = consensus_variance(spec, MeasureKind.DEVIATION_FROM_AVERAGE)
    assert rep.per_site == rep.total / 36


def test_vehicular_variance_examples():
    spec = standard_vehicular_spec(TorusShape(1, 4), 1.0)
    assert vehicular_variance(spec, MeasureKind.DEVIATION_FROM_AVERAGE).total == pytest.approx(
        0.28125, rel=1e-12)


def test_vehicular_abs_abs_dav_closed_form():
    for d, N in [(1, 4), (2, 3)]:
        shape = TorusShape(d, N)
        zero = Stencil(shape, {})
        spec = FeedbackSpec.vehicular(zero, zero, g_o=-1.0, f_o=-1.0)
        expected = (d / 2.0) * (N**d - 1)
        assert vehicular_variance(spec, MeasureKind.DEVIATION_FROM_AVERAGE).total == pytest.approx(
            expected, rel=1e-12)


def test_friction_equivalent_to_absolute_velocity_gain():
    shape = TorusShape(1, 6)
    with_mu = standard_vehicular_spec(shape, 1.0, f_o=0.0, mu=0.7)
    with_fo = standard_vehicular_spec(shape, 1.0, f_o=-0.7, mu=0.0)
    for kind in (MeasureKind.DEVIATION_FROM_AVERAGE, MeasureKind.LOCAL_ERROR,
                 MeasureKind.LONG_RANGE_DEVIATION):
        assert vehicular_variance(with_mu, kind).total == pytest.approx(
            vehicular_variance(with_fo, kind).total, rel=1e-14)
    assert control_effort(with_mu) == pytest.approx(control_effort(with_fo), rel=1e-14)


def test_variance_rejects_unstable():
    bad = FeedbackSpec.consensus(standard_consensus_stencil(TorusShape(1, 5), 1.0).scaled(-1.0))
    with pytest.raises(StabilityError):
        consensus_variance(bad, MeasureKind.DEVIATION_FROM_AVERAGE)


def test_variance_kind_dispatch_guards():
    cons = standard_consensus_spec(TorusShape(1, 4), 1.0)
    veh = standard_vehicular_spec(TorusShape(1, 4), 1.0)
    with pytest.raises(ConfigError):
        consensus_variance(veh, MeasureKind.DEVIATION_FROM_AVERAGE)
    with pytest.raises(ConfigError):
        vehicular_variance(cons, MeasureKind.DEVIATION_FROM_AVERAGE)
    with pytest.raises(ConfigError):
        consensus_variance(cons, MeasureKind.CONTROL_EFFORT)


def test_lrd_at_most_four_dav():
    rng = np.random.default_rng(42)
    for trial in range(30):
        N = int(rng.choice([4, 6, 8, 10]))
        d = int(rng.choice([1, 2]))
        shape = TorusShape(d, N)
        if trial % 2 == 0:
            spec = random_stable_consensus_spec(shape, rng)
        else:
            spec = random_stable_vehicular_spec(shape, rng)
        lrd = variance(spec, MeasureKind.LONG_RANGE_DEVIATION).total
        dav = variance(spec, MeasureKind.DEVIATION_FROM_AVERAGE).total
        assert lrd <= 4.0 * dav * (1.0 + 1e-12)


def test_control_effort_standard_consensus():
    for d, N, beta in [(1, 4, 1.0), (1, 9, 2.5), (2, 5, 0.5), (3, 4, 1.0)]:
        spec = standard_consensus_spec(TorusShape(d, N), beta)
        assert control_effort(spec) == pytest.approx(beta * d, rel=1e-12)


def test_control_effort_scales_linearly_in_beta():
    s1 = standard_consensus_spec(TorusShape(1, 8), 1.0)
    s2 = standard_consensus_spec(TorusShape(1, 8), 2.0)
    assert control_effort(s2) == pytest.approx(2.0 * control_effort(s1), rel=1e-12)


def test_control_effort_vehicular_rel_rel():
    # (d/2M)(sum |f_hat| + sum |g_hat|/|f_hat|) = beta d^2 + d (M-1)/(2M);
    # frozen against the state-space oracle in test_lyapunov.py
    for d, N, beta in [(1, 4, 1.0), (2, 3, 0.7)]:
        spec = standard_vehicular_spec(TorusShape(d, N), beta)
        M = N**d
        expected = beta * d * d + d * (M - 1) / (2.0 * M)
        assert control_effort(spec) == pytest.approx(expected, rel=1e-12)


def test_lemma2_standard_consensus_equality():
    spec = standard_consensus_spec(TorusShape(1, 8), 1.0)
    report = lemma2_bound_check(spec)
    assert report.passed
    (name, lhs, rhs), = report.bounds
    assert name == "a_inf"
    assert lhs == pytest.approx(2.0)
    assert rhs == pytest.approx(2.0)


def test_lemma2_invariant_under_beta_scaling():
    a = lemma2_bound_check(standard_consensus_spec(TorusShape(1, 8), 1.0))
    b = lemma2_bound_check(standard_consensus_spec(TorusShape(1, 8), 4.0))
    ratio_a = a.bounds[0][1] / a.effort
    ratio_b = b.bounds[0][1] / b.effort
    assert ratio_a == pytest.approx(ratio_b, rel=1e-12)


def test_lemma2_random_consensus_stencils():
    rng = np.random.default_rng(7)
    shape = TorusShape(1, 17)
    for _ in range(100):
        spec = random_stable_consensus_spec(shape, rng)
        assert lemma2_bound_check(spec).passed


def test_lemma2_vehicular():
    spec = standard_vehicular_spec(TorusShape(1, 6), 1.0)
    report = lemma2_bound_check(spec)
    assert report.passed
    names = [b[0] for b in report.bounds]
    assert names == ["f_inf", "g_inf"]


def test_infer_standard_beta():
    assert infer_standard_beta(standard_consensus_stencil(TorusShape(2, 5), 1.5)) == 1.5
    lopsided = Stencil(TorusShape(1, 5), {(0,): -3.0, (1,): 2.0, (-1,): 1.0})
    assert infer_standard_beta(lopsided) is None


def test_report_serialization():
    spec = standard_consensus_spec(TorusShape(1, 4), 1.0)
    doc = consensus_variance(spec, MeasureKind.DEVIATION_FROM_AVERAGE).to_dict()
    assert doc["kind"] == "dav"
    assert doc["total"] == pytest.approx(0.625)
    assert doc["formula"] == "h2.consensus.dav"
    assert doc["shape"] == {"d": 1, "N": 4}
