"""Brute-force H2 computation from explicit state-space matrices.

This is the ground-truth oracle for the closed-form measures: it builds the
dense A, B, H matrices of a configuration, deflates the neutrally stable
mean mode by explicit projection (no regularizing shift, so small instances
give exact limits), solves the Lyapunov equation on the stable complement,
and returns tr(B* P B). A per-wavenumber path solves the 1x1 or 2x2 block
equations instead, and a long-horizon quadrature of the Grammian integrand
provides a third route that does not rely on the Lyapunov solver at all.
Dense solves only; instances are capped at a few thousand states.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.linalg

from .errors import ConfigError, OracleCapError, ParityError, StabilityError
from .measures import MeasureKind, OUTPUT_MEASURES, output_symbol_squared, _resolve_beta_ref
from .spectral import effective_symbols, require_stable
from .stencils import FeedbackKind, FeedbackSpec, apply_convolution
from .torus import MultiIndex, TorusShape, flat_index, site_coords

STATE_CAP = 4096


@dataclass(frozen=True)
class StateSpaceRealization:
    """Dense realization dx = A x + B w, y = H x of one configuration.

    Vehicular systems are realized per vehicle coordinate (the coordinates
    decouple into identical scalar blocks); ``multiplicity`` counts how many
    copies the total variance must account for.
    """

    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    shape: TorusShape
    kind: FeedbackKind
    measure: MeasureKind
    multiplicity: int


def _convolution_matrix(stencil, diag: float = 0.0) -> np.ndarray:
    """Dense operator built column by column from apply_convolution."""
    M = stencil.shape.site_count
    out = np.empty((M, M))
    unit = np.zeros(M)
    for j in range(M):
        unit[j] = 1.0
        out[:, j] = apply_convolution(stencil, unit)
        unit[j] = 0.0
    if diag:
        out[np.diag_indices_from(out)] += diag
    return out


def _shift_matrix(shape: TorusShape, offset: tuple[int, ...]) -> np.ndarray:
    """Matrix of the shift (S x)_k = x_{k - offset}."""
    M = shape.site_count
    grid = np.eye(M).reshape((M,) + (shape.N,) * shape.d)
    rolled = np.roll(grid, shift=offset, axis=tuple(range(1, shape.d + 1)))
    return rolled.reshape(M, M).T


def _output_matrix(kind: MeasureKind, shape: TorusShape) -> np.ndarray:
    M = shape.site_count
    if kind is MeasureKind.LOCAL_ERROR:
        rows = []
        scale = 1.0 / np.sqrt(2.0 * shape.d)
        for r in range(shape.d):
            offset = [0] * shape.d
            offset[r] = 1
            rows.append(scale * (np.eye(M) - _shift_matrix(shape, tuple(offset))))
        return np.vstack(rows)
    if kind is MeasureKind.LONG_RANGE_DEVIATION:
        if shape.N % 2:
            raise ParityError("long range deviation requires an even side length")
        far = (shape.N // 2,) * shape.d
        return np.eye(M) - _shift_matrix(shape, far)
    if kind is MeasureKind.DEVIATION_FROM_AVERAGE:
        return np.eye(M) - np.full((M, M), 1.0 / M)
    raise ConfigError(f"no output matrix for {kind}")


def realize(spec: FeedbackSpec, kind: MeasureKind,
            cap: int = STATE_CAP) -> StateSpaceRealization:
    """Dense realization of one configuration and measure.

    ``MeasureKind.CONTROL_EFFORT`` realizes the control signal as the
    output, which is the dual route for the effort formula.
    """
    shape = spec.shape
    M = shape.site_count
    states = M if spec.kind is FeedbackKind.CONSENSUS else 2 * M
    if states > cap:
        raise OracleCapError(f"{states} states exceed the oracle cap {cap}")
    if spec.kind is FeedbackKind.CONSENSUS:
        A = _convolution_matrix(spec.a)
        B = np.eye(M)
        if kind is MeasureKind.CONTROL_EFFORT:
            H = A.copy()
        else:
            H = _output_matrix(kind, shape)
        mult = 1
    else:
        Tg = _convolution_matrix(spec.g_rel, diag=spec.g_o)
        Tf = _convolution_matrix(spec.f_rel, diag=spec.f_o - spec.mu)
        A = np.block([[np.zeros((M, M)), np.eye(M)], [Tg, Tf]])
        B = np.vstack([np.zeros((M, M)), np.eye(M)])
        if kind is MeasureKind.CONTROL_EFFORT:
            H = np.hstack([Tg, Tf])
        else:
            C = _output_matrix(kind, shape)
            H = np.hstack([C, np.zeros_like(C)])
        mult = shape.d
    return StateSpaceRealization(A=A, B=B, H=H, shape=shape, kind=spec.kind,
                                 measure=kind, multiplicity=mult)


def _mean_mode_complement(r: StateSpaceRealization) -> np.ndarray:
    """Orthonormal basis of the complement of the wavenumber-0 subspace."""
    M = r.shape.site_count
    ones = np.ones((1, M)) / np.sqrt(M)
    Q1 = scipy.linalg.null_space(ones)
    if r.kind is FeedbackKind.CONSENSUS:
        return Q1
    Z = np.zeros_like(Q1)
    return np.block([[Q1, Z], [Z, Q1]])


def _check_kernel_unobservable(r: StateSpaceRealization, tol: float = 1e-9) -> None:
    """Kernel vectors of A must be invisible to H before deflation."""
    M = r.shape.site_count
    ones = np.ones(M) / np.sqrt(M)
    if r.kind is FeedbackKind.CONSENSUS:
        candidates = [ones]
    else:
        candidates = [np.concatenate([ones, np.zeros(M)]),
                      np.concatenate([np.zeros(M), ones])]
    for v in candidates:
        if np.linalg.norm(r.A @ v) <= 1e-12 * max(1.0, np.linalg.norm(r.A)):
            if np.linalg.norm(r.H @ v) > tol:
                raise StabilityError("neutral mode is observable through the output")


def full_state_h2(r: StateSpaceRealization) -> float:
    """Total variance via a Lyapunov solve on the stable complement."""
    _check_kernel_unobservable(r)
    Q = _mean_mode_complement(r)
    Ar = Q.T @ r.A @ Q
    Hr = r.H @ Q
    Br = Q.T @ r.B
    if np.max(np.linalg.eigvals(Ar).real) >= -1e-12:
        raise StabilityError("deflated system is not strictly stable")
    P = scipy.linalg.solve_continuous_lyapunov(Ar.T, -(Hr.T @ Hr))
    return float(r.multiplicity * np.trace(Br.T @ P @ Br))


def per_wavenumber_lyapunov(spec: FeedbackSpec, kind: MeasureKind,
                            n: MultiIndex, beta_ref: float | None = None) -> float:
    """Contribution of one wavenumber, from the block Lyapunov equation."""
    shape = spec.shape
    if all(c == 0 for c in n.coords):
        raise ConfigError("the mean mode carries no observable variance")
    pos = flat_index(shape, n)
    if kind is MeasureKind.CONTROL_EFFORT:
        c2 = None
    elif kind in OUTPUT_MEASURES:
        c2 = float(output_symbol_squared(kind, shape, _resolve_beta_ref(spec, beta_ref))[pos])
    else:
        raise ConfigError(f"unsupported measure {kind}")
    if spec.kind is FeedbackKind.CONSENSUS:
        (ahat,) = effective_symbols(spec)
        a = complex(ahat[pos])
        if a.real >= 0:
            raise StabilityError("block is not Hurwitz", [n.coords])
        if c2 is None:
            c2 = abs(a) ** 2
        p = scipy.linalg.solve_continuous_lyapunov(
            np.array([[np.conj(a)]]), np.array([[-c2]], dtype=complex))
        return float(p[0, 0].real)
    ghat, fhat = effective_symbols(spec)
    g, f = float(ghat[pos]), float(fhat[pos])
    if g >= 0 or f >= 0:
        raise StabilityError("block is not Hurwitz", [n.coords])
    Ahat = np.array([[0.0, 1.0], [g, f]])
    if c2 is None:
        # effort output u_hat = g x_hat + f v_hat
        Hhat = np.array([[g, f]])
    else:
        Hhat = np.array([[np.sqrt(c2), 0.0]])
    P = scipy.linalg.solve_continuous_lyapunov(Ahat.T, -(Hhat.T @ Hhat))
    return float(spec.shape.d * P[1, 1])


def sum_per_wavenumber(spec: FeedbackSpec, kind: MeasureKind,
                       beta_ref: float | None = None) -> float:
    """Sum of per-wavenumber contributions over n != 0."""
    require_stable(spec)
    coords = site_coords(spec.shape)
    total = 0.0
    for row in coords:
        if not np.any(row):
            continue
        total += per_wavenumber_lyapunov(
            spec, kind, MultiIndex(tuple(int(c) for c in row)), beta_ref)
    return total


def h2_by_quadrature(r: StateSpaceRealization, tail_tol: float = 1e-12) -> float:
    """Total variance by numerical integration of the Grammian integrand.

    Integrates ||H e^{At} B||_F^2 on the deflated system over [0, T] with an
    analytic bound on the discarded tail, independently of the Lyapunov
    solver. Intended as a secondary cross-check on small instances.
    """
    _check_kernel_unobservable(r)
    Q = _mean_mode_complement(r)
    Ar = Q.T @ r.A @ Q
    Hr = r.H @ Q
    Br = Q.T @ r.B
    lam, V = np.linalg.eig(Ar)
    alpha = float(np.max(lam.real))
    if alpha >= 0:
        raise StabilityError("deflated system is not strictly stable")
    HV = Hr @ V
    VB = np.linalg.solve(V, Br)

    def integrand(t):
        return float(np.sum(np.abs(HV * np.exp(lam * t) @ VB) ** 2))

    # After T the integrand is below tail_tol relative to its initial scale.
    scale = max(integrand(0.0), integrand(0.5 / max(abs(alpha), 1.0)), 1e-300)
    T = float(np.log(scale / (tail_tol * 1e-3)) / (-2.0 * alpha)) + 1.0 / abs(alpha)
    value, _ = scipy.integrate.quad(integrand, 0.0, T, limit=400,
                                    epsabs=1e-13 * max(scale, 1.0), epsrel=1e-11)
    tail = integrand(T) / (2.0 * abs(alpha))
    return float(r.multiplicity * (value + tail))
