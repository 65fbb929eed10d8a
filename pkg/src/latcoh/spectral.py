"""Fourier symbols of circulant operators on Z_N^d.

The forward transform is unnormalized, f_hat_n = sum_k f_k exp(-i 2pi n.k/N),
and the inverse carries the 1/M factor; every formula in this package uses
that convention. Eigenvalues of a convolution operator are exactly the
values of its symbol, so stencil symbols drive all closed-form variance and
stability computations. Symbols of sparsely supported stencils are evaluated
directly from the nonzero entries in O(M * nnz); the dense FFT path exists
for whole-array transforms and as the test oracle for the sparse path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StabilityError
from .stencils import FeedbackKind, FeedbackSpec, Stencil
from .torus import MultiIndex, TorusShape, site_coords

# Symbols of reflection-symmetric stencils are real up to roundoff; anything
# above this relative imaginary magnitude indicates a broken symmetry.
REALNESS_RTOL = 1e-12


@dataclass(frozen=True)
class FourierSymbol:
    """Symbol values per wavenumber, in row-major enumeration order."""

    shape: TorusShape
    values: np.ndarray

    def real_checked(self, rtol: float = REALNESS_RTOL) -> np.ndarray:
        """Real part after verifying the imaginary part is roundoff-level."""
        vals = np.asarray(self.values)
        scale = max(float(np.max(np.abs(vals))), 1.0) if vals.size else 1.0
        worst = float(np.max(np.abs(vals.imag))) if np.iscomplexobj(vals) else 0.0
        if worst > rtol * scale:
            raise StabilityError(
                f"symbol has imaginary part {worst:g} (relative {worst / scale:g}); "
                "operator is not reflection-symmetric")
        return np.ascontiguousarray(vals.real, dtype=float)


def dft(shape: TorusShape, f: np.ndarray) -> np.ndarray:
    """Forward multi-dimensional DFT of a flat length-M array."""
    f = np.asarray(f)
    M = shape.site_count
    if f.shape != (M,):
        raise ConfigError(f"array must have {M} entries, got shape {f.shape}")
    return np.fft.fftn(f.reshape((shape.N,) * shape.d)).ravel()


def idft(shape: TorusShape, fhat: np.ndarray) -> np.ndarray:
    """Inverse transform; carries the 1/M normalization."""
    fhat = np.asarray(fhat)
    M = shape.site_count
    if fhat.shape != (M,):
        raise ConfigError(f"array must have {M} entries, got shape {fhat.shape}")
    return np.fft.ifftn(fhat.reshape((shape.N,) * shape.d)).ravel()


def symbol_of_stencil(s: Stencil) -> FourierSymbol:
    """Symbol values computed directly from the sparse entries."""
    shape = s.shape
    n = site_coords(shape)
    values = np.zeros(shape.site_count, dtype=complex)
    for offset, coeff in sorted(s.coeffs.items()):
        phase = n @ np.asarray(offset, dtype=np.int64)
        values += coeff * np.exp(-2j * np.pi * phase / shape.N)
    return FourierSymbol(shape, values)


def real_symbol(s: Stencil, rtol: float = REALNESS_RTOL) -> np.ndarray:
    """Symbol of a reflection-symmetric stencil, truncated to its real part."""
    return symbol_of_stencil(s).real_checked(rtol)


def standard_symbol(shape: TorusShape, beta: float, n: MultiIndex) -> float:
    """Closed-form symbol of the standard nearest-neighbor array:
    -2 beta sum_r (1 - cos(2 pi n_r / N))."""
    return float(-2.0 * beta * math.fsum(
        1.0 - math.cos(2.0 * math.pi * c / shape.N) for c in n.coords))


def standard_symbol_array(shape: TorusShape, beta: float) -> np.ndarray:
    """Closed-form standard symbol at every wavenumber."""
    n = site_coords(shape)
    return -2.0 * beta * np.sum(1.0 - np.cos(2.0 * np.pi * n / shape.N), axis=1)


def trace_of_circulant(s: Stencil) -> float:
    """Trace of the convolution operator: M times the center coefficient
    (equivalently the sum of the symbol values)."""
    return s.shape.site_count * s.coefficient((0,) * s.shape.d)


def effective_symbols(spec: FeedbackSpec):
    """Closed-loop symbols of a feedback spec.

    Consensus: the real part of a_hat. Vehicular: (g_hat, f_hat) with the
    absolute gains added and viscous friction folded into the velocity
    symbol, f_hat = -mu + f_o + f_rel_hat.
    """
    if spec.kind is FeedbackKind.CONSENSUS:
        return (np.real(symbol_of_stencil(spec.a).values),)
    ghat = np.real(symbol_of_stencil(spec.g_rel).values) + spec.g_o
    fhat = np.real(symbol_of_stencil(spec.f_rel).values) + spec.f_o - spec.mu
    return ghat, fhat


def stability_offenders(spec: FeedbackSpec) -> list[tuple[int, ...]]:
    """Wavenumbers whose closed-loop block is not Hurwitz.

    The mean mode n=0 is exempt: it is unobservable under every coherence
    output. Consensus needs Re(a_hat_n) < 0 for n != 0 and a_hat_0 <= 0;
    vehicular needs g_hat_n < 0 and f_hat_n < 0 for n != 0.
    """
    shape = spec.shape
    n = site_coords(shape)
    nonzero = np.any(n != 0, axis=1)
    if spec.kind is FeedbackKind.CONSENSUS:
        (ahat,) = effective_symbols(spec)
        # the mean-mode symbol of a sum-zero array is an exact cancellation;
        # allow roundoff there, stay strict everywhere else
        tol0 = 1e-12 * max(float(np.max(np.abs(ahat), initial=0.0)), 1.0)
        bad = (nonzero & (ahat >= 0.0)) | (~nonzero & (ahat > tol0))
    else:
        ghat, fhat = effective_symbols(spec)
        bad = nonzero & ((ghat >= 0.0) | (fhat >= 0.0))
    return [tuple(int(c) for c in row) for row in n[bad]]


def require_stable(spec: FeedbackSpec) -> None:
    offenders = stability_offenders(spec)
    if offenders:
        raise StabilityError(
            f"{len(offenders)} wavenumbers are not strictly stable", offenders)


def block_eig_real_parts(ghat: np.ndarray, fhat: np.ndarray) -> np.ndarray:
    """Largest real part of the eigenvalues of [[0,1],[g,f]] per wavenumber."""
    disc = fhat * fhat + 4.0 * ghat
    osc = fhat / 2.0
    over = (fhat + np.sqrt(np.maximum(disc, 0.0))) / 2.0
    return np.where(disc < 0.0, osc, over)


def least_damped_eigenvalue(spec: FeedbackSpec) -> float:
    """Real part of the slowest stable mode (n = 0 excluded)."""
    require_stable(spec)
    shape = spec.shape
    n = site_coords(shape)
    nonzero = np.any(n != 0, axis=1)
    if spec.kind is FeedbackKind.CONSENSUS:
        (ahat,) = effective_symbols(spec)
        return float(np.max(ahat[nonzero]))
    ghat, fhat = effective_symbols(spec)
    return float(np.max(block_eig_real_parts(ghat[nonzero], fhat[nonzero])))


def modal_energy_spectrum(spec: FeedbackSpec) -> np.ndarray:
    """Steady-state energy 1/(2|Re(a_hat_n)|) of each consensus mode.

    The unobservable mean mode is excluded and reported as NaN at index 0.
    Under unit white excitation, slower modes hold more energy; the sum over
    n != 0 equals the deviation-from-average variance.
    """
    if spec.kind is not FeedbackKind.CONSENSUS:
        raise ConfigError("modal energies are defined for consensus specs")
    require_stable(spec)
    (ahat,) = effective_symbols(spec)
    n = site_coords(spec.shape)
    nonzero = np.any(n != 0, axis=1)
    energies = np.full(spec.shape.site_count, np.nan)
    energies[nonzero] = 1.0 / (2.0 * np.abs(ahat[nonzero]))
    return energies
