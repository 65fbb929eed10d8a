"""Time-domain Monte Carlo simulation of the stochastic dynamics.

Euler-Maruyama integration of dx = T_a x dt + dW (consensus) and of the
two-block vehicular dynamics with noise entering the velocity equation, in
deviation coordinates throughout. Per-replica noise streams come from a
counter-based generator keyed by (seed, replica), so replicas are
independent and order-insensitive; empirical output variances accumulate
through per-replica Welford state merged at the end, which keeps results
bit-reproducible for a fixed seed and stride.

Two canned experiments reproduce the qualitative phenomenology of large
formations under relative-only feedback: the slow long-wavelength
"accordion" motion under distributed noise, and the absence of string
instability when a single vehicle is probed.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParityError
from .measures import MeasureKind, OUTPUT_MEASURES, variance
from .spectral import block_eig_real_parts, effective_symbols, require_stable
from .stencils import FeedbackKind, FeedbackSpec, apply_convolution_batch
from .torus import TorusShape

_CHUNK_STEPS = 2048
_BINARY_MAGIC = b"LCTR"


def closed_loop_decay_rate(spec: FeedbackSpec) -> float:
    """max_n |Re(lambda)| over closed-loop eigenvalues, sets the step bound."""
    if spec.kind is FeedbackKind.CONSENSUS:
        (ahat,) = effective_symbols(spec)
        return float(np.max(np.abs(ahat)))
    ghat, fhat = effective_symbols(spec)
    disc = fhat * fhat + 4.0 * ghat
    slow = block_eig_real_parts(ghat, fhat)
    fast = np.where(disc < 0.0, fhat / 2.0,
                    (fhat - np.sqrt(np.maximum(disc, 0.0))) / 2.0)
    return float(max(np.max(np.abs(slow)), np.max(np.abs(fast))))


@dataclass(frozen=True)
class SimConfig:
    """Integration plan for one stochastic run."""

    spec: FeedbackSpec
    dt: float
    steps: int
    burn_in: int = 0
    seed: int = 0
    noise_mask: tuple[bool, ...] | None = None  # None = all sites driven
    replicas: int = 1
    record_stride: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.steps <= 0 or self.replicas <= 0 or self.record_stride <= 0:
            raise ConfigError("dt, steps, replicas, record_stride must be positive")
        if not 0 <= self.burn_in < self.steps:
            raise ConfigError("burn_in must satisfy 0 <= burn_in < steps")
        require_stable(self.spec)
        rho = closed_loop_decay_rate(self.spec)
        if self.dt * rho >= 0.5:
            raise ConfigError(
                f"dt*rho = {self.dt * rho:.3f} violates the explicit-Euler margin 0.5")
        if self.noise_mask is not None:
            if len(self.noise_mask) != self.spec.shape.site_count:
                raise ConfigError("noise mask length must equal the site count")

    @property
    def frame_count(self) -> int:
        return (self.steps - self.burn_in) // self.record_stride

    def mask_array(self) -> np.ndarray:
        M = self.spec.shape.site_count
        if self.noise_mask is None:
            return np.ones(M)
        return np.asarray(self.noise_mask, dtype=float)


@dataclass(frozen=True)
class Trajectory:
    """Recorded deviation states (positions for vehicular runs)."""

    shape: TorusShape
    times: np.ndarray
    frames: np.ndarray  # (count, M)
    stride: int
    kind: FeedbackKind


class Welford:
    """Streaming mean/variance with order-independent merge."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update_batch(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float).ravel()
        n = values.size
        if n == 0:
            return
        mean = float(values.mean())
        m2 = float(np.sum((values - mean) ** 2))
        self._merge_moments(n, mean, m2)

    def merge(self, other: "Welford") -> None:
        self._merge_moments(other.count, other.mean, other.m2)

    def _merge_moments(self, n, mean, m2):
        if n == 0:
            return
        total = self.count + n
        delta = mean - self.mean
        self.mean += delta * n / total
        self.m2 += m2 + delta * delta * self.count * n / total
        self.count = total

    @property
    def variance(self) -> float:
        return self.m2 / self.count if self.count else float("nan")


@dataclass(frozen=True)
class EmpiricalVariance:
    per_site: float
    samples: int


@dataclass(frozen=True)
class SimResult:
    trajectory: Trajectory | None
    variances: dict
    effective_samples: int
    mode_energy: np.ndarray | None = None


def _replica_generators(seed: int, replicas: int):
    return [np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=seed, spawn_key=(r,))))
        for r in range(replicas)]


def _component_factor(kind: MeasureKind, shape: TorusShape) -> int:
    """Local error stacks d difference components per site."""
    return shape.d if kind is MeasureKind.LOCAL_ERROR else 1


def _measure_samples(kind: MeasureKind, frames: np.ndarray, shape: TorusShape) -> np.ndarray:
    """Output samples for one measure from (..., M) position frames.

    The per-site variance is the pooled sample variance times the component
    factor of the measure.
    """
    lead = frames.shape[:-1]
    grid = frames.reshape(lead + (shape.N,) * shape.d)
    axes = tuple(range(len(lead), len(lead) + shape.d))
    if kind is MeasureKind.DEVIATION_FROM_AVERAGE:
        return frames - frames.mean(axis=-1, keepdims=True)
    if kind is MeasureKind.LONG_RANGE_DEVIATION:
        if shape.N % 2:
            raise ParityError("long range deviation requires an even side length")
        far = (shape.N // 2,) * shape.d
        shifted = np.roll(grid, shift=far, axis=axes).reshape(frames.shape)
        return frames - shifted
    if kind is MeasureKind.LOCAL_ERROR:
        comps = []
        scale = 1.0 / math.sqrt(2.0 * shape.d)
        for r in range(shape.d):
            offset = [0] * shape.d
            offset[r] = 1
            shifted = np.roll(grid, shift=tuple(offset), axis=axes).reshape(frames.shape)
            comps.append(scale * (frames - shifted))
        return np.concatenate(comps, axis=-1)
    raise ConfigError(f"cannot estimate {kind} from trajectories")


def simulate(cfg: SimConfig, measures: tuple[MeasureKind, ...] = (),
             record: bool = True, accumulate_mode_energy: bool = False) -> SimResult:
    """Run the Euler-Maruyama integration and estimate output variances.

    Vehicular systems are simulated per vehicle coordinate (coordinates
    decouple); reported per-site variances carry the d-coordinate factor.
    """
    spec = cfg.spec
    shape = spec.shape
    M = shape.site_count
    R = cfg.replicas
    for kind in measures:
        if kind not in OUTPUT_MEASURES:
            raise ConfigError(f"cannot estimate {kind} from simulation")
        if kind is MeasureKind.LONG_RANGE_DEVIATION and shape.N % 2:
            raise ParityError("long range deviation requires an even side length")
    vehicular = spec.kind is FeedbackKind.VEHICULAR
    coord_mult = shape.d if vehicular else 1
    mask = cfg.mask_array()
    sqrt_dt = math.sqrt(cfg.dt)
    gens = _replica_generators(cfg.seed, R)

    x = np.zeros((R, M))
    v = np.zeros((R, M)) if vehicular else None

    accs = {kind: [Welford() for _ in range(R)] for kind in measures}
    n_frames = cfg.frame_count
    frames = np.empty((n_frames, M)) if record else None
    times = np.empty(n_frames) if record else None
    energy_sum = np.zeros(M) if accumulate_mode_energy else None
    energy_frames = 0
    frame_idx = 0

    step = 0
    while step < cfg.steps:
        chunk = min(_CHUNK_STEPS, cfg.steps - step)
        noise = np.stack([g.standard_normal((chunk, M)) for g in gens])  # (R, chunk, M)
        snaps = []
        snap_times = []
        for t in range(chunk):
            xi = noise[:, t, :] * mask
            if vehicular:
                rhs_v = (apply_convolution_batch(spec.g_rel, x) + spec.g_o * x
                         + apply_convolution_batch(spec.f_rel, v)
                         + (spec.f_o - spec.mu) * v)
                x = x + cfg.dt * v
                v = v + cfg.dt * rhs_v + sqrt_dt * xi
            else:
                x = x + cfg.dt * apply_convolution_batch(spec.a, x) + sqrt_dt * xi
            i = step + t
            if i >= cfg.burn_in and (i - cfg.burn_in + 1) % cfg.record_stride == 0:
                snaps.append(x)
                snap_times.append((i + 1) * cfg.dt)
        if snaps:
            batch = np.stack(snaps)  # (K, R, M)
            K = batch.shape[0]
            if record:
                frames[frame_idx:frame_idx + K] = batch[:, 0, :]
                times[frame_idx:frame_idx + K] = snap_times
            for kind in measures:
                samples = _measure_samples(kind, batch, shape)
                for r_i in range(R):
                    accs[kind][r_i].update_batch(samples[:, r_i, :])
            if accumulate_mode_energy:
                spectra = np.fft.fftn(batch.reshape((K, R) + (shape.N,) * shape.d),
                                      axes=tuple(range(2, 2 + shape.d)))
                energy_sum += (np.abs(spectra.reshape(K, R, M)) ** 2).mean(axis=1).sum(axis=0)
                energy_frames += K
            frame_idx += K
        step += chunk

    variances = {}
    for kind in measures:
        merged = Welford()
        for acc in accs[kind]:
            merged.merge(acc)
        comp = _component_factor(kind, shape)
        variances[kind] = EmpiricalVariance(
            per_site=merged.variance * comp * coord_mult, samples=merged.count)

    trajectory = None
    if record:
        trajectory = Trajectory(shape=shape, times=times, frames=frames,
                                stride=cfg.record_stride, kind=spec.kind)
    mode_energy = energy_sum / energy_frames if accumulate_mode_energy and energy_frames else None
    return SimResult(trajectory=trajectory, variances=variances,
                     effective_samples=n_frames * R * M, mode_energy=mode_energy)


@dataclass(frozen=True)
class AccordionResult:
    """Per-wavenumber energy and micro/macro comparison for one run."""

    mode_energy: np.ndarray
    dominance_empirical: float
    dominance_analytic: float
    dominance_factor: float
    micro_per_site: float
    macro_per_site: float
    trajectory: Trajectory

    @property
    def long_wave_dominance_ok(self) -> bool:
        ratio = self.dominance_empirical / self.dominance_analytic
        return 1.0 / self.dominance_factor <= ratio <= self.dominance_factor

    @property
    def micro_macro_ratio(self) -> float:
        return self.macro_per_site / self.micro_per_site

    def to_dict(self) -> dict:
        return {"dominance_empirical": self.dominance_empirical,
                "dominance_analytic": self.dominance_analytic,
                "long_wave_dominance_ok": self.long_wave_dominance_ok,
                "micro_per_site": self.micro_per_site,
                "macro_per_site": self.macro_per_site,
                "micro_macro_ratio": self.micro_macro_ratio}


def accordion_experiment(spec: FeedbackSpec, dt: float = 0.05,
                         steps: int = 400_000, burn_in: int = 60_000,
                         record_stride: int = 20, replicas: int = 2,
                         seed: int = 2024, dominance_factor: float = 3.0) -> AccordionResult:
    """Distributed-noise run exposing the slow accordion motion.

    Requires a one-dimensional vehicular spec with even N. Empirical energy
    per wavenumber is compared against the analytic per-mode position
    variance ratio between the longest wavelength n=1 and the shortest
    n=N/2, and the local-error and long-range-deviation per-site variances
    quantify the micro/macro regulation gap.
    """
    if spec.kind is not FeedbackKind.VEHICULAR or spec.shape.d != 1:
        raise ConfigError("the accordion experiment runs 1-d vehicular formations")
    N = spec.shape.N
    if N % 2:
        raise ParityError("accordion experiment needs even N")
    cfg = SimConfig(spec=spec, dt=dt, steps=steps, burn_in=burn_in, seed=seed,
                    replicas=replicas, record_stride=record_stride)
    result = simulate(cfg, measures=(MeasureKind.LOCAL_ERROR,
                                     MeasureKind.LONG_RANGE_DEVIATION),
                      record=True, accumulate_mode_energy=True)
    ghat, fhat = effective_symbols(spec)
    analytic = (ghat[N // 2] * fhat[N // 2]) / (ghat[1] * fhat[1])
    empirical = result.mode_energy[1] / result.mode_energy[N // 2]
    return AccordionResult(
        mode_energy=result.mode_energy,
        dominance_empirical=float(empirical),
        dominance_analytic=float(analytic),
        dominance_factor=dominance_factor,
        micro_per_site=result.variances[MeasureKind.LOCAL_ERROR].per_site,
        macro_per_site=result.variances[MeasureKind.LONG_RANGE_DEVIATION].per_site,
        trajectory=result.trajectory)


def steady_state_amplitudes(spec: FeedbackSpec, omega: float,
                            amplitude: float = 1.0, probe_site: int = 0) -> np.ndarray:
    """Analytic steady-state spacing-error amplitude per vehicle for a
    sinusoidal force at one site (frequency-domain solve; test oracle for
    the time-domain experiment)."""
    if spec.kind is not FeedbackKind.VEHICULAR or spec.shape.d != 1:
        raise ConfigError("string-stability analysis runs 1-d vehicular formations")
    N = spec.shape.N
    ghat, fhat = effective_symbols(spec)
    n = np.arange(N)
    w_hat = amplitude * np.exp(-2j * np.pi * n * probe_site / N)
    x_hat = w_hat / (-omega**2 - 1j * omega * fhat - ghat)
    e_hat = (1.0 - np.exp(-2j * np.pi * n / N)) * x_hat
    return np.abs(np.fft.ifft(e_hat))


def _penetration_depth(amps: np.ndarray, reference_index: int = 1) -> int:
    """First vehicle index past the reference where the amplitude halves."""
    half = amps[reference_index] / 2.0
    limit = len(amps) // 2
    for k in range(reference_index + 1, limit + 1):
        if amps[k] < half:
            return k - 1
    return limit


@dataclass(frozen=True)
class ProbeResponse:
    omega: float
    amplitudes: np.ndarray
    penetration_depth: int


@dataclass(frozen=True)
class StringStabilityResult:
    responses: tuple[ProbeResponse, ...]

    def by_omega(self, omega: float) -> ProbeResponse:
        for resp in self.responses:
            if resp.omega == omega:
                return resp
        raise KeyError(omega)

    def to_dict(self) -> dict:
        return {"responses": [{"omega": r.omega,
                               "amplitudes": r.amplitudes.tolist(),
                               "penetration_depth": r.penetration_depth}
                              for r in self.responses]}


def string_stability_experiment(spec: FeedbackSpec,
                                probe_frequencies: tuple[float, ...] = (0.2, 3.0),
                                amplitude: float = 1.0, probe_site: int = 0,
                                dt: float = 0.02, transient_time: float = 400.0,
                                measure_periods: int = 20) -> StringStabilityResult:
    """Deterministic sinusoid at one site; steady-state spacing-error
    amplitude at every vehicle.

    Integrates the forced dynamics with classical RK4 from rest, discards
    the transient, then projects the spacing error onto the probe frequency
    over a whole number of periods. The step is snapped to divide the period
    exactly so the projection window is leakage-free.
    """
    if spec.kind is not FeedbackKind.VEHICULAR or spec.shape.d != 1:
        raise ConfigError("the string-stability experiment runs 1-d vehicular formations")
    require_stable(spec)
    N = spec.shape.N
    M = spec.shape.site_count
    force = np.zeros(M)
    force[probe_site] = amplitude

    def rhs(t, x, v):
        dv = (apply_convolution_batch(spec.g_rel, x[np.newaxis])[0] + spec.g_o * x
              + apply_convolution_batch(spec.f_rel, v[np.newaxis])[0]
              + (spec.f_o - spec.mu) * v + force * math.sin(omega * t))
        return v, dv

    responses = []
    for omega in probe_frequencies:
        if omega <= 0:
            raise ConfigError("probe frequencies must be positive")
        period = 2.0 * math.pi / omega
        per_period = max(20, round(period / dt))
        h = period / per_period
        n_transient = int(math.ceil(transient_time / h))
        n_window = measure_periods * per_period
        x = np.zeros(M)
        v = np.zeros(M)
        t = 0.0
        proj = np.zeros(M, dtype=complex)
        for i in range(n_transient + n_window):
            k1x, k1v = rhs(t, x, v)
            k2x, k2v = rhs(t + h / 2, x + h / 2 * k1x, v + h / 2 * k1v)
            k3x, k3v = rhs(t + h / 2, x + h / 2 * k2x, v + h / 2 * k2v)
            k4x, k4v = rhs(t + h, x + h * k3x, v + h * k3v)
            x = x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
            v = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
            t += h
            if i >= n_transient:
                spacing = x - np.roll(x, 1)
                proj += spacing * np.exp(-1j * omega * t) * h
        amps = np.abs(proj) * 2.0 / (n_window * h)
        responses.append(ProbeResponse(omega=omega, amplitudes=amps,
                                       penetration_depth=_penetration_depth(amps)))
    return StringStabilityResult(responses=tuple(responses))


def trajectory_to_csv(trajectory: Trajectory, path) -> None:
    """Write (time, site, value) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "site", "value"])
        for t, frame in zip(trajectory.times, trajectory.frames):
            for site, value in enumerate(frame):
                writer.writerow([repr(float(t)), site, repr(float(value))])


def trajectory_to_binary(trajectory: Trajectory, path) -> None:
    """Compact layout: magic, int64 header (d, N, stride, count), then
    row-major float64 frames."""
    count = trajectory.frames.shape[0]
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(struct.pack("<4q", trajectory.shape.d, trajectory.shape.N,
                             trajectory.stride, count))
        fh.write(np.ascontiguousarray(trajectory.frames, dtype="<f8").tobytes())


def trajectory_from_binary(path) -> tuple[TorusShape, int, np.ndarray]:
    """Read back (shape, stride, frames) from the binary layout."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _BINARY_MAGIC:
            raise ConfigError("not a trajectory file")
        d, N, stride, count = struct.unpack("<4q", fh.read(32))
        shape = TorusShape(int(d), int(N))
        frames = np.frombuffer(fh.read(), dtype="<f8").reshape(count, shape.site_count)
    return shape, int(stride), frames.copy()
