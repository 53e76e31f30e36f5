"""Elementary and composite stochastic signal synthesis.

Building blocks for fluctuation-enhanced sensing studies: random-telegraph
signals (RTS) and their Lorentzian spectra, log-uniform Lorentzian banks that
compose into 1/f noise, Johnson (thermal) noise, and Hooge-style 1/f voltage
noise. Every generator is deterministic for a given integer seed; analytic
spectra and sampled realizations are kept consistent with each other
(Wiener-Khinchin: a symmetric RTS with mean dwell time ``d`` per state has
one-sided PSD ``4 a^2 tau / (1 + (2 pi f tau)^2)`` with ``tau = d/2``).
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .constants import K_BOLTZMANN
from .seeding import derive_rng

__all__ = [
    "Fluctuator",
    "TimeSeries",
    "RtsParams",
    "HoogeNoiseSpec",
    "lorentzian_psd",
    "superpose_psd",
    "build_one_over_f_bank",
    "generate_rts",
    "rts_to_fluctuator",
    "effective_tau",
    "render_bank",
    "johnson_noise_psd",
    "johnson_current_psd",
    "generate_white_noise",
    "generate_johnson_voltage",
    "generate_johnson_current",
    "hooge_psd",
]

# Memory guard for event-based RTS generation (expected switch count).
_MAX_EXPECTED_SWITCHES = 2e8

_BINARY_MAGIC = b"FESTS1"


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Fluctuator:
    """One elementary two-state noise source.

    ``strength_c`` is the PSD plateau amplitude (target-unit^2 * s) and
    ``tau`` the correlation time constant in seconds. A thermally activated
    fluctuator additionally carries an ``activation_energy`` (J) and the
    Arrhenius prefactor ``tau0`` (s); its effective time constant at
    temperature T is ``tau0 * exp(E / kT)``.
    """

    strength_c: float
    tau: float
    activation_energy: float = 0.0
    tau0: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.strength_c) and self.strength_c > 0):
            raise ValueError(f"strength_c must be positive, got {self.strength_c}")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.activation_energy < 0 or not np.isfinite(self.activation_energy):
            raise ValueError("activation_energy must be finite and >= 0")
        if self.activation_energy > 0 and not self.tau0 > 0:
            raise ValueError("tau0 must be > 0 when activation_energy > 0")


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled real-valued record."""

    samples: np.ndarray
    sample_rate_fs: float
    unit_label: str = "a.u."

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("samples must be a 1-D array of length >= 2")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must all be finite")
        if not (np.isfinite(self.sample_rate_fs) and self.sample_rate_fs > 0):
            raise ValueError("sample_rate_fs must be positive")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate_fs

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate_fs

    # -- serialization ------------------------------------------------------

    def to_csv(self, path):
        """Write as two-column CSV (t_seconds, value)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_seconds", "value"])
            for i, v in enumerate(self.samples):
                writer.writerow([f"{i / self.sample_rate_fs:.17g}", f"{v:.17g}"])

    @classmethod
    def from_csv(cls, path, unit_label: str = "a.u."):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 2 or data.shape[0] < 2:
            raise ValueError(f"{path}: expected >= 2 rows of (t_seconds, value)")
        t, v = data[:, 0], data[:, 1]
        dt = np.median(np.diff(t))
        if dt <= 0:
            raise ValueError(f"{path}: time column must be strictly increasing")
        return cls(samples=v, sample_rate_fs=1.0 / dt, unit_label=unit_label)

    def to_binary(self, path):
        """Write the little-endian binary record.

        Layout: magic ``FESTS1``, sample rate as 8-byte float, sample count
        as 8-byte unsigned, then the samples as 8-byte floats.
        """
        with open(path, "wb") as fh:
            fh.write(_BINARY_MAGIC)
            fh.write(struct.pack("<d", self.sample_rate_fs))
            fh.write(struct.pack("<Q", self.samples.size))
            fh.write(self.samples.astype("<f8").tobytes())

    @classmethod
    def from_binary(cls, path, unit_label: str = "a.u."):
        with open(path, "rb") as fh:
            magic = fh.read(len(_BINARY_MAGIC))
            if magic != _BINARY_MAGIC:
                raise ValueError(f"{path}: bad magic {magic!r}, expected {_BINARY_MAGIC!r}")
            (fs,) = struct.unpack("<d", fh.read(8))
            (count,) = struct.unpack("<Q", fh.read(8))
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ValueError(f"{path}: truncated sample payload")
            samples = np.frombuffer(raw, dtype="<f8")
        return cls(samples=samples, sample_rate_fs=fs, unit_label=unit_label)


@dataclass(frozen=True)
class RtsParams:
    """Generation-level parametrization of a symmetric two-state signal.

    ``amplitude_a`` is the half-swing (the signal takes values -a, +a) and
    ``dwell_mean`` the mean residence time per state in seconds.
    """

    amplitude_a: float
    dwell_mean: float

    def __post_init__(self):
        if not (np.isfinite(self.amplitude_a) and self.amplitude_a > 0):
            raise ValueError("amplitude_a must be positive")
        if not (np.isfinite(self.dwell_mean) and self.dwell_mean > 0):
            raise ValueError("dwell_mean must be positive")


@dataclass(frozen=True)
class HoogeNoiseSpec:
    """Parameters of the simplified Hooge 1/f voltage-noise law.

    ``normalization_volume`` defaults to 1; supply a volume here if you adopt
    the volumetric normalization convention.
    """

    hooge_A: float
    bias_voltage_U: float
    normalization_volume: float = 1.0

    def __post_init__(self):
        if self.hooge_A < 0 or not np.isfinite(self.hooge_A):
            raise ValueError("hooge_A must be finite and >= 0")
        if not np.isfinite(self.bias_voltage_U):
            raise ValueError("bias_voltage_U must be finite")
        if not (np.isfinite(self.normalization_volume) and self.normalization_volume > 0):
            raise ValueError("normalization_volume must be positive")


# ---------------------------------------------------------------------------
# analytic spectra
# ---------------------------------------------------------------------------


def lorentzian_psd(fluct: Fluctuator, f):
    """One-sided Lorentzian PSD ``c / (1 + (2 pi f tau)^2)`` at frequency f.

    Note: some of the literature prints this without the square on the
    ``2 pi f tau`` term; the squared form is the physically correct RTS
    spectrum (flat plateau, 1/f^2 tail) and is what this toolkit uses
    throughout.
    """
    f = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise ValueError("frequency must be finite")
    if np.any(f < 0):
        raise ValueError("frequency must be >= 0")
    out = fluct.strength_c / (1.0 + (2.0 * np.pi * f * fluct.tau) ** 2)
    return out if out.ndim else float(out)


def superpose_psd(bank, f_grid):
    """Pointwise sum of the bank's Lorentzians, as an analytic spectrum."""
    from .spectral import SpectrumEstimate  # deferred: spectral imports TimeSeries

    if not bank:
        raise ValueError("bank must be non-empty")
    f = np.asarray(f_grid, dtype=np.float64)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("f_grid must be a non-empty 1-D array")
    if np.any(f < 0) or np.any(np.diff(f) <= 0):
        raise ValueError("f_grid must be sorted ascending with all values >= 0")
    values = np.zeros_like(f)
    for fl in bank:
        values += lorentzian_psd(fl, f)
    return SpectrumEstimate(
        freqs=f, values=values, n_averages=1, window_label="analytic"
    )


def build_one_over_f_bank(decades, per_decade, tau_min, total_power_target=None):
    """Log-uniform Lorentzian bank composing into a 1/f spectrum.

    Time constants are spaced ``per_decade`` per decade starting at
    ``tau_min`` over ``decades`` decades. Strengths follow the equal-variance
    weighting ``c_j = 4 v tau_j`` (each fluctuator contributes variance v),
    the standard construction that turns a log-uniform bank into a 1/f
    composite. With ``total_power_target`` set, v is chosen so the bank's
    total variance equals the target; otherwise v = 1 per fluctuator.
    """
    decades = int(decades)
    per_decade = int(per_decade)
    if decades < 1 or per_decade < 1:
        raise ValueError("decades and per_decade must be >= 1")
    if not (np.isfinite(tau_min) and tau_min > 0):
        raise ValueError("tau_min must be positive")
    n = decades * per_decade
    if total_power_target is None:
        per_variance = 1.0
    else:
        if not (np.isfinite(total_power_target) and total_power_target > 0):
            raise ValueError("total_power_target must be positive")
        per_variance = float(total_power_target) / n
    taus = tau_min * 10.0 ** (np.arange(n) / per_decade)
    return [Fluctuator(strength_c=4.0 * per_variance * tau, tau=tau) for tau in taus]


# ---------------------------------------------------------------------------
# sampled realizations
# ---------------------------------------------------------------------------


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return derive_rng(int(seed), "root")


def _require_grid(duration, fs) -> int:
    if not (np.isfinite(duration) and duration > 0):
        raise ValueError("duration must be positive")
    if not (np.isfinite(fs) and fs > 0):
        raise ValueError("fs must be positive")
    n = int(round(duration * fs))
    if n < 2:
        raise ValueError("duration * fs must be >= 2 samples")
    return n


def _switch_times(rng: np.random.Generator, dwell_mean, duration):
    """Exponential inter-switch times accumulated past ``duration``."""
    expected = duration / dwell_mean
    if expected > _MAX_EXPECTED_SWITCHES:
        raise ValueError(
            f"expected switch count {expected:.3g} exceeds the generation cap"
        )
    chunks = []
    total = 0.0
    while total < duration:
        remaining = duration - total
        k = int(remaining / dwell_mean * 1.25) + 16
        draw = rng.exponential(dwell_mean, size=min(k, 4_000_000))
        chunks.append(draw)
        total += float(draw.sum())
    times = np.cumsum(np.concatenate(chunks))
    return times[times < duration]


def generate_rts(params: RtsParams, duration, fs, seed) -> TimeSeries:
    """Sampled symmetric RTS with exponential dwell times.

    Switch events are drawn as exact exponential arrival times and mapped
    onto the sample grid with zero-order hold, so dwell times comparable to
    the sample period are handled correctly (no per-sample Markov stepping).
    Deterministic for a given seed.
    """
    n = _require_grid(duration, fs)
    rng = _as_rng(seed)
    s0 = 1.0 if rng.integers(0, 2) == 0 else -1.0
    switches = _switch_times(rng, params.dwell_mean, duration)
    t = np.arange(n) / fs
    flips = np.searchsorted(switches, t, side="right")
    states = s0 * np.where(flips % 2 == 0, 1.0, -1.0)
    return TimeSeries(samples=params.amplitude_a * states, sample_rate_fs=fs)


def rts_to_fluctuator(params: RtsParams) -> Fluctuator:
    """Spectrum-level view of an RTS: tau = dwell/2, c = 4 a^2 tau.

    With this mapping ``lorentzian_psd`` reproduces the analytic one-sided
    RTS PSD exactly (autocorrelation a^2 exp(-2|t|/dwell)).
    """
    tau = params.dwell_mean / 2.0
    return Fluctuator(strength_c=4.0 * params.amplitude_a**2 * tau, tau=tau)


def effective_tau(fluct: Fluctuator, temperature=None) -> float:
    """Arrhenius-shifted time constant; the stored tau if not activated."""
    if fluct.activation_energy > 0 and temperature is not None:
        if not (np.isfinite(temperature) and temperature > 0):
            raise ValueError("temperature must be positive")
        exponent = fluct.activation_energy / (K_BOLTZMANN * temperature)
        # Cap instead of overflowing; anything this slow is frozen anyway.
        return fluct.tau0 * math.exp(min(exponent, 700.0))
    return fluct.tau


def render_bank(bank, duration, fs, seed, temperature=None, unit_label="a.u.") -> TimeSeries:
    """Sum of independent RTS processes, one per fluctuator.

    Each fluctuator keeps its amplitude ``sqrt(c / (4 tau))`` and switches
    with mean dwell ``2 * tau_eff``, where tau_eff is Arrhenius-shifted when
    an activation energy is present and a temperature is given. Fluctuators
    draw from sub-streams derived from the master seed and their bank index,
    so the composite is reproducible and insensitive to bank-internal
    chunking.
    """
    if not bank:
        raise ValueError("bank must be non-empty")
    n = _require_grid(duration, fs)
    if temperature is not None and not (np.isfinite(temperature) and temperature > 0):
        if any(fl.activation_energy > 0 for fl in bank):
            raise ValueError("temperature must be positive when activation energies are present")
        raise ValueError("temperature must be positive")
    total = np.zeros(n)
    for i, fl in enumerate(bank):
        tau_eff = effective_tau(fl, temperature)
        amplitude = math.sqrt(fl.strength_c / (4.0 * fl.tau))
        rng = derive_rng(int(seed), "fluctuator", i)
        rts = generate_rts(
            RtsParams(amplitude_a=amplitude, dwell_mean=2.0 * tau_eff),
            duration,
            fs,
            rng,
        )
        total += rts.samples
    return TimeSeries(samples=total, sample_rate_fs=fs, unit_label=unit_label)


# ---------------------------------------------------------------------------
# Johnson and Hooge noise
# ---------------------------------------------------------------------------


def johnson_noise_psd(R, T):
    """Thermal voltage noise 4kTR in V^2/Hz."""
    _check_rt(R, T)
    return 4.0 * K_BOLTZMANN * T * R


def johnson_current_psd(R, T):
    """Thermal current noise 4kT/R in A^2/Hz."""
    _check_rt(R, T)
    return 4.0 * K_BOLTZMANN * T / R


def _check_rt(R, T):
    if not (np.isfinite(R) and R > 0):
        raise ValueError("R must be positive")
    if not (np.isfinite(T) and T > 0):
        raise ValueError("T must be positive")


def generate_white_noise(psd_level, duration, fs, seed, unit_label="a.u.") -> TimeSeries:
    """Gaussian white noise with the given one-sided PSD (unit^2/Hz)."""
    if psd_level < 0 or not np.isfinite(psd_level):
        raise ValueError("psd_level must be finite and >= 0")
    n = _require_grid(duration, fs)
    rng = _as_rng(seed)
    sigma = math.sqrt(psd_level * fs / 2.0)
    return TimeSeries(samples=rng.normal(0.0, 1.0, n) * sigma if sigma else np.zeros(n),
                      sample_rate_fs=fs, unit_label=unit_label)


def generate_johnson_voltage(R, T, duration, fs, seed) -> TimeSeries:
    return generate_white_noise(johnson_noise_psd(R, T), duration, fs, seed, unit_label="V")


def generate_johnson_current(R, T, duration, fs, seed) -> TimeSeries:
    return generate_white_noise(johnson_current_psd(R, T), duration, fs, seed, unit_label="A")


def hooge_psd(spec: HoogeNoiseSpec, f):
    """Hooge 1/f voltage noise ``U^2 A / (nu f)`` in V^2/Hz."""
    f = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise ValueError("frequency must be finite")
    if np.any(f <= 0):
        raise ValueError("frequency must be > 0 (1/f diverges at DC)")
    out = spec.bias_voltage_U**2 * spec.hooge_A / (spec.normalization_volume * f)
    return out if out.ndim else float(out)
