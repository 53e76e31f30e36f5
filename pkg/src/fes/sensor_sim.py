"""Resistive gas-sensor simulation.

Maps gas concentrations, UV illumination, and thermal protocols onto a
fluctuator population plus a mean resistance, then renders the measurable
voltage noise under DC current bias. The gas response is linear by
contract (band strengths affine in concentration); real metal-oxide
sensors saturate, so an optional saturating hook is provided but off by
default. All operations are pure: they return new states and never mutate
their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .seeding import derive_rng, derive_subseed
from .signal_synth import (
    Fluctuator,
    TimeSeries,
    generate_white_noise,
    johnson_noise_psd,
    lorentzian_psd,
    render_bank,
)

__all__ = [
    "GasSpecies",
    "SensorGeometry",
    "SensorState",
    "UvConfig",
    "SampleHoldProtocol",
    "apply_gas_mixture",
    "apply_uv",
    "run_sample_and_hold",
    "render_sensor_voltage",
    "min_measurement_time",
]

# Clamp floor: keeps fluctuator strengths valid (> 0) while rendering the
# fluctuator silent for all practical purposes.
_STRENGTH_FLOOR = 1e-300


@dataclass(frozen=True)
class GasSpecies:
    """One gas and how the sensor's fluctuator population responds to it.

    ``band_coeffs`` entries are (f_low, f_high, coefficient): the total
    strength of the fluctuators whose corner frequencies fall in the band
    is incremented by coefficient * concentration, split evenly among
    them. ``index_coeffs`` entries (bank_index, coefficient) target one
    fluctuator directly. ``dr_coeff`` shifts the mean resistance per
    concentration unit. ``saturation_c`` switches the response to
    coefficient * C / (1 + C / saturation_c); leave None for the default
    linear contract.
    """

    name: str
    band_coeffs: tuple = ()
    index_coeffs: tuple = ()
    dr_coeff: float = 0.0
    saturation_c: float | None = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("species name must be non-empty")
        band = tuple((float(lo), float(hi), float(c)) for lo, hi, c in self.band_coeffs)
        index = tuple((int(i), float(c)) for i, c in self.index_coeffs)
        for lo, hi, c in band:
            if not (0 <= lo < hi) or not math.isfinite(c):
                raise ValueError(f"bad band entry ({lo}, {hi}, {c})")
        for i, c in index:
            if i < 0 or not math.isfinite(c):
                raise ValueError(f"bad index entry ({i}, {c})")
        if not math.isfinite(self.dr_coeff):
            raise ValueError("dr_coeff must be finite")
        if not any(c != 0 for _, _, c in band) and not any(c != 0 for _, c in index):
            raise ValueError(f"species {self.name!r} has no nonzero sensitivity coefficient")
        if self.saturation_c is not None and not self.saturation_c > 0:
            raise ValueError("saturation_c must be positive when set")
        object.__setattr__(self, "band_coeffs", band)
        object.__setattr__(self, "index_coeffs", index)

    def effective_concentration(self, c: float) -> float:
        if self.saturation_c is None:
            return c
        return c / (1.0 + c / self.saturation_c)


@dataclass(frozen=True)
class SensorGeometry:
    """Film geometry and material constants of the sensing layer."""

    surface_A_S: float
    thickness_d: float
    diffusion_D: float
    R0: float
    hooge_A: float

    def __post_init__(self):
        for name in ("surface_A_S", "thickness_d", "diffusion_D", "R0", "hooge_A"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be strictly positive, got {v}")


@dataclass(frozen=True)
class UvConfig:
    """UV illumination model parameters.

    The film behaves as two parallel resistors: an outer layer (fraction
    ``penetration_fraction`` of the volume) whose resistance UV scales by
    (1 - modulation_depth * u), and an unaffected inner layer. The drive
    u = intensity / (intensity + saturation_intensity) saturates, so ever
    stronger illumination stops changing the sensor. UV also feeds a
    Lorentzian whose plateau rides above the background spectrum at
    ``plateau_corner_hz``; the underlying physics fixes no magnitude for
    it, so ``plateau_strength_scale`` is an exposed engineering constant.
    """

    intensity: float = 0.0
    saturation_intensity: float = 1.0
    wavelength_nm: float = 365.0
    penetration_fraction: float = 0.01
    plateau_corner_hz: float = 10.0
    modulation_depth: float = 0.3
    plateau_strength_scale: float = 80.0

    def __post_init__(self):
        if not (math.isfinite(self.intensity) and self.intensity >= 0):
            raise ValueError("intensity must be >= 0")
        if not (math.isfinite(self.saturation_intensity) and self.saturation_intensity > 0):
            raise ValueError("saturation_intensity must be positive")
        if not (0 < self.penetration_fraction <= 1):
            raise ValueError("penetration_fraction must be in (0, 1]")
        if not (math.isfinite(self.wavelength_nm) and self.wavelength_nm > 0):
            raise ValueError("wavelength_nm must be positive")
        if not (math.isfinite(self.plateau_corner_hz) and self.plateau_corner_hz > 0):
            raise ValueError("plateau_corner_hz must be positive")
        if not (0 <= self.modulation_depth < 1):
            raise ValueError("modulation_depth must be in [0, 1)")
        if not (math.isfinite(self.plateau_strength_scale) and self.plateau_strength_scale >= 0):
            raise ValueError("plateau_strength_scale must be >= 0")

    @property
    def drive(self) -> float:
        return self.intensity / (self.intensity + self.saturation_intensity)


@dataclass(frozen=True)
class SensorState:
    """Immutable snapshot of the simulated sensor."""

    geometry: SensorGeometry
    bank: tuple
    mean_R: float
    temperature: float
    uv: UvConfig | None = None
    clamp_events: int = 0

    def __post_init__(self):
        bank = tuple(self.bank)
        if not bank or not all(isinstance(f, Fluctuator) for f in bank):
            raise ValueError("bank must be a non-empty sequence of Fluctuator")
        if not (math.isfinite(self.mean_R) and self.mean_R > 0):
            raise ValueError("mean_R must be positive")
        if not (math.isfinite(self.temperature) and self.temperature > 0):
            raise ValueError("temperature must be positive")
        if self.clamp_events < 0:
            raise ValueError("clamp_events must be >= 0")
        object.__setattr__(self, "bank", bank)

    def corner_frequencies(self) -> np.ndarray:
        return np.array([1.0 / (2.0 * math.pi * f.tau) for f in self.bank])

    def analytic_psd(self, f_grid):
        from .signal_synth import superpose_psd

        return superpose_psd(list(self.bank), f_grid)


@dataclass(frozen=True)
class SampleHoldProtocol:
    """Heat-then-measure thermal cycling parameters.

    Measuring on the cold sensor freezes the thermally activated
    fluctuators' time constants and suppresses convection disturbances,
    which is what buys the protocol its reproducibility. Equal hot and
    cold temperatures are allowed (degenerate but useful as a control).
    """

    heat_temperature: float
    heat_duration: float
    cold_temperature: float
    measure_duration: float

    def __post_init__(self):
        if not (self.cold_temperature > 0 and math.isfinite(self.cold_temperature)):
            raise ValueError("cold_temperature must be positive")
        if not (self.heat_temperature >= self.cold_temperature):
            raise ValueError("heat_temperature must be >= cold_temperature")
        if not (math.isfinite(self.heat_temperature)):
            raise ValueError("heat_temperature must be finite")
        for name in ("heat_duration", "measure_duration"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive")


def _resolve_mixture(concentrations, species_db):
    """Normalize a {species-or-name: concentration} map to (GasSpecies, C) pairs."""
    resolved = []
    for key, conc in concentrations.items():
        conc = float(conc)
        if not (math.isfinite(conc) and conc >= 0):
            raise ValueError(f"concentration for {key!r} must be >= 0, got {conc}")
        if isinstance(key, GasSpecies):
            resolved.append((key, conc))
            continue
        if species_db is None or key not in species_db:
            raise ValueError(f"unknown species {key!r}")
        resolved.append((species_db[key], conc))
    return resolved


def apply_gas_mixture(base: SensorState, concentrations, species_db=None) -> SensorState:
    """Forward gas response: strength increments and resistance shift.

    Each species adds coefficient * concentration to the total strength of
    the fluctuators in its target bands (split evenly within a band) or to
    individually indexed fluctuators. Strengths are clamped at a tiny
    positive floor; clamp events are counted on the returned state. The
    model is linear, so mixtures commute and compose additively.
    """
    mixture = _resolve_mixture(concentrations, species_db)
    strengths = np.array([f.strength_c for f in base.bank])
    corners = base.corner_frequencies()
    delta = np.zeros_like(strengths)
    d_r = 0.0
    for species, conc in mixture:
        ce = species.effective_concentration(conc)
        for lo, hi, coeff in species.band_coeffs:
            idx = np.flatnonzero((corners >= lo) & (corners < hi))
            if idx.size == 0:
                raise ValueError(
                    f"species {species.name!r} targets band [{lo}, {hi}) Hz "
                    "containing no fluctuators"
                )
            delta[idx] += coeff * ce / idx.size
        for i, coeff in species.index_coeffs:
            if i >= strengths.size:
                raise ValueError(
                    f"species {species.name!r} targets fluctuator {i}, "
                    f"bank has {strengths.size}"
                )
            delta[i] += coeff * ce
        d_r += species.dr_coeff * ce

    new_strengths = strengths + delta
    clamped = new_strengths < _STRENGTH_FLOOR
    new_strengths[clamped] = _STRENGTH_FLOOR
    new_r = base.mean_R + d_r
    if new_r <= 0:
        raise ValueError(f"mixture drives mean_R non-positive ({new_r:.4g} ohm)")
    bank = tuple(
        Fluctuator(strength_c=float(c), tau=f.tau,
                   activation_energy=f.activation_energy, tau0=f.tau0)
        for c, f in zip(new_strengths, base.bank)
    )
    return SensorState(
        geometry=base.geometry,
        bank=bank,
        mean_R=new_r,
        temperature=base.temperature,
        uv=base.uv,
        clamp_events=base.clamp_events + int(np.count_nonzero(clamped)),
    )


def apply_uv(state: SensorState) -> SensorState:
    """Illuminate: parallel-resistor conductance boost plus a spectral plateau.

    With drive u, the outer layer's resistance scales by
    (1 - modulation_depth * u), giving mean_R / ((1 - p) + p / (1 - b*u))
    overall, and a Lorentzian with corner ``plateau_corner_hz`` is added
    whose plateau is ``plateau_strength_scale * u`` times the background
    PSD at that corner. Zero intensity returns the state unchanged.
    """
    uv = state.uv
    if uv is None or uv.intensity == 0:
        return state
    u = uv.drive
    p = uv.penetration_fraction
    shrink = 1.0 - uv.modulation_depth * u
    new_r = state.mean_R / ((1.0 - p) + p / shrink)
    bank = list(state.bank)
    if uv.plateau_strength_scale > 0:
        background = sum(lorentzian_psd(f, uv.plateau_corner_hz) for f in bank)
        strength = uv.plateau_strength_scale * u * background
        if strength > 0:
            bank.append(Fluctuator(strength_c=strength,
                                   tau=1.0 / (2.0 * math.pi * uv.plateau_corner_hz)))
    return SensorState(
        geometry=state.geometry,
        bank=tuple(bank),
        mean_R=new_r,
        temperature=state.temperature,
        uv=uv,
        clamp_events=state.clamp_events,
    )


def run_sample_and_hold(
    state: SensorState,
    protocol: SampleHoldProtocol,
    concentrations,
    fs: float,
    seed: int,
    species_db=None,
    hot_disturbance: Fluctuator | None = None,
) -> dict:
    """Heat briefly, then measure cold; returns resistance-fluctuation series.

    The gas-modified bank persists across both phases (adsorbed agents
    stay on the film); only the temperature differs, slowing thermally
    activated fluctuators in the cold phase per Arrhenius. An optional
    ``hot_disturbance`` fluctuator (convection and similar heater-on
    nuisances) is active during the hot phase only. Both phases are
    rendered in resistance units around zero mean.
    """
    gassed = apply_gas_mixture(state, concentrations, species_db)
    hot_bank = list(gassed.bank)
    if hot_disturbance is not None:
        hot_bank.append(hot_disturbance)
    hot = render_bank(
        hot_bank,
        duration=protocol.heat_duration,
        fs=fs,
        seed=derive_subseed(seed, "hot"),
        temperature=protocol.heat_temperature,
        unit_label="ohm",
    )
    cold = render_bank(
        list(gassed.bank),
        duration=protocol.measure_duration,
        fs=fs,
        seed=derive_subseed(seed, "cold"),
        temperature=protocol.cold_temperature,
        unit_label="ohm",
    )
    return {"hot": hot, "cold": cold}


def render_sensor_voltage(
    state: SensorState, bias_current: float, duration: float, fs: float, seed: int
) -> TimeSeries:
    """Voltage at the sensor terminals under DC current bias.

    V(t) = I * (mean_R + dR(t)) + Johnson noise of the mean resistance at
    the sensor temperature. The DC term is kept; AC coupling belongs to
    the measurement chain, not the sensor. Resistance noise scales with
    the bias, Johnson noise does not, so the bias level decides which one
    dominates the spectrum.
    """
    if not math.isfinite(bias_current):
        raise ValueError("bias_current must be finite")
    d_r = render_bank(
        list(state.bank),
        duration=duration,
        fs=fs,
        seed=derive_subseed(seed, "resistance"),
        temperature=state.temperature,
    )
    johnson = generate_white_noise(
        johnson_noise_psd(state.mean_R, state.temperature),
        duration,
        fs,
        derive_rng(seed, "johnson"),
        unit_label="V",
    )
    volts = bias_current * (state.mean_R + d_r.samples) + johnson.samples
    return TimeSeries(samples=volts, sample_rate_fs=fs, unit_label="V")


def min_measurement_time(geom: SensorGeometry) -> float:
    """Diffusion-limited response time through the film: d^2 / D."""
    return geom.thickness_d**2 / geom.diffusion_D
