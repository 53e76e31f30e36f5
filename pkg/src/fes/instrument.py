"""Measurement-chain noise budgets and realizations.

Two readout front ends are modeled: a voltage-noise-measurement chain
(AC-coupled low-noise voltage amplifier with a resistive bias network)
and a transimpedance chain (op amp with feedback resistor, DUT at the
virtual ground). Budgets are analytic per-frequency part sums; the
matching time-domain realizations shape independently seeded Gaussian
noise through the same transfer functions so the two can be checked
against each other bin by bin.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .constants import K_BOLTZMANN
from .seeding import derive_rng
from .signal_synth import TimeSeries

__all__ = [
    "NoiseSourceSpec",
    "DutModel",
    "VnmChain",
    "TiaChain",
    "NoFeasibleGainError",
    "vnm_input_psd",
    "vnm_coupling_response",
    "tia_equivalent_input_noise",
    "tia_dc_operating_point",
    "max_feedback_resistance",
    "amplifier_bn_psd_ratio",
    "required_coupling_inductance",
    "filter_through_chain",
    "load_component_db",
]

# Practical ceiling on feedback resistance; beyond this parasitics and
# amplifier bias currents dominate any real implementation.
MAX_PRACTICAL_FEEDBACK_OHM = 1e12

TIA_TOPOLOGIES = ("bias_through_feedback", "grounded_dut")


class NoFeasibleGainError(ValueError):
    """No feedback resistance keeps the output inside the supply rails."""


@dataclass(frozen=True)
class NoiseSourceSpec:
    """One noise density vs frequency, parametric or tabulated.

    Parametric form: S(f) = white_level * (1 + corner_frequency / f),
    a flat floor with a 1/f rise below the corner. A non-empty ``table``
    of (frequency, density) pairs overrides the parametric form and is
    interpolated linearly in log-log, clamped at the ends. Densities are
    PSDs (unit^2/Hz). white_level may be zero so noiseless elements can
    be configured for budget isolation tests.
    """

    label: str
    white_level: float = 0.0
    corner_frequency: float = 0.0
    table: tuple = ()

    def __post_init__(self):
        if not (math.isfinite(self.white_level) and self.white_level >= 0):
            raise ValueError("white_level must be finite and >= 0")
        if not (math.isfinite(self.corner_frequency) and self.corner_frequency >= 0):
            raise ValueError("corner_frequency must be finite and >= 0")
        table = tuple((float(f), float(s)) for f, s in self.table)
        for f, s in table:
            if not (f > 0 and s > 0):
                raise ValueError("table entries need positive frequency and density")
        if any(f2 <= f1 for (f1, _), (f2, _) in zip(table, table[1:])):
            raise ValueError("table frequencies must be strictly ascending")
        object.__setattr__(self, "table", table)

    def psd(self, f):
        """Density at frequency f (scalar or array), unit^2/Hz."""
        f = np.asarray(f, dtype=np.float64)
        if np.any(f <= 0):
            raise ValueError("frequencies must be positive")
        if self.table:
            log_f = np.log10([p[0] for p in self.table])
            log_s = np.log10([p[1] for p in self.table])
            out = 10.0 ** np.interp(np.log10(f), log_f, log_s)
        elif self.corner_frequency > 0:
            out = self.white_level * (1.0 + self.corner_frequency / f)
        else:
            out = np.broadcast_to(np.float64(self.white_level), f.shape).copy()
        return out if out.ndim else float(out)


_ZERO_NOISE = NoiseSourceSpec(label="none", white_level=0.0)


@dataclass(frozen=True)
class DutModel:
    """Device under test: resistance, parallel capacitance, own noise.

    ``intrinsic_noise`` is read in the units natural to the chain it is
    plugged into: a voltage PSD when measured by the voltage chain, a
    current PSD when measured by the transimpedance chain.
    """

    R_D: float
    C_parallel: float = 0.0
    intrinsic_noise: NoiseSourceSpec = _ZERO_NOISE

    def __post_init__(self):
        if not (math.isfinite(self.R_D) and self.R_D > 0):
            raise ValueError("R_D must be positive")
        if not (math.isfinite(self.C_parallel) and self.C_parallel >= 0):
            raise ValueError("C_parallel must be >= 0")

    def impedance_sq(self, f):
        """|Z|^2 of the parallel RC at frequency f."""
        f = np.asarray(f, dtype=np.float64)
        out = self.R_D**2 / (1.0 + (2.0 * math.pi * f * self.R_D * self.C_parallel) ** 2)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class VnmChain:
    """AC-coupled voltage readout: bias network, coupling RC, LNVA.

    C_A = inf is accepted as a DC-coupled idealization: the coupling
    becomes a wire (unity response at all frequencies) and R_A's noise
    is fully shunted away.
    """

    R_A: float
    C_A: float
    R_BIAS: float
    V_BIAS: float = 0.0
    lnva_evn: NoiseSourceSpec = _ZERO_NOISE
    lnva_eicn: NoiseSourceSpec = _ZERO_NOISE
    gain_stage1_db: float = 0.0
    temperature: float = 300.0

    def __post_init__(self):
        for name in ("R_A", "R_BIAS", "temperature"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive")
        if not self.C_A > 0:
            raise ValueError("C_A must be positive (inf allowed for DC coupling)")
        if not math.isfinite(self.V_BIAS):
            raise ValueError("V_BIAS must be finite")

    @property
    def coupling_corner_hz(self) -> float:
        if math.isinf(self.C_A):
            return 0.0
        return 1.0 / (2.0 * math.pi * self.R_A * self.C_A)

    @property
    def gain_linear(self) -> float:
        """Voltage gain of the first stage."""
        return 10.0 ** (self.gain_stage1_db / 20.0)


@dataclass(frozen=True)
class TiaChain:
    """Transimpedance readout: feedback R_R around an op amp.

    topology selects where the DC bias enters: "bias_through_feedback"
    sources the DUT current through R_R itself (output sits at
    -R_R * I_B); "grounded_dut" drives the DUT from a bias source
    against virtual ground (output at -V_B - R_R * I_B). C_B and R_B
    form the output AC-coupling high-pass; C_B = 0 disables it.
    """

    R_R: float
    V_B: float = 0.0
    supply_limit: float = 15.0
    oa_evn: NoiseSourceSpec = _ZERO_NOISE
    bias_evn: NoiseSourceSpec = _ZERO_NOISE
    topology: str = "bias_through_feedback"
    C_B: float = 0.0
    R_B: float = 1.0
    temperature: float = 300.0

    def __post_init__(self):
        for name in ("R_R", "supply_limit", "R_B", "temperature"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive")
        if not (math.isfinite(self.C_B) and self.C_B >= 0):
            raise ValueError("C_B must be >= 0")
        if not math.isfinite(self.V_B):
            raise ValueError("V_B must be finite")
        if self.topology not in TIA_TOPOLOGIES:
            raise ValueError(
                f"topology must be one of {TIA_TOPOLOGIES}, got {self.topology!r}"
            )

    @property
    def output_corner_hz(self) -> float:
        if self.C_B == 0:
            return 0.0
        return 1.0 / (2.0 * math.pi * self.R_B * self.C_B)


def _as_freq_array(f):
    f = np.asarray(f, dtype=np.float64)
    if np.any(~np.isfinite(f)) or np.any(f <= 0):
        raise ValueError("frequencies must be positive and finite")
    return f


def vnm_input_psd(chain: VnmChain, dut: DutModel, f) -> dict:
    """Input-referred voltage noise budget of the voltage chain.

    parts: "dut" is the device's own voltage noise, "evn" the amplifier
    voltage noise, "bias_current_term" the current noise injected at the
    input node (bias-network thermal 4kT/R_BIAS plus amplifier current
    noise) developed across the DUT impedance. total is the exact sum.
    """
    fa = _as_freq_array(f)
    zsq = dut.impedance_sq(fa)
    s_ibn = 4.0 * K_BOLTZMANN * chain.temperature / chain.R_BIAS + chain.lnva_eicn.psd(fa)
    parts = {
        "dut": np.asarray(dut.intrinsic_noise.psd(fa), dtype=np.float64),
        "evn": np.asarray(chain.lnva_evn.psd(fa), dtype=np.float64),
        "bias_current_term": np.asarray(s_ibn * zsq, dtype=np.float64),
    }
    total = parts["dut"] + parts["evn"] + parts["bias_current_term"]
    scalar = np.ndim(f) == 0
    if scalar:
        parts = {k: float(v) for k, v in parts.items()}
        total = float(total)
    return {"total": total, "parts": parts}


def vnm_coupling_response(chain: VnmChain, f) -> dict:
    """Magnitude response of the input AC coupling, and what R_A adds.

    The series C_A against R_A forms a single-pole high-pass for the
    signal; R_A's own thermal noise reaches the amplifier through the
    complementary low-pass, so it only matters near and below the
    corner. settle_time_s estimates the recovery after a bias step as
    five time constants.
    """
    fa = np.asarray(f, dtype=np.float64)
    if np.any(~np.isfinite(fa)) or np.any(fa < 0):
        raise ValueError("frequencies must be >= 0 and finite")
    fc = chain.coupling_corner_hz
    if fc == 0:
        gain = np.ones_like(fa)
        ra_noise = np.zeros_like(fa)
    else:
        x = fa / fc
        gain = x / np.sqrt(1.0 + x**2)
        ra_noise = 4.0 * K_BOLTZMANN * chain.temperature * chain.R_A / (1.0 + x**2)
    if np.ndim(f) == 0:
        gain, ra_noise = float(gain), float(ra_noise)
    return {
        "gain_magnitude": gain,
        "ra_noise_contribution": ra_noise,
        "settle_time_s": 5.0 * chain.R_A * chain.C_A,
    }


def tia_equivalent_input_noise(chain: TiaChain, dut: DutModel, f) -> dict:
    """Input-referred current noise budget of the transimpedance chain.

    parts: "feedback" is the R_R thermal current noise 4kT/R_R,
    "evn_term" the op-amp voltage noise converted through
    |1/R_R + 1/Z|^2 (this one grows when R_R is lowered or the DUT
    capacitance kicks in), "bias_term" the bias-source voltage noise
    through the DUT admittance, "dut" the device's own current noise.
    total is the exact sum.
    """
    fa = _as_freq_array(f)
    zsq = dut.impedance_sq(fa)
    # |1/R_R + 1/Z|^2 with 1/Z = 1/R_D + j 2 pi f C
    re = 1.0 / chain.R_R + 1.0 / dut.R_D
    im = 2.0 * math.pi * fa * dut.C_parallel
    gain_sq = re**2 + im**2
    parts = {
        "feedback": np.broadcast_to(
            np.float64(4.0 * K_BOLTZMANN * chain.temperature / chain.R_R), fa.shape
        ).copy(),
        "evn_term": np.asarray(chain.oa_evn.psd(fa) * gain_sq, dtype=np.float64),
        "bias_term": np.asarray(chain.bias_evn.psd(fa) / zsq, dtype=np.float64),
        "dut": np.asarray(dut.intrinsic_noise.psd(fa), dtype=np.float64),
    }
    total = parts["feedback"] + parts["evn_term"] + parts["bias_term"] + parts["dut"]
    if np.ndim(f) == 0:
        parts = {k: float(v) for k, v in parts.items()}
        total = float(total)
    return {"total": total, "parts": parts}


def tia_dc_operating_point(chain: TiaChain, i_bias: float) -> dict:
    """DC output voltage and whether it sits inside the supply rails."""
    if not math.isfinite(i_bias):
        raise ValueError("i_bias must be finite")
    if chain.topology == "bias_through_feedback":
        v_odc = -chain.R_R * i_bias
    else:
        v_odc = -chain.V_B - chain.R_R * i_bias
    return {"V_ODC": v_odc, "in_linearity": abs(v_odc) < chain.supply_limit}


def max_feedback_resistance(chain: TiaChain, i_bias: float, margin: float = 0.0) -> float:
    """Largest R_R that keeps the DC output within supply minus margin.

    Capped at MAX_PRACTICAL_FEEDBACK_OHM: as the bias current goes to
    zero the headroom constraint stops binding, but parasitics bound
    any real feedback network near the teraohm scale.
    """
    if not (math.isfinite(i_bias) and i_bias >= 0):
        raise ValueError("i_bias must be >= 0")
    if not (math.isfinite(margin) and 0 <= margin < chain.supply_limit):
        raise ValueError("margin must be in [0, supply_limit)")
    headroom = chain.supply_limit - margin
    if chain.topology == "grounded_dut":
        headroom -= abs(chain.V_B)
    if headroom <= 0:
        raise NoFeasibleGainError(
            f"bias voltage {chain.V_B} V leaves no output headroom within "
            f"supply {chain.supply_limit} V minus margin {margin} V"
        )
    if i_bias == 0:
        return MAX_PRACTICAL_FEEDBACK_OHM
    return min(headroom / i_bias, MAX_PRACTICAL_FEEDBACK_OHM)


def amplifier_bn_psd_ratio(evn_a: NoiseSourceSpec, evn_b: NoiseSourceSpec, f: float) -> float:
    """Power ratio of two amplifier voltage-noise densities at f."""
    sb = evn_b.psd(f)
    if sb == 0:
        raise ValueError("second amplifier has zero density at this frequency")
    return float(evn_a.psd(f) / sb)


def required_coupling_inductance(target_corner_hz: float, coil_resistance: float) -> float:
    """Inductance an L-R input coupling would need for a given corner.

    L = R_L / (2 pi f_c). The point of this calculator is to show the
    answer is absurd for sub-hertz corners with real coil resistances,
    which is why the capacitive coupling is used instead.
    """
    if not (target_corner_hz > 0 and math.isfinite(target_corner_hz)):
        raise ValueError("target_corner_hz must be positive")
    if not (coil_resistance > 0 and math.isfinite(coil_resistance)):
        raise ValueError("coil_resistance must be positive")
    return coil_resistance / (2.0 * math.pi * target_corner_hz)


def _synth_freq_noise(spec_psd, freqs, n: int, fs: float, rng) -> np.ndarray:
    """Random rfft coefficients whose expected periodogram equals a PSD.

    spec_psd maps positive frequencies to a one-sided density; the DC
    coefficient is zero. E|X_k|^2 = S_k * fs * n / 2 at interior bins.
    """
    m = len(freqs)
    x = np.zeros(m, dtype=np.complex128)
    s = np.zeros(m)
    s[1:] = spec_psd(freqs[1:])
    amp = np.sqrt(s * fs * n / 2.0)
    re = rng.standard_normal(m)
    im = rng.standard_normal(m)
    x[1:] = amp[1:] * (re[1:] + 1j * im[1:]) / math.sqrt(2.0)
    if n % 2 == 0:
        # Nyquist bin is real; one-sided density carries no doubling there
        x[-1] = re[-1] * math.sqrt(s[-1] * fs * n)
    return x


def filter_through_chain(ts: TimeSeries, chain, seed: int, dut: DutModel | None = None) -> TimeSeries:
    """Pass a time series through a chain, adding its noise realization.

    The chain's own noise sources are synthesized in the frequency
    domain with deterministic sub-seeds and shaped by the same transfer
    functions the analytic budget uses, so Welch estimates of the output
    can be compared per bin against that budget. For the voltage chain
    the input is a voltage at the DUT node; for the transimpedance chain
    it is the DUT current. Pass ``dut`` to include the terms that need
    the device impedance (bias current noise across Z, op-amp noise
    gain); without it those terms are omitted.
    """
    n = len(ts.samples)
    fs = ts.sample_rate_fs
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    x_in = np.fft.rfft(ts.samples)

    if isinstance(chain, VnmChain):
        fc = chain.coupling_corner_hz
        x_node = x_in.copy()
        if dut is not None:
            def bias_psd(f):
                s_ibn = (
                    4.0 * K_BOLTZMANN * chain.temperature / chain.R_BIAS
                    + chain.lnva_eicn.psd(f)
                )
                return s_ibn * dut.impedance_sq(f)

            x_node += _synth_freq_noise(bias_psd, freqs, n, fs, derive_rng(seed, "vnm", "bias"))
        if fc == 0:
            x_out = x_node
        else:
            jf = 1j * freqs / fc
            x_ra = _synth_freq_noise(
                lambda f: np.full_like(f, 4.0 * K_BOLTZMANN * chain.temperature * chain.R_A),
                freqs, n, fs, derive_rng(seed, "vnm", "ra"),
            )
            x_out = (jf * x_node + x_ra) / (1.0 + jf)
        x_out = chain.gain_linear * (
            x_out
            + _synth_freq_noise(chain.lnva_evn.psd, freqs, n, fs, derive_rng(seed, "vnm", "evn"))
        )
        out = np.fft.irfft(x_out, n)
        return TimeSeries(samples=out, sample_rate_fs=fs, unit_label="V")

    if isinstance(chain, TiaChain):
        x_out = -chain.R_R * x_in
        # op-amp voltage noise appears at the output with the noise gain
        # 1 + R_R/Z; drawing it once keeps the input- and output-side
        # contributions of the same physical source fully correlated
        x_evn = _synth_freq_noise(chain.oa_evn.psd, freqs, n, fs, derive_rng(seed, "tia", "evn"))
        if dut is not None:
            y_dut = 1.0 / dut.R_D + 1j * 2.0 * math.pi * freqs * dut.C_parallel
            x_out += x_evn * (1.0 + chain.R_R * y_dut)
            x_vb = _synth_freq_noise(
                chain.bias_evn.psd, freqs, n, fs, derive_rng(seed, "tia", "bias")
            )
            x_out += -chain.R_R * y_dut * x_vb
        else:
            x_out += x_evn
        x_out += _synth_freq_noise(
            lambda f: np.full_like(f, 4.0 * K_BOLTZMANN * chain.temperature * chain.R_R),
            freqs, n, fs, derive_rng(seed, "tia", "feedback"),
        )
        if chain.C_B > 0:
            jf = 1j * freqs / chain.output_corner_hz
            x_out *= jf / (1.0 + jf)
        out = np.fft.irfft(x_out, n)
        return TimeSeries(samples=out, sample_rate_fs=fs, unit_label="V")

    raise TypeError(f"unsupported chain type {type(chain).__name__}")


def load_component_db(path: str | None = None) -> dict:
    """Load named amplifier noise specs from a TOML table.

    Resolution order: explicit path, the FES_COMPONENT_DB environment
    variable, then the packaged defaults. Each top-level table needs a
    ``table`` array of [frequency_hz, psd] rows (or white_level /
    corner_frequency for the parametric form).
    """
    if path is None:
        path = os.environ.get("FES_COMPONENT_DB") or None
    if path is None:
        data_path = os.path.join(os.path.dirname(__file__), "data", "amplifiers.toml")
    else:
        data_path = path
    with open(data_path, "rb") as fh:
        doc = tomllib.load(fh)
    db = {}
    for name, entry in doc.items():
        if not isinstance(entry, dict):
            continue
        db[name] = NoiseSourceSpec(
            label=str(entry.get("label", name)),
            white_level=float(entry.get("white_level", 0.0)),
            corner_frequency=float(entry.get("corner_frequency", 0.0)),
            table=tuple((float(f), float(s)) for f, s in entry.get("table", [])),
        )
    return db
