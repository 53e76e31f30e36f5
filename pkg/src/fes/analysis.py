"""Recovery of physical quantities from spectra.

Three families: Johnson-noise thermometry (absolute temperature and
resistance from paired voltage/current noise densities), gas-composition
unmixing (linear least squares on per-band PSD changes, optionally
nonnegativity-constrained), and information-capacity / selectivity
metrics for fluctuation-enhanced readout.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .constants import K_BOLTZMANN
from .sensor_sim import SensorGeometry
from .spectral import SpectrumEstimate, symmetry_reduce_count

__all__ = [
    "CalibrationMatrix",
    "ConcentrationVector",
    "CapacityQuery",
    "DegenerateCalibrationError",
    "johnson_thermometry",
    "calibrate",
    "unmix",
    "nnls",
    "classical_capacity",
    "fes_capacity_scaling",
    "selectivity_enhancement",
]

_CONDITION_LIMIT = 1e8


class DegenerateCalibrationError(ValueError):
    """Calibration problem is rank deficient (condition number too high)."""

    def __init__(self, message: str, species_pair=None):
        super().__init__(message)
        self.species_pair = species_pair


@dataclass(frozen=True)
class CalibrationMatrix:
    """Per-band linear response coefficients, one column per species."""

    bands: tuple
    species_names: tuple
    A: np.ndarray
    condition_number: float = float("nan")
    provenance_hash: str = ""

    def __post_init__(self):
        bands = tuple((float(lo), float(hi)) for lo, hi in self.bands)
        names = tuple(str(n) for n in self.species_names)
        A = np.array(self.A, dtype=np.float64)
        if A.ndim != 2:
            raise ValueError("A must be a 2-D matrix")
        k, n = A.shape
        if not (k >= n >= 1):
            raise ValueError(f"need at least as many bands as species, got {k}x{n}")
        if len(bands) != k or len(names) != n:
            raise ValueError("bands/species_names lengths must match A's shape")
        if len(set(names)) != n:
            raise ValueError("species names must be unique")
        for lo, hi in bands:
            if not (0 <= lo < hi):
                raise ValueError(f"bad band ({lo}, {hi})")
        for (lo1, hi1), (lo2, _) in zip(bands, bands[1:]):
            if lo2 < hi1:
                raise ValueError("bands must be ascending and non-overlapping")
        if not np.all(np.isfinite(A)):
            raise ValueError("A must be finite")
        A.setflags(write=False)
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "species_names", names)
        object.__setattr__(self, "A", A)

    def to_json(self) -> str:
        return json.dumps(
            {
                "bands": [[lo, hi] for lo, hi in self.bands],
                "species": list(self.species_names),
                "A_row_major": [float(x) for x in self.A.ravel(order="C")],
                "condition_number": self.condition_number,
                "provenance": self.provenance_hash,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "CalibrationMatrix":
        doc = json.loads(text)
        k, n = len(doc["bands"]), len(doc["species"])
        A = np.array(doc["A_row_major"], dtype=np.float64).reshape(k, n)
        return cls(
            bands=tuple((lo, hi) for lo, hi in doc["bands"]),
            species_names=tuple(doc["species"]),
            A=A,
            condition_number=float(doc.get("condition_number", float("nan"))),
            provenance_hash=str(doc.get("provenance", "")),
        )


@dataclass(frozen=True)
class ConcentrationVector:
    """Recovered per-species concentrations plus the fit residual."""

    values: dict
    residual_norm: float
    nonneg_enforced: bool = False

    def __post_init__(self):
        vals = {str(k): float(v) for k, v in self.values.items()}
        if self.nonneg_enforced and any(v < 0 for v in vals.values()):
            raise ValueError("negative concentration under nonnegativity")
        if not (math.isfinite(self.residual_norm) and self.residual_norm >= 0):
            raise ValueError("residual_norm must be finite and >= 0")
        object.__setattr__(self, "values", vals)

    def as_array(self, species_names) -> np.ndarray:
        return np.array([self.values.get(name, 0.0) for name in species_names])


@dataclass(frozen=True)
class CapacityQuery:
    """Measurement-window and sensor parameters for capacity metrics."""

    t_m: float
    t_w: float
    fs: float
    delta_f: float
    geometry: SensorGeometry
    R: float
    R0: float

    def __post_init__(self):
        for name in ("t_m", "t_w", "fs", "delta_f", "R", "R0"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive")
        if self.t_m < self.t_w:
            raise ValueError("t_m must be >= t_w")


def johnson_thermometry(S_u: float, S_i: float) -> dict:
    """Absolute temperature and resistance from paired noise densities.

    T = sqrt(S_u * S_i) / 4k and R = sqrt(S_u / S_i); the product of the
    two densities fixes the temperature, their ratio the resistance, with
    no calibration constant anywhere.
    """
    if not (S_u > 0 and math.isfinite(S_u)):
        raise ValueError("S_u must be positive")
    if not (S_i > 0 and math.isfinite(S_i)):
        raise ValueError("S_i must be positive")
    return {
        "T": math.sqrt(S_u * S_i) / (4.0 * K_BOLTZMANN),
        "R": math.sqrt(S_u / S_i),
    }


def _band_deltas(measured: SpectrumEstimate, reference: SpectrumEstimate, bands):
    if measured.freqs.shape != reference.freqs.shape or not np.allclose(
        measured.freqs, reference.freqs, rtol=1e-9, atol=0.0
    ):
        raise ValueError("measured and reference spectra use different grids")
    return np.array(
        [measured.band_mean(lo, hi) - reference.band_mean(lo, hi) for lo, hi in bands]
    )


def _most_correlated_pair(matrix: np.ndarray, names):
    """Names of the two most linearly dependent columns."""
    n = matrix.shape[1]
    if n < 2:
        return (names[0], names[0])
    best, pair = -1.0, (names[0], names[1])
    for i in range(n):
        for j in range(i + 1, n):
            a, b = matrix[:, i], matrix[:, j]
            denom = np.linalg.norm(a) * np.linalg.norm(b)
            corr = abs(float(np.dot(a, b))) / denom if denom > 0 else 1.0
            if corr > best:
                best, pair = corr, (names[i], names[j])
    return pair


def calibrate(training, reference: SpectrumEstimate, bands) -> CalibrationMatrix:
    """Fit per-band response coefficients from training exposures.

    ``training`` pairs each known concentration set (ConcentrationVector
    or plain mapping) with the spectrum it produced. Band deltas against
    the reference are regressed on the concentrations band by band.
    Species columns are ordered by sorted name. Raises
    DegenerateCalibrationError (naming the most collinear species pair)
    when either the training concentrations or the fitted matrix are
    rank deficient beyond condition number 1e8.
    """
    if not training:
        raise ValueError("training set must be non-empty")
    bands = tuple((float(lo), float(hi)) for lo, hi in bands)
    names = set()
    rows = []
    for conc, spectrum in training:
        values = conc.values if isinstance(conc, ConcentrationVector) else dict(conc)
        names.update(values.keys())
        rows.append((values, spectrum))
    species = tuple(sorted(names))
    if len(rows) < len(species):
        raise ValueError(
            f"{len(rows)} training runs cannot identify {len(species)} species"
        )
    C = np.array([[vals.get(s, 0.0) for s in species] for vals, _ in rows])
    D = np.array([_band_deltas(spec, reference, bands) for _, spec in rows])

    cond_c = np.linalg.cond(C)
    if not np.isfinite(cond_c) or cond_c > _CONDITION_LIMIT:
        pair = _most_correlated_pair(C, species)
        raise DegenerateCalibrationError(
            f"training concentrations are degenerate (condition {cond_c:.3g}); "
            f"most collinear pair: {pair[0]!r} and {pair[1]!r}",
            species_pair=pair,
        )
    solution, *_ = sla.lstsq(C, D, lapack_driver="gelsy")
    A = solution.T  # bands x species
    cond_a = np.linalg.cond(A)
    if not np.isfinite(cond_a) or cond_a > _CONDITION_LIMIT:
        pair = _most_correlated_pair(A, species)
        raise DegenerateCalibrationError(
            f"fitted calibration is degenerate (condition {cond_a:.3g}); "
            f"most collinear pair: {pair[0]!r} and {pair[1]!r}",
            species_pair=pair,
        )

    h = hashlib.sha256()
    h.update(np.ascontiguousarray(C).tobytes())
    h.update(np.ascontiguousarray(D).tobytes())
    h.update(repr(bands).encode())
    h.update(repr(species).encode())
    return CalibrationMatrix(
        bands=bands,
        species_names=species,
        A=A,
        condition_number=float(cond_a),
        provenance_hash=h.hexdigest(),
    )


def nnls(A: np.ndarray, b: np.ndarray, max_iter: int | None = None):
    """Nonnegative least squares by the classical active-set method.

    Returns (x, residual_norm) with x >= 0 minimizing ||A x - b||. The
    entering variable is the one with the largest positive gradient;
    ties resolve to the lowest index so results are deterministic.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = A.shape
    if b.shape != (m,):
        raise ValueError("b length must match A rows")
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    tol = 10.0 * np.finfo(float).eps * np.linalg.norm(A, 1) * (max(m, n) + 1)
    limit = max_iter if max_iter is not None else 3 * n + 30
    for _ in range(limit):
        w = A.T @ (b - A @ x)
        candidates = np.flatnonzero(~passive)
        if candidates.size == 0 or np.max(w[candidates]) <= tol:
            break
        j = candidates[int(np.argmax(w[candidates]))]  # argmax keeps lowest index on ties
        passive[j] = True
        while np.any(passive):
            s = np.zeros(n)
            sol, *_ = sla.lstsq(A[:, passive], b, lapack_driver="gelsy")
            s[passive] = sol
            if np.min(s[passive]) > 0:
                x = s
                break
            # shrink toward the feasible boundary, drop zeroed variables
            mask = passive & (s <= 0)
            gap = x[mask] - s[mask]
            ratio = np.divide(x[mask], gap, out=np.zeros_like(gap), where=gap > 0)
            alpha = float(np.min(ratio))
            x = x + alpha * (s - x)
            passive &= x > tol
            x[~passive] = 0.0
    residual = float(np.linalg.norm(A @ x - b))
    return x, residual


def unmix(
    measured: SpectrumEstimate,
    reference: SpectrumEstimate,
    calib: CalibrationMatrix,
    nonneg: bool = False,
) -> ConcentrationVector:
    """Solve band deltas = A * concentrations for the gas composition."""
    d = _band_deltas(measured, reference, calib.bands)
    if nonneg:
        c, residual = nnls(calib.A, d)
    else:
        c, *_ = sla.lstsq(calib.A, d, lapack_driver="gelsy")
        residual = float(np.linalg.norm(calib.A @ c - d))
    values = {name: float(v) for name, v in zip(calib.species_names, c)}
    return ConcentrationVector(values=values, residual_norm=residual, nonneg_enforced=nonneg)


def classical_capacity(q: CapacityQuery, hooge_A: float, bits: bool = False) -> float:
    """Upper-limit information rate of mean-value (classical) readout.

    (1 / 2 t_m) * ln(1 + 8 pi^2 A_S d (R - R0)^2 / (hooge_A R^2)); larger
    film area and thickness raise the signal-to-1/f-noise ratio inside
    the log. The natural-log form is the primary output; pass bits=True
    to divide by ln 2 (the unit convention is genuinely ambiguous
    upstream, so both are exposed).
    """
    if not (hooge_A > 0 and math.isfinite(hooge_A)):
        raise ValueError("hooge_A must be positive")
    g = q.geometry
    x = (
        8.0 * math.pi**2 * g.surface_A_S * g.thickness_d * (q.R - q.R0) ** 2
        / (hooge_A * q.R**2)
    )
    value = math.log1p(x) / (2.0 * q.t_m)
    return value / math.log(2.0) if bits else value


def fes_capacity_scaling(q: CapacityQuery) -> float:
    """Relative capacity scaling of spectral readout: t_m * t_w * fs^2 / delta_f.

    A proportionality, not an absolute rate; use it to compare capture
    configurations against each other.
    """
    return q.t_m * q.t_w * q.fs**2 / q.delta_f


def selectivity_enhancement(per_decade: int, decades: int, mode: str = "psd") -> int:
    """How many classical sensors one fluctuation-readout sensor replaces.

    psd mode counts resolvable Lorentzian components (per_decade *
    decades); bispectrum mode counts the independent points of the
    third-order spectrum those components span, n^2/6 after symmetry
    reduction.
    """
    per_decade = int(per_decade)
    decades = int(decades)
    if per_decade < 1 or decades < 1:
        raise ValueError("per_decade and decades must be >= 1")
    n = per_decade * decades
    if mode == "psd":
        return n
    if mode == "bispectrum":
        return symmetry_reduce_count(n)
    raise ValueError(f"mode must be 'psd' or 'bispectrum', got {mode!r}")
