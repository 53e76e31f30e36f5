"""Spectral estimation: Welch PSDs, bispectra, and spectral features.

One-sided conventions throughout (factor 2 on positive-frequency bins).
The bispectrum is the direct FFT estimator, segment-averaged over the
non-redundant principal domain 0 <= f2 <= f1, f1 + f2 <= fs/2; only the
non-Gaussian part of a signal survives in it, which is what makes it a
useful fingerprint ingredient on top of the PSD.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .signal_synth import TimeSeries

__all__ = [
    "SpectrumEstimate",
    "BispectrumEstimate",
    "CaptureConfig",
    "welch_psd",
    "normalize_per_bias",
    "bispectrum",
    "symmetry_reduce_count",
    "detect_plateau",
]

# Full-plane bispectrum storage is O(nperseg^2); keep it bounded.
_MAX_BISPEC_NPERSEG = 4096

_WINDOW_NAMES = {"hann": "hann", "rectangular": "boxcar"}


@dataclass(frozen=True)
class SpectrumEstimate:
    """One-sided spectral density on an ascending frequency grid.

    ``values`` are unit^2/Hz for normalization "raw" and 1/Hz after
    per-bias normalization ("per_U_squared").
    """

    freqs: np.ndarray
    values: np.ndarray
    n_averages: int
    window_label: str
    one_sided: bool = True
    normalization: str = "raw"

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if freqs.ndim != 1 or freqs.shape != values.shape:
            raise ValueError("freqs and values must be 1-D arrays of equal length")
        if freqs.size and np.any(np.diff(freqs) <= 0):
            raise ValueError("freqs must be strictly ascending")
        if np.any(~np.isfinite(values)) or np.any(values < 0):
            raise ValueError("values must be finite and >= 0")
        if self.n_averages < 1:
            raise ValueError("n_averages must be >= 1")
        if not self.one_sided:
            raise ValueError("only one-sided spectra are supported")
        if self.normalization not in ("raw", "per_U_squared"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        freqs = freqs.copy()
        values = values.copy()
        freqs.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "values", values)

    @property
    def delta_f(self) -> float:
        return float(self.freqs[1] - self.freqs[0]) if self.freqs.size > 1 else 0.0

    def band_mean(self, f_lo: float, f_hi: float) -> float:
        """Mean density over bins with f_lo <= f < f_hi."""
        mask = (self.freqs >= f_lo) & (self.freqs < f_hi)
        if not np.any(mask):
            raise ValueError(f"no bins in band [{f_lo}, {f_hi})")
        return float(np.mean(self.values[mask]))

    def band_power(self, f_lo: float, f_hi: float) -> float:
        """Integrated power over bins with f_lo <= f < f_hi."""
        mask = (self.freqs >= f_lo) & (self.freqs < f_hi)
        if not np.any(mask):
            raise ValueError(f"no bins in band [{f_lo}, {f_hi})")
        return float(np.sum(self.values[mask]) * self.delta_f)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["freq_hz", "psd"])
            for f, v in zip(self.freqs, self.values):
                writer.writerow([f"{f:.17g}", f"{v:.17g}"])

    @classmethod
    def from_csv(cls, path, n_averages: int = 1, window_label: str = "file"):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns (freq_hz, psd)")
        return cls(freqs=data[:, 0], values=data[:, 1],
                   n_averages=n_averages, window_label=window_label)


@dataclass(frozen=True)
class BispectrumEstimate:
    """Segment-averaged direct bispectrum over the principal domain.

    ``values[i, j]`` holds the average of X(f1_i) X(f2_j) X*(f1_i + f2_j);
    entries outside the principal domain (f2 > f1 or f1 + f2 > fs/2) are
    zero and flagged False in ``valid``. ``segment_power`` is the averaged
    per-segment |X|^2 on the same normalization as the triple product, so
    the Gaussian-null standard error is self-consistent.
    """

    f1_grid: np.ndarray
    f2_grid: np.ndarray
    values: np.ndarray
    n_averages: int
    valid: np.ndarray
    segment_power: np.ndarray

    def __post_init__(self):
        f1 = np.asarray(self.f1_grid, dtype=np.float64)
        f2 = np.asarray(self.f2_grid, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.complex128)
        valid = np.asarray(self.valid, dtype=bool)
        power = np.asarray(self.segment_power, dtype=np.float64)
        if vals.shape != (f1.size, f2.size) or valid.shape != vals.shape:
            raise ValueError("values/valid must be (len(f1_grid), len(f2_grid))")
        if power.shape != f1.shape:
            raise ValueError("segment_power must match the frequency grid")
        if self.n_averages < 1:
            raise ValueError("n_averages must be >= 1")
        for name, arr in (("f1_grid", f1), ("f2_grid", f2), ("values", vals),
                          ("valid", valid), ("segment_power", power)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def gaussian_standard_error(self) -> np.ndarray:
        """Std error of each point under a Gaussian (zero-bispectrum) null.

        SE(f1, f2) = sqrt(P(f1) P(f2) P(f1+f2) / K) with P the averaged
        segment power and K the segment count. Zero outside the domain.
        """
        p = self.segment_power
        i_idx = np.arange(self.f1_grid.size)
        j_idx = np.arange(self.f2_grid.size)
        sum_idx = np.minimum(i_idx[:, None] + j_idx[None, :], p.size - 1)
        se = np.sqrt(p[:, None] * p[None, :] * p[sum_idx] / self.n_averages)
        se[~self.valid] = 0.0
        return se

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["f1_hz", "f2_hz", "real", "imag"])
            for i, f1 in enumerate(self.f1_grid):
                for j, f2 in enumerate(self.f2_grid):
                    if self.valid[i, j]:
                        v = self.values[i, j]
                        writer.writerow([f"{f1:.17g}", f"{f2:.17g}",
                                         f"{v.real:.17g}", f"{v.imag:.17g}"])


@dataclass(frozen=True)
class CaptureConfig:
    """Segmentation recipe for spectral estimation.

    ``t_w`` is the duration of one analysis window, ``t_m`` the total
    record time used, so the line spacing is 1/t_w and the number of
    averages grows with t_m/t_w.
    """

    t_w: float
    t_m: float
    fs: float
    overlap_fraction: float = 0.5
    window: str = "hann"

    def __post_init__(self):
        if not (np.isfinite(self.t_w) and self.t_w > 0):
            raise ValueError("t_w must be positive")
        if not (np.isfinite(self.t_m) and self.t_m >= self.t_w):
            raise ValueError("t_m must be >= t_w")
        if not (np.isfinite(self.fs) and self.fs > 0):
            raise ValueError("fs must be positive")
        if not (0.0 <= self.overlap_fraction < 1.0):
            raise ValueError("overlap_fraction must be in [0, 1)")
        if self.window not in _WINDOW_NAMES:
            raise ValueError(f"window must be one of {sorted(_WINDOW_NAMES)}")
        if self.nperseg < 2:
            raise ValueError("t_w * fs must be >= 2 samples")

    @property
    def nperseg(self) -> int:
        return int(round(self.t_w * self.fs))

    @property
    def noverlap(self) -> int:
        return int(round(self.overlap_fraction * self.nperseg))

    @property
    def delta_f(self) -> float:
        return self.fs / self.nperseg

    def n_samples_used(self, available: int) -> int:
        return min(available, int(round(self.t_m * self.fs)))

    def n_segments(self, available: int) -> int:
        n_use = self.n_samples_used(available)
        step = self.nperseg - self.noverlap
        if n_use < self.nperseg:
            return 0
        return 1 + (n_use - self.nperseg) // step


def _sliced(ts: TimeSeries, cfg: CaptureConfig) -> np.ndarray:
    if abs(ts.sample_rate_fs - cfg.fs) > 1e-9 * cfg.fs:
        raise ValueError(
            f"capture fs {cfg.fs} does not match series fs {ts.sample_rate_fs}"
        )
    n_use = cfg.n_samples_used(len(ts))
    if n_use < cfg.nperseg:
        raise ValueError("series shorter than one analysis window")
    return ts.samples[:n_use]


def welch_psd(ts: TimeSeries, cfg: CaptureConfig) -> SpectrumEstimate:
    """One-sided Welch PSD of the first t_m seconds of the series.

    Density scaling with window power correction, hann + 50% overlap by
    default, constant detrend per segment. Parseval holds: sum(values)
    times the bin width recovers the detrended segment variance.
    """
    x = _sliced(ts, cfg)
    freqs, psd = sps.welch(
        x,
        fs=ts.sample_rate_fs,
        window=_WINDOW_NAMES[cfg.window],
        nperseg=cfg.nperseg,
        noverlap=cfg.noverlap,
        detrend="constant",
        return_onesided=True,
        scaling="density",
        average="mean",
    )
    return SpectrumEstimate(
        freqs=freqs,
        values=np.maximum(psd, 0.0),
        n_averages=cfg.n_segments(len(ts)),
        window_label=cfg.window,
    )


def normalize_per_bias(spec: SpectrumEstimate, U: float) -> SpectrumEstimate:
    """Divide a raw voltage PSD by U^2 (bias normalization, units 1/Hz)."""
    if U == 0 or not np.isfinite(U):
        raise ValueError("bias voltage U must be nonzero and finite")
    if spec.normalization != "raw":
        raise ValueError("spectrum is already normalized")
    return SpectrumEstimate(
        freqs=spec.freqs,
        values=spec.values / (U * U),
        n_averages=spec.n_averages,
        window_label=spec.window_label,
        normalization="per_U_squared",
    )


def bispectrum(ts: TimeSeries, cfg: CaptureConfig) -> BispectrumEstimate:
    """Direct FFT bispectrum averaged over overlapped segments.

    Each segment is detrended, windowed, and transformed; the triple
    product X(f1) X(f2) X*(f1+f2) is accumulated over the principal
    domain in segment order. FFT values are scaled so |X|^2 matches the
    one-sided PSD density, making the companion Gaussian standard error
    directly comparable to the averaged magnitudes.
    """
    if cfg.nperseg > _MAX_BISPEC_NPERSEG:
        raise ValueError(
            f"t_w * fs = {cfg.nperseg} exceeds the bispectrum grid cap "
            f"({_MAX_BISPEC_NPERSEG}); use a shorter window"
        )
    x = _sliced(ts, cfg)
    nperseg = cfg.nperseg
    step = nperseg - cfg.noverlap
    n_seg = cfg.n_segments(len(ts))
    win = sps.get_window(_WINDOW_NAMES[cfg.window], nperseg)
    # |X|^2 equals the one-sided density PSD with this scale.
    scale = math.sqrt(2.0 / (ts.sample_rate_fs * float(np.sum(win * win))))

    m = nperseg // 2 + 1
    freqs = np.fft.rfftfreq(nperseg, d=1.0 / ts.sample_rate_fs)
    idx = np.arange(m)
    sum_idx = idx[:, None] + idx[None, :]
    valid = (idx[None, :] <= idx[:, None]) & (sum_idx <= m - 1)
    sum_clipped = np.minimum(sum_idx, m - 1)

    acc = np.zeros((m, m), dtype=np.complex128)
    power = np.zeros(m)
    for k in range(n_seg):
        seg = x[k * step : k * step + nperseg]
        seg = (seg - seg.mean()) * win
        X = np.fft.rfft(seg) * scale
        power += np.abs(X) ** 2
        acc += X[:, None] * X[None, :] * np.conj(X)[sum_clipped]
    acc /= n_seg
    power /= n_seg
    acc[~valid] = 0.0
    return BispectrumEstimate(
        f1_grid=freqs,
        f2_grid=freqs,
        values=acc,
        n_averages=n_seg,
        valid=valid,
        segment_power=power,
    )


def symmetry_reduce_count(n_lines: int) -> int:
    """Independent bispectrum points given n spectral lines.

    The full plane has n^2 points; the six symmetry mappings of the
    bispectrum leave about n^2/6 independent ones. Clamped below at 1 so
    degenerate inputs still count as one piece of information.
    """
    n = int(n_lines)
    if n < 1:
        raise ValueError("n_lines must be >= 1")
    return max(1, (n * n) // 6)


# -- plateau / corner detection ---------------------------------------------


def _log_resample(freqs, values, points_per_decade=16):
    """Average log10(value) into uniform log10(frequency) cells.

    Cell averaging (not point interpolation) so estimator noise in dense
    high-frequency bins is suppressed before any slope is computed.
    """
    lf = np.log10(freqs)
    lv = np.log10(values)
    n_pts = max(int(math.ceil((lf[-1] - lf[0]) * points_per_decade)) + 1, 8)
    grid = np.linspace(lf[0], lf[-1], n_pts)
    half = 0.5 * (grid[1] - grid[0]) if n_pts > 1 else 0.5
    out = np.empty(n_pts)
    for k, g in enumerate(grid):
        sel = (lf >= g - half) & (lf < g + half)
        out[k] = math.log10(values[sel].mean()) if np.any(sel) else np.interp(g, lf, lv)
    return grid, out


def _fit_line(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def _run_bounds(mask, start):
    """End index (inclusive) of the True run of mask beginning at start."""
    j = start
    while j + 1 < mask.size and mask[j + 1]:
        j += 1
    return j


def detect_plateau(
    spec: SpectrumEstimate,
    flat_slope_threshold: float = 0.3,
    min_width_decades: float = 0.25,
    min_prominence_db: float = 6.0,
) -> list:
    """Find flat regions and their corner frequencies in a log-log PSD.

    The spectrum (DC excluded) is averaged onto a uniform log-frequency
    grid, lightly smoothed, and segmented by local log-log slope: runs
    with |slope| below ``flat_slope_threshold`` spanning at least
    ``min_width_decades`` are plateau candidates, and the falling runs
    around them are fitted as straight segments. The corner frequency is
    the intersection of the plateau level with the following falling
    segment (high band edge when nothing follows, as for a white
    spectrum). A candidate preceded by a falling segment must sit at
    least ``min_prominence_db`` above that segment's extrapolation; the
    margin is reported as ``decision_score`` (capped at 99 dB when there
    is no preceding descent to compare against).

    Returns a list of dicts with keys ``corner_frequency``,
    ``plateau_level``, ``decision_score``, ``f_lo``, ``f_hi``. The
    underlying physics gives no quantitative plateau definition; the
    thresholds are engineering defaults, all exposed as arguments.
    """
    mask = (spec.freqs > 0) & (spec.values > 0)
    freqs = spec.freqs[mask]
    values = spec.values[mask]
    if freqs.size < 4:
        return []
    decades_total = math.log10(freqs[-1] / freqs[0])
    if decades_total < 2.0 or freqs.size / decades_total < 2.0:
        return []

    grid, logv = _log_resample(freqs, values)
    # windowed (~ +/- 1/4 decade) linear fits keep estimator noise out of
    # the local slope; plain two-point gradients are far too jumpy
    win = min(9, logv.size if logv.size % 2 else logv.size - 1)
    h = grid[1] - grid[0]
    smooth = sps.savgol_filter(logv, win, 1, mode="interp")
    slopes = sps.savgol_filter(logv, win, 1, deriv=1, delta=h, mode="interp")

    flat = np.abs(slopes) < flat_slope_threshold
    # close single-point gaps left by residual estimator noise
    for k in range(1, flat.size - 1):
        if not flat[k] and flat[k - 1] and flat[k + 1]:
            flat[k] = True

    results = []
    n = grid.size
    i = 0
    while i < n:
        if not flat[i]:
            i += 1
            continue
        j = _run_bounds(flat, i)
        width = grid[j] - grid[i]
        if width < min_width_decades:
            i = j + 1
            continue
        level_log = float(np.median(smooth[i : j + 1]))

        # following falling run -> corner by straight-line intersection,
        # prominence by how far the spectrum drops past the corner
        corner_log = grid[j]
        score_db = 99.0
        k = j + 1
        if k < n and slopes[k] < -flat_slope_threshold:
            k_end = k
            while k_end + 1 < n and slopes[k_end + 1] < -flat_slope_threshold:
                k_end += 1
            if k_end > k:
                # fit the asymptotic (steep) part of the descent; the
                # rounded knee right after the plateau biases the corner low
                run = np.arange(k, k_end + 1)
                steep = run[slopes[run] <= 0.6 * slopes[run].min()]
                if steep.size < 2:
                    steep = run
                b, a = _fit_line(grid[steep], smooth[steep])
                if b < 0:
                    corner_log = (level_log - a) / b
                    corner_log = min(max(corner_log, grid[i]), grid[-1])
                # depth gate: fall within 1.5 decades past the plateau
                window = min(k_end, int(k + math.ceil(1.5 / (grid[1] - grid[0]))))
                score_db = 10.0 * (level_log - float(smooth[k : window + 1].min()))

        if score_db >= min_prominence_db:
            results.append({
                "corner_frequency": float(10.0 ** corner_log),
                "plateau_level": float(10.0 ** level_log),
                "decision_score": float(min(score_db, 99.0)),
                "f_lo": float(10.0 ** grid[i]),
                "f_hi": float(10.0 ** grid[j]),
            })
        i = j + 1
    return results
