"""Command-line experiment runner.

Subcommands cover the full workflow: ``synth`` renders noise records
from a configured fluctuator bank, ``psd``/``bispec`` estimate spectra
from existing series files, ``calibrate`` fits and persists a gas
calibration, ``fes-pipeline`` runs simulate -> measure -> unmix end to
end, ``budget`` sweeps a measurement chain's noise budget, and
``metrics`` evaluates capacity and selectivity figures.

Every command reads one TOML config (sections it does not use are
ignored), draws all randomness from the single top-level seed, writes
outputs atomically, and emits a JSON result envelope whose config_hash
covers the resolved configuration but never timing.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .analysis import (
    CalibrationMatrix,
    CapacityQuery,
    DegenerateCalibrationError,
    calibrate,
    classical_capacity,
    fes_capacity_scaling,
    selectivity_enhancement,
    unmix,
)
from .config import (
    ConfigError,
    SCHEMA_VERSION,
    _Scope,
    build_capture,
    build_chain,
    build_gases,
    build_geometry,
    build_sensor_state,
    build_species_db,
    config_hash,
    load_config,
)
from .instrument import (
    DutModel,
    NoFeasibleGainError,
    TiaChain,
    VnmChain,
    amplifier_bn_psd_ratio,
    filter_through_chain,
    load_component_db,
    max_feedback_resistance,
    tia_dc_operating_point,
    tia_equivalent_input_noise,
    vnm_coupling_response,
    vnm_input_psd,
)
from .seeding import derive_subseed
from .sensor_sim import apply_gas_mixture, apply_uv, min_measurement_time, render_sensor_voltage
from .signal_synth import TimeSeries, build_one_over_f_bank, render_bank, superpose_psd
from .spectral import SpectrumEstimate, bispectrum, welch_psd

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MISSING_CALIBRATION = 4
EXIT_DEGENERATE = 5


class MissingCalibrationError(Exception):
    """Calibration file required by the pipeline is absent."""

    def __init__(self, path: str):
        super().__init__(f"calibration file not found: {path}")
        self.path = path


def _atomic_write_text(path: str, text: str):
    """Write via a sibling temp file and rename; no partial files on error."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_via_temp(path: str, write_fn):
    """Run a path-taking writer against a temp file, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_json_ready(v) for v in obj.tolist()]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _write_envelope(outdir, name, resolved, spectra, concentrations, metrics, t0):
    envelope = {
        "schema_version": SCHEMA_VERSION,
        "toolkit_version": __version__,
        "config_hash": config_hash(resolved),
        "resolved_config": resolved,
        "spectra": spectra,
        "concentrations": concentrations,
        "metrics": _json_ready(metrics),
        "timing_s": time.monotonic() - t0,
    }
    path = os.path.join(outdir, name)
    _atomic_write_text(path, json.dumps(envelope, indent=2, sort_keys=True) + "\n")
    return path


def _spectrum_entry(spec: SpectrumEstimate, label, outdir, fmt, filename):
    entry = {
        "label": label,
        "delta_f_hz": spec.delta_f,
        "n_averages": spec.n_averages,
        "window": spec.window_label,
    }
    if fmt in ("csv", "both"):
        _atomic_via_temp(os.path.join(outdir, filename), spec.to_csv)
        entry["file"] = filename
    if fmt in ("json", "both"):
        entry["freqs_hz"] = [float(f) for f in spec.freqs]
        entry["values"] = [float(v) for v in spec.values]
    return entry


def _resolved(doc: dict, seed: int) -> dict:
    resolved = _json_ready(doc)
    resolved["seed"] = seed
    return resolved


def _linear_grid(bands, points: int) -> np.ndarray:
    lo = min(b[0] for b in bands)
    hi = max(b[1] for b in bands)
    if lo <= 0:
        lo = hi / 1e6
    return np.linspace(lo, hi, points)


# ---------------------------------------------------------------- commands


def _cmd_synth(doc, args, outdir, fmt, seed, t0):
    scope = _Scope(doc.get("synth", {}), "synth")
    source = scope.get("source", "one_over_f", kind=str)
    duration = scope.get("duration", kind=float)
    fs = scope.get("fs", kind=float)
    unit = scope.get("unit_label", "a.u.", kind=str)
    if source == "one_over_f":
        decades = scope.get("decades", 6, kind=int)
        per_decade = scope.get("per_decade", 3, kind=int)
        tau_min = scope.get("tau_min", kind=float)
        total_power = scope.get("total_power", None, kind=float)
        try:
            bank = build_one_over_f_bank(
                decades, per_decade, tau_min, total_power_target=total_power,
            )
        except ValueError as exc:
            raise ConfigError(f"synth: {exc}") from exc
    elif source == "sensor":
        bank = list(build_sensor_state(doc).bank)
    else:
        raise ConfigError(f"synth.source must be 'one_over_f' or 'sensor', got {source!r}")

    corners = sorted(1.0 / (2.0 * math.pi * f.tau) for f in bank)
    f_min = scope.get("psd_f_min", corners[0] / 10.0, kind=float)
    f_max = scope.get("psd_f_max", fs / 2.0, kind=float)
    ppd = scope.get("psd_points_per_decade", 20, kind=int)
    scope.finish()
    if not (0 < f_min < f_max):
        raise ConfigError("synth: psd_f_min must be positive and below psd_f_max")
    n_pts = max(2, int(round(math.log10(f_max / f_min) * ppd)) + 1)
    grid = np.logspace(math.log10(f_min), math.log10(f_max), n_pts)

    ts = render_bank(bank, duration, fs, seed, unit_label=unit)
    analytic = superpose_psd(bank, grid)
    logf = np.log10(grid)
    slope = float(np.polyfit(logf, np.log10(np.maximum(analytic.values, 1e-300)), 1)[0])

    files = []
    if fmt in ("csv", "both"):
        _atomic_via_temp(os.path.join(outdir, "synth_timeseries.csv"), ts.to_csv)
        files.append("synth_timeseries.csv")
    spectra = [_spectrum_entry(analytic, "analytic_psd", outdir, fmt, "synth_analytic_psd.csv")]
    metrics = {
        "n_samples": len(ts.samples),
        "sample_rate_hz": fs,
        "n_fluctuators": len(bank),
        "analytic_loglog_slope": slope,
        "series_variance": float(np.var(ts.samples)),
        "files": files,
    }
    resolved = _resolved(doc, seed)
    _write_envelope(outdir, "synth_envelope.json", resolved, spectra, None, metrics, t0)
    return EXIT_OK


def _load_series(path: str) -> TimeSeries:
    if path.endswith((".bin", ".fests")):
        return TimeSeries.from_binary(path)
    return TimeSeries.from_csv(path)


def _cmd_psd(doc, args, outdir, fmt, seed, t0):
    ts = _load_series(args.infile)
    capture = build_capture(doc)
    spec = welch_psd(ts, capture)
    spectra = [_spectrum_entry(spec, "welch_psd", outdir, fmt, "psd.csv")]
    metrics = {
        "n_averages": spec.n_averages,
        "delta_f_hz": spec.delta_f,
        "band_power": spec.band_power(spec.freqs[1], float(spec.freqs[-1])),
    }
    resolved = _resolved(doc, seed)
    _write_envelope(outdir, "psd_envelope.json", resolved, spectra, None, metrics, t0)
    return EXIT_OK


def _cmd_bispec(doc, args, outdir, fmt, seed, t0):
    ts = _load_series(args.infile)
    capture = build_capture(doc)
    est = bispectrum(ts, capture)
    mag = est.magnitude()
    se = est.gaussian_standard_error()
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, mag / se, 0.0)
    i, j = np.unravel_index(int(np.argmax(z)), z.shape)
    if fmt in ("csv", "both"):
        _atomic_via_temp(os.path.join(outdir, "bispectrum.csv"), est.to_csv)
    metrics = {
        "n_averages": est.n_averages,
        "peak_f1_hz": float(est.f1_grid[i]),
        "peak_f2_hz": float(est.f2_grid[j]),
        "peak_magnitude": float(mag[i, j]),
        "peak_z": float(z[i, j]),
    }
    resolved = _resolved(doc, seed)
    _write_envelope(outdir, "bispec_envelope.json", resolved, [], None, metrics, t0)
    return EXIT_OK


def _calibration_scope(doc):
    if "calibration" not in doc:
        raise ConfigError("missing required section [calibration]")
    return _Scope(doc["calibration"], "calibration")


def _bands_from(scope: _Scope):
    raw = scope.get("bands", kind=list)
    bands = []
    for i, item in enumerate(raw):
        if not isinstance(item, list) or len(item) != 2:
            raise ConfigError(f"calibration.bands[{i}] must be [f_low, f_high]")
        bands.append((float(item[0]), float(item[1])))
    if not bands:
        raise ConfigError("calibration.bands must be non-empty")
    return tuple(bands)


def _acquire_spectrum(state, mode, bands, grid_points, capture, bias_current, chain, seed):
    """One measured spectrum of the sensor, analytic or simulated."""
    if mode == "analytic":
        return state.analytic_psd(_linear_grid(bands, grid_points))
    ts = render_sensor_voltage(state, bias_current, capture.t_m, capture.fs, seed)
    if chain is not None:
        ts = filter_through_chain(
            ts, chain, derive_subseed(seed, "chain"), dut=DutModel(R_D=state.mean_R)
        )
    return welch_psd(ts, capture)


def _cmd_calibrate(doc, args, outdir, fmt, seed, t0):
    scope = _calibration_scope(doc)
    bands = _bands_from(scope)
    mode = scope.get("mode", "analytic", kind=str)
    if mode not in ("analytic", "rendered"):
        raise ConfigError(f"calibration.mode must be 'analytic' or 'rendered', got {mode!r}")
    grid_points = scope.get("grid_points", 4097, kind=int)
    bias_current = scope.get("bias_current", 1e-3, kind=float)
    out_name = scope.get("output", "calibration.json", kind=str)
    training_raw = scope.get("training", kind=list)
    scope.finish()
    if not training_raw:
        raise ConfigError("calibration.training must list at least one run")

    species_db = build_species_db(doc)
    base = build_sensor_state(doc)
    base = apply_uv(base)
    capture = build_capture(doc) if mode == "rendered" else None
    chain = build_chain(doc, load_component_db(args.components)) if mode == "rendered" else None

    reference = _acquire_spectrum(
        base, mode, bands, grid_points, capture, bias_current, chain,
        derive_subseed(seed, "calibrate", "reference"),
    )
    training = []
    for i, entry in enumerate(training_raw):
        run = _Scope(entry, f"calibration.training[{i}]")
        gases_raw = run.get("gases")
        run.finish()
        gases = {}
        if not isinstance(gases_raw, dict) or not gases_raw:
            raise ConfigError(f"calibration.training[{i}].gases must be a non-empty table")
        for name, value in gases_raw.items():
            if name not in species_db:
                raise ConfigError(
                    f"calibration.training[{i}].gases.{name}: unknown species"
                )
            gases[name] = float(value)
        exposed = apply_gas_mixture(base, gases, species_db)
        spec = _acquire_spectrum(
            exposed, mode, bands, grid_points, capture, bias_current, chain,
            derive_subseed(seed, "calibrate", "training", i),
        )
        training.append((gases, spec))

    calib = calibrate(training, reference, bands)
    _atomic_write_text(os.path.join(outdir, out_name), calib.to_json() + "\n")
    metrics = {
        "condition_number": calib.condition_number,
        "n_bands": len(calib.bands),
        "species": list(calib.species_names),
        "calibration_file": out_name,
        "mode": mode,
    }
    resolved = _resolved(doc, seed)
    _write_envelope(outdir, "calibrate_envelope.json", resolved, [], None, metrics, t0)
    return EXIT_OK


def _cmd_fes_pipeline(doc, args, outdir, fmt, seed, t0):
    if "pipeline" not in doc:
        raise ConfigError("missing required section [pipeline]")
    scope = _Scope(doc["pipeline"], "pipeline")
    calib_path = scope.get("calibration", kind=str)
    mode = scope.get("mode", "analytic", kind=str)
    if mode not in ("analytic", "rendered"):
        raise ConfigError(f"pipeline.mode must be 'analytic' or 'rendered', got {mode!r}")
    nonneg = scope.get("nonneg", False, kind=bool)
    bias_current = scope.get("bias_current", 1e-3, kind=float)
    grid_points = scope.get("grid_points", 4097, kind=int)
    scope.finish()

    calib_file = calib_path
    if not os.path.isabs(calib_file):
        calib_file = os.path.join(outdir, calib_file)
    if not os.path.exists(calib_file):
        raise MissingCalibrationError(calib_file)
    with open(calib_file) as fh:
        calib = CalibrationMatrix.from_json(fh.read())

    species_db = build_species_db(doc)
    gases = build_gases(doc, species_db)
    base = build_sensor_state(doc)
    base = apply_uv(base)
    capture = build_capture(doc) if mode == "rendered" else None
    chain = build_chain(doc, load_component_db(args.components)) if mode == "rendered" else None

    reference = _acquire_spectrum(
        base, mode, calib.bands, grid_points, capture, bias_current, chain,
        derive_subseed(seed, "calibrate", "reference"),
    )
    exposed = apply_gas_mixture(base, gases, species_db)
    measured = _acquire_spectrum(
        exposed, mode, calib.bands, grid_points, capture, bias_current, chain,
        derive_subseed(seed, "pipeline", "measured"),
    )
    result = unmix(measured, reference, calib, nonneg=nonneg)

    spectra = [
        _spectrum_entry(reference, "reference", outdir, fmt, "pipeline_reference.csv"),
        _spectrum_entry(measured, "measured", outdir, fmt, "pipeline_measured.csv"),
    ]
    metrics = {
        "residual_norm": result.residual_norm,
        "nonneg": nonneg,
        "mode": mode,
        "calibration_file": calib_path,
        "true_concentrations": gases,
    }
    resolved = _resolved(doc, seed)
    _write_envelope(
        outdir, "fes_pipeline_envelope.json", resolved, spectra, result.values, metrics, t0
    )
    return EXIT_OK


def _budget_rows_vnm(chain, dut, freqs):
    header = [
        "freq_hz", "part_dut", "part_evn", "part_bias_current_term",
        "parts_sum", "total", "coupling_gain_magnitude", "ra_noise_contribution",
    ]
    rows = []
    for f in freqs:
        budget = vnm_input_psd(chain, dut, float(f))
        parts = budget["parts"]
        coupling = vnm_coupling_response(chain, float(f))
        parts_sum = parts["dut"] + parts["evn"] + parts["bias_current_term"]
        rows.append([
            _fmt(float(f)), _fmt(parts["dut"]), _fmt(parts["evn"]),
            _fmt(parts["bias_current_term"]), _fmt(parts_sum), _fmt(budget["total"]),
            _fmt(coupling["gain_magnitude"]), _fmt(coupling["ra_noise_contribution"]),
        ])
    return header, rows


def _budget_rows_tia(chain, dut, freqs):
    header = [
        "freq_hz", "part_feedback", "part_evn_term", "part_bias_term", "part_dut",
        "parts_sum", "total",
    ]
    rows = []
    for f in freqs:
        budget = tia_equivalent_input_noise(chain, dut, float(f))
        parts = budget["parts"]
        parts_sum = parts["feedback"] + parts["evn_term"] + parts["bias_term"] + parts["dut"]
        rows.append([
            _fmt(float(f)), _fmt(parts["feedback"]), _fmt(parts["evn_term"]),
            _fmt(parts["bias_term"]), _fmt(parts["dut"]), _fmt(parts_sum),
            _fmt(budget["total"]),
        ])
    return header, rows


def _cmd_budget(doc, args, outdir, fmt, seed, t0):
    chain = build_chain(doc, load_component_db(args.components))
    if chain is None:
        raise ConfigError("missing required section [chain]")
    scope = _Scope(doc.get("budget", {}), "budget")
    f_min = scope.get("f_min", 0.01, kind=float)
    f_max = scope.get("f_max", 1000.0, kind=float)
    ppd = scope.get("points_per_decade", 10, kind=int)
    r_d = scope.get("dut_resistance", kind=float)
    c_d = scope.get("dut_capacitance", 0.0, kind=float)
    i_bias = scope.get("i_bias", 1e-6, kind=float)
    margin = scope.get("margin", 0.0, kind=float)
    compare = scope.get("compare", None)
    compare_freqs = scope.get("compare_frequencies", [0.1, 1.0, 1000.0])
    scope.finish()
    if not (0 < f_min < f_max):
        raise ConfigError("budget: f_min must be positive and below f_max")
    dut = DutModel(R_D=r_d, C_parallel=c_d)
    n_pts = max(2, int(round(math.log10(f_max / f_min) * ppd)) + 1)
    freqs = np.logspace(math.log10(f_min), math.log10(f_max), n_pts)

    if isinstance(chain, VnmChain):
        header, rows = _budget_rows_vnm(chain, dut, freqs)
        summary = {
            "chain_kind": "vnm",
            "coupling_corner_hz": chain.coupling_corner_hz,
            "settle_time_s": vnm_coupling_response(chain, 1.0)["settle_time_s"],
            "gain_linear": chain.gain_linear,
        }
    else:
        header, rows = _budget_rows_tia(chain, dut, freqs)
        dc = tia_dc_operating_point(chain, i_bias)
        summary = {
            "chain_kind": "tia",
            "topology": chain.topology,
            "V_ODC": dc["V_ODC"],
            "in_linearity": dc["in_linearity"],
            "i_bias": i_bias,
            "margin": margin,
        }
        try:
            summary["max_feedback_ohm"] = max_feedback_resistance(chain, i_bias, margin)
            summary["headroom_flag"] = ""
        except NoFeasibleGainError:
            summary["max_feedback_ohm"] = float("nan")
            summary["headroom_flag"] = "infeasible_headroom"

    if fmt in ("csv", "both"):
        _atomic_write_text(os.path.join(outdir, "budget_sweep.csv"), _csv_text(header, rows))
        keys = sorted(summary)
        _atomic_write_text(
            os.path.join(outdir, "budget_summary.csv"),
            _csv_text(keys, [[_fmt(summary[k]) for k in keys]]),
        )

    if compare is not None:
        if not (isinstance(compare, list) and len(compare) == 2):
            raise ConfigError("budget.compare must list exactly two component names")
        db = load_component_db(args.components)
        for name in compare:
            if name not in db:
                raise ConfigError(f"budget.compare: component {name!r} not in the library")
        comp_rows = []
        for f in compare_freqs:
            ratio = amplifier_bn_psd_ratio(db[compare[0]], db[compare[1]], float(f))
            comp_rows.append([
                _fmt(float(f)), _fmt(db[compare[0]].psd(float(f))),
                _fmt(db[compare[1]].psd(float(f))), _fmt(ratio),
            ])
        if fmt in ("csv", "both"):
            _atomic_write_text(
                os.path.join(outdir, "budget_comparison.csv"),
                _csv_text(
                    ["freq_hz", f"psd_{compare[0]}", f"psd_{compare[1]}", "psd_ratio"],
                    comp_rows,
                ),
            )
        summary["comparison"] = {
            f"{compare[0]}_over_{compare[1]}_at_{f}": float(r[3])
            for f, r in zip(compare_freqs, comp_rows)
        }

    resolved = _resolved(doc, seed)
    _write_envelope(outdir, "budget_envelope.json", resolved, [], None, summary, t0)
    return EXIT_OK


def _cmd_metrics(doc, args, outdir, fmt, seed, t0):
    geometry = build_geometry(doc)
    scope = _Scope(doc.get("metrics", {}), "metrics")
    query = CapacityQuery(
        t_m=scope.get("t_m", kind=float),
        t_w=scope.get("t_w", kind=float),
        fs=scope.get("fs", kind=float),
        delta_f=scope.get("delta_f", kind=float),
        geometry=geometry,
        R=scope.get("R", kind=float),
        R0=scope.get("R0", kind=float),
    )
    per_decade = scope.get("per_decade", 3, kind=int)
    decades = scope.get("decades", 6, kind=int)
    scope.finish()
    metrics = {
        "classical_capacity_nat": classical_capacity(query, geometry.hooge_A),
        "classical_capacity_bits": classical_capacity(query, geometry.hooge_A, bits=True),
        "fes_capacity_scaling": fes_capacity_scaling(query),
        "min_measurement_time_s": min_measurement_time(geometry),
        "selectivity_psd": selectivity_enhancement(per_decade, decades, "psd"),
        "selectivity_bispectrum": selectivity_enhancement(per_decade, decades, "bispectrum"),
    }
    resolved = _resolved(doc, seed)
    _write_envelope(outdir, "metrics_envelope.json", resolved, [], None, metrics, t0)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

_COMMANDS = {
    "synth": _cmd_synth,
    "psd": _cmd_psd,
    "bispec": _cmd_bispec,
    "calibrate": _cmd_calibrate,
    "fes-pipeline": _cmd_fes_pipeline,
    "budget": _cmd_budget,
    "metrics": _cmd_metrics,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fes",
        description="Fluctuation-enhanced sensing toolkit runner",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML experiment configuration")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="output directory (default: config or cwd)")
    common.add_argument(
        "--format", choices=("csv", "json", "both"), default=None,
        help="artifact format (default: config or both)",
    )
    common.add_argument(
        "--components", default=None,
        help="amplifier library TOML (default: FES_COMPONENT_DB or packaged)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="render a configured noise bank")
    p_psd = sub.add_parser("psd", parents=[common], help="Welch PSD of a series file")
    p_psd.add_argument("--in", dest="infile", required=True, help="input series (.csv or .bin)")
    p_bis = sub.add_parser("bispec", parents=[common], help="bispectrum of a series file")
    p_bis.add_argument("--in", dest="infile", required=True, help="input series (.csv or .bin)")
    sub.add_parser("calibrate", parents=[common], help="fit and persist a gas calibration")
    sub.add_parser("fes-pipeline", parents=[common], help="simulate, measure, unmix")
    sub.add_parser("budget", parents=[common], help="sweep a chain noise budget")
    sub.add_parser("metrics", parents=[common], help="capacity and selectivity figures")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    t0 = time.monotonic()
    try:
        doc = load_config(args.config)

        out_cfg = doc.get("outputs", {})
        scope = _Scope(out_cfg, "outputs")
        cfg_dir = scope.get("directory", ".", kind=str)
        cfg_fmt = scope.get("format", "both", kind=str)
        scope.finish()
        if cfg_fmt not in ("csv", "json", "both"):
            raise ConfigError(f"outputs.format must be csv, json, or both, got {cfg_fmt!r}")
        outdir = args.out if args.out is not None else cfg_dir
        fmt = args.format if args.format is not None else cfg_fmt
        os.makedirs(outdir, exist_ok=True)

        seed_cfg = doc.get("seed", 0)
        if isinstance(seed_cfg, bool) or not isinstance(seed_cfg, int):
            raise ConfigError("seed must be an integer")
        seed = args.seed if args.seed is not None else seed_cfg

        return _COMMANDS[args.command](doc, args, outdir, fmt, seed, t0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingCalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_CALIBRATION
    except DegenerateCalibrationError as exc:
        print(f"degenerate calibration: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
