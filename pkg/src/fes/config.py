"""Experiment configuration: strict TOML loading and object builders.

One TOML file can drive every subcommand; each command deep-validates
only the sections it consumes. Unknown keys anywhere are hard errors
(a silently ignored typo in a species name or band edge would corrupt
results), reported with their full dotted path.
"""

from __future__ import annotations

import hashlib
import json
import math

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .instrument import NoiseSourceSpec, TiaChain, VnmChain
from .sensor_sim import (
    GasSpecies,
    SampleHoldProtocol,
    SensorGeometry,
    SensorState,
    UvConfig,
)
from .signal_synth import Fluctuator
from .spectral import CaptureConfig

__all__ = [
    "ConfigError",
    "SCHEMA_VERSION",
    "load_config",
    "config_hash",
    "build_sensor_state",
    "build_species_db",
    "build_gases",
    "build_capture",
    "build_protocol",
    "build_chain",
    "build_geometry",
]

SCHEMA_VERSION = 1

_TOP_LEVEL_KEYS = {
    "schema_version",
    "seed",
    "sensor",
    "capture",
    "gases",
    "species",
    "protocol",
    "chain",
    "synth",
    "outputs",
    "metrics",
    "budget",
    "calibration",
    "pipeline",
}


class ConfigError(ValueError):
    """Invalid configuration; the message carries the dotted key path."""


class _Scope:
    """Strict single-use view of one config table.

    Keys are consumed by get(); finish() rejects whatever was never
    asked for, which is how unknown keys surface as errors with their
    full path.
    """

    def __init__(self, table, path: str):
        if not isinstance(table, dict):
            raise ConfigError(f"{path} must be a table")
        self._table = dict(table)
        self._path = path

    _MISSING = object()

    def get(self, key, default=_MISSING, kind=None):
        if key in self._table:
            value = self._table.pop(key)
        elif default is not _Scope._MISSING:
            return default
        else:
            raise ConfigError(f"missing required key {self._path}.{key}")
        if kind is not None and value is not None:
            if kind is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{self._path}.{key} must be a number")
                value = float(value)
            elif kind is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{self._path}.{key} must be an integer")
            elif not isinstance(value, kind):
                raise ConfigError(f"{self._path}.{key} has the wrong type")
        return value

    def sub(self, key, default=_MISSING):
        value = self.get(key, default)
        if value is default and default is not _Scope._MISSING:
            return None
        return _Scope(value, f"{self._path}.{key}")

    def finish(self):
        if self._table:
            key = sorted(self._table)[0]
            raise ConfigError(f"unknown key {self._path}.{key}")

    @property
    def path(self):
        return self._path


def load_config(path: str) -> dict:
    """Parse and shallow-validate a TOML experiment configuration."""
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"TOML parse error in {path}: {exc}") from exc
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got {version!r}"
        )
    for key in doc:
        if key not in _TOP_LEVEL_KEYS:
            raise ConfigError(f"unknown key {key}")
    return doc


def config_hash(resolved: dict) -> str:
    """Stable digest of a resolved configuration dict."""
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _require_table(doc: dict, key: str) -> _Scope:
    if key not in doc:
        raise ConfigError(f"missing required section [{key}]")
    return _Scope(doc[key], key)


def build_geometry(doc: dict) -> SensorGeometry:
    sensor = _require_table(doc, "sensor")
    geo_scope = sensor.sub("geometry")
    geom = _geometry_from(geo_scope)
    return geom


def _geometry_from(scope: _Scope) -> SensorGeometry:
    geom = SensorGeometry(
        surface_A_S=scope.get("surface_A_S", kind=float),
        thickness_d=scope.get("thickness_d", kind=float),
        diffusion_D=scope.get("diffusion_D", kind=float),
        R0=scope.get("R0", kind=float),
        hooge_A=scope.get("hooge_A", kind=float),
    )
    scope.finish()
    return geom


def _fluctuator_from(entry, path: str) -> Fluctuator:
    scope = _Scope(entry, path)
    try:
        fluct = Fluctuator(
            strength_c=scope.get("strength_c", kind=float),
            tau=scope.get("tau", kind=float),
            activation_energy=scope.get("activation_energy", 0.0, kind=float),
            tau0=scope.get("tau0", 0.0, kind=float),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    scope.finish()
    return fluct


def build_sensor_state(doc: dict) -> SensorState:
    sensor = _require_table(doc, "sensor")
    geom = _geometry_from(sensor.sub("geometry"))
    entries = sensor.get("fluctuators", kind=list)
    if not entries:
        raise ConfigError("sensor.fluctuators must list at least one fluctuator")
    bank = tuple(
        _fluctuator_from(e, f"sensor.fluctuators[{i}]") for i, e in enumerate(entries)
    )
    uv = None
    uv_scope = sensor.sub("uv", None)
    if uv_scope is not None:
        try:
            uv = UvConfig(
                intensity=uv_scope.get("intensity", kind=float),
                saturation_intensity=uv_scope.get("saturation_intensity", kind=float),
                wavelength_nm=uv_scope.get("wavelength_nm", 365.0, kind=float),
                penetration_fraction=uv_scope.get("penetration_fraction", 0.01, kind=float),
                plateau_corner_hz=uv_scope.get("plateau_corner_hz", 10.0, kind=float),
                modulation_depth=uv_scope.get("modulation_depth", 0.3, kind=float),
                plateau_strength_scale=uv_scope.get("plateau_strength_scale", 80.0, kind=float),
            )
        except ValueError as exc:
            raise ConfigError(f"sensor.uv: {exc}") from exc
        uv_scope.finish()
    try:
        state = SensorState(
            geometry=geom,
            bank=bank,
            mean_R=sensor.get("mean_resistance", kind=float),
            temperature=sensor.get("temperature", 300.0, kind=float),
            uv=uv,
        )
    except ValueError as exc:
        raise ConfigError(f"sensor: {exc}") from exc
    sensor.finish()
    return state


def _coeff_triples(raw, path):
    out = []
    for i, item in enumerate(raw):
        if not isinstance(item, list) or len(item) != 3:
            raise ConfigError(f"{path}[{i}] must be [f_low, f_high, coefficient]")
        out.append(tuple(item))
    return tuple(out)


def _coeff_pairs(raw, path):
    out = []
    for i, item in enumerate(raw):
        if not isinstance(item, list) or len(item) != 2:
            raise ConfigError(f"{path}[{i}] must be [bank_index, coefficient]")
        out.append(tuple(item))
    return tuple(out)


def build_species_db(doc: dict) -> dict:
    entries = doc.get("species")
    if not entries:
        raise ConfigError("missing required section [[species]]")
    db = {}
    for i, entry in enumerate(entries):
        scope = _Scope(entry, f"species[{i}]")
        name = scope.get("name", kind=str)
        try:
            sp = GasSpecies(
                name=name,
                band_coeffs=_coeff_triples(
                    scope.get("band_coeffs", []), f"species[{i}].band_coeffs"
                ),
                index_coeffs=_coeff_pairs(
                    scope.get("index_coeffs", []), f"species[{i}].index_coeffs"
                ),
                dr_coeff=scope.get("dr_coeff", 0.0, kind=float),
                saturation_c=scope.get("saturation_c", None),
            )
        except ValueError as exc:
            raise ConfigError(f"species[{i}]: {exc}") from exc
        scope.finish()
        if sp.name in db:
            raise ConfigError(f"species[{i}]: duplicate species name {sp.name!r}")
        db[sp.name] = sp
    return db


def build_gases(doc: dict, species_db: dict) -> dict:
    gases = doc.get("gases", {})
    if not isinstance(gases, dict):
        raise ConfigError("gases must be a table of name = concentration")
    out = {}
    for name, value in gases.items():
        if name not in species_db:
            raise ConfigError(f"gases.{name}: unknown species (not in [[species]])")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"gases.{name} must be a number")
        out[name] = float(value)
    return out


def build_capture(doc: dict) -> CaptureConfig:
    scope = _require_table(doc, "capture")
    try:
        cfg = CaptureConfig(
            t_w=scope.get("t_w", kind=float),
            t_m=scope.get("t_m", kind=float),
            fs=scope.get("fs", kind=float),
            overlap_fraction=scope.get("overlap_fraction", 0.5, kind=float),
            window=scope.get("window", "hann", kind=str),
        )
    except ValueError as exc:
        raise ConfigError(f"capture: {exc}") from exc
    scope.finish()
    return cfg


def build_protocol(doc: dict) -> SampleHoldProtocol | None:
    if "protocol" not in doc:
        return None
    scope = _Scope(doc["protocol"], "protocol")
    try:
        proto = SampleHoldProtocol(
            heat_temperature=scope.get("heat_temperature", kind=float),
            heat_duration=scope.get("heat_duration", kind=float),
            cold_temperature=scope.get("cold_temperature", kind=float),
            measure_duration=scope.get("measure_duration", kind=float),
        )
    except ValueError as exc:
        raise ConfigError(f"protocol: {exc}") from exc
    scope.finish()
    return proto


def _noise_source_from(scope: _Scope, value, component_db: dict, label: str) -> NoiseSourceSpec:
    """A noise spec from either a component-library name or inline values."""
    if value is None:
        return NoiseSourceSpec(label=label, white_level=0.0)
    if isinstance(value, str):
        if value not in component_db:
            raise ConfigError(
                f"{scope.path}: component {value!r} not found in the amplifier library"
            )
        return component_db[value]
    if isinstance(value, dict):
        sub = _Scope(value, f"{scope.path}.{label}")
        try:
            spec = NoiseSourceSpec(
                label=sub.get("label", label, kind=str),
                white_level=sub.get("white_level", 0.0, kind=float),
                corner_frequency=sub.get("corner_frequency", 0.0, kind=float),
                table=tuple(
                    (float(f), float(s)) for f, s in sub.get("table", [])
                ),
            )
        except ValueError as exc:
            raise ConfigError(f"{sub.path}: {exc}") from exc
        sub.finish()
        return spec
    raise ConfigError(f"{scope.path}.{label} must be a component name or a table")


def build_chain(doc: dict, component_db: dict):
    """The configured measurement chain, or None when absent."""
    if "chain" not in doc:
        return None
    scope = _Scope(doc["chain"], "chain")
    kind = scope.get("kind", kind=str)
    try:
        if kind == "vnm":
            chain = VnmChain(
                R_A=scope.get("R_A", kind=float),
                C_A=scope.get("C_A", kind=float),
                R_BIAS=scope.get("R_BIAS", kind=float),
                V_BIAS=scope.get("V_BIAS", 0.0, kind=float),
                lnva_evn=_noise_source_from(scope, scope.get("evn", None), component_db, "evn"),
                lnva_eicn=_noise_source_from(scope, scope.get("eicn", None), component_db, "eicn"),
                gain_stage1_db=scope.get("gain_stage1_db", 0.0, kind=float),
                temperature=scope.get("temperature", 300.0, kind=float),
            )
        elif kind == "tia":
            chain = TiaChain(
                R_R=scope.get("R_R", kind=float),
                V_B=scope.get("V_B", 0.0, kind=float),
                supply_limit=scope.get("supply_limit", 15.0, kind=float),
                oa_evn=_noise_source_from(scope, scope.get("evn", None), component_db, "evn"),
                bias_evn=_noise_source_from(scope, scope.get("bias_evn", None), component_db, "bias_evn"),
                topology=scope.get("topology", "bias_through_feedback", kind=str),
                C_B=scope.get("C_B", 0.0, kind=float),
                R_B=scope.get("R_B", 1.0, kind=float),
                temperature=scope.get("temperature", 300.0, kind=float),
            )
        else:
            raise ConfigError(f"chain.kind must be 'vnm' or 'tia', got {kind!r}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"chain: {exc}") from exc
    scope.finish()
    return chain
