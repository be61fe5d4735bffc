"""Configuration ingestion: one structured file is the source of truth per run.

Configs are TOML with one section per module; every key is validated
against the parameter dataclasses and unknown keys are rejected so a typo in
a physics parameter fails loudly.  ``load_config`` applies defaults,
re-validates every module's invariants, and the resolved configuration can
be echoed back out as TOML that reloads to an identical run.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .analysis import SnrModelParams
from .conversion import FilterParams, QfcParams, SagnacGeometry, conversion_phase_difference
from .detection import DetectorParams
from .fiber import CompensationSchedule, FiberParams
from .node import NodeParams
from .sequencer import RunParams, SequenceParams, WavepacketParams

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for parse or validation failures; message names the field."""


@dataclass
class LinkConfig:
    seed: int = 20250810
    node: NodeParams = field(default_factory=NodeParams)
    qfc: QfcParams = field(default_factory=QfcParams)
    sagnac: SagnacGeometry = field(default_factory=SagnacGeometry)
    filter: FilterParams = field(default_factory=FilterParams)
    fiber: FiberParams = field(default_factory=FiberParams)
    compensation: CompensationSchedule = field(default_factory=CompensationSchedule)
    detectors: dict = field(
        default_factory=lambda: {
            "snspd": DetectorParams(kind="snspd", efficiency=0.88, dark_cps=30.0),
            "apd": DetectorParams(kind="apd", efficiency=0.65, dark_cps=50.0),
        }
    )
    sequence: SequenceParams = field(default_factory=SequenceParams)
    wavepacket: WavepacketParams = field(default_factory=WavepacketParams)
    run: RunParams = field(default_factory=RunParams)
    snr_model: SnrModelParams = field(default_factory=SnrModelParams)

    @property
    def qfc_phase_difference(self) -> float:
        """Loop phase between the converted arms at the configured geometry."""
        return conversion_phase_difference(self.sagnac)

    def validate(self) -> None:
        sections = {
            "node": self.node,
            "qfc": self.qfc,
            "filter": self.filter,
            "fiber": self.fiber,
            "compensation": self.compensation,
            "sequence": self.sequence,
            "wavepacket": self.wavepacket,
            "run": self.run,
            "snr_model": self.snr_model,
        }
        for name, obj in sections.items():
            _validate_section(name, obj)
        for det_name, det in self.detectors.items():
            _validate_section(f"detectors.{det_name}", det)
        try:
            self.sagnac.validate()
        except ValueError as exc:
            raise ConfigError(f"sagnac: {exc}") from exc
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed {self.seed} must be a non-negative integer")
        for name in (self.run.herald_detector, self.run.readout_detector):
            if name not in self.detectors:
                raise ConfigError(f"run references unknown detector {name!r}")


def _validate_section(name: str, obj) -> None:
    try:
        obj.validate()
    except ValueError as exc:
        msg = str(exc)
        first = msg.split(" ", 1)[0]
        if first in {f.name for f in dataclasses.fields(obj)}:
            rest = msg.split(" ", 1)[1] if " " in msg else ""
            raise ConfigError(f"{name}.{first}: {rest}") from exc
        raise ConfigError(f"{name}: {msg}") from exc


_SECTION_TYPES = {
    "node": NodeParams,
    "qfc": QfcParams,
    "sagnac": SagnacGeometry,
    "filter": FilterParams,
    "fiber": FiberParams,
    "compensation": CompensationSchedule,
    "sequence": SequenceParams,
    "wavepacket": WavepacketParams,
    "run": RunParams,
    "snr_model": SnrModelParams,
}


def _coerce(section: str, key: str, value, target_type):
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
        return value
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key}: expected a boolean, got {value!r}")
        return value
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{section}.{key}: expected a string, got {value!r}")
        return value
    if target_type is list:
        if not isinstance(value, list):
            raise ConfigError(f"{section}.{key}: expected a list, got {value!r}")
        return list(value)
    return value


_FIELD_TYPE_NAMES = {"float": float, "int": int, "bool": bool, "str": str, "list": list}


def _field_type(f: dataclasses.Field):
    # Annotations are strings under `from __future__ import annotations`.
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", None)
    if t in _FIELD_TYPE_NAMES:
        return _FIELD_TYPE_NAMES[t]
    if t == "float | None":
        return float
    return None


def _build_section(section: str, cls, raw: dict, preset=None):
    obj = preset if preset is not None else cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
        target = _field_type(known[key])
        setattr(obj, key, _coerce(section, key, value, target))
    return obj


def load_config(path) -> LinkConfig:
    """Parse, validate, and apply defaults; raises ConfigError on any problem."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not text.strip():
        raise ConfigError(f"{path}: empty config file")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc

    cfg = LinkConfig()
    for section, value in raw.items():
        if section == "seed":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"seed: expected an integer, got {value!r}")
            cfg.seed = value
            continue
        if section == "detectors":
            if not isinstance(value, dict):
                raise ConfigError("detectors must contain per-kind tables")
            for det_name, det_raw in value.items():
                if det_name not in cfg.detectors:
                    raise ConfigError(f"unknown key detectors.{det_name}")
                det = _build_section(f"detectors.{det_name}", DetectorParams, det_raw,
                                     preset=cfg.detectors[det_name])
                det.kind = det_name
                cfg.detectors[det_name] = det
            continue
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown key {section}")
        if not isinstance(value, dict):
            raise ConfigError(f"{section} must be a table")
        built = _build_section(section, _SECTION_TYPES[section], value)
        setattr(cfg, section, built)
    if "sagnac" in raw:
        # Re-derive the pump wavevector unless the file pinned it.
        if "k_pump" not in raw["sagnac"]:
            cfg.sagnac.k_pump = cfg.sagnac.k_signal - cfg.sagnac.k_converted
    cfg.validate()
    return cfg


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        text = repr(v)
        return text if ("." in text or "e" in text or "E" in text) else text + ".0"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise TypeError(f"cannot format {v!r} as TOML")


def resolved_toml(cfg: LinkConfig) -> str:
    """Canonical TOML echo of the fully resolved configuration."""
    lines = [f"seed = {cfg.seed}", ""]
    for section, cls in _SECTION_TYPES.items():
        obj = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in dataclasses.fields(cls):
            value = getattr(obj, f.name)
            lines.append(f"{f.name} = {_format_value(value)}")
        lines.append("")
    for det_name in sorted(cfg.detectors):
        det = cfg.detectors[det_name]
        lines.append(f"[detectors.{det_name}]")
        for f in dataclasses.fields(DetectorParams):
            if f.name == "kind":
                continue
            lines.append(f"{f.name} = {_format_value(getattr(det, f.name))}")
        lines.append("")
    return "\n".join(lines)


def write_resolved(cfg: LinkConfig, path) -> None:
    Path(path).write_text(resolved_toml(cfg))
