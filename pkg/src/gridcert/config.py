"""JSON system configuration: schema validation and loading.

A config document looks like::

    {
      "omega0": 376.991,                  # optional, rad/s
      "buses": [
        {"id": 1,
         "device": {"kind": "two_axis", "M": 0.2, "D": 1.0, "tau_d": 5.0,
                    "tau_q": 1.0, "X_d": 0.10, "X_q": 0.069,
                    "X_d_prime": 0.05, "X_q_prime": 0.03},
         "spec": {"type": "pv", "P": 1.0, "V": 1.0}},
        ...
      ],
      "lines": [{"from": 1, "to": 2, "b": 40.0}, ...]
    }

Device kinds: two_axis, vsg, fdc, load. Bus spec types: slack (theta, V),
pv (P, V), pq (P, Q); exactly one slack. All values per-unit, angles in
radians.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .devices import ConstantPowerLoad, device_from_dict
from .network import PQ, PV, Line, Network, Slack
from .system import PowerSystem

__all__ = ["ConfigError", "LoadedConfig", "parse_config", "load_config", "fixture_path",
           "apply_load_mode"]


class ConfigError(ValueError):
    """Configuration document violates the schema."""


@dataclass
class LoadedConfig:
    """Parsed configuration: the physical system plus power-flow bus specs."""

    system: PowerSystem
    bus_specs: list
    bus_ids: list


def _get(doc, key, where, types=None):
    if key not in doc:
        raise ConfigError(f"{where}: missing required key '{key}'")
    value = doc[key]
    if types is not None and not isinstance(value, types):
        raise ConfigError(f"{where}: key '{key}' has wrong type {type(value).__name__}")
    return value


def _parse_spec(doc, where):
    kind = _get(doc, "type", where, str)
    try:
        if kind == "slack":
            return Slack(theta=float(doc.get("theta", 0.0)), V=float(doc.get("V", 1.0)))
        if kind == "pv":
            return PV(P=float(_get(doc, "P", where)), V=float(_get(doc, "V", where)))
        if kind == "pq":
            return PQ(P=float(_get(doc, "P", where)), Q=float(_get(doc, "Q", where)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: unknown bus spec type {kind!r}")


def parse_config(doc):
    """Validate a config mapping and build the PowerSystem and bus specs."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    buses = _get(doc, "buses", "config", list)
    if not buses:
        raise ConfigError("config: at least one bus required")
    lines_doc = doc.get("lines", [])
    omega0 = float(doc.get("omega0", 376.99111843077515))
    if omega0 <= 0:
        raise ConfigError("config: omega0 must be positive")

    ids = []
    devices = []
    specs = []
    for k, bus in enumerate(buses):
        where = f"buses[{k}]"
        if not isinstance(bus, dict):
            raise ConfigError(f"{where}: must be an object")
        bus_id = _get(bus, "id", where, int)
        if bus_id in ids:
            raise ConfigError(f"{where}: duplicate bus id {bus_id}")
        ids.append(bus_id)
        try:
            devices.append(device_from_dict(_get(bus, "device", where, dict)))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        specs.append(_parse_spec(_get(bus, "spec", where, dict), f"{where}.spec"))

    n_slack = sum(isinstance(s, Slack) for s in specs)
    if n_slack != 1:
        raise ConfigError(f"config: exactly one slack bus required, got {n_slack}")

    index = {bus_id: i for i, bus_id in enumerate(ids)}
    lines = []
    for k, ln in enumerate(lines_doc):
        where = f"lines[{k}]"
        if not isinstance(ln, dict):
            raise ConfigError(f"{where}: must be an object")
        fr = _get(ln, "from", where, int)
        to = _get(ln, "to", where, int)
        for end in (fr, to):
            if end not in index:
                raise ConfigError(f"{where}: unknown bus id {end}")
        try:
            lines.append(Line(from_bus=index[fr], to_bus=index[to], b=float(_get(ln, "b", where))))
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc

    try:
        net = Network.from_lines(len(ids), lines)
    except ValueError as exc:
        raise ConfigError(f"config: {exc}") from exc
    return LoadedConfig(system=PowerSystem(net, devices, omega0), bus_specs=specs, bus_ids=ids)


def load_config(path):
    """Read and parse a JSON config file."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)


def fixture_path(name):
    """Filesystem path of a bundled fixture config (e.g. 'three_bus.json')."""
    ref = resources.files("gridcert") / "fixtures" / name
    with resources.as_file(ref) as p:
        return Path(p)


def find_load_bus(cfg: LoadedConfig):
    """Index of the unique consumption bus (PQ spec with negative P)."""
    candidates = [i for i, s in enumerate(cfg.bus_specs) if isinstance(s, PQ) and s.P < 0]
    if len(candidates) != 1:
        raise ConfigError(
            f"load-mode switching needs exactly one PQ bus with P < 0, found {len(candidates)}"
        )
    return candidates[0]


def apply_load_mode(cfg: LoadedConfig, mode):
    """Return a config with the consumption bus device set to the requested mode.

    'forming' keeps the configured grid-forming device (vsg/fdc) at the load
    bus; 'following' replaces it with a constant-power load drawing the bus
    spec's (P, Q).
    """
    if mode is None:
        return cfg
    if mode not in ("forming", "following"):
        raise ConfigError(f"unknown load mode {mode!r}; expected 'forming' or 'following'")
    i = find_load_bus(cfg)
    devices = list(cfg.system.devices)
    spec = cfg.bus_specs[i]
    if mode == "following":
        devices[i] = ConstantPowerLoad(P_ref=spec.P, Q_ref=spec.Q)
    else:
        if isinstance(devices[i], ConstantPowerLoad):
            raise ConfigError(
                "grid-forming mode needs an inverter device (vsg/fdc) configured at the load bus"
            )
    system = PowerSystem(cfg.system.net, devices, cfg.system.omega0)
    return LoadedConfig(system=system, bus_specs=list(cfg.bus_specs), bus_ids=list(cfg.bus_ids))
