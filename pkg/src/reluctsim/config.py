"""
JSON configuration: one document with a section per parameter group, SI units throughout.

Permeabilities may be given relative to mu0 with a ``_rel_mu0`` suffix (e.g. ``"mu1_rel_mu0": 168.8``); they are
expanded to H/m on load and always written back in absolute form.
"""

from __future__ import annotations

import copy
import dataclasses
import functools
import hashlib
import json
from pathlib import Path
from typing import Any

from .hybrid import ActuatorParams, MechParams, SimConfig
from .hysteresis import MU0, GpmParams, PreisachDistribution, RevParams
from .magnetics import (
    CoilParams,
    CoreGeometry,
    EddyParams,
    InputError,
    MagneticParams,
    ReluctanceTable,
    linear_fixture,
)
from . import fixtures


class ConfigError(InputError):
    """Invalid configuration. The message names the offending key."""


DEFAULT: dict[str, Any] = {
    "coil": {"R": fixtures.VALVE_COIL.R, "N": fixtures.VALVE_COIL.N},
    "core": {"l_iron": fixtures.VALVE_CORE.l_iron, "A_iron": fixtures.VALVE_CORE.A_iron},
    "eddy": {"k_ec": fixtures.VALVE_EDDY.k_ec},
    "mech": dataclasses.asdict(fixtures.VALVE_MECH),
    "gpm": {
        "mu1_rel_mu0": 168.8,
        "mu2_rel_mu0": 64.13,
        "H1": 1262.0,
        "H2": 8821.0,
        "m_hc": 227.9,
        "s_hc": 154.9,
        "s_hm": 138.0,
        "b_irr_sat": 0.8103,
        "alpha0": 1e4,
        "beta0": -1e4,
    },
    "reluctance": {"fixture": {"R0": fixtures.FIXTURE_R0, "A_gap": fixtures.FIXTURE_AREA, "n": 46}},
    "simulation": {"dt": 1e-6, "t_end": 0.1, "t_tol": 1e-9, "direction_deadband": 1e-10},
    "demag": {"n": 100, "range": [-1e4, 1e4]},
}

SECTIONS = tuple(DEFAULT)

_KEYS = {
    "coil": {"R", "N"},
    "core": {"l_iron", "A_iron"},
    "eddy": {"k_ec"},
    "mech": {"m", "k_s", "z_s", "c", "z_min", "z_max"},
    "gpm": {"mu1", "mu2", "H1", "H2", "m_hc", "s_hc", "s_hm", "b_irr_sat", "alpha0", "beta0"},
    "reluctance": {"table", "fixture"},
    "simulation": {"dt", "t_end", "t_tol", "direction_deadband"},
    "demag": {"n", "range"},
}


def _number(section: str, key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
    return float(value)


def _normalize(raw: dict[str, Any], base_dir: Path) -> dict[str, Any]:
    """Expands relative permeabilities and relative paths, and rejects unknown or missing keys."""
    if not isinstance(raw, dict):
        raise ConfigError("the configuration must be a JSON object")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    out: dict[str, Any] = {}
    for name in SECTIONS:
        sec = raw.get(name, DEFAULT[name])
        if not isinstance(sec, dict):
            raise ConfigError(f"{name}: expected an object")
        sec = dict(sec)
        for key in list(sec):
            if key.endswith("_rel_mu0"):
                base = key[: -len("_rel_mu0")]
                if base in sec:
                    raise ConfigError(f"{name}: both {base} and {key} given")
                sec[base] = _number(name, key, sec.pop(key)) * MU0
        unknown = set(sec) - _KEYS[name]
        if unknown:
            raise ConfigError(f"{name}: unknown key(s): {', '.join(sorted(unknown))}")
        if name == "reluctance":
            if len(sec) != 1:
                raise ConfigError("reluctance: give exactly one of 'table' or 'fixture'")
            if "table" in sec:
                if not isinstance(sec["table"], str):
                    raise ConfigError("reluctance.table: expected a path")
                sec["table"] = str((base_dir / sec["table"]).resolve())
            else:
                fx = sec["fixture"]
                if not isinstance(fx, dict) or set(fx) - {"R0", "A_gap", "n"} or not {"R0", "A_gap"} <= set(fx):
                    raise ConfigError("reluctance.fixture: expected {R0, A_gap[, n]}")
                sec["fixture"] = {k: _number("reluctance.fixture", k, v) for k, v in fx.items()}
        elif name == "demag":
            missing = _KEYS[name] - set(sec)
            if missing:
                raise ConfigError(f"demag: missing key(s): {', '.join(sorted(missing))}")
            rng = sec["range"]
            if not (isinstance(rng, list) and len(rng) == 2):
                raise ConfigError("demag.range: expected [low, high]")
            sec["range"] = [_number("demag", "range", x) for x in rng]
        else:
            required = _KEYS[name] - ({"t_tol", "direction_deadband"} if name == "simulation" else set())
            missing = required - set(sec)
            if missing:
                raise ConfigError(f"{name}: missing key(s): {', '.join(sorted(missing))}")
            sec = {k: _number(name, k, v) for k, v in sec.items()}
        out[name] = sec
    if out["coil"]["N"] != int(out["coil"]["N"]):
        raise ConfigError("coil.N: expected an integer")
    out["coil"]["N"] = int(out["coil"]["N"])
    if isinstance(out["demag"]["n"], bool) or not isinstance(out["demag"]["n"], int):
        raise ConfigError("demag.n: expected an integer")
    return out


def _build(section: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except InputError:
        raise
    except (ValueError, TypeError) as ex:
        raise ConfigError(f"{section}: {ex}") from ex


@dataclasses.dataclass(frozen=True, eq=False)
class Config:
    data: dict[str, Any]
    """Normalized document: absolute permeabilities and absolute paths"""

    @staticmethod
    def from_dict(raw: dict[str, Any], base_dir: str | Path = ".") -> Config:
        cfg = Config(_normalize(copy.deepcopy(raw), Path(base_dir)))
        cfg.actuator  # validates every section
        cfg.sim_config
        cfg.demag
        return cfg

    @staticmethod
    def load(path: str | Path) -> Config:
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as ex:
            raise ConfigError(f"{path}: {ex}") from ex
        except json.JSONDecodeError as ex:
            raise ConfigError(f"{path}:{ex.lineno}: invalid JSON: {ex.msg}") from ex
        return Config.from_dict(raw, path.parent)

    @staticmethod
    def default() -> Config:
        return Config.from_dict(DEFAULT)

    def to_dict(self) -> dict[str, Any]:
        return copy.deepcopy(self.data)

    def dumps(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.data, sort_keys=True).encode()).hexdigest()

    def updated(self, section: str, values: dict[str, float]) -> Config:
        d = self.to_dict()
        d[section].update(values)
        return Config.from_dict(d)

    @functools.cached_property
    def gpm(self) -> GpmParams:
        g = self.data["gpm"]
        rev = _build("gpm", RevParams, g["mu1"], g["mu2"], g["H1"], g["H2"])
        dist = _build("gpm", PreisachDistribution.from_params, g["m_hc"], g["s_hc"], g["s_hm"])
        return _build("gpm", GpmParams, rev, dist, g["b_irr_sat"], g["alpha0"], g["beta0"])

    @functools.cached_property
    def reluctance(self) -> ReluctanceTable:
        r = self.data["reluctance"]
        if "table" in r:
            return ReluctanceTable.load_csv(r["table"])
        fx = r["fixture"]
        n = int(fx.get("n", 46))
        return _build("reluctance.fixture", linear_fixture, fx["R0"], fx["A_gap"], self.data["mech"]["z_max"], n)

    @functools.cached_property
    def magnetic(self) -> MagneticParams:
        d = self.data
        coil = _build("coil", CoilParams, **d["coil"])
        core = _build("core", CoreGeometry, **d["core"])
        eddy = _build("eddy", EddyParams, **d["eddy"])
        return MagneticParams(coil, core, eddy, self.gpm, self.reluctance)

    @functools.cached_property
    def mech(self) -> MechParams:
        return _build("mech", MechParams, **self.data["mech"])

    @functools.cached_property
    def actuator(self) -> ActuatorParams:
        return _build("reluctance", ActuatorParams, self.magnetic, self.mech)

    @functools.cached_property
    def sim_config(self) -> SimConfig:
        s = self.data["simulation"]
        return _build("simulation", SimConfig, **s)

    @property
    def demag(self) -> tuple[int, tuple[float, float]]:
        d = self.data["demag"]
        n, (lo, hi) = d["n"], d["range"]
        if n < 1 or not lo < hi:
            raise ConfigError("demag: n must be at least 1 and the range must be increasing")
        return n, (lo, hi)
