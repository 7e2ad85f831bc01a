"""Scenario description: physical parameters, geometry, direct link, solver knobs.

Scenario files are TOML with four flat namespaces::

    [system]
    m_total = 100
    p_max_dbm = 40.0

    [geometry]
    controller = [0.0, 0.0]
    device = [150.0, 150.0]

    [link]
    rayleigh_seed = 3

    [solver]
    outer_tol = 1e-3

Keys ending in ``_db``/``_dbm`` are converted to linear units on load.  Every
key not given falls back to the simulation defaults below.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import InvalidInput, ScenarioError


def db_to_linear(x_db: float) -> float:
    x_db = float(x_db)
    if not math.isfinite(x_db):
        raise InvalidInput(f"dB value must be finite, got {x_db}")
    return 10.0 ** (x_db / 10.0)


def linear_to_db(x: float) -> float:
    if not x > 0:
        raise InvalidInput(f"linear value must be positive, got {x}")
    return 10.0 * math.log10(x)


def dbm_to_watts(x_dbm: float) -> float:
    return db_to_linear(x_dbm) / 1000.0


def noise_power(psd_dbm_per_hz: float, bandwidth: float) -> float:
    """Noise power in watts for a PSD in dBm/Hz over ``bandwidth`` Hz."""
    if not bandwidth > 0:
        raise InvalidInput(f"bandwidth must be positive, got {bandwidth}")
    return dbm_to_watts(psd_dbm_per_hz) * bandwidth


@dataclass(frozen=True)
class SystemParams:
    """Physical constants and limits.

    ``e_tot`` is in power-symbol units: the energy constraint reads
    ``m'(p1 + p2) + pu m3 <= e_tot`` with powers in watts and blocklengths in
    symbols.
    """

    p_max: float = 10.0
    m_total: int = 100
    payload_bits: int = 100
    e_tot: float = 10.0
    noise_bs: float = noise_power(-174.0, 1e6)
    noise_dev: float = noise_power(-174.0, 1e6)
    beta0_sq: float = 1e-5
    uav_height: float = 80.0
    x_min: float = 30.0
    x_max: float = 120.0
    y_min: float = 30.0
    y_max: float = 120.0
    eps_uav_max: float = 1e-8
    bandwidth: float = 1e6

    def __post_init__(self):
        for name in ("p_max", "beta0_sq", "noise_bs", "noise_dev", "bandwidth", "uav_height"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"system.{name}", f"must be > 0, got {getattr(self, name)}")
        if not self.e_tot >= 0:
            raise ScenarioError("system.e_tot", f"must be >= 0, got {self.e_tot}")
        if not 0.0 < self.eps_uav_max < 0.5:
            raise ScenarioError("system.eps_uav_max", f"must lie in (0, 0.5), got {self.eps_uav_max}")
        if not self.x_min <= self.x_max:
            raise ScenarioError("system.x_min", f"x_min={self.x_min} exceeds x_max={self.x_max}")
        if not self.y_min <= self.y_max:
            raise ScenarioError("system.y_min", f"y_min={self.y_min} exceeds y_max={self.y_max}")
        if int(self.m_total) != self.m_total or self.m_total < 2:
            raise ScenarioError("system.m_total", f"must be an integer >= 2, got {self.m_total}")
        if int(self.payload_bits) != self.payload_bits or self.payload_bits < 1:
            raise ScenarioError("system.payload_bits", f"must be an integer >= 1, got {self.payload_bits}")


@dataclass(frozen=True)
class Geometry:
    controller: np.ndarray
    device: np.ndarray
    uav: np.ndarray

    def __post_init__(self):
        for name in ("controller", "device", "uav"):
            v = np.array(getattr(self, name), dtype=float)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ScenarioError(f"geometry.{name}", f"must be a finite 3-vector, got {v}")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if self.controller[2] != 0.0 or self.device[2] != 0.0:
            raise ScenarioError("geometry", "controller and device must lie on the ground (z = 0)")
        if not self.uav[2] > 0:
            raise ScenarioError("geometry.uav", "UAV altitude must be positive")
        if np.array_equal(self.controller, self.device):
            raise ScenarioError("geometry.device", "controller and device coincide")

    @classmethod
    def planar(cls, controller, device, uav_xy, height):
        return cls(
            np.array([controller[0], controller[1], 0.0]),
            np.array([device[0], device[1], 0.0]),
            np.array([uav_xy[0], uav_xy[1], height]),
        )

    def with_uav(self, qx, qy):
        return Geometry(self.controller, self.device, np.array([qx, qy, self.uav[2]]))

    def __eq__(self, other):
        if not isinstance(other, Geometry):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ("controller", "device", "uav"))

    __hash__ = None


class LinkSource(str, Enum):
    EXPLICIT = "explicit"
    RAYLEIGH = "rayleigh"


@dataclass(frozen=True)
class DirectLink:
    gain_sq: float
    source: LinkSource = LinkSource.EXPLICIT
    seed: int | None = None

    def __post_init__(self):
        if not self.gain_sq > 0:
            raise ScenarioError("link.gain_bd_sq", f"must be > 0, got {self.gain_sq}")


def mean_direct_gain(params: SystemParams, geom: Geometry) -> float:
    return params.beta0_sq / float(np.sum((geom.controller - geom.device) ** 2))


def rayleigh_direct_link(params: SystemParams, geom: Geometry, seed: int) -> DirectLink:
    """Exponential |h_bd|^2 draw with free-space mean, from a seeded generator."""
    rng = np.random.default_rng(seed)
    g = float(rng.exponential(mean_direct_gain(params, geom)))
    return DirectLink(g, LinkSource.RAYLEIGH, int(seed))


@dataclass(frozen=True)
class SolverSettings:
    outer_tol: float = 1e-3
    outer_max_iter: int = 30
    sca_tol: float = 1e-6
    sca_max_iter: int = 30
    tol_kkt: float = 1e-8
    tol_feas: float = 1e-9
    inner_max_iter: int = 200
    # stationarity target for the SCA subproblems (surrogates need no tighter solve)
    tol_kkt_sca: float = 1e-6

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ScenarioError(f"solver.{f.name}", f"must be > 0, got {getattr(self, f.name)}")


@dataclass(frozen=True)
class Scenario:
    params: SystemParams = field(default_factory=SystemParams)
    geometry: Geometry = None
    link: DirectLink = None
    solver: SolverSettings = field(default_factory=SolverSettings)

    def replace(self, **kw):
        return replace(self, **kw)


DEFAULT_CONTROLLER = (0.0, 0.0)
DEFAULT_DEVICE = (150.0, 150.0)

# key -> (target, converter); target names a SystemParams field
_SYSTEM_KEYS = {
    "p_max": ("p_max", float),
    "p_max_dbm": ("p_max", dbm_to_watts),
    "m_total": ("m_total", int),
    "payload_bits": ("payload_bits", int),
    "e_tot": ("e_tot", float),
    "noise_bs": ("noise_bs", float),
    "noise_dev": ("noise_dev", float),
    "beta0_sq": ("beta0_sq", float),
    "beta0_sq_db": ("beta0_sq", db_to_linear),
    "uav_height": ("uav_height", float),
    "x_min": ("x_min", float),
    "x_max": ("x_max", float),
    "y_min": ("y_min", float),
    "y_max": ("y_max", float),
    "eps_uav_max": ("eps_uav_max", float),
    "bandwidth": ("bandwidth", float),
}
_SYSTEM_PSD_KEYS = ("noise_psd_dbm_per_hz", "noise_dev_psd_dbm_per_hz")
_GEOMETRY_KEYS = ("controller", "device", "uav")
_LINK_KEYS = ("gain_bd_sq", "gain_bd_sq_db", "rayleigh_seed")
_SOLVER_KEYS = {f.name: f.type for f in fields(SolverSettings)}


def _number(key, value, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(key, f"expected a number, got {value!r}")
    if kind is int:
        if float(value) != int(value):
            raise ScenarioError(key, f"expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ScenarioError(key, f"must be finite, got {value!r}")
    return float(value)


def _position(key, value):
    if not isinstance(value, (list, tuple)) or len(value) not in (2, 3):
        raise ScenarioError(key, f"expected a 2- or 3-element array, got {value!r}")
    return [_number(key, v) for v in value]


def _flatten(doc: Mapping[str, Any], prefix="") -> dict[str, Any]:
    out = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_override(text: str) -> tuple[str, Any]:
    """Parse one ``key=value`` override; the value uses TOML literal syntax."""
    if "=" not in text:
        raise ScenarioError(text, "override must look like key=value")
    key, raw = (s.strip() for s in text.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def load_scenario(source: str | Path | Mapping | None = None, overrides=()) -> Scenario:
    """Build a validated :class:`Scenario`.

    ``source`` may be TOML text, a path to a TOML file, an already-parsed
    mapping, or None for the defaults.  ``overrides`` is an iterable of
    ``key=value`` strings or ``(key, value)`` pairs applied last.
    """
    if source is None:
        doc = {}
    elif isinstance(source, Mapping):
        doc = dict(source)
    elif isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and source.endswith(".toml")):
        try:
            doc = tomllib.loads(Path(source).read_text())
        except OSError as exc:
            raise ScenarioError("<file>", f"cannot read {source}: {exc.strerror or exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError("<file>", f"{source} is not valid TOML: {exc}") from exc
    else:
        try:
            doc = tomllib.loads(source)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError("<document>", f"not valid TOML: {exc}") from exc
    flat = _flatten(doc)
    for ov in overrides:
        k, v = parse_override(ov) if isinstance(ov, str) else ov
        flat[k] = v
    return _build(flat)


def _build(flat: dict[str, Any]) -> Scenario:
    sys_kw: dict[str, Any] = {}
    seen_target: dict[str, str] = {}
    psd = {}
    geo = {}
    link = {}
    solver = {}
    for key, value in sorted(flat.items()):
        ns, _, name = key.partition(".")
        if ns == "system" and name in _SYSTEM_KEYS:
            target, conv = _SYSTEM_KEYS[name]
            if target in seen_target:
                raise ScenarioError(key, f"conflicts with system.{seen_target[target]}")
            seen_target[target] = name
            num = _number(key, value, int if conv is int else float)
            try:
                sys_kw[target] = conv(num)
            except InvalidInput as exc:
                raise ScenarioError(key, str(exc)) from exc
        elif ns == "system" and name in _SYSTEM_PSD_KEYS:
            psd[name] = _number(key, value)
        elif ns == "geometry" and name in _GEOMETRY_KEYS:
            geo[name] = _position(key, value)
        elif ns == "link" and name in _LINK_KEYS:
            link[name] = _number(key, value, int if name == "rayleigh_seed" else float)
        elif ns == "solver" and name in _SOLVER_KEYS:
            kind = int if _SOLVER_KEYS[name] in (int, "int") else float
            solver[name] = _number(key, value, kind)
        else:
            raise ScenarioError(key, "unknown key")

    bw = sys_kw.get("bandwidth", SystemParams.bandwidth)
    if "noise_psd_dbm_per_hz" in psd:
        if "noise_bs" in sys_kw:
            raise ScenarioError("system.noise_psd_dbm_per_hz", "conflicts with system.noise_bs")
        sys_kw["noise_bs"] = noise_power(psd["noise_psd_dbm_per_hz"], bw)
        if "noise_dev_psd_dbm_per_hz" not in psd and "noise_dev" not in sys_kw:
            sys_kw["noise_dev"] = sys_kw["noise_bs"]
    if "noise_dev_psd_dbm_per_hz" in psd:
        if "noise_dev" in sys_kw:
            raise ScenarioError("system.noise_dev_psd_dbm_per_hz", "conflicts with system.noise_dev")
        sys_kw["noise_dev"] = noise_power(psd["noise_dev_psd_dbm_per_hz"], bw)
    if "bandwidth" in sys_kw and not psd:
        for name in ("noise_bs", "noise_dev"):
            sys_kw.setdefault(name, noise_power(-174.0, bw))
    params = SystemParams(**sys_kw)

    h = params.uav_height
    ctrl = geo.get("controller", list(DEFAULT_CONTROLLER))
    dev = geo.get("device", list(DEFAULT_DEVICE))
    for name, v in (("controller", ctrl), ("device", dev)):
        if len(v) == 3 and v[2] != 0.0:
            raise ScenarioError(f"geometry.{name}", "z component must be 0")
    if "uav" in geo:
        uav = geo["uav"]
        if len(uav) == 3 and uav[2] != h:
            raise ScenarioError("geometry.uav", f"z component must equal system.uav_height={h}")
    else:
        uav = default_uav_xy(params, ctrl, dev)
    geom = Geometry.planar(ctrl, dev, uav, h)

    if "gain_bd_sq" in link and "gain_bd_sq_db" in link:
        raise ScenarioError("link.gain_bd_sq_db", "conflicts with link.gain_bd_sq")
    explicit = link.get("gain_bd_sq")
    if "gain_bd_sq_db" in link:
        explicit = db_to_linear(link["gain_bd_sq_db"])
    if explicit is not None and "rayleigh_seed" in link:
        raise ScenarioError("link.rayleigh_seed", "conflicts with an explicit direct-link gain")
    if "rayleigh_seed" in link:
        direct = rayleigh_direct_link(params, geom, link["rayleigh_seed"])
    elif explicit is not None:
        direct = DirectLink(explicit)
    else:
        direct = DirectLink(mean_direct_gain(params, geom))

    return Scenario(params, geom, direct, SolverSettings(**solver))


def default_uav_xy(params: SystemParams, controller, device):
    """Box-clamped midpoint of controller and device."""
    mx = 0.5 * (controller[0] + device[0])
    my = 0.5 * (controller[1] + device[1])
    return [min(max(mx, params.x_min), params.x_max), min(max(my, params.y_min), params.y_max)]


def default_scenario() -> Scenario:
    return load_scenario(None)


def scenario_to_dict(sc: Scenario) -> dict[str, Any]:
    """Flat ``namespace.key -> value`` record of a scenario in linear units."""
    out = {f"system.{f.name}": getattr(sc.params, f.name) for f in fields(SystemParams)}
    out["geometry.controller"] = sc.geometry.controller[:2].tolist()
    out["geometry.device"] = sc.geometry.device[:2].tolist()
    out["geometry.uav"] = sc.geometry.uav[:2].tolist()
    out["link.gain_bd_sq"] = sc.link.gain_sq
    out["link.source"] = sc.link.source.value
    if sc.link.seed is not None:
        out["link.rayleigh_seed"] = sc.link.seed
    out.update({f"solver.{f.name}": getattr(sc.solver, f.name) for f in fields(SolverSettings)})
    return out
