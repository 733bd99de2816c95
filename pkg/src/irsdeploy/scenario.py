"""Cell geometry: BS, users and IRSs, plus the scenario file format.

Scenario files are YAML documents with the sections ``bs``, ``radio``,
``users``, ``irs`` and the optional ``links`` and ``optimizer``.  Distances
are in meters, powers in dBm and gains in dB.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import NamedTuple, Sequence

import numpy as np
import yaml


class ScenarioError(ValueError):
    """Raised when a scenario file cannot be parsed or violates an invariant."""


class Position(NamedTuple):
    x: float
    y: float
    z: float = 0.0


class Side(str, enum.Enum):
    BS = "bs"
    USER = "user"


@dataclass(frozen=True)
class IrsSpec:
    id: str
    position: Position
    normal: tuple[float, float, float]
    rows: int
    cols: int
    side: Side

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class RadioConfig:
    tx_power_dbm: float = 5.0
    noise_power_dbm: float = -75.0
    ref_path_gain_db: float = -30.0
    element_spacing_wavelengths: float = 0.5
    # BS/user <-> IRS links shorter than this are "nearby" (pure LoS).
    near_threshold_m: float = 15.0


@dataclass(frozen=True)
class LinkToggles:
    """Which propagation path families are present in the cell."""

    direct: bool = True
    single_reflection: bool = True
    double_reflection: bool = True


@dataclass(frozen=True)
class OptimizerOptions:
    tol: float = 1e-6
    max_iters: int = 100
    # Phase pattern of elements not serving any user: "zero" or "random".
    idle_phase: str = "zero"
    idle_seed: int = 0


@dataclass(frozen=True)
class Scenario:
    bs_position: Position
    bs_antennas: int
    users: tuple[Position, ...]
    irs_list: tuple[IrsSpec, ...]
    radio: RadioConfig = field(default_factory=RadioConfig)
    bs_axis: tuple[float, float, float] = (0.0, 1.0, 0.0)
    links: LinkToggles = field(default_factory=LinkToggles)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)

    @property
    def n_users(self) -> int:
        return len(self.users)

    def irs_index(self, irs_id: str) -> int:
        for i, irs in enumerate(self.irs_list):
            if irs.id == irs_id:
                return i
        raise KeyError(f"unknown IRS {irs_id!r}")

    def with_element_counts(self, counts: Sequence[int]) -> Scenario:
        """Return a copy whose IRS grids hold ``counts[i]`` elements each."""
        if len(counts) != len(self.irs_list):
            raise ValueError(
                f"expected {len(self.irs_list)} element counts, got {len(counts)}")
        irs_list = []
        for irs, n in zip(self.irs_list, counts):
            rows, cols = grid_shape(int(n))
            irs_list.append(dataclasses.replace(irs, rows=rows, cols=cols))
        return dataclasses.replace(self, irs_list=tuple(irs_list))


def grid_shape(n: int) -> tuple[int, int]:
    """Most square rows x cols factorization of ``n`` (rows <= cols)."""
    if n < 0:
        raise ValueError("element count must be >= 0")
    if n == 0:
        return 0, 0
    rows = int(math.isqrt(n))
    while n % rows:
        rows -= 1
    return rows, n // rows


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    return float(np.linalg.norm(np.subtract(b, a, dtype=float)))


def covers(irs: IrsSpec, p: Sequence[float]) -> bool:
    """True iff ``p`` lies strictly in front of the reflecting face of ``irs``."""
    offset = np.subtract(p, irs.position, dtype=float)
    return float(np.dot(irs.normal, offset)) > 0.0


def locally_covers(irs: IrsSpec, p: Sequence[float], radio: RadioConfig) -> bool:
    """Half-space coverage restricted to the nearby region of the surface."""
    return covers(irs, p) and distance(irs.position, p) <= radio.near_threshold_m


# ---------------------------------------------------------------------------
# Parsing and serialization

_TOP_KEYS = {"bs", "radio", "users", "irs", "links", "optimizer"}
_BS_KEYS = {"position", "antennas", "axis"}
_USER_KEYS = {"position"}
_IRS_KEYS = {"id", "position", "normal", "rows", "cols", "side"}


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    if not isinstance(section, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ScenarioError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ScenarioError(f"{where}.{key}: missing")
    return section[key]


def _vector(value, where: str) -> tuple[float, float, float]:
    try:
        vec = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: expected a list of 3 numbers") from None
    if len(vec) != 3:
        raise ScenarioError(f"{where}: expected 3 coordinates, got {len(vec)}")
    if not all(math.isfinite(v) for v in vec):
        raise ScenarioError(f"{where}: coordinates must be finite")
    return vec


def _unit(value, where: str) -> tuple[float, float, float]:
    vec = _vector(value, where)
    norm = math.sqrt(sum(v * v for v in vec))
    if norm == 0.0:
        raise ScenarioError(f"{where}: zero vector")
    if abs(norm - 1.0) > 1e-9:
        warnings.warn(f"{where}: normalized vector of length {norm:g}", stacklevel=4)
        vec = tuple(v / norm for v in vec)
    return vec


def _dataclass_section(cls, section, where: str):
    if section is None:
        return cls()
    names = {f.name for f in dataclasses.fields(cls)}
    _check_keys(section, names, where)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in section:
            default = getattr(cls(), f.name)
            value = section[f.name]
            try:
                kwargs[f.name] = type(default)(value)
            except (TypeError, ValueError):
                raise ScenarioError(f"{where}.{f.name}: invalid value {value!r}") from None
    return cls(**kwargs)


def scenario_from_dict(doc: dict) -> Scenario:
    _check_keys(doc, _TOP_KEYS, "scenario")
    bs = _require(doc, "bs", "scenario")
    _check_keys(bs, _BS_KEYS, "bs")
    bs_position = Position(*_vector(_require(bs, "position", "bs"), "bs.position"))
    antennas = _require(bs, "antennas", "bs")
    if not isinstance(antennas, int) or antennas < 1:
        raise ScenarioError(f"bs.antennas: must be a positive integer, got {antennas!r}")
    bs_axis = _unit(bs.get("axis", (0.0, 1.0, 0.0)), "bs.axis")

    users = []
    for k, user in enumerate(doc.get("users") or []):
        _check_keys(user, _USER_KEYS, f"users[{k}]")
        users.append(Position(*_vector(_require(user, "position", f"users[{k}]"),
                                       f"users[{k}].position")))

    irs_list = []
    for i, entry in enumerate(doc.get("irs") or []):
        where = f"irs[{i}]"
        _check_keys(entry, _IRS_KEYS, where)
        rows, cols = _require(entry, "rows", where), _require(entry, "cols", where)
        for name, v in (("rows", rows), ("cols", cols)):
            if not isinstance(v, int) or v < 0:
                raise ScenarioError(f"{where}.{name}: must be a non-negative integer")
        if (rows == 0) != (cols == 0):
            raise ScenarioError(f"{where}: rows and cols must both be zero or both positive")
        try:
            side = Side(_require(entry, "side", where))
        except ValueError:
            raise ScenarioError(f"{where}.side: must be 'bs' or 'user'") from None
        irs_list.append(IrsSpec(
            id=str(_require(entry, "id", where)),
            position=Position(*_vector(_require(entry, "position", where), f"{where}.position")),
            normal=_unit(_require(entry, "normal", where), f"{where}.normal"),
            rows=rows, cols=cols, side=side))

    radio = _dataclass_section(RadioConfig, doc.get("radio"), "radio")
    if radio.element_spacing_wavelengths <= 0:
        raise ScenarioError("radio.element_spacing_wavelengths: must be > 0")
    if radio.near_threshold_m < 0:
        raise ScenarioError("radio.near_threshold_m: must be >= 0")
    if radio.noise_power_dbm >= radio.tx_power_dbm:
        warnings.warn("radio: noise power is not below transmit power", stacklevel=3)
    links = _dataclass_section(LinkToggles, doc.get("links"), "links")
    optimizer = _dataclass_section(OptimizerOptions, doc.get("optimizer"), "optimizer")
    if optimizer.idle_phase not in ("zero", "random"):
        raise ScenarioError("optimizer.idle_phase: must be 'zero' or 'random'")
    if optimizer.max_iters < 1 or optimizer.tol < 0:
        raise ScenarioError("optimizer: max_iters must be >= 1 and tol >= 0")

    ids = [irs.id for irs in irs_list]
    if len(set(ids)) != len(ids):
        raise ScenarioError("irs: duplicate ids")
    nodes = [bs_position, *users, *(irs.position for irs in irs_list)]
    if len(set(nodes)) != len(nodes):
        raise ScenarioError("scenario: node positions must be distinct")

    return Scenario(bs_position=bs_position, bs_antennas=antennas, users=tuple(users),
                    irs_list=tuple(irs_list), radio=radio, bs_axis=bs_axis,
                    links=links, optimizer=optimizer)


def load_scenario(text: str) -> Scenario:
    """Parse scenario YAML text.  Raises :class:`ScenarioError` on bad input."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"parse error: {exc}") from None
    if doc is None:
        raise ScenarioError("parse error: empty document")
    return scenario_from_dict(doc)


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "bs": {"position": list(scenario.bs_position),
               "antennas": scenario.bs_antennas,
               "axis": list(scenario.bs_axis)},
        "radio": dataclasses.asdict(scenario.radio),
        "links": dataclasses.asdict(scenario.links),
        "optimizer": dataclasses.asdict(scenario.optimizer),
        "users": [{"position": list(p)} for p in scenario.users],
        "irs": [{"id": irs.id, "position": list(irs.position), "normal": list(irs.normal),
                 "rows": irs.rows, "cols": irs.cols, "side": irs.side.value}
                for irs in scenario.irs_list],
    }


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(scenario), sort_keys=False,
                          default_flow_style=None)


def read_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return load_scenario(fh.read())


def _bundled(name: str) -> Scenario:
    text = resources.files("irsdeploy.data").joinpath(name).read_text(encoding="utf-8")
    return load_scenario(text)


def default_scenario() -> Scenario:
    """Three-user cell with one BS-side and two user-side IRSs.

    Coordinates are chosen for this package: user 1 and user 2 sit at the cell
    edge in front of IRS 1, user 3 is behind IRS 1, and IRS 2 / IRS 3 are a few
    meters from user 2 / user 3.  Element counts default to 300/50/50.
    """
    return _bundled("default.scenario")


def toy_scenario() -> Scenario:
    """Single-user, all-LoS geometry with two candidate IRS sites (A near the
    BS, B near the user); direct and single-reflection links are disabled."""
    return _bundled("toy.scenario")
