"""Per-link channel generation: path loss, array responses and fading laws."""

from __future__ import annotations

import enum
import math
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scenario import Scenario, distance


class FadingLaw(enum.Enum):
    PURE_LOS = "los"
    RICIAN = "rician"
    RAYLEIGH = "rayleigh"


@dataclass(frozen=True)
class LinkModel:
    law: FadingLaw
    alpha: float
    k_factor_db: float | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("path-loss exponent must be > 0")
        if (self.law is FadingLaw.RICIAN) != (self.k_factor_db is not None):
            raise ValueError("k_factor_db is required for, and only for, Rician links")

    @classmethod
    def pure_los(cls, alpha: float) -> LinkModel:
        return cls(FadingLaw.PURE_LOS, alpha)

    @classmethod
    def rician(cls, k_factor_db: float, alpha: float) -> LinkModel:
        return cls(FadingLaw.RICIAN, alpha, k_factor_db)

    @classmethod
    def rayleigh(cls, alpha: float) -> LinkModel:
        return cls(FadingLaw.RAYLEIGH, alpha)


# Link laws of the simulated cell.
NEARBY_IRS_LINK = LinkModel.pure_los(2.2)
FAR_IRS_LINK = LinkModel.rician(5.0, 2.5)
BS_USER_LINK = LinkModel.rayleigh(3.0)
INTER_IRS_LINK = LinkModel.pure_los(2.2)


@dataclass(frozen=True)
class RngSeed:
    """Counter-based stream key: the same (seed, trial, link) always yields
    the same draws, independently of evaluation order."""

    seed: int
    trial: int = 0
    link: str = ""

    def generator(self) -> np.random.Generator:
        tag = zlib.crc32(self.link.encode("utf-8"))
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.trial, tag))
        return np.random.default_rng(ss)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class ArrayGeometry:
    """Element lattice of an antenna array or IRS.

    ``shape`` is ``(1,)`` for a single antenna, ``(n,)`` for a ULA and
    ``(rows, cols)`` for a UPA; ``axes`` holds one world-frame unit vector
    per lattice dimension.
    """

    shape: tuple[int, ...]
    spacing_wavelengths: float = 0.5
    axes: tuple[tuple[float, float, float], ...] = ((1.0, 0.0, 0.0),)

    @classmethod
    def single(cls) -> ArrayGeometry:
        return cls((1,))

    @classmethod
    def ula(cls, n: int, spacing: float = 0.5, axis=(1.0, 0.0, 0.0)) -> ArrayGeometry:
        if n < 1:
            raise ValueError("ULA needs at least one element")
        return cls((n,), spacing, (tuple(_unit(axis)),))

    @classmethod
    def upa(cls, rows: int, cols: int, spacing: float = 0.5,
            row_axis=(0.0, 0.0, 1.0), col_axis=(1.0, 0.0, 0.0)) -> ArrayGeometry:
        if rows < 0 or cols < 0:
            raise ValueError("UPA dimensions must be >= 0")
        return cls((rows, cols), spacing, (tuple(_unit(row_axis)), tuple(_unit(col_axis))))

    @classmethod
    def facing(cls, normal, rows: int, cols: int, spacing: float = 0.5) -> ArrayGeometry:
        """UPA lying in the plane orthogonal to ``normal``; columns run
        horizontally, rows vertically when the normal is not vertical."""
        n = _unit(normal)
        col_axis = np.cross((0.0, 0.0, 1.0), n)
        if np.linalg.norm(col_axis) < 1e-9:
            col_axis = np.cross((0.0, 1.0, 0.0), n)
        col_axis = _unit(col_axis)
        row_axis = np.cross(n, col_axis)
        return cls.upa(rows, cols, spacing, row_axis, col_axis)

    @property
    def kind(self) -> str:
        if self.shape == (1,):
            return "single"
        return "ula" if len(self.shape) == 1 else "upa"

    @property
    def n_elements(self) -> int:
        return math.prod(self.shape)

    def offsets(self) -> np.ndarray:
        """Element positions in units of the element spacing, shape (N, 3).

        UPA elements are ordered row-major.
        """
        grids = np.meshgrid(*(np.arange(s) for s in self.shape), indexing="ij")
        idx = np.stack([g.ravel() for g in grids], axis=1).astype(float)
        return idx @ np.asarray(self.axes, dtype=float)


def path_gain_db(d: float, alpha: float, beta0: float) -> float:
    """Distance-dependent gain ``beta0 * d**-alpha`` in dB (beta0 at 1 m)."""
    if not d > 0:
        raise ValueError(f"distance must be > 0, got {d}")
    return beta0 - 10.0 * alpha * math.log10(d)


def steering_vector(geom: ArrayGeometry, direction: Sequence[float]) -> np.ndarray:
    """Far-field response ``exp(j 2 pi spacing <offset, direction>)``."""
    u = np.asarray(direction, dtype=float)
    phase = 2.0 * np.pi * geom.spacing_wavelengths * (geom.offsets() @ u)
    return np.exp(1j * phase)


def draw_channel(model: LinkModel, tx: ArrayGeometry, rx: ArrayGeometry, d: float,
                 directions: tuple[Sequence[float], Sequence[float]],
                 seed: RngSeed, beta0: float = -30.0) -> np.ndarray:
    """Draw one rx x tx channel matrix.

    ``directions`` is ``(departure, arrival)``: the unit vector from tx toward
    rx and the unit vector from rx toward tx.  Rician links mix the LoS outer
    product and an i.i.d. CN(0, 1) scattered part with weights
    sqrt(K/(K+1)) and sqrt(1/(K+1)); everything is scaled by the amplitude
    path gain.
    """
    amplitude = 10.0 ** (path_gain_db(d, model.alpha, beta0) / 20.0)
    shape = (rx.n_elements, tx.n_elements)

    def scattered():
        z = seed.generator().standard_normal(shape + (2,))
        return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)

    if model.law is FadingLaw.RAYLEIGH:
        return amplitude * scattered()
    departure, arrival = directions
    los = np.outer(steering_vector(rx, arrival), steering_vector(tx, departure).conj())
    if model.law is FadingLaw.PURE_LOS:
        return amplitude * los
    k = 10.0 ** (model.k_factor_db / 10.0)
    return amplitude * (math.sqrt(k / (k + 1.0)) * los + math.sqrt(1.0 / (k + 1.0)) * scattered())


# ---------------------------------------------------------------------------
# Node references: "bs", "user1".."userK" (1-based) and IRS ids.

def node_position(scenario: Scenario, ref: str) -> np.ndarray:
    if ref == "bs":
        return np.asarray(scenario.bs_position, dtype=float)
    if ref.startswith("user") and ref[4:].isdigit():
        k = int(ref[4:]) - 1
        if 0 <= k < scenario.n_users:
            return np.asarray(scenario.users[k], dtype=float)
    for irs in scenario.irs_list:
        if irs.id == ref:
            return np.asarray(irs.position, dtype=float)
    raise KeyError(f"unknown endpoint {ref!r}")


def _node_kind(scenario: Scenario, ref: str) -> str:
    node_position(scenario, ref)
    if ref == "bs":
        return "bs"
    if any(irs.id == ref for irs in scenario.irs_list):
        return "irs"
    return "user"


def classify_link(scenario: Scenario, a: str, b: str) -> LinkModel:
    """Fading law of the link between two nodes of ``scenario``."""
    if a == b:
        raise ValueError("link endpoints must differ")
    kinds = {_node_kind(scenario, a), _node_kind(scenario, b)}
    if kinds == {"irs"}:
        return INTER_IRS_LINK
    if "irs" in kinds:
        d = distance(node_position(scenario, a), node_position(scenario, b))
        return NEARBY_IRS_LINK if d <= scenario.radio.near_threshold_m else FAR_IRS_LINK
    if kinds == {"bs", "user"}:
        return BS_USER_LINK
    raise ValueError(f"no channel model for a {a!r} <-> {b!r} link")
