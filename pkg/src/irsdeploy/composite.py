"""Effective per-user channels at the BS and the resulting SNR / rate.

Uplink conventions: ``direct[:, k]`` is user k -> BS (M,), ``bs_irs[i]`` is
IRS i -> BS (M x N_i), ``irs_user[i][:, k]`` is user k -> IRS i (N_i,), and
``irs_irs[(i, j)]`` is user-side IRS j -> BS-side IRS i (N_i x N_j).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .channel import ArrayGeometry, RngSeed, classify_link, draw_channel
from .scenario import LinkToggles, RadioConfig, Scenario, Side, covers


@dataclass(frozen=True)
class ReflectionState:
    """Per-IRS reflection coefficient vectors (unit modulus)."""

    coefficients: tuple[np.ndarray, ...]

    def __post_init__(self):
        coeffs = tuple(np.asarray(c, dtype=complex) for c in self.coefficients)
        object.__setattr__(self, "coefficients", coeffs)
        for i, c in enumerate(coeffs):
            if c.size and np.max(np.abs(np.abs(c) - 1.0)) > 1e-9:
                raise ValueError(f"IRS {i}: reflection coefficients must have unit modulus")

    @classmethod
    def from_phases(cls, phases: Sequence[np.ndarray]) -> ReflectionState:
        return cls(tuple(np.exp(1j * np.asarray(p, dtype=float)) for p in phases))

    @classmethod
    def unchecked(cls, coefficients: Sequence[np.ndarray]) -> ReflectionState:
        """Bypass the unit-modulus check (diagnostics only)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "coefficients",
                           tuple(np.asarray(c, dtype=complex) for c in coefficients))
        return obj

    @classmethod
    def zeros_phase(cls, sizes: Sequence[int]) -> ReflectionState:
        return cls(tuple(np.ones(n, dtype=complex) for n in sizes))

    def phases(self) -> tuple[np.ndarray, ...]:
        return tuple(np.angle(c) for c in self.coefficients)


@dataclass
class ChannelSet:
    """One fading realization of every link in the cell.

    Links into an IRS from a node outside its front half-space are stored as
    zeros and flagged ``False`` in the coverage masks.  A double-reflection
    path reaches user k only if both surfaces cover k.
    """

    direct: np.ndarray
    bs_irs: tuple[np.ndarray, ...]
    irs_user: tuple[np.ndarray, ...]
    irs_irs: Mapping[tuple[int, int], np.ndarray]
    sides: tuple[Side, ...]
    user_mask: np.ndarray
    pair_mask: Mapping[tuple[int, int], bool] = field(default_factory=dict)
    paths: LinkToggles = field(default_factory=LinkToggles)

    def __post_init__(self):
        self.direct = np.asarray(self.direct, dtype=complex)
        if self.direct.ndim != 2:
            raise ValueError("direct must be an M x K matrix")
        m, k = self.direct.shape
        n_irs = len(self.bs_irs)
        if len(self.irs_user) != n_irs or len(self.sides) != n_irs:
            raise ValueError("bs_irs, irs_user and sides must have one entry per IRS")
        self.bs_irs = tuple(np.asarray(g, dtype=complex).reshape(m, -1) for g in self.bs_irs)
        self.irs_user = tuple(np.asarray(r, dtype=complex).reshape(-1, k) for r in self.irs_user)
        self.user_mask = np.asarray(self.user_mask, dtype=bool).reshape(n_irs, k)
        for i, (g, r) in enumerate(zip(self.bs_irs, self.irs_user)):
            if g.shape[1] != r.shape[0]:
                raise ValueError(f"IRS {i}: bs_irs has {g.shape[1]} columns but "
                                 f"irs_user has {r.shape[0]} rows")
        pairs = {}
        for (i, j), s in self.irs_irs.items():
            s = np.asarray(s, dtype=complex)
            if self.sides[i] is not Side.BS or self.sides[j] is not Side.USER:
                raise ValueError(f"double-reflection pair {(i, j)} must be BS-side -> user-side")
            if s.shape != (self.n_elements(i), self.n_elements(j)):
                raise ValueError(f"irs_irs[{(i, j)}] has shape {s.shape}")
            pairs[(i, j)] = s
        self.irs_irs = pairs
        self.pair_mask = {p: bool(self.pair_mask.get(p, True)) for p in pairs}

    @property
    def n_antennas(self) -> int:
        return self.direct.shape[0]

    @property
    def n_users(self) -> int:
        return self.direct.shape[1]

    @property
    def n_irs(self) -> int:
        return len(self.bs_irs)

    def n_elements(self, i: int) -> int:
        return self.bs_irs[i].shape[1]

    def sizes(self) -> tuple[int, ...]:
        return tuple(self.n_elements(i) for i in range(self.n_irs))

    def double_pairs(self) -> list[tuple[int, int]]:
        """Active BS-side -> user-side pairs, in (i, j) order."""
        if not self.paths.double_reflection:
            return []
        return sorted(p for p, ok in self.pair_mask.items() if ok)


@dataclass(frozen=True)
class CompositeChannel:
    h: np.ndarray
    direct: np.ndarray
    single: dict[int, np.ndarray]
    double: dict[tuple[int, int], np.ndarray]

    def component_sum(self) -> np.ndarray:
        total = self.direct.copy()
        for v in self.single.values():
            total = total + v
        for v in self.double.values():
            total = total + v
        return total


def _check_state(cs: ChannelSet, rs: ReflectionState) -> None:
    if len(rs.coefficients) != cs.n_irs:
        raise ValueError(f"reflection state has {len(rs.coefficients)} IRSs, "
                         f"channel set has {cs.n_irs}")
    for i, c in enumerate(rs.coefficients):
        if c.shape != (cs.n_elements(i),):
            raise ValueError(f"IRS {i}: expected {cs.n_elements(i)} coefficients, got {c.shape}")


def effective_channel(cs: ChannelSet, rs: ReflectionState, k: int) -> CompositeChannel:
    """Direct, single- and double-reflection components of user ``k``'s channel."""
    _check_state(cs, rs)
    if not 0 <= k < cs.n_users:
        raise IndexError(f"user index {k} out of range")
    phi = rs.coefficients
    direct = cs.direct[:, k].copy() if cs.paths.direct else np.zeros(cs.n_antennas, complex)
    h = direct.copy()
    single = {}
    if cs.paths.single_reflection:
        for i in range(cs.n_irs):
            if cs.user_mask[i, k] and cs.n_elements(i):
                single[i] = cs.bs_irs[i] @ (phi[i] * cs.irs_user[i][:, k])
                h = h + single[i]
    double = {}
    for i, j in cs.double_pairs():
        if cs.user_mask[i, k] and cs.user_mask[j, k] and cs.n_elements(i) and cs.n_elements(j):
            inner = cs.irs_irs[(i, j)] @ (phi[j] * cs.irs_user[j][:, k])
            double[(i, j)] = cs.bs_irs[i] @ (phi[i] * inner)
            h = h + double[(i, j)]
    return CompositeChannel(h=h, direct=direct, single=single, double=double)


def effective_channels(cs: ChannelSet, rs: ReflectionState) -> np.ndarray:
    """All users' effective channels as an M x K matrix."""
    _check_state(cs, rs)
    phi = rs.coefficients
    h = cs.direct.copy() if cs.paths.direct else np.zeros_like(cs.direct)
    if cs.paths.single_reflection:
        for i in range(cs.n_irs):
            if cs.n_elements(i):
                h += cs.bs_irs[i] @ (phi[i][:, None] * cs.irs_user[i])
    for i, j in cs.double_pairs():
        inner = cs.irs_irs[(i, j)] @ (phi[j][:, None] * cs.irs_user[j] * cs.user_mask[i])
        h += cs.bs_irs[i] @ (phi[i][:, None] * inner)
    return h


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mrc_snr(h: np.ndarray, radio: RadioConfig) -> float:
    """Post-MRC SNR ``P ||h||^2 / sigma^2`` (linear)."""
    gain = float(np.vdot(h, h).real)
    return dbm_to_mw(radio.tx_power_dbm) * gain / dbm_to_mw(radio.noise_power_dbm)


def rate_bps_hz(snr):
    snr = np.asarray(snr, dtype=float)
    if np.any(snr < 0):
        raise ValueError("SNR must be non-negative")
    rate = np.log2(1.0 + snr)
    return float(rate) if rate.ndim == 0 else rate


def user_rates(h: np.ndarray, radio: RadioConfig) -> np.ndarray:
    """Per-user rates for an M x K matrix of effective channels."""
    scale = dbm_to_mw(radio.tx_power_dbm) / dbm_to_mw(radio.noise_power_dbm)
    gains = np.einsum("mk,mk->k", h.conj(), h).real
    return np.log2(1.0 + scale * gains)


# ---------------------------------------------------------------------------
# Realizations from a scenario

def bs_geometry(scenario: Scenario) -> ArrayGeometry:
    return ArrayGeometry.ula(scenario.bs_antennas, scenario.radio.element_spacing_wavelengths,
                             scenario.bs_axis)


def irs_geometry(scenario: Scenario, i: int) -> ArrayGeometry:
    irs = scenario.irs_list[i]
    return ArrayGeometry.facing(irs.normal, irs.rows, irs.cols,
                                scenario.radio.element_spacing_wavelengths)


def draw_channel_set(scenario: Scenario, seed: int, trial: int = 0,
                     purpose: str = "report") -> ChannelSet:
    """Draw every link of ``scenario`` for one trial.

    Each link has its own random stream keyed by ``(seed, trial, purpose/link)``.
    """
    beta0 = scenario.radio.ref_path_gain_db
    user_geom = ArrayGeometry.single()
    bs_geom = bs_geometry(scenario)
    irs_geoms = [irs_geometry(scenario, i) for i in range(len(scenario.irs_list))]
    positions = {"bs": np.asarray(scenario.bs_position, dtype=float)}
    for k, p in enumerate(scenario.users):
        positions[f"user{k + 1}"] = np.asarray(p, dtype=float)
    for irs in scenario.irs_list:
        positions[irs.id] = np.asarray(irs.position, dtype=float)

    def link(model, tx_ref, tx_geom, rx_ref, rx_geom):
        delta = positions[rx_ref] - positions[tx_ref]
        d = float(np.linalg.norm(delta))
        dirs = (delta / d, -delta / d)
        seed_ = RngSeed(seed, trial, f"{purpose}/{rx_ref}<-{tx_ref}")
        return draw_channel(model, tx_geom, rx_geom, d, dirs, seed_, beta0)

    m, k_users = scenario.bs_antennas, scenario.n_users
    direct = np.zeros((m, k_users), dtype=complex)
    for k in range(k_users):
        ref = f"user{k + 1}"
        direct[:, k] = link(classify_link(scenario, "bs", ref), ref, user_geom, "bs", bs_geom)[:, 0]

    bs_irs, irs_user = [], []
    user_mask = np.zeros((len(scenario.irs_list), k_users), dtype=bool)
    for i, irs in enumerate(scenario.irs_list):
        geom = irs_geoms[i]
        bs_irs.append(link(classify_link(scenario, "bs", irs.id), irs.id, geom, "bs", bs_geom))
        r = np.zeros((geom.n_elements, k_users), dtype=complex)
        for k, p in enumerate(scenario.users):
            if covers(irs, p):
                user_mask[i, k] = True
                ref = f"user{k + 1}"
                r[:, k] = link(classify_link(scenario, ref, irs.id), ref, user_geom,
                               irs.id, geom)[:, 0]
        irs_user.append(r)

    irs_irs, pair_mask = {}, {}
    for i, a in enumerate(scenario.irs_list):
        for j, b in enumerate(scenario.irs_list):
            if a.side is not Side.BS or b.side is not Side.USER:
                continue
            ok = covers(a, b.position) and covers(b, a.position)
            pair_mask[(i, j)] = ok
            if ok:
                irs_irs[(i, j)] = link(classify_link(scenario, b.id, a.id), b.id, irs_geoms[j], a.id, irs_geoms[i])
            else:
                irs_irs[(i, j)] = np.zeros((irs_geoms[i].n_elements, irs_geoms[j].n_elements),
                                           dtype=complex)

    return ChannelSet(direct=direct, bs_irs=tuple(bs_irs), irs_user=tuple(irs_user),
                      irs_irs=irs_irs, sides=tuple(irs.side for irs in scenario.irs_list),
                      user_mask=user_mask, pair_mask=pair_mask, paths=scenario.links)
