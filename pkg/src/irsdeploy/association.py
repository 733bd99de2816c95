"""IRS-user association, mode selection, surface partition and elements
allocation."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .beamform import _optimize, _Workspace
from .channel import classify_link, node_position, path_gain_db
from .composite import ChannelSet, draw_channel_set
from .scenario import (OptimizerOptions, RadioConfig, Scenario, Side, covers, distance,
                       locally_covers)


class CommMode(enum.IntEnum):
    DIRECT = 1
    USER_SIDE_SINGLE = 2
    BS_SIDE_SINGLE = 3
    HYBRID_WITH_DOUBLE = 4


@dataclass(frozen=True)
class AllocationPlan:
    """Reflecting elements per IRS, in scenario IRS order."""

    counts: tuple[int, ...]
    objective: float | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if any(c < 0 for c in self.counts):
            raise ValueError("element counts must be >= 0")

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class PartitionAssignment:
    """Equal-size subsurfaces of one BS-side IRS and the user each serves."""

    n_elements: int
    assignment: tuple[int | None, ...]
    objective: float | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(self.assignment))
        s = len(self.assignment)
        if s == 0 or self.n_elements % s:
            raise ValueError(f"{s} subsurfaces do not divide {self.n_elements} elements")

    @property
    def n_subsurfaces(self) -> int:
        return len(self.assignment)

    @property
    def size(self) -> int:
        return self.n_elements // self.n_subsurfaces

    def blocks(self) -> list[tuple[np.ndarray, int | None]]:
        size = self.size
        return [(np.arange(s * size, (s + 1) * size), user)
                for s, user in enumerate(self.assignment)]

    def counts(self, n_users: int) -> tuple[int, ...]:
        return tuple(sum(1 for a in self.assignment if a == k) for k in range(n_users))


@dataclass(frozen=True)
class AssociationPlan:
    modes: tuple[CommMode, ...]
    partitions: Mapping[int, PartitionAssignment] = field(default_factory=dict)
    local_users: Mapping[int, int | None] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Coverage-driven decisions

def _active(scenario: Scenario, alloc: AllocationPlan | None, i: int) -> bool:
    n = alloc.counts[i] if alloc is not None else scenario.irs_list[i].n_elements
    return n > 0


def local_users(scenario: Scenario, alloc: AllocationPlan | None = None) -> dict[int, int | None]:
    """Nearest locally covered user of every user-side IRS (None if none)."""
    served = {}
    for i, irs in enumerate(scenario.irs_list):
        if irs.side is not Side.USER:
            continue
        best = None
        if _active(scenario, alloc, i):
            candidates = [(distance(irs.position, p), k) for k, p in enumerate(scenario.users)
                          if locally_covers(irs, p, scenario.radio)]
            if candidates:
                best = min(candidates)[1]
        served[i] = best
    return served


def eligible_users(scenario: Scenario, i: int) -> list[int]:
    """Users in the front half-space of BS-side IRS ``i``."""
    irs = scenario.irs_list[i]
    return [k for k, p in enumerate(scenario.users) if covers(irs, p)]


def select_modes(scenario: Scenario, alloc: AllocationPlan | None = None) -> tuple[CommMode, ...]:
    """Richest communication mode each user's coverage permits."""
    if alloc is not None and len(alloc.counts) != len(scenario.irs_list):
        raise ValueError("allocation does not match the scenario's IRS list")
    served = local_users(scenario, alloc)
    modes = []
    for k, p in enumerate(scenario.users):
        bs_side = any(irs.side is Side.BS and _active(scenario, alloc, i) and covers(irs, p)
                      for i, irs in enumerate(scenario.irs_list))
        user_side = k in served.values()
        if bs_side and user_side:
            modes.append(CommMode.HYBRID_WITH_DOUBLE)
        elif bs_side:
            modes.append(CommMode.BS_SIDE_SINGLE)
        elif user_side:
            modes.append(CommMode.USER_SIDE_SINGLE)
        else:
            modes.append(CommMode.DIRECT)
    return tuple(modes)


# ---------------------------------------------------------------------------
# Surface partition

class PlanEvaluator:
    """Mean min-rate of association plans over a fixed set of realizations."""

    def __init__(self, channel_sets: Sequence[ChannelSet], radio: RadioConfig,
                 opts: OptimizerOptions | None = None):
        if not channel_sets:
            raise ValueError("need at least one evaluation realization")
        self.workspace = _Workspace(channel_sets, radio)
        self.opts = opts or OptimizerOptions()

    def __call__(self, plan: AssociationPlan) -> float:
        values = [r.objective for r in _optimize(self.workspace, plan, self.opts)[1]]
        return math.fsum(values) / len(values)

    def many(self, plans: Sequence[AssociationPlan], chunk: int = 64) -> list[float]:
        """Scores of several plans sharing one block structure, run ``chunk``
        plans at a time in one batch."""
        n = self.workspace.batch
        out = []
        for lo in range(0, len(plans), chunk):
            group = plans[lo:lo + chunk]
            ws = self.workspace.take(np.tile(np.arange(n), len(group)))
            reports = _optimize(ws, [p for p in group for _ in range(n)], self.opts)[1]
            for c in range(len(group)):
                out.append(math.fsum(r.objective for r in reports[c * n:(c + 1) * n]) / n)
        return out


def _better(value: float, best: float | None) -> bool:
    # Values within 1e-12 (relative) of the incumbent count as ties.
    return best is None or value > best + 1e-12 * max(1.0, abs(best))


def exhaustive_partition(channel_sets: Sequence[ChannelSet], plan: AssociationPlan, irs: int,
                         n_subsurfaces: int, radio: RadioConfig,
                         opts: OptimizerOptions | None = None,
                         eligible: Sequence[int] | None = None) -> PartitionAssignment:
    """Best subsurface -> user assignment of BS-side IRS ``irs`` by enumeration.

    Every assignment in ``eligible ** n_subsurfaces`` is scored by the mean
    min-rate over ``channel_sets`` with reflections re-optimized; ties go to
    the lexicographically smallest assignment.  ``eligible`` defaults to the
    users covered by the IRS.
    """
    cs0 = channel_sets[0]
    n = cs0.n_elements(irs)
    if n_subsurfaces < 1 or n % n_subsurfaces:
        raise ValueError(f"{n_subsurfaces} subsurfaces do not divide {n} elements")
    if eligible is None:
        eligible = [k for k in range(cs0.n_users) if cs0.user_mask[irs, k]]
    evaluate = PlanEvaluator(channel_sets, radio, opts)
    if not eligible:
        empty = PartitionAssignment(n, (None,) * n_subsurfaces)
        return replace(empty, objective=evaluate(_with_partition(plan, irs, empty)))
    best, best_value = None, None
    parts = [PartitionAssignment(n, c)
             for c in itertools.product(sorted(eligible), repeat=n_subsurfaces)]
    values = evaluate.many([_with_partition(plan, irs, part) for part in parts])
    for part, value in zip(parts, values):
        if _better(value, best_value):
            best, best_value = part, value
    return replace(best, objective=best_value)


def _with_partition(plan: AssociationPlan, irs: int, part: PartitionAssignment) -> AssociationPlan:
    partitions = dict(plan.partitions)
    partitions[irs] = part
    return replace(plan, partitions=partitions)


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def statistical_partition_ip(power_curves: Mapping[int, Sequence[float]] | Sequence[Sequence[float]],
                             n_elements: int | None = None) -> PartitionAssignment:
    """Max-min integer allocation of subsurfaces from per-user power curves.

    ``power_curves[k][s]`` is user k's expected received power with ``s``
    subsurfaces.  All splits of the subsurfaces are enumerated and users get
    contiguous blocks in index order.  Among splits with equal max-min value
    the weaker users are favoured, then the lexicographically smallest
    assignment.
    """
    if not isinstance(power_curves, Mapping):
        power_curves = dict(enumerate(power_curves))
    if not power_curves:
        raise ValueError("no power curves")
    users = sorted(power_curves)
    curves = [np.asarray(power_curves[k], dtype=float) for k in users]
    n_sub = len(curves[0]) - 1
    if n_sub < 1 or any(len(c) != n_sub + 1 for c in curves):
        raise ValueError("every curve needs one value per subsurface count 0..S")
    if any(np.any(np.diff(c) < 0) for c in curves):
        raise ValueError("power curves must be non-decreasing")
    # Max-min ties go to the split giving more subsurfaces to weaker users
    # (lower full-surface power first), then to the smallest assignment.
    weakest_first = sorted(range(len(users)), key=lambda n: (curves[n][-1], n))
    best, best_value, best_key = None, None, None
    for split in _compositions(n_sub, len(users)):
        value = min(c[s] for c, s in zip(curves, split))
        assignment = tuple(u for u, s in zip(users, split) for _ in range(s))
        key = tuple(split[n] for n in weakest_first)
        if _better(value, best_value):
            best, best_value, best_key = assignment, value, key
        elif not _better(best_value, value) and (
                key > best_key or (key == best_key and assignment < best)):
            best, best_key = assignment, key
    n_elements = n_sub if n_elements is None else n_elements
    return PartitionAssignment(n_elements, best, objective=best_value)


def _gain(scenario: Scenario, a: str, b: str) -> float:
    d = distance(node_position(scenario, a), node_position(scenario, b))
    model = classify_link(scenario, a, b)
    return 10.0 ** (path_gain_db(d, model.alpha, scenario.radio.ref_path_gain_db) / 10.0)


def _large_scale_terms(scenario: Scenario, counts: Sequence[float], irs: int,
                       served: Mapping[int, int | None]):
    """Per user: (fixed power, per-element amplitude via ``irs``) of the
    large-scale LoS model, both normalized by the BS array gain M."""
    links = scenario.links
    bs_irs_ref = scenario.irs_list[irs].id
    fixed, per_element = [], []
    for k, p in enumerate(scenario.users):
        user = f"user{k + 1}"
        base = _gain(scenario, "bs", user) if links.direct else 0.0
        amp = 0.0
        covered = covers(scenario.irs_list[irs], p)
        if covered and links.single_reflection:
            amp += math.sqrt(_gain(scenario, "bs", bs_irs_ref) * _gain(scenario, bs_irs_ref, user))
        for j, served_user in served.items():
            if served_user != k or counts[j] <= 0:
                continue
            us_ref = scenario.irs_list[j].id
            if links.single_reflection:
                base += (counts[j] ** 2) * _gain(scenario, "bs", us_ref) * _gain(scenario, us_ref, user)
            a, b = scenario.irs_list[irs], scenario.irs_list[j]
            if (covered and links.double_reflection and covers(a, b.position)
                    and covers(b, a.position)):
                amp += counts[j] * math.sqrt(_gain(scenario, "bs", bs_irs_ref)
                                             * _gain(scenario, bs_irs_ref, us_ref)
                                             * _gain(scenario, us_ref, user))
        fixed.append(base)
        per_element.append(amp)
    return fixed, per_element


def expected_power_curves(scenario: Scenario, alloc: AllocationPlan, irs: int,
                          n_subsurfaces: int) -> dict[int, np.ndarray]:
    """Large-scale estimate of each eligible user's received power versus the
    number of subsurfaces of BS-side IRS ``irs`` it is given.

    Cascades through the IRS add coherently; all channels are taken at their
    path-loss mean with LoS structure at the BS array.
    """
    n = alloc.counts[irs]
    if n_subsurfaces < 1 or n % n_subsurfaces:
        raise ValueError(f"{n_subsurfaces} subsurfaces do not divide {n} elements")
    size = n // n_subsurfaces
    m = scenario.bs_antennas
    fixed, amp = _large_scale_terms(scenario, alloc.counts, irs, local_users(scenario, alloc))
    s = np.arange(n_subsurfaces + 1)
    return {k: m * (fixed[k] + (s * size * amp[k]) ** 2) for k in eligible_users(scenario, irs)}


def statistical_partition(scenario: Scenario, alloc: AllocationPlan, irs: int,
                          n_subsurfaces: int) -> PartitionAssignment:
    curves = expected_power_curves(scenario, alloc, irs, n_subsurfaces)
    if not curves:
        return PartitionAssignment(alloc.counts[irs], (None,) * n_subsurfaces)
    part = statistical_partition_ip(curves, alloc.counts[irs])
    return replace(part, objective=None)


def build_association(scenario: Scenario, alloc: AllocationPlan,
                      channel_sets: Sequence[ChannelSet], n_subsurfaces: int = 10,
                      method: str = "exhaustive",
                      opts: OptimizerOptions | None = None) -> AssociationPlan:
    """Modes, local users and a partition of every active BS-side IRS.

    ``channel_sets`` are the evaluation realizations scored by the
    exhaustive search (unused by the statistical method).
    """
    if method not in ("exhaustive", "statistical"):
        raise ValueError(f"unknown partition method {method!r}")
    opts = opts or scenario.optimizer
    plan = AssociationPlan(modes=select_modes(scenario, alloc),
                           local_users=local_users(scenario, alloc))
    for i, irs in enumerate(scenario.irs_list):
        if irs.side is not Side.BS or alloc.counts[i] == 0:
            continue
        if method == "exhaustive":
            part = exhaustive_partition(channel_sets, plan, i, n_subsurfaces, scenario.radio,
                                        opts, eligible_users(scenario, i))
        else:
            part = statistical_partition(scenario, alloc, i, n_subsurfaces)
        plan = _with_partition(plan, i, part)
    return plan


# ---------------------------------------------------------------------------
# Elements allocation

def evaluation_sets(scenario: Scenario, seed: int, n_eval: int) -> list[ChannelSet]:
    return [draw_channel_set(scenario, seed, t, purpose="eval") for t in range(n_eval)]


def allocation_objective(scenario: Scenario, counts: Sequence[int], n_subsurfaces: int = 10,
                         n_eval: int = 10, seed: int = 0,
                         partition_method: str = "exhaustive") -> float:
    """Mean min-rate of an element split over the evaluation realizations."""
    alloc = AllocationPlan(counts)
    scen = scenario.with_element_counts(alloc.counts)
    sets = evaluation_sets(scen, seed, n_eval)
    plan = build_association(scen, alloc, sets, n_subsurfaces, partition_method)
    return PlanEvaluator(sets, scen.radio, scen.optimizer)(plan)


def _grid(total: int, granularity: int, n_irs: int) -> list[tuple[int, ...]]:
    return sorted(tuple(c * granularity for c in comp)
                  for comp in _compositions(total // granularity, n_irs))


def _check_grid(scenario: Scenario, total: int, granularity: int, n_subsurfaces: int) -> None:
    if granularity <= 0 or total <= 0 or total % granularity:
        raise ValueError(f"granularity {granularity} does not divide {total}")
    if any(irs.side is Side.BS for irs in scenario.irs_list) and granularity % n_subsurfaces:
        raise ValueError(f"{n_subsurfaces} subsurfaces do not divide granularity {granularity}")
    if not scenario.irs_list:
        raise ValueError("scenario has no IRS sites")


def allocate_elements(scenario: Scenario, total: int, granularity: int, method: str = "sweep",
                      n_subsurfaces: int = 10, n_eval: int = 10, seed: int = 0,
                      partition_method: str = "exhaustive",
                      objective: Callable[[tuple[int, ...]], float] | None = None
                      ) -> AllocationPlan:
    """Split ``total`` elements across the scenario's IRS sites.

    ``sweep`` scores every point of the ``granularity`` grid and returns the
    best (ties: lexicographically smallest).  ``relax`` maximizes a
    continuous large-scale surrogate, rounds to the grid and hill-climbs on
    the true objective.  ``objective`` overrides the Monte Carlo min-rate.
    """
    _check_grid(scenario, total, granularity, n_subsurfaces)
    if objective is None:
        def objective(counts):
            return allocation_objective(scenario, counts, n_subsurfaces, n_eval, seed,
                                        partition_method)
    n_irs = len(scenario.irs_list)
    if method == "sweep":
        best, best_value = None, None
        for counts in _grid(total, granularity, n_irs):
            value = objective(counts)
            if _better(value, best_value):
                best, best_value = counts, value
        return AllocationPlan(best, objective=best_value)
    if method == "relax":
        start = _round_to_grid(_relaxed_split(scenario, total), total, granularity)
        counts, value = _repair(start, objective, granularity)
        return AllocationPlan(counts, objective=value)
    raise ValueError(f"unknown allocation method {method!r}")


def _surrogate(scenario: Scenario, counts: Sequence[float]) -> float:
    """Max-min large-scale received power for a continuous element split,
    with the BS-side elements shared optimally among eligible users."""
    bs_side = [i for i, irs in enumerate(scenario.irs_list) if irs.side is Side.BS]
    if len(bs_side) > 1:
        raise ValueError("the relaxed allocation supports at most one BS-side IRS")
    served = {}
    for j, irs in enumerate(scenario.irs_list):
        if irs.side is Side.USER and counts[j] > 0:
            local = [(distance(irs.position, p), k) for k, p in enumerate(scenario.users)
                     if locally_covers(irs, p, scenario.radio)]
            served[j] = min(local)[1] if local else None
    if not bs_side:
        fixed = _user_side_only(scenario, counts, served)
        return min(fixed)
    i = bs_side[0]
    fixed, amp = _large_scale_terms(scenario, counts, i, served)
    n1 = counts[i]
    eligible = [k for k in range(scenario.n_users) if amp[k] > 0 and n1 > 0]
    others = [fixed[k] for k in range(scenario.n_users) if k not in eligible]
    if not eligible:
        return min(others)
    hi = min([fixed[k] + (n1 * amp[k]) ** 2 for k in eligible] + others)
    lo = min(fixed[k] for k in eligible)

    def needed(t):
        return sum(math.sqrt(max(t - fixed[k], 0.0)) / amp[k] for k in eligible)

    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if needed(mid) <= n1:
            lo = mid
        else:
            hi = mid
    return min([lo] + others)


def _user_side_only(scenario, counts, served):
    fixed = []
    for k in range(scenario.n_users):
        user = f"user{k + 1}"
        base = _gain(scenario, "bs", user) if scenario.links.direct else 0.0
        for j, s in served.items():
            if s == k and scenario.links.single_reflection:
                ref = scenario.irs_list[j].id
                base += counts[j] ** 2 * _gain(scenario, "bs", ref) * _gain(scenario, ref, user)
        fixed.append(base)
    return fixed


def _relaxed_split(scenario: Scenario, total: int) -> np.ndarray:
    """Compass search for the best continuous split on the simplex."""
    n_irs = len(scenario.irs_list)
    x = np.full(n_irs, total / n_irs)
    value = _surrogate(scenario, x)
    step = total / 4.0
    while step > 0.5:
        improved = False
        for a, b in itertools.permutations(range(n_irs), 2):
            move = min(step, x[a])
            if move <= 0:
                continue
            y = x.copy()
            y[a] -= move
            y[b] += move
            v = _surrogate(scenario, y)
            if v > value * (1.0 + 1e-12):
                x, value, improved = y, v, True
        if not improved:
            step /= 2.0
    return x


def _round_to_grid(x: np.ndarray, total: int, granularity: int) -> tuple[int, ...]:
    """Largest-remainder rounding onto multiples of ``granularity``."""
    units = np.asarray(x, dtype=float) / granularity
    base = np.floor(units).astype(int)
    short = total // granularity - int(base.sum())
    order = sorted(range(len(units)), key=lambda i: (-(units[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return tuple(int(b) * granularity for b in base)


def _repair(start: tuple[int, ...], objective, granularity: int):
    """Hill-climb over single-step transfers between sites."""
    cache = {}

    def score(c):
        if c not in cache:
            cache[c] = objective(c)
        return cache[c]

    current, value = start, score(start)
    while True:
        neighbours = []
        for a, b in itertools.permutations(range(len(current)), 2):
            if current[a] >= granularity:
                c = list(current)
                c[a] -= granularity
                c[b] += granularity
                neighbours.append(tuple(c))
        best = None
        for c in sorted(neighbours):
            v = score(c)
            if v > value + 1e-12 * max(1.0, abs(value)) and (best is None or v > best[1]):
                best = (c, v)
        if best is None:
            return current, value
        current, value = best
