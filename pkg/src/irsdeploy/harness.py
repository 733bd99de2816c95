"""Monte Carlo experiments: strategy comparison, scaling study, CSV output."""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .association import AllocationPlan, AssociationPlan, build_association, evaluation_sets
from .beamform import LinkKind, optimize_reflections, received_power_scaling
from .composite import draw_channel_set, effective_channels, user_rates
from .scenario import Scenario, Side


class Strategy(str, enum.Enum):
    USER_SIDE = "user-side"
    BS_SIDE = "bs-side"
    HYBRID = "hybrid"


# Element splits (IRS1, IRS2, IRS3) for a total budget of 400.
REFERENCE_ALLOCATIONS = {
    Strategy.USER_SIDE: (0, 200, 200),
    Strategy.BS_SIDE: (400, 0, 0),
    Strategy.HYBRID: (300, 50, 50),
}


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: Scenario
    strategy: Strategy
    allocation: AllocationPlan
    trials: int = 500
    seed: int = 0
    n_subsurfaces: int = 10
    n_eval: int = 10
    partition_method: str = "exhaustive"
    output: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass
class RateReport:
    strategy: Strategy
    allocation: AllocationPlan
    trials: int
    seed: int
    per_user_mean: np.ndarray
    per_user_std: np.ndarray
    min_rate_mean: float
    min_rate_std: float
    per_trial: np.ndarray = field(repr=False)
    partitions: dict[int, tuple] = field(default_factory=dict)

    @property
    def min_rate_stderr(self) -> float:
        return self.min_rate_std / math.sqrt(self.trials)

    @property
    def bottleneck(self) -> int:
        """0-based index of the user with the lowest mean rate."""
        return int(np.argmin(self.per_user_mean))


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def _trial_rates(args) -> np.ndarray:
    scenario, plan, seed, trial = args
    try:
        cs = draw_channel_set(scenario, seed, trial)
        rs, _ = optimize_reflections(cs, plan, scenario.radio, scenario.optimizer)
        return user_rates(effective_channels(cs, rs), scenario.radio)
    except Exception as exc:
        raise RuntimeError(f"trial {trial}: {exc}") from exc


def plan_for(scenario: Scenario, alloc: AllocationPlan, seed: int, n_subsurfaces: int = 10,
             n_eval: int = 10, partition_method: str = "exhaustive") -> AssociationPlan:
    """Association plan chosen on the evaluation realizations of ``seed``."""
    needs_search = partition_method == "exhaustive" and any(
        irs.side is Side.BS and n > 0 for irs, n in zip(scenario.irs_list, alloc.counts))
    sets = evaluation_sets(scenario, seed, n_eval) if needs_search else []
    return build_association(scenario, alloc, sets, n_subsurfaces, partition_method)


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> RateReport:
    """Per-user and min rates of one strategy over ``spec.trials`` realizations.

    The partition is searched once on the evaluation realizations (a stream
    separate from the reported trials) and reused for every trial.
    """
    scenario = spec.scenario.with_element_counts(spec.allocation.counts)
    plan = plan_for(scenario, spec.allocation, spec.seed, spec.n_subsurfaces, spec.n_eval,
                    spec.partition_method)
    jobs = [(scenario, plan, spec.seed, t) for t in range(spec.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_trial_rates, jobs))
    else:
        rows = [_trial_rates(job) for job in jobs]
    per_trial = np.array(rows)

    stats = [_mean_std(per_trial[:, k].tolist()) for k in range(per_trial.shape[1])]
    min_mean, min_std = _mean_std(per_trial.min(axis=1).tolist())
    report = RateReport(
        strategy=spec.strategy, allocation=spec.allocation, trials=spec.trials, seed=spec.seed,
        per_user_mean=np.array([s[0] for s in stats]),
        per_user_std=np.array([s[1] for s in stats]),
        min_rate_mean=min_mean, min_rate_std=min_std, per_trial=per_trial,
        partitions={i: p.assignment for i, p in plan.partitions.items()})
    if spec.output:
        write_rates_csv([report], spec.output)
    return report


def compare_strategies(scenario: Scenario, trials: int, seed: int,
                       allocations: dict[Strategy, tuple[int, ...]] | None = None,
                       n_subsurfaces: int = 10, n_eval: int = 10,
                       partition_method: str = "exhaustive", output: str | None = None,
                       workers: int = 1) -> list[RateReport]:
    """Run the user-side, BS-side and hybrid deployments on shared seeds."""
    allocations = allocations or REFERENCE_ALLOCATIONS
    reports = []
    for strategy in Strategy:
        spec = ExperimentSpec(scenario, strategy, AllocationPlan(allocations[strategy]),
                              trials, seed, n_subsurfaces, n_eval, partition_method)
        reports.append(run_experiment(spec, workers))
    if output:
        write_rates_csv(reports, output)
    return reports


RATE_COLUMNS = ("strategy", "metric", "user", "mean", "std", "trials", "seed")


def rate_rows(reports: Iterable[RateReport]) -> list[dict]:
    rows = []
    for r in reports:
        for k, (mean, std) in enumerate(zip(r.per_user_mean, r.per_user_std)):
            rows.append({"strategy": r.strategy.value, "metric": "rate", "user": k + 1,
                         "mean": repr(float(mean)), "std": repr(float(std)),
                         "trials": r.trials, "seed": r.seed})
        rows.append({"strategy": r.strategy.value, "metric": "min_rate", "user": "all",
                     "mean": repr(r.min_rate_mean), "std": repr(r.min_rate_std),
                     "trials": r.trials, "seed": r.seed})
    return rows


def _write(path: str, columns: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def write_rates_csv(reports: Iterable[RateReport], path: str) -> None:
    _write(path, RATE_COLUMNS, rate_rows(reports))


def write_trials_csv(reports: Iterable[RateReport], path: str) -> None:
    """Per-trial dump: one row per (strategy, trial, user)."""
    rows = []
    for r in reports:
        for t, rates in enumerate(r.per_trial):
            for k, rate in enumerate(rates):
                rows.append({"strategy": r.strategy.value, "trial": t, "user": k + 1,
                             "rate": repr(float(rate)), "seed": r.seed})
    _write(path, ("strategy", "trial", "user", "rate", "seed"), rows)


# ---------------------------------------------------------------------------
# Scaling study

@dataclass
class ScalingResult:
    link_kind: LinkKind
    n_list: list[int]
    powers: list[float]
    slope: float


def scaling_study(n_list: Sequence[int], link_kind: LinkKind | str) -> ScalingResult:
    """Received power versus element count and its least-squares log-log slope."""
    n_list = [int(n) for n in n_list]
    if len(n_list) < 3:
        raise ValueError("need at least three element counts")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("element counts must be increasing")
    kind = LinkKind(link_kind)
    powers = [received_power_scaling(n, kind) for n in n_list]
    slope = float(np.polyfit(np.log(n_list), np.log(powers), 1)[0])
    return ScalingResult(kind, n_list, powers, slope)


def write_scaling_csv(results: Iterable[ScalingResult], path: str, seed: int = 0) -> None:
    rows = [{"link_kind": r.link_kind.value, "n_elements": n, "received_power_mw": repr(p),
             "slope": repr(r.slope), "seed": seed}
            for r in results for n, p in zip(r.n_list, r.powers)]
    _write(path, ("link_kind", "n_elements", "received_power_mw", "slope", "seed"), rows)
