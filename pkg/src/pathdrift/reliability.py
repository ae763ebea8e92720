"""Per-model reliability scorecard and the counterfactual restart-lift estimate.

The scorecard separates a model's capability ceiling (any-success rate over
tasks) from its reliability floor (all-success rate); the gap between them is
the population a mid-trajectory restart policy can act on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .adherence import adherence, partial_adherence
from .canonical import CanonicalResolver, CanonicalSpec
from .corpus import Corpus, OutcomeClass
from .errors import InsufficientSupportError, NotComputableError
from .gaps import fit_mixed_logistic
from .stats import Estimate, LogisticFit, RngPolicy, bootstrap_ci


@dataclass(frozen=True)
class ModelReliability:
    """Reliability metrics for one model over its complete units.

    p_at_1: mean run success; p_at_k: fraction of tasks with at least one
    success; p_hat_k: fraction of tasks succeeding on every run; mo_over_patk:
    mixed tasks as a fraction of tasks with any success (None when the model
    never succeeds).
    """

    model: str
    p_at_1: float
    p_at_k: float
    p_hat_k: float
    mo_over_patk: float | None
    n_tasks: int
    k: int


def per_model_metrics(corpus: Corpus) -> list[ModelReliability]:
    """Scorecard rows for every model, sorted by p_at_1 descending."""
    rows: list[ModelReliability] = []
    by_model: dict[str, list] = {}
    for unit in corpus.units:
        by_model.setdefault(unit.model, []).append(unit)
    for model in sorted(by_model):
        units = by_model[model]
        n_tasks = len(units)
        runs = [r for u in units for r in u.runs]
        k = max(len(u.runs) for u in units)
        n_any = sum(1 for u in units if any(r.success for r in u.runs))
        n_all = sum(1 for u in units if all(r.success for r in u.runs))
        n_mixed = sum(1 for u in units if u.outcome_class is OutcomeClass.MIXED)
        rows.append(
            ModelReliability(
                model=model,
                p_at_1=sum(1 for r in runs if r.success) / len(runs),
                p_at_k=n_any / n_tasks,
                p_hat_k=n_all / n_tasks,
                mo_over_patk=n_mixed / n_any if n_any else None,
                n_tasks=n_tasks,
                k=k,
            )
        )
    rows.sort(key=lambda r: (-r.p_at_1, r.model))
    return rows


@dataclass(frozen=True)
class InterventionPolicy:
    """Which runs a monitor would flag for restart.

    ``tercile`` flags the bottom third of runs by checkpoint adherence,
    pooled over all flaggable runs; ``below_unit_mean`` flags runs at least
    ``margin`` below their own unit's mean checkpoint adherence. Boundary
    values flag inclusively in both cases so offline and replayed decisions
    agree exactly.
    """

    kind: str = "tercile"
    checkpoint: float = 0.75
    margin: float | None = None

    def __post_init__(self):
        if self.kind not in ("tercile", "below_unit_mean"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not 0.0 < self.checkpoint <= 1.0:
            raise ValueError("checkpoint must be in (0, 1]")
        if self.kind == "below_unit_mean":
            if self.margin is None or not 0.0 < self.margin < 1.0:
                raise ValueError("below_unit_mean needs margin in (0, 1)")

    def label(self) -> str:
        if self.kind == "tercile":
            return f"tercile@{self.checkpoint:g}"
        return f"below_mean{self.margin:g}@{self.checkpoint:g}"


def tercile_cutoff(values: Sequence[float]) -> float:
    """Lower-tercile boundary: the value at rank ceil(n/3) of the sorted
    sample. Rank groups differ in size by at most one before tie expansion."""
    if not values:
        raise NotComputableError("tercile cutoff needs at least one value")
    ordered = sorted(values)
    rank = max(1, math.ceil(len(ordered) / 3))
    return ordered[rank - 1]


@dataclass(frozen=True)
class FlagCandidate:
    """A mixed-outcome run with everything the policy and the lift need."""

    unit_key: tuple[str, str]
    run_key: tuple[str, str, int]
    checkpoint_adherence: float
    full_adherence: float
    unit_mean_full: float
    unit_mean_checkpoint: float
    success_mean_full: float
    success: bool


def checkpoint_population(
    corpus: Corpus,
    spec: CanonicalSpec,
    checkpoint: float,
) -> list[FlagCandidate]:
    """All mixed-unit runs with a valid checkpoint adherence under ``spec``.

    The prefix minimum is one call here: a monitored run always has some
    adherence once it has called a tool.
    """
    resolver = CanonicalResolver(corpus, spec)
    out: list[FlagCandidate] = []
    for unit in sorted(corpus.mixed_units(), key=lambda u: u.key):
        try:
            canonical = resolver.for_task_model(unit.task, unit.model)
        except InsufficientSupportError:
            continue
        if spec.generic_only and not canonical.tools:
            continue
        full = {r.run_index: adherence(r, canonical).value for r in unit.runs}
        partial = {
            r.run_index: partial_adherence(r, canonical, checkpoint, min_calls=1).value
            for r in unit.runs
        }
        unit_mean_full = sum(full.values()) / len(full)
        unit_mean_cp = sum(partial.values()) / len(partial)
        succ_vals = [full[r.run_index] for r in unit.runs if r.success]
        succ_mean = sum(succ_vals) / len(succ_vals)
        for run in unit.runs:
            out.append(
                FlagCandidate(
                    unit_key=unit.key,
                    run_key=run.key,
                    checkpoint_adherence=partial[run.run_index],
                    full_adherence=full[run.run_index],
                    unit_mean_full=unit_mean_full,
                    unit_mean_checkpoint=unit_mean_cp,
                    success_mean_full=succ_mean,
                    success=run.success,
                )
            )
    return out


@dataclass(frozen=True)
class FlagDecisions:
    flagged: tuple[FlagCandidate, ...]
    population: tuple[FlagCandidate, ...]
    global_cutoff: float | None  # tercile policies only

    @property
    def flagged_keys(self) -> frozenset[tuple[str, str, int]]:
        return frozenset(c.run_key for c in self.flagged)


def apply_policy(
    population: Sequence[FlagCandidate],
    policy: InterventionPolicy,
) -> FlagDecisions:
    if policy.kind == "tercile":
        if len(population) < 3:
            raise NotComputableError(
                f"tercile policy needs >= 3 flaggable runs, found {len(population)}"
            )
        cutoff = tercile_cutoff([c.checkpoint_adherence for c in population])
        flagged = tuple(c for c in population if c.checkpoint_adherence <= cutoff)
        return FlagDecisions(flagged=flagged, population=tuple(population), global_cutoff=cutoff)
    flagged = tuple(
        c
        for c in population
        if c.checkpoint_adherence <= c.unit_mean_checkpoint - policy.margin
    )
    return FlagDecisions(flagged=flagged, population=tuple(population), global_cutoff=None)


@dataclass(frozen=True)
class InterventionReport:
    policy: InterventionPolicy
    lift_pp: float
    ci_low_pp: float
    ci_high_pp: float
    n_flagged: int
    n_population: int
    flagged_fraction: float
    baseline_rate_predicted: float
    counterfactual_rate_predicted: float
    baseline_rate_observed: float
    flagged_keys: frozenset[tuple[str, str, int]]
    global_cutoff: float | None
    fit: LogisticFit


def intervention_lift(
    corpus: Corpus,
    spec: CanonicalSpec,
    policy: InterventionPolicy,
    rng: RngPolicy | None = None,
    resamples: int = 5000,
    workers: int = 1,
    fit: LogisticFit | None = None,
) -> InterventionReport:
    """Expected success-rate lift from restarting policy-flagged runs.

    Each flagged run's counterfactual is the logistic prediction at its own
    unit's successful-run mean adherence (the conservative target); the lift
    is the mean predicted-probability change over flagged runs, with a
    unit-clustered bootstrap interval. A unit whose failed run already sits
    above its successes contributes a negative term, reported unclipped.
    """
    rng = rng or RngPolicy()
    fit = fit or fit_mixed_logistic(corpus, spec)
    population = checkpoint_population(corpus, spec, policy.checkpoint)
    decisions = apply_policy(population, policy)
    flagged = decisions.flagged
    if not flagged:
        return InterventionReport(
            policy=policy,
            lift_pp=0.0,
            ci_low_pp=0.0,
            ci_high_pp=0.0,
            n_flagged=0,
            n_population=len(population),
            flagged_fraction=0.0,
            baseline_rate_predicted=float("nan"),
            counterfactual_rate_predicted=float("nan"),
            baseline_rate_observed=float("nan"),
            flagged_keys=frozenset(),
            global_cutoff=decisions.global_cutoff,
            fit=fit,
        )

    contributions: dict[tuple[str, str], list[float]] = {}
    p_obs_sum = 0.0
    p_cf_sum = 0.0
    observed = 0
    for cand in flagged:
        p_obs = fit.predict(cand.full_adherence - cand.unit_mean_full)
        p_cf = fit.predict(cand.success_mean_full - cand.unit_mean_full)
        contributions.setdefault(cand.unit_key, []).append(p_cf - p_obs)
        p_obs_sum += p_obs
        p_cf_sum += p_cf
        observed += int(cand.success)

    clusters = [contributions[k] for k in sorted(contributions)]

    def mean_lift(cs: Sequence[list[float]]) -> float:
        values = [v for cluster in cs for v in cluster]
        return sum(values) / len(values)

    point = mean_lift(clusters)
    if len(clusters) >= 2 and resamples > 0:
        boot = bootstrap_ci(
            clusters,
            mean_lift,
            resamples=resamples,
            rng=rng,
            label=f"lift:{policy.label()}:{spec.label()}",
            workers=workers,
        )
        ci_low, ci_high = boot.ci_low, boot.ci_high
    else:
        ci_low = ci_high = float("nan")
    return InterventionReport(
        policy=policy,
        lift_pp=point * 100.0,
        ci_low_pp=ci_low * 100.0,
        ci_high_pp=ci_high * 100.0,
        n_flagged=len(flagged),
        n_population=len(population),
        flagged_fraction=len(flagged) / len(population),
        baseline_rate_predicted=p_obs_sum / len(flagged),
        counterfactual_rate_predicted=p_cf_sum / len(flagged),
        baseline_rate_observed=observed / len(flagged),
        flagged_keys=decisions.flagged_keys,
        global_cutoff=decisions.global_cutoff,
        fit=fit,
    )
