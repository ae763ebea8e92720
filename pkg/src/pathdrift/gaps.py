"""Within-unit adherence gaps: the headline estimate and its robustness program.

Every estimate here compares successful and failed runs of the same model on
the same task, so capability and task difficulty cancel inside each unit.
Aggregation always walks units in sorted key order, keeping reductions
deterministic.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace
from typing import Hashable, Mapping, Sequence

from .adherence import adherence, length_residualize
from .canonical import (
    CanonicalResolver,
    CanonicalSpec,
    ScopeKind,
    canonical_strength,
    consensus_set,
)
from .corpus import Corpus, OutcomeClass, Unit, distinct_tools
from .errors import (
    DegenerateVarianceError,
    InsufficientSupportError,
    NotComputableError,
    PathdriftError,
)
from .stats import (
    Estimate,
    LogisticFit,
    RngPolicy,
    binomial_test,
    bootstrap_ci,
    logistic_demeaned,
    paired_t,
    pearson,
)


@dataclass(frozen=True)
class UnitGap:
    """One mixed unit's paired comparison under a concrete spec."""

    model: str
    task: str
    success_mean: float
    failure_mean: float
    delta: float
    n_success: int
    n_failure: int
    spec: CanonicalSpec

    @property
    def key(self) -> tuple[str, str]:
        return (self.model, self.task)


@dataclass(frozen=True)
class SkippedUnit:
    model: str
    task: str
    reason: str


def _gap_from_canonical(unit: Unit, canonical, residualize_length: bool) -> UnitGap:
    values = [adherence(run, canonical).value for run in unit.runs]
    if residualize_length:
        values = length_residualize(
            [(v, len(run.calls)) for v, run in zip(values, unit.runs)]
        )
    succ = [v for v, run in zip(values, unit.runs) if run.success]
    fail = [v for v, run in zip(values, unit.runs) if not run.success]
    s_mean = sum(succ) / len(succ)
    f_mean = sum(fail) / len(fail)
    return UnitGap(
        model=unit.model,
        task=unit.task,
        success_mean=s_mean,
        failure_mean=f_mean,
        delta=s_mean - f_mean,
        n_success=len(succ),
        n_failure=len(fail),
        spec=canonical.spec,
    )


def unit_gap(
    unit: Unit,
    corpus: Corpus,
    spec: CanonicalSpec,
    residualize_length: bool = False,
) -> UnitGap:
    """Mean success-run adherence minus mean failure-run adherence.

    ``spec`` may still be a template; it is resolved for the unit's model.
    Propagates InsufficientSupportError when the consensus set cannot be
    built for this unit.
    """
    if unit.outcome_class is not OutcomeClass.MIXED:
        raise NotComputableError(f"unit {unit.key} is not mixed-outcome")
    resolved = spec.resolved_for(unit.model, corpus.family_map)
    canonical = consensus_set(unit.task, corpus, resolved)
    if resolved.generic_only and not canonical.tools:
        raise InsufficientSupportError(unit.task, canonical.support_count, resolved.min_successes)
    return _gap_from_canonical(unit, canonical, residualize_length)


def collect_unit_gaps(
    corpus: Corpus,
    spec: CanonicalSpec,
    residualize_length: bool = False,
) -> tuple[list[UnitGap], list[SkippedUnit]]:
    """Unit gaps for every mixed unit that supports the spec, sorted by key."""
    gaps: list[UnitGap] = []
    skipped: list[SkippedUnit] = []
    resolver = CanonicalResolver(corpus, spec)
    for unit in sorted(corpus.mixed_units(), key=lambda u: u.key):
        try:
            canonical = resolver.for_task_model(unit.task, unit.model)
            if spec.generic_only and not canonical.tools:
                raise InsufficientSupportError(
                    unit.task, canonical.support_count, spec.min_successes
                )
            gaps.append(_gap_from_canonical(unit, canonical, residualize_length))
        except InsufficientSupportError as exc:
            skipped.append(SkippedUnit(unit.model, unit.task, str(exc)))
    return gaps, skipped


@dataclass(frozen=True)
class GapResult:
    estimate: Estimate
    fraction_positive: float
    gaps: tuple[UnitGap, ...]
    skipped: tuple[SkippedUnit, ...]


def _estimate_from_deltas(
    deltas: Sequence[float],
    rng: RngPolicy,
    resamples: int,
    label: Hashable,
    workers: int = 1,
) -> Estimate:
    t_est = paired_t(deltas)
    if resamples > 0:
        boot = bootstrap_ci(
            list(deltas),
            lambda ds: sum(ds) / len(ds),
            resamples=resamples,
            rng=rng,
            label=label,
            workers=workers,
        )
        ci_low, ci_high = boot.ci_low, boot.ci_high
        method = f"paired_t+{boot.method}"
    else:
        ci_low = ci_high = float("nan")
        method = "paired_t"
    return Estimate(
        point=t_est.point,
        ci_low=ci_low,
        ci_high=ci_high,
        p_value=t_est.p_value,
        n=t_est.n,
        method=method,
    )


def main_gap(
    corpus: Corpus,
    spec: CanonicalSpec,
    rng: RngPolicy | None = None,
    resamples: int = 5000,
    workers: int = 1,
    residualize_length: bool = False,
) -> GapResult:
    """Mean within-unit gap with paired-t p-value and unit-clustered
    bootstrap interval. ``resamples=0`` skips the bootstrap (interval NaN)."""
    rng = rng or RngPolicy()
    gaps, skipped = collect_unit_gaps(corpus, spec, residualize_length=residualize_length)
    if len(gaps) < 2:
        raise NotComputableError(
            f"main gap needs >= 2 valid mixed units, found {len(gaps)}"
        )
    deltas = [g.delta for g in gaps]
    estimate = _estimate_from_deltas(
        deltas, rng, resamples, label=f"gap:{spec.label()}:{residualize_length}", workers=workers
    )
    return GapResult(
        estimate=estimate,
        fraction_positive=sum(1 for d in deltas if d > 0) / len(deltas),
        gaps=tuple(gaps),
        skipped=tuple(skipped),
    )


@dataclass(frozen=True)
class RobustnessRow:
    """One specification row: estimate or the reason it could not be computed."""

    spec_id: str
    estimate: Estimate | None
    fraction_positive: float | None
    n: int
    detail: str = ""

    @property
    def computed(self) -> bool:
        return self.estimate is not None


def _gap_row(
    spec_id: str,
    corpus: Corpus,
    spec: CanonicalSpec,
    rng: RngPolicy,
    resamples: int,
    workers: int,
    residualize_length: bool = False,
    detail: str = "",
) -> RobustnessRow:
    try:
        result = main_gap(
            corpus,
            spec,
            rng=rng,
            resamples=resamples,
            workers=workers,
            residualize_length=residualize_length,
        )
    except PathdriftError as exc:
        return RobustnessRow(spec_id=spec_id, estimate=None, fraction_positive=None, n=0, detail=str(exc))
    return RobustnessRow(
        spec_id=spec_id,
        estimate=result.estimate,
        fraction_positive=result.fraction_positive,
        n=result.estimate.n,
        detail=detail,
    )


def most_influential_task(gaps: Sequence[UnitGap]) -> tuple[str, float]:
    """Task whose removal moves the mean gap the most (ties break
    lexicographically). Returns (task, |shift|)."""
    tasks = sorted({g.task for g in gaps})
    if len(tasks) < 2:
        raise NotComputableError("leave-one-task-out needs >= 2 tasks")
    overall = sum(g.delta for g in gaps) / len(gaps)
    best_task, best_shift = "", -1.0
    for task in tasks:
        rest = [g.delta for g in gaps if g.task != task]
        if len(rest) < 2:
            continue
        shift = abs(sum(rest) / len(rest) - overall)
        if shift > best_shift:
            best_task, best_shift = task, shift
    if best_shift < 0:
        raise NotComputableError("no task can be removed while keeping >= 2 units")
    return best_task, best_shift


def robustness_suite(
    corpus: Corpus,
    rng: RngPolicy | None = None,
    resamples: int = 5000,
    thresholds: Sequence[float] = (0.4, 0.5, 0.6, 0.7),
    min_successes: int = 3,
    workers: int = 1,
) -> list[RobustnessRow]:
    """The full specification table: naive / LOO / CF-LOO scopes, the
    generic-tool and length controls, leave-one-task-out, and the threshold
    sweep. Rows that cannot be computed carry their reason instead."""
    rng = rng or RngPolicy()
    base = CanonicalSpec(kind=ScopeKind.CFLOO, min_successes=min_successes)
    rows = [
        _gap_row("naive", corpus, CanonicalSpec(kind=ScopeKind.NAIVE, min_successes=min_successes), rng, resamples, workers),
        _gap_row("loo", corpus, CanonicalSpec(kind=ScopeKind.LOO, min_successes=min_successes), rng, resamples, workers),
        _gap_row("cfloo", corpus, base, rng, resamples, workers),
        _gap_row("generic_only", corpus, replace(base, generic_only=True), rng, resamples, workers),
        _gap_row("length_residualized", corpus, base, rng, resamples, workers, residualize_length=True),
    ]

    try:
        base_gaps, _ = collect_unit_gaps(corpus, base)
        if len(base_gaps) < 2:
            raise NotComputableError("too few valid mixed units")
        dropped, _shift = most_influential_task(base_gaps)
        loto_corpus = corpus.restricted_to_tasks(
            t for t in corpus.tasks() if t != dropped
        )
        rows.append(
            _gap_row("loto", loto_corpus, base, rng, resamples, workers, detail=f"dropped={dropped}")
        )
    except PathdriftError as exc:
        rows.append(RobustnessRow("loto", None, None, 0, detail=str(exc)))

    for t in thresholds:
        rows.append(
            _gap_row(
                f"threshold_{int(round(t * 100))}",
                corpus,
                replace(base, threshold=t),
                rng,
                resamples,
                workers,
            )
        )
    return rows


@dataclass(frozen=True)
class PlaceboResult:
    estimate: Estimate
    n_minority_runs: int
    n_units: int


def placebo_first_tool(corpus: Corpus) -> PlaceboResult:
    """Success rate of minority first-tool choices inside mixed units.

    A run is a minority choice when its first tool is used by strictly fewer
    of the unit's runs than the modal first tool. Units whose runs all open
    with the same tool, or whose first-tool counts are all tied, contribute
    nothing. Tested against an even coin.
    """
    n_success = 0
    n_total = 0
    units_used = 0
    for unit in sorted(corpus.mixed_units(), key=lambda u: u.key):
        firsts = [run.calls[0].tool_name for run in unit.runs if run.calls]
        if len(firsts) < len(unit.runs) or len(set(firsts)) <= 1:
            continue
        counts = Counter(firsts)
        modal = max(counts.values())
        minority = [
            run
            for run in unit.runs
            if counts[run.calls[0].tool_name] < modal
        ]
        if not minority:
            continue  # all first tools tied
        units_used += 1
        for run in minority:
            n_total += 1
            n_success += int(run.success)
    if n_total == 0:
        raise NotComputableError(
            "no qualifying units: first tools never vary within mixed units"
        )
    return PlaceboResult(
        estimate=binomial_test(n_success, n_total, 0.5),
        n_minority_runs=n_total,
        n_units=units_used,
    )


@dataclass(frozen=True)
class FamilyRow:
    family: str
    estimate: Estimate | None
    fraction_positive: float | None
    n: int
    significant: bool | None
    detail: str = ""


def family_breakdown(
    corpus: Corpus,
    spec: CanonicalSpec,
    rng: RngPolicy | None = None,
    resamples: int = 5000,
    alpha: float = 0.05,
    workers: int = 1,
) -> list[FamilyRow]:
    """The main gap restricted to each model family's units."""
    rng = rng or RngPolicy()
    gaps, _ = collect_unit_gaps(corpus, spec)
    fam = corpus.family_map
    by_family: dict[str, list[UnitGap]] = {}
    for gap in gaps:
        by_family.setdefault(fam.family_of(gap.model), []).append(gap)

    rows: list[FamilyRow] = []
    for family in sorted(by_family):
        deltas = [g.delta for g in by_family[family]]
        if len(deltas) < 2:
            rows.append(
                FamilyRow(family, None, None, len(deltas), None, detail="fewer than 2 units")
            )
            continue
        try:
            est = _estimate_from_deltas(
                deltas, rng, resamples, label=f"family:{family}:{spec.label()}", workers=workers
            )
        except DegenerateVarianceError as exc:
            rows.append(FamilyRow(family, None, None, len(deltas), None, detail=str(exc)))
            continue
        rows.append(
            FamilyRow(
                family=family,
                estimate=est,
                fraction_positive=sum(1 for d in deltas if d > 0) / len(deltas),
                n=len(deltas),
                significant=est.p_value < alpha,
            )
        )
    return rows


@dataclass(frozen=True)
class TaskRow:
    task: str
    strength: float | None
    effect: float | None
    n_mixed_units: int
    success_rate: float
    canonical_size: int | None
    mean_length: float
    unique_tools: int


@dataclass(frozen=True)
class TaskBreakdown:
    rows: tuple[TaskRow, ...]
    correlations: Mapping[str, Estimate | None]
    n_tasks_with_effect: int
    fraction_positive_effect: float | None


def task_breakdown(corpus: Corpus, spec: CanonicalSpec) -> TaskBreakdown:
    """Per-task strength/effect table plus the cross-task predictor
    correlations. The naive 50% consensus supplies each task's canonical
    size so sizes are comparable across tasks."""
    gaps, _ = collect_unit_gaps(corpus, spec)
    effects: dict[str, list[float]] = {}
    for gap in gaps:
        effects.setdefault(gap.task, []).append(gap.delta)

    naive = CanonicalSpec(kind=ScopeKind.NAIVE, min_successes=spec.min_successes)
    rows: list[TaskRow] = []
    for task in corpus.tasks():
        runs = corpus.runs_on_task(task)
        try:
            strength = canonical_strength(task, corpus)
        except NotComputableError:
            strength = None
        try:
            size = len(consensus_set(task, corpus, naive).tools)
        except InsufficientSupportError:
            size = None
        deltas = effects.get(task)
        rows.append(
            TaskRow(
                task=task,
                strength=strength,
                effect=sum(deltas) / len(deltas) if deltas else None,
                n_mixed_units=len(deltas) if deltas else 0,
                success_rate=sum(1 for r in runs if r.success) / len(runs),
                canonical_size=size,
                mean_length=sum(len(r.calls) for r in runs) / len(runs),
                unique_tools=len({t for r in runs for t in distinct_tools(r)}),
            )
        )

    def correlate(pairs: list[tuple[float, float]]) -> Estimate | None:
        if len(pairs) < 3:
            return None
        try:
            return pearson([a for a, _ in pairs], [b for _, b in pairs])
        except (DegenerateVarianceError, NotComputableError):
            return None

    with_strength = [r for r in rows if r.strength is not None]
    with_effect = [r for r in rows if r.effect is not None]
    correlations = {
        "strength_vs_canonical_size": correlate(
            [(r.strength, float(r.canonical_size)) for r in with_strength if r.canonical_size is not None]
        ),
        "strength_vs_success_rate": correlate(
            [(r.strength, r.success_rate) for r in with_strength]
        ),
        "strength_vs_mean_length": correlate(
            [(r.strength, r.mean_length) for r in with_strength]
        ),
        "effect_vs_mean_length": correlate(
            [(r.effect, r.mean_length) for r in with_effect]
        ),
        "effect_vs_unique_tools": correlate(
            [(r.effect, float(r.unique_tools)) for r in with_effect]
        ),
    }
    positives = [r for r in with_effect if r.effect > 0]
    return TaskBreakdown(
        rows=tuple(rows),
        correlations=correlations,
        n_tasks_with_effect=len(with_effect),
        fraction_positive_effect=(
            len(positives) / len(with_effect) if with_effect else None
        ),
    )


def fit_mixed_logistic(corpus: Corpus, spec: CanonicalSpec) -> LogisticFit:
    """Logistic fit of run success on within-unit demeaned adherence over
    every mixed unit with a valid consensus set."""
    resolver = CanonicalResolver(corpus, spec)
    observations: list[tuple[Hashable, float, bool]] = []
    for unit in sorted(corpus.mixed_units(), key=lambda u: u.key):
        try:
            canonical = resolver.for_task_model(unit.task, unit.model)
        except InsufficientSupportError:
            continue
        if spec.generic_only and not canonical.tools:
            continue
        for run in unit.runs:
            observations.append((unit.key, adherence(run, canonical).value, run.success))
    if not observations:
        raise NotComputableError("no mixed-unit observations support the spec")
    return logistic_demeaned(observations)


@dataclass(frozen=True)
class LiftRow:
    gap: float
    odds_ratio: float
    lift_pp: float
    lift_pp_at_mean: float


@dataclass(frozen=True)
class LiftTable:
    fit: LogisticFit
    rows: tuple[LiftRow, ...]


def success_lift(
    corpus: Corpus,
    spec: CanonicalSpec,
    gaps: Sequence[float],
    fit: LogisticFit | None = None,
) -> LiftTable:
    """Translate Jaccard gaps into odds ratios and percentage-point lifts."""
    fit = fit or fit_mixed_logistic(corpus, spec)
    rows = tuple(
        LiftRow(
            gap=g,
            odds_ratio=fit.odds_ratio(g),
            lift_pp=fit.lift_pp(g, at="half"),
            lift_pp_at_mean=fit.lift_pp(g, at="mean"),
        )
        for g in gaps
    )
    return LiftTable(fit=fit, rows=rows)


@dataclass(frozen=True)
class FunnelReport:
    """Sample construction stages, from all loaded units to the analysis set."""

    total_units: int
    class_counts: Mapping[OutcomeClass, int]
    mixed_units: int
    mixed_by_success_count: Mapping[int, int]
    valid_units: int
    excluded_no_successes: int
    excluded_insufficient: int


def sample_funnel(corpus: Corpus, spec: CanonicalSpec) -> FunnelReport:
    """Re-derive each funnel stage: all units -> mixed -> spec-valid."""
    mixed = corpus.mixed_units()
    by_successes = Counter(len(u.successes) for u in mixed)
    valid = 0
    no_success = 0
    insufficient = 0
    resolver = CanonicalResolver(corpus, spec)
    for unit in sorted(mixed, key=lambda u: u.key):
        try:
            cset = resolver.for_task_model(unit.task, unit.model)
            if spec.generic_only and not cset.tools:
                insufficient += 1
                continue
            valid += 1
        except InsufficientSupportError:
            if not corpus.successful_runs(unit.task):
                no_success += 1
            else:
                insufficient += 1
    return FunnelReport(
        total_units=len(corpus.units),
        class_counts=corpus.class_counts(),
        mixed_units=len(mixed),
        mixed_by_success_count=dict(sorted(by_successes.items())),
        valid_units=valid,
        excluded_no_successes=no_success,
        excluded_insufficient=insufficient,
    )
