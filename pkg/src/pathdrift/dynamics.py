"""Trajectory-resolved drift mechanics.

Four lenses on how runs diverge from the consensus path over time: the
checkpoint drift curve, the early-branching falsification (event-study
style), the self-reinforcing transition regression, and the variance /
gradient signatures across outcome classes.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

from .adherence import adherence, jaccard, partial_adherence, prefix_tool_set
from .canonical import CanonicalResolver, CanonicalSet, CanonicalSpec
from .corpus import Corpus, OutcomeClass, Run, Unit
from .errors import (
    DegenerateVarianceError,
    InsufficientSupportError,
    NotComputableError,
)
from .stats import (
    Estimate,
    FEGroup,
    FeLpmResult,
    RngPolicy,
    bootstrap_ci,
    fe_lpm,
    paired_t,
    pearson,
    two_sample_t,
)

DEFAULT_CHECKPOINTS = (0.10, 0.25, 0.50, 0.75, 1.00)


@dataclass(frozen=True)
class DriftCurvePoint:
    fraction: float
    estimate: Estimate
    n_units: int


def _drift_panel(
    corpus: Corpus,
    spec: CanonicalSpec,
    min_calls: int,
) -> list[tuple[Unit, CanonicalSet, tuple[Run, ...]]]:
    """Fixed panel for the drift curve: mixed units with a valid consensus
    set whose remaining >=min_calls runs still span both outcomes. The same
    panel serves every checkpoint so the curve is comparable across
    fractions."""
    resolver = CanonicalResolver(corpus, spec)
    panel = []
    for unit in sorted(corpus.mixed_units(), key=lambda u: u.key):
        try:
            canonical = resolver.for_task_model(unit.task, unit.model)
        except InsufficientSupportError:
            continue
        if spec.generic_only and not canonical.tools:
            continue
        eligible = tuple(r for r in unit.runs if len(r.calls) >= min_calls)
        if not any(r.success for r in eligible) or not any(not r.success for r in eligible):
            continue
        panel.append((unit, canonical, eligible))
    return panel


def drift_curve(
    corpus: Corpus,
    spec: CanonicalSpec,
    checkpoints: Sequence[float] = DEFAULT_CHECKPOINTS,
    min_calls: int = 4,
    rng: RngPolicy | None = None,
    resamples: int = 5000,
    workers: int = 1,
) -> list[DriftCurvePoint]:
    """Within-unit gap of prefix adherence at each completion checkpoint."""
    rng = rng or RngPolicy()
    panel = _drift_panel(corpus, spec, min_calls)
    if not panel:
        raise NotComputableError("no units eligible for the drift curve")

    points: list[DriftCurvePoint] = []
    for fraction in checkpoints:
        deltas: list[float] = []
        for _unit, canonical, runs in panel:
            values = [
                partial_adherence(r, canonical, fraction, min_calls=min_calls).value
                for r in runs
            ]
            succ = [v for v, r in zip(values, runs) if r.success]
            fail = [v for v, r in zip(values, runs) if not r.success]
            deltas.append(sum(succ) / len(succ) - sum(fail) / len(fail))
        t_est = paired_t(deltas)
        if resamples > 0:
            boot = bootstrap_ci(
                deltas,
                lambda ds: sum(ds) / len(ds),
                resamples=resamples,
                rng=rng,
                label=f"drift:{spec.label()}:{fraction:g}",
                workers=workers,
            )
            ci_low, ci_high = boot.ci_low, boot.ci_high
        else:
            ci_low = ci_high = float("nan")
        points.append(
            DriftCurvePoint(
                fraction=fraction,
                estimate=Estimate(
                    point=t_est.point,
                    ci_low=ci_low,
                    ci_high=ci_high,
                    p_value=t_est.p_value,
                    n=t_est.n,
                    method="paired_t+bootstrap" if resamples > 0 else "paired_t",
                ),
                n_units=len(deltas),
            )
        )
    return points


@dataclass(frozen=True)
class TransitionPair:
    trajectory: tuple[str, str, int]
    position: int
    prev_off: bool
    next_off: bool


def build_transition_pairs(
    corpus: Corpus,
    spec: CanonicalSpec,
) -> list[tuple[Run, CanonicalSet, list[TransitionPair]]]:
    """One entry per mixed-unit run: its consecutive-call pairs with the
    per-call off-consensus indicator (every call is scored, repeats included)."""
    resolver = CanonicalResolver(corpus, spec)
    out = []
    for unit in sorted(corpus.mixed_units(), key=lambda u: u.key):
        try:
            canonical = resolver.for_task_model(unit.task, unit.model)
        except InsufficientSupportError:
            continue
        if spec.generic_only and not canonical.tools:
            continue
        for run in unit.runs:
            flags = [c.tool_name not in canonical.tools for c in run.calls]
            pairs = [
                TransitionPair(run.key, t + 1, flags[t], flags[t + 1])
                for t in range(len(flags) - 1)
            ]
            out.append((run, canonical, pairs))
    return out


@dataclass(frozen=True)
class TransitionRegression:
    overall: FeLpmResult
    failed_runs: FeLpmResult | None
    succeeded_runs: FeLpmResult | None
    baseline_rate: float       # P(next off | previous call on-consensus)
    off_rate: float            # unconditional off-consensus call rate
    n_runs: int


def transition_regression(
    corpus: Corpus,
    spec: CanonicalSpec,
    stratify_by_outcome: bool = True,
) -> TransitionRegression:
    """Fixed-effects LPM of next-call off-consensus on previous-call status.

    Trajectories are the fixed-effect groups; units are the clusters for
    the interval. Stratified estimates refit on eventually-failing and
    eventually-succeeding runs separately.
    """
    per_run = build_transition_pairs(corpus, spec)
    groups: list[FEGroup] = []
    outcome_of: dict[tuple[str, str, int], bool] = {}
    n_calls = 0
    n_off = 0
    n_prev_on = 0
    n_prev_on_next_off = 0
    for run, canonical, pairs in per_run:
        n_calls += len(run.calls)
        n_off += sum(1 for c in run.calls if c.tool_name not in canonical.tools)
        if not pairs:
            continue
        for p in pairs:
            if not p.prev_off:
                n_prev_on += 1
                n_prev_on_next_off += int(p.next_off)
        groups.append(
            FEGroup(
                group_key=run.key,
                cluster_key=(run.model, run.task),
                x=tuple(float(p.prev_off) for p in pairs),
                y=tuple(float(p.next_off) for p in pairs),
            )
        )
        outcome_of[run.key] = run.success
    if not groups:
        raise NotComputableError("no transition pairs available under this spec")

    overall = fe_lpm(groups)
    failed = succeeded = None
    if stratify_by_outcome:
        fail_groups = [g for g in groups if not outcome_of[g.group_key]]
        succ_groups = [g for g in groups if outcome_of[g.group_key]]
        try:
            failed = fe_lpm(fail_groups)
        except (NotComputableError, DegenerateVarianceError):
            failed = None
        try:
            succeeded = fe_lpm(succ_groups)
        except (NotComputableError, DegenerateVarianceError):
            succeeded = None
    return TransitionRegression(
        overall=overall,
        failed_runs=failed,
        succeeded_runs=succeeded,
        baseline_rate=n_prev_on_next_off / n_prev_on if n_prev_on else float("nan"),
        off_rate=n_off / n_calls if n_calls else float("nan"),
        n_runs=len(groups),
    )


@dataclass(frozen=True)
class DidResult:
    """Early-vs-late deviator comparison around the first off-consensus call."""

    pretrend: Estimate
    did: Estimate
    dose_response: Estimate
    median_first_deviation: float
    n_early: int
    n_late: int


def did_early_branching(corpus: Corpus, spec: CanonicalSpec) -> DidResult:
    """Difference-in-differences check of the discrete-branching story.

    Deviating runs are split at the median first-deviation fraction. The
    pre-trend compares pre-deviation prefix adherence across the split; the
    DiD contrast compares the pre-to-full adherence change; dose-response
    correlates deviation timing with success.
    """
    per_run = build_transition_pairs(corpus, spec)
    records = []  # (first_fraction, pre_adherence, change, success)
    for run, canonical, _pairs in per_run:
        flags = [c.tool_name not in canonical.tools for c in run.calls]
        if True not in flags:
            continue
        first = flags.index(True)  # 0-based call index of first deviation
        fraction = (first + 1) / len(run.calls)
        prefix = frozenset(c.tool_name for c in run.calls[:first])
        pre = jaccard(prefix, canonical.tools) if (prefix or canonical.tools) else 0.0
        full = adherence(run, canonical).value
        records.append((fraction, pre, full - pre, run.success))
    if not records:
        raise NotComputableError("no run ever leaves the consensus set")

    fractions = sorted(f for f, _, _, _ in records)
    median = statistics.median(fractions)
    early = [r for r in records if r[0] <= median]
    late = [r for r in records if r[0] > median]
    if not early or not late:
        raise NotComputableError(
            "degenerate split: every run deviates at the same completion fraction"
        )
    pretrend = two_sample_t([r[1] for r in early], [r[1] for r in late])
    did = two_sample_t([r[2] for r in early], [r[2] for r in late])
    dose = pearson([r[0] for r in records], [float(r[3]) for r in records])
    return DidResult(
        pretrend=pretrend,
        did=did,
        dose_response=dose,
        median_first_deviation=median,
        n_early=len(early),
        n_late=len(late),
    )


@dataclass(frozen=True)
class VarianceSignature:
    outcome_class: OutcomeClass
    mean_std: float
    locked_in_fraction: float
    n_units: int


@dataclass(frozen=True)
class VarianceReport:
    signatures: tuple[VarianceSignature, ...]
    pairwise: Mapping[tuple[str, str], Estimate | None]
    locked_in_threshold: float


def variance_signature(
    corpus: Corpus,
    spec: CanonicalSpec,
    locked_in_threshold: float = 0.05,
) -> VarianceReport:
    """Within-unit adherence spread by outcome class.

    Locked-in units are those whose runs follow nearly identical tool sets
    (sample std below the threshold).
    """
    resolver = CanonicalResolver(corpus, spec)
    stds: dict[OutcomeClass, list[float]] = {oc: [] for oc in OutcomeClass}
    for unit in sorted(corpus.units, key=lambda u: u.key):
        try:
            canonical = resolver.for_task_model(unit.task, unit.model)
        except InsufficientSupportError:
            continue
        if spec.generic_only and not canonical.tools:
            continue
        values = [adherence(r, canonical).value for r in unit.runs]
        if len(values) < 2:
            continue
        stds[unit.outcome_class].append(statistics.stdev(values))

    signatures = []
    for oc in OutcomeClass:
        vals = stds[oc]
        if vals:
            signatures.append(
                VarianceSignature(
                    outcome_class=oc,
                    mean_std=sum(vals) / len(vals),
                    locked_in_fraction=sum(1 for v in vals if v < locked_in_threshold) / len(vals),
                    n_units=len(vals),
                )
            )
        else:
            signatures.append(
                VarianceSignature(outcome_class=oc, mean_std=float("nan"), locked_in_fraction=float("nan"), n_units=0)
            )

    pairwise: dict[tuple[str, str], Estimate | None] = {}
    classes = list(OutcomeClass)
    for i, a in enumerate(classes):
        for b in classes[i + 1 :]:
            key = (a.value, b.value)
            try:
                pairwise[key] = two_sample_t(stds[a], stds[b])
            except (NotComputableError, DegenerateVarianceError):
                pairwise[key] = None
    return VarianceReport(
        signatures=tuple(signatures),
        pairwise=pairwise,
        locked_in_threshold=locked_in_threshold,
    )


GRADIENT_ORDER = (
    "always_fail_runs",
    "mixed_failure_runs",
    "mixed_success_runs",
    "always_succeed_runs",
)


@dataclass(frozen=True)
class GradientGroup:
    label: str
    mean: float
    n_runs: int


@dataclass(frozen=True)
class GradientReport:
    groups: tuple[GradientGroup, ...]
    adjacent_tests: tuple[Estimate | None, ...]
    strictly_increasing: bool


def adherence_gradient(corpus: Corpus, spec: CanonicalSpec) -> GradientReport:
    """Mean adherence across the four run populations, ordered from
    always-fail runs up to always-succeed runs, with adjacent-pair tests."""
    resolver = CanonicalResolver(corpus, spec)
    buckets: dict[str, list[float]] = {label: [] for label in GRADIENT_ORDER}
    for unit in sorted(corpus.units, key=lambda u: u.key):
        try:
            canonical = resolver.for_task_model(unit.task, unit.model)
        except InsufficientSupportError:
            continue
        if spec.generic_only and not canonical.tools:
            continue
        for run in unit.runs:
            value = adherence(run, canonical).value
            if unit.outcome_class is OutcomeClass.ALWAYS_FAIL:
                buckets["always_fail_runs"].append(value)
            elif unit.outcome_class is OutcomeClass.ALWAYS_SUCCEED:
                buckets["always_succeed_runs"].append(value)
            elif run.success:
                buckets["mixed_success_runs"].append(value)
            else:
                buckets["mixed_failure_runs"].append(value)

    empty = [label for label in GRADIENT_ORDER if not buckets[label]]
    if empty:
        raise NotComputableError(f"empty adherence-gradient group(s): {empty}")

    groups = tuple(
        GradientGroup(label=label, mean=sum(buckets[label]) / len(buckets[label]), n_runs=len(buckets[label]))
        for label in GRADIENT_ORDER
    )
    tests: list[Estimate | None] = []
    for lo, hi in zip(GRADIENT_ORDER[:-1], GRADIENT_ORDER[1:]):
        try:
            tests.append(two_sample_t(buckets[hi], buckets[lo]))
        except (NotComputableError, DegenerateVarianceError):
            tests.append(None)
    increasing = all(a.mean < b.mean for a, b in zip(groups[:-1], groups[1:]))
    return GradientReport(groups=groups, adjacent_tests=tuple(tests), strictly_increasing=increasing)
