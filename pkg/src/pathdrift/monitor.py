"""Streaming adherence monitor for live runs.

A session tracks one run call-by-call against a calibrated profile and emits
a flag/continue decision whenever the call count crosses a checkpoint of the
caller-supplied budget. The monitor never restarts anything itself; acting
on a decision is the caller's job. Offline replay over a corpus reconciles
the monitor against the counterfactual lift estimator: both must flag the
same runs under the same policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .adherence import jaccard
from .canonical import CanonicalResolver, CanonicalSet, CanonicalSpec, consensus_set
from .corpus import Corpus, Run, ToolCall
from .errors import (
    InsufficientSupportError,
    NotComputableError,
    SessionError,
)
from .reliability import (
    FlagCandidate,
    InterventionPolicy,
    InterventionReport,
    apply_policy,
    checkpoint_population,
    intervention_lift,
    tercile_cutoff,
)
from .stats import RngPolicy


class CalibrationSource(Enum):
    PER_TASK = "per_task"
    GLOBAL = "global"


@dataclass(frozen=True)
class MonitorProfile:
    """Calibrated monitoring parameters for one task."""

    task: str
    canonical: CanonicalSet
    checkpoint: float
    threshold: float
    source: CalibrationSource
    history_n: int


def _checkpoint_values(
    corpus: Corpus,
    task: str,
    canonical: CanonicalSet,
    checkpoint: float,
) -> list[float]:
    values = []
    for run in corpus.runs_on_task(task):
        if not run.calls:
            continue
        prefix = max(1, math.ceil(checkpoint * len(run.calls)))
        seen = frozenset(c.tool_name for c in run.calls[:prefix])
        values.append(jaccard(seen, canonical.tools) if (seen or canonical.tools) else 0.0)
    return values


def calibrate(
    corpus: Corpus,
    task: str,
    spec: CanonicalSpec,
    checkpoint: float = 0.75,
    min_history: int = 9,
) -> MonitorProfile:
    """Build a profile from historical checkpoint adherence.

    The flag threshold is the lower-tercile boundary of history. Tasks with
    fewer than ``min_history`` scored runs fall back to a global pool over
    every task that supports the spec.
    """
    canonical = consensus_set(task, corpus, spec)
    own = _checkpoint_values(corpus, task, canonical, checkpoint)
    if len(own) >= min_history:
        return MonitorProfile(
            task=task,
            canonical=canonical,
            checkpoint=checkpoint,
            threshold=tercile_cutoff(own),
            source=CalibrationSource.PER_TASK,
            history_n=len(own),
        )
    pooled: list[float] = []
    for other in corpus.tasks():
        try:
            other_canonical = consensus_set(other, corpus, spec) if other != task else canonical
        except InsufficientSupportError:
            continue
        pooled.extend(_checkpoint_values(corpus, other, other_canonical, checkpoint))
    if not pooled:
        raise NotComputableError(f"no history available to calibrate task {task!r}")
    return MonitorProfile(
        task=task,
        canonical=canonical,
        checkpoint=checkpoint,
        threshold=tercile_cutoff(pooled),
        source=CalibrationSource.GLOBAL,
        history_n=len(pooled),
    )


@dataclass(frozen=True)
class Decision:
    checkpoint: float
    at_call: int
    running_adherence: float
    threshold: float
    flagged: bool

    @property
    def action(self) -> str:
        return "flag_restart" if self.flagged else "continue"


@dataclass
class MonitorSession:
    """Single-writer state for one observed run.

    ``expected_calls`` is the caller's budget; decision points are
    ceil(checkpoint x budget). A live run that outlasts its budget is noted
    in the transcript and re-evaluated on the same checkpoint schedule over
    each further budget window.
    """

    profile: MonitorProfile
    expected_calls: int
    checkpoints: tuple[float, ...] = ()
    observed: int = 0
    running_set: set[str] = field(default_factory=set)
    decisions: dict[float, list[Decision]] = field(default_factory=dict)
    transcript: list[dict] = field(default_factory=list)
    closed: bool = False
    _overrun_noted: bool = field(default=False, repr=False)

    def __post_init__(self):
        if self.expected_calls < 1:
            raise ValueError("expected_calls must be >= 1")
        if not self.checkpoints:
            self.checkpoints = (self.profile.checkpoint,)
        self.checkpoints = tuple(sorted(set(self.checkpoints)))

    def _trigger_calls(self) -> dict[int, list[float]]:
        """Map of call index -> checkpoint fractions, over budget windows.

        Short budgets can land two fractions on the same call; each still
        gets its own decision.
        """
        window = self.observed // self.expected_calls  # 0 within budget
        triggers: dict[int, list[float]] = {}
        for m in range(window + 1):
            for cp in self.checkpoints:
                at = m * self.expected_calls + max(1, math.ceil(cp * self.expected_calls))
                triggers.setdefault(at, []).append(cp)
        return triggers

    @property
    def running_adherence(self) -> float:
        if not self.running_set and not self.profile.canonical.tools:
            return 0.0
        return jaccard(self.running_set, self.profile.canonical.tools)

    def observe(self, call: ToolCall) -> Decision | None:
        """Record one call; returns the decision if this call crosses a
        checkpoint, else None."""
        if self.closed:
            raise SessionError("observe() after session close")
        self.observed += 1
        self.running_set.add(call.tool_name)
        self.transcript.append(
            {"event": "observe", "call": self.observed, "tool": call.tool_name}
        )
        if self.observed == self.expected_calls + 1 and not self._overrun_noted:
            self._overrun_noted = True
            self.transcript.append(
                {"event": "budget_overrun", "call": self.observed, "budget": self.expected_calls}
            )
        fractions = self._trigger_calls().get(self.observed)
        if not fractions:
            return None
        decision = None
        for fraction in fractions:
            decision = Decision(
                checkpoint=fraction,
                at_call=self.observed,
                running_adherence=self.running_adherence,
                threshold=self.profile.threshold,
                # inclusive at the boundary: deterministic and replay-consistent
                flagged=self.running_adherence <= self.profile.threshold,
            )
            self.decisions.setdefault(fraction, []).append(decision)
            self.transcript.append(
                {
                    "event": "decide",
                    "call": self.observed,
                    "checkpoint": fraction,
                    "running_adherence": decision.running_adherence,
                    "threshold": decision.threshold,
                    "action": decision.action,
                }
            )
        return decision

    def decide(self, checkpoint: float | None = None) -> Decision:
        """The decision recorded at ``checkpoint`` (default: the profile's).

        Idempotent: repeated calls return the stored decision. Raises if the
        checkpoint has not been reached yet.
        """
        checkpoint = checkpoint if checkpoint is not None else self.profile.checkpoint
        matches = self.decisions.get(checkpoint)
        if not matches:
            raise SessionError(
                f"checkpoint {checkpoint:g} not reached after {self.observed} call(s)"
            )
        return matches[-1]

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.transcript.append({"event": "close", "call": self.observed})


def replay_run(run: Run, profile: MonitorProfile, budget: int | None = None) -> MonitorSession:
    """Feed a recorded run through a session; budget defaults to true length."""
    session = MonitorSession(profile=profile, expected_calls=budget or len(run.calls))
    for call in run.calls:
        session.observe(call)
    session.close()
    return session


@dataclass(frozen=True)
class ReplayRow:
    run_key: tuple[str, str, int]
    checkpoint_adherence: float
    threshold: float
    flagged: bool
    success: bool


@dataclass(frozen=True)
class ReplayReport:
    policy: InterventionPolicy
    rows: tuple[ReplayRow, ...]
    flagged_keys: frozenset[tuple[str, str, int]]
    lift: InterventionReport | None
    matches_lift_estimator: bool | None
    flagged_failure_rate: float | None
    unflagged_failure_rate: float | None


def simulate_policy(
    corpus: Corpus,
    spec: CanonicalSpec,
    policy: InterventionPolicy,
    rng: RngPolicy | None = None,
    resamples: int = 2000,
    workers: int = 1,
) -> ReplayReport:
    """Replay every mixed-outcome run through the monitor under ``policy``.

    Thresholds come from the same reference population the lift estimator
    uses, so the replayed flag set must match its flag set exactly; the
    report carries the reconciliation verdict.
    """
    population = checkpoint_population(corpus, spec, policy.checkpoint)
    if not population:
        return ReplayReport(
            policy=policy,
            rows=(),
            flagged_keys=frozenset(),
            lift=None,
            matches_lift_estimator=None,
            flagged_failure_rate=None,
            unflagged_failure_rate=None,
        )
    decisions = apply_policy(population, policy)

    resolver = CanonicalResolver(corpus, spec)
    by_key: dict[tuple[str, str, int], FlagCandidate] = {c.run_key: c for c in population}
    rows: list[ReplayRow] = []
    flagged_keys: set[tuple[str, str, int]] = set()
    for unit in sorted(corpus.mixed_units(), key=lambda u: u.key):
        for run in unit.runs:
            cand = by_key.get(run.key)
            if cand is None:
                continue
            if policy.kind == "tercile":
                threshold = decisions.global_cutoff
            else:
                threshold = cand.unit_mean_checkpoint - policy.margin
            canonical = resolver.for_task_model(unit.task, unit.model)
            profile = MonitorProfile(
                task=unit.task,
                canonical=canonical,
                checkpoint=policy.checkpoint,
                threshold=threshold,
                source=CalibrationSource.GLOBAL,
                history_n=len(population),
            )
            session = replay_run(run, profile)
            decision = session.decide(policy.checkpoint)
            if decision.flagged:
                flagged_keys.add(run.key)
            rows.append(
                ReplayRow(
                    run_key=run.key,
                    checkpoint_adherence=decision.running_adherence,
                    threshold=threshold,
                    flagged=decision.flagged,
                    success=run.success,
                )
            )

    lift = intervention_lift(
        corpus, spec, policy, rng=rng, resamples=resamples, workers=workers
    )
    flagged_rows = [r for r in rows if r.flagged]
    unflagged_rows = [r for r in rows if not r.flagged]
    return ReplayReport(
        policy=policy,
        rows=tuple(rows),
        flagged_keys=frozenset(flagged_keys),
        lift=lift,
        matches_lift_estimator=frozenset(flagged_keys) == lift.flagged_keys,
        flagged_failure_rate=(
            sum(1 for r in flagged_rows if not r.success) / len(flagged_rows)
            if flagged_rows
            else None
        ),
        unflagged_failure_rate=(
            sum(1 for r in unflagged_rows if not r.success) / len(unflagged_rows)
            if unflagged_rows
            else None
        ),
    )
