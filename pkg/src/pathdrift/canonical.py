"""Consensus tool sets: the empirical core of a task's successful behavior.

A consensus set keeps every tool used in strictly more than a threshold
fraction of a task's successful runs, optionally after excluding one model's
runs (leave-one-out) or one whole model family's runs (cross-family
leave-one-out) from the evidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations
from typing import Mapping

from .adherence import jaccard
from .corpus import Corpus, FamilyMap, distinct_tools
from .errors import InsufficientSupportError, NotComputableError


class ScopeKind(str, Enum):
    """Which successful runs count as evidence for the consensus."""

    NAIVE = "naive"   # every successful run on the task
    LOO = "loo"       # all but the target model's successes
    CFLOO = "cfloo"   # all but the target family's successes


@dataclass(frozen=True)
class CanonicalSpec:
    """A consensus-set definition.

    ``exclude`` names the model (LOO) or family (CFLOO) whose successful runs
    are removed from the evidence; it stays ``None`` on templates that are
    later resolved per unit via :meth:`resolved_for`.
    """

    kind: ScopeKind = ScopeKind.CFLOO
    exclude: str | None = None
    threshold: float = 0.5
    min_successes: int = 3
    generic_only: bool = False

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.min_successes < 1:
            raise ValueError(f"min_successes must be >= 1, got {self.min_successes}")
        if self.kind is ScopeKind.NAIVE and self.exclude is not None:
            raise ValueError("naive scope takes no exclusion target")

    def resolved_for(self, model: str, family_map: FamilyMap) -> "CanonicalSpec":
        """Concrete spec for one unit: LOO excludes the model itself, CFLOO
        excludes its whole family."""
        if self.kind is ScopeKind.NAIVE:
            return self
        target = model if self.kind is ScopeKind.LOO else family_map.family_of(model)
        return replace(self, exclude=target)

    @property
    def is_template(self) -> bool:
        return self.kind is not ScopeKind.NAIVE and self.exclude is None

    def label(self) -> str:
        parts = [self.kind.value]
        if self.exclude is not None:
            parts.append(self.exclude)
        parts.append(f"t{self.threshold:g}")
        parts.append(f"m{self.min_successes}")
        if self.generic_only:
            parts.append("generic")
        return ":".join(parts)


@dataclass(frozen=True)
class CanonicalSet:
    """The consensus tools for one task under one spec.

    ``per_tool_frequency`` keeps the support fraction for every tool seen in
    the evidence (not just the retained ones) so threshold sweeps do not have
    to recount.
    """

    task: str
    spec: CanonicalSpec
    tools: frozenset[str]
    support_count: int
    per_tool_frequency: Mapping[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tools)


def _evidence_runs(task: str, corpus: Corpus, spec: CanonicalSpec):
    successes = corpus.successful_runs(task)
    if spec.kind is ScopeKind.LOO:
        successes = tuple(r for r in successes if r.model != spec.exclude)
    elif spec.kind is ScopeKind.CFLOO:
        fam = corpus.family_map
        successes = tuple(r for r in successes if fam.family_of(r.model) != spec.exclude)
    return successes


def matches_domain_token(tool: str, tokens: frozenset[str]) -> bool:
    """Case-insensitive substring match of any configured token."""
    lowered = tool.lower()
    return any(tok.lower() in lowered for tok in tokens)


def consensus_set(task: str, corpus: Corpus, spec: CanonicalSpec) -> CanonicalSet:
    """Compute the consensus tool set for ``task`` under ``spec``.

    Tools are retained when their support fraction is strictly greater than
    the threshold. With ``generic_only``, tools containing any of the task's
    domain tokens are removed after thresholding.

    Raises InsufficientSupportError when fewer than ``min_successes``
    successful runs remain after the scope exclusion.
    """
    if spec.is_template:
        raise ValueError(f"{spec.kind.value} spec has no exclusion target; resolve it first")
    evidence = _evidence_runs(task, corpus, spec)
    if len(evidence) < spec.min_successes:
        raise InsufficientSupportError(task, len(evidence), spec.min_successes)

    counts: dict[str, int] = {}
    for run in evidence:
        for tool in distinct_tools(run):
            counts[tool] = counts.get(tool, 0) + 1
    n = len(evidence)
    frequency = {tool: c / n for tool, c in sorted(counts.items())}
    tools = {tool for tool, f in frequency.items() if f > spec.threshold}
    if spec.generic_only:
        tokens = corpus.domain_tokens(task)
        tools = {t for t in tools if not matches_domain_token(t, tokens)}
    return CanonicalSet(
        task=task,
        spec=spec,
        tools=frozenset(tools),
        support_count=n,
        per_tool_frequency=frequency,
    )


def canonical_strength(task: str, corpus: Corpus) -> float:
    """Mean pairwise Jaccard similarity among the task's successful runs."""
    successes = corpus.successful_runs(task)
    if len(successes) < 2:
        raise NotComputableError(
            f"task {task!r}: canonical strength needs >= 2 successful runs, "
            f"have {len(successes)}"
        )
    sims = [
        jaccard(distinct_tools(a), distinct_tools(b))
        for a, b in combinations(successes, 2)
    ]
    return sum(sims) / len(sims)


class CanonicalResolver:
    """Per-corpus cache of consensus sets keyed by (task, concrete spec).

    Resolving a CFLOO/LOO template for every unit re-asks for the same few
    (task, exclusion) combinations; the cache makes that cheap. Raised
    InsufficientSupportError is cached too so repeated misses stay cheap.
    """

    def __init__(self, corpus: Corpus, template: CanonicalSpec):
        self.corpus = corpus
        self.template = template
        self._cache: dict[tuple[str, CanonicalSpec], CanonicalSet | InsufficientSupportError] = {}

    def spec_for_model(self, model: str) -> CanonicalSpec:
        return self.template.resolved_for(model, self.corpus.family_map)

    def for_task_model(self, task: str, model: str) -> CanonicalSet:
        """Consensus set for ``task`` with the template resolved for ``model``."""
        spec = self.spec_for_model(model)
        key = (task, spec)
        hit = self._cache.get(key)
        if hit is None:
            try:
                hit = consensus_set(task, self.corpus, spec)
            except InsufficientSupportError as exc:
                hit = exc
            self._cache[key] = hit
        if isinstance(hit, InsufficientSupportError):
            raise hit
        return hit


@dataclass(frozen=True)
class CanonicalTableRow:
    task: str
    spec: CanonicalSpec
    tools: tuple[str, ...]
    support_count: int
    strength: float | None
    generic_share: float | None  # domain-token share of the consensus tools


@dataclass(frozen=True)
class CanonicalTable:
    rows: tuple[CanonicalTableRow, ...]
    skipped: tuple[tuple[str, str], ...]  # (task, reason)
    strong_fraction: float | None
    mean_generic_share: float | None
    strength_cutoff: float


def canonical_table(
    corpus: Corpus,
    spec: CanonicalSpec,
    strength_cutoff: float = 0.6,
) -> CanonicalTable:
    """Per-task consensus sets plus the strong-path and generic-share summary.

    Tasks failing the support requirement are listed as skipped rather than
    raising.
    """
    rows: list[CanonicalTableRow] = []
    skipped: list[tuple[str, str]] = []
    for task in corpus.tasks():
        try:
            cset = consensus_set(task, corpus, spec)
        except InsufficientSupportError as exc:
            skipped.append((task, str(exc)))
            continue
        try:
            strength = canonical_strength(task, corpus)
        except NotComputableError:
            strength = None
        tokens = corpus.domain_tokens(task)
        share = None
        if cset.tools:
            share = sum(
                1 for t in cset.tools if matches_domain_token(t, tokens)
            ) / len(cset.tools)
        rows.append(
            CanonicalTableRow(
                task=task,
                spec=spec,
                tools=tuple(sorted(cset.tools)),
                support_count=cset.support_count,
                strength=strength,
                generic_share=share,
            )
        )

    strengths = [r.strength for r in rows if r.strength is not None]
    shares = [r.generic_share for r in rows if r.generic_share is not None]
    return CanonicalTable(
        rows=tuple(rows),
        skipped=tuple(skipped),
        strong_fraction=(
            sum(1 for s in strengths if s > strength_cutoff) / len(strengths)
            if strengths
            else None
        ),
        mean_generic_share=sum(shares) / len(shares) if shares else None,
        strength_cutoff=strength_cutoff,
    )
