"""Jaccard adherence between trajectories and consensus tool sets.

Pure, stateless set arithmetic: full-trajectory adherence, prefix adherence
at completion checkpoints, and within-unit length residualization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, AbstractSet, Sequence

from .corpus import Run, distinct_tools
from .errors import EmptyComparisonError, PathdriftError

if TYPE_CHECKING:
    from .canonical import CanonicalSet


def jaccard(a: AbstractSet[str], b: AbstractSet[str]) -> float:
    """|a n b| / |a u b|. Both sets empty is an error, not a default score."""
    union = len(a | b)
    if union == 0:
        raise EmptyComparisonError("jaccard of two empty sets is undefined")
    return len(a & b) / union


@dataclass(frozen=True)
class AdherenceValue:
    value: float
    trajectory_tool_count: int
    canonical_size: int


@dataclass(frozen=True)
class Checkpoint:
    """A trajectory completion point: fraction plus the resolved prefix length."""

    fraction: float
    prefix_length: int

    @classmethod
    def for_run(cls, fraction: float, total_calls: int) -> "Checkpoint":
        if not 0.0 < fraction <= 1.0:
            raise ValueError(f"checkpoint fraction must be in (0, 1], got {fraction}")
        if total_calls < 1:
            raise ValueError("checkpoint needs at least one call")
        # ceil keeps the 10% prefix non-empty on short runs
        return cls(fraction=fraction, prefix_length=max(1, math.ceil(fraction * total_calls)))


def adherence(run: Run, canonical: "CanonicalSet") -> AdherenceValue:
    """Jaccard similarity of the run's distinct tool set to the consensus set."""
    tools = distinct_tools(run)
    return AdherenceValue(
        value=jaccard(tools, canonical.tools),
        trajectory_tool_count=len(tools),
        canonical_size=len(canonical.tools),
    )


def prefix_tool_set(run: Run, fraction: float) -> frozenset[str]:
    """Distinct tools among the first ceil(fraction * L) calls."""
    cp = Checkpoint.for_run(fraction, len(run.calls))
    return frozenset(c.tool_name for c in run.calls[: cp.prefix_length])


def partial_adherence(
    run: Run,
    canonical: "CanonicalSet",
    fraction: float,
    min_calls: int = 4,
) -> AdherenceValue:
    """Adherence of the run's prefix tool set against the full consensus set.

    The prefix is the first ceil(fraction * L) calls. Runs shorter than
    ``min_calls`` are rejected; drift analyses use the default of 4, monitor
    replay passes 1.
    """
    if len(run.calls) < min_calls:
        raise PathdriftError(
            f"run {run.key} has {len(run.calls)} calls, "
            f"need >= {min_calls} for partial adherence"
        )
    tools = prefix_tool_set(run, fraction)
    return AdherenceValue(
        value=jaccard(tools, canonical.tools),
        trajectory_tool_count=len(tools),
        canonical_size=len(canonical.tools),
    )


def length_residualize(values: Sequence[tuple[float, int]]) -> list[float]:
    """Residuals of adherence regressed on call count, within one unit.

    Simple OLS with intercept; when every run has the same length (degenerate
    regressor) residuals fall back to demeaned adherence. Residuals sum to
    zero either way.
    """
    if not values:
        return []
    ys = [v for v, _ in values]
    xs = [float(n) for _, n in values]
    y_mean = sum(ys) / len(ys)
    x_mean = sum(xs) / len(xs)
    sxx = sum((x - x_mean) ** 2 for x in xs)
    if len(values) < 2 or sxx == 0.0:
        return [y - y_mean for y in ys]
    sxy = sum((x - x_mean) * (y - y_mean) for x, y in zip(xs, ys))
    slope = sxy / sxx
    return [y - (y_mean + slope * (x - x_mean)) for x, y in zip(xs, ys)]
