"""Trajectory corpus: loading, validation, unit classification, and indexing.

A corpus is an immutable collection of model x task units, each holding the
repeated runs of one model on one task. Ingestion is a single pass over
line-delimited records; everything downstream reads the corpus concurrently
without locks.
"""

from __future__ import annotations

import csv
import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import (
    CorpusFormatError,
    DuplicateRunError,
    FamilyMapError,
    PathdriftError,
)


class OutcomeClass(Enum):
    """How a unit's repeated runs came out."""

    ALWAYS_SUCCEED = "always_succeed"
    ALWAYS_FAIL = "always_fail"
    MIXED = "mixed"


@dataclass(frozen=True)
class ToolCall:
    """One tool invocation. Positions are contiguous and 1-based within a run."""

    position: int
    tool_name: str
    errored: bool = False


@dataclass(frozen=True)
class Run:
    """One trajectory: an ordered call sequence plus a binary outcome."""

    model: str
    task: str
    run_index: int
    success: bool
    calls: tuple[ToolCall, ...]

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.model, self.task, self.run_index)

    @cached_property
    def tool_set(self) -> frozenset[str]:
        return frozenset(c.tool_name for c in self.calls)

    def __len__(self) -> int:
        return len(self.calls)


def distinct_tools(run: Run) -> frozenset[str]:
    """Set of unique normalized tool names across the run's calls."""
    return run.tool_set


def classify_unit(runs: Iterable[Run]) -> OutcomeClass:
    """Classify a unit's runs: all succeed, all fail, or mixed.

    All runs must share the same (model, task) key and there must be at
    least one run.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("cannot classify an empty unit")
    keys = {(r.model, r.task) for r in runs}
    if len(keys) > 1:
        raise ValueError(f"runs span multiple units: {sorted(keys)}")
    successes = sum(1 for r in runs if r.success)
    if successes == len(runs):
        return OutcomeClass.ALWAYS_SUCCEED
    if successes == 0:
        return OutcomeClass.ALWAYS_FAIL
    return OutcomeClass.MIXED


@dataclass(frozen=True)
class Unit:
    """All runs of one model on one task."""

    model: str
    task: str
    runs: tuple[Run, ...]

    @property
    def key(self) -> tuple[str, str]:
        return (self.model, self.task)

    @cached_property
    def outcome_class(self) -> OutcomeClass:
        return classify_unit(self.runs)

    @property
    def successes(self) -> tuple[Run, ...]:
        return tuple(r for r in self.runs if r.success)

    @property
    def failures(self) -> tuple[Run, ...]:
        return tuple(r for r in self.runs if not r.success)


@dataclass(frozen=True)
class FamilyMap:
    """Total mapping from model id to family id."""

    mapping: Mapping[str, str]

    def family_of(self, model: str) -> str:
        try:
            return self.mapping[model]
        except KeyError:
            raise FamilyMapError(f"model {model!r} missing from family map") from None

    def require_total(self, models: Iterable[str]) -> None:
        missing = sorted(m for m in models if m not in self.mapping)
        if missing:
            raise FamilyMapError(f"models missing from family map: {missing}")

    def families(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.mapping.values())))


_VERSION_SPLIT = re.compile(r"\d")


def family_from_prefix(model: str) -> str:
    """Fallback family rule: model id up to the first digit group, separators
    stripped. Only applied when explicitly enabled; guessing silently would
    undermine cross-family exclusions."""
    m = _VERSION_SPLIT.search(model)
    prefix = model[: m.start()] if m else model
    prefix = prefix.rstrip("-_. ")
    return prefix or model


@dataclass(frozen=True)
class Corpus:
    """Immutable trajectory collection plus the lookup tables analyses need."""

    units: tuple[Unit, ...]
    family_map: FamilyMap
    task_domain_tokens: Mapping[str, frozenset[str]] = field(default_factory=dict)

    @cached_property
    def _runs_by_task(self) -> dict[str, tuple[Run, ...]]:
        by_task: dict[str, list[Run]] = {}
        for unit in self.units:
            for run in unit.runs:
                by_task.setdefault(run.task, []).append(run)
        return {t: tuple(rs) for t, rs in by_task.items()}

    def tasks(self) -> tuple[str, ...]:
        return tuple(sorted(self._runs_by_task))

    def models(self) -> tuple[str, ...]:
        return tuple(sorted({u.model for u in self.units}))

    def runs_on_task(self, task: str) -> tuple[Run, ...]:
        return self._runs_by_task.get(task, ())

    def successful_runs(self, task: str) -> tuple[Run, ...]:
        return tuple(r for r in self.runs_on_task(task) if r.success)

    def iter_runs(self) -> Iterator[Run]:
        for unit in self.units:
            yield from unit.runs

    def units_by_class(self, outcome: OutcomeClass) -> tuple[Unit, ...]:
        return tuple(u for u in self.units if u.outcome_class is outcome)

    def mixed_units(self) -> tuple[Unit, ...]:
        return self.units_by_class(OutcomeClass.MIXED)

    def class_counts(self) -> dict[OutcomeClass, int]:
        counts = Counter(u.outcome_class for u in self.units)
        return {oc: counts.get(oc, 0) for oc in OutcomeClass}

    def domain_tokens(self, task: str) -> frozenset[str]:
        return self.task_domain_tokens.get(task, frozenset())

    def restricted_to_tasks(self, keep: Iterable[str]) -> "Corpus":
        keep = set(keep)
        return replace(self, units=tuple(u for u in self.units if u.task in keep))


@dataclass(frozen=True)
class LoaderOptions:
    """Knobs for ingestion.

    runs_per_unit: expected run count k per unit; units with a different
        count are dropped with a warning (``on_bad_unit="drop"``) or abort
        ingestion (``"reject"``).
    allow_empty_runs: accept runs with zero tool calls.
    derive_families: when a model is absent from the family map, fall back
        to the prefix rule instead of failing.
    """

    runs_per_unit: int = 3
    on_bad_unit: str = "drop"
    allow_empty_runs: bool = False
    derive_families: bool = False

    def __post_init__(self):
        if self.runs_per_unit < 1:
            raise ValueError("runs_per_unit must be >= 1")
        if self.on_bad_unit not in ("drop", "reject"):
            raise ValueError("on_bad_unit must be 'drop' or 'reject'")


@dataclass
class IngestReport:
    """What ingestion saw: totals, drops, and the outcome-class census."""

    total_records: int = 0
    units_kept: int = 0
    units_dropped: int = 0
    runs_dropped: int = 0
    class_counts: dict[OutcomeClass, int] = field(
        default_factory=lambda: {oc: 0 for oc in OutcomeClass}
    )
    warnings: list[str] = field(default_factory=list)


@dataclass
class IngestResult:
    corpus: Corpus
    report: IngestReport


def _normalize_tool(raw: object, line: int) -> str:
    if not isinstance(raw, str):
        raise CorpusFormatError(f"tool name must be a string, got {raw!r}", line)
    name = raw.strip()
    if not name:
        raise CorpusFormatError("tool name is empty after normalization", line)
    return name


def _parse_record(line_no: int, text: str, allow_empty: bool) -> Run:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"invalid JSON ({exc.msg})", line_no) from None
    if not isinstance(obj, dict):
        raise CorpusFormatError("record must be a JSON object", line_no)

    for key, kind in (("model", str), ("task", str), ("run_index", int), ("success", bool)):
        if key not in obj:
            raise CorpusFormatError(f"missing field {key!r}", line_no)
        if not isinstance(obj[key], kind) or isinstance(obj[key], bool) != (kind is bool):
            raise CorpusFormatError(
                f"field {key!r} must be {kind.__name__}, got {obj[key]!r}", line_no
            )
    raw_calls = obj.get("calls")
    if not isinstance(raw_calls, list):
        raise CorpusFormatError("field 'calls' must be a list", line_no)
    if not raw_calls and not allow_empty:
        raise CorpusFormatError("run has no tool calls (allow_empty_runs disabled)", line_no)

    calls = []
    for i, c in enumerate(raw_calls):
        if not isinstance(c, dict) or "tool" not in c:
            raise CorpusFormatError(f"call #{i + 1} must be an object with a 'tool' field", line_no)
        errored = c.get("errored", False)
        if not isinstance(errored, bool):
            raise CorpusFormatError(f"call #{i + 1}: 'errored' must be a boolean", line_no)
        calls.append(ToolCall(position=i + 1, tool_name=_normalize_tool(c["tool"], line_no), errored=errored))

    return Run(
        model=obj["model"].strip(),
        task=obj["task"].strip(),
        run_index=obj["run_index"],
        success=obj["success"],
        calls=tuple(calls),
    )


def ingest(
    lines: Iterable[str],
    family_map: FamilyMap | Mapping[str, str] | None = None,
    options: LoaderOptions | None = None,
    task_domain_tokens: Mapping[str, Iterable[str]] | None = None,
) -> IngestResult:
    """Parse line-delimited trajectory records into a validated corpus.

    Blank lines are skipped. Any malformed record aborts ingestion with the
    offending line number; duplicates report both lines involved.
    """
    options = options or LoaderOptions()
    if family_map is None:
        family_map = FamilyMap({})
    elif not isinstance(family_map, FamilyMap):
        family_map = FamilyMap(dict(family_map))

    report = IngestReport()
    seen: dict[tuple[str, str, int], int] = {}
    grouped: dict[tuple[str, str], list[Run]] = {}

    for line_no, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        run = _parse_record(line_no, text, options.allow_empty_runs)
        if not run.model or not run.task:
            raise CorpusFormatError("model and task ids must be non-empty", line_no)
        if not 1 <= run.run_index <= options.runs_per_unit:
            raise CorpusFormatError(
                f"run_index {run.run_index} outside 1..{options.runs_per_unit}", line_no
            )
        if run.key in seen:
            raise DuplicateRunError(
                f"duplicate (model, task, run_index) {run.key}: "
                f"first seen on line {seen[run.key]}",
                line_no,
            )
        seen[run.key] = line_no
        report.total_records += 1
        grouped.setdefault((run.model, run.task), []).append(run)

    units: list[Unit] = []
    for key in sorted(grouped):
        runs = tuple(sorted(grouped[key], key=lambda r: r.run_index))
        if len(runs) != options.runs_per_unit:
            msg = (
                f"unit {key} has {len(runs)} run(s), expected {options.runs_per_unit}"
            )
            if options.on_bad_unit == "reject":
                raise CorpusFormatError(msg)
            report.warnings.append(msg + "; dropped")
            report.units_dropped += 1
            report.runs_dropped += len(runs)
            continue
        units.append(Unit(model=key[0], task=key[1], runs=runs))

    models = {u.model for u in units}
    mapping = dict(family_map.mapping)
    missing = sorted(m for m in models if m not in mapping)
    if missing:
        if not options.derive_families:
            raise FamilyMapError(f"models missing from family map: {missing}")
        for m in missing:
            mapping[m] = family_from_prefix(m)
            report.warnings.append(f"derived family {mapping[m]!r} for model {m!r}")

    tokens = {
        task: frozenset(t.strip() for t in toks if t.strip())
        for task, toks in (task_domain_tokens or {}).items()
    }
    corpus = Corpus(
        units=tuple(units),
        family_map=FamilyMap(mapping),
        task_domain_tokens=tokens,
    )
    report.units_kept = len(units)
    report.class_counts = corpus.class_counts()
    return IngestResult(corpus=corpus, report=report)


def export_records(corpus: Corpus) -> Iterator[dict]:
    """Records in the same schema ``ingest`` reads, unit-key order."""
    for unit in sorted(corpus.units, key=lambda u: u.key):
        for run in unit.runs:
            yield {
                "model": run.model,
                "task": run.task,
                "run_index": run.run_index,
                "success": run.success,
                "calls": [
                    {"tool": c.tool_name, "errored": c.errored} for c in run.calls
                ],
            }


def dump_records(corpus: Corpus) -> str:
    return "\n".join(json.dumps(r, sort_keys=True) for r in export_records(corpus)) + "\n"


def read_family_map(path: str | Path) -> FamilyMap:
    """Two-column CSV, ``model,family`` per line. A ``model,family`` header
    row is tolerated."""
    mapping: dict[str, str] = {}
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise CorpusFormatError(f"family map row must have 2 columns, got {row!r}", i)
            model, family = row[0].strip(), row[1].strip()
            if i == 1 and (model, family) == ("model", "family"):
                continue
            if not model or not family:
                raise CorpusFormatError("empty model or family id", i)
            mapping[model] = family
    return FamilyMap(mapping)


def read_domain_tokens(path: str | Path) -> dict[str, frozenset[str]]:
    """JSON object mapping task id to a list of domain token strings."""
    with open(path) as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise PathdriftError("domain token file must be a JSON object")
    out: dict[str, frozenset[str]] = {}
    for task, toks in obj.items():
        if not isinstance(toks, list) or not all(isinstance(t, str) for t in toks):
            raise PathdriftError(f"domain tokens for task {task!r} must be a list of strings")
        out[task] = frozenset(t.strip() for t in toks if t.strip())
    return out


def load_corpus_file(
    trajectories: str | Path,
    family_map: str | Path | None = None,
    domain_tokens: str | Path | None = None,
    options: LoaderOptions | None = None,
) -> IngestResult:
    fmap = read_family_map(family_map) if family_map else None
    tokens = read_domain_tokens(domain_tokens) if domain_tokens else None
    with open(trajectories) as fh:
        return ingest(fh, family_map=fmap, options=options, task_domain_tokens=tokens)
