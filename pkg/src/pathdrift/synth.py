"""Synthetic corpora with known ground truth.

Runs are generated by a two-state process: after an on-consensus call the
next call leaves the consensus set with the base probability; after an
off-consensus call the probability rises by the persistence boost. Success
is sampled from a coupling applied to the run's final adherence against the
designed tool set, so every analysis can be validated against parameters
that are known by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .corpus import Corpus, FamilyMap, Run, ToolCall, Unit
from .stats import RngPolicy


@dataclass(frozen=True)
class CouplingSpec:
    """Success probability as a function of final adherence.

    ``logistic``: sigmoid(slope * (adherence - midpoint)); a positive slope
    makes the success/adherence relationship strictly increasing.
    ``constant``: adherence-independent success (the null case).
    """

    kind: str = "logistic"
    slope: float = 8.0
    midpoint: float = 0.6
    constant: float = 0.5

    def __post_init__(self):
        if self.kind not in ("logistic", "constant"):
            raise ValueError(f"unknown coupling kind {self.kind!r}")
        if self.kind == "constant" and not 0.0 <= self.constant <= 1.0:
            raise ValueError("constant coupling needs a probability in [0, 1]")

    def probability(self, adherence: float) -> float:
        if self.kind == "constant":
            return self.constant
        z = self.slope * (adherence - self.midpoint)
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        ez = math.exp(z)
        return ez / (1.0 + ez)

    @property
    def increasing(self) -> bool:
        return self.kind == "logistic" and self.slope > 0

    @property
    def is_null(self) -> bool:
        return self.kind == "constant"


@dataclass(frozen=True)
class GeneratorConfig:
    n_models: int = 12
    n_families: int = 4
    n_tasks: int = 20
    runs_per_unit: int = 3
    canonical_size: int = 5
    tool_universe_size: int = 20
    calls_per_run: int = 30
    base_off_rate: float = 0.15
    persistence_boost: float = 0.25
    drift_onset_fraction: float = 0.0
    coupling: CouplingSpec = field(default_factory=CouplingSpec)
    domain_token_count: int = 0  # canonical tools carrying the task's token
    master_seed: int = 0

    def __post_init__(self):
        if min(self.n_models, self.n_families, self.n_tasks, self.runs_per_unit) < 1:
            raise ValueError("counts must be >= 1")
        if self.n_families > self.n_models:
            raise ValueError("cannot have more families than models")
        if self.canonical_size < 1 or self.canonical_size > self.tool_universe_size:
            raise ValueError("need 1 <= canonical_size <= tool_universe_size")
        if self.canonical_size == self.tool_universe_size and (
            self.base_off_rate > 0 or self.persistence_boost > 0
        ):
            raise ValueError("off-consensus calls need tools outside the consensus set")
        if self.calls_per_run < 1:
            raise ValueError("calls_per_run must be >= 1")
        if not 0.0 <= self.base_off_rate <= 1.0:
            raise ValueError("base_off_rate must be in [0, 1]")
        if self.persistence_boost < 0 or self.base_off_rate + self.persistence_boost > 1.0:
            raise ValueError("need base_off_rate + persistence_boost <= 1")
        if not 0.0 <= self.drift_onset_fraction <= 1.0:
            raise ValueError("drift_onset_fraction must be in [0, 1]")
        if self.domain_token_count > self.canonical_size:
            raise ValueError("domain_token_count cannot exceed canonical_size")


@dataclass(frozen=True)
class GroundTruth:
    injected_beta: float
    expected_off_rate: float
    gap_sign_positive: bool | None  # None when the coupling is flat
    null: bool


def expected_metrics(config: GeneratorConfig) -> GroundTruth:
    """Closed-form targets: the injected transition boost and the two-state
    chain's stationary off-consensus rate base / (1 - boost)."""
    if config.persistence_boost >= 1.0:
        stationary = 1.0
    else:
        stationary = config.base_off_rate / (1.0 - config.persistence_boost)
    return GroundTruth(
        injected_beta=config.persistence_boost,
        expected_off_rate=stationary,
        gap_sign_positive=True if config.coupling.increasing else None,
        null=config.coupling.is_null,
    )


def _model_name(i: int) -> str:
    return f"model{i:02d}"


def _family_name(i: int) -> str:
    return f"family{i:02d}"


def _task_name(j: int) -> str:
    return f"task{j:02d}"


def _task_tools(config: GeneratorConfig, j: int) -> tuple[list[str], list[str]]:
    task = _task_name(j)
    canonical = [
        f"{task}-dom{i}" if i < config.domain_token_count else f"core{j:02d}x{i}"
        for i in range(config.canonical_size)
    ]
    off = [
        f"alt{j:02d}x{i}"
        for i in range(config.tool_universe_size - config.canonical_size)
    ]
    return canonical, off


def _generate_run(
    config: GeneratorConfig,
    rng_policy: RngPolicy,
    model: str,
    task_idx: int,
    run_index: int,
    canonical: list[str],
    off_pool: list[str],
) -> Run:
    rng = rng_policy.stream("synth", model, _task_name(task_idx), run_index)
    length = config.calls_per_run
    onset = math.ceil(config.drift_onset_fraction * length)
    calls = []
    prev_off = False
    for pos in range(1, length + 1):
        if pos <= onset:
            off = False
        else:
            p = config.base_off_rate + (config.persistence_boost if prev_off else 0.0)
            off = bool(rng.random() < p)
        pool = off_pool if off else canonical
        tool = pool[int(rng.integers(0, len(pool)))]
        calls.append(ToolCall(position=pos, tool_name=tool, errored=False))
        prev_off = off
    tool_set = {c.tool_name for c in calls}
    target = set(canonical)
    final_adherence = len(tool_set & target) / len(tool_set | target)
    success = bool(rng.random() < config.coupling.probability(final_adherence))
    return Run(
        model=model,
        task=_task_name(task_idx),
        run_index=run_index,
        success=success,
        calls=tuple(calls),
    )


def generate(config: GeneratorConfig) -> tuple[Corpus, GroundTruth]:
    """Deterministic corpus for ``config``: same config, same corpus.

    Per-run substreams are derived from (master seed, model, task, run), so
    generation order never matters.
    """
    rng_policy = RngPolicy(master_seed=config.master_seed)
    family_map = {
        _model_name(i): _family_name(i % config.n_families)
        for i in range(config.n_models)
    }
    domain_tokens = {}
    units = []
    for j in range(config.n_tasks):
        canonical, off_pool = _task_tools(config, j)
        if config.domain_token_count > 0:
            domain_tokens[_task_name(j)] = frozenset({f"{_task_name(j)}-dom"})
        for i in range(config.n_models):
            model = _model_name(i)
            runs = tuple(
                _generate_run(config, rng_policy, model, j, r, canonical, off_pool)
                for r in range(1, config.runs_per_unit + 1)
            )
            units.append(Unit(model=model, task=_task_name(j), runs=runs))
    units.sort(key=lambda u: u.key)
    corpus = Corpus(
        units=tuple(units),
        family_map=FamilyMap(family_map),
        task_domain_tokens=domain_tokens,
    )
    return corpus, expected_metrics(config)


def designed_canonical_tools(config: GeneratorConfig, task: str) -> frozenset[str]:
    """The ground-truth consensus set the generator built the task around."""
    for j in range(config.n_tasks):
        if _task_name(j) == task:
            canonical, _ = _task_tools(config, j)
            return frozenset(canonical)
    raise KeyError(f"unknown task {task!r}")
