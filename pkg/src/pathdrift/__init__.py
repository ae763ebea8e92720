"""Consensus-path reliability analytics for repeated agent runs.

Extract empirical consensus tool sets from successful trajectories, measure
Jaccard adherence, estimate within-unit success/failure gaps with their
robustness program, characterize drift dynamics, score per-model
reliability, and simulate the adherence-based restart monitor.
"""

from .adherence import (
    AdherenceValue,
    Checkpoint,
    adherence,
    jaccard,
    length_residualize,
    partial_adherence,
)
from .canonical import (
    CanonicalResolver,
    CanonicalSet,
    CanonicalSpec,
    ScopeKind,
    canonical_strength,
    canonical_table,
    consensus_set,
)
from .corpus import (
    Corpus,
    FamilyMap,
    IngestResult,
    LoaderOptions,
    OutcomeClass,
    Run,
    ToolCall,
    Unit,
    classify_unit,
    distinct_tools,
    dump_records,
    export_records,
    ingest,
    load_corpus_file,
)
from .dynamics import (
    DriftCurvePoint,
    TransitionPair,
    adherence_gradient,
    did_early_branching,
    drift_curve,
    transition_regression,
    variance_signature,
)
from .errors import (
    CorpusFormatError,
    DegenerateVarianceError,
    DuplicateRunError,
    EmptyComparisonError,
    FamilyMapError,
    InsufficientSupportError,
    NotComputableError,
    PathdriftError,
    SeparationError,
    SessionError,
)
from .gaps import (
    GapResult,
    RobustnessRow,
    UnitGap,
    family_breakdown,
    main_gap,
    placebo_first_tool,
    robustness_suite,
    sample_funnel,
    success_lift,
    task_breakdown,
    unit_gap,
)
from .monitor import (
    CalibrationSource,
    Decision,
    MonitorProfile,
    MonitorSession,
    calibrate,
    replay_run,
    simulate_policy,
)
from .reliability import (
    InterventionPolicy,
    ModelReliability,
    intervention_lift,
    per_model_metrics,
    tercile_cutoff,
)
from .stats import (
    Estimate,
    FEGroup,
    FeLpmResult,
    LogisticFit,
    RngPolicy,
    binomial_test,
    bootstrap_ci,
    fe_lpm,
    logistic_demeaned,
    paired_t,
    pearson,
    two_sample_t,
)
from .synth import CouplingSpec, GeneratorConfig, GroundTruth, expected_metrics, generate

__version__ = "0.1.0"
