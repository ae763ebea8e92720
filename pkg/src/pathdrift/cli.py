"""Command-line pipeline: validate, extract, analyze, score, replay, generate.

Every subcommand reads flags (or PATHDRIFT_* environment variables), writes
CSV and/or structured-document artifacts under --out, and exits 0 on
success, 1 on input validation failure, and 2 on analysis error.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, replace
from pathlib import Path

import click

from . import dynamics, gaps, monitor, reliability, report, synth
from .canonical import CanonicalSpec, ScopeKind, canonical_table
from .corpus import Corpus, IngestResult, LoaderOptions, dump_records, load_corpus_file
from .errors import CorpusFormatError, FamilyMapError, PathdriftError
from .reliability import InterventionPolicy
from .report import ReportMeta, corpus_fingerprint, estimate_dict, estimate_fields, write_csv, write_doc
from .stats import RngPolicy

VALIDATION_EXIT = 1
ANALYSIS_EXIT = 2


@dataclass
class RunContext:
    corpus: Corpus
    spec: CanonicalSpec
    rng: RngPolicy
    seed: int
    resamples: int
    workers: int
    out_dir: Path
    formats: tuple[str, ...]
    checkpoint: float
    policy: InterventionPolicy
    meta: ReportMeta


def _fail_validation(message: str) -> None:
    click.echo(f"validation error: {message}", err=True)
    sys.exit(VALIDATION_EXIT)


def _fail_analysis(exc: Exception) -> None:
    module = type(exc).__module__
    click.echo(f"analysis error [{module}.{type(exc).__name__}]: {exc}", err=True)
    sys.exit(ANALYSIS_EXIT)


def _parse_policy(text: str, checkpoint: float) -> InterventionPolicy:
    if text == "tercile":
        return InterventionPolicy(kind="tercile", checkpoint=checkpoint)
    if text.startswith("below-mean:"):
        try:
            margin = float(text.split(":", 1)[1])
        except ValueError:
            raise click.BadParameter(f"bad margin in policy {text!r}")
        return InterventionPolicy(kind="below_unit_mean", checkpoint=checkpoint, margin=margin)
    raise click.BadParameter(f"policy must be 'tercile' or 'below-mean:MARGIN', got {text!r}")


def input_options(fn):
    fn = click.option("--input", "input_path", required=True, type=click.Path(), help="Trajectory records (JSONL).")(fn)
    fn = click.option("--family-map", "family_map_path", type=click.Path(), default=None, help="model,family CSV.")(fn)
    fn = click.option("--domain-tokens", "domain_tokens_path", type=click.Path(), default=None, help="task -> tokens JSON.")(fn)
    fn = click.option("--runs-per-unit", default=3, show_default=True, help="Expected runs per model x task unit.")(fn)
    fn = click.option("--derive-families", is_flag=True, help="Fall back to the model-prefix family rule.")(fn)
    return fn


def analysis_options(fn):
    fn = click.option("--scope", type=click.Choice([k.value for k in ScopeKind]), default="cfloo", show_default=True)(fn)
    fn = click.option("--threshold", default=0.5, show_default=True, help="Consensus support threshold (strict >).")(fn)
    fn = click.option("--min-successes", default=3, show_default=True, help="Minimum successful runs after exclusions.")(fn)
    fn = click.option("--generic-only", is_flag=True, help="Drop consensus tools carrying domain tokens.")(fn)
    fn = click.option("--resamples", default=5000, show_default=True, help="Bootstrap resamples (0 disables).")(fn)
    fn = click.option("--seed", default=0, show_default=True, help="Master seed for every stochastic step.")(fn)
    fn = click.option("--workers", default=1, show_default=True, help="Bootstrap worker threads (results identical).")(fn)
    fn = click.option("--checkpoint", default=0.75, show_default=True, help="Monitoring checkpoint fraction.")(fn)
    fn = click.option("--policy", default="tercile", show_default=True, help="tercile | below-mean:MARGIN")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True)(fn)
    fn = click.option("--format", "formats", type=click.Choice(["csv", "doc", "both"]), default="both", show_default=True)(fn)
    return fn


def _load(input_path, family_map_path, domain_tokens_path, runs_per_unit, derive_families) -> IngestResult:
    options = LoaderOptions(runs_per_unit=runs_per_unit, derive_families=derive_families)
    try:
        return load_corpus_file(
            input_path,
            family_map=family_map_path,
            domain_tokens=domain_tokens_path,
            options=options,
        )
    except (CorpusFormatError, FamilyMapError, OSError, PathdriftError) as exc:
        _fail_validation(str(exc))


def _context(
    input_path,
    family_map_path,
    domain_tokens_path,
    runs_per_unit,
    derive_families,
    scope,
    threshold,
    min_successes,
    generic_only,
    resamples,
    seed,
    workers,
    checkpoint,
    policy,
    out_dir,
    formats,
) -> RunContext:
    result = _load(input_path, family_map_path, domain_tokens_path, runs_per_unit, derive_families)
    if not result.corpus.units:
        _fail_validation("corpus contains zero complete units")
    try:
        spec = CanonicalSpec(
            kind=ScopeKind(scope),
            threshold=threshold,
            min_successes=min_successes,
            generic_only=generic_only,
        )
        pol = _parse_policy(policy, checkpoint)
    except ValueError as exc:
        _fail_validation(str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fmt = ("csv", "doc") if formats == "both" else (formats,)
    return RunContext(
        corpus=result.corpus,
        spec=spec,
        rng=RngPolicy(master_seed=seed),
        seed=seed,
        resamples=resamples,
        workers=workers,
        out_dir=out,
        formats=fmt,
        checkpoint=checkpoint,
        policy=pol,
        meta=ReportMeta(seed=seed, spec=spec, fingerprint=corpus_fingerprint(result.corpus)),
    )


def _emit(ctx: RunContext, name: str, header, rows, doc: dict) -> None:
    if "csv" in ctx.formats:
        write_csv(ctx.out_dir / f"{name}.csv", header, rows, meta=ctx.meta)
    if "doc" in ctx.formats:
        write_doc(ctx.out_dir / f"{name}.json", doc, meta=ctx.meta)


@click.group()
@click.version_option(report.ARTIFACT_VERSION, prog_name="pathdrift")
def cli():
    """Consensus-path reliability analytics over repeated agent runs."""


@cli.command()
@input_options
def validate(input_path, family_map_path, domain_tokens_path, runs_per_unit, derive_families):
    """Ingest and validate a corpus; report the outcome-class census."""
    result = _load(input_path, family_map_path, domain_tokens_path, runs_per_unit, derive_families)
    rep = result.report
    click.echo(f"records: {rep.total_records}")
    click.echo(f"units kept: {rep.units_kept} (dropped {rep.units_dropped})")
    for oc, count in rep.class_counts.items():
        click.echo(f"  {oc.value}: {count}")
    for warning in rep.warnings:
        click.echo(f"warning: {warning}", err=True)
    if rep.units_kept == 0:
        _fail_validation("corpus contains zero complete units")


def _rows_robustness(rows):
    header = ["spec", "gap", "ci_low", "ci_high", "p_value", "n", "fraction_positive", "detail"]
    out = []
    for row in rows:
        out.append([row.spec_id, *estimate_fields(row.estimate), row.n, row.fraction_positive, row.detail])
    return header, out


@cli.command("canonical")
@input_options
@analysis_options
def canonical_cmd(**kwargs):
    """Per-task consensus tool sets and the strong-path summary."""
    ctx = _context(**kwargs)
    spec = ctx.spec
    if spec.is_template:
        # the per-task table needs a concrete evidence scope
        spec = CanonicalSpec(kind=ScopeKind.NAIVE, threshold=spec.threshold,
                             min_successes=spec.min_successes, generic_only=spec.generic_only)
    try:
        table = canonical_table(ctx.corpus, spec)
    except PathdriftError as exc:
        _fail_analysis(exc)
    header = ["task", "scope", "threshold", "support_count", "tools", "strength", "generic_share"]
    rows = [
        [r.task, r.spec.kind.value, r.spec.threshold, r.support_count,
         "|".join(r.tools), r.strength, r.generic_share]
        for r in table.rows
    ]
    doc = {
        "canonical_table": [
            {"task": r.task, "support_count": r.support_count, "tools": list(r.tools),
             "strength": r.strength, "generic_share": r.generic_share}
            for r in table.rows
        ],
        "skipped": [{"task": t, "reason": reason} for t, reason in table.skipped],
        "strong_fraction": table.strong_fraction,
        "mean_generic_share": table.mean_generic_share,
        "strength_cutoff": table.strength_cutoff,
    }
    _emit(ctx, "canonical", header, rows, doc)


@cli.command("analyze-main")
@input_options
@analysis_options
def analyze_main(**kwargs):
    """Headline within-unit gap, family breakdown, and sample funnel."""
    ctx = _context(**kwargs)
    try:
        result = gaps.main_gap(ctx.corpus, ctx.spec, rng=ctx.rng, resamples=ctx.resamples, workers=ctx.workers)
        families = gaps.family_breakdown(ctx.corpus, ctx.spec, rng=ctx.rng, resamples=ctx.resamples, workers=ctx.workers)
        funnel = gaps.sample_funnel(ctx.corpus, ctx.spec)
    except PathdriftError as exc:
        _fail_analysis(exc)
    header = ["group", "gap", "ci_low", "ci_high", "p_value", "n", "fraction_positive"]
    rows = [["all", *estimate_fields(result.estimate), result.estimate.n, result.fraction_positive]]
    for fam in families:
        rows.append([f"family:{fam.family}", *estimate_fields(fam.estimate), fam.n, fam.fraction_positive])
    doc = {
        "main_gap": estimate_dict(result.estimate),
        "fraction_positive": result.fraction_positive,
        "families": [
            {"family": f.family, "estimate": estimate_dict(f.estimate), "n": f.n,
             "fraction_positive": f.fraction_positive, "significant": f.significant, "detail": f.detail}
            for f in families
        ],
        "funnel": {
            "total_units": funnel.total_units,
            "class_counts": {oc.value: c for oc, c in funnel.class_counts.items()},
            "mixed_units": funnel.mixed_units,
            "mixed_by_success_count": funnel.mixed_by_success_count,
            "valid_units": funnel.valid_units,
            "excluded_no_successes": funnel.excluded_no_successes,
            "excluded_insufficient": funnel.excluded_insufficient,
        },
    }
    _emit(ctx, "analyze-main", header, rows, doc)


@cli.command("analyze-robustness")
@input_options
@analysis_options
def analyze_robustness(**kwargs):
    """The specification table plus the first-tool placebo and lift translation."""
    ctx = _context(**kwargs)
    try:
        rows = gaps.robustness_suite(
            ctx.corpus, rng=ctx.rng, resamples=ctx.resamples,
            min_successes=ctx.spec.min_successes, workers=ctx.workers,
        )
        try:
            placebo = gaps.placebo_first_tool(ctx.corpus)
        except PathdriftError as exc:
            placebo = None
            placebo_reason = str(exc)
        lift_gaps = [r.estimate.point for r in rows if r.computed and not r.spec_id.startswith("threshold")]
        lifts = gaps.success_lift(ctx.corpus, ctx.spec, lift_gaps) if lift_gaps else None
    except PathdriftError as exc:
        _fail_analysis(exc)
    header, table = _rows_robustness(rows)
    if placebo is not None:
        table.append(["placebo_first_tool", *estimate_fields(placebo.estimate),
                      placebo.n_minority_runs, None, f"units={placebo.n_units}"])
    doc = {
        "robustness": [
            {"spec": r.spec_id, "estimate": estimate_dict(r.estimate), "n": r.n,
             "fraction_positive": r.fraction_positive, "detail": r.detail}
            for r in rows
        ],
        "placebo_first_tool": (
            {"estimate": estimate_dict(placebo.estimate), "n_minority_runs": placebo.n_minority_runs,
             "n_units": placebo.n_units}
            if placebo is not None
            else {"reason": placebo_reason}
        ),
        "success_lift": (
            {
                "coefficient": lifts.fit.coefficient,
                "n_obs": lifts.fit.n_obs,
                "rows": [
                    {"gap": r.gap, "odds_ratio": r.odds_ratio, "lift_pp": r.lift_pp,
                     "lift_pp_at_mean": r.lift_pp_at_mean}
                    for r in lifts.rows
                ],
            }
            if lifts is not None
            else None
        ),
    }
    _emit(ctx, "analyze-robustness", header, table, doc)


@cli.command("analyze-drift")
@input_options
@analysis_options
def analyze_drift(**kwargs):
    """Checkpoint drift curve and the early-branching falsification."""
    ctx = _context(**kwargs)
    try:
        curve = dynamics.drift_curve(ctx.corpus, ctx.spec, rng=ctx.rng, resamples=ctx.resamples, workers=ctx.workers)
        try:
            did = dynamics.did_early_branching(ctx.corpus, ctx.spec)
        except PathdriftError as exc:
            did = None
            did_reason = str(exc)
    except PathdriftError as exc:
        _fail_analysis(exc)
    header = ["fraction", "gap", "ci_low", "ci_high", "p_value", "n"]
    rows = [[p.fraction, *estimate_fields(p.estimate), p.n_units] for p in curve]
    doc = {
        "drift_curve": [
            {"fraction": p.fraction, "estimate": estimate_dict(p.estimate), "n_units": p.n_units}
            for p in curve
        ],
        "did_early_branching": (
            {
                "pretrend": estimate_dict(did.pretrend),
                "did": estimate_dict(did.did),
                "dose_response": estimate_dict(did.dose_response),
                "median_first_deviation": did.median_first_deviation,
                "n_early": did.n_early,
                "n_late": did.n_late,
            }
            if did is not None
            else {"reason": did_reason}
        ),
    }
    _emit(ctx, "analyze-drift", header, rows, doc)


@cli.command("analyze-transitions")
@input_options
@analysis_options
def analyze_transitions(**kwargs):
    """Self-reinforcing transition regression with outcome stratification."""
    ctx = _context(**kwargs)
    try:
        result = dynamics.transition_regression(ctx.corpus, ctx.spec)
    except PathdriftError as exc:
        _fail_analysis(exc)

    def _row(label, fit):
        if fit is None:
            return [label, None, None, None, None, None]
        return [label, fit.beta, fit.ci_low, fit.ci_high, fit.p_value, fit.n_pairs]

    header = ["stratum", "beta", "ci_low", "ci_high", "p_value", "n_pairs"]
    rows = [
        _row("all_runs", result.overall),
        _row("failing_runs", result.failed_runs),
        _row("succeeding_runs", result.succeeded_runs),
    ]
    doc = {
        "transition_regression": {
            "overall": estimate_dict(result.overall.as_estimate()),
            "failing_runs": estimate_dict(result.failed_runs.as_estimate()) if result.failed_runs else None,
            "succeeding_runs": estimate_dict(result.succeeded_runs.as_estimate()) if result.succeeded_runs else None,
            "baseline_rate": result.baseline_rate,
            "off_rate": result.off_rate,
            "n_runs": result.n_runs,
        }
    }
    _emit(ctx, "analyze-transitions", header, rows, doc)


@cli.command("analyze-variance")
@input_options
@analysis_options
def analyze_variance(**kwargs):
    """Variance signatures by outcome class and the adherence gradient."""
    ctx = _context(**kwargs)
    try:
        var = dynamics.variance_signature(ctx.corpus, ctx.spec)
        try:
            gradient = dynamics.adherence_gradient(ctx.corpus, ctx.spec)
        except PathdriftError as exc:
            gradient = None
            gradient_reason = str(exc)
    except PathdriftError as exc:
        _fail_analysis(exc)
    header = ["outcome_class", "mean_within_unit_std", "locked_in_fraction", "n_units"]
    rows = [[s.outcome_class.value, s.mean_std, s.locked_in_fraction, s.n_units] for s in var.signatures]
    doc = {
        "variance_signatures": [
            {"outcome_class": s.outcome_class.value, "mean_std": s.mean_std,
             "locked_in_fraction": s.locked_in_fraction, "n_units": s.n_units}
            for s in var.signatures
        ],
        "pairwise": {f"{a}_vs_{b}": estimate_dict(est) for (a, b), est in var.pairwise.items()},
        "locked_in_threshold": var.locked_in_threshold,
        "adherence_gradient": (
            {
                "groups": [{"label": g.label, "mean": g.mean, "n_runs": g.n_runs} for g in gradient.groups],
                "adjacent_tests": [estimate_dict(t) for t in gradient.adjacent_tests],
                "strictly_increasing": gradient.strictly_increasing,
            }
            if gradient is not None
            else {"reason": gradient_reason}
        ),
    }
    _emit(ctx, "analyze-variance", header, rows, doc)


@cli.command("analyze-tasks")
@input_options
@analysis_options
def analyze_tasks(**kwargs):
    """Per-task strength/effect table and predictor correlations."""
    ctx = _context(**kwargs)
    try:
        breakdown = gaps.task_breakdown(ctx.corpus, ctx.spec)
    except PathdriftError as exc:
        _fail_analysis(exc)
    header = ["task", "strength", "effect", "n_mixed_units", "success_rate",
              "canonical_size", "mean_length", "unique_tools"]
    rows = [
        [r.task, r.strength, r.effect, r.n_mixed_units, r.success_rate,
         r.canonical_size, r.mean_length, r.unique_tools]
        for r in breakdown.rows
    ]
    doc = {
        "tasks": [
            {"task": r.task, "strength": r.strength, "effect": r.effect,
             "n_mixed_units": r.n_mixed_units, "success_rate": r.success_rate,
             "canonical_size": r.canonical_size, "mean_length": r.mean_length,
             "unique_tools": r.unique_tools}
            for r in breakdown.rows
        ],
        "correlations": {k: estimate_dict(v) for k, v in breakdown.correlations.items()},
        "n_tasks_with_effect": breakdown.n_tasks_with_effect,
        "fraction_positive_effect": breakdown.fraction_positive_effect,
    }
    _emit(ctx, "analyze-tasks", header, rows, doc)


@cli.command("reliability")
@input_options
@analysis_options
def reliability_cmd(**kwargs):
    """Per-model reliability scorecard, sorted by mean run success."""
    ctx = _context(**kwargs)
    try:
        rows_data = reliability.per_model_metrics(ctx.corpus)
    except PathdriftError as exc:
        _fail_analysis(exc)
    header = ["model", "p_at_1", "p_at_k", "p_hat_k", "mo_over_patk", "n_tasks", "k"]
    rows = [
        [r.model, r.p_at_1, r.p_at_k, r.p_hat_k, r.mo_over_patk, r.n_tasks, r.k]
        for r in rows_data
    ]
    doc = {
        "models": [
            {"model": r.model, "p_at_1": r.p_at_1, "p_at_k": r.p_at_k, "p_hat_k": r.p_hat_k,
             "mo_over_patk": r.mo_over_patk, "n_tasks": r.n_tasks, "k": r.k}
            for r in rows_data
        ]
    }
    _emit(ctx, "reliability", header, rows, doc)


def _intervention_doc(rep) -> dict:
    return {
        "policy": rep.policy.label(),
        "lift_pp": rep.lift_pp,
        "ci_low_pp": rep.ci_low_pp,
        "ci_high_pp": rep.ci_high_pp,
        "n_flagged": rep.n_flagged,
        "n_population": rep.n_population,
        "flagged_fraction": rep.flagged_fraction,
        "baseline_rate_predicted": rep.baseline_rate_predicted,
        "counterfactual_rate_predicted": rep.counterfactual_rate_predicted,
        "baseline_rate_observed": rep.baseline_rate_observed,
        "global_cutoff": rep.global_cutoff,
        "logistic_coefficient": rep.fit.coefficient,
    }


@cli.command("intervention")
@input_options
@analysis_options
def intervention_cmd(**kwargs):
    """Counterfactual restart-lift estimate for the chosen policy."""
    ctx = _context(**kwargs)
    try:
        rep = reliability.intervention_lift(
            ctx.corpus, ctx.spec, ctx.policy, rng=ctx.rng, resamples=ctx.resamples, workers=ctx.workers
        )
    except PathdriftError as exc:
        _fail_analysis(exc)
    header = ["policy", "lift_pp", "ci_low_pp", "ci_high_pp", "n_flagged", "n_population",
              "flagged_fraction", "baseline_predicted", "counterfactual_predicted", "baseline_observed"]
    rows = [[rep.policy.label(), rep.lift_pp, rep.ci_low_pp, rep.ci_high_pp, rep.n_flagged,
             rep.n_population, rep.flagged_fraction, rep.baseline_rate_predicted,
             rep.counterfactual_rate_predicted, rep.baseline_rate_observed]]
    _emit(ctx, "intervention", header, rows, {"intervention": _intervention_doc(rep)})


@cli.command("monitor-replay")
@input_options
@analysis_options
def monitor_replay(**kwargs):
    """Replay mixed-outcome runs through the monitor and reconcile flags."""
    ctx = _context(**kwargs)
    try:
        rep = monitor.simulate_policy(
            ctx.corpus, ctx.spec, ctx.policy, rng=ctx.rng, resamples=ctx.resamples, workers=ctx.workers
        )
    except PathdriftError as exc:
        _fail_analysis(exc)
    header = ["model", "task", "run_index", "checkpoint_adherence", "threshold", "flagged", "success"]
    rows = [
        [r.run_key[0], r.run_key[1], r.run_key[2], r.checkpoint_adherence, r.threshold, r.flagged, r.success]
        for r in rep.rows
    ]
    doc = {
        "replay": {
            "policy": rep.policy.label(),
            "n_runs": len(rep.rows),
            "n_flagged": len(rep.flagged_keys),
            "matches_lift_estimator": rep.matches_lift_estimator,
            "flagged_failure_rate": rep.flagged_failure_rate,
            "unflagged_failure_rate": rep.unflagged_failure_rate,
            "lift": _intervention_doc(rep.lift) if rep.lift is not None else None,
        }
    }
    _emit(ctx, "monitor-replay", header, rows, doc)


@cli.command("synth")
@click.option("--models", default=12, show_default=True)
@click.option("--families", default=4, show_default=True)
@click.option("--tasks", default=20, show_default=True)
@click.option("--runs-per-unit", default=3, show_default=True)
@click.option("--canonical-size", default=5, show_default=True)
@click.option("--tool-universe", default=20, show_default=True)
@click.option("--calls-per-run", default=30, show_default=True)
@click.option("--base-rate", default=0.15, show_default=True)
@click.option("--boost", default=0.25, show_default=True)
@click.option("--onset", default=0.0, show_default=True)
@click.option("--coupling", type=click.Choice(["logistic", "constant"]), default="logistic", show_default=True)
@click.option("--coupling-slope", default=8.0, show_default=True)
@click.option("--coupling-midpoint", default=0.6, show_default=True)
@click.option("--coupling-constant", default=0.5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True)
def synth_cmd(models, families, tasks, runs_per_unit, canonical_size, tool_universe,
              calls_per_run, base_rate, boost, onset, coupling, coupling_slope,
              coupling_midpoint, coupling_constant, seed, out_dir):
    """Generate a synthetic corpus with known ground truth."""
    try:
        config = synth.GeneratorConfig(
            n_models=models,
            n_families=families,
            n_tasks=tasks,
            runs_per_unit=runs_per_unit,
            canonical_size=canonical_size,
            tool_universe_size=tool_universe,
            calls_per_run=calls_per_run,
            base_off_rate=base_rate,
            persistence_boost=boost,
            drift_onset_fraction=onset,
            coupling=synth.CouplingSpec(
                kind=coupling, slope=coupling_slope,
                midpoint=coupling_midpoint, constant=coupling_constant,
            ),
            master_seed=seed,
        )
    except ValueError as exc:
        _fail_validation(str(exc))
    corpus, truth = synth.generate(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectories.jsonl").write_text(dump_records(corpus))
    (out / "families.csv").write_text(
        "".join(f"{m},{f}\n" for m, f in sorted(corpus.family_map.mapping.items()))
    )
    meta = ReportMeta(seed=seed, spec=None, fingerprint=corpus_fingerprint(corpus))
    write_doc(
        out / "ground_truth.json",
        {
            "injected_beta": truth.injected_beta,
            "expected_off_rate": truth.expected_off_rate,
            "gap_sign_positive": truth.gap_sign_positive,
            "null": truth.null,
            "config": {
                "models": models, "families": families, "tasks": tasks,
                "runs_per_unit": runs_per_unit, "canonical_size": canonical_size,
                "tool_universe": tool_universe, "calls_per_run": calls_per_run,
                "base_rate": base_rate, "boost": boost, "onset": onset,
                "coupling": coupling, "seed": seed,
            },
        },
        meta=meta,
    )
    click.echo(f"wrote {corpus_fingerprint(corpus)[:12]} ({len(corpus.units)} units) to {out}")


@cli.command("report")
@input_options
@analysis_options
def report_cmd(**kwargs):
    """Bundle every analysis into one document; fails rather than emitting
    partial tables."""
    ctx = _context(**kwargs)
    try:
        funnel = gaps.sample_funnel(ctx.corpus, ctx.spec)
        robustness = gaps.robustness_suite(
            ctx.corpus, rng=ctx.rng, resamples=ctx.resamples,
            min_successes=ctx.spec.min_successes, workers=ctx.workers,
        )
        lift_gaps = [r.estimate.point for r in robustness if r.computed and not r.spec_id.startswith("threshold")]
        lifts = gaps.success_lift(ctx.corpus, ctx.spec, lift_gaps)
        placebo = gaps.placebo_first_tool(ctx.corpus)
        curve = dynamics.drift_curve(ctx.corpus, ctx.spec, rng=ctx.rng, resamples=ctx.resamples, workers=ctx.workers)
        did = dynamics.did_early_branching(ctx.corpus, ctx.spec)
        transitions = dynamics.transition_regression(ctx.corpus, ctx.spec)
        variance = dynamics.variance_signature(ctx.corpus, ctx.spec)
        gradient = dynamics.adherence_gradient(ctx.corpus, ctx.spec)
        families = gaps.family_breakdown(ctx.corpus, ctx.spec, rng=ctx.rng, resamples=ctx.resamples, workers=ctx.workers)
        tasks_table = gaps.task_breakdown(ctx.corpus, ctx.spec)
        models_table = reliability.per_model_metrics(ctx.corpus)
        policies = [ctx.policy]
        if ctx.policy.kind == "tercile":
            policies.append(InterventionPolicy(kind="below_unit_mean", checkpoint=ctx.checkpoint, margin=0.10))
        interventions = [
            reliability.intervention_lift(ctx.corpus, ctx.spec, pol, rng=ctx.rng,
                                          resamples=ctx.resamples, workers=ctx.workers)
            for pol in policies
        ]
    except PathdriftError as exc:
        _fail_analysis(exc)

    doc = {
        "dataset": {
            "total_units": funnel.total_units,
            "class_counts": {oc.value: c for oc, c in funnel.class_counts.items()},
            "mixed_units": funnel.mixed_units,
            "mixed_by_success_count": funnel.mixed_by_success_count,
            "valid_units": funnel.valid_units,
        },
        "robustness": [
            {"spec": r.spec_id, "estimate": estimate_dict(r.estimate), "n": r.n,
             "fraction_positive": r.fraction_positive, "detail": r.detail}
            for r in robustness
        ],
        "success_lift": {
            "coefficient": lifts.fit.coefficient,
            "rows": [{"gap": r.gap, "odds_ratio": r.odds_ratio, "lift_pp": r.lift_pp} for r in lifts.rows],
        },
        "placebo_first_tool": {
            "estimate": estimate_dict(placebo.estimate),
            "n_minority_runs": placebo.n_minority_runs,
            "n_units": placebo.n_units,
        },
        "drift_curve": [
            {"fraction": p.fraction, "estimate": estimate_dict(p.estimate), "n_units": p.n_units}
            for p in curve
        ],
        "did_early_branching": {
            "pretrend": estimate_dict(did.pretrend),
            "did": estimate_dict(did.did),
            "dose_response": estimate_dict(did.dose_response),
        },
        "transitions": {
            "overall": estimate_dict(transitions.overall.as_estimate()),
            "failing_runs": estimate_dict(transitions.failed_runs.as_estimate()) if transitions.failed_runs else None,
            "succeeding_runs": estimate_dict(transitions.succeeded_runs.as_estimate()) if transitions.succeeded_runs else None,
            "baseline_rate": transitions.baseline_rate,
        },
        "variance": [
            {"outcome_class": s.outcome_class.value, "mean_std": s.mean_std,
             "locked_in_fraction": s.locked_in_fraction, "n_units": s.n_units}
            for s in variance.signatures
        ],
        "adherence_gradient": {
            "groups": [{"label": g.label, "mean": g.mean, "n_runs": g.n_runs} for g in gradient.groups],
            "strictly_increasing": gradient.strictly_increasing,
        },
        "families": [
            {"family": f.family, "estimate": estimate_dict(f.estimate), "n": f.n, "significant": f.significant}
            for f in families
        ],
        "tasks": [
            {"task": r.task, "strength": r.strength, "effect": r.effect, "n_mixed_units": r.n_mixed_units,
             "success_rate": r.success_rate}
            for r in tasks_table.rows
        ],
        "task_correlations": {k: estimate_dict(v) for k, v in tasks_table.correlations.items()},
        "models": [
            {"model": r.model, "p_at_1": r.p_at_1, "p_at_k": r.p_at_k, "p_hat_k": r.p_hat_k,
             "mo_over_patk": r.mo_over_patk}
            for r in models_table
        ],
        "interventions": [_intervention_doc(rep) for rep in interventions],
    }
    write_doc(ctx.out_dir / "report.json", doc, meta=ctx.meta)
    if "csv" in ctx.formats:
        header, table = _rows_robustness(robustness)
        write_csv(ctx.out_dir / "report-robustness.csv", header, table, meta=ctx.meta)
    click.echo(f"report written to {ctx.out_dir}")


def main():
    cli(auto_envvar_prefix="PATHDRIFT")


if __name__ == "__main__":
    main()
