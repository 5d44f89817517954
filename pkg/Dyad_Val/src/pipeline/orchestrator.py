"""Pipeline stages: design -> run/simulate -> build-dataset -> analyze -> fit-paths -> validate -> report."""
import os
import time
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..agents.dyad_runner import DyadRunner
from ..agents.gateway import AgentParams, LLMAgent, SyntheticAgent, TokenBucket
from ..agents.parsing import CustomerResult
from ..agents.synthetic import SyntheticProfile
from ..agents.vignettes import load_library
from ..dataset.quality import validate_quality
from ..dataset.records import VARIABLES, CenteringSpec, DyadRecord, build_outcomes, center_dataset
from ..dataset.storage import (
    CALL_OK, JournalWriter, build_manifest, export_dataset, final_calls, load_dataset, read_journal,
    records_from_journal, write_manifest
)
from ..design.experiment_design import ReplicationPlan, plan_from_config
from ..paths.bootstrap import bootstrap_indirect, load_published_paths
from ..paths.path_model import PredictorCoding, build_path_data, fit_group_paths, predictor_means
from ..reporting.report_generator import emit_report
from ..reporting.validation import (
    ValidationReport, equivalence_summary, histogram_counts, score_processes, shortfalls
)
from ..stats.surface import games_howell, levene, load_summaries, summaries_from_records, tost_equivalence, welch_anova
from ..utils.config import RunConfig, configure_logging, logger, resolve_path
from ..utils.data import load_json, write_json
from ..utils.errors import DyadValidationError, StageDependencyError
from ..utils.logging import setup_group_logger

STAGES = ("design", "run", "simulate", "build-dataset", "analyze", "fit-paths", "validate", "report")

PLAN_FILE = "plan.json"
JOURNAL_FILE = "journal.jsonl"
DATASET_FILE = "dataset.csv"
MANIFEST_FILE = "dataset_manifest.json"
ANALYSIS_FILE = "analysis.json"
PATHS_FILE = "paths.json"
VALIDATION_FILE = "validation.json"
REPORT_DIR = "report"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2

# Stage that produces each artifact, named when the artifact is missing
PRODUCERS = {
    PLAN_FILE: "design",
    JOURNAL_FILE: "run or simulate",
    DATASET_FILE: "build-dataset",
    ANALYSIS_FILE: "analyze",
    PATHS_FILE: "fit-paths",
    VALIDATION_FILE: "validate",
}


class PipelineContext:
    """Run configuration plus the artifact paths of one output directory."""

    def __init__(self, config: RunConfig, output_dir: Optional[str] = None, progress: bool = True):
        self.config = config
        self.output_dir = os.path.abspath(output_dir or config.output_dir)
        self.progress = progress
        self.shortfalls: List[str] = []

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    @property
    def provenance(self) -> Dict[str, Any]:
        return self.config.provenance()

    @property
    def baseline_id(self) -> str:
        return self.config.analysis.get("baseline_group", "human")

    def require(self, name: str, stage: str) -> str:
        """Path of an input artifact, raising StageDependencyError when it is missing."""
        path = self.path(name)
        if not os.path.exists(path):
            message = (f"stage '{stage}' needs {name} in {self.output_dir}; "
                       f"run stage '{PRODUCERS.get(name, '?')}' first")
            logger.error(message)
            raise StageDependencyError(message)
        return path

    def load_artifact(self, name: str, stage: str) -> Dict[str, Any]:
        data = load_json(self.require(name, stage))
        stamped = data.get("provenance", {}).get("config_hash")
        if stamped and stamped != self.config.config_hash:
            logger.warning(f"{name} was written under config {stamped[:12]}, "
                           f"current config is {self.config.config_hash[:12]}")
        return data

    def write_artifact(self, name: str, payload: Dict[str, Any]) -> str:
        payload = dict(payload)
        payload["provenance"] = self.provenance
        return write_json(payload, self.path(name))


def design_stage(ctx: PipelineContext) -> ReplicationPlan:
    plan = plan_from_config(ctx.config)
    ctx.write_artifact(PLAN_FILE, plan.to_dict())
    logger.info(f"Design: {len(plan)} plan entries ({plan.replications_per_cell} per cell)")
    return plan


def load_plan(ctx: PipelineContext, stage: str) -> ReplicationPlan:
    return ReplicationPlan.from_dict(ctx.load_artifact(PLAN_FILE, stage))


def build_agent(group: Dict[str, Any], config: RunConfig, buckets: Dict[str, TokenBucket]):
    """Agent answering for both roles of ``group``.

    Live groups share one token bucket per provider.
    """
    agent = config.agent
    if group.get("backend", "llm") == "synthetic":
        profile = SyntheticProfile.load(resolve_path(group.get("profile") or "synthetic_profile.json"))
        return SyntheticAgent(profile, max_retries=int(agent["max_retries"]), model_id=group.get("model_id"))
    params = AgentParams.from_config(group, agent)
    if params.requests_per_minute and params.provider_id not in buckets:
        buckets[params.provider_id] = TokenBucket(float(params.requests_per_minute))
    return LLMAgent(params, providers=config.providers, bucket=buckets.get(params.provider_id))


def journal_state(events: Sequence[Dict[str, Any]], group_id: str) -> Tuple[Dict[str, DyadRecord],
                                                                              Dict[str, CustomerResult]]:
    """Finished dyads and customers still waiting for their worker call.

    Dyads whose final event failed count as finished.
    """
    completed = {r.dyad_id: r for r in records_from_journal(events) if r.group_id == group_id}
    pending = {}
    for (g, dyad_id, role), event in final_calls(events).items():
        if g == group_id and role == "customer" and event["status"] == CALL_OK and dyad_id not in completed:
            pending[dyad_id] = CustomerResult.from_dict(event["parsed"])
    return completed, pending


def execute_groups(ctx: PipelineContext, plan: ReplicationPlan, backends: Sequence[str]) -> Dict[str, List[DyadRecord]]:
    """Run the plan for every configured group of the given backends.

    The journal at ``journal.jsonl`` is appended to; dyads it already
    finished are not executed again.
    """
    config = ctx.config
    groups = [g for g in config.groups if g.get("backend", "llm") in backends]
    if not groups:
        logger.warning(f"No groups with backend {'/'.join(backends)} configured")
        return {}
    library = load_library(resolve_path(config.vignettes))
    journal_path = ctx.path(JOURNAL_FILE)
    events: List[Dict[str, Any]] = []
    if os.path.exists(journal_path) and os.path.getsize(journal_path) > 0:
        _, events = read_journal(journal_path)
    buckets: Dict[str, TokenBucket] = {}
    log_dir = os.path.join(ctx.output_dir, "logs")
    results = {}
    with JournalWriter(journal_path, config.run_id, config.config_hash, config.hashed_dict()) as journal:
        for group in groups:
            group_id = group["group_id"]
            group_logger = setup_group_logger(group_id, log_dir)
            agent = build_agent(group, config, buckets)
            completed, pending = journal_state(events, group_id)
            workers = int(config.agent["max_concurrency"]) if agent.backend == "llm" else None
            runner = DyadRunner({"max_workers": workers, "progress": ctx.progress})
            start_time = time.time()
            group_logger.info(f"Starting {group_id} ({agent.backend}, {agent.model_id}): "
                              f"{len(plan) - len(completed)} dyads to run")
            records = runner.run(plan, agent, agent, library, config.price, config.initial_tip,
                                 config.run_id, group_id, journal=journal,
                                 reminder=config.agent["reprompt_reminder"],
                                 completed=completed, pending_customers=pending)
            failed = sum(1 for r in records if not r.complete)
            group_logger.info(f"Finished {group_id}: {len(records)} dyads, {failed} failed, "
                              f"{time.time() - start_time:.2f}s")
            results[group_id] = records
    return results


def run_stage(ctx: PipelineContext, backends: Sequence[str], stage: str):
    plan = load_plan(ctx, stage)
    return execute_groups(ctx, plan, backends)


def resume_run(journal_path: str, config: RunConfig, progress: bool = True) -> str:
    """Complete the missing dyads of a journaled run.

    The journal must have been written under the same configuration hash;
    finished (condition, replicate, role) calls are never executed again.

    Returns:
        str: Journal path

    Raises:
        ConfigMismatchError: The journal belongs to another configuration
    """
    output_dir = os.path.dirname(os.path.abspath(journal_path))
    ctx = PipelineContext(config, output_dir, progress=progress)
    if os.path.basename(journal_path) != JOURNAL_FILE:
        raise StageDependencyError(f"resume expects a {JOURNAL_FILE} file, got {journal_path}")
    ctx.require(JOURNAL_FILE, "resume")
    plan = plan_from_config(config)
    execute_groups(ctx, plan, ("synthetic", "llm"))
    return journal_path


def build_dataset_stage(ctx: PipelineContext) -> List:
    config = ctx.config
    _, events = read_journal(ctx.require(JOURNAL_FILE, "build-dataset"))
    plan_path = ctx.path(PLAN_FILE)
    plan = ReplicationPlan.from_dict(load_json(plan_path)) if os.path.exists(plan_path) else None
    quality = validate_quality(records_from_journal(events), plan)
    outcomes = build_outcomes(quality.usable)
    if config.human_dataset:
        human = load_dataset(resolve_path(config.human_dataset))
        logger.info(f"Merged {len(human)} human rows from {config.human_dataset}")
        outcomes = sorted(outcomes + human, key=lambda r: r.sort_key)
    spec = CenteringSpec(config.centering_scope)
    centered = center_dataset(outcomes, spec)
    export_dataset(centered, ctx.path(DATASET_FILE))
    write_manifest(build_manifest(centered, spec, ctx.provenance, quality.to_dict()), ctx.path(MANIFEST_FILE))
    logger.info(f"Dataset: {len(centered)} usable dyads, {quality.n_excluded} excluded")
    return centered


def analysis_config(config: RunConfig) -> Dict[str, Any]:
    """Configuration echo carried by the report."""
    analysis = config.analysis
    return {
        "alpha": config.alpha,
        "margin_factor": config.margin_factor,
        "tost_se": analysis["tost_se"],
        "levene_center": analysis["levene_center"],
        "bootstrap_B": config.bootstrap_B,
        "se_convention": analysis["se_convention"],
        "master_seed": int(config.master_seed),
        "centering_scope": config.centering_scope,
        "provenance": config.provenance(),
    }


def _group_order(ctx: PipelineContext, present: Sequence[str]) -> List[str]:
    """Baseline first, then configured groups, then any others in input order."""
    order = [ctx.baseline_id] + [g["group_id"] for g in ctx.config.groups] + list(present)
    seen, out = set(), []
    for g in order:
        if g in present and g not in seen:
            seen.add(g)
            out.append(g)
    return out


def analyze_stage(ctx: PipelineContext) -> ValidationReport:
    """Descriptives, Levene, Welch ANOVA, Games-Howell and TOST per outcome variable."""
    config = ctx.config
    analysis = config.analysis
    records = None
    if config.summary_input:
        descriptives = load_summaries(resolve_path(config.summary_input))
        groups = [s.group_id for s in descriptives[VARIABLES[0]]]
        logger.info(f"Analyzing group summaries from {config.summary_input}; Levene skipped (needs raw values)")
    else:
        records = load_dataset(ctx.require(DATASET_FILE, "analyze"))
        present = list(dict.fromkeys(r.group_id for r in records))
        groups = _group_order(ctx, present)
        descriptives = {v: summaries_from_records(records, v, centered=True, group_order=groups) for v in VARIABLES}

    report = ValidationReport(ctx.baseline_id, groups, analysis_config(config), descriptives=descriptives)
    if records is not None:
        report.histograms = histogram_counts(records, groups)
        if len(groups) >= 2:
            for v in VARIABLES:
                samples = [[r.centered(v) for r in records if r.group_id == g] for g in groups]
                report.levene[v] = levene(samples, center=analysis["levene_center"], variable=v)
    if len(groups) < 2:
        logger.warning(f"Only {len(groups)} group(s); omnibus and pairwise tests skipped")
    else:
        for v in VARIABLES:
            report.welch[v] = welch_anova(descriptives[v])
            report.games_howell[v] = games_howell(descriptives[v])

    if ctx.baseline_id in groups:
        for v in VARIABLES:
            by_group = {s.group_id: s for s in descriptives[v]}
            for g in report.ai_groups:
                report.tost.append(tost_equivalence(by_group[g], by_group[ctx.baseline_id],
                                                    config.margin_factor, config.alpha, analysis["tost_se"]))
        summary = equivalence_summary(report.tost, report.ai_groups)
        report.measures = summary.measures
        report.surface_ranking = summary.ranking
    else:
        logger.warning(f"Baseline group {ctx.baseline_id!r} absent; equivalence tests skipped")

    ctx.write_artifact(ANALYSIS_FILE, report.to_dict())
    logger.info(f"Analysis of {len(groups)} groups written to {ctx.path(ANALYSIS_FILE)}")
    return report


def fit_paths_stage(ctx: PipelineContext) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """Path models and bootstrapped indirect effects per group."""
    config = ctx.config
    analysis = config.analysis
    if config.paths_input:
        models, indirect = load_published_paths(resolve_path(config.paths_input))
        logger.info(f"Using published path tables from {config.paths_input}")
    else:
        records = load_dataset(ctx.require(DATASET_FILE, "fit-paths"))
        coding = PredictorCoding.from_dict(config.coding)
        groups = _group_order(ctx, list(dict.fromkeys(r.group_id for r in records)))
        pooled = predictor_means(records, coding) if config.centering_scope == "pooled_all_groups" else None
        models, indirect = {}, {}
        for g in groups:
            rows = [r for r in records if r.group_id == g]
            data = build_path_data(rows, coding, means=pooled or predictor_means(rows, coding), group_id=g)
            models[g] = fit_group_paths(data, se_convention=analysis["se_convention"], intercept=coding.intercept)
            indirect[g] = bootstrap_indirect(data, B=config.bootstrap_B, master_seed=int(config.master_seed),
                                             alpha=config.alpha, jobs=int(analysis["bootstrap_jobs"]),
                                             failure_limit=float(analysis["bootstrap_failure_limit"]),
                                             intercept=coding.intercept, model=models[g])
    ctx.write_artifact(PATHS_FILE, {
        "models": {g: m.to_dict() for g, m in models.items()},
        "indirect": {g: {e: est.to_dict() for e, est in effects.items()} for g, effects in indirect.items()},
    })
    logger.info(f"Path models of {len(models)} groups written to {ctx.path(PATHS_FILE)}")
    return models, indirect


def validate_stage(ctx: PipelineContext) -> ValidationReport:
    """Join surface and process results, score fidelity and rank the models."""
    config = ctx.config
    analysis_path, paths_path = ctx.path(ANALYSIS_FILE), ctx.path(PATHS_FILE)
    if not os.path.exists(analysis_path) and not os.path.exists(paths_path):
        ctx.require(ANALYSIS_FILE, "validate")
    if os.path.exists(analysis_path):
        report = ValidationReport.from_dict(ctx.load_artifact(ANALYSIS_FILE, "validate"))
    else:
        report = ValidationReport(ctx.baseline_id, [], analysis_config(config))
    if os.path.exists(paths_path):
        partial = ValidationReport.from_dict({"baseline_id": ctx.baseline_id, "groups": [], "config": {},
                                              **ctx.load_artifact(PATHS_FILE, "validate")})
        report.models, report.indirect = partial.models, partial.indirect
        for g in report.models:
            if g not in report.groups:
                report.groups.append(g)
        if ctx.baseline_id in report.models:
            order = [g for g in report.groups if g in report.models]
            patterns, fidelity, ranking, warnings = score_processes(report.models, report.indirect,
                                                                    ctx.baseline_id, config.alpha, order)
            report.patterns, report.fidelity = patterns, fidelity
            report.process_ranking, report.sign_warnings = ranking, warnings
        else:
            logger.warning(f"Baseline group {ctx.baseline_id!r} has no path model; fidelity not scored")
    thresholds = config.thresholds
    ctx.shortfalls = shortfalls(report, int(thresholds.get("min_measures", 0)), int(thresholds.get("min_fidelity", 0)))
    for message in ctx.shortfalls:
        logger.warning(f"Validation shortfall: {message}")
    ctx.write_artifact(VALIDATION_FILE, {"report": report.to_dict(), "shortfalls": ctx.shortfalls})
    return report


def report_stage(ctx: PipelineContext) -> Dict[str, str]:
    data = ctx.load_artifact(VALIDATION_FILE, "report")
    ctx.shortfalls = list(data.get("shortfalls", []))
    return emit_report(ValidationReport.from_dict(data["report"]), ctx.path(REPORT_DIR))


STAGE_FUNCTIONS = {
    "design": design_stage,
    "run": lambda ctx: run_stage(ctx, ("llm",), "run"),
    "simulate": lambda ctx: run_stage(ctx, ("synthetic",), "simulate"),
    "build-dataset": build_dataset_stage,
    "analyze": analyze_stage,
    "fit-paths": fit_paths_stage,
    "validate": validate_stage,
    "report": report_stage,
}


def ordered_stages(stages: Optional[Sequence[str]]) -> List[str]:
    """Requested stages in pipeline order; ``None`` or ``all`` selects every stage."""
    if not stages or "all" in stages:
        return list(STAGES)
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise StageDependencyError(f"unknown stage(s) {unknown}; choose from {', '.join(STAGES)}")
    return [s for s in STAGES if s in stages]


def run_pipeline(config: RunConfig, stages: Optional[Sequence[str]] = None, output_dir: Optional[str] = None,
                 progress: bool = True) -> int:
    """Execute the requested stages in order.

    Returns:
        int: 0 success, 2 a model fell below the configured thresholds, 1 hard error
    """
    ctx = PipelineContext(config, output_dir, progress=progress)
    try:
        os.makedirs(ctx.output_dir, exist_ok=True)
        configure_logging(ctx.output_dir, config.logging)
        selected = ordered_stages(stages)
        logger.info(f"Run {config.run_id} (config {config.config_hash[:12]}, seed {config.master_seed}): "
                    f"stages {', '.join(selected)}")
        for stage in selected:
            start_time = time.time()
            logger.info(f"Stage {stage} started")
            STAGE_FUNCTIONS[stage](ctx)
            logger.info(f"Stage {stage} finished in {time.time() - start_time:.2f}s")
    except (DyadValidationError, OSError) as e:
        logger.error(f"Pipeline failed: {type(e).__name__}: {e}")
        return EXIT_ERROR
    if ctx.shortfalls:
        logger.warning(f"{len(ctx.shortfalls)} validation shortfall(s)")
        return EXIT_VALIDATION
    return EXIT_OK
