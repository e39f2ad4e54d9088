//! End-to-end runner: filter, score, enhance, mix, pack, schedule, hipo, eval.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use lexforge_core::corpus::{published, CorpusManifest, Document, InstructionSample, PreferencePair};
use lexforge_core::filter::{filter_corpus, FilterStats, RejectReason};
use lexforge_core::hipo::{run_hipo, HipoQuery, HipoState, IterationRecord};
use lexforge_core::mixer::{
    budgets_from_rates, check_ratios, execute_sampling, manifest_from_documents, plan_sampling, Budget, RatioReport,
    SamplingPlan, SourceSampleStats,
};
use lexforge_core::packer::{make_stage_plan, pack_documents, step_batches, PackingPlan, StagePlan, StepManifest};
use lexforge_core::psft::{mixing_stats, stage1_batches, stage2_batches, Batch};
use lexforge_core::scoring::threshold_filter;
use serde::{Deserialize, Serialize};

use crate::config::{validate_config, BudgetRule, BudgetSpec, ConfigError, PipelineConfig, DEFAULT_TAU};
use crate::evaluate::{evaluate, EvalRecord, EvalReport};
use crate::hash::stable_hash;
use crate::hipo_source::EndpointSource;
use crate::inference::{ChatBackend, EndpointConfig};
use crate::io::{read_docs, read_jsonl, write_docs, write_json, write_jsonl};
use crate::scorer::{score_corpus, ScoringStats};
use crate::synth::{pair_document, parse_dims, synthesize, StatuteRecord, SynthesisStats};

pub const REPORT_FILE: &str = "run_report.json";

/// Stage-local seed so stages do not share random streams.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    stable_hash(&[&seed.to_le_bytes(), stage.as_bytes()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub malformed_lines: usize,
    pub stats: FilterStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub tau: u8,
    pub stats: ScoringStats,
    pub kept: usize,
    pub below_tau: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceReport {
    pub dims: usize,
    pub synthesis: SynthesisStats,
    pub tau: u8,
    pub admission: ScoringStats,
    pub admitted: usize,
    pub admitted_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixReport {
    pub ratios: RatioReport,
    pub sources: Vec<SourceSampleStats>,
    pub docs_in: usize,
    pub docs_out: usize,
    pub tokens_out: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedStageReport {
    pub window: u64,
    pub planned_tokens: u64,
    pub docs: usize,
    pub content_tokens: u64,
    pub pad_tokens: u64,
    pub sequences: usize,
    pub full_steps: usize,
    pub partial_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackReport {
    pub total_tokens: u64,
    pub tokens_per_step: u64,
    pub stages: Vec<PackedStageReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub core_samples: usize,
    pub downstream_samples: usize,
    pub stage1_batches: usize,
    pub stage2_batches: usize,
    pub core_quota: usize,
    pub observed_core_fraction: Option<f64>,
    pub downstream_coverage_exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HipoIterationSummary {
    pub iteration: u32,
    pub evaluated: usize,
    pub mean_score: f64,
    pub hard: usize,
    pub pairs: usize,
    pub unpaired: usize,
    pub newly_resolved: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HipoReport {
    pub queries: usize,
    pub iterations: Vec<HipoIterationSummary>,
    pub active: usize,
    pub resolved: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub stages_run: Vec<String>,
    /// Files written to the output directory, in write order.
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enhance: Option<EnhanceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<MixReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pack: Option<PackReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hipo: Option<HipoReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<StageFailure>,
    /// Resolved configuration, defaults included, for provenance.
    pub config: serde_json::Value,
    pub wall_clock_ms: Option<u64>,
}

impl RunReport {
    fn new(cfg: &PipelineConfig) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            stages_run: Vec::new(),
            artifacts: Vec::new(),
            filter: None,
            score: None,
            enhance: None,
            mix: None,
            pack: None,
            schedule: None,
            hipo: None,
            eval: None,
            failure: None,
            config: cfg.provenance(),
            wall_clock_ms: None,
        }
    }

    /// The report with the wall-clock field cleared.
    pub fn without_wall_clock(&self) -> Self {
        Self { wall_clock_ms: None, ..self.clone() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String, report: Box<RunReport> },
}

/// Runs every enabled stage with the backend described by `cfg.endpoint`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    run_pipeline_with(cfg, None)
}

/// Like [`run_pipeline`], with `backend` standing in for the configured
/// endpoint when given.
pub fn run_pipeline_with(cfg: &PipelineConfig, backend: Option<&dyn ChatBackend>) -> Result<RunReport, PipelineError> {
    let issues = validate_config(cfg);
    if !issues.is_empty() {
        return Err(ConfigError::Invalid(issues).into());
    }
    let started = Instant::now();
    let mut runner = Runner { cfg, out: &cfg.output_dir, report: RunReport::new(cfg), docs: Vec::new(), backend: None };
    let owned;
    let s = cfg.stages;
    if s.score || s.enhance || s.hipo {
        runner.backend = match backend {
            Some(b) => Some(b),
            None => {
                let ep = cfg.endpoint.as_ref().expect("validated");
                owned = ep.backend().map_err(|e| runner.fail("endpoint", anyhow!(e)))?;
                Some(&*owned)
            }
        };
    }

    let stages = [
        ("filter", s.filter),
        ("score", s.score),
        ("enhance", s.enhance),
        ("mix", s.mix),
        ("pack", s.pack),
        ("schedule", s.schedule),
        ("hipo", s.hipo),
        ("eval", s.eval),
    ];
    if s.filter || s.score || s.mix || s.pack {
        runner.load_corpus().map_err(|e| runner.fail("load", e))?;
    }
    for (name, enabled) in stages {
        if !enabled {
            continue;
        }
        log::info!("stage {name}");
        runner.run_stage(name).map_err(|e| runner.fail(name, e))?;
        runner.report.stages_run.push(name.to_string());
    }
    runner.report.wall_clock_ms = Some(started.elapsed().as_millis() as u64);
    runner.write_report().map_err(|e| runner.fail("report", e))?;
    Ok(runner.report)
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    out: &'a Path,
    report: RunReport,
    docs: Vec<Document>,
    backend: Option<&'a dyn ChatBackend>,
}

#[derive(Serialize)]
struct Rejection<'a> {
    id: &'a str,
    reason: RejectReason,
}

#[derive(Serialize)]
struct PackedStage<'a> {
    window: u64,
    plan: &'a PackingPlan,
    steps: &'a [StepManifest],
}

#[derive(Serialize)]
struct PackFile<'a> {
    stage_plan: &'a StagePlan,
    stages: Vec<PackedStage<'a>>,
}

#[derive(Serialize)]
struct MixFile<'a> {
    availability: &'a CorpusManifest,
    budgets: &'a [Budget],
    plan: &'a SamplingPlan,
    ratios: &'a RatioReport,
}

#[derive(Serialize)]
struct ScheduleFile<'a> {
    core_quota: usize,
    stage1: &'a [Batch<String>],
    stage2: &'a [Batch<String>],
}

impl<'a> Runner<'a> {
    fn run_stage(&mut self, name: &str) -> anyhow::Result<()> {
        match name {
            "filter" => self.filter(),
            "score" => self.score(),
            "enhance" => self.enhance(),
            "mix" => self.mix(),
            "pack" => self.pack(),
            "schedule" => self.schedule(),
            "hipo" => self.hipo(),
            "eval" => self.eval(),
            other => unreachable!("unknown stage {other}"),
        }
    }

    fn fail(&mut self, stage: &str, e: anyhow::Error) -> PipelineError {
        let message = format!("{e:#}");
        log::error!("stage {stage} failed: {message}");
        self.report.failure = Some(StageFailure { stage: stage.to_string(), error: message.clone() });
        if let Err(w) = self.write_report() {
            log::error!("could not write partial report: {w:#}");
        }
        PipelineError::Stage { stage: stage.to_string(), message, report: Box::new(self.report.clone()) }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        if !self.report.artifacts.iter().any(|a| a == name) {
            self.report.artifacts.push(name.to_string());
        }
        self.out.join(name)
    }

    fn write_report(&mut self) -> anyhow::Result<()> {
        let path = self.path(REPORT_FILE);
        write_json(&path, &self.report)?;
        Ok(())
    }

    fn backend(&self) -> &'a dyn ChatBackend {
        self.backend.expect("backend is set for endpoint stages")
    }

    fn endpoint(&self) -> &'a EndpointConfig {
        self.cfg.endpoint.as_ref().expect("validated")
    }

    fn load_corpus(&mut self) -> anyhow::Result<()> {
        let path = self.cfg.inputs.corpus.as_ref().expect("validated");
        let read = read_docs(path, &self.cfg.counter)?;
        self.docs = read.items;
        self.report.filter = self.cfg.stages.filter.then(|| FilterReport { malformed_lines: read.errors.len(), stats: FilterStats::default() });
        Ok(())
    }

    fn filter(&mut self) -> anyhow::Result<()> {
        let rules = self.cfg.filter.as_ref().expect("validated");
        let outcome = filter_corpus(std::mem::take(&mut self.docs), rules);
        let rejected: Vec<Rejection> = outcome.rejected.iter().map(|(d, r)| Rejection { id: &d.id, reason: *r }).collect();
        write_jsonl(&self.path("rejected.jsonl"), &rejected)?;
        write_docs(&self.path("filtered.jsonl"), &outcome.kept)?;
        if let Some(r) = self.report.filter.as_mut() {
            r.stats = outcome.stats;
        }
        self.docs = outcome.kept;
        Ok(())
    }

    fn score(&mut self) -> anyhow::Result<()> {
        let tau = self.cfg.score.as_ref().expect("validated").tau;
        let run = score_corpus(&self.docs, self.backend(), self.endpoint(), None, derive_seed(self.cfg.seed, "score"));
        write_jsonl(&self.path("scored.jsonl"), &run.records)?;
        let scored = run.scored_documents();
        let n_scored = scored.len();
        let kept = threshold_filter(scored, tau)?;
        write_docs(&self.path("kept.jsonl"), &kept)?;
        self.report.score = Some(ScoreReport { tau, stats: run.stats, kept: kept.len(), below_tau: n_scored - kept.len() });
        self.docs = kept;
        Ok(())
    }

    fn enhance(&mut self) -> anyhow::Result<()> {
        let section = self.cfg.enhance.as_ref().expect("validated");
        let dims = parse_dims(&section.dims).map_err(|e| anyhow!(e))?;
        let tau = section.tau.or(self.cfg.score.as_ref().map(|s| s.tau)).unwrap_or(DEFAULT_TAU);
        let path = self.cfg.inputs.statutes.as_ref().expect("validated");
        let statutes: Vec<StatuteRecord> = read_jsonl(path)?.items;
        let run = synthesize(&statutes, &dims, self.backend(), self.endpoint());
        write_jsonl(&self.path("synthesized_pairs.jsonl"), &run.pairs)?;
        if !run.gaps.is_empty() || !run.failures.is_empty() {
            write_json(&self.path("synthesis_issues.json"), &serde_json::json!({"gaps": run.gaps, "failures": run.failures}))?;
        }

        let lang: BTreeMap<&str, _> = statutes.iter().map(|s| (s.id.as_str(), s.lang)).collect();
        let candidates: Vec<Document> = run.pairs.iter().map(|p| pair_document(p, lang[p.statute_id.as_str()], &self.cfg.counter)).collect();
        let scoring = score_corpus(&candidates, self.backend(), self.endpoint(), None, derive_seed(self.cfg.seed, "enhance"));
        let admitted = threshold_filter(scoring.scored_documents(), tau)?;
        write_docs(&self.path("enhanced_admitted.jsonl"), &admitted)?;
        self.report.enhance = Some(EnhanceReport {
            dims: dims.len(),
            synthesis: run.stats,
            tau,
            admission: scoring.stats,
            admitted: admitted.len(),
            admitted_tokens: admitted.iter().map(|d| d.token_count).sum(),
        });
        self.docs.extend(admitted);
        Ok(())
    }

    fn mix(&mut self) -> anyhow::Result<()> {
        let section = self.cfg.mix.as_ref().expect("validated");
        let availability = manifest_from_documents(&self.docs);
        if availability.entries.is_empty() {
            return Err(anyhow!("no documents left to mix"));
        }
        let budgets = match &section.budgets {
            BudgetSpec::Rule(BudgetRule::PublishedRates) => budgets_from_rates(&availability, &published::cpt_manifest())?,
            BudgetSpec::Rule(BudgetRule::All) => budgets_from_rates(&availability, &CorpusManifest::from_entries(Vec::new()))?,
            BudgetSpec::Tokens(b) => b.clone(),
        };
        let plan = plan_sampling(&availability, &budgets, derive_seed(self.cfg.seed, "mix"))?;
        let ratios = check_ratios(&plan, &section.targets);
        write_json(&self.path("mix_plan.json"), &MixFile { availability: &availability, budgets: &budgets, plan: &plan, ratios: &ratios })?;
        let docs_in = self.docs.len();
        let sampled = execute_sampling(std::mem::take(&mut self.docs), &plan)?;
        write_docs(&self.path("mixed.jsonl"), &sampled.docs)?;
        self.report.mix = Some(MixReport {
            ratios,
            sources: sampled.stats.clone(),
            docs_in,
            docs_out: sampled.docs.len(),
            tokens_out: sampled.docs.iter().map(|d| d.token_count).sum(),
        });
        self.docs = sampled.docs;
        Ok(())
    }

    fn pack(&mut self) -> anyhow::Result<()> {
        let stage_cfg = self.cfg.pack.as_ref().expect("validated");
        let total: u64 = self.docs.iter().map(|d| d.token_count).sum();
        let stage_plan = make_stage_plan(total, stage_cfg)?;

        // Whole documents go to stage I until its token share is reached.
        let mut split = 0;
        let mut acc = 0u64;
        while split < self.docs.len() && acc < stage_plan.stages[0].data_tokens {
            acc += self.docs[split].token_count;
            split += 1;
        }
        let parts = [&self.docs[..split], &self.docs[split..]];
        let mut packed = Vec::new();
        let mut summaries = Vec::new();
        for (stage, docs) in stage_plan.stages.iter().zip(parts) {
            let plan = pack_documents(docs, stage.window_tokens)?;
            let steps = step_batches(&plan, stage)?;
            summaries.push(PackedStageReport {
                window: stage.window_tokens,
                planned_tokens: stage.data_tokens,
                docs: docs.len(),
                content_tokens: plan.content_tokens(),
                pad_tokens: plan.pad_tokens(),
                sequences: plan.sequences.len(),
                full_steps: steps.iter().filter(|s| !s.partial).count(),
                partial_steps: steps.iter().filter(|s| s.partial).count(),
            });
            packed.push((stage.window_tokens, plan, steps));
        }
        let file = PackFile {
            stage_plan: &stage_plan,
            stages: packed.iter().map(|(window, plan, steps)| PackedStage { window: *window, plan, steps }).collect(),
        };
        write_json(&self.path("pack_plan.json"), &file)?;
        self.report.pack = Some(PackReport { total_tokens: total, tokens_per_step: stage_plan.tokens_per_step, stages: summaries });
        Ok(())
    }

    fn schedule(&mut self) -> anyhow::Result<()> {
        let section = self.cfg.curriculum.as_ref().expect("validated");
        let load = |p: &Path| -> anyhow::Result<Vec<String>> {
            let samples: Vec<InstructionSample> = read_jsonl(p)?.items;
            samples
                .into_iter()
                .map(|s| s.validate().map(|_| s.id.clone()).with_context(|| format!("sample {}", s.id)))
                .collect()
        };
        let core = load(self.cfg.inputs.psft_core.as_ref().expect("validated"))?;
        let downstream = load(self.cfg.inputs.psft_downstream.as_ref().expect("validated"))?;
        let cfg = section.to_config(derive_seed(self.cfg.seed, "schedule.stage2"));
        let stage1 = stage1_batches(&core, section.batch_size, derive_seed(self.cfg.seed, "schedule.stage1"))?;
        let stage2 = stage2_batches(&core, &downstream, &cfg)?;

        let mut seen: BTreeMap<&str, u32> = BTreeMap::new();
        for b in &stage2 {
            for id in &b.downstream {
                *seen.entry(id).or_default() += 1;
            }
        }
        let coverage_exact = downstream.iter().all(|id| seen.get(id.as_str()) == Some(&cfg.epochs)) && seen.len() == downstream.len();
        write_json(&self.path("psft_schedule.json"), &ScheduleFile { core_quota: cfg.core_quota(), stage1: &stage1, stage2: &stage2 })?;
        self.report.schedule = Some(ScheduleReport {
            core_samples: core.len(),
            downstream_samples: downstream.len(),
            stage1_batches: stage1.len(),
            stage2_batches: stage2.len(),
            core_quota: cfg.core_quota(),
            observed_core_fraction: mixing_stats(&stage2),
            downstream_coverage_exact: coverage_exact,
        });
        Ok(())
    }

    fn hipo(&mut self) -> anyhow::Result<()> {
        let section = self.cfg.hipo.as_ref().expect("validated");
        let queries: Vec<HipoQuery> = read_jsonl(self.cfg.inputs.hipo_queries.as_ref().expect("validated"))?.items;
        let opts = self.cfg.metrics.unwrap_or_default();
        let mut source = EndpointSource::new(self.backend(), self.endpoint(), section.generation.clone(), opts, derive_seed(self.cfg.seed, "hipo"));
        let run = run_hipo(&queries, &mut source, &section.loss, section.max_iterations).map_err(|e| anyhow!("{e}"))?;
        let pairs: Vec<&PreferencePair> = run.iterations.iter().flat_map(|i| &i.pairs).collect();
        write_jsonl(&self.path("hipo_pairs.jsonl"), pairs.iter().copied())?;
        write_json(&self.path("hipo_iterations.json"), &run.iterations)?;
        write_json(&self.path("hipo_state.json"), &run.state)?;
        self.report.hipo = Some(hipo_report(queries.len(), &run.iterations, &run.state));
        Ok(())
    }

    fn eval(&mut self) -> anyhow::Result<()> {
        let records: Vec<EvalRecord> = read_jsonl(self.cfg.inputs.eval_records.as_ref().expect("validated"))?.items;
        let report = evaluate(&records, None, &self.cfg.metrics.unwrap_or_default())?;
        write_json(&self.path("eval_report.json"), &report)?;
        self.report.eval = Some(report);
        Ok(())
    }
}

fn hipo_report(queries: usize, iterations: &[IterationRecord], state: &HipoState) -> HipoReport {
    HipoReport {
        queries,
        iterations: iterations
            .iter()
            .map(|i| HipoIterationSummary {
                iteration: i.iteration,
                evaluated: i.evaluated,
                mean_score: i.mean_score,
                hard: i.hard.len(),
                pairs: i.pairs.len(),
                unpaired: i.unpaired.len(),
                newly_resolved: i.newly_resolved.len(),
            })
            .collect(),
        active: state.active.len(),
        resolved: state.resolved.len(),
        pairs: iterations.iter().map(|i| i.pairs.len()).sum(),
    }
}
