use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use lexforge_core::corpus::{published, CorpusManifest, CounterConfig, EntrySource, InstructionSample};
use lexforge_core::filter::{filter_corpus, FilterRuleSet};
use lexforge_core::hipo::{
    self, advance_iteration_with, build_preference_pair, dpo_loss, hipo_loss, mine_hard_samples_with, nll, EvalOutcome,
    HipoConfig, HipoQuery, HipoState, LogProbQuad,
};
use lexforge_core::metrics::{MetricKind, MetricOptions};
use lexforge_core::mixer::{
    budgets_from_manifest, budgets_from_rates, check_post_training_mix, check_ratios, execute_sampling,
    manifest_from_documents, plan_sampling, Budget, RatioTargets, SamplingPlan, POST_TRAINING_MIX_TOLERANCE,
};
use lexforge_core::packer::{make_stage_plan, pack_documents, step_batches, Stage, StageConfig};
use lexforge_core::psft::{mixing_stats, stage1_batches, stage2_batches, CurriculumConfig};
use lexforge_core::scoring::{scorer_agreement, threshold_filter};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use lexforge::config::{validate_config, ConfigError, CurriculumSection, HipoSection, PipelineConfig, DEFAULT_TAU};
use lexforge::evaluate::{evaluate, EvalRecord};
use lexforge::hipo_source::EndpointSource;
use lexforge::inference::EndpointConfig;
use lexforge::io::{read_docs, read_json, read_jsonl, write_docs, write_json, write_jsonl};
use lexforge::pipeline::{run_pipeline, PipelineError};
use lexforge::scorer::score_corpus;
use lexforge::synth::{pair_document, parse_dims, synthesize, StatuteRecord};

const DEFAULT_CLI_SEED: u64 = 0;

#[derive(Parser)]
#[command(name = "lexforge", version, about = "Legal-domain corpus curation, training schedules and evaluation")]
struct Cli {
    /// Pipeline config (TOML). Subcommands read their own section from it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rule-based document filtering.
    Filter(FilterArgs),
    /// Judge-based quality scoring.
    Score(ScoreArgs),
    /// Knowledge-guided instruction synthesis for statutes.
    Enhance(EnhanceArgs),
    /// Ratio-controlled down-sampling.
    #[command(subcommand)]
    Mix(MixCommand),
    /// Sequence packing into fixed windows.
    Pack(PackArgs),
    /// Training data schedules.
    #[command(subcommand)]
    Schedule(ScheduleCommand),
    /// Hard-sample preference optimisation tools.
    #[command(subcommand)]
    Hipo(HipoCommand),
    /// Metric evaluation of prediction records.
    Eval(EvalArgs),
    /// The whole pipeline from one config.
    Run(RunArgs),
}

#[derive(Args)]
struct EndpointArgs {
    /// Chat-completions base URL (overrides the config; POLILEGAL_ENDPOINT overrides both).
    #[arg(long)]
    endpoint: Option<String>,
    /// Use the built-in deterministic mock endpoint.
    #[arg(long)]
    mock: bool,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    max_in_flight: Option<usize>,
}

#[derive(Args)]
struct FilterArgs {
    /// Rule file (TOML); a `[filter]` table is used when present.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Scored records, including unscorable ones with `score_error`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sample_n: Option<usize>,
    #[arg(long)]
    tau: Option<u8>,
    /// Documents at or above `tau`.
    #[arg(long)]
    kept: Option<PathBuf>,
    /// Reference labels (`{"id", "score"}` lines) for agreement statistics.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[command(flatten)]
    endpoint: EndpointArgs,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    statutes: PathBuf,
    /// `all` or a comma-separated list of dimension keys.
    #[arg(long, default_value = "all")]
    dims: String,
    #[arg(long)]
    out: PathBuf,
    /// Score the pairs and write those at or above `tau` here as documents.
    #[arg(long)]
    admitted: Option<PathBuf>,
    #[arg(long)]
    tau: Option<u8>,
    #[command(flatten)]
    endpoint: EndpointArgs,
}

#[derive(Args)]
struct MixArgs {
    /// Manifest JSON, or `published-cpt` / `published-post-training`.
    #[arg(long)]
    manifest: Option<String>,
    /// Budget list JSON (`[{"lang","source","tokens"}]`). Defaults to the
    /// manifest's sampled column, or to published sampling rates for `run`.
    #[arg(long)]
    budgets: Option<PathBuf>,
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Subcommand)]
enum MixCommand {
    /// Write the sampling plan.
    Plan {
        #[command(flatten)]
        mix: MixArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check language and domain ratios (exit 3 when off target).
    Check {
        #[command(flatten)]
        mix: MixArgs,
    },
    /// Sample documents to the planned budgets.
    Run {
        #[command(flatten)]
        mix: MixArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PackArgs {
    #[arg(long, default_value_t = 8192)]
    window: u64,
    #[arg(long, default_value_t = 786_432)]
    step_tokens: u64,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the two-stage plan for this many tokens instead of packing.
    #[arg(long)]
    total_tokens: Option<u64>,
}

#[derive(Subcommand)]
enum ScheduleCommand {
    /// Two-stage curriculum batches over core and downstream sets.
    Psft {
        #[arg(long)]
        core: PathBuf,
        #[arg(long)]
        downstream: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum HipoCommand {
    /// Hard query ids from evaluation outcomes.
    Mine {
        #[arg(long)]
        outcomes: PathBuf,
    },
    /// Preference pairs for the hard queries.
    Pairs {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Loss terms for log-probability quads.
    Loss {
        #[arg(long)]
        quads: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Advance the active/resolved state by one round of outcomes.
    Iterate {
        /// Existing state; a fresh one is built from `--queries` otherwise.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// The full loop against an endpoint.
    Run {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        max_iterations: Option<u32>,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Applies to every record; records carry their own metric otherwise.
    #[arg(long, value_parser = parse_metric)]
    metric: Option<MetricKind>,
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Exit 3 when ratio or coverage checks fail.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    endpoint: EndpointArgs,
}

fn parse_metric(s: &str) -> Result<MetricKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown metric `{s}`"))
}

/// Failure classes, mapped to exit codes 1, 2 and 3.
enum Failure {
    Config(anyhow::Error),
    Stage(anyhow::Error),
    Check(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Stage(e.into())
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

type CliResult<T = ()> = Result<T, Failure>;

struct Ctx {
    config: Option<toml::Table>,
    config_path: Option<PathBuf>,
    seed: u64,
    report: Option<PathBuf>,
}

impl Ctx {
    /// The `key` table of the config file, or the defaults.
    fn section<T: DeserializeOwned + Default>(&self, key: &str) -> CliResult<T> {
        match self.config.as_ref().and_then(|c| c.get(key)) {
            Some(v) => v.clone().try_into().with_context(|| format!("config section `{key}`")).map_err(config_err),
            None => Ok(T::default()),
        }
    }

    fn counter(&self) -> CliResult<CounterConfig> {
        match self.config.as_ref().and_then(|c| c.get("counter")) {
            Some(v) => v.clone().try_into().context("config field `counter`").map_err(config_err),
            None => Ok(CounterConfig::default()),
        }
    }

    fn endpoint(&self, args: &EndpointArgs) -> CliResult<EndpointConfig> {
        let mut ep: EndpointConfig = self.section("endpoint")?;
        if let Some(url) = &args.endpoint {
            ep.base_url = Some(url.clone());
            ep.mock = false;
        }
        if args.mock {
            ep.mock = true;
        }
        if let Some(m) = &args.model {
            ep.model = m.clone();
        }
        if let Some(n) = args.max_in_flight {
            ep.max_in_flight = n;
        }
        let issues = ep.validate();
        if !issues.is_empty() {
            return Err(config_err(anyhow!("endpoint: {}", issues.join("; "))));
        }
        Ok(ep)
    }

    fn emit<T: Serialize>(&self, value: &T) -> CliResult {
        match &self.report {
            Some(p) => write_json(p, value)?,
            None => {
                use std::io::Write;
                let text = serde_json::to_string_pretty(value)?;
                match writeln!(std::io::stdout().lock(), "{text}") {
                    Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

fn parse_or_load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    read_json(path).map_err(config_err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    let config = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(config_err)?;
            Some(text.parse::<toml::Table>().with_context(|| format!("parsing {}", p.display())).map_err(config_err)?)
        }
        None => None,
    };
    let config_seed = config.as_ref().and_then(|c| c.get("seed")).and_then(|v| v.as_integer()).map(|s| s as u64);
    let ctx = Ctx { config, config_path: cli.config.clone(), seed: cli.seed.or(config_seed).unwrap_or(DEFAULT_CLI_SEED), report: cli.report };
    match cli.command {
        Command::Filter(a) => filter(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::Enhance(a) => enhance(&ctx, a),
        Command::Mix(c) => mix(&ctx, c),
        Command::Pack(a) => pack(&ctx, a),
        Command::Schedule(ScheduleCommand::Psft { core, downstream, lambda, batch, epochs, out }) => {
            schedule(&ctx, &core, &downstream, lambda, batch, epochs, &out)
        }
        Command::Hipo(c) => hipo_cmd(&ctx, c),
        Command::Eval(a) => eval(&ctx, a),
        Command::Run(a) => run(&ctx, a),
    }
}

fn filter(ctx: &Ctx, a: FilterArgs) -> CliResult {
    let rules: FilterRuleSet = match &a.rules {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(config_err)?;
            let table: toml::Table = text.parse().with_context(|| format!("parsing {}", p.display())).map_err(config_err)?;
            let v = table.get("filter").cloned().unwrap_or(toml::Value::Table(table));
            v.try_into().context("filter rules").map_err(config_err)?
        }
        None => ctx.section("filter")?,
    };
    rules.validate().map_err(config_err)?;
    let docs = read_docs(&a.input, &ctx.counter()?)?;
    let outcome = filter_corpus(docs.items, &rules);
    write_docs(&a.out, &outcome.kept)?;
    let report = serde_json::json!({"rules": rules, "stats": outcome.stats, "malformed_lines": docs.errors.len()});
    match &a.stats {
        Some(p) => write_json(p, &report)?,
        None => ctx.emit(&report)?,
    }
    Ok(())
}

#[derive(Deserialize)]
struct ReferenceLabel {
    id: String,
    score: u8,
}

fn score(ctx: &Ctx, a: ScoreArgs) -> CliResult {
    let ep = ctx.endpoint(&a.endpoint)?;
    let backend = ep.backend().map_err(config_err)?;
    let tau = match a.tau {
        Some(t) => t,
        None => ctx.section::<Option<lexforge::config::ScoreSection>>("score")?.map_or(DEFAULT_TAU, |s| s.tau),
    };
    let docs = read_docs(&a.input, &ctx.counter()?)?.items;
    let run = score_corpus(&docs, &*backend, &ep, a.sample_n, ctx.seed);
    write_jsonl(&a.out, &run.records)?;
    let mut report = serde_json::json!({"stats": run.stats, "tau": tau, "seed": ctx.seed});
    if let Some(p) = &a.kept {
        let kept = threshold_filter(run.scored_documents(), tau)?;
        report["kept"] = kept.len().into();
        write_docs(p, &kept)?;
    }
    if let Some(p) = &a.reference {
        let labels: BTreeMap<String, u8> = read_jsonl::<ReferenceLabel>(p)?.items.into_iter().map(|l| (l.id, l.score)).collect();
        let (preds, golds): (Vec<f64>, Vec<f64>) = run
            .records
            .iter()
            .filter_map(|r| Some((r.score? as f64, *labels.get(&r.id)? as f64)))
            .unzip();
        report["agreement"] = match scorer_agreement(&preds, &golds) {
            Ok(a) => serde_json::to_value(a)?,
            Err(e) => serde_json::json!({"error": e.to_string()}),
        };
        report["agreement_n"] = preds.len().into();
    }
    ctx.emit(&report)?;
    if run.stats.selected > 0 && run.stats.scored == 0 {
        return Err(Failure::Stage(anyhow!("none of the {} selected documents could be scored", run.stats.selected)));
    }
    Ok(())
}

fn enhance(ctx: &Ctx, a: EnhanceArgs) -> CliResult {
    let dims = parse_dims(&a.dims).map_err(|e| config_err(anyhow!(e)))?;
    let ep = ctx.endpoint(&a.endpoint)?;
    let backend = ep.backend().map_err(config_err)?;
    let statutes: Vec<StatuteRecord> = read_jsonl(&a.statutes)?.items;
    let run = synthesize(&statutes, &dims, &*backend, &ep);
    write_jsonl(&a.out, &run.pairs)?;
    let mut report = serde_json::json!({"stats": run.stats, "gaps": run.gaps, "failures": run.failures});
    if let Some(p) = &a.admitted {
        let counter = ctx.counter()?;
        let lang: BTreeMap<&str, _> = statutes.iter().map(|s| (s.id.as_str(), s.lang)).collect();
        let docs: Vec<_> = run.pairs.iter().map(|pair| pair_document(pair, lang[pair.statute_id.as_str()], &counter)).collect();
        let scored = score_corpus(&docs, &*backend, &ep, None, ctx.seed);
        let admitted = threshold_filter(scored.scored_documents(), a.tau.unwrap_or(DEFAULT_TAU))?;
        write_docs(p, &admitted)?;
        report["admission"] = serde_json::to_value(&scored.stats)?;
        report["admitted"] = admitted.len().into();
    }
    ctx.emit(&report)
}

fn load_manifest(spec: &str) -> CliResult<CorpusManifest> {
    match spec {
        "published-cpt" => Ok(published::cpt_manifest()),
        "published-post-training" => Ok(published::post_training_manifest()),
        path => parse_or_load(Path::new(path)),
    }
}

fn is_instruction_manifest(m: &CorpusManifest) -> bool {
    !m.entries.is_empty() && m.entries.iter().all(|e| matches!(e.source, EntrySource::Instruction(_)))
}

fn targets(ctx: &Ctx, tolerance: Option<f64>) -> CliResult<RatioTargets> {
    let mix: toml::Table = ctx.section("mix")?;
    let mut t: RatioTargets = match mix.get("targets") {
        Some(v) => v.clone().try_into().context("config section `mix.targets`").map_err(config_err)?,
        None => RatioTargets::default(),
    };
    if let Some(tol) = tolerance {
        t.tolerance = tol;
    }
    t.validate().map_err(config_err)?;
    Ok(t)
}

fn mix_plan(ctx: &Ctx, m: &MixArgs, manifest: &CorpusManifest, default_rates: bool) -> CliResult<(Vec<Budget>, SamplingPlan)> {
    let budgets: Vec<Budget> = match &m.budgets {
        Some(p) => parse_or_load(p)?,
        None if default_rates => budgets_from_rates(manifest, &published::cpt_manifest())?,
        None => budgets_from_manifest(manifest).map_err(config_err)?,
    };
    let plan = plan_sampling(manifest, &budgets, ctx.seed).map_err(config_err)?;
    Ok((budgets, plan))
}

fn mix(ctx: &Ctx, c: MixCommand) -> CliResult {
    match c {
        MixCommand::Plan { mix, out } => {
            let manifest = load_manifest(mix.manifest.as_deref().ok_or_else(|| config_err(anyhow!("--manifest is required")))?)?;
            let (_, plan) = mix_plan(ctx, &mix, &manifest, false)?;
            let ratios = check_ratios(&plan, &targets(ctx, mix.tolerance)?);
            let doc = serde_json::json!({"plan": plan, "ratios": ratios});
            match out {
                Some(p) => write_json(&p, &doc)?,
                None => ctx.emit(&doc)?,
            }
            Ok(())
        }
        MixCommand::Check { mix } => {
            let manifest = load_manifest(mix.manifest.as_deref().ok_or_else(|| config_err(anyhow!("--manifest is required")))?)?;
            let (passed, doc) = if is_instruction_manifest(&manifest) {
                let r = check_post_training_mix(&manifest, 0.7, mix.tolerance.unwrap_or(POST_TRAINING_MIX_TOLERANCE));
                (r.passed, serde_json::to_value(r)?)
            } else {
                let (_, plan) = mix_plan(ctx, &mix, &manifest, false)?;
                let r = check_ratios(&plan, &targets(ctx, mix.tolerance)?);
                (r.passed, serde_json::to_value(r)?)
            };
            ctx.emit(&doc)?;
            if passed {
                Ok(())
            } else {
                Err(Failure::Check("mix ratios are outside tolerance".into()))
            }
        }
        MixCommand::Run { mix, input, out } => {
            let docs = read_docs(&input, &ctx.counter()?)?.items;
            let (manifest, default_rates) = match mix.manifest.as_deref() {
                Some(spec) => (load_manifest(spec)?, false),
                None => (manifest_from_documents(&docs), true),
            };
            let (_, plan) = mix_plan(ctx, &mix, &manifest, default_rates)?;
            let ratios = check_ratios(&plan, &targets(ctx, mix.tolerance)?);
            let sampled = execute_sampling(docs, &plan)?;
            write_docs(&out, &sampled.docs)?;
            ctx.emit(&serde_json::json!({"plan": plan, "ratios": ratios, "sources": sampled.stats}))
        }
    }
}

fn pack(ctx: &Ctx, a: PackArgs) -> CliResult {
    if let Some(total) = a.total_tokens {
        let mut cfg: StageConfig = ctx.section("pack")?;
        cfg.tokens_per_step = a.step_tokens;
        let plan = make_stage_plan(total, &cfg).map_err(config_err)?;
        return ctx.emit(&plan);
    }
    let (Some(input), Some(out)) = (&a.input, &a.out) else {
        return Err(config_err(anyhow!("--in and --out are required unless --total-tokens is given")));
    };
    if a.window == 0 || a.step_tokens % a.window != 0 {
        return Err(config_err(anyhow!("--step-tokens {} is not a multiple of --window {}", a.step_tokens, a.window)));
    }
    let docs = read_docs(input, &ctx.counter()?)?.items;
    let plan = pack_documents(&docs, a.window)?;
    let stage = Stage { window_tokens: a.window, data_tokens: plan.content_tokens(), sequences_per_step: a.step_tokens / a.window };
    let steps = step_batches(&plan, &stage)?;
    write_json(out, &serde_json::json!({"stage": stage, "plan": plan, "steps": steps}))?;
    ctx.emit(&serde_json::json!({
        "window": a.window,
        "sequences": plan.sequences.len(),
        "content_tokens": plan.content_tokens(),
        "pad_tokens": plan.pad_tokens(),
        "pad_fraction": plan.pad_fraction(),
        "full_steps": steps.iter().filter(|s| !s.partial).count(),
        "partial_steps": steps.iter().filter(|s| s.partial).count(),
    }))
}

fn schedule(ctx: &Ctx, core: &Path, downstream: &Path, lambda: Option<f64>, batch: Option<usize>, epochs: Option<u32>, out: &Path) -> CliResult {
    let mut section: CurriculumSection = ctx.section("curriculum")?;
    if let Some(l) = lambda {
        section.mixing_lambda = l;
    }
    if let Some(b) = batch {
        section.batch_size = b;
    }
    if let Some(e) = epochs {
        section.epochs = e;
    }
    let cfg: CurriculumConfig = section.to_config(ctx.seed);
    cfg.validate().map_err(config_err)?;
    let ids = |p: &Path| -> CliResult<Vec<String>> { Ok(read_jsonl::<InstructionSample>(p)?.items.into_iter().map(|s| s.id).collect()) };
    let (core, downstream) = (ids(core)?, ids(downstream)?);
    let stage1 = stage1_batches(&core, cfg.batch_size, ctx.seed)?;
    let stage2 = stage2_batches(&core, &downstream, &cfg)?;
    write_json(out, &serde_json::json!({"config": cfg, "core_quota": cfg.core_quota(), "stage1": stage1, "stage2": stage2}))?;
    ctx.emit(&serde_json::json!({
        "stage1_batches": stage1.len(),
        "stage2_batches": stage2.len(),
        "core_quota": cfg.core_quota(),
        "observed_core_fraction": mixing_stats(&stage2),
    }))
}

fn hipo_config(ctx: &Ctx) -> CliResult<HipoSection> {
    let section: HipoSection = ctx.section("hipo")?;
    section.loss.validate().map_err(config_err)?;
    Ok(section)
}

#[derive(Serialize)]
struct LossRow {
    index: usize,
    margin: f64,
    dpo: f64,
    nll: f64,
    hipo: f64,
}

fn hipo_cmd(ctx: &Ctx, c: HipoCommand) -> CliResult {
    let section = hipo_config(ctx)?;
    let cfg: &HipoConfig = &section.loss;
    match c {
        HipoCommand::Mine { outcomes } => {
            let outcomes: Vec<EvalOutcome> = read_jsonl(&outcomes)?.items;
            ctx.emit(&mine_hard_samples_with(&outcomes, cfg))
        }
        HipoCommand::Pairs { queries, outcomes, out } => {
            let queries: BTreeMap<String, HipoQuery> = read_jsonl::<HipoQuery>(&queries)?.items.into_iter().map(|q| (q.id.clone(), q)).collect();
            let outcomes: Vec<EvalOutcome> = read_jsonl(&outcomes)?.items;
            let hard = mine_hard_samples_with(&outcomes, cfg);
            let mut pairs = Vec::new();
            let mut unpaired = Vec::new();
            for o in outcomes.iter().filter(|o| hard.contains(&o.query_id)) {
                let q = queries.get(&o.query_id).ok_or_else(|| anyhow!("outcome for unknown query {}", o.query_id))?;
                match build_preference_pair(&q.query, &q.golden_answer, o)? {
                    Some(p) => pairs.push(p),
                    None => unpaired.push(o.query_id.clone()),
                }
            }
            write_jsonl(&out, &pairs)?;
            ctx.emit(&serde_json::json!({"hard": hard.len(), "pairs": pairs.len(), "unpaired": unpaired}))
        }
        HipoCommand::Loss { quads, out } => {
            let quads: Vec<LogProbQuad> = read_jsonl(&quads)?.items;
            let mut rows = Vec::with_capacity(quads.len());
            for (index, q) in quads.iter().enumerate() {
                rows.push(LossRow {
                    index,
                    margin: q.margin(),
                    dpo: dpo_loss(q, cfg.beta).with_context(|| format!("quad {index}"))?,
                    nll: nll(q, cfg.nll_normalization),
                    hipo: hipo_loss(q, cfg).with_context(|| format!("quad {index}"))?,
                });
            }
            let mean = |f: fn(&LossRow) -> f64| if rows.is_empty() { None } else { Some(rows.iter().map(f).sum::<f64>() / rows.len() as f64) };
            let summary = serde_json::json!({"quads": rows.len(), "mean_dpo": mean(|r| r.dpo), "mean_hipo": mean(|r| r.hipo), "config": cfg});
            if let Some(p) = out {
                write_jsonl(&p, &rows)?;
            }
            ctx.emit(&summary)
        }
        HipoCommand::Iterate { state, queries, outcomes, out } => {
            let state: HipoState = match (state, queries) {
                (Some(p), _) => read_json(&p)?,
                (None, Some(q)) => HipoState::new(read_jsonl::<HipoQuery>(&q)?.items.into_iter().map(|q| q.id)),
                (None, None) => return Err(config_err(anyhow!("either --state or --queries is required"))),
            };
            let outcomes: Vec<EvalOutcome> = read_jsonl(&outcomes)?.items;
            let next = advance_iteration_with(&state, &outcomes, cfg)?;
            write_json(&out, &next)?;
            ctx.emit(&serde_json::json!({"iteration": next.iteration, "active": next.active.len(), "resolved": next.resolved.len()}))
        }
        HipoCommand::Run { queries, out_dir, max_iterations, endpoint } => {
            let ep = ctx.endpoint(&endpoint)?;
            let backend = ep.backend().map_err(config_err)?;
            let queries: Vec<HipoQuery> = read_jsonl(&queries)?.items;
            let opts: MetricOptions = ctx.section("metrics")?;
            let mut source = EndpointSource::new(&*backend, &ep, section.generation.clone(), opts, ctx.seed);
            let run = hipo::run_hipo(&queries, &mut source, cfg, max_iterations.unwrap_or(section.max_iterations)).map_err(|e| anyhow!("{e}"))?;
            let pairs: Vec<_> = run.iterations.iter().flat_map(|i| &i.pairs).collect();
            write_jsonl(&out_dir.join("hipo_pairs.jsonl"), pairs.iter().copied())?;
            write_json(&out_dir.join("hipo_iterations.json"), &run.iterations)?;
            write_json(&out_dir.join("hipo_state.json"), &run.state)?;
            let active: Vec<usize> = run.iterations.iter().map(|i| i.evaluated).collect();
            ctx.emit(&serde_json::json!({"active_per_iteration": active, "pairs": pairs.len(), "resolved": run.state.resolved.len()}))
        }
    }
}

fn eval(ctx: &Ctx, a: EvalArgs) -> CliResult {
    let records: Vec<EvalRecord> = read_jsonl(&a.input)?.items;
    let opts: MetricOptions = ctx.section("metrics")?;
    let report = evaluate(&records, a.metric, &opts).map_err(config_err)?;
    ctx.emit(&report)
}

fn run(ctx: &Ctx, a: RunArgs) -> CliResult {
    let path = ctx.config_path.as_ref().ok_or_else(|| config_err(anyhow!("`run` needs --config")))?;
    let mut cfg = PipelineConfig::load(path).map_err(config_err)?;
    cfg.seed = ctx.seed;
    if let Some(dir) = a.output_dir {
        cfg.output_dir = dir;
    }
    if let Some(ep) = cfg.endpoint.as_mut() {
        if let Some(url) = &a.endpoint.endpoint {
            ep.base_url = Some(url.clone());
            ep.mock = false;
        }
        ep.mock |= a.endpoint.mock;
    }
    let issues = validate_config(&cfg);
    if !issues.is_empty() {
        return Err(config_err(ConfigError::Invalid(issues)));
    }
    let report = match run_pipeline(&cfg) {
        Ok(r) => r,
        Err(PipelineError::Config(e)) => return Err(config_err(e)),
        Err(PipelineError::Stage { stage, message, report }) => {
            ctx.emit(&report)?;
            return Err(Failure::Stage(anyhow!("stage `{stage}` failed: {message}")));
        }
    };
    ctx.emit(&report)?;
    if a.strict {
        let mut failed = Vec::new();
        if report.mix.as_ref().is_some_and(|m| !m.ratios.passed) {
            failed.push("mix ratios");
        }
        if report.schedule.as_ref().is_some_and(|s| !s.downstream_coverage_exact) {
            failed.push("downstream coverage");
        }
        if !failed.is_empty() {
            return Err(Failure::Check(failed.join(", ")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_resolution() {
        let cli = Cli::parse_from(["lexforge", "eval", "--in", "x.jsonl", "--seed", "9"]);
        assert_eq!(cli.seed, Some(9));
    }
}
