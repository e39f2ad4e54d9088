//! Declarative pipeline configuration (one TOML document).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use lexforge_core::corpus::CounterConfig;
use lexforge_core::filter::FilterRuleSet;
use lexforge_core::hipo::HipoConfig;
use lexforge_core::metrics::MetricOptions;
use lexforge_core::mixer::{Budget, RatioTargets};
use lexforge_core::packer::{make_stage_plan, StageConfig};
use lexforge_core::psft::CurriculumConfig;
use lexforge_core::scoring::MAX_SCORE;
use serde::{Deserialize, Serialize};

use crate::hash::sha256_hex;
use crate::hipo_source::GenerationSettings;
use crate::inference::EndpointConfig;
use crate::synth::parse_dims;

pub const DEFAULT_SEED: u64 = 20_250_101;
pub const DEFAULT_TAU: u8 = 3;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub corpus: Option<PathBuf>,
    pub statutes: Option<PathBuf>,
    pub psft_core: Option<PathBuf>,
    pub psft_downstream: Option<PathBuf>,
    pub hipo_queries: Option<PathBuf>,
    pub eval_records: Option<PathBuf>,
}

impl Inputs {
    fn named(&self) -> [(&'static str, Option<&PathBuf>); 6] {
        [
            ("inputs.corpus", self.corpus.as_ref()),
            ("inputs.statutes", self.statutes.as_ref()),
            ("inputs.psft_core", self.psft_core.as_ref()),
            ("inputs.psft_downstream", self.psft_downstream.as_ref()),
            ("inputs.hipo_queries", self.hipo_queries.as_ref()),
            ("inputs.eval_records", self.eval_records.as_ref()),
        ]
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.statutes,
            &mut self.psft_core,
            &mut self.psft_downstream,
            &mut self.hipo_queries,
            &mut self.eval_records,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub filter: bool,
    pub score: bool,
    pub enhance: bool,
    pub mix: bool,
    pub pack: bool,
    pub schedule: bool,
    pub hipo: bool,
    pub eval: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub tau: u8,
}

impl Default for ScoreSection {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceSection {
    /// `all` or a comma-separated list of dimension keys.
    pub dims: String,
    /// Admission threshold for synthesized pairs; the scoring `tau` when unset.
    pub tau: Option<u8>,
}

impl Default for EnhanceSection {
    fn default() -> Self {
        Self { dims: "all".into(), tau: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRule {
    /// Every source sampled at its rate in the published CPT composition.
    PublishedRates,
    /// Keep everything.
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BudgetSpec {
    Rule(BudgetRule),
    Tokens(Vec<Budget>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSection {
    pub budgets: BudgetSpec,
    pub targets: RatioTargets,
}

impl Default for MixSection {
    fn default() -> Self {
        Self { budgets: BudgetSpec::Rule(BudgetRule::PublishedRates), targets: RatioTargets::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSection {
    pub mixing_lambda: f64,
    pub batch_size: usize,
    pub epochs: u32,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        Self { mixing_lambda: 0.2, batch_size: 32, epochs: 1 }
    }
}

impl CurriculumSection {
    pub fn to_config(&self, seed: u64) -> CurriculumConfig {
        CurriculumConfig { epochs: self.epochs, ..CurriculumConfig::new(self.mixing_lambda, self.batch_size, seed) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HipoSection {
    pub max_iterations: u32,
    #[serde(flatten)]
    pub loss: HipoConfig,
    #[serde(flatten)]
    pub generation: GenerationSettings,
}

impl Default for HipoSection {
    fn default() -> Self {
        Self { max_iterations: 5, loss: HipoConfig::default(), generation: GenerationSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Relative to the working directory. Not part of the config hash.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Relative paths resolve against the config file's directory.
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default)]
    pub counter: CounterConfig,
    pub filter: Option<FilterRuleSet>,
    pub score: Option<ScoreSection>,
    pub enhance: Option<EnhanceSection>,
    pub mix: Option<MixSection>,
    pub pack: Option<StageConfig>,
    pub curriculum: Option<CurriculumSection>,
    pub hipo: Option<HipoSection>,
    pub endpoint: Option<EndpointConfig>,
    pub metrics: Option<MetricOptions>,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("lexforge-out")
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output_dir: default_output_dir(),
            inputs: Inputs::default(),
            stages: StageToggles::default(),
            counter: CounterConfig::default(),
            filter: None,
            score: None,
            enhance: None,
            mix: None,
            pack: None,
            curriculum: None,
            hipo: None,
            endpoint: None,
            metrics: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ConfigIssue>),
}

impl ConfigError {
    pub fn issues(&self) -> &[ConfigIssue] {
        match self {
            ConfigError::Invalid(issues) => issues,
            _ => &[],
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Parses `path` and resolves relative input paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml(&text).map_err(|message| ConfigError::Parse { path: path.to_path_buf(), message })?;
        cfg.inputs.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// The resolved config as JSON without `output_dir`: what the hash covers
    /// and what the run report echoes.
    pub fn provenance(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        v
    }

    /// SHA-256 of the canonical (key-sorted) JSON of [`Self::provenance`].
    pub fn hash(&self) -> String {
        sha256_hex(self.provenance().to_string().as_bytes())
    }

    /// Config with every section present at its default and all stages on.
    pub fn with_all_sections() -> Self {
        Self {
            stages: StageToggles { filter: true, score: true, enhance: true, mix: true, pack: true, schedule: true, hipo: true, eval: true },
            filter: Some(FilterRuleSet::default()),
            score: Some(ScoreSection::default()),
            enhance: Some(EnhanceSection::default()),
            mix: Some(MixSection::default()),
            pack: Some(StageConfig::default()),
            curriculum: Some(CurriculumSection::default()),
            hipo: Some(HipoSection::default()),
            endpoint: Some(EndpointConfig::mock()),
            metrics: Some(MetricOptions::default()),
            ..Self::default()
        }
    }
}

/// Every structural and range problem, each tagged with its field path.
pub fn validate_config(cfg: &PipelineConfig) -> Vec<ConfigIssue> {
    let mut issues = Vec::new();
    let mut issue = |path: &str, message: String| issues.push(ConfigIssue { path: path.to_string(), message });
    let s = cfg.stages;

    let sections: [(bool, &str, bool); 7] = [
        (s.filter, "filter", cfg.filter.is_some()),
        (s.score, "score", cfg.score.is_some()),
        (s.enhance, "enhance", cfg.enhance.is_some()),
        (s.mix, "mix", cfg.mix.is_some()),
        (s.pack, "pack", cfg.pack.is_some()),
        (s.schedule, "curriculum", cfg.curriculum.is_some()),
        (s.hipo, "hipo", cfg.hipo.is_some()),
    ];
    for (enabled, name, present) in sections {
        if enabled && !present {
            issue(name, "section is required when the stage is enabled".into());
        }
    }
    if (s.score || s.enhance || s.hipo) && cfg.endpoint.is_none() {
        issue("endpoint", "section is required by the score, enhance and hipo stages".into());
    }

    let needs: [(bool, &str, bool); 6] = [
        (s.filter || s.score || s.mix || s.pack, "inputs.corpus", cfg.inputs.corpus.is_some()),
        (s.enhance, "inputs.statutes", cfg.inputs.statutes.is_some()),
        (s.schedule, "inputs.psft_core", cfg.inputs.psft_core.is_some()),
        (s.schedule, "inputs.psft_downstream", cfg.inputs.psft_downstream.is_some()),
        (s.hipo, "inputs.hipo_queries", cfg.inputs.hipo_queries.is_some()),
        (s.eval, "inputs.eval_records", cfg.inputs.eval_records.is_some()),
    ];
    for (needed, path, present) in needs {
        if needed && !present {
            issue(path, "path is required by an enabled stage".into());
        }
    }
    let mut seen: BTreeMap<&PathBuf, &str> = BTreeMap::new();
    for (name, path) in cfg.inputs.named() {
        let Some(p) = path else { continue };
        if let Some(first) = seen.insert(p, name) {
            issue(name, format!("same path as {first}"));
        }
        if *p == cfg.output_dir {
            issue(name, "same path as output_dir".into());
        }
    }
    if cfg.output_dir.as_os_str().is_empty() {
        issue("output_dir", "must not be empty".into());
    }

    if let Some(f) = &cfg.filter {
        if let Err(e) = f.validate() {
            issue("filter", e.to_string());
        }
    }
    if let Some(sc) = &cfg.score {
        if sc.tau > MAX_SCORE + 1 {
            issue("score.tau", format!("must be in 0..={}", MAX_SCORE + 1));
        }
    }
    if let Some(en) = &cfg.enhance {
        if let Err(e) = parse_dims(&en.dims) {
            issue("enhance.dims", e);
        }
        if en.tau.is_some_and(|t| t > MAX_SCORE + 1) {
            issue("enhance.tau", format!("must be in 0..={}", MAX_SCORE + 1));
        }
    }
    if let Some(m) = &cfg.mix {
        if let Err(e) = m.targets.validate() {
            issue("mix.targets", e.to_string());
        }
        if let BudgetSpec::Tokens(b) = &m.budgets {
            if b.is_empty() {
                issue("mix.budgets", "must list at least one budget".into());
            }
            if b.iter().any(|b| b.tokens == 0) {
                issue("mix.budgets", "budgets must be positive".into());
            }
        }
    }
    if let Some(p) = &cfg.pack {
        if let Err(e) = make_stage_plan(p.tokens_per_step, p) {
            issue("pack", e.to_string());
        }
    }
    if let Some(c) = &cfg.curriculum {
        if !(0.0..=1.0).contains(&c.mixing_lambda) {
            issue("curriculum.mixing_lambda", format!("{} is outside [0, 1]", c.mixing_lambda));
        }
        if c.batch_size == 0 {
            issue("curriculum.batch_size", "must be at least 1".into());
        }
        if c.epochs == 0 {
            issue("curriculum.epochs", "must be at least 1".into());
        }
    }
    if let Some(h) = &cfg.hipo {
        let l = &h.loss;
        if !(l.beta > 0.0 && l.beta.is_finite()) {
            issue("hipo.beta", format!("{} must be positive", l.beta));
        }
        if !(l.nll_lambda >= 0.0 && l.nll_lambda.is_finite()) {
            issue("hipo.nll_lambda", format!("{} must be non-negative", l.nll_lambda));
        }
        if l.hard_threshold.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
            issue("hipo.hard_threshold", "must be in [0, 1]".into());
        }
        if h.max_iterations == 0 {
            issue("hipo.max_iterations", "must be at least 1".into());
        }
        if h.generation.samples_per_query == 0 {
            issue("hipo.samples_per_query", "must be at least 1".into());
        }
        if !(h.generation.temperature >= 0.0) {
            issue("hipo.temperature", "must be non-negative".into());
        }
        if h.generation.max_tokens == 0 {
            issue("hipo.max_tokens", "must be at least 1".into());
        }
    }
    if let Some(ep) = &cfg.endpoint {
        for msg in ep.validate() {
            issue("endpoint", msg);
        }
    }
    if let Some(m) = &cfg.metrics {
        if !(m.nld_max_term > 0.0 && m.nld_max_term.is_finite()) {
            issue("metrics.nld_max_term", "must be positive".into());
        }
    }
    issues
}
