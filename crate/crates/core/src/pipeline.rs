//! Config-driven commands: perturb a benchmark, run a model on a variant,
//! analyze the runs and write the report.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! datasets/<benchmark>/<variant>.jsonl           items
//! datasets/<benchmark>/<kind>.records.jsonl      perturbation records
//! datasets/<benchmark>/<kind>.summary.json
//! runs/<benchmark>/<variant>/<model>.jsonl       per-item results
//! runs/<benchmark>/<variant>/<model>.summary.json
//! analysis/analysis.json
//! report/*.csv, report/report.md
//! ```
//!
//! Every file carries the config hash. Long commands rewrite their outputs
//! after each batch, so an interrupted command resumes where it stopped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, Analysis, AnalysisError, FailurePolicy, ModelInfo, RunResults, Variant};
use crate::dataset::{self, Benchmark, BenchmarkItem, DatasetError};
use crate::eval::{self, EvalSettings, ItemResult};
use crate::lexical::{self, LexicalMode, LexicalModeTag, LexicalPerturbationRecord, Lexicon};
use crate::llm::{LlmError, LlmGateway, ModelSpec, ResponseCache, Router};
use crate::metrics::{self, Aggregates};
use crate::parse::{FixtureParser, HttpSidecar, ParseCache, ParseError, ParseGateway, ParserBackend, StdioSidecar};
use crate::stats::StabilityOptions;
use crate::syntax::{self, RealizationMode, SyntacticMode, SyntacticPerturbationRecord};
use crate::util;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("item {item_id}: {message}")]
    Item { item_id: String, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Source file or directory in the benchmark's native format, or a
    /// canonical `.jsonl` item file.
    pub path: PathBuf,
    /// Seeded subset size; all items when absent.
    #[serde(default)]
    pub sample: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParserKind {
    /// Hand-written parses in compact notation.
    #[default]
    Fixture,
    Stdio,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParserConfig {
    #[serde(default)]
    pub backend: ParserKind,
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    /// Program and arguments of a stdio sidecar.
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default)]
    pub url: Option<String>,
    /// Parser version for fixture and HTTP backends; stdio sidecars report
    /// their own.
    #[serde(default)]
    pub version: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            backend: ParserKind::Fixture,
            fixture: None,
            command: Vec::new(),
            url: None,
            version: None,
            timeout_secs: default_timeout(),
        }
    }
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    #[serde(default = "default_lexical_mode")]
    pub lexical_mode: LexicalModeTag,
    #[serde(default = "default_syntactic_mode")]
    pub syntactic_mode: RealizationMode,
    /// Rewriter for LLM modes, and fallback for rules mode when set.
    #[serde(default)]
    pub perturber_model: Option<String>,
    /// Synonym list for lexicon mode; the bundled one when absent.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default = "default_rate")]
    pub lexicon_rate: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            lexical_mode: default_lexical_mode(),
            syntactic_mode: default_syntactic_mode(),
            perturber_model: None,
            lexicon: None,
            lexicon_rate: default_rate(),
        }
    }
}

fn default_lexical_mode() -> LexicalModeTag {
    LexicalModeTag::Lexicon
}

fn default_syntactic_mode() -> RealizationMode {
    RealizationMode::Rules
}

fn default_rate() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub models: Vec<String>,
    #[serde(default)]
    pub judge_model: Option<String>,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub failures: FailurePolicy,
}

fn default_max_tokens() -> u32 {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelismConfig {
    /// Concurrent requests per endpoint.
    #[serde(default = "default_per_endpoint")]
    pub per_endpoint: usize,
    /// Items processed between checkpoints.
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_secs: u64,
}

impl Default for ParallelismConfig {
    fn default() -> Self {
        ParallelismConfig {
            per_endpoint: default_per_endpoint(),
            batch: default_batch(),
            request_timeout_secs: default_request_timeout(),
        }
    }
}

fn default_per_endpoint() -> usize {
    4
}

fn default_batch() -> usize {
    32
}

fn default_request_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub bootstrap_seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bootstrap_resamples: default_resamples(),
            bootstrap_seed: 0,
            level: default_level(),
        }
    }
}

fn default_resamples() -> usize {
    10_000
}

fn default_level() -> f64 {
    0.95
}

impl AnalysisConfig {
    pub fn stability_options(&self) -> StabilityOptions {
        StabilityOptions {
            resamples: self.bootstrap_resamples,
            seed: self.bootstrap_seed,
            level: self.level,
        }
    }
}

/// Everything a run depends on. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetConfig>,
    #[serde(default)]
    pub parser: ParserConfig,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub parallelism: ParallelismConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        RunConfig::from_toml(&text, &base)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.version != CONFIG_VERSION {
            return Err(PipelineError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        for name in self.datasets.keys() {
            if Benchmark::from_short_name(name).is_none() {
                return Err(PipelineError::Config(format!("unknown benchmark {name:?} in [datasets]")));
            }
        }
        let known: BTreeSet<&str> = self.models.iter().map(|m| m.model_id.as_str()).collect();
        let mut needed: Vec<&str> = self.evaluation.models.iter().map(String::as_str).collect();
        needed.extend(self.evaluation.judge_model.as_deref());
        needed.extend(self.evaluation.embedding_model.as_deref());
        needed.extend(self.perturbation.perturber_model.as_deref());
        for m in needed {
            if !known.contains(m) {
                return Err(PipelineError::Config(format!("model {m:?} is not in [[models]]")));
            }
        }
        for m in &self.models {
            m.validate().map_err(PipelineError::Config)?;
        }
        if !(self.perturbation.lexicon_rate > 0.0 && self.perturbation.lexicon_rate <= 1.0) {
            return Err(PipelineError::Config("lexicon_rate must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        util::sha256_hex(&json)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    fn cache_dir(&self) -> PathBuf {
        match &self.cache_dir {
            Some(d) => self.resolve(d),
            None => self.output_dir().join("cache"),
        }
    }

    pub fn benchmarks(&self) -> Vec<Benchmark> {
        let mut b: Vec<Benchmark> = self
            .datasets
            .keys()
            .filter_map(|k| Benchmark::from_short_name(k))
            .collect();
        b.sort();
        b
    }

    fn dataset(&self, b: Benchmark) -> Result<&DatasetConfig, PipelineError> {
        self.datasets
            .iter()
            .find(|(k, _)| Benchmark::from_short_name(k) == Some(b))
            .map(|(_, v)| v)
            .ok_or_else(|| PipelineError::Usage(format!("no dataset configured for {}", b.short_name())))
    }
}

/// Seeds and modes copied into every summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub seed: u64,
    pub lexical_mode: LexicalModeTag,
    pub syntactic_mode: RealizationMode,
    pub failures: FailurePolicy,
}

/// A record with the config hash of the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    #[serde(flatten)]
    pub record: T,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub applied: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbSummary {
    pub meta: RunMeta,
    pub benchmark: String,
    pub kind: Variant,
    pub mode: String,
    pub items: usize,
    pub items_changed: usize,
    pub records: usize,
    pub fallbacks: usize,
    /// Records whose final text lost a protected string or gold answer.
    pub protected_violations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_changes_per_100_words: Option<f64>,
    /// Per transformation kind, for syntactic runs.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_kind: BTreeMap<String, KindCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub meta: RunMeta,
    pub model_id: String,
    pub benchmark: String,
    pub variant: Variant,
    pub n_items: usize,
    pub n_failed: usize,
    pub failure_rate: f64,
    pub aggregates: Aggregates,
    /// Served-model fingerprints seen in this run.
    pub fingerprints: Vec<String>,
}

/// File-name-safe form of a model id.
pub fn file_stem(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    util::write_json_pretty(path, value).map_err(io_err(path))
}

fn write_stamped<T: Serialize + Clone>(path: &Path, hash: &str, records: &[T]) -> Result<(), PipelineError> {
    let stamped: Vec<Stamped<T>> = records
        .iter()
        .map(|r| Stamped {
            config_hash: hash.to_string(),
            record: r.clone(),
        })
        .collect();
    util::write_jsonl(path, &stamped).map_err(io_err(path))
}

/// Records already written by a run with the same config, or nothing.
fn resume<T: DeserializeOwned>(path: &Path, hash: &str) -> Vec<T> {
    if !path.exists() {
        return Vec::new();
    }
    match util::read_jsonl::<Stamped<T>>(path) {
        Ok(rows) if rows.iter().all(|r| r.config_hash == hash) => rows.into_iter().map(|r| r.record).collect(),
        Ok(_) => {
            log::warn!("{} was written under another config; starting over", path.display());
            Vec::new()
        }
        Err(e) => {
            log::warn!("cannot resume from {}: {e}; starting over", path.display());
            Vec::new()
        }
    }
}

pub struct Pipeline {
    pub config: RunConfig,
    hash: String,
    gateway: LlmGateway,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let hash = config.hash();
        let router = Router::new(Duration::from_secs(config.parallelism.request_timeout_secs))?;
        let mut gateway = LlmGateway::new(Arc::new(router), ResponseCache::on_disk(config.cache_dir()))
            .with_parallelism(config.parallelism.per_endpoint);
        for m in &config.models {
            gateway.register(m.clone());
        }
        Ok(Pipeline { config, hash, gateway })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn gateway(&self) -> &LlmGateway {
        &self.gateway
    }

    pub fn meta(&self) -> RunMeta {
        RunMeta {
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            lexical_mode: self.config.perturbation.lexical_mode,
            syntactic_mode: self.config.perturbation.syntactic_mode,
            failures: self.config.evaluation.failures,
        }
    }

    fn dataset_dir(&self, b: Benchmark) -> PathBuf {
        self.config.output_dir().join("datasets").join(b.short_name())
    }

    pub fn dataset_path(&self, b: Benchmark, variant: Variant) -> PathBuf {
        self.dataset_dir(b).join(format!("{}.jsonl", variant.name()))
    }

    pub fn records_path(&self, b: Benchmark, kind: Variant) -> PathBuf {
        self.dataset_dir(b).join(format!("{}.records.jsonl", kind.name()))
    }

    pub fn perturb_summary_path(&self, b: Benchmark, kind: Variant) -> PathBuf {
        self.dataset_dir(b).join(format!("{}.summary.json", kind.name()))
    }

    pub fn results_path(&self, model_id: &str, b: Benchmark, variant: Variant) -> PathBuf {
        self.config
            .output_dir()
            .join("runs")
            .join(b.short_name())
            .join(variant.name())
            .join(format!("{}.jsonl", file_stem(model_id)))
    }

    pub fn run_summary_path(&self, model_id: &str, b: Benchmark, variant: Variant) -> PathBuf {
        self.results_path(model_id, b, variant).with_extension("summary.json")
    }

    pub fn analysis_path(&self) -> PathBuf {
        self.config.output_dir().join("analysis").join("analysis.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.config.output_dir().join("report")
    }

    fn stamp(&self, mut item: BenchmarkItem) -> BenchmarkItem {
        item.source_meta.insert("config_hash".into(), self.hash.clone());
        item
    }

    /// Loads (and samples) the configured source and writes the original
    /// variant file.
    pub fn prepare_original(&self, b: Benchmark) -> Result<Vec<BenchmarkItem>, PipelineError> {
        let ds = self.config.dataset(b)?;
        let loaded = dataset::load(b, &self.config.resolve(&ds.path))?;
        for issue in &loaded.issues {
            log::warn!("{}: {} ({:?})", issue.location, issue.message, issue.severity);
        }
        let items = match ds.sample {
            Some(n) => dataset::sample_subset(&loaded.items, n, self.config.seed)?,
            None => loaded.items,
        };
        let items: Vec<BenchmarkItem> = items.into_iter().map(|i| self.stamp(i)).collect();
        let path = self.dataset_path(b, Variant::Original);
        dataset::write_items(&path, &items)?;
        Ok(items)
    }

    fn parser(&self) -> Result<ParseGateway, PipelineError> {
        let p = &self.config.parser;
        let backend: Box<dyn ParserBackend> = match p.backend {
            ParserKind::Fixture => {
                let path = p
                    .fixture
                    .as_ref()
                    .ok_or_else(|| PipelineError::Config("parser.fixture is required for the fixture backend".into()))?;
                let path = self.config.resolve(path);
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                let version = p.version.as_deref().unwrap_or("fixture");
                Box::new(FixtureParser::from_compact(version, &text)?)
            }
            ParserKind::Stdio => {
                let (program, args) = p
                    .command
                    .split_first()
                    .ok_or_else(|| PipelineError::Config("parser.command is required for the stdio backend".into()))?;
                Box::new(StdioSidecar::spawn(program, args)?)
            }
            ParserKind::Http => {
                let url = p
                    .url
                    .as_deref()
                    .ok_or_else(|| PipelineError::Config("parser.url is required for the http backend".into()))?;
                let version = p
                    .version
                    .as_deref()
                    .ok_or_else(|| PipelineError::Config("parser.version is required for the http backend".into()))?;
                Box::new(HttpSidecar::new(url, version, Duration::from_secs(p.timeout_secs))?)
            }
        };
        Ok(ParseGateway::new(
            backend,
            ParseCache::on_disk(self.config.cache_dir().join("parses")),
        ))
    }

    fn perturber(&self) -> Result<String, PipelineError> {
        self.config
            .perturbation
            .perturber_model
            .clone()
            .ok_or_else(|| PipelineError::Config("perturbation.perturber_model is required for LLM mode".into()))
    }

    /// Builds the `kind` variant of benchmark `b`.
    pub fn perturb(&self, b: Benchmark, kind: Variant) -> Result<PerturbSummary, PipelineError> {
        if kind == Variant::Original {
            return Err(PipelineError::Usage("perturb needs --variant lexical or syntactic".into()));
        }
        let items = self.prepare_original(b)?;
        match kind {
            Variant::Lexical => self.perturb_lexical(b, &items),
            _ => self.perturb_syntactic(b, &items),
        }
    }

    /// Runs `step` over `items` in checkpointed batches, skipping the prefix
    /// already present in `done`.
    fn batched<R: Send>(
        &self,
        items: &[BenchmarkItem],
        done: usize,
        step: impl Fn(&BenchmarkItem) -> Result<R, PipelineError> + Sync,
        mut checkpoint: impl FnMut(Vec<R>) -> Result<(), PipelineError>,
    ) -> Result<(), PipelineError> {
        let batch = self.config.parallelism.batch.max(1);
        for chunk in items[done..].chunks(batch) {
            let out = chunk.par_iter().map(&step).collect::<Result<Vec<R>, _>>()?;
            checkpoint(out)?;
        }
        Ok(())
    }

    /// Ids of the longest prefix of `items` found in `done_ids`, in order.
    fn done_prefix(items: &[BenchmarkItem], done_ids: &[&str]) -> usize {
        items
            .iter()
            .zip(done_ids)
            .take_while(|(item, id)| item.id == **id)
            .count()
    }

    fn perturb_lexical(&self, b: Benchmark, items: &[BenchmarkItem]) -> Result<PerturbSummary, PipelineError> {
        let cfg = &self.config.perturbation;
        let owned_lexicon;
        let lexicon: &Lexicon = match &cfg.lexicon {
            Some(p) => {
                let path = self.config.resolve(p);
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                owned_lexicon = Lexicon::parse(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
                &owned_lexicon
            }
            None => lexical::bundled_lexicon(),
        };
        let mode = match cfg.lexical_mode {
            LexicalModeTag::Lexicon => LexicalMode::Lexicon {
                lexicon,
                rate: cfg.lexicon_rate,
            },
            LexicalModeTag::Llm => LexicalMode::Llm {
                gateway: &self.gateway,
                model_id: self.perturber()?,
            },
        };

        let out_path = self.dataset_path(b, Variant::Lexical);
        let rec_path = self.records_path(b, Variant::Lexical);
        let (mut done_items, mut done_records) = self.resume_perturbed::<LexicalPerturbationRecord>(&out_path, &rec_path);
        let ids: Vec<&str> = done_items.iter().map(|i| i.id.as_str()).collect();
        let start = Self::done_prefix(items, &ids);
        done_items.truncate(start);
        let kept: BTreeSet<String> = done_items.iter().map(|i| i.id.clone()).collect();
        done_records.retain(|r| kept.contains(&r.item_id));

        let seed = self.config.seed;
        self.batched(
            items,
            start,
            |item| {
                lexical::perturb_item_lexical(item, &mode, seed).map_err(|e| PipelineError::Item {
                    item_id: item.id.clone(),
                    message: e.to_string(),
                })
            },
            |batch| {
                for (item, records) in batch {
                    done_items.push(self.stamp(item));
                    done_records.extend(records);
                }
                dataset::write_items(&out_path, &done_items)?;
                write_stamped(&rec_path, &self.hash, &done_records)
            },
        )?;
        if start == items.len() {
            dataset::write_items(&out_path, &done_items)?;
            write_stamped(&rec_path, &self.hash, &done_records)?;
        }

        let protected_violations = done_records
            .iter()
            .filter(|r| r.protected_strings.iter().any(|p| r.original.contains(p.as_str()) && !r.perturbed.contains(p.as_str())))
            .count();
        let densities: Vec<f64> = done_records.iter().filter(|r| !r.fallback).map(|r| r.changes_per_100_words).collect();
        let summary = PerturbSummary {
            meta: self.meta(),
            benchmark: b.short_name().into(),
            kind: Variant::Lexical,
            mode: serde_json::to_value(cfg.lexical_mode)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            items: items.len(),
            items_changed: items_changed(items, &done_items),
            records: done_records.len(),
            fallbacks: done_records.iter().filter(|r| r.fallback).count(),
            protected_violations,
            mean_changes_per_100_words: (!densities.is_empty())
                .then(|| densities.iter().sum::<f64>() / densities.len() as f64),
            per_kind: BTreeMap::new(),
        };
        write_json(&self.perturb_summary_path(b, Variant::Lexical), &summary)?;
        Ok(summary)
    }

    fn perturb_syntactic(&self, b: Benchmark, items: &[BenchmarkItem]) -> Result<PerturbSummary, PipelineError> {
        let parser = self.parser()?;
        let cfg = &self.config.perturbation;
        let mode = match cfg.syntactic_mode {
            RealizationMode::Rules => SyntacticMode::Rules {
                fallback: cfg.perturber_model.clone().map(|m| (&self.gateway, m)),
            },
            RealizationMode::Llm => SyntacticMode::Llm {
                gateway: &self.gateway,
                model_id: self.perturber()?,
            },
        };

        let out_path = self.dataset_path(b, Variant::Syntactic);
        let rec_path = self.records_path(b, Variant::Syntactic);
        let (mut done_items, mut done_records) = self.resume_perturbed::<SyntacticPerturbationRecord>(&out_path, &rec_path);
        let ids: Vec<&str> = done_items.iter().map(|i| i.id.as_str()).collect();
        let start = Self::done_prefix(items, &ids);
        done_items.truncate(start);
        let kept: BTreeSet<String> = done_items.iter().map(|i| i.id.clone()).collect();
        done_records.retain(|r| kept.contains(&r.item_id));

        let seed = self.config.seed;
        self.batched(
            items,
            start,
            |item| {
                syntax::perturb_item_syntactic(item, &parser, &mode, seed).map_err(|e| PipelineError::Item {
                    item_id: item.id.clone(),
                    message: e.to_string(),
                })
            },
            |batch| {
                for (item, records) in batch {
                    done_items.push(self.stamp(item));
                    done_records.extend(records);
                }
                dataset::write_items(&out_path, &done_items)?;
                write_stamped(&rec_path, &self.hash, &done_records)
            },
        )?;
        if start == items.len() {
            dataset::write_items(&out_path, &done_items)?;
            write_stamped(&rec_path, &self.hash, &done_records)?;
        }

        let mut per_kind: BTreeMap<String, KindCounts> = BTreeMap::new();
        for r in &done_records {
            let e = per_kind.entry(r.kind.name().to_string()).or_default();
            if r.fallback {
                e.failed += 1;
            } else {
                e.applied += 1;
            }
        }
        let summary = PerturbSummary {
            meta: self.meta(),
            benchmark: b.short_name().into(),
            kind: Variant::Syntactic,
            mode: match cfg.syntactic_mode {
                RealizationMode::Rules => "rules".into(),
                RealizationMode::Llm => "llm".into(),
            },
            items: items.len(),
            items_changed: items_changed(items, &done_items),
            records: done_records.len(),
            fallbacks: done_records.iter().filter(|r| r.fallback).count(),
            protected_violations: 0,
            mean_changes_per_100_words: None,
            per_kind,
        };
        write_json(&self.perturb_summary_path(b, Variant::Syntactic), &summary)?;
        Ok(summary)
    }

    fn resume_perturbed<T: DeserializeOwned>(&self, items_path: &Path, records_path: &Path) -> (Vec<BenchmarkItem>, Vec<T>) {
        let items: Vec<BenchmarkItem> = if items_path.exists() {
            dataset::read_items(items_path).unwrap_or_default()
        } else {
            Vec::new()
        };
        if items
            .iter()
            .any(|i| i.source_meta.get("config_hash") != Some(&self.hash))
        {
            return (Vec::new(), Vec::new());
        }
        let records = resume(records_path, &self.hash);
        (items, records)
    }

    /// Items of `variant` as written by `perturb`, or the prepared original.
    pub fn load_variant(&self, b: Benchmark, variant: Variant) -> Result<Vec<BenchmarkItem>, PipelineError> {
        if variant == Variant::Original {
            return self.prepare_original(b);
        }
        let path = self.dataset_path(b, variant);
        if !path.exists() {
            return Err(PipelineError::Usage(format!(
                "{} does not exist; run `perturb --benchmark {} --variant {}` first",
                path.display(),
                b.short_name(),
                variant
            )));
        }
        Ok(dataset::read_items(&path)?)
    }

    fn eval_settings(&self, model_id: &str) -> EvalSettings {
        let e = &self.config.evaluation;
        EvalSettings {
            model_id: model_id.to_string(),
            judge_model: e.judge_model.clone().unwrap_or_else(|| model_id.to_string()),
            embedding_model: e.embedding_model.clone().unwrap_or_else(|| model_id.to_string()),
            seed: self.config.seed,
            max_tokens: e.max_tokens,
        }
    }

    /// Evaluates `model_id` on one variant of `b`.
    pub fn run(&self, model_id: &str, b: Benchmark, variant: Variant) -> Result<RunSummary, PipelineError> {
        self.gateway.model(model_id)?;
        let items = self.load_variant(b, variant)?;
        let settings = self.eval_settings(model_id);
        let path = self.results_path(model_id, b, variant);
        let mut done: Vec<ItemResult> = resume(&path, &self.hash);
        let ids: Vec<&str> = done.iter().map(|r| r.item_id.as_str()).collect();
        let start = Self::done_prefix(&items, &ids);
        done.truncate(start);

        self.batched(
            &items,
            start,
            |item| Ok(eval::evaluate_item(&self.gateway, &settings, item)),
            |batch| {
                done.extend(batch);
                write_stamped(&path, &self.hash, &done)
            },
        )?;
        if start == items.len() {
            write_stamped(&path, &self.hash, &done)?;
        }

        let scores: Vec<_> = done.iter().map(|r| r.score.clone()).collect();
        let aggregates = metrics::aggregate(b, &scores).map_err(AnalysisError::from)?;
        let n_failed = done.iter().filter(|r| r.failed()).count();
        let fingerprints: Vec<String> = done
            .iter()
            .filter_map(|r| r.model_fingerprint.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let summary = RunSummary {
            meta: self.meta(),
            model_id: model_id.to_string(),
            benchmark: b.short_name().into(),
            variant,
            n_items: done.len(),
            n_failed,
            failure_rate: n_failed as f64 / done.len().max(1) as f64,
            aggregates,
            fingerprints,
        };
        write_json(&self.run_summary_path(model_id, b, variant), &summary)?;
        Ok(summary)
    }

    fn load_results(&self, model_id: &str, b: Benchmark, variant: Variant) -> Result<Option<RunResults>, PipelineError> {
        let path = self.results_path(model_id, b, variant);
        if !path.exists() {
            return Ok(None);
        }
        let rows: Vec<Stamped<ItemResult>> = util::read_jsonl(&path).map_err(io_err(&path))?;
        if let Some(r) = rows.iter().find(|r| r.config_hash != self.hash) {
            log::warn!(
                "{}: written under config {} (current {})",
                path.display(),
                r.config_hash,
                self.hash
            );
        }
        Ok(Some(RunResults {
            model_id: model_id.to_string(),
            benchmark: b,
            variant,
            items: rows.into_iter().map(|r| r.record).collect(),
        }))
    }

    /// Compares every configured model's runs across variants.
    pub fn analyze(&self) -> Result<Analysis, PipelineError> {
        let models = &self.config.evaluation.models;
        let mut runs = Vec::new();
        for b in self.config.benchmarks() {
            for m in models {
                for v in [Variant::Original, Variant::Lexical, Variant::Syntactic] {
                    runs.extend(self.load_results(m, b, v)?);
                }
            }
        }
        if runs.is_empty() {
            return Err(PipelineError::Usage("no run results found; use `run` first".into()));
        }
        let (table, tests) = analysis::deltas_from_runs(&runs, models, self.config.evaluation.failures)?;
        let infos: Vec<ModelInfo> = self.config.models.iter().map(ModelInfo::from).collect();
        let mut a = analysis::analyze_table(
            table,
            &infos,
            &self.config.analysis.stability_options(),
            &self.hash,
            "model runs",
        )?;
        a.mcnemar = tests;
        write_json(&self.analysis_path(), &a)?;
        Ok(a)
    }
}

fn items_changed(original: &[BenchmarkItem], perturbed: &[BenchmarkItem]) -> usize {
    original
        .iter()
        .zip(perturbed)
        .filter(|(o, p)| o.payload != p.payload)
        .count()
}

/// Analysis of the bundled published table.
pub fn analyze_bundled(opts: &StabilityOptions) -> Result<Analysis, PipelineError> {
    let table = analysis::DeltaTable::bundled();
    let hash = util::sha256_hex(serde_json::to_string(&table).unwrap_or_default().as_bytes());
    Ok(analysis::analyze_table(
        table,
        &analysis::bundled_models(),
        opts,
        &hash,
        "bundled published results",
    )?)
}

pub fn read_analysis(path: &Path) -> Result<Analysis, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Usage(format!("{}: not an analysis file: {e}", path.display())))
}

/// Writes the report files for `a` into `dir`.
pub fn report(a: &Analysis, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    if a.is_empty() {
        return Err(PipelineError::Usage("the analysis is empty; nothing to report".into()));
    }
    crate::report::write_report(a, dir).map_err(io_err(dir))
}
