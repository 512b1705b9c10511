//! Delta tables, leaderboards and the stability analyses built on them.
//!
//! Everything here is a pure function of score tables, so the bundled
//! published-results fixture and freshly computed runs go through the same
//! code.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Benchmark;
use crate::eval::ItemResult;
use crate::llm::ModelSpec;
use crate::metrics::{self, MetricsError};
use crate::stats::{
    rank_stability, significance_stars, size_robustness, ModelDrop, PairedOutcomes, RankStabilityReport,
    SizeRobustnessReport, StabilityOptions, StatsError,
};

const TABLE1: &str = include_str!("../data/table1.csv");
const MODELS: &str = include_str!("../data/models.csv");

pub const BENCHMARKS: [Benchmark; 3] = [Benchmark::MultipleChoice, Benchmark::Extractive, Benchmark::FreeForm];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("nothing to analyze")]
    Empty,
    #[error("{model_id}/{benchmark}: {variant} results are missing items {missing:?} and have extra items {extra:?}")]
    ItemMismatch {
        model_id: String,
        benchmark: &'static str,
        variant: Variant,
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("{model_id}/{benchmark}: no original results to compare against")]
    NoOriginal { model_id: String, benchmark: &'static str },
    #[error("bad table: {0}")]
    Table(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Original,
    Lexical,
    Syntactic,
}

impl Variant {
    pub const PERTURBED: [Variant; 2] = [Variant::Lexical, Variant::Syntactic];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Lexical => "lexical",
            Variant::Syntactic => "syntactic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "original" => Some(Variant::Original),
            "lexical" | "lex" => Some(Variant::Lexical),
            "syntactic" | "syn" => Some(Variant::Syntactic),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Metrics reported per benchmark, the one carrying significance stars first.
pub fn reported_metrics(b: Benchmark) -> &'static [&'static str] {
    match b {
        Benchmark::MultipleChoice => &["accuracy"],
        Benchmark::Extractive => &["em", "f1", "sas"],
        Benchmark::FreeForm => &["adherence"],
    }
}

/// Metric whose drop is averaged and correlated with size.
pub fn drop_metric(b: Benchmark) -> &'static str {
    match b {
        Benchmark::MultipleChoice => "accuracy",
        Benchmark::Extractive => "f1",
        Benchmark::FreeForm => "adherence",
    }
}

/// Metric the leaderboards are ranked by.
pub fn ranking_metric(b: Benchmark) -> &'static str {
    match b {
        Benchmark::MultipleChoice => "accuracy",
        Benchmark::Extractive => "sas",
        Benchmark::FreeForm => "adherence",
    }
}

mod benchmark_name {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use crate::dataset::Benchmark;

    pub fn serialize<S: Serializer>(b: &Benchmark, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(b.short_name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Benchmark, D::Error> {
        let name = String::deserialize(d)?;
        Benchmark::from_short_name(&name).ok_or_else(|| D::Error::custom(format!("unknown benchmark {name:?}")))
    }
}

/// One model's score on one benchmark metric, with the change under each
/// perturbation. Deltas are original minus perturbed, so positive is a drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub model_id: String,
    #[serde(with = "benchmark_name")]
    pub benchmark: Benchmark,
    pub metric: String,
    pub original: f64,
    pub delta_lexical: Option<f64>,
    pub delta_syntactic: Option<f64>,
    #[serde(default)]
    pub stars_lexical: String,
    #[serde(default)]
    pub stars_syntactic: String,
}

impl DeltaRow {
    pub fn delta(&self, kind: Variant) -> Option<f64> {
        match kind {
            Variant::Original => Some(0.0),
            Variant::Lexical => self.delta_lexical,
            Variant::Syntactic => self.delta_syntactic,
        }
    }

    pub fn score(&self, variant: Variant) -> Option<f64> {
        self.delta(variant).map(|d| self.original - d)
    }

    pub fn stars(&self, kind: Variant) -> &str {
        match kind {
            Variant::Original => "",
            Variant::Lexical => &self.stars_lexical,
            Variant::Syntactic => &self.stars_syntactic,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub rows: Vec<DeltaRow>,
}

impl DeltaTable {
    pub fn from_csv(data: &str) -> Result<Self, AnalysisError> {
        let mut reader = csv::Reader::from_reader(data.as_bytes());
        let rows = reader
            .deserialize()
            .collect::<Result<Vec<DeltaRow>, _>>()
            .map_err(|e| AnalysisError::Table(e.to_string()))?;
        Ok(DeltaTable { rows })
    }

    /// Published per-model scores and deltas for 23 models.
    pub fn bundled() -> Self {
        DeltaTable::from_csv(TABLE1).expect("bundled table parses")
    }

    /// Model ids in order of first appearance.
    pub fn models(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.model_id.as_str()))
            .map(|r| r.model_id.clone())
            .collect()
    }

    pub fn benchmarks(&self) -> Vec<Benchmark> {
        let present: BTreeSet<Benchmark> = self.rows.iter().map(|r| r.benchmark).collect();
        BENCHMARKS.into_iter().filter(|b| present.contains(b)).collect()
    }

    pub fn column(&self, benchmark: Benchmark, metric: &str) -> Vec<&DeltaRow> {
        self.rows
            .iter()
            .filter(|r| r.benchmark == benchmark && r.metric == metric)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub open_weight: bool,
    /// Billions of parameters; blank for undisclosed sizes.
    pub parameters_billions: Option<f64>,
}

impl From<&ModelSpec> for ModelInfo {
    fn from(m: &ModelSpec) -> Self {
        ModelInfo {
            model_id: m.model_id.clone(),
            open_weight: m.open_weight,
            parameters_billions: m.parameter_count,
        }
    }
}

/// Sizes of the models in [`DeltaTable::bundled`].
pub fn bundled_models() -> Vec<ModelInfo> {
    let mut reader = csv::Reader::from_reader(MODELS.as_bytes());
    reader
        .deserialize()
        .collect::<Result<Vec<ModelInfo>, _>>()
        .expect("bundled model list parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    /// 1-based display position; ties are ordered by model id.
    pub position: usize,
    /// Midrank: tied models share the mean of their positions.
    pub rank: f64,
    pub model_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    #[serde(with = "benchmark_name")]
    pub benchmark: Benchmark,
    pub variant: Variant,
    pub metric: String,
    pub entries: Vec<LeaderboardEntry>,
}

impl Leaderboard {
    pub fn build(benchmark: Benchmark, variant: Variant, metric: &str, scores: &[(String, f64)]) -> Self {
        let mut sorted: Vec<&(String, f64)> = scores.iter().collect();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut entries = Vec::with_capacity(sorted.len());
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1].1 == sorted[i].1 {
                j += 1;
            }
            let rank = (i + j) as f64 / 2.0 + 1.0;
            for (k, (id, score)) in sorted[i..=j].iter().map(|e| (&e.0, e.1)).enumerate() {
                entries.push(LeaderboardEntry {
                    position: i + k + 1,
                    rank,
                    model_id: id.clone(),
                    score,
                });
            }
            i = j + 1;
        }
        Leaderboard {
            benchmark,
            variant,
            metric: metric.to_string(),
            entries,
        }
    }

    pub fn rank_of(&self, model_id: &str) -> Option<&LeaderboardEntry> {
        self.entries.iter().find(|e| e.model_id == model_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanDrop {
    #[serde(with = "benchmark_name")]
    pub benchmark: Benchmark,
    pub kind: Variant,
    pub metric: String,
    pub mean_drop: f64,
    pub n_models: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityEntry {
    #[serde(with = "benchmark_name")]
    pub benchmark: Benchmark,
    pub kind: Variant,
    pub metric: String,
    pub report: Option<RankStabilityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StabilityEntry {
    pub fn wilcoxon_stars(&self) -> &'static str {
        self.report
            .as_ref()
            .and_then(|r| r.wilcoxon_p)
            .map(significance_stars)
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeEntry {
    #[serde(with = "benchmark_name")]
    pub benchmark: Benchmark,
    pub kind: Variant,
    pub metric: String,
    /// Open-weight models with a known size.
    pub points: Vec<ModelDrop>,
    pub report: Option<SizeRobustnessReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Paired per-item outcomes of one model on one benchmark and perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarEntry {
    pub model_id: String,
    #[serde(with = "benchmark_name")]
    pub benchmark: Benchmark,
    pub kind: Variant,
    pub outcomes: PairedOutcomes,
    pub p_value: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub config_hash: String,
    pub source: String,
    pub bootstrap: StabilityOptions,
    pub delta_table: DeltaTable,
    pub mcnemar: Vec<McNemarEntry>,
    pub mean_drops: Vec<MeanDrop>,
    pub stability: Vec<StabilityEntry>,
    pub size: Vec<SizeEntry>,
    pub leaderboards: Vec<Leaderboard>,
}

impl Analysis {
    pub fn is_empty(&self) -> bool {
        self.delta_table.rows.is_empty()
    }

    pub fn mean_drop(&self, benchmark: Benchmark, kind: Variant) -> Option<&MeanDrop> {
        self.mean_drops.iter().find(|m| m.benchmark == benchmark && m.kind == kind)
    }

    pub fn stability_for(&self, benchmark: Benchmark, kind: Variant) -> Option<&StabilityEntry> {
        self.stability.iter().find(|s| s.benchmark == benchmark && s.kind == kind)
    }

    pub fn size_for(&self, benchmark: Benchmark, kind: Variant) -> Option<&SizeEntry> {
        self.size.iter().find(|s| s.benchmark == benchmark && s.kind == kind)
    }

    pub fn leaderboard(&self, benchmark: Benchmark, variant: Variant) -> Option<&Leaderboard> {
        self.leaderboards
            .iter()
            .find(|l| l.benchmark == benchmark && l.variant == variant)
    }
}

/// Runs every table-level analysis over `table`.
pub fn analyze_table(
    table: DeltaTable,
    models: &[ModelInfo],
    opts: &StabilityOptions,
    config_hash: &str,
    source: &str,
) -> Result<Analysis, AnalysisError> {
    if table.rows.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let info: BTreeMap<&str, &ModelInfo> = models.iter().map(|m| (m.model_id.as_str(), m)).collect();
    let mut mean_drops = Vec::new();
    let mut stability = Vec::new();
    let mut size = Vec::new();
    let mut leaderboards = Vec::new();

    for benchmark in table.benchmarks() {
        let metric = ranking_metric(benchmark);
        let ranked = table.column(benchmark, metric);
        let originals: Vec<(String, f64)> = ranked.iter().map(|r| (r.model_id.clone(), r.original)).collect();
        if !originals.is_empty() {
            leaderboards.push(Leaderboard::build(benchmark, Variant::Original, metric, &originals));
        }

        for kind in Variant::PERTURBED {
            let with_delta: Vec<&&DeltaRow> = ranked.iter().filter(|r| r.delta(kind).is_some()).collect();
            if !with_delta.is_empty() {
                let orig: Vec<f64> = with_delta.iter().map(|r| r.original).collect();
                let pert: Vec<(String, f64)> = with_delta
                    .iter()
                    .map(|r| (r.model_id.clone(), r.score(kind).unwrap_or(f64::NAN)))
                    .collect();
                leaderboards.push(Leaderboard::build(benchmark, kind, metric, &pert));
                let pert_scores: Vec<f64> = pert.iter().map(|p| p.1).collect();
                let (report, error) = match rank_stability(&orig, &pert_scores, opts) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                stability.push(StabilityEntry {
                    benchmark,
                    kind,
                    metric: metric.to_string(),
                    report,
                    error,
                });
            }

            let dm = drop_metric(benchmark);
            let drops: Vec<(&str, f64)> = table
                .column(benchmark, dm)
                .iter()
                .filter_map(|r| r.delta(kind).map(|d| (r.model_id.as_str(), d)))
                .collect();
            if drops.is_empty() {
                continue;
            }
            mean_drops.push(MeanDrop {
                benchmark,
                kind,
                metric: dm.to_string(),
                mean_drop: drops.iter().map(|d| d.1).sum::<f64>() / drops.len() as f64,
                n_models: drops.len(),
            });
            let points: Vec<ModelDrop> = drops
                .iter()
                .filter_map(|(id, d)| {
                    let m = info.get(id)?;
                    let p = m.parameters_billions.filter(|_| m.open_weight)?;
                    Some(ModelDrop {
                        model_id: id.to_string(),
                        parameter_count: Some(p),
                        drop: *d,
                    })
                })
                .collect();
            let (report, error) = match size_robustness(&points) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            size.push(SizeEntry {
                benchmark,
                kind,
                metric: dm.to_string(),
                points,
                report,
                error,
            });
        }
    }

    Ok(Analysis {
        config_hash: config_hash.to_string(),
        source: source.to_string(),
        bootstrap: *opts,
        delta_table: table,
        mcnemar: Vec::new(),
        mean_drops,
        stability,
        size,
        leaderboards,
    })
}

/// How items that failed in either variant enter the comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Keep every item; failures score zero.
    #[default]
    Zero,
    /// Drop items that failed in either variant.
    Intersection,
}

/// Per-item results of one model on one benchmark variant.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResults {
    pub model_id: String,
    pub benchmark: Benchmark,
    pub variant: Variant,
    pub items: Vec<ItemResult>,
}

fn check_items(orig: &RunResults, pert: &RunResults) -> Result<(), AnalysisError> {
    let a: BTreeSet<&str> = orig.items.iter().map(|r| r.item_id.as_str()).collect();
    let b: BTreeSet<&str> = pert.items.iter().map(|r| r.item_id.as_str()).collect();
    if a == b {
        return Ok(());
    }
    Err(AnalysisError::ItemMismatch {
        model_id: orig.model_id.clone(),
        benchmark: orig.benchmark.short_name(),
        variant: pert.variant,
        missing: a.difference(&b).map(|s| s.to_string()).collect(),
        extra: b.difference(&a).map(|s| s.to_string()).collect(),
    })
}

/// Per-item binary outcomes: correctness, exact match, or every criterion
/// verdict of a free-form answer.
fn outcomes(r: &ItemResult) -> Vec<bool> {
    match (&r.score.adherence, r.score.binary_outcome()) {
        (Some(a), _) => a.met(),
        (None, Some(b)) => vec![b],
        (None, None) => Vec::new(),
    }
}

/// Builds the delta table and per-model McNemar tests from item results.
/// Models appear in `model_order`; results for other models are ignored.
pub fn deltas_from_runs(
    runs: &[RunResults],
    model_order: &[String],
    policy: FailurePolicy,
) -> Result<(DeltaTable, Vec<McNemarEntry>), AnalysisError> {
    let find = |m: &str, b: Benchmark, v: Variant| {
        runs.iter()
            .find(|r| r.model_id == m && r.benchmark == b && r.variant == v)
    };
    let mut rows = Vec::new();
    let mut tests = Vec::new();
    for benchmark in BENCHMARKS {
        for model in model_order {
            let perturbed: Vec<&RunResults> = Variant::PERTURBED
                .iter()
                .filter_map(|&v| find(model, benchmark, v))
                .collect();
            let Some(orig) = find(model, benchmark, Variant::Original) else {
                if perturbed.is_empty() {
                    continue;
                }
                return Err(AnalysisError::NoOriginal {
                    model_id: model.clone(),
                    benchmark: benchmark.short_name(),
                });
            };
            let orig_agg = metrics::aggregate(benchmark, &scores(orig, &[]))?;
            let mut model_rows: Vec<DeltaRow> = reported_metrics(benchmark)
                .iter()
                .map(|m| DeltaRow {
                    model_id: model.clone(),
                    benchmark,
                    metric: m.to_string(),
                    original: orig_agg.reported(m).unwrap_or(f64::NAN),
                    delta_lexical: None,
                    delta_syntactic: None,
                    stars_lexical: String::new(),
                    stars_syntactic: String::new(),
                })
                .collect();
            for pert in perturbed {
                check_items(orig, pert)?;
                let by_id: BTreeMap<&str, &ItemResult> =
                    pert.items.iter().map(|r| (r.item_id.as_str(), r)).collect();
                let keep: Vec<&str> = orig
                    .items
                    .iter()
                    .filter(|o| policy == FailurePolicy::Zero || !(o.failed() || by_id[o.item_id.as_str()].failed()))
                    .map(|o| o.item_id.as_str())
                    .collect();
                if keep.is_empty() {
                    continue;
                }
                let o_agg = metrics::aggregate(benchmark, &scores(orig, &keep))?;
                let p_agg = metrics::aggregate(benchmark, &scores(pert, &keep))?;
                let mut pairs = Vec::new();
                for id in &keep {
                    let o = orig.items.iter().find(|r| r.item_id == *id).map(outcomes).unwrap_or_default();
                    let p = outcomes(by_id[id]);
                    pairs.extend(o.into_iter().zip(p));
                }
                let table = PairedOutcomes::from_pairs(pairs);
                let test = table.test();
                let stars = significance_stars(test.p_value).to_string();
                tests.push(McNemarEntry {
                    model_id: model.clone(),
                    benchmark,
                    kind: pert.variant,
                    outcomes: table,
                    p_value: test.p_value,
                    stars: stars.clone(),
                });
                for (i, row) in model_rows.iter_mut().enumerate() {
                    let o = o_agg.reported(&row.metric).unwrap_or(f64::NAN);
                    let p = p_agg.reported(&row.metric).unwrap_or(f64::NAN);
                    let s = if i == 0 { stars.clone() } else { String::new() };
                    // Original column stays on the full item set.
                    match pert.variant {
                        Variant::Lexical => {
                            row.delta_lexical = Some(o - p);
                            row.stars_lexical = s;
                        }
                        Variant::Syntactic => {
                            row.delta_syntactic = Some(o - p);
                            row.stars_syntactic = s;
                        }
                        Variant::Original => {}
                    }
                }
            }
            rows.extend(model_rows);
        }
    }
    if rows.is_empty() {
        return Err(AnalysisError::Empty);
    }
    Ok((DeltaTable { rows }, tests))
}

/// Item scores of `run`, restricted to `keep` unless it is empty.
fn scores(run: &RunResults, keep: &[&str]) -> Vec<metrics::ItemScore> {
    if keep.is_empty() {
        return run.items.iter().map(|r| r.score.clone()).collect();
    }
    let by_id: BTreeMap<&str, &ItemResult> = run.items.iter().map(|r| (r.item_id.as_str(), r)).collect();
    keep.iter().map(|id| by_id[id].score.clone()).collect()
}

/// A published aggregate and the value recomputed from the bundled table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureCheck {
    pub name: String,
    pub expected: f64,
    pub actual: f64,
    pub tolerance: f64,
}

impl FixtureCheck {
    pub fn passed(&self) -> bool {
        (self.actual - self.expected).abs() <= self.tolerance
    }
}

/// Recomputes the headline aggregates of the bundled table.
pub fn verify_bundled(opts: &StabilityOptions) -> Result<Vec<FixtureCheck>, AnalysisError> {
    let a = analyze_table(DeltaTable::bundled(), &bundled_models(), opts, "bundled", "bundled")?;
    let mut checks = Vec::new();
    let drops = [
        (Benchmark::MultipleChoice, 7.72, 1.64),
        (Benchmark::Extractive, 3.38, 2.72),
        (Benchmark::FreeForm, 1.25, 0.55),
    ];
    for (b, lex, syn) in drops {
        for (kind, expected) in [(Variant::Lexical, lex), (Variant::Syntactic, syn)] {
            let m = a.mean_drop(b, kind).ok_or(AnalysisError::Empty)?;
            checks.push(FixtureCheck {
                name: format!("mean drop {} {} {}", b.short_name(), m.metric, kind),
                expected,
                actual: m.mean_drop,
                tolerance: 0.02,
            });
        }
    }
    let taus = [
        (Benchmark::MultipleChoice, 0.98, 0.99),
        (Benchmark::Extractive, 0.93, 0.87),
        (Benchmark::FreeForm, 0.89, 0.87),
    ];
    for (b, lex, syn) in taus {
        for (kind, expected) in [(Variant::Lexical, lex), (Variant::Syntactic, syn)] {
            let s = a.stability_for(b, kind).and_then(|s| s.report.as_ref()).ok_or(AnalysisError::Empty)?;
            checks.push(FixtureCheck {
                name: format!("kendall tau {} {}", b.short_name(), kind),
                expected,
                actual: s.tau,
                tolerance: 0.03,
            });
        }
    }
    if let Some(s) = a
        .stability_for(Benchmark::MultipleChoice, Variant::Lexical)
        .and_then(|s| s.report.as_ref())
    {
        checks.push(FixtureCheck {
            name: "bootstrap ci_low mmlu lexical".into(),
            expected: 0.93,
            actual: s.ci_low,
            tolerance: 0.03,
        });
    }
    Ok(checks)
}
