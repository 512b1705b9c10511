//! Per-item scoring: choice extraction and accuracy, SQuAD-style exact match
//! and token F1, semantic answer similarity, and weighted criterion
//! adherence with an LLM judge.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::Benchmark;
use crate::llm::{ChatRequest, Embedder, LlmError, LlmGateway, Message};

const JUDGE_SYSTEM: &str = include_str!("../data/prompts/judge_system.v1.txt");
const JUDGE_USER: &str = include_str!("../data/prompts/judge_user.v1.txt");
const JUDGE_SCHEMA: &str = include_str!("../schemas/judge_output.schema.json");

/// Maximum adherence points per case.
pub const CASE_POINTS: f64 = 50.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no scores to aggregate")]
    Empty,
    #[error("{0} verdicts for {1} weights")]
    Misaligned(usize, usize),
    #[error("criterion weights sum to zero")]
    ZeroWeight,
    #[error("item {0} lacks the {1} score")]
    MissingScore(String, &'static str),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

/// Picks the answer letter out of a free-text reply.
///
/// Rules, in order, each taking its first match whose letter is a label:
/// `Answer: X`, a standalone `X)`, `(X)`, a label alone on a line, and
/// finally any standalone label letter.
pub fn extract_choice(response: &str, labels: &[String]) -> Option<String> {
    static ANSWER: OnceLock<Regex> = OnceLock::new();
    static CLOSE: OnceLock<Regex> = OnceLock::new();
    static PAREN: OnceLock<Regex> = OnceLock::new();
    static LINE: OnceLock<Regex> = OnceLock::new();
    static TOKEN: OnceLock<Regex> = OnceLock::new();
    let rules = [
        re(&ANSWER, r"(?i:answer)\s*:\s*\(?([A-Z])\b"),
        re(&CLOSE, r"(?:^|[^A-Za-z0-9(])([A-Z])\)"),
        re(&PAREN, r"\(([A-Z])\)"),
        re(&LINE, r"(?m)^\s*([A-Z])[.)]?\s*$"),
        re(&TOKEN, r"\b([A-Z])\b"),
    ];
    for rule in rules {
        for cap in rule.captures_iter(response) {
            let letter = &cap[1];
            if labels.iter().any(|l| l == letter) {
                return Some(letter.to_string());
            }
        }
    }
    None
}

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1.0 if the normalized prediction equals some normalized gold.
pub fn exact_match(prediction: &str, golds: &[&str]) -> f64 {
    let p = normalize_answer(prediction);
    if golds.iter().any(|g| normalize_answer(g) == p) {
        1.0
    } else {
        0.0
    }
}

fn f1_single(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt == gt { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0i64;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / pt.len() as f64;
    let recall = same as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Bag-of-tokens F1, maximised over golds.
pub fn token_f1(prediction: &str, golds: &[&str]) -> f64 {
    golds.iter().map(|g| f1_single(prediction, g)).fold(0.0, f64::max)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Semantic answer similarity: best cosine against any gold, clamped to
/// `[0, 1]`. An empty prediction scores 0.
pub fn sas(prediction: &str, golds: &[&str], embedder: &dyn Embedder) -> Result<f64, MetricsError> {
    if prediction.trim().is_empty() || golds.is_empty() {
        return Ok(0.0);
    }
    let mut texts = vec![prediction.to_string()];
    texts.extend(golds.iter().map(|g| g.to_string()));
    let v = embedder.embed(&texts)?;
    let best = v[1..].iter().map(|g| cosine(&v[0], g)).fold(f64::MIN, f64::max);
    Ok(best.clamp(0.0, 1.0))
}

/// `50 * sum(w * met) / sum(w)`.
pub fn amega_case_score(verdicts: &[bool], weights: &[f64]) -> Result<f64, MetricsError> {
    if verdicts.len() != weights.len() {
        return Err(MetricsError::Misaligned(verdicts.len(), weights.len()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(MetricsError::ZeroWeight);
    }
    let met: f64 = weights
        .iter()
        .zip(verdicts)
        .filter(|(_, m)| **m)
        .map(|(w, _)| w)
        .sum();
    Ok(CASE_POINTS * met / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionVerdict {
    pub met: bool,
    /// The judge's reply could not be parsed; counted as not met.
    #[serde(default)]
    pub flagged: bool,
    #[serde(default)]
    pub rationale: String,
}

fn judge_schema() -> &'static Value {
    static S: OnceLock<Value> = OnceLock::new();
    S.get_or_init(|| serde_json::from_str(JUDGE_SCHEMA).expect("bundled schema is JSON"))
}

/// Asks `judge_model` whether `answer` satisfies `criterion`.
pub fn judge_criterion(
    gateway: &LlmGateway,
    judge_model: &str,
    question: &str,
    answer: &str,
    criterion: &str,
    seed: u64,
) -> Result<CriterionVerdict, MetricsError> {
    if answer.trim().is_empty() {
        return Ok(CriterionVerdict {
            met: false,
            flagged: false,
            rationale: "empty answer".into(),
        });
    }
    let user = JUDGE_USER
        .replace("{{question}}", question)
        .replace("{{criterion}}", criterion)
        .replace("{{answer}}", answer);
    let req = ChatRequest::new(
        judge_model,
        vec![Message::system(JUDGE_SYSTEM.trim()), Message::user(user)],
        seed,
    )
    .with_schema(judge_schema().clone())
    .with_max_tokens(256);
    match gateway.complete(&req) {
        Ok(resp) => match crate::llm::check_schema(judge_schema(), &resp.content) {
            Ok(v) => Ok(CriterionVerdict {
                met: v["verdict"] == "yes",
                flagged: false,
                rationale: v["rationale"].as_str().unwrap_or_default().to_string(),
            }),
            Err(message) => Ok(CriterionVerdict {
                met: false,
                flagged: true,
                rationale: message,
            }),
        },
        Err(LlmError::Schema { message, .. }) => Ok(CriterionVerdict {
            met: false,
            flagged: true,
            rationale: message,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Criterion-level detail for a free-form item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adherence {
    pub case_id: String,
    pub weights: Vec<f64>,
    pub verdicts: Vec<CriterionVerdict>,
}

impl Adherence {
    pub fn met(&self) -> Vec<bool> {
        self.verdicts.iter().map(|v| v.met).collect()
    }
}

/// Scores for one item; which fields are set depends on the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sas: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adherence_points: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adherence: Option<Adherence>,
}

impl ItemScore {
    pub fn empty(item_id: &str) -> Self {
        ItemScore {
            item_id: item_id.to_string(),
            correct: None,
            em: None,
            f1: None,
            sas: None,
            adherence_points: None,
            adherence: None,
        }
    }

    /// Checks that exactly the benchmark's fields are present.
    pub fn check_shape(&self, benchmark: Benchmark) -> bool {
        let mc = self.correct.is_some();
        let ex = self.em.is_some() && self.f1.is_some() && self.sas.is_some();
        let ff = self.adherence_points.is_some() && self.adherence.is_some();
        let any_ex = self.em.is_some() || self.f1.is_some() || self.sas.is_some();
        let any_ff = self.adherence_points.is_some() || self.adherence.is_some();
        match benchmark {
            Benchmark::MultipleChoice => mc && !any_ex && !any_ff,
            Benchmark::Extractive => ex && !mc && !any_ff,
            Benchmark::FreeForm => ff && !mc && !any_ex,
        }
    }

    /// Per-item binary outcome used for paired tests: correct (MMLU), exact
    /// match (SQuAD). Free-form items have per-criterion outcomes instead.
    pub fn binary_outcome(&self) -> Option<bool> {
        self.correct.or(self.em.map(|e| e >= 1.0))
    }
}

fn mean_of(scores: &[ItemScore], name: &'static str, get: impl Fn(&ItemScore) -> Option<f64>) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sum = 0.0;
    for s in scores {
        sum += get(s).ok_or_else(|| MetricsError::MissingScore(s.item_id.clone(), name))?;
    }
    Ok(sum / scores.len() as f64)
}

/// Fraction of items answered correctly.
pub fn accuracy(scores: &[ItemScore]) -> Result<f64, MetricsError> {
    mean_of(scores, "correct", |s| s.correct.map(|c| if c { 1.0 } else { 0.0 }))
}

/// Mean over cases of each case's weighted adherence, pooling all criteria
/// of the case's questions.
pub fn amega_aggregate(scores: &[ItemScore]) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cases: BTreeMap<&str, (Vec<bool>, Vec<f64>)> = BTreeMap::new();
    for s in scores {
        let a = s
            .adherence
            .as_ref()
            .ok_or_else(|| MetricsError::MissingScore(s.item_id.clone(), "adherence"))?;
        let entry = cases.entry(a.case_id.as_str()).or_default();
        entry.0.extend(a.met());
        entry.1.extend(a.weights.iter().copied());
    }
    let mut total = 0.0;
    for (met, weights) in cases.values() {
        total += amega_case_score(met, weights)?;
    }
    Ok(total / cases.len() as f64)
}

/// Benchmark-level aggregates, recomputed from item scores. Fractions for
/// accuracy/EM/F1/SAS, points for adherence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n_items: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sas: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adherence: Option<f64>,
    /// Judge replies that could not be parsed.
    #[serde(default)]
    pub flagged_verdicts: usize,
}

impl Aggregates {
    /// The named metric, on the scale reported in tables (percent for
    /// fractions, points for adherence).
    pub fn reported(&self, metric: &str) -> Option<f64> {
        match metric {
            "accuracy" => self.accuracy.map(|v| 100.0 * v),
            "em" => self.em.map(|v| 100.0 * v),
            "f1" => self.f1.map(|v| 100.0 * v),
            "sas" => self.sas.map(|v| 100.0 * v),
            "adherence" => self.adherence,
            _ => None,
        }
    }
}

pub fn aggregate(benchmark: Benchmark, scores: &[ItemScore]) -> Result<Aggregates, MetricsError> {
    let mut a = Aggregates {
        n_items: scores.len(),
        ..Default::default()
    };
    match benchmark {
        Benchmark::MultipleChoice => a.accuracy = Some(accuracy(scores)?),
        Benchmark::Extractive => {
            a.em = Some(mean_of(scores, "em", |s| s.em)?);
            a.f1 = Some(mean_of(scores, "f1", |s| s.f1)?);
            a.sas = Some(mean_of(scores, "sas", |s| s.sas)?);
        }
        Benchmark::FreeForm => {
            a.adherence = Some(amega_aggregate(scores)?);
            a.flagged_verdicts = scores
                .iter()
                .filter_map(|s| s.adherence.as_ref())
                .flat_map(|ad| ad.verdicts.iter())
                .filter(|v| v.flagged)
                .count();
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<String> {
        ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn extraction_examples() {
        let l = labels();
        assert_eq!(extract_choice("The answer is (B).", &l).as_deref(), Some("B"));
        assert_eq!(extract_choice("I cannot answer.", &l), None);
        assert_eq!(extract_choice("A. Because B is wrong", &l).as_deref(), Some("A"));
        assert_eq!(extract_choice("Reasoning... Answer: C", &l).as_deref(), Some("C"));
        assert_eq!(extract_choice("Option D) fits; (A) does not", &l).as_deref(), Some("D"));
        assert_eq!(extract_choice("Answer: E", &l), None);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The Cat."), "cat");
        assert_eq!(normalize_answer("a  an the"), "");
        assert_eq!(normalize_answer("42%"), "42");
    }

    #[test]
    fn em_f1_examples() {
        assert_eq!(exact_match("The Cat", &["cat"]), 1.0);
        assert_eq!(token_f1("The Cat", &["cat"]), 1.0);
        assert_eq!(exact_match("brown dog", &["big brown dog"]), 0.0);
        assert!((token_f1("brown dog", &["big brown dog"]) - 0.8).abs() < 1e-12);
        assert_eq!(exact_match("", &["cat"]), 0.0);
        assert_eq!(token_f1("", &["cat"]), 0.0);
        assert_eq!(token_f1("the", &["a"]), 1.0);
        assert_eq!(token_f1("dog", &["cat", "hot dog"]), 2.0 / 3.0);
    }

    #[test]
    fn adherence_examples() {
        assert_eq!(amega_case_score(&[true; 3], &[1.0, 2.0, 3.0]).unwrap(), 50.0);
        assert_eq!(amega_case_score(&[false; 3], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(amega_case_score(&[true, false, true], &[2.0, 1.0, 1.0]).unwrap(), 37.5);
        assert!(matches!(amega_case_score(&[true], &[0.0]), Err(MetricsError::ZeroWeight)));
        assert!(matches!(amega_case_score(&[true], &[1.0, 1.0]), Err(MetricsError::Misaligned(1, 2))));
    }

    #[test]
    fn accuracy_and_empty() {
        let mk = |c| ItemScore {
            correct: Some(c),
            ..ItemScore::empty("x")
        };
        assert_eq!(accuracy(&[mk(true), mk(true)]).unwrap(), 1.0);
        assert_eq!(accuracy(&[mk(true), mk(false)]).unwrap(), 0.5);
        assert!(matches!(accuracy(&[]), Err(MetricsError::Empty)));
    }

    #[test]
    fn sas_with_stub_embedder() {
        let g = LlmGateway::stub(&["emb"]);
        let e = g.embedder("emb");
        assert!((sas("Denver Broncos", &["Denver Broncos"], &e).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(sas("Denver", &["Paris"], &e).unwrap(), 0.0);
        assert_eq!(sas("", &["Paris"], &e).unwrap(), 0.0);
        let partial = sas("the Denver team", &["Denver"], &e).unwrap();
        assert!(partial > 0.0 && partial < 1.0);
    }

    #[test]
    fn judge_with_stub() {
        let g = LlmGateway::stub(&["judge"]);
        let yes = judge_criterion(&g, "judge", "Q?", "Start aspirin now.", "Recommends aspirin therapy", 0).unwrap();
        assert!(yes.met && !yes.flagged);
        let no = judge_criterion(&g, "judge", "Q?", "Rest.", "Recommends aspirin therapy", 0).unwrap();
        assert!(!no.met);
        let empty = judge_criterion(&g, "judge", "Q?", "  ", "Recommends aspirin therapy", 0).unwrap();
        assert!(!empty.met && !empty.flagged);
    }

    #[test]
    fn case_mean_aggregation() {
        let item = |id: &str, case: &str, w: Vec<f64>, met: Vec<bool>| ItemScore {
            adherence_points: Some(amega_case_score(&met, &w).unwrap()),
            adherence: Some(Adherence {
                case_id: case.into(),
                weights: w,
                verdicts: met
                    .into_iter()
                    .map(|m| CriterionVerdict {
                        met: m,
                        flagged: false,
                        rationale: String::new(),
                    })
                    .collect(),
            }),
            ..ItemScore::empty(id)
        };
        // Case 1 pools 3 of 4 weight units (37.5); case 2 scores 0.
        let scores = vec![
            item("q1", "1", vec![2.0], vec![true]),
            item("q2", "1", vec![1.0, 1.0], vec![false, true]),
            item("q3", "2", vec![5.0], vec![false]),
        ];
        assert_eq!(amega_aggregate(&scores).unwrap(), 18.75);
        let a = aggregate(Benchmark::FreeForm, &scores).unwrap();
        assert_eq!(a.reported("adherence"), Some(18.75));
        assert!(scores.iter().all(|s| s.check_shape(Benchmark::FreeForm)));
    }
}
