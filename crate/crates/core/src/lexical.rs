//! Lexical perturbation by guided synonym substitution.
//!
//! Two modes share one validator: an LLM rewriter constrained by
//! [`lexical_output_schema`], and an offline lexicon mode that substitutes
//! single words from a synonym table.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::{reanchor_answers, BenchmarkItem, Payload, TextField};
use crate::llm::{ChatRequest, LlmError, LlmGateway, Message};
use crate::util::{self, fill, hash_u64};
use crate::verdict::{reason, Reason, Verdict};

pub const PROMPT_VERSION: &str = "lexical.v1";

const SYSTEM: &str = include_str!("../data/prompts/lexical_system.v1.txt");
const TEMPLATE_MMLU: &str = include_str!("../data/prompts/lexical_mmlu.v1.txt");
const TEMPLATE_SQUAD: &str = include_str!("../data/prompts/lexical_squad.v1.txt");
const TEMPLATE_AMEGA: &str = include_str!("../data/prompts/lexical_amega.v1.txt");
const PROTECTED_CLAUSE: &str = include_str!("../data/prompts/lexical_protected.v1.txt");
const ANSWER_CLAUSE: &str = include_str!("../data/prompts/lexical_answers.v1.txt");
const RETRY: &str = include_str!("../data/prompts/lexical_retry.v1.txt");
const SCHEMA: &str = include_str!("../schemas/lexical_output.schema.json");
const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.tsv");

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "if", "of", "to", "in", "on", "at", "by", "for", "with",
    "from", "as", "is", "are", "was", "were", "be", "been", "being", "it", "its", "this", "that",
    "these", "those", "not", "no", "do", "does", "did", "has", "have", "had", "which", "what",
    "who", "whom", "whose", "when", "where", "why", "how", "all", "any", "some",
];

const UNITS: &str = "%|‰|°C|°F|°|kg|g|mg|µg|mcg|lb|lbs|oz|km|m|cm|mm|nm|mi|ft|L|l|mL|ml|dL|s|ms|min|h|hr|hrs|mol|mmol|mmHg|Hz|kHz|MHz|GHz|kJ|kcal|cal|kW|mV|mA|Pa|kPa|atm|bpm|IU";

#[derive(Debug, Error)]
pub enum LexicalError {
    #[error("item {item} has no field {field}")]
    NoSuchField { item: String, field: TextField },
    #[error("invalid lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("LLM mode needs a gateway")]
    NoGateway,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexicalChange {
    pub original: String,
    pub substitution: String,
}

/// Lowercase word to single-word synonyms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    map: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    /// One word per line followed by tab-separated synonyms. Multiword
    /// synonyms are dropped so substitution never changes the token count.
    pub fn parse(contents: &str) -> Result<Lexicon, LexicalError> {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, line) in contents.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let word = cols.next().unwrap_or("").trim().to_lowercase();
            if word.is_empty() || word.contains(' ') {
                return Err(LexicalError::Lexicon {
                    line: i + 1,
                    message: format!("bad headword {word:?}"),
                });
            }
            let entry = map.entry(word.clone()).or_default();
            for syn in cols.map(str::trim).filter(|s| !s.is_empty()) {
                let syn = syn.to_lowercase();
                if syn.contains(char::is_whitespace) || syn == word || entry.contains(&syn) {
                    continue;
                }
                entry.push(syn);
            }
        }
        map.retain(|_, v| !v.is_empty());
        Ok(Lexicon { map })
    }

    pub fn synonyms(&self, word: &str) -> Option<&[String]> {
        self.map.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn bundled_lexicon() -> &'static Lexicon {
    static LEX: OnceLock<Lexicon> = OnceLock::new();
    LEX.get_or_init(|| Lexicon::parse(BUNDLED_LEXICON).expect("bundled lexicon parses"))
}

pub fn lexical_output_schema() -> &'static Value {
    static S: OnceLock<Value> = OnceLock::new();
    S.get_or_init(|| serde_json::from_str(SCHEMA).expect("bundled schema is JSON"))
}

fn word_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"[A-Za-z]+").unwrap())
}

fn quantity_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| {
        Regex::new(&format!(
            r"[$€£]?\d+(?:[.,]\d+)*(?:\s?(?:{UNITS})(?:/(?:{UNITS}))?\b|%)?"
        ))
        .unwrap()
    })
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Byte range of the first token-bounded occurrence of `needle` in
/// `hay[from..]`, ASCII-case-insensitively when `fold` is set.
fn find_token(hay: &str, needle: &str, from: usize, fold: bool) -> Option<(usize, usize)> {
    if needle.is_empty() {
        return None;
    }
    let mut i = from;
    while i + needle.len() <= hay.len() {
        if hay.is_char_boundary(i) && hay.is_char_boundary(i + needle.len()) {
            let cand = &hay[i..i + needle.len()];
            let eq = if fold { cand.eq_ignore_ascii_case(needle) } else { cand == needle };
            let before_ok = hay[..i].chars().next_back().is_none_or(|c| !is_word_char(c));
            let after_ok = hay[i + needle.len()..].chars().next().is_none_or(|c| !is_word_char(c));
            if eq && before_ok && after_ok {
                return Some((i, i + needle.len()));
            }
        }
        i += 1;
    }
    None
}

fn match_case(model: &str, word: &str) -> String {
    let mut chars = model.chars();
    let first_upper = chars.next().is_some_and(char::is_uppercase);
    let all_upper = model.chars().count() > 1 && model.chars().all(|c| !c.is_lowercase());
    if all_upper {
        word.to_uppercase()
    } else if first_upper {
        util::capitalize_first(word)
    } else {
        word.to_string()
    }
}

/// Numbers (with attached units or currency), and choice labels mentioned
/// as standalone letters, in order of first appearance.
pub fn detect_protected(text: &str, choice_labels: &[String]) -> Vec<String> {
    let mut found: Vec<(usize, String)> = quantity_re()
        .find_iter(text)
        .map(|m| (m.start(), m.as_str().trim_end().to_string()))
        .collect();
    for label in choice_labels {
        if let Some((s, _)) = find_token(text, label, 0, false) {
            found.push((s, label.clone()));
        }
    }
    found.sort();
    let mut out: Vec<String> = Vec::new();
    for (_, s) in found {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Strings a rewrite of `field` must keep verbatim: gold answers (for an
/// extractive context), then numbers, units and choice labels occurring in
/// the text.
pub fn protected_strings(item: &BenchmarkItem, field: TextField) -> Vec<String> {
    let text = item.field(field).unwrap_or("");
    let mut out: Vec<String> = Vec::new();
    if field == TextField::Context {
        for a in item.gold_answer_texts() {
            if !out.iter().any(|s| s == a) {
                out.push(a.to_string());
            }
        }
    }
    let labels: Vec<String> = match &item.payload {
        Payload::MultipleChoice(p) => p.choices.iter().map(|c| c.label.clone()).collect(),
        _ => Vec::new(),
    };
    for s in detect_protected(text, &labels) {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

fn quoted_list(items: &[String]) -> String {
    items.iter().map(|s| format!("\"{s}\"")).collect::<Vec<_>>().join(", ")
}

/// User prompt for rewriting one field.
pub fn build_lexical_prompt(item: &BenchmarkItem, field: TextField) -> Result<String, LexicalError> {
    let text = item.field(field).ok_or_else(|| LexicalError::NoSuchField {
        item: item.id.clone(),
        field,
    })?;
    let protected = protected_strings(item, field);
    let template = match item.payload {
        Payload::MultipleChoice(_) => TEMPLATE_MMLU,
        Payload::Extractive(_) => TEMPLATE_SQUAD,
        Payload::FreeForm(_) => TEMPLATE_AMEGA,
    };
    let field_name = match field {
        TextField::Choice(_) => "answer option".to_string(),
        f => f.to_string(),
    };
    let answer_clause = if field == TextField::Context {
        let answers: Vec<String> = item.gold_answer_texts().iter().map(|s| s.to_string()).collect();
        fill(ANSWER_CLAUSE, &[("answer_list", &quoted_list(&answers))])
    } else {
        String::new()
    };
    let protected_clause = if protected.is_empty() {
        String::new()
    } else {
        fill(PROTECTED_CLAUSE, &[("protected_list", &quoted_list(&protected))])
    };
    let protected_json = serde_json::to_string(&protected).unwrap_or_else(|_| "[]".into());
    Ok(fill(
        template,
        &[
            ("field", &field_name),
            ("answer_clause", &answer_clause),
            ("protected_clause", &protected_clause),
            ("protected_json", &protected_json),
            ("text", text),
        ],
    ))
}

fn restore_sequential(perturbed: &str, changes: &[LexicalChange]) -> Option<String> {
    let mut out = String::new();
    let mut cursor = 0;
    for c in changes {
        let (s, e) = find_token(perturbed, &c.substitution, cursor, true)?;
        out.push_str(&perturbed[cursor..s]);
        out.push_str(&match_case(&perturbed[s..e], &c.original));
        cursor = e;
    }
    out.push_str(&perturbed[cursor..]);
    Some(out)
}

fn restore_all(perturbed: &str, changes: &[LexicalChange]) -> String {
    let mut text = perturbed.to_string();
    for c in changes {
        let mut out = String::new();
        let mut cursor = 0;
        while let Some((s, e)) = find_token(&text, &c.substitution, cursor, true) {
            out.push_str(&text[cursor..s]);
            out.push_str(&match_case(&text[s..e], &c.original));
            cursor = e;
        }
        out.push_str(&text[cursor..]);
        text = out;
    }
    text
}

/// Undoes `changes` in `perturbed`, in order of appearance when possible,
/// else by replacing every occurrence.
pub fn restore_original(original: &str, perturbed: &str, changes: &[LexicalChange]) -> String {
    let target = util::collapse_whitespace(original);
    if let Some(seq) = restore_sequential(perturbed, changes) {
        if util::collapse_whitespace(&seq) == target {
            return seq;
        }
    }
    restore_all(perturbed, changes)
}

/// Mechanical checks on a rewrite: protected strings verbatim, every change
/// grounded in both texts, and the inverse substitution recovering the
/// original up to whitespace.
pub fn validate_lexical_output(
    original: &str,
    perturbed: &str,
    changes: &[LexicalChange],
    protected: &[String],
) -> Verdict {
    let mut reasons: Vec<Reason> = Vec::new();
    if perturbed.trim().is_empty() {
        reasons.push(reason("empty_output", "perturbed text is empty"));
        return Verdict::from_reasons(reasons);
    }
    for p in protected {
        if !perturbed.contains(p.as_str()) {
            reasons.push(reason("protected_missing", p.clone()));
        }
    }
    for c in changes {
        if c.original.trim().is_empty() || c.substitution.trim().is_empty() {
            reasons.push(reason("empty_change", format!("{:?} -> {:?}", c.original, c.substitution)));
            continue;
        }
        if c.original == c.substitution {
            reasons.push(reason("identity_change", c.original.clone()));
        }
        if find_token(original, &c.original, 0, true).is_none() {
            reasons.push(reason("original_not_found", c.original.clone()));
        }
        if find_token(perturbed, &c.substitution, 0, true).is_none() {
            reasons.push(reason("substitution_not_found", c.substitution.clone()));
        }
    }
    if reasons.is_empty() {
        let restored = restore_original(original, perturbed, changes);
        if util::collapse_whitespace(&restored) != util::collapse_whitespace(original) {
            reasons.push(reason(
                "restoration_mismatch",
                "undoing the declared changes does not give back the original",
            ));
        }
    }
    Verdict::from_reasons(reasons)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconOutcome {
    pub perturbed: String,
    pub changes: Vec<LexicalChange>,
}

fn protected_ranges(text: &str, protected: &[String]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for p in protected.iter().filter(|p| !p.is_empty()) {
        let mut from = 0;
        while let Some(pos) = text[from..].find(p.as_str()) {
            out.push((from + pos, from + pos + p.len()));
            from += pos + 1;
            while !text.is_char_boundary(from) {
                from += 1;
            }
        }
    }
    out
}

/// Offline rewriter: each non-stopword found in `lexicon` is replaced with
/// probability `rate` by a uniformly drawn synonym, keeping its case
/// pattern. Words overlapping a protected string are never touched.
pub fn perturb_lexicon_mode(
    text: &str,
    lexicon: &Lexicon,
    seed: u64,
    rate: f64,
    protected: &[String],
) -> LexiconOutcome {
    let rate = rate.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shielded = protected_ranges(text, protected);
    let mut out = String::with_capacity(text.len());
    let mut changes = Vec::new();
    let mut cursor = 0;
    for m in word_re().find_iter(text) {
        let word = m.as_str();
        let lower = word.to_lowercase();
        if STOPWORDS.contains(&lower.as_str()) {
            continue;
        }
        let Some(syns) = lexicon.synonyms(&lower) else {
            continue;
        };
        // Letters glued to digits or underscores are not standalone words.
        let glued = text[..m.start()].chars().next_back().is_some_and(is_word_char)
            || text[m.end()..].chars().next().is_some_and(is_word_char);
        if glued || shielded.iter().any(|&(s, e)| m.start() < e && s < m.end()) {
            continue;
        }
        if !rng.gen_bool(rate) {
            continue;
        }
        let syn = match_case(word, syns.choose(&mut rng).expect("non-empty synonym list"));
        out.push_str(&text[cursor..m.start()]);
        out.push_str(&syn);
        cursor = m.end();
        changes.push(LexicalChange {
            original: word.to_string(),
            substitution: syn,
        });
    }
    out.push_str(&text[cursor..]);
    LexiconOutcome {
        perturbed: out,
        changes,
    }
}

fn changes_per_100_words(original: &str, n_changes: usize) -> f64 {
    let words = original.split_whitespace().count();
    if words == 0 {
        0.0
    } else {
        100.0 * n_changes as f64 / words as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexicalModeTag {
    Llm,
    Lexicon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalPerturbationRecord {
    pub item_id: String,
    pub field: String,
    pub mode: LexicalModeTag,
    pub original: String,
    /// Text placed in the perturbed item (the original on fallback).
    pub perturbed: String,
    pub changes: Vec<LexicalChange>,
    pub protected_strings: Vec<String>,
    pub validation: Verdict,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Reason>,
    pub attempts: u32,
    pub fallback: bool,
    /// Last rewrite that failed validation, when the field fell back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_output: Option<String>,
    pub changes_per_100_words: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_fingerprint: Option<String>,
}

pub enum LexicalMode<'a> {
    Llm { gateway: &'a LlmGateway, model_id: String },
    Lexicon { lexicon: &'a Lexicon, rate: f64 },
}

struct Attempt {
    text: String,
    changes: Vec<LexicalChange>,
    verdict: Verdict,
    raw: String,
}

fn parse_llm_output(raw: &str) -> Result<(String, Vec<LexicalChange>), String> {
    let v = crate::llm::check_schema(lexical_output_schema(), raw)?;
    let text = v["perturbed_text"].as_str().unwrap_or_default().to_string();
    let changes = v["changes"]
        .as_array()
        .map(|a| {
            a.iter()
                .map(|pair| LexicalChange {
                    original: pair[0].as_str().unwrap_or_default().to_string(),
                    substitution: pair[1].as_str().unwrap_or_default().to_string(),
                })
                .collect()
        })
        .unwrap_or_default();
    Ok((text, changes))
}

/// Rewrites every text field of `item`. Gold labels, answers and criteria
/// are untouched; extractive answers are re-anchored in the new context.
/// A field whose rewrite fails validation is retried once and otherwise
/// left as it was, with the failure recorded.
pub fn perturb_item_lexical(
    item: &BenchmarkItem,
    mode: &LexicalMode<'_>,
    seed: u64,
) -> Result<(BenchmarkItem, Vec<LexicalPerturbationRecord>), LexicalError> {
    let mut out = item.clone();
    let mut records = Vec::new();
    let fields: Vec<(TextField, String)> = item
        .text_fields()
        .into_iter()
        .map(|(f, t)| (f, t.to_string()))
        .collect();
    for (field, original) in fields {
        let field_seed = hash_u64(&[
            &seed.to_le_bytes(),
            item.id.as_bytes(),
            field.to_string().as_bytes(),
        ]);
        let protected = protected_strings(item, field);
        let mut warnings = Vec::new();
        let mut fingerprint = None;
        let mut attempts = 0u32;
        let mut last: Option<Attempt> = None;

        match mode {
            LexicalMode::Lexicon { lexicon, rate } => {
                attempts = 1;
                let o = perturb_lexicon_mode(&original, lexicon, field_seed, *rate, &protected);
                let verdict = validate_lexical_output(&original, &o.perturbed, &o.changes, &protected);
                last = Some(Attempt {
                    raw: o.perturbed.clone(),
                    text: o.perturbed,
                    changes: o.changes,
                    verdict,
                });
            }
            LexicalMode::Llm { gateway, model_id } => {
                let prompt = build_lexical_prompt(item, field)?;
                let mut messages = vec![Message::system(SYSTEM.trim()), Message::user(prompt)];
                while attempts < 2 {
                    attempts += 1;
                    let req = ChatRequest::new(model_id, messages.clone(), field_seed)
                        .with_schema(lexical_output_schema().clone())
                        .with_max_tokens(2048);
                    let (raw, parsed) = match gateway.complete(&req) {
                        Ok(resp) => {
                            fingerprint = resp.fingerprint.clone();
                            let parsed = parse_llm_output(&resp.content);
                            (resp.content, parsed)
                        }
                        Err(LlmError::Schema { message, raw }) => (raw, Err(message)),
                        Err(e) => {
                            warnings.push(reason("llm_error", e.to_string()));
                            break;
                        }
                    };
                    let attempt = match parsed {
                        Ok((text, changes)) => {
                            let verdict = validate_lexical_output(&original, &text, &changes, &protected);
                            Attempt {
                                text,
                                changes,
                                verdict,
                                raw: raw.clone(),
                            }
                        }
                        Err(message) => Attempt {
                            text: String::new(),
                            changes: Vec::new(),
                            verdict: Verdict::from_reasons(vec![reason("schema", message)]),
                            raw: raw.clone(),
                        },
                    };
                    let passed = attempt.verdict.passed;
                    let feedback = attempt.verdict.summary();
                    last = Some(attempt);
                    if passed {
                        break;
                    }
                    messages.push(Message::assistant(raw));
                    messages.push(Message::user(fill(RETRY, &[("reasons", &feedback)])));
                }
            }
        }

        let mode_tag = match mode {
            LexicalMode::Llm { .. } => LexicalModeTag::Llm,
            LexicalMode::Lexicon { .. } => LexicalModeTag::Lexicon,
        };
        let mut record = LexicalPerturbationRecord {
            item_id: item.id.clone(),
            field: field.to_string(),
            mode: mode_tag,
            original: original.clone(),
            perturbed: original.clone(),
            changes: Vec::new(),
            protected_strings: protected.clone(),
            validation: Verdict::default(),
            warnings,
            attempts,
            fallback: true,
            rejected_output: None,
            changes_per_100_words: 0.0,
            model_fingerprint: fingerprint,
        };
        match last {
            None => {
                record.validation = Verdict::from_reasons(vec![reason("no_output", "rewriter produced no output")]);
            }
            Some(a) if !a.verdict.passed => {
                record.validation = a.verdict;
                record.rejected_output = Some(a.raw);
            }
            Some(a) if a.changes.is_empty() => {
                // A clean rewrite that changed nothing passes through.
                record.validation = a.verdict;
                record.warnings.push(reason("no_changes", "rewriter returned an empty change list"));
                record.fallback = false;
            }
            Some(a) => {
                let mut candidate = out.clone();
                candidate.set_field(field, a.text.clone());
                let anchored = match (&mut candidate.payload, field) {
                    (Payload::Extractive(p), TextField::Context) => {
                        match reanchor_answers(&original, &a.text, &p.gold_answers) {
                            Some(g) => {
                                p.gold_answers = g;
                                true
                            }
                            None => false,
                        }
                    }
                    _ => true,
                };
                if anchored && candidate.validate().is_ok() {
                    out = candidate;
                    record.perturbed = a.text;
                    record.changes_per_100_words = changes_per_100_words(&original, a.changes.len());
                    record.changes = a.changes;
                    record.validation = a.verdict;
                    record.fallback = false;
                } else {
                    record.validation =
                        Verdict::from_reasons(vec![reason("gold_answer_lost", "gold answer could not be re-anchored")]);
                    record.rejected_output = Some(a.raw);
                }
            }
        }
        records.push(record);
    }
    Ok((out, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Benchmark, Choice, ExtractivePayload, GoldAnswer, MultipleChoicePayload};

    fn change(o: &str, s: &str) -> LexicalChange {
        LexicalChange {
            original: o.into(),
            substitution: s.into(),
        }
    }

    fn squad_item() -> BenchmarkItem {
        let context = "The big game was won by Denver in 2016 after a quick start.".to_string();
        let offset = util::char_index(&context, context.find("Denver").unwrap());
        BenchmarkItem {
            id: "q1".into(),
            benchmark: Benchmark::Extractive,
            payload: Payload::Extractive(ExtractivePayload {
                context,
                question: "Which team won the big game?".into(),
                gold_answers: vec![GoldAnswer {
                    text: "Denver".into(),
                    offset,
                }],
            }),
            source_meta: Default::default(),
        }
    }

    fn mmlu_item() -> BenchmarkItem {
        BenchmarkItem {
            id: "m1".into(),
            benchmark: Benchmark::MultipleChoice,
            payload: Payload::MultipleChoice(MultipleChoicePayload {
                question: "Which animal chased the small cat?".into(),
                choices: ["dog", "horse", "bird", "None of the above"]
                    .iter()
                    .zip(["A", "B", "C", "D"])
                    .map(|(t, l)| Choice {
                        label: l.into(),
                        text: t.to_string(),
                    })
                    .collect(),
                gold_label: "A".into(),
            }),
            source_meta: Default::default(),
        }
    }

    #[test]
    fn schema_accepts_and_rejects() {
        let s = lexical_output_schema();
        let ok = r#"{"perturbed_text": "a large dog", "changes": [["big", "large"]]}"#;
        assert!(crate::llm::check_schema(s, ok).is_ok());
        assert!(crate::llm::check_schema(s, r#"{"perturbed_text": "x"}"#).is_err());
        assert!(crate::llm::check_schema(s, r#"{"perturbed_text": "x", "changes": [["a","b","c"]]}"#).is_err());
        assert!(crate::llm::check_schema(s, r#"{"perturbed_text": "x", "changes": [], "extra": 1}"#).is_err());
    }

    #[test]
    fn validation_examples() {
        assert!(validate_lexical_output("a big dog", "a large dog", &[change("big", "large")], &[]).passed);
        let v = validate_lexical_output(
            "Denver won",
            "the Colorado capital won",
            &[change("Denver", "the Colorado capital")],
            &["Denver".into()],
        );
        assert!(v.has("protected_missing"));
        let v = validate_lexical_output("a big dog", "a large dog", &[change("huge", "large")], &[]);
        assert!(v.has("original_not_found"));
        // Undeclared edits break restoration.
        let v = validate_lexical_output("a big dog", "a large hound", &[change("big", "large")], &[]);
        assert!(v.has("restoration_mismatch"));
        // One declared pair may cover repeated occurrences, and case moves.
        assert!(validate_lexical_output("Big and big", "Large and large", &[change("big", "large")], &[]).passed);
    }

    #[test]
    fn lexicon_mode_examples() {
        let lex = Lexicon::parse("big\tlarge\n").unwrap();
        let o = perturb_lexicon_mode("a big big dog", &lex, 1, 1.0, &[]);
        assert_eq!(o.perturbed, "a large large dog");
        assert_eq!(o.changes.len(), 2);
        let o = perturb_lexicon_mode("a small dog", &lex, 1, 1.0, &[]);
        assert!(o.changes.is_empty());
        let o = perturb_lexicon_mode("A big dog", bundled_lexicon(), 3, 0.0, &[]);
        assert_eq!(o.perturbed, "A big dog");
        let a = perturb_lexicon_mode("The big dog chased the small cat", bundled_lexicon(), 9, 0.5, &[]);
        let b = perturb_lexicon_mode("The big dog chased the small cat", bundled_lexicon(), 9, 0.5, &[]);
        assert_eq!(a, b);
        let o = perturb_lexicon_mode("Big BIG big", &lex, 0, 1.0, &[]);
        assert_eq!(o.perturbed, "Large LARGE large");
        let o = perturb_lexicon_mode("big bigger big", &lex, 0, 1.0, &["big bigger".into()]);
        assert_eq!(o.perturbed, "big bigger large");
    }

    #[test]
    fn bundled_lexicon_is_single_word() {
        let lex = bundled_lexicon();
        assert!(lex.len() > 300);
        for (w, syns) in &lex.map {
            assert!(!w.contains(' '));
            assert!(syns.iter().all(|s| !s.contains(' ') && s != w));
        }
    }

    #[test]
    fn protected_detection() {
        let p = detect_protected("Give 5 mg twice, then 2.5 mL; 30% respond. See option B.", &["B".into(), "C".into()]);
        assert_eq!(p, vec!["5 mg", "2.5 mL", "30%", "B"]);
    }

    #[test]
    fn prompts() {
        let item = squad_item();
        let p = build_lexical_prompt(&item, TextField::Context).unwrap();
        assert!(p.contains("Leave the contiguous answer string untouched: \"Denver\""));
        assert!(p.contains("semantically appropriate synonyms"));
        assert_eq!(p, build_lexical_prompt(&item, TextField::Context).unwrap());
        let m = build_lexical_prompt(&mmlu_item(), TextField::Question).unwrap();
        assert!(m.contains("Protected strings (JSON): []"));
        assert!(!m.contains("Do not modify"));
        assert!(matches!(
            build_lexical_prompt(&mmlu_item(), TextField::Context),
            Err(LexicalError::NoSuchField { .. })
        ));
    }

    #[test]
    fn item_lexicon_mode_keeps_gold() {
        let item = mmlu_item();
        let mode = LexicalMode::Lexicon {
            lexicon: bundled_lexicon(),
            rate: 1.0,
        };
        let (out, records) = perturb_item_lexical(&item, &mode, 4).unwrap();
        let (Payload::MultipleChoice(a), Payload::MultipleChoice(b)) = (&item.payload, &out.payload) else {
            unreachable!()
        };
        assert_eq!(a.gold_label, b.gold_label);
        assert_ne!(a.question, b.question);
        assert_eq!(records.len(), 5);
        assert!(records.iter().all(|r| r.validation.passed));

        let squad = squad_item();
        let (out, records) = perturb_item_lexical(&squad, &mode, 4).unwrap();
        out.validate().unwrap();
        assert!(out.field(TextField::Context).unwrap().contains("Denver"));
        assert!(records[0].protected_strings.contains(&"Denver".to_string()));
        assert!(records[0].protected_strings.contains(&"2016".to_string()));
    }

    #[test]
    fn item_llm_mode_with_stub() {
        let g = LlmGateway::stub(&["rewriter"]);
        let mode = LexicalMode::Llm {
            gateway: &g,
            model_id: "rewriter".into(),
        };
        let (out, records) = perturb_item_lexical(&squad_item(), &mode, 1).unwrap();
        out.validate().unwrap();
        for r in &records {
            assert!(r.validation.passed, "{r:?}");
            for p in &r.protected_strings {
                assert!(r.perturbed.contains(p.as_str()));
            }
        }
        let (again, _) = perturb_item_lexical(&squad_item(), &mode, 1).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn empty_change_list_passes_through_with_warning() {
        let g = LlmGateway::stub(&["rewriter"]);
        let mode = LexicalMode::Llm {
            gateway: &g,
            model_id: "rewriter".into(),
        };
        let mut item = mmlu_item();
        item.set_field(TextField::Question, "Why?".into());
        let (out, records) = perturb_item_lexical(&item, &mode, 1).unwrap();
        assert_eq!(out.field(TextField::Question), Some("Why?"));
        assert!(records[0].warnings.iter().any(|w| w.code == "no_changes"));
    }
}
