use serde::{Deserialize, Serialize};

use super::{
    build_syntactic_prompt, detect_applicable, realize_rule_based, retry_prompt, select_transformation,
    syntactic_output_schema, system_prompt, validate_syntactic_output, ConstituentSet, SyntaxError,
    TransformationKind,
};
use crate::dataset::{reanchor_answers, BenchmarkItem, Payload, TextField};
use crate::llm::{check_schema, ChatRequest, LlmError, LlmGateway, Message};
use crate::parse::{ParseGateway, ParsedSentence};
use crate::util::{self, hash_u64};
use crate::verdict::{reason, Reason, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealizationMode {
    Llm,
    Rules,
}

/// How sentences are rewritten. In rules mode an optional LLM takes over
/// sentences the realizer cannot handle.
pub enum SyntacticMode<'a> {
    Llm {
        gateway: &'a LlmGateway,
        model_id: String,
    },
    Rules {
        fallback: Option<(&'a LlmGateway, String)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntacticPerturbationRecord {
    pub item_id: String,
    pub field: String,
    /// Index over all sentences of the item, fields in order.
    pub sentence_index: usize,
    pub kind: TransformationKind,
    pub original: String,
    /// Sentence placed in the perturbed item (the original on fallback).
    pub transformed: String,
    pub mode: RealizationMode,
    pub validation: Verdict,
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<Reason>,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_fingerprint: Option<String>,
}

struct Outcome {
    text: Option<String>,
    mode: RealizationMode,
    verdict: Verdict,
    attempts: u32,
    notes: Vec<Reason>,
    rejected: Option<String>,
    fingerprint: Option<String>,
}

fn via_llm(
    gateway: &LlmGateway,
    model_id: &str,
    sentence: &ParsedSentence,
    kind: TransformationKind,
    constituents: &ConstituentSet,
    seed: u64,
    mut notes: Vec<Reason>,
) -> Outcome {
    let mut out = Outcome {
        text: None,
        mode: RealizationMode::Llm,
        verdict: Verdict::from_reasons(vec![reason("no_output", "rewriter produced no output")]),
        attempts: 0,
        notes: Vec::new(),
        rejected: None,
        fingerprint: None,
    };
    let prompt = match build_syntactic_prompt(sentence, kind, constituents) {
        Ok(p) => p,
        Err(e) => {
            notes.push(reason("prompt", e.to_string()));
            out.notes = notes;
            return out;
        }
    };
    let mut messages = vec![Message::system(system_prompt()), Message::user(prompt)];
    while out.attempts < 2 {
        out.attempts += 1;
        let req = ChatRequest::new(model_id, messages.clone(), seed).with_schema(syntactic_output_schema().clone());
        let (raw, parsed) = match gateway.complete(&req) {
            Ok(resp) => {
                out.fingerprint = resp.fingerprint.clone();
                let parsed = check_schema(syntactic_output_schema(), &resp.content)
                    .map(|v| v["transformed"].as_str().unwrap_or_default().trim().to_string());
                (resp.content, parsed)
            }
            Err(LlmError::Schema { message, raw }) => (raw, Err(message)),
            Err(e) => {
                notes.push(reason("llm_error", e.to_string()));
                break;
            }
        };
        let verdict = match &parsed {
            Ok(text) => validate_syntactic_output(sentence, text, kind),
            Err(message) => Verdict::from_reasons(vec![reason("schema", message.clone())]),
        };
        let passed = verdict.passed;
        let feedback = verdict.summary();
        out.verdict = verdict;
        if passed {
            out.text = parsed.ok();
            out.rejected = None;
            break;
        }
        out.rejected = Some(raw.clone());
        messages.push(Message::assistant(raw));
        messages.push(Message::user(retry_prompt(&feedback)));
    }
    out.notes = notes;
    out
}

fn realize(
    mode: &SyntacticMode<'_>,
    sentence: &ParsedSentence,
    kind: TransformationKind,
    constituents: &ConstituentSet,
    seed: u64,
) -> Outcome {
    match mode {
        SyntacticMode::Llm { gateway, model_id } => {
            via_llm(gateway, model_id, sentence, kind, constituents, seed, Vec::new())
        }
        SyntacticMode::Rules { fallback } => {
            let (notes, rejected) = match realize_rule_based(sentence, kind, constituents) {
                Ok(text) => {
                    let verdict = validate_syntactic_output(sentence, &text, kind);
                    if verdict.passed {
                        return Outcome {
                            text: Some(text),
                            mode: RealizationMode::Rules,
                            verdict,
                            attempts: 1,
                            notes: Vec::new(),
                            rejected: None,
                            fingerprint: None,
                        };
                    }
                    (vec![reason("rules_rejected", verdict.summary())], Some(text))
                }
                Err(e) => (vec![reason("unsupported_realization", e.to_string())], None),
            };
            match fallback {
                Some((gateway, model_id)) => {
                    let mut o = via_llm(gateway, model_id, sentence, kind, constituents, seed, notes);
                    o.attempts += 1;
                    o
                }
                None => Outcome {
                    text: None,
                    mode: RealizationMode::Rules,
                    verdict: Verdict::from_reasons(notes.clone()),
                    attempts: 1,
                    notes,
                    rejected,
                    fingerprint: None,
                },
            }
        }
    }
}

/// Scalar `[start, end)` ranges of gold answers in an extractive context.
fn answer_ranges(item: &BenchmarkItem) -> Vec<(usize, usize, String)> {
    match &item.payload {
        Payload::Extractive(p) => p
            .gold_answers
            .iter()
            .map(|a| (a.offset, a.offset + util::char_len(&a.text), a.text.clone()))
            .collect(),
        _ => Vec::new(),
    }
}

/// Applies at most one transformation to every sentence of every text
/// field. Sentences with no applicable kind are left alone and produce no
/// record; a sentence whose rewrite fails keeps its original text and its
/// record says why. For the extractive context, a sentence holding a gold
/// answer is only replaced when the rewrite still contains every such
/// answer verbatim.
pub fn perturb_item_syntactic(
    item: &BenchmarkItem,
    parser: &ParseGateway,
    mode: &SyntacticMode<'_>,
    seed: u64,
) -> Result<(BenchmarkItem, Vec<SyntacticPerturbationRecord>), SyntaxError> {
    let mut out = item.clone();
    let mut records = Vec::new();
    let mut sentence_index = 0usize;
    let answers = answer_ranges(item);
    let fields: Vec<(TextField, String)> = item
        .text_fields()
        .into_iter()
        .map(|(f, t)| (f, t.to_string()))
        .collect();

    for (field, text) in fields {
        if text.trim().is_empty() {
            continue;
        }
        let doc = parser.parse_text(&text)?;
        let first_record = records.len();
        let mut replacements: Vec<((usize, usize), String)> = Vec::new();
        for ds in &doc.sentences {
            let index = sentence_index;
            sentence_index += 1;
            let report = detect_applicable(&ds.sentence);
            let Some(kind) = select_transformation(&report, seed, &item.id, index) else {
                continue;
            };
            let constituents = report.get(kind).constituents.clone().unwrap_or_default();
            let call_seed = hash_u64(&[&seed.to_le_bytes(), item.id.as_bytes(), &(index as u64).to_le_bytes()]);
            let o = realize(mode, &ds.sentence, kind, &constituents, call_seed);

            let mut record = SyntacticPerturbationRecord {
                item_id: item.id.clone(),
                field: field.to_string(),
                sentence_index: index,
                kind,
                original: ds.sentence.text.clone(),
                transformed: ds.sentence.text.clone(),
                mode: o.mode,
                validation: o.verdict,
                fallback: true,
                notes: o.notes,
                attempts: o.attempts,
                rejected_output: o.rejected,
                model_fingerprint: o.fingerprint,
            };
            if let Some(new_text) = o.text {
                let (start, end) = ds.span;
                let held: Vec<&String> = if field == TextField::Context {
                    answers
                        .iter()
                        .filter(|(s, e, _)| *s < end && *e > start)
                        .map(|(_, _, t)| t)
                        .collect()
                } else {
                    Vec::new()
                };
                if let Some(lost) = held.iter().find(|a| !new_text.contains(a.as_str())) {
                    record.notes.push(reason(
                        "answer_guard",
                        format!("gold answer {lost:?} would not survive; sentence kept"),
                    ));
                    record.rejected_output = Some(new_text);
                } else {
                    record.transformed = new_text.clone();
                    record.fallback = false;
                    replacements.push((ds.span, new_text));
                }
            }
            records.push(record);
        }
        if replacements.is_empty() {
            continue;
        }

        let mut new_field = String::new();
        let mut cursor = 0;
        for ((start, end), repl) in &replacements {
            let bs = util::byte_offset(&text, *start).unwrap_or(text.len());
            let be = util::byte_offset(&text, *end).unwrap_or(text.len());
            new_field.push_str(&text[cursor..bs]);
            new_field.push_str(repl);
            cursor = be;
        }
        new_field.push_str(&text[cursor..]);

        let mut candidate = out.clone();
        candidate.set_field(field, new_field.clone());
        let anchored = match (&mut candidate.payload, field) {
            (Payload::Extractive(p), TextField::Context) => match reanchor_answers(&text, &new_field, &p.gold_answers) {
                Some(g) => {
                    p.gold_answers = g;
                    true
                }
                None => false,
            },
            _ => true,
        };
        if anchored && candidate.validate().is_ok() {
            out = candidate;
        } else {
            for r in records[first_record..].iter_mut().filter(|r| !r.fallback) {
                r.fallback = true;
                r.rejected_output = Some(std::mem::replace(&mut r.transformed, r.original.clone()));
                r.notes.push(reason("gold_answer_lost", "gold answer could not be re-anchored"));
            }
        }
    }
    Ok((out, records))
}
