//! Zero-shot evaluation of one model on benchmark items.

use serde::{Deserialize, Serialize};

use crate::dataset::{BenchmarkItem, Payload};
use crate::llm::{ChatRequest, LlmError, LlmGateway, Message};
use crate::metrics::{self, Adherence, CriterionVerdict, ItemScore, MetricsError};
use crate::util::{fill, hash_u64};

const MMLU: &str = include_str!("../data/prompts/eval_mmlu.v1.txt");
const SQUAD: &str = include_str!("../data/prompts/eval_squad.v1.txt");
const AMEGA: &str = include_str!("../data/prompts/eval_amega.v1.txt");

pub const PROMPT_VERSION: &str = "eval.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub model_id: String,
    /// Grades free-form answers against each criterion.
    pub judge_model: String,
    /// Embeds extractive answers for SAS.
    pub embedding_model: String,
    pub seed: u64,
    pub max_tokens: u32,
}

/// Outcome of one item. A failed item carries zero scores and the error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    pub response: Option<String>,
    pub score: ItemScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_fingerprint: Option<String>,
    /// Served from the response cache; not persisted.
    #[serde(skip)]
    pub cached: bool,
}

impl ItemResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

pub fn build_eval_messages(item: &BenchmarkItem) -> Vec<Message> {
    let user = match &item.payload {
        Payload::MultipleChoice(p) => {
            let choices: Vec<String> = p
                .choices
                .iter()
                .map(|c| format!("{}. {}", c.label, c.text))
                .collect();
            fill(MMLU, &[("question", &p.question), ("choices", &choices.join("\n"))])
        }
        Payload::Extractive(p) => {
            // One line, so the passage cannot be mistaken for instructions.
            let context = p.context.split_whitespace().collect::<Vec<_>>().join(" ");
            fill(SQUAD, &[("context", &context), ("question", &p.question)])
        }
        Payload::FreeForm(p) => {
            let case = item
                .source_meta
                .get("case_description")
                .map(String::as_str)
                .unwrap_or("");
            fill(AMEGA, &[("case", case), ("question", &p.question)])
        }
    };
    vec![Message::user(user.trim_end())]
}

/// Scores all-wrong for `item`; used for failed calls.
pub fn zero_score(item: &BenchmarkItem) -> ItemScore {
    let mut s = ItemScore::empty(&item.id);
    match &item.payload {
        Payload::MultipleChoice(_) => s.correct = Some(false),
        Payload::Extractive(_) => {
            s.em = Some(0.0);
            s.f1 = Some(0.0);
            s.sas = Some(0.0);
        }
        Payload::FreeForm(p) => {
            s.adherence_points = Some(0.0);
            s.adherence = Some(Adherence {
                case_id: p.case_id.clone(),
                weights: p.criteria.iter().map(|c| c.weight).collect(),
                verdicts: p
                    .criteria
                    .iter()
                    .map(|_| CriterionVerdict {
                        met: false,
                        flagged: false,
                        rationale: "no answer".into(),
                    })
                    .collect(),
            });
        }
    }
    s
}

/// Scores `response` to `item`.
pub fn score_response(
    item: &BenchmarkItem,
    response: &str,
    gateway: &LlmGateway,
    settings: &EvalSettings,
) -> Result<ItemScore, MetricsError> {
    let mut s = ItemScore::empty(&item.id);
    match &item.payload {
        Payload::MultipleChoice(p) => {
            let labels: Vec<String> = p.choices.iter().map(|c| c.label.clone()).collect();
            let pick = metrics::extract_choice(response, &labels);
            s.correct = Some(pick.as_deref() == Some(p.gold_label.as_str()));
        }
        Payload::Extractive(p) => {
            let golds: Vec<&str> = p.gold_answers.iter().map(|g| g.text.as_str()).collect();
            s.em = Some(metrics::exact_match(response, &golds));
            s.f1 = Some(metrics::token_f1(response, &golds));
            let embedder = gateway.embedder(&settings.embedding_model);
            s.sas = Some(metrics::sas(response, &golds, &embedder)?);
        }
        Payload::FreeForm(p) => {
            let mut verdicts = Vec::with_capacity(p.criteria.len());
            for (k, c) in p.criteria.iter().enumerate() {
                let seed = hash_u64(&[&settings.seed.to_le_bytes(), item.id.as_bytes(), &(k as u64).to_le_bytes()]);
                verdicts.push(metrics::judge_criterion(
                    gateway,
                    &settings.judge_model,
                    &p.question,
                    response,
                    &c.text,
                    seed,
                )?);
            }
            let weights: Vec<f64> = p.criteria.iter().map(|c| c.weight).collect();
            let met: Vec<bool> = verdicts.iter().map(|v| v.met).collect();
            s.adherence_points = Some(metrics::amega_case_score(&met, &weights)?);
            s.adherence = Some(Adherence {
                case_id: p.case_id.clone(),
                weights,
                verdicts,
            });
        }
    }
    Ok(s)
}

/// Asks the model and scores the reply. Transport and scoring failures are
/// recorded on the result rather than returned.
pub fn evaluate_item(gateway: &LlmGateway, settings: &EvalSettings, item: &BenchmarkItem) -> ItemResult {
    let req = ChatRequest::new(&settings.model_id, build_eval_messages(item), settings.seed)
        .with_max_tokens(settings.max_tokens);
    let failed = |e: String, response: Option<String>| ItemResult {
        item_id: item.id.clone(),
        response,
        score: zero_score(item),
        error: Some(e),
        model_fingerprint: None,
        cached: false,
    };
    let resp = match gateway.complete(&req) {
        Ok(r) => r,
        Err(LlmError::Schema { message, raw }) => return failed(message, Some(raw)),
        Err(e) => return failed(e.to_string(), None),
    };
    match score_response(item, &resp.content, gateway, settings) {
        Ok(score) => ItemResult {
            item_id: item.id.clone(),
            response: Some(resp.content),
            score,
            error: None,
            model_fingerprint: resp.fingerprint,
            cached: resp.cached,
        },
        Err(e) => failed(format!("scoring failed: {e}"), Some(resp.content)),
    }
}
