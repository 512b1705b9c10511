//! Deterministic offline backend.
//!
//! Replies are pure functions of `(model_id, request)`:
//!
//! * multiple-choice prompts (lines `A. ...`) get `Answer: X`, where models
//!   named `stub-letter-X` always pick `X` and others pick by hash;
//! * prompts with a `Context:` block get a short span copied from it;
//! * judge requests (schema with a `verdict` property) say yes when the
//!   answer shares a word of five or more letters with the criterion;
//! * lexical rewrite requests (schema with `perturbed_text`) apply the
//!   bundled synonym lexicon to the delimited text, leaving protected
//!   strings alone;
//! * syntactic rewrite requests (schema with `transformed`) echo the
//!   delimited sentence unchanged;
//! * anything else gets a short free-text answer built from the prompt.
//!
//! Embeddings are hashed bags of normalized words, so texts sharing no
//! words are orthogonal and identical texts have cosine 1.

use serde_json::{json, Value};

use super::{ChatRequest, Completion, LlmBackend, LlmError, ModelSpec, Usage};
use crate::util::hash_u64;

pub const STUB_FINGERPRINT: &str = "stub-v1";
const EMBED_DIM: usize = 4096;

#[derive(Debug, Default, Clone, Copy)]
pub struct StubBackend;

impl StubBackend {
    pub fn new() -> Self {
        StubBackend
    }
}

/// Text between the first `<<<` line and the following `>>>` line.
pub(crate) fn delimited(prompt: &str) -> Option<&str> {
    let start = prompt.find("<<<\n")? + 4;
    let len = prompt[start..].find("\n>>>")?;
    Some(&prompt[start..start + len])
}

/// JSON array following `label` on its own line.
pub(crate) fn json_list_after<'a>(prompt: &'a str, label: &str) -> Vec<String> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(label))
        .and_then(|rest| serde_json::from_str(rest.trim()).ok())
        .unwrap_or_default()
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn schema_has(req: &ChatRequest, property: &str) -> bool {
    req.output_schema
        .as_ref()
        .is_some_and(|s| s["properties"].get(property).is_some())
}

fn choice_labels(prompt: &str) -> Vec<char> {
    prompt
        .lines()
        .filter_map(|l| {
            let mut cs = l.chars();
            match (cs.next(), cs.next(), cs.next()) {
                (Some(c), Some('.'), Some(' ')) if c.is_ascii_uppercase() => Some(c),
                _ => None,
            }
        })
        .collect()
}

fn reply(model: &str, req: &ChatRequest) -> String {
    let prompt: String = req
        .messages
        .iter()
        .map(|m| m.content.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let h = hash_u64(&[model.as_bytes(), prompt.as_bytes()]);

    if schema_has(req, "verdict") {
        let criterion = prompt
            .lines()
            .find_map(|l| l.strip_prefix("Criterion: "))
            .unwrap_or("");
        let answer = delimited(&prompt).unwrap_or("");
        let answer_words = words(answer);
        let met = words(criterion)
            .iter()
            .any(|w| w.chars().count() >= 5 && answer_words.contains(w));
        let verdict = if met { "yes" } else { "no" };
        return json!({"verdict": verdict, "rationale": "word overlap"}).to_string();
    }
    if schema_has(req, "perturbed_text") {
        let text = delimited(&prompt).unwrap_or("");
        let protected = json_list_after(&prompt, "Protected strings (JSON): ");
        let out = crate::lexical::perturb_lexicon_mode(
            text,
            crate::lexical::bundled_lexicon(),
            req.seed,
            0.5,
            &protected,
        );
        let changes: Vec<Value> = out
            .changes
            .iter()
            .map(|c| json!([c.original, c.substitution]))
            .collect();
        return json!({"perturbed_text": out.perturbed, "changes": changes}).to_string();
    }
    if schema_has(req, "transformed") {
        let sentence = delimited(&prompt).unwrap_or("");
        return json!({"transformed": sentence}).to_string();
    }

    let labels = choice_labels(&prompt);
    if !labels.is_empty() {
        let pick = model
            .strip_prefix("stub-letter-")
            .and_then(|l| l.chars().next())
            .filter(|c| labels.contains(c))
            .unwrap_or(labels[(h % labels.len() as u64) as usize]);
        return format!("Answer: {pick}");
    }
    if let Some(ctx) = prompt.lines().find_map(|l| l.strip_prefix("Context: ")) {
        let toks: Vec<&str> = ctx.split_whitespace().collect();
        if toks.is_empty() {
            return String::new();
        }
        let start = (h % toks.len() as u64) as usize;
        let len = 1 + ((h >> 16) % 3) as usize;
        let span = toks[start..(start + len).min(toks.len())].join(" ");
        return span
            .trim_matches(|c: char| c.is_ascii_punctuation())
            .to_string();
    }
    let ws: Vec<String> = words(&prompt).into_iter().filter(|w| w.len() >= 5).collect();
    if ws.is_empty() {
        return "No answer.".into();
    }
    let k = 3.min(ws.len());
    let picked: Vec<&str> = (0..k)
        .map(|i| ws[((h >> (8 * i)) % ws.len() as u64) as usize].as_str())
        .collect();
    format!("Consider {}.", picked.join(", "))
}

fn embed_one(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; EMBED_DIM];
    for w in words(text) {
        v[(hash_u64(&[w.as_bytes()]) % EMBED_DIM as u64) as usize] += 1.0;
    }
    if v.iter().all(|x| *x == 0.0) {
        // Texts without words still need a nonzero vector.
        v[(hash_u64(&[text.as_bytes()]) % EMBED_DIM as u64) as usize] = 1.0;
    }
    v
}

impl LlmBackend for StubBackend {
    fn chat(&self, spec: &ModelSpec, request: &ChatRequest) -> Result<Completion, LlmError> {
        let content = reply(&spec.model_id, request);
        let prompt_tokens = request
            .messages
            .iter()
            .map(|m| m.content.split_whitespace().count() as u64)
            .sum();
        Ok(Completion {
            usage: Usage {
                prompt_tokens,
                completion_tokens: content.split_whitespace().count() as u64,
            },
            content,
            finish_reason: "stop".into(),
            fingerprint: Some(STUB_FINGERPRINT.into()),
        })
    }

    fn embed(&self, _: &ModelSpec, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        Ok(texts.iter().map(|t| embed_one(t)).collect())
    }
}
