//! Syntactic perturbation of matrix clauses.
//!
//! [`detect_applicable`] reads a dependency parse and reports which of the
//! eight transformations apply, [`select_transformation`] picks one per
//! sentence, and the sentence is rewritten either by an LLM prompted with
//! [`build_syntactic_prompt`] or by the deterministic [`realize_rule_based`].
//! Both outputs go through [`validate_syntactic_output`].

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::parse::{ParseError, ParsedSentence, SubtreeSpan};
use crate::util::{fill, hash_u64};

mod item;
pub mod morph;
mod realize;
mod validate;

pub use item::{perturb_item_syntactic, RealizationMode, SyntacticMode, SyntacticPerturbationRecord};
pub use realize::realize_rule_based;
pub use validate::validate_syntactic_output;

pub const PROMPT_VERSION: &str = "syntactic.v1";

const SYSTEM: &str = include_str!("../../data/prompts/syntactic_system.v1.txt");
const USER: &str = include_str!("../../data/prompts/syntactic_user.v1.txt");
const OPERATIONS: &str = include_str!("../../data/prompts/syntactic_operations.v1.tsv");
const RETRY: &str = include_str!("../../data/prompts/syntactic_retry.v1.txt");
const SCHEMA: &str = include_str!("../../schemas/syntactic_output.schema.json");

#[derive(Debug, Error)]
pub enum SyntaxError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{kind} needs a {constituent}")]
    MissingConstituent {
        kind: TransformationKind,
        constituent: &'static str,
    },
    #[error("cannot realize: {0}")]
    UnsupportedRealization(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformationKind {
    ActiveToPassive,
    PassiveToActive,
    Extraposition,
    ReverseExtraposition,
    WhMovement,
    ReverseWhMovement,
    DativeAlternation,
    PrepDativeAlternation,
}

impl TransformationKind {
    pub const ALL: [TransformationKind; 8] = [
        TransformationKind::ActiveToPassive,
        TransformationKind::PassiveToActive,
        TransformationKind::Extraposition,
        TransformationKind::ReverseExtraposition,
        TransformationKind::WhMovement,
        TransformationKind::ReverseWhMovement,
        TransformationKind::DativeAlternation,
        TransformationKind::PrepDativeAlternation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformationKind::ActiveToPassive => "active_to_passive",
            TransformationKind::PassiveToActive => "passive_to_active",
            TransformationKind::Extraposition => "extraposition",
            TransformationKind::ReverseExtraposition => "reverse_extraposition",
            TransformationKind::WhMovement => "wh_movement",
            TransformationKind::ReverseWhMovement => "reverse_wh_movement",
            TransformationKind::DativeAlternation => "dative_alternation",
            TransformationKind::PrepDativeAlternation => "prep_dative_alternation",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// The other direction of the alternation.
    pub fn inverse(self) -> Self {
        use TransformationKind::*;
        match self {
            ActiveToPassive => PassiveToActive,
            PassiveToActive => ActiveToPassive,
            Extraposition => ReverseExtraposition,
            ReverseExtraposition => Extraposition,
            WhMovement => ReverseWhMovement,
            ReverseWhMovement => WhMovement,
            DativeAlternation => PrepDativeAlternation,
            PrepDativeAlternation => DativeAlternation,
        }
    }
}

impl fmt::Display for TransformationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Matrix-clause constituents, as subtree spans of root children.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstituentSet {
    pub subject_span: Option<SubtreeSpan>,
    pub object_span: Option<SubtreeSpan>,
    pub verb_index: Option<usize>,
    #[serde(default)]
    pub aux_indices: Vec<usize>,
    pub agent_span: Option<SubtreeSpan>,
    pub clausal_subject_span: Option<SubtreeSpan>,
    pub clausal_complement_span: Option<SubtreeSpan>,
    pub wh_index: Option<usize>,
    pub dative_span: Option<SubtreeSpan>,
}

impl ConstituentSet {
    /// Names of the constituents `kind` needs that are absent.
    pub fn missing_for(&self, kind: TransformationKind) -> Vec<&'static str> {
        use TransformationKind::*;
        let mut missing = Vec::new();
        let mut need = |present: bool, name: &'static str| {
            if !present {
                missing.push(name);
            }
        };
        match kind {
            ActiveToPassive => {
                need(self.subject_span.is_some(), "subject");
                need(self.object_span.is_some(), "object");
                need(self.verb_index.is_some(), "verb");
            }
            PassiveToActive => {
                need(self.subject_span.is_some(), "subject");
                need(self.agent_span.is_some(), "agent");
                need(self.verb_index.is_some(), "verb");
            }
            Extraposition => need(self.clausal_subject_span.is_some(), "clausal subject"),
            ReverseExtraposition => {
                need(self.subject_span.is_some(), "subject");
                need(self.clausal_complement_span.is_some(), "clausal complement");
            }
            WhMovement => {
                need(self.wh_index.is_some(), "wh-word");
                need(self.subject_span.is_some(), "subject");
            }
            ReverseWhMovement => {
                need(self.wh_index.is_some(), "wh-word");
                need(self.subject_span.is_some(), "subject");
                need(!self.aux_indices.is_empty(), "auxiliary");
            }
            DativeAlternation | PrepDativeAlternation => {
                need(self.object_span.is_some(), "object");
                need(self.dative_span.is_some(), "dative");
            }
        }
        missing
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindReport {
    pub kind: TransformationKind,
    pub applicable: bool,
    pub reason: String,
    pub constituents: Option<ConstituentSet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplicabilityReport {
    /// One entry per kind, in [`TransformationKind::ALL`] order.
    pub kinds: Vec<KindReport>,
}

impl ApplicabilityReport {
    pub fn get(&self, kind: TransformationKind) -> &KindReport {
        self.kinds
            .iter()
            .find(|r| r.kind == kind)
            .expect("report covers every kind")
    }

    pub fn is_applicable(&self, kind: TransformationKind) -> bool {
        self.get(kind).applicable
    }

    pub fn applicable_kinds(&self) -> Vec<TransformationKind> {
        self.kinds.iter().filter(|r| r.applicable).map(|r| r.kind).collect()
    }
}

const CLAUSAL: &[&str] = &["ccomp", "advcl", "acl", "relcl", "xcomp", "csubj", "csubjpass", "pcomp"];
const WH_TAGS: &[&str] = &["WDT", "WP", "WP$", "WRB"];

fn span(s: &ParsedSentence, head: usize) -> SubtreeSpan {
    s.subtree_span(head)
}

/// Wh-word of the matrix clause that is not (inside) the subject.
fn matrix_wh(s: &ParsedSentence, subject: Option<SubtreeSpan>) -> Option<usize> {
    s.tokens
        .iter()
        .filter(|t| WH_TAGS.contains(&t.fine_tag.as_str()))
        .filter(|t| subject.is_none_or(|sp| !sp.contains(t.index)))
        .find(|t| {
            std::iter::once(t.index)
                .chain(s.ancestors(t.index))
                .all(|i| !CLAUSAL.contains(&s.token(i).dep_label.as_str()))
        })
        .map(|t| t.index)
}

fn report(kind: TransformationKind, failures: Vec<String>, c: &ConstituentSet) -> KindReport {
    if failures.is_empty() {
        KindReport {
            kind,
            applicable: true,
            reason: "all conditions hold".into(),
            constituents: Some(c.clone()),
        }
    } else {
        KindReport {
            kind,
            applicable: false,
            reason: failures.join("; "),
            constituents: None,
        }
    }
}

/// Evaluates every transformation's applicability conditions on the root
/// clause of `s`.
pub fn detect_applicable(s: &ParsedSentence) -> ApplicabilityReport {
    use TransformationKind::*;
    let root = s.root_index;
    let root_tok = s.root();
    let child = |label: &str| s.child_with_label(root, label).map(|t| t.index);

    let nsubj = child("nsubj");
    let nsubjpass = child("nsubjpass");
    let csubj = child("csubj");
    let dobj = child("dobj");
    let agent = child("agent");
    let ccomp = child("ccomp");
    let auxpass = child("auxpass");
    let dative = child("dative");
    let subject_head = nsubj.or(nsubjpass).or(csubj);

    let mut aux_indices: Vec<usize> = s
        .children(root)
        .filter(|t| t.dep_label == "aux" || t.dep_label == "auxpass")
        .map(|t| t.index)
        .collect();
    if aux_indices.is_empty() && root_tok.lemma == "be" {
        // A copular main verb behaves as the auxiliary.
        aux_indices.push(root);
    }

    let subject_span = nsubj.or(nsubjpass).map(|h| span(s, h));
    let wh_index = matrix_wh(s, subject_head.map(|h| span(s, h)));

    let c = ConstituentSet {
        subject_span,
        object_span: dobj.map(|h| span(s, h)),
        verb_index: Some(root),
        aux_indices: aux_indices.clone(),
        agent_span: agent.map(|h| span(s, h)),
        clausal_subject_span: csubj.map(|h| span(s, h)),
        clausal_complement_span: ccomp.map(|h| span(s, h)),
        wh_index,
        dative_span: dative.map(|h| span(s, h)),
    };

    let mut kinds = Vec::with_capacity(8);

    let mut f = Vec::new();
    match nsubj {
        None => f.push("no nominal subject (nsubj)".to_string()),
        Some(h) if s.token(h).lower() == "it" => f.push("subject is the pronoun \"it\"".into()),
        _ => {}
    }
    if dobj.is_none() {
        f.push("no direct object (dobj)".into());
    }
    if root_tok.lemma == "have" {
        f.push("main verb is \"have\"".into());
    }
    kinds.push(report(ActiveToPassive, f, &c));

    let mut f = Vec::new();
    if nsubjpass.is_none() {
        f.push("no passive subject (nsubjpass)".to_string());
    }
    if auxpass.is_none() {
        f.push("no passive auxiliary (auxpass)".into());
    }
    if agent.is_none() {
        f.push("no agent phrase (agent)".into());
    }
    kinds.push(report(PassiveToActive, f, &c));

    let f = if csubj.is_none() {
        vec!["no clausal subject (csubj)".to_string()]
    } else {
        Vec::new()
    };
    kinds.push(report(Extraposition, f, &c));

    let mut f = Vec::new();
    if nsubj.is_none_or(|h| s.token(h).lower() != "it") {
        f.push("subject is not the pronoun \"it\"".to_string());
    }
    if ccomp.is_none() {
        f.push("no clausal complement (ccomp)".into());
    }
    kinds.push(report(ReverseExtraposition, f, &c));

    let subj_span = subject_head.map(|h| span(s, h));
    let first_aux = aux_indices.first().copied();
    let mut wh_common = Vec::new();
    if wh_index.is_none() {
        wh_common.push("no non-subject wh-word in the main clause".to_string());
    }
    if subj_span.is_none() {
        wh_common.push("no subject".into());
    }
    let mut f = wh_common.clone();
    if let (Some(sp), Some(a)) = (subj_span, first_aux) {
        if a < sp.lo {
            f.push("auxiliary precedes the subject".into());
        }
    }
    kinds.push(report(WhMovement, f, &c));

    let mut f = wh_common;
    match (subj_span, first_aux) {
        (_, None) => f.push("no auxiliary".into()),
        (Some(sp), Some(a)) if a > sp.hi => f.push("subject precedes the auxiliary".into()),
        _ => {}
    }
    kinds.push(report(ReverseWhMovement, f, &c));

    let dative_pos = dative.map(|h| s.token(h).coarse_pos.as_str());
    let nominal = matches!(dative_pos, Some("NOUN" | "PROPN" | "PRON"));
    let prepositional = matches!(dative_pos, Some("ADP"));
    let mut f = Vec::new();
    if dobj.is_none() {
        f.push("no direct object (dobj)".to_string());
    }
    if !nominal {
        f.push("no nominal dative".into());
    }
    kinds.push(report(DativeAlternation, f, &c));

    let mut f = Vec::new();
    if dobj.is_none() {
        f.push("no direct object (dobj)".to_string());
    }
    if !prepositional {
        f.push("no prepositional dative".into());
    }
    kinds.push(report(PrepDativeAlternation, f, &c));

    ApplicabilityReport { kinds }
}

/// Picks one applicable kind, uniformly, keyed on `(seed, item_id,
/// sentence_index)` so other items' choices never shift.
pub fn select_transformation(
    report: &ApplicabilityReport,
    seed: u64,
    item_id: &str,
    sentence_index: usize,
) -> Option<TransformationKind> {
    let kinds = report.applicable_kinds();
    if kinds.is_empty() {
        return None;
    }
    let h = hash_u64(&[
        &seed.to_le_bytes(),
        item_id.as_bytes(),
        &(sentence_index as u64).to_le_bytes(),
    ]);
    Some(kinds[(h % kinds.len() as u64) as usize])
}

fn operations() -> &'static HashMap<&'static str, &'static str> {
    static M: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    M.get_or_init(|| {
        OPERATIONS
            .lines()
            .filter_map(|l| l.split_once('\t'))
            .collect()
    })
}

pub fn syntactic_output_schema() -> &'static Value {
    static S: OnceLock<Value> = OnceLock::new();
    S.get_or_init(|| serde_json::from_str(SCHEMA).expect("bundled schema is JSON"))
}

pub(crate) fn system_prompt() -> &'static str {
    SYSTEM.trim()
}

pub(crate) fn retry_prompt(reasons: &str) -> String {
    fill(RETRY, &[("reasons", reasons)])
}

fn span_text(s: &ParsedSentence, sp: SubtreeSpan) -> String {
    s.span_text(sp.lo, sp.hi)
}

/// User prompt asking for `kind` on `sentence`.
pub fn build_syntactic_prompt(
    sentence: &ParsedSentence,
    kind: TransformationKind,
    constituents: &ConstituentSet,
) -> Result<String, SyntaxError> {
    if let Some(&constituent) = constituents.missing_for(kind).first() {
        return Err(SyntaxError::MissingConstituent { kind, constituent });
    }
    let mut lines = Vec::new();
    let mut add = |label: &str, text: String| lines.push(format!("- {label}: \"{text}\""));
    if let Some(sp) = constituents.subject_span {
        add("subject", span_text(sentence, sp));
    }
    if let Some(v) = constituents.verb_index {
        add("main verb", sentence.token(v).text.clone());
    }
    for &a in &constituents.aux_indices {
        add("auxiliary", sentence.token(a).text.clone());
    }
    if let Some(sp) = constituents.object_span {
        add("direct object", span_text(sentence, sp));
    }
    if let Some(sp) = constituents.dative_span {
        add("indirect object", span_text(sentence, sp));
    }
    if let Some(sp) = constituents.agent_span {
        add("agent", span_text(sentence, sp));
    }
    if let Some(sp) = constituents.clausal_subject_span {
        add("clausal subject", span_text(sentence, sp));
    }
    if let Some(sp) = constituents.clausal_complement_span {
        add("clausal complement", span_text(sentence, sp));
    }
    if let Some(w) = constituents.wh_index {
        add("wh-word", sentence.token(w).text.clone());
    }
    let operation = kind.name().replace('_', " ");
    Ok(fill(
        USER,
        &[
            ("operation", &operation),
            ("instruction", operations().get(kind.name()).copied().unwrap_or_default()),
            ("constituents", &lines.join("\n")),
            ("sentence", &sentence.text),
        ],
    ))
}
