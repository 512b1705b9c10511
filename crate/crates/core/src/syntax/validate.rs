use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use regex::Regex;

use super::morph;
use super::TransformationKind;
use crate::parse::ParsedSentence;
use crate::util::collapse_whitespace;
use crate::verdict::{reason, Reason, Verdict};

const EMBEDDED: &[&str] = &["ccomp", "advcl", "acl", "relcl", "xcomp"];

fn word_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+").unwrap())
}

/// Function words `kind` may add and may remove.
fn licensed(kind: TransformationKind) -> (&'static [&'static str], &'static [&'static str]) {
    use TransformationKind::*;
    match kind {
        ActiveToPassive => (&["be", "by"], &[]),
        PassiveToActive => (&[], &["be", "by"]),
        Extraposition => (&["it"], &[]),
        ReverseExtraposition => (&["that"], &["it"]),
        WhMovement => (&["do"], &[]),
        ReverseWhMovement => (&[], &["do"]),
        DativeAlternation => (&["to"], &[]),
        PrepDativeAlternation => (&[], &["to"]),
    }
}

struct Keyer {
    surface: HashMap<String, String>,
}

impl Keyer {
    fn new(s: &ParsedSentence) -> Self {
        let mut surface = HashMap::new();
        for t in &s.tokens {
            let lemma = t.lemma.to_lowercase();
            if t.fine_tag.starts_with("VB") || t.coarse_pos == "VERB" || t.coarse_pos == "AUX" {
                for form in morph::inflections(&lemma) {
                    surface.entry(form).or_insert_with(|| lemma.clone());
                }
            }
            let pieces: Vec<&str> = word_re().find_iter(&t.text).map(|m| m.as_str()).collect();
            if let [one] = pieces[..] {
                surface.insert(one.to_lowercase(), lemma);
            }
        }
        Keyer { surface }
    }

    fn key(&self, word: &str) -> String {
        let w = word.to_lowercase();
        if morph::is_be_form(&w) {
            return "be".into();
        }
        if morph::is_do_form(&w) {
            return "do".into();
        }
        if let Some(n) = morph::nominative(&w) {
            return n.to_lowercase();
        }
        match self.surface.get(&w) {
            Some(l) if morph::is_be_form(l) => "be".into(),
            Some(l) => l.clone(),
            None => w,
        }
    }

    fn bag(&self, text: &str) -> BTreeMap<String, i64> {
        let mut bag = BTreeMap::new();
        for m in word_re().find_iter(text) {
            *bag.entry(self.key(m.as_str())).or_insert(0) += 1;
        }
        bag
    }
}

fn normalized(s: &str) -> String {
    collapse_whitespace(&s.to_lowercase())
}

/// Contiguous runs of a (possibly gappy) subtree.
fn runs(mut idx: Vec<usize>) -> Vec<(usize, usize)> {
    idx.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for i in idx {
        match out.last_mut() {
            Some(r) if r.1 + 1 == i => r.1 = i,
            _ => out.push((i, i)),
        }
    }
    out
}

fn embedded_clause_reasons(original: &ParsedSentence, transformed: &str, kind: TransformationKind) -> Vec<Reason> {
    let moved = match kind {
        TransformationKind::ReverseExtraposition => original
            .child_with_label(original.root_index, "ccomp")
            .map(|t| t.index),
        _ => None,
    };
    let hay = normalized(transformed);
    let mut out = Vec::new();
    for t in &original.tokens {
        if !EMBEDDED.contains(&t.dep_label.as_str()) || Some(t.index) == moved {
            continue;
        }
        for (lo, hi) in runs(original.subtree(t.index)) {
            let needle = original.span_text(lo, hi);
            if !hay.contains(&normalized(&needle)) {
                out.push(reason(
                    "embedded_clause_changed",
                    format!("embedded {} clause {:?} is not preserved verbatim", t.dep_label, needle),
                ));
            }
        }
    }
    out
}

/// Checks that `transformed` keeps the content words of `original` (up to
/// the function words `kind` licenses) and every embedded clause verbatim.
pub fn validate_syntactic_output(original: &ParsedSentence, transformed: &str, kind: TransformationKind) -> Verdict {
    if transformed.trim().is_empty() {
        return Verdict::from_reasons(vec![reason("empty_output", "transformed sentence is empty")]);
    }
    let mut reasons = Vec::new();
    if normalized(transformed) == normalized(&original.text) {
        reasons.push(reason("unchanged", "transformed sentence equals the original"));
    }
    let keyer = Keyer::new(original);
    let before = keyer.bag(&original.text);
    let after = keyer.bag(transformed);
    let (may_add, may_remove) = licensed(kind);
    let keys: std::collections::BTreeSet<&String> = before.keys().chain(after.keys()).collect();
    for k in keys {
        let diff = after.get(k).copied().unwrap_or(0) - before.get(k).copied().unwrap_or(0);
        if diff < 0 && !may_remove.contains(&k.as_str()) {
            reasons.push(reason(
                "missing_content_word",
                format!("{:?} occurs {} fewer time(s)", k, -diff),
            ));
        } else if diff > 0 && !may_add.contains(&k.as_str()) {
            reasons.push(reason("added_word", format!("{:?} occurs {} more time(s)", k, diff)));
        }
    }
    reasons.extend(embedded_clause_reasons(original, transformed, kind));
    Verdict::from_reasons(reasons)
}
