//! Verb inflection, pronoun case and subject agreement.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::parse::ParsedSentence;

const IRREGULAR: &str = include_str!("../../data/irregular_verbs.tsv");

struct Irregular {
    forms: HashMap<String, (String, String)>,
}

fn irregular() -> &'static Irregular {
    static T: OnceLock<Irregular> = OnceLock::new();
    T.get_or_init(|| {
        let mut forms = HashMap::new();
        for line in IRREGULAR.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if let [base, past, part] = cols[..] {
                forms
                    .entry(base.to_string())
                    .or_insert_with(|| (past.to_string(), part.to_string()));
            }
        }
        Irregular { forms }
    })
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// Short consonant-vowel-consonant stems double their final consonant.
fn doubles_final(lemma: &str) -> bool {
    let cs: Vec<char> = lemma.chars().collect();
    let n = cs.len();
    if n < 3 {
        return false;
    }
    let (a, b, c) = (cs[n - 3], cs[n - 2], cs[n - 1]);
    let vowel_groups = cs
        .iter()
        .enumerate()
        .filter(|(i, ch)| is_vowel(**ch) && (*i == 0 || !is_vowel(cs[i - 1])))
        .count();
    vowel_groups == 1 && !is_vowel(a) && is_vowel(b) && !is_vowel(c) && !matches!(c, 'w' | 'x' | 'y')
}

fn regular_ed(lemma: &str) -> String {
    if lemma.ends_with('e') {
        return format!("{lemma}d");
    }
    if let Some(stem) = lemma.strip_suffix('y') {
        if !stem.ends_with(is_vowel) {
            return format!("{stem}ied");
        }
    }
    if doubles_final(lemma) {
        let last = lemma.chars().last().unwrap_or_default();
        return format!("{lemma}{last}ed");
    }
    format!("{lemma}ed")
}

pub fn past(lemma: &str) -> String {
    irregular()
        .forms
        .get(lemma)
        .map(|f| f.0.clone())
        .unwrap_or_else(|| regular_ed(lemma))
}

pub fn participle(lemma: &str) -> String {
    irregular()
        .forms
        .get(lemma)
        .map(|f| f.1.clone())
        .unwrap_or_else(|| regular_ed(lemma))
}

pub fn third_singular(lemma: &str) -> String {
    match lemma {
        "be" => return "is".into(),
        "have" => return "has".into(),
        _ => {}
    }
    if let Some(stem) = lemma.strip_suffix('y') {
        if !stem.ends_with(is_vowel) {
            return format!("{stem}ies");
        }
    }
    if ["s", "x", "z", "ch", "sh", "o"].iter().any(|s| lemma.ends_with(s)) {
        return format!("{lemma}es");
    }
    format!("{lemma}s")
}

pub fn gerund(lemma: &str) -> String {
    if let Some(stem) = lemma.strip_suffix("ie") {
        return format!("{stem}ying");
    }
    if lemma.ends_with('e') && !lemma.ends_with("ee") && lemma.len() > 2 {
        return format!("{}ing", &lemma[..lemma.len() - 1]);
    }
    if doubles_final(lemma) {
        let last = lemma.chars().last().unwrap_or_default();
        return format!("{lemma}{last}ing");
    }
    format!("{lemma}ing")
}

/// Every surface form of a verb lemma.
pub fn inflections(lemma: &str) -> Vec<String> {
    let mut v = vec![
        lemma.to_string(),
        third_singular(lemma),
        past(lemma),
        participle(lemma),
        gerund(lemma),
        regular_ed(lemma),
    ];
    v.sort();
    v.dedup();
    v
}

pub fn is_be_form(w: &str) -> bool {
    matches!(w, "be" | "am" | "is" | "are" | "was" | "were" | "been" | "being" | "'s" | "'re" | "'m")
}

pub fn is_do_form(w: &str) -> bool {
    matches!(w, "do" | "does" | "did" | "doing" | "done")
}

/// Nominative form of a lowercase personal pronoun, if it is one.
pub fn nominative(w: &str) -> Option<&'static str> {
    Some(match w {
        "i" | "me" => "I",
        "he" | "him" => "he",
        "she" | "her" => "she",
        "we" | "us" => "we",
        "they" | "them" => "they",
        "who" | "whom" => "who",
        "you" => "you",
        "it" => "it",
        _ => return None,
    })
}

pub fn objective(w: &str) -> Option<&'static str> {
    Some(match w {
        "i" | "me" => "me",
        "he" | "him" => "him",
        "she" | "her" => "her",
        "we" | "us" => "us",
        "they" | "them" => "them",
        "you" => "you",
        "it" => "it",
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agreement {
    FirstSingular,
    ThirdSingular,
    Plural,
}

/// Person and number of the noun phrase headed by `head`.
pub fn agreement(s: &ParsedSentence, head: usize) -> Agreement {
    let t = s.token(head);
    if s.children(head).any(|c| c.dep_label == "conj") {
        return Agreement::Plural;
    }
    match t.lower().as_str() {
        "i" | "me" => return Agreement::FirstSingular,
        "we" | "us" | "they" | "them" | "you" | "these" | "those" => return Agreement::Plural,
        _ => {}
    }
    if matches!(t.fine_tag.as_str(), "NNS" | "NNPS") {
        Agreement::Plural
    } else {
        Agreement::ThirdSingular
    }
}

pub fn be_form(past_tense: bool, agr: Agreement) -> &'static str {
    match (past_tense, agr) {
        (true, Agreement::Plural) => "were",
        (true, _) => "was",
        (false, Agreement::FirstSingular) => "am",
        (false, Agreement::ThirdSingular) => "is",
        (false, Agreement::Plural) => "are",
    }
}

pub fn present(lemma: &str, agr: Agreement) -> String {
    match (lemma, agr) {
        ("be", a) => be_form(false, a).to_string(),
        (_, Agreement::ThirdSingular) => third_singular(lemma),
        _ => lemma.to_string(),
    }
}
