//! Compact one-line notation for hand-written parses.
//!
//! Each token is `text|TAG|dep|head` with an optional fifth `|lemma` field.
//! `TAG` may carry an explicit coarse tag as `TAG/POS` (e.g. `VBZ/AUX`);
//! otherwise the coarse tag is derived from the Penn tag. Tokens are joined
//! with single spaces, except that closing punctuation and clitics attach to
//! the previous token; a leading `~` forces attachment. Lines starting with
//! `#` are comments.

use super::{DocSentence, ParseError, ParsedDocument, ParsedSentence, Token};

/// Default Penn → coarse mapping (spaCy's English tag map).
pub fn coarse_for_tag(tag: &str, dep: &str) -> &'static str {
    if dep == "aux" || dep == "auxpass" {
        return "AUX";
    }
    match tag {
        "NN" | "NNS" => "NOUN",
        "NNP" | "NNPS" => "PROPN",
        "PRP" | "PRP$" | "WP" | "WP$" | "EX" => "PRON",
        "DT" | "PDT" | "WDT" => "DET",
        "IN" | "RP" => "ADP",
        "TO" | "POS" => "PART",
        "MD" => "AUX",
        t if t.starts_with("VB") => "VERB",
        t if t.starts_with("JJ") => "ADJ",
        t if t.starts_with("RB") || t == "WRB" => "ADV",
        "CD" => "NUM",
        "CC" => "CCONJ",
        "UH" => "INTJ",
        "." | "," | ":" | "``" | "''" | "-LRB-" | "-RRB-" | "HYPH" | "NFP" => "PUNCT",
        "$" | "SYM" => "SYM",
        _ => "X",
    }
}

fn default_lemma(text: &str, tag: &str) -> String {
    let lower = text.to_lowercase();
    if tag == "PRP" {
        let nominative = match lower.as_str() {
            "me" => "I",
            "him" => "he",
            "her" => "she",
            "us" => "we",
            "them" => "they",
            "i" => "I",
            _ => return lower,
        };
        return nominative.to_string();
    }
    lower
}

fn attaches_left(text: &str) -> bool {
    matches!(text, "." | "," | "?" | "!" | ";" | ":" | ")" | "%" | "'s" | "'" | "n't" | "'re" | "'ve" | "'ll" | "'d" | "'m")
}

fn bad(line: &str, msg: impl Into<String>) -> ParseError {
    ParseError::Protocol(format!("{}: {:?}", msg.into(), line))
}

/// Parses one sentence line and validates it.
pub fn parse_sentence(line: &str) -> Result<ParsedSentence, ParseError> {
    let mut text = String::new();
    let mut tokens = Vec::new();
    let mut prev_open = true;
    for (pos, field) in line.split_whitespace().enumerate() {
        let (forced, field) = match field.strip_prefix('~') {
            Some(rest) => (true, rest),
            None => (false, field),
        };
        let parts: Vec<&str> = field.split('|').collect();
        if !(4..=5).contains(&parts.len()) {
            return Err(bad(line, format!("token {} needs 4 or 5 fields", pos + 1)));
        }
        let tok_text = parts[0];
        let (tag, coarse) = match parts[1].split_once('/') {
            Some((t, c)) if !t.is_empty() => (t, Some(c)),
            _ => (parts[1], None),
        };
        let dep = parts[2];
        let head: usize = parts[3]
            .parse()
            .map_err(|_| bad(line, format!("token {} head is not a number", pos + 1)))?;
        let lemma = parts
            .get(4)
            .map(|s| s.to_string())
            .unwrap_or_else(|| default_lemma(tok_text, tag));

        if !text.is_empty() && !(forced || prev_open || attaches_left(tok_text)) {
            text.push(' ');
        }
        let start = text.chars().count();
        text.push_str(tok_text);
        let end = text.chars().count();
        prev_open = matches!(tok_text, "(" | "``" | "$");
        tokens.push(Token {
            index: pos + 1,
            text: tok_text.to_string(),
            lemma,
            coarse_pos: coarse.unwrap_or_else(|| coarse_for_tag(tag, dep)).to_string(),
            fine_tag: tag.to_string(),
            dep_label: if head == 0 { "ROOT".to_string() } else { dep.to_string() },
            head_index: head,
            char_span: (start, end),
        });
    }
    let root_index = tokens
        .iter()
        .find(|t| t.head_index == 0)
        .map(|t| t.index)
        .unwrap_or(0);
    let sentence = ParsedSentence {
        text,
        tokens,
        root_index,
    };
    sentence.validate()?;
    Ok(sentence)
}

/// Joins sentence lines into one document separated by single spaces.
pub fn parse_document(lines: &[&str]) -> Result<ParsedDocument, ParseError> {
    let mut text = String::new();
    let mut sentences = Vec::new();
    for line in lines {
        let sentence = parse_sentence(line)?;
        if !text.is_empty() {
            text.push(' ');
        }
        let start = text.chars().count();
        text.push_str(&sentence.text);
        let end = text.chars().count();
        sentences.push(DocSentence {
            span: (start, end),
            sentence,
        });
    }
    let doc = ParsedDocument { text, sentences };
    doc.validate()?;
    Ok(doc)
}

/// All non-comment, non-blank sentence lines in a fixture file.
pub fn parse_fixture_file(contents: &str) -> Result<Vec<ParsedSentence>, ParseError> {
    contents
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(parse_sentence)
        .collect()
}
