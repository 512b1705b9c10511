//! Dependency parses: types, tree validation, subtree utilities, and the
//! gateway that fetches parses from a parser sidecar and caches them.
//!
//! Labels follow the ClearNLP-style scheme emitted by spaCy's English models
//! (`nsubj`, `dobj`, `nsubjpass`, `auxpass`, `agent`, `csubj`, `ccomp`,
//! `dative`, `expl`, `aux`, ...), with `ROOT` on the head token.

mod backend;
pub mod compact;
mod gateway;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util;

pub use backend::{FixtureParser, HttpSidecar, ParserBackend, StdioSidecar};
pub use gateway::{ParseCache, ParseGateway};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("cannot parse empty text")]
    EmptyText,
    #[error("parser transport error: {0}")]
    Transport(String),
    #[error("parser protocol error: {0}")]
    Protocol(String),
    #[error("invalid parse tree: {0}")]
    InvalidTree(#[from] TreeViolation),
    #[error("sidecar reported an error: {0}")]
    Sidecar(String),
    #[error("no parse available for {0:?}")]
    Unavailable(String),
    #[error("parse cache error: {0}")]
    Cache(#[from] std::io::Error),
}

/// A broken parse invariant, named so protocol errors say what was wrong.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum TreeViolation {
    #[error("sentence has no tokens")]
    NoTokens,
    #[error("token at position {position} has index {index}")]
    IndexMismatch { position: usize, index: usize },
    #[error("expected exactly one root, found {count}")]
    RootCount { count: usize },
    #[error("root_index {declared} does not name the root token {actual}")]
    RootIndexMismatch { declared: usize, actual: usize },
    #[error("token {token} has head {head} outside 0..={len}")]
    HeadOutOfRange { token: usize, head: usize, len: usize },
    #[error("head links of token {token} form a cycle")]
    Cycle { token: usize },
    #[error("char span of token {token} overlaps or precedes the previous token")]
    SpanOrder { token: usize },
    #[error("char span of token {token} does not match its text")]
    SpanText { token: usize },
    #[error("non-whitespace text before token {token} is not covered by any token")]
    Gap { token: usize },
    #[error("sentence {sentence} span does not tile the document text")]
    SentenceSpan { sentence: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// 1-based position.
    pub index: usize,
    pub text: String,
    pub lemma: String,
    pub coarse_pos: String,
    pub fine_tag: String,
    pub dep_label: String,
    /// 0 for the root, else the 1-based index of the head.
    pub head_index: usize,
    /// `[start, end)` scalar offsets into the sentence text.
    pub char_span: (usize, usize),
}

impl Token {
    pub fn lower(&self) -> String {
        self.text.to_lowercase()
    }

    pub fn is_punct(&self) -> bool {
        self.coarse_pos == "PUNCT" || self.dep_label == "punct"
    }
}

/// Yield of a head's subtree as an inclusive token index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtreeSpan {
    pub lo: usize,
    pub hi: usize,
    /// False when the yield has gaps (non-projective constituent).
    pub contiguous: bool,
}

impl SubtreeSpan {
    pub fn contains(&self, index: usize) -> bool {
        (self.lo..=self.hi).contains(&index)
    }

    pub fn len(&self) -> usize {
        self.hi + 1 - self.lo
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSentence {
    pub text: String,
    pub tokens: Vec<Token>,
    pub root_index: usize,
}

impl ParsedSentence {
    /// Checks the single-root, acyclicity and span-tiling invariants.
    pub fn validate(&self) -> Result<(), TreeViolation> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(TreeViolation::NoTokens);
        }
        for (pos, tok) in self.tokens.iter().enumerate() {
            if tok.index != pos + 1 {
                return Err(TreeViolation::IndexMismatch {
                    position: pos + 1,
                    index: tok.index,
                });
            }
            if tok.head_index > n {
                return Err(TreeViolation::HeadOutOfRange {
                    token: tok.index,
                    head: tok.head_index,
                    len: n,
                });
            }
        }
        let roots: Vec<usize> = self
            .tokens
            .iter()
            .filter(|t| t.head_index == 0)
            .map(|t| t.index)
            .collect();
        if roots.len() != 1 {
            return Err(TreeViolation::RootCount { count: roots.len() });
        }
        if self.root_index != roots[0] {
            return Err(TreeViolation::RootIndexMismatch {
                declared: self.root_index,
                actual: roots[0],
            });
        }
        for tok in &self.tokens {
            // A path longer than n steps must revisit a node.
            let mut cur = tok.index;
            let mut steps = 0;
            while cur != 0 {
                cur = self.tokens[cur - 1].head_index;
                steps += 1;
                if steps > n {
                    return Err(TreeViolation::Cycle { token: tok.index });
                }
            }
        }
        let mut prev_end = 0;
        for tok in &self.tokens {
            let (start, end) = tok.char_span;
            if start < prev_end || end < start {
                return Err(TreeViolation::SpanOrder { token: tok.index });
            }
            if util::char_slice(&self.text, start, end) != Some(tok.text.as_str()) {
                return Err(TreeViolation::SpanText { token: tok.index });
            }
            let gap = util::char_slice(&self.text, prev_end, start).unwrap_or("");
            if !gap.chars().all(char::is_whitespace) {
                return Err(TreeViolation::Gap { token: tok.index });
            }
            prev_end = end;
        }
        let tail = util::char_slice(&self.text, prev_end, util::char_len(&self.text)).unwrap_or("");
        if !tail.chars().all(char::is_whitespace) {
            return Err(TreeViolation::Gap { token: n });
        }
        Ok(())
    }

    /// Token by 1-based index.
    pub fn token(&self, index: usize) -> &Token {
        &self.tokens[index - 1]
    }

    pub fn root(&self) -> &Token {
        self.token(self.root_index)
    }

    pub fn children(&self, head: usize) -> impl Iterator<Item = &Token> + '_ {
        self.tokens.iter().filter(move |t| t.head_index == head)
    }

    pub fn child_with_label(&self, head: usize, label: &str) -> Option<&Token> {
        self.children(head).find(|t| t.dep_label == label)
    }

    /// `index` and all its transitive dependents, ascending.
    pub fn subtree(&self, index: usize) -> Vec<usize> {
        let mut out = vec![index];
        let mut stack = vec![index];
        while let Some(h) = stack.pop() {
            for c in self.children(h) {
                out.push(c.index);
                stack.push(c.index);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn subtree_span(&self, head_index: usize) -> SubtreeSpan {
        let members = self.subtree(head_index);
        let lo = members[0];
        let hi = *members.last().unwrap();
        SubtreeSpan {
            lo,
            hi,
            contiguous: members.len() == hi - lo + 1,
        }
    }

    /// True if `ancestor` dominates `index` (reflexive).
    pub fn dominates(&self, ancestor: usize, index: usize) -> bool {
        let mut cur = index;
        while cur != 0 {
            if cur == ancestor {
                return true;
            }
            cur = self.token(cur).head_index;
        }
        false
    }

    /// Heads on the path from `index` (exclusive) up to the root.
    pub fn ancestors(&self, index: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.token(index).head_index;
        while cur != 0 {
            out.push(cur);
            cur = self.token(cur).head_index;
        }
        out
    }

    /// Surface text of tokens `lo..=hi`, with the sentence's own spacing.
    pub fn span_text(&self, lo: usize, hi: usize) -> String {
        let start = self.token(lo).char_span.0;
        let end = self.token(hi).char_span.1;
        util::char_slice(&self.text, start, end)
            .unwrap_or_default()
            .to_string()
    }

    /// Whether whitespace separates token `index` from its predecessor.
    pub fn space_before(&self, index: usize) -> bool {
        if index <= 1 {
            return false;
        }
        self.token(index - 1).char_span.1 < self.token(index).char_span.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSentence {
    /// `[start, end)` scalar offsets into the document text.
    pub span: (usize, usize),
    pub sentence: ParsedSentence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDocument {
    pub text: String,
    pub sentences: Vec<DocSentence>,
}

impl ParsedDocument {
    pub fn validate(&self) -> Result<(), TreeViolation> {
        let mut prev_end = 0;
        for (i, s) in self.sentences.iter().enumerate() {
            let (start, end) = s.span;
            let gap = util::char_slice(&self.text, prev_end, start);
            let body = util::char_slice(&self.text, start, end);
            let ok = start >= prev_end
                && gap.is_some_and(|g| g.chars().all(char::is_whitespace))
                && body == Some(s.sentence.text.as_str());
            if !ok {
                return Err(TreeViolation::SentenceSpan { sentence: i });
            }
            s.sentence.validate()?;
            prev_end = end;
        }
        let tail = util::char_slice(&self.text, prev_end, util::char_len(&self.text));
        if !tail.is_some_and(|t| t.chars().all(char::is_whitespace)) {
            return Err(TreeViolation::SentenceSpan {
                sentence: self.sentences.len(),
            });
        }
        Ok(())
    }
}

/// Sentence as exchanged with the sidecar: token spans index the request text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireSentence {
    pub start: usize,
    pub end: usize,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseRequest {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentences: Option<Vec<WireSentence>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub parser_version: String,
}

/// Converts wire sentences to a document, re-basing token spans onto each
/// sentence and checking every invariant.
pub fn document_from_wire(text: &str, wire: Vec<WireSentence>) -> Result<ParsedDocument, ParseError> {
    let mut sentences = Vec::with_capacity(wire.len());
    for (i, ws) in wire.into_iter().enumerate() {
        let body = util::char_slice(text, ws.start, ws.end)
            .ok_or(TreeViolation::SentenceSpan { sentence: i })?
            .to_string();
        let mut tokens = ws.tokens;
        for t in &mut tokens {
            if t.char_span.0 < ws.start || t.char_span.1 > ws.end {
                return Err(TreeViolation::SpanText { token: t.index }.into());
            }
            t.char_span = (t.char_span.0 - ws.start, t.char_span.1 - ws.start);
        }
        let roots: Vec<usize> = tokens
            .iter()
            .filter(|t| t.head_index == 0)
            .map(|t| t.index)
            .collect();
        if roots.len() != 1 {
            return Err(TreeViolation::RootCount { count: roots.len() }.into());
        }
        sentences.push(DocSentence {
            span: (ws.start, ws.end),
            sentence: ParsedSentence {
                text: body,
                tokens,
                root_index: roots[0],
            },
        });
    }
    let doc = ParsedDocument {
        text: text.to_string(),
        sentences,
    };
    doc.validate()?;
    Ok(doc)
}

/// Inverse of [`document_from_wire`].
pub fn document_to_wire(doc: &ParsedDocument) -> Vec<WireSentence> {
    doc.sentences
        .iter()
        .map(|s| WireSentence {
            start: s.span.0,
            end: s.span.1,
            tokens: s
                .sentence
                .tokens
                .iter()
                .map(|t| Token {
                    char_span: (t.char_span.0 + s.span.0, t.char_span.1 + s.span.0),
                    ..t.clone()
                })
                .collect(),
        })
        .collect()
}
