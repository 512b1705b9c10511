use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{document_from_wire, ParseError, ParsedDocument, ParserBackend};
use crate::util;

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    parser_version: String,
    text: String,
    document: ParsedDocument,
}

/// Parse cache keyed by SHA-256 of `(parser version, text)`.
///
/// On disk each entry is `<dir>/<key[..2]>/<key>.json`, written by atomic
/// rename, so concurrent writers of the same key race harmlessly.
pub struct ParseCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, ParsedDocument>>,
}

impl ParseCache {
    pub fn in_memory() -> Self {
        ParseCache {
            dir: None,
            memory: Mutex::new(HashMap::new()),
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        ParseCache {
            dir: Some(dir.into()),
            memory: Mutex::new(HashMap::new()),
        }
    }

    pub fn key(parser_version: &str, text: &str) -> String {
        let mut buf = Vec::with_capacity(parser_version.len() + text.len() + 1);
        buf.extend_from_slice(parser_version.as_bytes());
        buf.push(0);
        buf.extend_from_slice(text.as_bytes());
        util::sha256_hex(&buf)
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(&key[..2]).join(format!("{key}.json")))
    }

    fn get(&self, key: &str) -> Option<ParsedDocument> {
        if let Some(doc) = self.memory.lock().unwrap_or_else(|e| e.into_inner()).get(key) {
            return Some(doc.clone());
        }
        let path = self.path(key)?;
        let bytes = fs::read(path).ok()?;
        let record: CacheRecord = serde_json::from_slice(&bytes).ok()?;
        // Entries that fail validation are treated as misses.
        record.document.validate().ok()?;
        self.memory
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key.to_string(), record.document.clone());
        Some(record.document)
    }

    fn put(&self, key: &str, version: &str, doc: &ParsedDocument) -> Result<(), ParseError> {
        if let Some(path) = self.path(key) {
            let record = CacheRecord {
                parser_version: version.to_string(),
                text: doc.text.clone(),
                document: doc.clone(),
            };
            let bytes = serde_json::to_vec(&record).map_err(std::io::Error::other)?;
            util::atomic_write(&path, &bytes)?;
        }
        self.memory
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key.to_string(), doc.clone());
        Ok(())
    }
}

/// Validated, cached access to a parser backend.
pub struct ParseGateway {
    backend: Box<dyn ParserBackend>,
    cache: ParseCache,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl ParseGateway {
    pub fn new(backend: Box<dyn ParserBackend>, cache: ParseCache) -> Self {
        ParseGateway {
            backend,
            cache,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn parser_version(&self) -> String {
        self.backend.parser_version()
    }

    pub fn parse_text(&self, text: &str) -> Result<ParsedDocument, ParseError> {
        if text.trim().is_empty() {
            return Err(ParseError::EmptyText);
        }
        let version = self.backend.parser_version();
        let key = ParseCache::key(&version, text);
        if let Some(doc) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(doc);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let wire = self.backend.parse_raw(text)?;
        let doc = document_from_wire(text, wire)?;
        self.cache.put(&key, &version, &doc)?;
        Ok(doc)
    }

    /// `(hits, misses)` since construction.
    pub fn cache_stats(&self) -> (usize, usize) {
        (
            self.hits.load(Ordering::Relaxed),
            self.misses.load(Ordering::Relaxed),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{FixtureParser, WireSentence};

    fn fixture() -> FixtureParser {
        FixtureParser::from_compact(
            "hand/1",
            "The|DT|det|2 dog|NN|nsubj|3 chased|VBD|ROOT|0|chase the|DT|det|5 cat|NN|dobj|3 .|.|punct|3\n\
             It|PRP|nsubj|2 rains|VBZ|ROOT|0|rain .|.|punct|2\n",
        )
        .unwrap()
    }

    #[test]
    fn parse_dog_sentence() {
        let gw = ParseGateway::new(Box::new(fixture()), ParseCache::in_memory());
        let doc = gw.parse_text("The dog chased the cat.").unwrap();
        assert_eq!(doc.sentences.len(), 1);
        let s = &doc.sentences[0].sentence;
        assert_eq!(s.root().text, "chased");
        assert_eq!(s.child_with_label(s.root_index, "nsubj").unwrap().text, "dog");
        assert_eq!(s.child_with_label(s.root_index, "dobj").unwrap().text, "cat");
    }

    #[test]
    fn empty_text_is_precondition_error() {
        let gw = ParseGateway::new(Box::new(fixture()), ParseCache::in_memory());
        assert!(matches!(gw.parse_text(""), Err(ParseError::EmptyText)));
        assert!(matches!(gw.parse_text("  "), Err(ParseError::EmptyText)));
    }

    #[test]
    fn two_sentences_tile_the_text() {
        let gw = ParseGateway::new(Box::new(fixture()), ParseCache::in_memory());
        let text = "It rains. The dog chased the cat.";
        let doc = gw.parse_text(text).unwrap();
        assert_eq!(doc.sentences.len(), 2);
        assert_eq!(doc.sentences[0].span, (0, 9));
        assert_eq!(doc.sentences[1].span, (10, 33));
    }

    #[test]
    fn warm_cache_matches_cold_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let gw = ParseGateway::new(Box::new(fixture()), ParseCache::on_disk(dir.path()));
        let cold = gw.parse_text("It rains.").unwrap();
        let warm = gw.parse_text("It rains.").unwrap();
        assert_eq!(cold, warm);
        assert_eq!(gw.cache_stats(), (1, 1));

        // A fresh gateway over an empty backend still answers from disk.
        let empty = FixtureParser::new("hand/1", Vec::new());
        let gw2 = ParseGateway::new(Box::new(empty), ParseCache::on_disk(dir.path()));
        assert_eq!(gw2.parse_text("It rains.").unwrap(), cold);
        // A different parser version misses.
        let other = FixtureParser::new("hand/2", Vec::new());
        let gw3 = ParseGateway::new(Box::new(other), ParseCache::on_disk(dir.path()));
        assert!(gw3.parse_text("It rains.").is_err());
    }

    struct Broken;
    impl ParserBackend for Broken {
        fn parser_version(&self) -> String {
            "broken".into()
        }
        fn parse_raw(&self, _text: &str) -> Result<Vec<WireSentence>, ParseError> {
            let mut wire = crate::parse::document_to_wire(
                &crate::parse::compact::parse_document(&["It|PRP|nsubj|2 rains|VBZ|ROOT|0|rain .|.|punct|2"])
                    .unwrap(),
            );
            wire[0].tokens[1].head_index = 1;
            Ok(wire)
        }
    }

    #[test]
    fn invalid_tree_is_protocol_error_naming_invariant() {
        let gw = ParseGateway::new(Box::new(Broken), ParseCache::in_memory());
        let err = gw.parse_text("It rains.").unwrap_err();
        assert!(matches!(err, ParseError::InvalidTree(_)), "{err}");
    }
}
