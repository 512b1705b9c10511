use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use super::{
    compact, document_to_wire, Handshake, ParseError, ParseRequest, ParseResponse,
    ParsedDocument, ParsedSentence, WireSentence,
};
use crate::util;

/// Source of raw parses. Responses are validated by the gateway, not here.
pub trait ParserBackend: Send + Sync {
    fn parser_version(&self) -> String;

    fn parse_raw(&self, text: &str) -> Result<Vec<WireSentence>, ParseError>;
}

struct StdioInner {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

/// Sidecar speaking JSON lines over a child process's stdio.
///
/// The first line the child writes is a `{"parser_version": ...}` handshake;
/// afterwards every request line is answered by exactly one response line,
/// in order.
pub struct StdioSidecar {
    version: String,
    inner: Mutex<StdioInner>,
}

impl StdioSidecar {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, ParseError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ParseError::Transport(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut line = String::new();
        let n = stdout
            .read_line(&mut line)
            .map_err(|e| ParseError::Transport(e.to_string()))?;
        if n == 0 {
            let _ = child.kill();
            return Err(ParseError::Transport(
                "sidecar exited before sending its handshake".into(),
            ));
        }
        let handshake: Handshake = serde_json::from_str(line.trim())
            .map_err(|e| ParseError::Protocol(format!("bad handshake {:?}: {e}", line.trim())))?;
        Ok(StdioSidecar {
            version: handshake.parser_version,
            inner: Mutex::new(StdioInner {
                child,
                stdin,
                stdout,
                next_id: 0,
            }),
        })
    }

    /// Writes all requests before reading any response.
    pub fn parse_pipelined(&self, texts: &[&str]) -> Result<Vec<ParseResponse>, ParseError> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let mut ids = Vec::with_capacity(texts.len());
        let mut batch = Vec::new();
        for text in texts {
            inner.next_id += 1;
            let req = ParseRequest {
                id: inner.next_id.to_string(),
                text: text.to_string(),
            };
            serde_json::to_writer(&mut batch, &req).map_err(|e| ParseError::Protocol(e.to_string()))?;
            batch.push(b'\n');
            ids.push(req.id);
        }
        inner
            .stdin
            .write_all(&batch)
            .and_then(|_| inner.stdin.flush())
            .map_err(|e| ParseError::Transport(format!("write to sidecar failed: {e}")))?;
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let mut line = String::new();
            let n = inner
                .stdout
                .read_line(&mut line)
                .map_err(|e| ParseError::Transport(e.to_string()))?;
            if n == 0 {
                return Err(ParseError::Transport("sidecar closed its output".into()));
            }
            let resp: ParseResponse = serde_json::from_str(line.trim())
                .map_err(|e| ParseError::Protocol(format!("bad response line: {e}")))?;
            if resp.id != id {
                return Err(ParseError::Protocol(format!(
                    "response id {} does not match request id {id}",
                    resp.id
                )));
            }
            out.push(resp);
        }
        Ok(out)
    }
}

fn unwrap_response(resp: ParseResponse) -> Result<Vec<WireSentence>, ParseError> {
    match (resp.sentences, resp.error) {
        (_, Some(err)) => Err(ParseError::Sidecar(err)),
        (Some(s), None) => Ok(s),
        (None, None) => Err(ParseError::Protocol("response has neither sentences nor error".into())),
    }
}

impl ParserBackend for StdioSidecar {
    fn parser_version(&self) -> String {
        self.version.clone()
    }

    fn parse_raw(&self, text: &str) -> Result<Vec<WireSentence>, ParseError> {
        let resp = self.parse_pipelined(&[text])?.pop().expect("one response");
        unwrap_response(resp)
    }
}

impl Drop for StdioSidecar {
    fn drop(&mut self) {
        if let Ok(inner) = self.inner.get_mut() {
            let _ = inner.child.kill();
            let _ = inner.child.wait();
        }
    }
}

/// Sidecar reached over HTTP (`POST {base}/parse`). There is no handshake in
/// this mode, so the parser version must be supplied by configuration.
pub struct HttpSidecar {
    base_url: String,
    version: String,
    client: reqwest::blocking::Client,
    next_id: Mutex<u64>,
}

impl HttpSidecar {
    pub fn new(base_url: &str, parser_version: &str, timeout: Duration) -> Result<Self, ParseError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ParseError::Transport(e.to_string()))?;
        Ok(HttpSidecar {
            base_url: base_url.trim_end_matches('/').to_string(),
            version: parser_version.to_string(),
            client,
            next_id: Mutex::new(0),
        })
    }
}

impl ParserBackend for HttpSidecar {
    fn parser_version(&self) -> String {
        self.version.clone()
    }

    fn parse_raw(&self, text: &str) -> Result<Vec<WireSentence>, ParseError> {
        let id = {
            let mut n = self.next_id.lock().unwrap_or_else(|e| e.into_inner());
            *n += 1;
            n.to_string()
        };
        let req = ParseRequest {
            id: id.clone(),
            text: text.to_string(),
        };
        let resp: ParseResponse = self
            .client
            .post(format!("{}/parse", self.base_url))
            .json(&req)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| ParseError::Transport(e.to_string()))?
            .json()
            .map_err(|e| ParseError::Protocol(e.to_string()))?;
        if resp.id != id {
            return Err(ParseError::Protocol(format!(
                "response id {} does not match request id {id}",
                resp.id
            )));
        }
        unwrap_response(resp)
    }
}

/// Serves hand-annotated parses. A text is answered when it is one fixture
/// sentence, or a whitespace-separated run of fixture sentences.
pub struct FixtureParser {
    version: String,
    sentences: HashMap<String, ParsedSentence>,
    /// Longest first, for greedy segmentation.
    keys_by_len: Vec<String>,
}

impl FixtureParser {
    pub fn new(version: &str, sentences: impl IntoIterator<Item = ParsedSentence>) -> Self {
        let sentences: HashMap<String, ParsedSentence> =
            sentences.into_iter().map(|s| (s.text.clone(), s)).collect();
        let mut keys_by_len: Vec<String> = sentences.keys().cloned().collect();
        keys_by_len.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        FixtureParser {
            version: version.to_string(),
            sentences,
            keys_by_len,
        }
    }

    /// Loads a compact-notation file (see [`compact`]).
    pub fn from_compact(version: &str, contents: &str) -> Result<Self, ParseError> {
        Ok(Self::new(version, compact::parse_fixture_file(contents)?))
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    fn segment(&self, text: &str) -> Option<ParsedDocument> {
        let mut sentences = Vec::new();
        let mut byte = 0;
        loop {
            let rest = &text[byte..];
            let skipped = rest.len() - rest.trim_start().len();
            byte += skipped;
            if byte == text.len() {
                break;
            }
            let rest = &text[byte..];
            let key = self.keys_by_len.iter().find(|k| rest.starts_with(k.as_str()))?;
            let start = util::char_index(text, byte);
            let end = start + util::char_len(key);
            sentences.push(super::DocSentence {
                span: (start, end),
                sentence: self.sentences[key].clone(),
            });
            byte += key.len();
        }
        Some(ParsedDocument {
            text: text.to_string(),
            sentences,
        })
    }
}

impl ParserBackend for FixtureParser {
    fn parser_version(&self) -> String {
        self.version.clone()
    }

    fn parse_raw(&self, text: &str) -> Result<Vec<WireSentence>, ParseError> {
        match self.segment(text) {
            Some(doc) if !doc.sentences.is_empty() => Ok(document_to_wire(&doc)),
            _ => Err(ParseError::Unavailable(text.to_string())),
        }
    }
}
