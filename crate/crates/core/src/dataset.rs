//! Benchmark ingestion.
//!
//! Three source formats are normalised into [`BenchmarkItem`]:
//!
//! * MMLU-style CSV: six columns, no header (`question, A, B, C, D, answer`).
//!   A path may name a single file or a directory of `<subject>_test.csv`
//!   files.
//! * SQuAD v1.1 JSON (`data → paragraphs → qas`).
//! * AMEGA case files, a JSON document of the form
//!
//!   ```json
//!   {"cases": [{"case_id": "1", "specialty": "cardiology",
//!               "description": "A 54-year-old ...",
//!               "questions": [{"question_id": "1.1", "question": "...",
//!                              "criteria": [{"criterion": "...", "weight": 2.0}]}]}]}
//!   ```
//!
//! Loaders are lenient: a malformed row or question becomes a [`LoadIssue`]
//! and is skipped, while an unreadable or empty dataset is a hard error.
//! The canonical on-disk form is one JSON item per line.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{self, char_slice};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset {0} contains no items")]
    Empty(PathBuf),
    #[error("malformed dataset {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("duplicate item id {0}")]
    DuplicateId(String),
    #[error("invalid item {id}: {message}")]
    InvalidItem { id: String, message: String },
    #[error("cannot sample {requested} items from {available}")]
    SubsetTooLarge { requested: usize, available: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    MultipleChoice,
    Extractive,
    FreeForm,
}

impl Benchmark {
    /// Short name used in file names and reports.
    pub fn short_name(self) -> &'static str {
        match self {
            Benchmark::MultipleChoice => "mmlu",
            Benchmark::Extractive => "squad",
            Benchmark::FreeForm => "amega",
        }
    }

    pub fn from_short_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "mmlu" | "multiple_choice" => Some(Benchmark::MultipleChoice),
            "squad" | "extractive" => Some(Benchmark::Extractive),
            "amega" | "free_form" => Some(Benchmark::FreeForm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipleChoicePayload {
    pub question: String,
    pub choices: Vec<Choice>,
    pub gold_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub text: String,
    /// Unicode scalar offset into the context.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractivePayload {
    pub context: String,
    pub question: String,
    pub gold_answers: Vec<GoldAnswer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub text: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeFormPayload {
    pub case_id: String,
    pub question: String,
    pub criteria: Vec<Criterion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    MultipleChoice(MultipleChoicePayload),
    Extractive(ExtractivePayload),
    FreeForm(FreeFormPayload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub benchmark: Benchmark,
    pub payload: Payload,
    #[serde(default)]
    pub source_meta: BTreeMap<String, String>,
}

/// A perturbable text field of an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextField {
    Question,
    Context,
    Choice(usize),
}

impl std::fmt::Display for TextField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TextField::Question => f.write_str("question"),
            TextField::Context => f.write_str("context"),
            TextField::Choice(i) => write!(f, "choice[{i}]"),
        }
    }
}

impl BenchmarkItem {
    /// Checks the per-variant invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        match (&self.payload, self.benchmark) {
            (Payload::MultipleChoice(p), Benchmark::MultipleChoice) => {
                if p.choices.len() < 2 {
                    return Err(format!("{} choices, need at least 2", p.choices.len()));
                }
                let mut seen = HashSet::new();
                for c in &p.choices {
                    let mut chars = c.label.chars();
                    let single_letter = matches!(
                        (chars.next(), chars.next()),
                        (Some(ch), None) if ch.is_ascii_uppercase()
                    );
                    if !single_letter {
                        return Err(format!("choice label {:?} is not a single letter", c.label));
                    }
                    if !seen.insert(c.label.as_str()) {
                        return Err(format!("duplicate choice label {}", c.label));
                    }
                }
                if !seen.contains(p.gold_label.as_str()) {
                    return Err(format!("gold label {} is not among the choices", p.gold_label));
                }
            }
            (Payload::Extractive(p), Benchmark::Extractive) => {
                if p.gold_answers.is_empty() {
                    return Err("no gold answers".into());
                }
                for a in &p.gold_answers {
                    let end = a.offset + util::char_len(&a.text);
                    if char_slice(&p.context, a.offset, end) != Some(a.text.as_str()) {
                        return Err(format!(
                            "gold answer {:?} not found at offset {}",
                            a.text, a.offset
                        ));
                    }
                }
            }
            (Payload::FreeForm(p), Benchmark::FreeForm) => {
                if p.criteria.is_empty() {
                    return Err("no criteria".into());
                }
                if let Some(c) = p.criteria.iter().find(|c| !(c.weight > 0.0)) {
                    return Err(format!("criterion {:?} has non-positive weight {}", c.text, c.weight));
                }
            }
            _ => return Err("payload variant does not match benchmark tag".into()),
        }
        Ok(())
    }

    /// Text fields in a fixed order.
    pub fn text_fields(&self) -> Vec<(TextField, &str)> {
        match &self.payload {
            Payload::MultipleChoice(p) => {
                let mut out = vec![(TextField::Question, p.question.as_str())];
                out.extend(
                    p.choices
                        .iter()
                        .enumerate()
                        .map(|(i, c)| (TextField::Choice(i), c.text.as_str())),
                );
                out
            }
            Payload::Extractive(p) => vec![
                (TextField::Context, p.context.as_str()),
                (TextField::Question, p.question.as_str()),
            ],
            Payload::FreeForm(p) => vec![(TextField::Question, p.question.as_str())],
        }
    }

    pub fn field(&self, field: TextField) -> Option<&str> {
        self.text_fields()
            .into_iter()
            .find(|(f, _)| *f == field)
            .map(|(_, t)| t)
    }

    /// Replaces a text field. Extractive gold offsets are not touched; callers
    /// that rewrite the context must re-anchor answers themselves.
    pub fn set_field(&mut self, field: TextField, text: String) -> bool {
        match (&mut self.payload, field) {
            (Payload::MultipleChoice(p), TextField::Question) => p.question = text,
            (Payload::MultipleChoice(p), TextField::Choice(i)) => match p.choices.get_mut(i) {
                Some(c) => c.text = text,
                None => return false,
            },
            (Payload::Extractive(p), TextField::Context) => p.context = text,
            (Payload::Extractive(p), TextField::Question) => p.question = text,
            (Payload::FreeForm(p), TextField::Question) => p.question = text,
            _ => return false,
        }
        true
    }

    pub fn gold_answer_texts(&self) -> Vec<&str> {
        match &self.payload {
            Payload::Extractive(p) => p.gold_answers.iter().map(|a| a.text.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

/// A row- or question-level problem found while loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadIssue {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub items: Vec<BenchmarkItem>,
    pub issues: Vec<LoadIssue>,
}

impl Loaded {
    pub fn errors(&self) -> impl Iterator<Item = &LoadIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    fn push_issue(&mut self, severity: Severity, location: String, message: impl Into<String>) {
        self.issues.push(LoadIssue {
            severity,
            location,
            message: message.into(),
        });
    }

    fn finish(self, path: &Path) -> Result<Loaded, DatasetError> {
        if self.items.is_empty() {
            return Err(DatasetError::Empty(path.to_path_buf()));
        }
        ensure_unique_ids(&self.items)?;
        Ok(self)
    }
}

fn ensure_unique_ids(items: &[BenchmarkItem]) -> Result<(), DatasetError> {
    let mut seen = HashSet::with_capacity(items.len());
    for item in items {
        if !seen.insert(item.id.as_str()) {
            return Err(DatasetError::DuplicateId(item.id.clone()));
        }
    }
    Ok(())
}

fn mmlu_subject(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    for suffix in ["_test", "_val", "_dev"] {
        if let Some(s) = stem.strip_suffix(suffix) {
            return s.to_string();
        }
    }
    stem
}

/// Loads MMLU-style CSV from a file or a directory of CSV files.
pub fn load_mmlu(path: &Path) -> Result<Loaded, DatasetError> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };

    let mut loaded = Loaded::default();
    for file in &files {
        let subject = mmlu_subject(file);
        let data = fs::read(file).map_err(io_err(file))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(data.as_slice());
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let location = format!("{}:{}", file.display(), row);
            let record = match record {
                Ok(r) => r,
                Err(e) => {
                    loaded.push_issue(Severity::Error, location, format!("unreadable row: {e}"));
                    continue;
                }
            };
            if record.len() != 6 {
                loaded.push_issue(
                    Severity::Error,
                    location,
                    format!("expected 6 columns, found {}", record.len()),
                );
                continue;
            }
            let labels = ["A", "B", "C", "D"];
            let choices = labels
                .iter()
                .enumerate()
                .map(|(k, l)| Choice {
                    label: l.to_string(),
                    text: record[k + 1].to_string(),
                })
                .collect();
            let item = BenchmarkItem {
                id: format!("{subject}-{row:05}"),
                benchmark: Benchmark::MultipleChoice,
                payload: Payload::MultipleChoice(MultipleChoicePayload {
                    question: record[0].to_string(),
                    choices,
                    gold_label: record[5].trim().to_string(),
                }),
                source_meta: BTreeMap::from([("subject".to_string(), subject.clone())]),
            };
            match item.validate() {
                Ok(()) => loaded.items.push(item),
                Err(msg) => loaded.push_issue(Severity::Error, location, msg),
            }
        }
    }
    loaded.finish(path)
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    #[serde(default)]
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

/// Loads SQuAD v1.1 JSON; one item per question with every gold answer kept.
pub fn load_squad(path: &Path) -> Result<Loaded, DatasetError> {
    let data = fs::read(path).map_err(io_err(path))?;
    let file: SquadFile = serde_json::from_slice(&data).map_err(|e| DatasetError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut loaded = Loaded::default();
    for article in file.data {
        for paragraph in article.paragraphs {
            for qa in paragraph.qas {
                let item = BenchmarkItem {
                    id: qa.id.clone(),
                    benchmark: Benchmark::Extractive,
                    payload: Payload::Extractive(ExtractivePayload {
                        context: paragraph.context.clone(),
                        question: qa.question,
                        gold_answers: qa
                            .answers
                            .into_iter()
                            .map(|a| GoldAnswer {
                                text: a.text,
                                offset: a.answer_start,
                            })
                            .collect(),
                    }),
                    source_meta: BTreeMap::from([("title".to_string(), article.title.clone())]),
                };
                match item.validate() {
                    Ok(()) => loaded.items.push(item),
                    Err(msg) => loaded.push_issue(Severity::Error, qa.id, msg),
                }
            }
        }
    }
    loaded.finish(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmegaFile {
    pub cases: Vec<AmegaCase>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmegaCase {
    pub case_id: String,
    #[serde(default)]
    pub specialty: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub questions: Vec<AmegaQuestion>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmegaQuestion {
    #[serde(default)]
    pub question_id: Option<String>,
    pub question: String,
    pub criteria: Vec<AmegaCriterion>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmegaCriterion {
    pub criterion: String,
    pub weight: f64,
}

/// Loads an AMEGA case file; one item per question, grouped by case id.
pub fn load_amega(path: &Path) -> Result<Loaded, DatasetError> {
    let data = fs::read(path).map_err(io_err(path))?;
    let file: AmegaFile = serde_json::from_slice(&data).map_err(|e| DatasetError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut loaded = Loaded::default();
    for case in file.cases {
        if case.questions.is_empty() {
            loaded.push_issue(
                Severity::Warning,
                format!("case {}", case.case_id),
                "case has no questions",
            );
            continue;
        }
        for (qi, q) in case.questions.into_iter().enumerate() {
            let qid = q
                .question_id
                .clone()
                .unwrap_or_else(|| format!("{}.{}", case.case_id, qi + 1));
            let mut meta = BTreeMap::from([("case_id".to_string(), case.case_id.clone())]);
            if let Some(s) = &case.specialty {
                meta.insert("specialty".into(), s.clone());
            }
            if let Some(d) = &case.description {
                meta.insert("case_description".into(), d.clone());
            }
            let item = BenchmarkItem {
                id: format!("amega-{qid}"),
                benchmark: Benchmark::FreeForm,
                payload: Payload::FreeForm(FreeFormPayload {
                    case_id: case.case_id.clone(),
                    question: q.question,
                    criteria: q
                        .criteria
                        .into_iter()
                        .map(|c| Criterion {
                            text: c.criterion,
                            weight: c.weight,
                        })
                        .collect(),
                }),
                source_meta: meta,
            };
            match item.validate() {
                Ok(()) => loaded.items.push(item),
                Err(msg) => loaded.push_issue(Severity::Error, format!("question {qid}"), msg),
            }
        }
    }
    loaded.finish(path)
}

/// Loads any supported source format for `benchmark`.
pub fn load(benchmark: Benchmark, path: &Path) -> Result<Loaded, DatasetError> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let items = read_items(path)?;
        return Ok(Loaded {
            items,
            issues: Vec::new(),
        });
    }
    match benchmark {
        Benchmark::MultipleChoice => load_mmlu(path),
        Benchmark::Extractive => load_squad(path),
        Benchmark::FreeForm => load_amega(path),
    }
}

/// Deterministic subset: seeded shuffle of positions, take `n`, restore input
/// order.
pub fn sample_subset(
    items: &[BenchmarkItem],
    n: usize,
    seed: u64,
) -> Result<Vec<BenchmarkItem>, DatasetError> {
    if n > items.len() {
        return Err(DatasetError::SubsetTooLarge {
            requested: n,
            available: items.len(),
        });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = order.into_iter().take(n).collect();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| items[i].clone()).collect())
}

pub fn write_items(path: &Path, items: &[BenchmarkItem]) -> Result<(), DatasetError> {
    util::write_jsonl(path, items).map_err(io_err(path))
}

/// Reads a canonical item file, validating every item and id uniqueness.
pub fn read_items(path: &Path) -> Result<Vec<BenchmarkItem>, DatasetError> {
    let items: Vec<BenchmarkItem> = util::read_jsonl(path).map_err(io_err(path))?;
    for item in &items {
        item.validate().map_err(|message| DatasetError::InvalidItem {
            id: item.id.clone(),
            message,
        })?;
    }
    ensure_unique_ids(&items)?;
    Ok(items)
}

/// Moves gold answers from `old_context` to `new_context`: an answer that was
/// the k-th occurrence of its text stays the k-th occurrence, falling back to
/// the first. `None` when some answer text no longer occurs.
pub fn reanchor_answers(old_context: &str, new_context: &str, answers: &[GoldAnswer]) -> Option<Vec<GoldAnswer>> {
    answers
        .iter()
        .map(|a| {
            let old_starts = occurrence_starts(old_context, &a.text);
            let k = old_starts.iter().position(|&s| s == a.offset).unwrap_or(0);
            let new_starts = occurrence_starts(new_context, &a.text);
            let offset = *new_starts.get(k).or_else(|| new_starts.first())?;
            Some(GoldAnswer {
                text: a.text.clone(),
                offset,
            })
        })
        .collect()
}

/// Scalar offsets of every (possibly overlapping) occurrence of `needle`.
fn occurrence_starts(hay: &str, needle: &str) -> Vec<usize> {
    if needle.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = hay[from..].find(needle) {
        let byte = from + pos;
        out.push(util::char_index(hay, byte));
        from = byte + hay[byte..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        p
    }

    #[test]
    fn mmlu_row_maps_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "arithmetic_test.csv", "2+2=?,3,4,5,6,B\n");
        let loaded = load_mmlu(&p).unwrap();
        assert_eq!(loaded.items.len(), 1);
        let item = &loaded.items[0];
        assert_eq!(item.source_meta["subject"], "arithmetic");
        match &item.payload {
            Payload::MultipleChoice(p) => {
                assert_eq!(p.gold_label, "B");
                assert_eq!(p.choices.len(), 4);
                assert_eq!(p.choices[1].text, "4");
            }
            other => panic!("unexpected payload {other:?}"),
        }
    }

    #[test]
    fn mmlu_bad_answer_letter_is_row_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "x_test.csv",
            "2+2=?,3,4,5,6,B\n\"Capital of France?\",Paris,Rome,Oslo,Bern,E\n",
        );
        let loaded = load_mmlu(&p).unwrap();
        assert_eq!(loaded.items.len(), 1);
        let errors: Vec<_> = loaded.errors().collect();
        assert_eq!(errors.len(), 1);
        assert!(errors[0].location.ends_with(":2"), "{:?}", errors[0]);
    }

    #[test]
    fn mmlu_empty_file_is_dataset_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "empty_test.csv", "");
        assert!(matches!(load_mmlu(&p), Err(DatasetError::Empty(_))));
    }

    #[test]
    fn mmlu_directory_collects_subjects() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a_test.csv", "q1,1,2,3,4,A\n");
        write(dir.path(), "b_test.csv", "q2,1,2,3,4,D\nq3,1,2,3,4,C\n");
        write(dir.path(), "notes.txt", "ignored");
        let loaded = load_mmlu(dir.path()).unwrap();
        let ids: Vec<_> = loaded.items.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["a-00001", "b-00001", "b-00002"]);
    }

    const SQUAD: &str = r#"{"data":[{"title":"Broncos","paragraphs":[{"context":"The champions, Denver Broncos, won.","qas":[
        {"id":"q1","question":"Who won?","answers":[{"text":"Denver","answer_start":15},{"text":"Denver Broncos","answer_start":15}]},
        {"id":"q2","question":"Who?","answers":[{"text":"Denver","answer_start":3}]}
    ]}]}]}"#;

    #[test]
    fn squad_offsets_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "dev.json", SQUAD);
        let loaded = load_squad(&p).unwrap();
        assert_eq!(loaded.items.len(), 1);
        assert_eq!(loaded.items[0].gold_answer_texts(), ["Denver", "Denver Broncos"]);
        let errors: Vec<_> = loaded.errors().collect();
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].location, "q2");
    }

    #[test]
    fn squad_offsets_count_scalar_values() {
        let ctx = "Zürich lies on Lake Zürich.";
        let item = BenchmarkItem {
            id: "u".into(),
            benchmark: Benchmark::Extractive,
            payload: Payload::Extractive(ExtractivePayload {
                context: ctx.into(),
                question: "Where?".into(),
                gold_answers: vec![GoldAnswer {
                    text: "Lake Zürich".into(),
                    offset: 15,
                }],
            }),
            source_meta: BTreeMap::new(),
        };
        assert!(item.validate().is_ok());
    }

    const AMEGA: &str = r#"{"cases":[
        {"case_id":"1","specialty":"cardiology","questions":[
            {"question":"What is the next step?","criteria":[{"criterion":"Orders ECG","weight":2},{"criterion":"Mentions troponin","weight":1.5}]},
            {"question":"Which drug?","criteria":[{"criterion":"Aspirin","weight":0}]}
        ]},
        {"case_id":"2","questions":[]}
    ]}"#;

    #[test]
    fn amega_weights_and_empty_cases() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "amega.json", AMEGA);
        let loaded = load_amega(&p).unwrap();
        assert_eq!(loaded.items.len(), 1);
        assert_eq!(loaded.items[0].id, "amega-1.1");
        let sev: Vec<_> = loaded.issues.iter().map(|i| i.severity).collect();
        assert_eq!(sev, [Severity::Error, Severity::Warning]);
    }

    fn mc(id: &str) -> BenchmarkItem {
        BenchmarkItem {
            id: id.into(),
            benchmark: Benchmark::MultipleChoice,
            payload: Payload::MultipleChoice(MultipleChoicePayload {
                question: format!("question {id}"),
                choices: vec![
                    Choice { label: "A".into(), text: "x".into() },
                    Choice { label: "B".into(), text: "y".into() },
                ],
                gold_label: "A".into(),
            }),
            source_meta: BTreeMap::new(),
        }
    }

    #[test]
    fn subset_is_deterministic_and_order_stable() {
        let items: Vec<_> = (0..100).map(|i| mc(&format!("i{i:03}"))).collect();
        let a = sample_subset(&items, 10, 7).unwrap();
        let b = sample_subset(&items, 10, 7).unwrap();
        assert_eq!(a, b);
        let ids: Vec<_> = a.iter().map(|i| i.id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
        assert_ne!(a, sample_subset(&items, 10, 8).unwrap());
        assert_eq!(sample_subset(&items, 100, 3).unwrap(), items);
        assert!(matches!(
            sample_subset(&items, 101, 3),
            Err(DatasetError::SubsetTooLarge { .. })
        ));
    }

    #[test]
    fn payload_mismatch_rejected() {
        let mut item = mc("x");
        item.benchmark = Benchmark::FreeForm;
        assert!(item.validate().is_err());
    }

    #[test]
    fn reanchor_keeps_occurrence_rank() {
        let old = "Denver beat Denver.";
        let answers = [GoldAnswer { text: "Denver".into(), offset: 12 }];
        let moved = reanchor_answers(old, "Big Denver beat Denver.", &answers).unwrap();
        assert_eq!(moved[0].offset, 16);
        assert!(reanchor_answers(old, "Nobody won.", &answers).is_none());
    }
}
