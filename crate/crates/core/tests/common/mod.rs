#![allow(dead_code)]

use std::path::PathBuf;

use lexsyn_core::parse::compact::parse_sentence;
use lexsyn_core::parse::ParsedSentence;
use lexsyn_core::syntax::TransformationKind;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub struct TruthRow {
    pub expected: Vec<TransformationKind>,
    pub sentence: ParsedSentence,
}

pub fn truth_table() -> Vec<TruthRow> {
    read_fixture("syntax_truth.tsv")
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (kinds, parse) = l.split_once('\t').expect("tab-separated row");
            let mut expected: Vec<TransformationKind> = if kinds == "-" {
                Vec::new()
            } else {
                kinds
                    .split(',')
                    .map(|k| TransformationKind::from_name(k).unwrap_or_else(|| panic!("kind {k}")))
                    .collect()
            };
            expected.sort();
            TruthRow {
                expected,
                sentence: parse_sentence(parse).unwrap_or_else(|e| panic!("{parse}: {e}")),
            }
        })
        .collect()
}

pub struct RoundTrip {
    pub kind: TransformationKind,
    pub source: ParsedSentence,
    pub expected: String,
    pub output_parse: ParsedSentence,
}

pub fn round_trips() -> Vec<RoundTrip> {
    let text = read_fixture("syntax_roundtrip.txt");
    let mut out = Vec::new();
    for block in text.split("\n\n") {
        let field = |name: &str| {
            block
                .lines()
                .find_map(|l| l.strip_prefix(name))
                .map(str::trim)
        };
        let Some(kind) = field("kind:") else { continue };
        let src = field("src:").expect("src line");
        let parse = field("out_parse:").expect("out_parse line");
        let rt = RoundTrip {
            kind: TransformationKind::from_name(kind).unwrap_or_else(|| panic!("kind {kind}")),
            source: parse_sentence(src).unwrap_or_else(|e| panic!("{src}: {e}")),
            expected: field("out:").expect("out line").to_string(),
            output_parse: parse_sentence(parse).unwrap_or_else(|e| panic!("{parse}: {e}")),
        };
        assert_eq!(rt.output_parse.text, rt.expected, "out_parse text differs from out");
        out.push(rt);
    }
    out
}

/// Case- and whitespace-insensitive comparison form.
pub fn loose(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub const STUB_MODELS: [(&str, Option<f64>); 5] = [
    ("stub-letter-A", Some(70.0)),
    ("stub-letter-B", Some(8.0)),
    ("stub-letter-C", Some(1.0)),
    ("stub-x", Some(30.0)),
    ("stub-y", None),
];

/// A run config over the mini datasets with stub models, rooted in `dir`.
pub fn mini_config(dir: &std::path::Path, seed: u64, extra: &str) -> PathBuf {
    let mini = fixture_path("mini");
    let mut models = String::new();
    for (id, size) in STUB_MODELS.iter().map(|(i, s)| (*i, *s)).chain([("stub-judge", None), ("stub-embed", None)]) {
        models.push_str(&format!("\n[[models]]\nmodel_id = \"{id}\"\nendpoint = \"stub\"\nopen_weight = true\n"));
        if let Some(s) = size {
            models.push_str(&format!("parameter_count = {s}\n"));
        }
    }
    let ids: Vec<String> = STUB_MODELS.iter().map(|(m, _)| format!("{m:?}")).collect();
    let text = format!(
        r#"version = 1
output_dir = "out"
seed = {seed}
{extra}
[datasets.mmlu]
path = "{mmlu}"

[datasets.squad]
path = "{squad}"

[datasets.amega]
path = "{amega}"

[parser]
backend = "fixture"
fixture = "{parses}"
version = "hand/1"

[evaluation]
models = [{ids}]
judge_model = "stub-judge"
embedding_model = "stub-embed"

[analysis]
bootstrap_resamples = 2000
{models}"#,
        mmlu = mini.join("mini_test.csv").display(),
        squad = mini.join("mini_squad.json").display(),
        amega = mini.join("mini_amega.json").display(),
        parses = mini.join("mini_parses.txt").display(),
        ids = ids.join(", "),
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// Every file under `dir`, relative path to contents.
pub fn snapshot(dir: &std::path::Path) -> std::collections::BTreeMap<PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
