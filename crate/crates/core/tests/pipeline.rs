mod common;

use std::fs;

use common::{mini_config, snapshot, STUB_MODELS};
use lexsyn_core::analysis::{AnalysisError, Variant};
use lexsyn_core::dataset::{self, Benchmark, Payload};
use lexsyn_core::eval::ItemResult;
use lexsyn_core::lexical::LexicalPerturbationRecord;
use lexsyn_core::pipeline::{self, Pipeline, PipelineError, RunConfig, Stamped};

fn pipeline(dir: &std::path::Path, seed: u64) -> Pipeline {
    Pipeline::new(RunConfig::load(&mini_config(dir, seed, "")).unwrap()).unwrap()
}

#[test]
fn syntactic_summary_counts_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 5);
    let s = p.perturb(Benchmark::MultipleChoice, Variant::Syntactic).unwrap();
    assert_eq!(s.items, 50);
    assert!(s.items_changed > 25, "{s:?}");
    let applied: usize = s.per_kind.values().map(|k| k.applied).sum();
    let failed: usize = s.per_kind.values().map(|k| k.failed).sum();
    assert_eq!(applied + failed, s.records);
    assert_eq!(failed, s.fallbacks);
    assert!(s.per_kind.contains_key("active_to_passive"));
    assert_eq!(s.meta.config_hash, p.config_hash());

    let items = dataset::read_items(&p.dataset_path(Benchmark::MultipleChoice, Variant::Syntactic)).unwrap();
    let orig = dataset::read_items(&p.dataset_path(Benchmark::MultipleChoice, Variant::Original)).unwrap();
    for (o, q) in orig.iter().zip(&items) {
        assert_eq!(o.id, q.id);
        let (Payload::MultipleChoice(a), Payload::MultipleChoice(b)) = (&o.payload, &q.payload) else {
            panic!()
        };
        assert_eq!(a.gold_label, b.gold_label);
        assert_eq!(a.choices, b.choices);
        assert_eq!(q.source_meta["config_hash"], p.config_hash());
    }
}

#[test]
fn lexical_squad_keeps_every_gold_answer() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 9);
    let s = p.perturb(Benchmark::Extractive, Variant::Lexical).unwrap();
    assert_eq!(s.protected_violations, 0);
    assert!(s.items_changed > 0);
    let items = dataset::read_items(&p.dataset_path(Benchmark::Extractive, Variant::Lexical)).unwrap();
    for item in &items {
        let Payload::Extractive(x) = &item.payload else { panic!() };
        for g in &x.gold_answers {
            let at: String = x.context.chars().skip(g.offset).take(g.text.chars().count()).collect();
            assert_eq!(at, g.text, "{}", item.id);
        }
    }
    let recs: Vec<Stamped<LexicalPerturbationRecord>> =
        lexsyn_core_read(&p.records_path(Benchmark::Extractive, Variant::Lexical));
    assert!(recs.iter().all(|r| r.config_hash == p.config_hash()));
}

fn lexsyn_core_read<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Vec<T> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn run_resumes_without_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 1);
    p.perturb(Benchmark::MultipleChoice, Variant::Lexical).unwrap();
    let full = p.run("stub-x", Benchmark::MultipleChoice, Variant::Lexical).unwrap();
    let path = p.results_path("stub-x", Benchmark::MultipleChoice, Variant::Lexical);
    let complete = fs::read(&path).unwrap();

    // Cut the file after 17 items, as if the process had been killed.
    let text = String::from_utf8(complete.clone()).unwrap();
    let partial: String = text.lines().take(17).map(|l| format!("{l}\n")).collect();
    fs::write(&path, partial).unwrap();
    let resumed = p.run("stub-x", Benchmark::MultipleChoice, Variant::Lexical).unwrap();
    assert_eq!(fs::read(&path).unwrap(), complete);
    assert_eq!(resumed, full);
    let rows: Vec<Stamped<ItemResult>> = lexsyn_core_read(&path);
    let mut ids: Vec<&str> = rows.iter().map(|r| r.record.item_id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 50);
    assert_eq!(full.fingerprints, ["stub-v1"]);
    assert_eq!(full.n_failed, 0);
}

#[test]
fn free_form_run_is_judged() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 2);
    let s = p.run("stub-x", Benchmark::FreeForm, Variant::Original).unwrap();
    assert_eq!(s.n_items, 4);
    let a = s.aggregates.adherence.unwrap();
    assert!((0.0..=50.0).contains(&a));
}

#[test]
fn item_mismatch_names_the_missing_ids() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 3);
    p.perturb(Benchmark::MultipleChoice, Variant::Lexical).unwrap();
    for (m, _) in STUB_MODELS {
        p.run(m, Benchmark::MultipleChoice, Variant::Original).unwrap();
        p.run(m, Benchmark::MultipleChoice, Variant::Lexical).unwrap();
    }
    let path = p.results_path("stub-y", Benchmark::MultipleChoice, Variant::Lexical);
    let text = fs::read_to_string(&path).unwrap();
    let kept: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(&path, kept).unwrap();
    match p.analyze() {
        Err(PipelineError::Analysis(AnalysisError::ItemMismatch { model_id, missing, .. })) => {
            assert_eq!(model_id, "stub-y");
            assert_eq!(missing, ["mini-00001"]);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn analyze_without_runs_and_empty_report_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = pipeline(dir.path(), 4);
    assert!(matches!(p.analyze(), Err(PipelineError::Usage(_))));
    let mut a = pipeline::analyze_bundled(&Default::default()).unwrap();
    a.delta_table.rows.clear();
    assert!(matches!(pipeline::report(&a, dir.path()), Err(PipelineError::Usage(_))));
}

#[test]
fn different_seed_changes_hash_and_perturbation() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let p1 = pipeline(d1.path(), 1);
    let p2 = pipeline(d2.path(), 2);
    assert_ne!(p1.config_hash(), p2.config_hash());
    p1.perturb(Benchmark::MultipleChoice, Variant::Lexical).unwrap();
    p2.perturb(Benchmark::MultipleChoice, Variant::Lexical).unwrap();
    let a = snapshot(&d1.path().join("out/datasets"));
    let b = snapshot(&d2.path().join("out/datasets"));
    assert_ne!(a, b);
}
