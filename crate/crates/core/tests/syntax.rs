mod common;

use std::collections::BTreeMap;

use common::{loose, round_trips, truth_table};
use lexsyn_core::dataset::{Benchmark, BenchmarkItem, Choice, ExtractivePayload, GoldAnswer, MultipleChoicePayload, Payload};
use lexsyn_core::llm::LlmGateway;
use lexsyn_core::parse::compact::parse_sentence;
use lexsyn_core::parse::{FixtureParser, ParseCache, ParseGateway};
use lexsyn_core::syntax::{
    detect_applicable, perturb_item_syntactic, realize_rule_based, select_transformation,
    validate_syntactic_output, RealizationMode, SyntacticMode, SyntaxError, TransformationKind,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn truth_table_matches_conditions() {
    let rows = truth_table();
    assert!(rows.len() >= 16);
    let mut positives: BTreeMap<TransformationKind, usize> = BTreeMap::new();
    let mut negatives: BTreeMap<TransformationKind, usize> = BTreeMap::new();
    for row in &rows {
        let report = detect_applicable(&row.sentence);
        assert_eq!(report.applicable_kinds(), row.expected, "{:?}: {:#?}", row.sentence.text, report);
        for k in TransformationKind::ALL {
            let r = report.get(k);
            if r.applicable {
                *positives.entry(k).or_default() += 1;
                assert!(r.constituents.as_ref().unwrap().missing_for(k).is_empty());
            } else {
                *negatives.entry(k).or_default() += 1;
                assert!(!r.reason.is_empty());
            }
        }
    }
    for k in TransformationKind::ALL {
        assert!(positives.get(&k).copied().unwrap_or(0) >= 1, "no positive for {k}");
        assert!(negatives.get(&k).copied().unwrap_or(0) >= 1, "no negative for {k}");
    }
}

#[test]
fn spec_examples() {
    let s = parse_sentence("It|PRP|nsubj|2 has|VBZ|ROOT|0|have a|DT|det|4 problem|NN|dobj|2 .|.|punct|2").unwrap();
    let r = detect_applicable(&s);
    let reason = &r.get(TransformationKind::ActiveToPassive).reason;
    assert!(reason.contains("\"it\"") && reason.contains("\"have\""), "{reason}");

    // Auxiliary "have" does not block passivization.
    let s = parse_sentence("They|PRP|nsubj|3 have|VBP|aux|3|have finished|VBN|ROOT|0|finish the|DT|det|5 report|NN|dobj|3 .|.|punct|3").unwrap();
    assert!(detect_applicable(&s).is_applicable(TransformationKind::ActiveToPassive));
}

#[test]
fn realizations_and_round_trips() {
    let cases = round_trips();
    assert!(cases.len() >= 20);
    for rt in &cases {
        let report = detect_applicable(&rt.source);
        let c = report
            .get(rt.kind)
            .constituents
            .clone()
            .unwrap_or_else(|| panic!("{} not applicable to {:?}", rt.kind, rt.source.text));
        let out = realize_rule_based(&rt.source, rt.kind, &c).unwrap();
        assert_eq!(out, rt.expected, "{} on {:?}", rt.kind, rt.source.text);
        let v = validate_syntactic_output(&rt.source, &out, rt.kind);
        assert!(v.passed, "{out:?}: {}", v.summary());

        let inverse = rt.kind.inverse();
        let back_report = detect_applicable(&rt.output_parse);
        let bc = back_report
            .get(inverse)
            .constituents
            .clone()
            .unwrap_or_else(|| panic!("{inverse} not applicable to {:?}", rt.output_parse.text));
        let back = realize_rule_based(&rt.output_parse, inverse, &bc).unwrap();
        assert_eq!(loose(&back), loose(&rt.source.text), "{inverse} on {:?}", rt.expected);
        let v = validate_syntactic_output(&rt.output_parse, &back, inverse);
        assert!(v.passed, "{back:?}: {}", v.summary());
    }
}

#[test]
fn every_rules_output_on_the_truth_table_validates() {
    for row in truth_table() {
        let report = detect_applicable(&row.sentence);
        for k in report.applicable_kinds() {
            let c = report.get(k).constituents.clone().unwrap();
            match realize_rule_based(&row.sentence, k, &c) {
                Ok(out) => {
                    let v = validate_syntactic_output(&row.sentence, &out, k);
                    assert!(v.passed, "{k} {:?} -> {out:?}: {}", row.sentence.text, v.summary());
                }
                Err(SyntaxError::UnsupportedRealization(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }
}

#[test]
fn unsupported_tense_is_reported() {
    let s = parse_sentence(
        "The|DT|det|2 dog|NN|nsubj|4 has|VBZ|aux|4|have chased|VBN|ROOT|0|chase the|DT|det|6 cat|NN|dobj|4 .|.|punct|4",
    )
    .unwrap();
    let r = detect_applicable(&s);
    let c = r.get(TransformationKind::ActiveToPassive).constituents.clone().unwrap();
    assert!(matches!(
        realize_rule_based(&s, TransformationKind::ActiveToPassive, &c),
        Err(SyntaxError::UnsupportedRealization(_))
    ));
}

#[test]
fn validator_rejects_dropped_words_and_changed_clauses() {
    let s = parse_sentence("The|DT|det|2 dog|NN|nsubj|3 chased|VBD|ROOT|0|chase the|DT|det|5 cat|NN|dobj|3 .|.|punct|3").unwrap();
    let v = validate_syntactic_output(&s, "The cat was chased by the dog.", TransformationKind::ActiveToPassive);
    assert!(v.passed, "{}", v.summary());
    let v = validate_syntactic_output(&s, "It was chased by the dog.", TransformationKind::ActiveToPassive);
    assert!(!v.passed && v.has("missing_content_word"));
    let v = validate_syntactic_output(&s, "The dog chased the cat.", TransformationKind::ActiveToPassive);
    assert!(v.has("unchanged"));
    // "by" is only licensed for the passive direction.
    let v = validate_syntactic_output(&s, "The cat was chased by the dog.", TransformationKind::DativeAlternation);
    assert!(v.has("added_word"));

    let s = parse_sentence(
        "He|PRP|nsubj|2 read|VBD|ROOT|0|read the|DT|det|4 book|NN|dobj|2 that|WDT|dobj|7 she|PRP|nsubj|7 wrote|VBD|relcl|4|write .|.|punct|2",
    )
    .unwrap();
    assert_eq!(s.text, "He read the book that she wrote.");
    let ok = validate_syntactic_output(&s, "The book that she wrote was read by him.", TransformationKind::ActiveToPassive);
    assert!(ok.passed, "{}", ok.summary());
    let bad = validate_syntactic_output(&s, "The book that was written by her was read by him.", TransformationKind::ActiveToPassive);
    assert!(bad.has("embedded_clause_changed"), "{}", bad.summary());
}

#[test]
fn selection_is_deterministic_and_uniform() {
    let s = parse_sentence("She|PRP|nsubj|2 gave|VBD|ROOT|0|give him|PRP|dative|2 the|DT|det|5 book|NN|dobj|2 .|.|punct|2").unwrap();
    let r = detect_applicable(&s);
    assert_eq!(r.applicable_kinds().len(), 2);
    let mut counts = [0u32; 2];
    for seed in 0..10_000u64 {
        let k = select_transformation(&r, seed, "item-1", 0).unwrap();
        assert_eq!(select_transformation(&r, seed, "item-1", 0), Some(k));
        counts[usize::from(k == TransformationKind::DativeAlternation)] += 1;
    }
    let expected = 5_000.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "counts {counts:?}, p = {p}");
    for c in counts {
        assert!((c as f64 / 10_000.0 - 0.5).abs() <= 0.02);
    }

    let one = parse_sentence("The|DT|det|2 cat|NN|nsubjpass|4 was|VBD|auxpass|4|be chased|VBN|ROOT|0|chase by|IN|agent|4 the|DT|det|7 dog|NN|pobj|5 .|.|punct|4").unwrap();
    let r = detect_applicable(&one);
    for seed in 0..50 {
        assert_eq!(select_transformation(&r, seed, "x", 3), Some(TransformationKind::PassiveToActive));
    }
    let none = parse_sentence("It|PRP|nsubj|2 rained|VBD|ROOT|0|rain .|.|punct|2").unwrap();
    assert_eq!(select_transformation(&detect_applicable(&none), 1, "x", 0), None);
}

const PARSES: &str = "\
The|DT|det|2 dog|NN|nsubj|3 chased|VBD|ROOT|0|chase the|DT|det|5 cat|NN|dobj|3 .|.|punct|3
cat|NN|ROOT|0
dog|NN|ROOT|0
It|PRP|nsubj|2 rained|VBD|ROOT|0|rain .|.|punct|2
Denver|NNP|nsubj|2 won|VBD|ROOT|0|win the|DT|det|4 game|NN|dobj|2 .|.|punct|2
The|DT|det|2 fans|NNS|nsubj|3|fan cheered|VBD|ROOT|0|cheer .|.|punct|3
Who|WP|nsubj|2 won|VBD|ROOT|0|win ?|.|punct|2
";

fn gateway() -> ParseGateway {
    ParseGateway::new(
        Box::new(FixtureParser::from_compact("hand/test", PARSES).unwrap()),
        ParseCache::in_memory(),
    )
}

fn mc(question: &str) -> BenchmarkItem {
    BenchmarkItem {
        id: "q1".into(),
        benchmark: Benchmark::MultipleChoice,
        payload: Payload::MultipleChoice(MultipleChoicePayload {
            question: question.into(),
            choices: vec![
                Choice { label: "A".into(), text: "cat".into() },
                Choice { label: "B".into(), text: "dog".into() },
            ],
            gold_label: "A".into(),
        }),
        source_meta: Default::default(),
    }
}

#[test]
fn item_level_rules_mode() {
    let parser = gateway();
    let mode = SyntacticMode::Rules { fallback: None };
    let (out, records) = perturb_item_syntactic(&mc("The dog chased the cat."), &parser, &mode, 7).unwrap();
    assert_eq!(out.field(lexsyn_core::dataset::TextField::Question), Some("The cat was chased by the dog."));
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].mode, RealizationMode::Rules);
    assert!(records[0].validation.passed && !records[0].fallback);

    let item = mc("It rained.");
    let (out, records) = perturb_item_syntactic(&item, &parser, &mode, 7).unwrap();
    assert_eq!(out, item);
    assert!(records.is_empty());
}

#[test]
fn llm_mode_falls_back_when_the_rewrite_is_rejected() {
    let parser = gateway();
    let llm = LlmGateway::stub(&["rewriter"]);
    let mode = SyntacticMode::Llm { gateway: &llm, model_id: "rewriter".into() };
    let item = mc("The dog chased the cat.");
    let (out, records) = perturb_item_syntactic(&item, &parser, &mode, 7).unwrap();
    // The stub echoes the sentence, which the validator rejects twice.
    assert_eq!(out, item);
    assert_eq!(records.len(), 1);
    assert!(records[0].fallback && records[0].validation.has("unchanged"));
    assert_eq!(records[0].attempts, 2);
}

#[test]
fn answer_bearing_sentence_is_guarded() {
    let parser = gateway();
    let mode = SyntacticMode::Rules { fallback: None };
    let context = "Denver won the game. The fans cheered.";
    let item = BenchmarkItem {
        id: "s1".into(),
        benchmark: Benchmark::Extractive,
        payload: Payload::Extractive(ExtractivePayload {
            context: context.into(),
            question: "Who won?".into(),
            gold_answers: vec![GoldAnswer { text: "Denver won".into(), offset: 0 }],
        }),
        source_meta: Default::default(),
    };
    let (out, records) = perturb_item_syntactic(&item, &parser, &mode, 3).unwrap();
    assert_eq!(out, item);
    assert_eq!(records.len(), 1);
    assert!(records[0].fallback);
    assert!(records[0].notes.iter().any(|r| r.code == "answer_guard"));

    // An answer that survives the rewrite verbatim is re-anchored.
    let mut item2 = item.clone();
    if let Payload::Extractive(p) = &mut item2.payload {
        p.gold_answers = vec![GoldAnswer { text: "Denver".into(), offset: 0 }];
    }
    let (out, records) = perturb_item_syntactic(&item2, &parser, &mode, 3).unwrap();
    assert!(!records[0].fallback);
    let Payload::Extractive(p) = &out.payload else { unreachable!() };
    assert_eq!(p.context, "The game was won by Denver. The fans cheered.");
    assert_eq!(p.gold_answers[0].offset, 20);
    out.validate().unwrap();
}
