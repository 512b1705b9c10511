//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{loose, mini_config, read_fixture, round_trips, snapshot, truth_table, STUB_MODELS};
use lexsyn_core::analysis::{self, Variant};
use lexsyn_core::dataset::{self, Benchmark, Payload};
use lexsyn_core::metrics::{amega_case_score, exact_match, token_f1};
use lexsyn_core::pipeline::{self, Pipeline, RunConfig};
use lexsyn_core::stats::{kendall_tau_b, mcnemar, wilcoxon_signed_rank, Method, StabilityOptions, StatsError};
use lexsyn_core::syntax::{detect_applicable, realize_rule_based, validate_syntactic_output, TransformationKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(actual: f64, expected: f64, tol: f64) -> bool {
    (actual - expected).abs() <= tol
}

fn bundled(resamples: usize) -> Result<analysis::Analysis, String> {
    pipeline::analyze_bundled(&StabilityOptions {
        resamples,
        ..Default::default()
    })
    .map_err(|e| e.to_string())
}

fn mean_drops() -> Check {
    let start = Instant::now();
    let a = bundled(1000)?;
    let took = start.elapsed();
    let expected = [
        (Benchmark::MultipleChoice, 7.72, 1.64),
        (Benchmark::Extractive, 3.38, 2.72),
        (Benchmark::FreeForm, 1.25, 0.55),
    ];
    let mut seen = Vec::new();
    for (b, lex, syn) in expected {
        for (kind, want) in [(Variant::Lexical, lex), (Variant::Syntactic, syn)] {
            let m = a.mean_drop(b, kind).ok_or(format!("no mean drop for {} {kind}", b.short_name()))?;
            ensure(
                within(m.mean_drop, want, 0.02),
                format!("{} {kind}: {:.4} vs {want}", b.short_name(), m.mean_drop),
            )?;
            seen.push(format!("{:.2}", m.mean_drop));
        }
    }
    ensure(took < Duration::from_secs(1), format!("took {took:?}"))?;
    Ok(format!("mean drops {} in {took:.0?}", seen.join("/")))
}

fn rank_stability() -> Check {
    let start = Instant::now();
    let a = bundled(10_000)?;
    let took = start.elapsed();
    let expected = [
        (Benchmark::MultipleChoice, 0.98, 0.99),
        (Benchmark::Extractive, 0.93, 0.87),
        (Benchmark::FreeForm, 0.89, 0.87),
    ];
    let mut seen = Vec::new();
    for (b, lex, syn) in expected {
        for (kind, want) in [(Variant::Lexical, lex), (Variant::Syntactic, syn)] {
            let r = a
                .stability_for(b, kind)
                .and_then(|s| s.report.as_ref())
                .ok_or(format!("no stability for {} {kind}", b.short_name()))?;
            ensure(within(r.tau, want, 0.03), format!("{} {kind}: tau {:.4} vs {want}", b.short_name(), r.tau))?;
            seen.push(format!("{:.3}", r.tau));
        }
    }
    let r = a
        .stability_for(Benchmark::MultipleChoice, Variant::Lexical)
        .and_then(|s| s.report.as_ref())
        .ok_or("no mmlu lexical stability")?;
    ensure(within(r.ci_low, 0.93, 0.03), format!("ci_low {:.4}", r.ci_low))?;
    ensure(took < Duration::from_secs(30), format!("took {took:?}"))?;
    Ok(format!("tau {}, mmlu lexical ci_low {:.3}, B=10000 in {took:.0?}", seen.join("/"), r.ci_low))
}

fn wilcoxon_bands() -> Check {
    let a = bundled(1000)?;
    let mut seen = Vec::new();
    for b in analysis::BENCHMARKS {
        for kind in Variant::PERTURBED {
            let s = a.stability_for(b, kind).ok_or("missing stability entry")?;
            ensure(s.report.is_some(), format!("{} {kind}: {:?}", b.short_name(), s.error))?;
            let stars = s.wilcoxon_stars();
            let need = if b == Benchmark::FreeForm && kind == Variant::Syntactic { 2 } else { 3 };
            ensure(stars.len() >= need, format!("{} {kind}: {stars:?}", b.short_name()))?;
            seen.push(format!("{} {kind} {stars}", b.short_name()));
        }
    }
    Ok(seen.join(", "))
}

fn choose(n: u64, k: u64) -> u128 {
    // Pascal's rule, so no floating point is involved.
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = vec![1u128; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    row[k as usize]
}

fn mcnemar_oracle(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let k = b.min(c);
    let tail: u128 = (0..=k).map(|i| choose(n, i)).sum();
    (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0)
}

fn wilcoxon_oracle(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let rank = |i: usize| 1 + diffs.iter().filter(|d| d.abs() < diffs[i].abs()).count();
    let ranks: Vec<usize> = (0..n).map(rank).collect();
    let observed: usize = (0..n).filter(|&i| diffs[i] > 0.0).map(|i| ranks[i]).sum();
    let (mut below, mut above) = (0u64, 0u64);
    for signs in 0u32..(1 << n) {
        let w: usize = (0..n).filter(|&i| signs & (1 << i) != 0).map(|i| ranks[i]).sum();
        below += u64::from(w <= observed);
        above += u64::from(w >= observed);
    }
    (2.0 * below.min(above) as f64 / (1u64 << n) as f64).min(1.0)
}

fn tau_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    let n = x.len();
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tx += 1;
            }
            if dy == 0.0 {
                ty += 1;
            }
            if dx * dy > 0.0 {
                conc += 1;
            } else if dx * dy < 0.0 {
                disc += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = (((pairs - tx) * (pairs - ty)) as f64).sqrt();
    (denom > 0.0).then(|| (conc - disc) as f64 / denom)
}

fn stats_oracles() -> Check {
    let mut cells = 0;
    for n in 0..=15u64 {
        for b in 0..=n {
            let r = mcnemar(b, n - b);
            ensure(r.method == Method::Exact, format!("mcnemar({b}, {}) not exact", n - b))?;
            let want = mcnemar_oracle(b, n - b);
            ensure(
                (r.p_value - want).abs() <= 1e-12,
                format!("mcnemar({b}, {}): {} vs {want}", n - b, r.p_value),
            )?;
            cells += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let n = rng.gen_range(1..=12);
        // Distinct magnitudes with random signs.
        let mut mags: Vec<f64> = (1..=n).map(|i| i as f64 + rng.gen_range(0.0..0.5)).collect();
        for i in (1..mags.len()).rev() {
            mags.swap(i, rng.gen_range(0..=i));
        }
        let diffs: Vec<f64> = mags.iter().map(|m| if rng.gen_bool(0.5) { *m } else { -m }).collect();
        let r = wilcoxon_signed_rank(&diffs).map_err(|e| e.to_string())?;
        let want = wilcoxon_oracle(&diffs);
        ensure(
            r.method == Method::Exact && (r.p_value - want).abs() <= 1e-12,
            format!("wilcoxon case {case} {diffs:?}: {} vs {want}", r.p_value),
        )?;
    }

    for case in 0..500 {
        let n = rng.gen_range(2..=50);
        let levels = rng.gen_range(2..=n.max(3));
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64).collect();
        match (kendall_tau_b(&x, &y), tau_oracle(&x, &y)) {
            (Ok(t), Some(want)) => ensure((t - want).abs() <= 1e-12, format!("tau case {case}: {t} vs {want}"))?,
            (Err(StatsError::AllTied), None) => {}
            (got, want) => return Err(format!("tau case {case}: {got:?} vs {want:?}")),
        }
    }
    Ok(format!("mcnemar {cells} tables, wilcoxon 200 vectors, tau-b 500 vectors, all within 1e-12"))
}

fn truth_table_agreement() -> Check {
    let rows = truth_table();
    ensure(rows.len() >= 16, format!("only {} sentences", rows.len()))?;
    for k in TransformationKind::ALL {
        let pos = rows.iter().any(|r| r.expected.contains(&k));
        let neg = rows.iter().any(|r| !r.expected.contains(&k));
        ensure(pos && neg, format!("{k} lacks a positive or negative row"))?;
    }
    let mut agree = 0;
    for r in &rows {
        let got = detect_applicable(&r.sentence).applicable_kinds();
        ensure(got == r.expected, format!("{:?}: {got:?} vs {:?}", r.sentence.text, r.expected))?;
        agree += 1;
    }
    Ok(format!("{agree}/{} sentences agree", rows.len()))
}

fn round_trip_recovery() -> Check {
    let cases = round_trips();
    ensure(cases.len() >= 20, format!("only {} cases", cases.len()))?;
    for rt in &cases {
        let c = detect_applicable(&rt.source)
            .get(rt.kind)
            .constituents
            .clone()
            .ok_or(format!("{} not applicable to {:?}", rt.kind, rt.source.text))?;
        let out = realize_rule_based(&rt.source, rt.kind, &c).map_err(|e| e.to_string())?;
        ensure(out == rt.expected, format!("{}: {out:?} vs {:?}", rt.kind, rt.expected))?;
        let v = validate_syntactic_output(&rt.source, &out, rt.kind);
        ensure(v.passed, format!("{out:?}: {}", v.summary()))?;

        let inverse = rt.kind.inverse();
        let bc = detect_applicable(&rt.output_parse)
            .get(inverse)
            .constituents
            .clone()
            .ok_or(format!("{inverse} not applicable to {:?}", rt.output_parse.text))?;
        let back = realize_rule_based(&rt.output_parse, inverse, &bc).map_err(|e| e.to_string())?;
        ensure(loose(&back) == loose(&rt.source.text), format!("{inverse}: {back:?} vs {:?}", rt.source.text))?;
        let v = validate_syntactic_output(&rt.output_parse, &back, inverse);
        ensure(v.passed, format!("{back:?}: {}", v.summary()))?;
    }
    Ok(format!("{} sentences round-trip and validate", cases.len()))
}

fn mini_run(dir: &std::path::Path) -> Result<(), String> {
    let cfg = RunConfig::load(&mini_config(dir, 11, "")).map_err(|e| e.to_string())?;
    let p = Pipeline::new(cfg).map_err(|e| e.to_string())?;
    let e = |e: pipeline::PipelineError| e.to_string();
    for kind in Variant::PERTURBED {
        p.perturb(Benchmark::MultipleChoice, kind).map_err(e)?;
    }
    for (m, _) in STUB_MODELS {
        for v in [Variant::Original, Variant::Lexical, Variant::Syntactic] {
            p.run(m, Benchmark::MultipleChoice, v).map_err(e)?;
        }
    }
    let a = p.analyze().map_err(e)?;
    pipeline::report(&a, &p.report_dir()).map_err(e)?;

    let s = p.perturb(Benchmark::Extractive, Variant::Lexical).map_err(e)?;
    ensure(s.protected_violations == 0, format!("{} protected-string violations", s.protected_violations))?;
    let items = dataset::read_items(&p.dataset_path(Benchmark::Extractive, Variant::Lexical)).map_err(|e| e.to_string())?;
    for item in &items {
        let Payload::Extractive(x) = &item.payload else {
            return Err("not an extractive item".into());
        };
        for g in &x.gold_answers {
            let at: String = x.context.chars().skip(g.offset).take(g.text.chars().count()).collect();
            ensure(at == g.text, format!("{}: gold {:?} lost", item.id, g.text))?;
        }
    }
    Ok(())
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let d1 = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d2 = tempfile::tempdir().map_err(|e| e.to_string())?;
    mini_run(d1.path())?;
    let took = start.elapsed();
    mini_run(d2.path())?;
    let a = snapshot(&d1.path().join("out"));
    let b = snapshot(&d2.path().join("out"));
    ensure(a.len() > 10, format!("only {} output files", a.len()))?;
    ensure(a.keys().eq(b.keys()), "output file sets differ")?;
    for (path, bytes) in &a {
        ensure(&b[path] == bytes, format!("{} differs between runs", path.display()))?;
    }
    ensure(took < Duration::from_secs(60), format!("took {took:?}"))?;
    Ok(format!(
        "{} files byte-identical across two runs, one run in {took:.1?}, no gold-answer violations",
        a.len()
    ))
}

/// SQuAD-style normalization, written separately from the library's.
fn oracle_tokens(text: &str) -> Vec<String> {
    let mut cleaned = String::new();
    for ch in text.chars() {
        if ch.is_ascii_punctuation() {
            continue;
        }
        cleaned.extend(ch.to_lowercase());
    }
    cleaned
        .split(|c: char| c.is_whitespace())
        .filter(|w| !w.is_empty() && *w != "a" && *w != "an" && *w != "the")
        .map(String::from)
        .collect()
}

fn oracle_f1(pred: &str, gold: &str) -> f64 {
    let mut p = oracle_tokens(pred);
    let mut g = oracle_tokens(gold);
    if p.is_empty() || g.is_empty() {
        return f64::from(u8::from(p == g));
    }
    p.sort();
    g.sort();
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < p.len() && j < g.len() {
        match p[i].cmp(&g[j]) {
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn metric_oracles() -> Check {
    let text = read_fixture("metric_cases.tsv");
    let mut n = 0;
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let (pred, golds) = line.split_once('\t').ok_or(format!("bad line {line:?}"))?;
        let golds: Vec<&str> = golds.split('|').collect();
        let em_want = if golds.iter().any(|g| oracle_tokens(g) == oracle_tokens(pred)) { 1.0 } else { 0.0 };
        let f1_want = golds.iter().map(|g| oracle_f1(pred, g)).fold(0.0, f64::max);
        let (em, f1) = (exact_match(pred, &golds), token_f1(pred, &golds));
        ensure(em == em_want, format!("EM {pred:?} vs {golds:?}: {em} vs {em_want}"))?;
        ensure((f1 - f1_want).abs() <= 1e-12, format!("F1 {pred:?} vs {golds:?}: {f1} vs {f1_want}"))?;
        n += 1;
    }
    ensure(n == 30, format!("{n} cases, expected 30"))?;
    let f1 = token_f1("brown dog", &["big brown dog"]);
    ensure(
        (f1 - 0.8).abs() <= 1e-12 && exact_match("brown dog", &["big brown dog"]) == 0.0,
        format!("brown dog: F1 {f1}"),
    )?;

    // 50 points per case, split by criterion weight.
    let weighted: [(&[bool], &[f64], f64); 6] = [
        (&[true, true, true], &[1.0, 1.0, 1.0], 50.0),
        (&[false, false], &[2.0, 3.0], 0.0),
        (&[true, false, true], &[1.0, 2.0, 1.0], 25.0),
        (&[false, true], &[1.0, 4.0], 40.0),
        (&[true, false, false, false], &[3.0, 1.0, 1.0, 1.0], 25.0),
        (&[true, true, false], &[0.5, 0.5, 1.5], 20.0),
    ];
    for (met, w, want) in weighted {
        let got = amega_case_score(met, w).map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 1e-12, format!("adherence {met:?} {w:?}: {got} vs {want}"))?;
    }
    Ok(format!("{n} EM/F1 cases match the oracle, brown dog F1 0.8, 6 weighted adherence cases"))
}

fn size_signs() -> Check {
    let a = bundled(1000)?;
    let r = |b: Benchmark| -> Result<(f64, usize), String> {
        let s = a.size_for(b, Variant::Lexical).ok_or("no size entry")?;
        let rep = s.report.as_ref().ok_or(format!("size correlation failed: {:?}", s.error))?;
        Ok((rep.r, rep.n_models))
    };
    let (mmlu, n) = r(Benchmark::MultipleChoice)?;
    let (squad, _) = r(Benchmark::Extractive)?;
    ensure(mmlu > 0.0, format!("mmlu lexical r {mmlu:+.3}"))?;
    ensure(squad < 0.0, format!("squad f1 lexical r {squad:+.3}"))?;
    Ok(format!("r(mmlu lexical) {mmlu:+.3}, r(squad f1 lexical) {squad:+.3} over {n} open-weight models"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("published mean drops", mean_drops),
        ("rank stability", rank_stability),
        ("wilcoxon significance", wilcoxon_bands),
        ("statistical oracles", stats_oracles),
        ("applicability truth table", truth_table_agreement),
        ("realizer round trips", round_trip_recovery),
        ("offline end-to-end run", end_to_end),
        ("metric oracles", metric_oracles),
        ("size correlation signs", size_signs),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
