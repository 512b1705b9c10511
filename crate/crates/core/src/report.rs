//! Plot-ready CSV files and a markdown summary of an [`Analysis`].

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use crate::analysis::{Analysis, Variant, BENCHMARKS};
use crate::dataset::Benchmark;
use crate::util;

pub const RANK_SHIFT_CSV: &str = "rank_shift.csv";
pub const MEAN_DROPS_CSV: &str = "mean_drops.csv";
pub const SIZE_SCATTER_CSV: &str = "size_scatter.csv";
pub const DELTA_TABLE_CSV: &str = "delta_table.csv";
pub const REPORT_MD: &str = "report.md";

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

fn fmt_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(f4).unwrap_or_default()
}

fn display_name(b: Benchmark) -> &'static str {
    match b {
        Benchmark::MultipleChoice => "MMLU",
        Benchmark::Extractive => "SQuAD",
        Benchmark::FreeForm => "AMEGA",
    }
}

fn tick(ok: bool) -> &'static str {
    if ok {
        "✓"
    } else {
        "✗"
    }
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(io::Error::other)?;
    for row in rows {
        w.write_record(&row).map_err(io::Error::other)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

/// (original position, perturbed position) per model and kind, with midranks.
pub fn rank_shift_csv(a: &Analysis) -> io::Result<Vec<u8>> {
    let mut rows = Vec::new();
    for b in BENCHMARKS {
        let Some(orig) = a.leaderboard(b, Variant::Original) else {
            continue;
        };
        for kind in Variant::PERTURBED {
            let Some(pert) = a.leaderboard(b, kind) else {
                continue;
            };
            for o in &orig.entries {
                let Some(p) = pert.rank_of(&o.model_id) else {
                    continue;
                };
                rows.push(vec![
                    a.config_hash.clone(),
                    b.short_name().into(),
                    kind.name().into(),
                    orig.metric.clone(),
                    o.model_id.clone(),
                    f4(o.score),
                    f4(p.score),
                    o.position.to_string(),
                    p.position.to_string(),
                    o.rank.to_string(),
                    p.rank.to_string(),
                ]);
            }
        }
    }
    csv_bytes(
        &[
            "config_hash",
            "benchmark",
            "kind",
            "metric",
            "model_id",
            "original_score",
            "perturbed_score",
            "original_position",
            "perturbed_position",
            "original_rank",
            "perturbed_rank",
        ],
        rows,
    )
}

pub fn mean_drops_csv(a: &Analysis) -> io::Result<Vec<u8>> {
    let rows = a
        .mean_drops
        .iter()
        .map(|m| {
            vec![
                a.config_hash.clone(),
                m.benchmark.short_name().into(),
                m.kind.name().into(),
                m.metric.clone(),
                f4(m.mean_drop),
                m.n_models.to_string(),
            ]
        })
        .collect();
    csv_bytes(&["config_hash", "benchmark", "kind", "metric", "mean_drop", "n_models"], rows)
}

pub fn size_scatter_csv(a: &Analysis) -> io::Result<Vec<u8>> {
    let mut rows = Vec::new();
    for s in &a.size {
        for p in &s.points {
            let size = p.parameter_count.unwrap_or(f64::NAN);
            rows.push(vec![
                a.config_hash.clone(),
                s.benchmark.short_name().into(),
                s.kind.name().into(),
                s.metric.clone(),
                p.model_id.clone(),
                size.to_string(),
                f4(size.log10()),
                f4(p.drop),
            ]);
        }
    }
    csv_bytes(
        &[
            "config_hash",
            "benchmark",
            "kind",
            "metric",
            "model_id",
            "parameters_billions",
            "log10_parameters",
            "drop",
        ],
        rows,
    )
}

pub fn delta_table_csv(a: &Analysis) -> io::Result<Vec<u8>> {
    let rows = a
        .delta_table
        .rows
        .iter()
        .map(|r| {
            vec![
                a.config_hash.clone(),
                r.model_id.clone(),
                r.benchmark.short_name().into(),
                r.metric.clone(),
                f4(r.original),
                opt(r.delta_lexical),
                opt(r.delta_syntactic),
                r.stars_lexical.clone(),
                r.stars_syntactic.clone(),
            ]
        })
        .collect();
    csv_bytes(
        &[
            "config_hash",
            "model_id",
            "benchmark",
            "metric",
            "original",
            "delta_lexical",
            "delta_syntactic",
            "stars_lexical",
            "stars_syntactic",
        ],
        rows,
    )
}

fn delta_cell(d: Option<f64>, stars: &str) -> String {
    match d {
        Some(d) => format!("{d:.2}{stars}"),
        None => "n/a".into(),
    }
}

pub fn markdown(a: &Analysis) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Perturbation robustness report\n");
    let _ = writeln!(s, "- config hash: `{}`", a.config_hash);
    let _ = writeln!(s, "- source: {}", a.source);
    let _ = writeln!(
        s,
        "- bootstrap: {} resamples, seed {}, level {}\n",
        a.bootstrap.resamples, a.bootstrap.seed, a.bootstrap.level
    );

    let _ = writeln!(s, "## Score changes\n");
    let _ = writeln!(s, "Δ is original minus perturbed; positive values are drops. Stars mark McNemar significance.\n");
    for b in a.delta_table.benchmarks() {
        let _ = writeln!(s, "### {}\n", display_name(b));
        let _ = writeln!(s, "| Model | Metric | Original | Δ Lex | Δ Syn |");
        let _ = writeln!(s, "|---|---|---:|---:|---:|");
        for r in a.delta_table.rows.iter().filter(|r| r.benchmark == b) {
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} | {} | {} |",
                r.model_id,
                r.metric,
                r.original,
                delta_cell(r.delta_lexical, &r.stars_lexical),
                delta_cell(r.delta_syntactic, &r.stars_syntactic)
            );
        }
        s.push('\n');
    }

    let _ = writeln!(s, "## Mean drops\n");
    let _ = writeln!(s, "| Benchmark | Metric | Kind | Mean Δ | Models |");
    let _ = writeln!(s, "|---|---|---|---:|---:|");
    for m in &a.mean_drops {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.2} | {} |",
            display_name(m.benchmark),
            m.metric,
            m.kind,
            m.mean_drop,
            m.n_models
        );
    }

    let _ = writeln!(s, "\n## Ranking stability\n");
    let _ = writeln!(
        s,
        "Kendall τ-b between original and perturbed rankings, with a percentile bootstrap CI. Strict agreement needs the CI lower bound above 0.9, moderate above 0.8.\n"
    );
    let _ = writeln!(s, "| Benchmark | Metric | Kind | τ | CI | Strict | Moderate | Wilcoxon p |");
    let _ = writeln!(s, "|---|---|---|---:|---|:-:|:-:|---:|");
    for e in &a.stability {
        match &e.report {
            Some(r) => {
                let p = r
                    .wilcoxon_p
                    .map(|p| format!("{}{}", fmt_p(p), e.wilcoxon_stars()))
                    .unwrap_or_else(|| "n/a".into());
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {:.2} | [{:.2}, {:.2}] | {} | {} | {} |",
                    display_name(e.benchmark),
                    e.metric,
                    e.kind,
                    r.tau,
                    r.ci_low,
                    r.ci_high,
                    tick(r.strict_equivalent),
                    tick(r.moderate_equivalent),
                    p
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | n/a | {} | ✗ | ✗ | n/a |",
                    display_name(e.benchmark),
                    e.metric,
                    e.kind,
                    e.error.as_deref().unwrap_or("")
                );
            }
        }
    }

    let _ = writeln!(s, "\n## Model size\n");
    let _ = writeln!(s, "Pearson r between log10 parameter count and the drop, over open-weight models of known size.\n");
    let _ = writeln!(s, "| Benchmark | Metric | Kind | r | Models |");
    let _ = writeln!(s, "|---|---|---|---:|---:|");
    for e in &a.size {
        let r = match (&e.report, &e.error) {
            (Some(r), _) => format!("{:+.3}", r.r),
            (None, Some(err)) => format!("n/a ({err})"),
            (None, None) => "n/a".into(),
        };
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            display_name(e.benchmark),
            e.metric,
            e.kind,
            r,
            e.points.len()
        );
    }

    if !a.mcnemar.is_empty() {
        let _ = writeln!(s, "\n## McNemar tests\n");
        let _ = writeln!(s, "| Model | Benchmark | Kind | b | c | p |");
        let _ = writeln!(s, "|---|---|---|---:|---:|---:|");
        for m in &a.mcnemar {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {}{} |",
                m.model_id,
                display_name(m.benchmark),
                m.kind,
                m.outcomes.n10,
                m.outcomes.n01,
                fmt_p(m.p_value),
                m.stars
            );
        }
    }
    s
}

/// Writes every report file into `dir` and returns their paths.
pub fn write_report(a: &Analysis, dir: &Path) -> io::Result<Vec<PathBuf>> {
    let files: [(&str, Vec<u8>); 5] = [
        (RANK_SHIFT_CSV, rank_shift_csv(a)?),
        (MEAN_DROPS_CSV, mean_drops_csv(a)?),
        (SIZE_SCATTER_CSV, size_scatter_csv(a)?),
        (DELTA_TABLE_CSV, delta_table_csv(a)?),
        (REPORT_MD, markdown(a).into_bytes()),
    ];
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        util::atomic_write(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
