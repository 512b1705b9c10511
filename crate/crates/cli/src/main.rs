use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lexsyn_core::analysis::{self, Variant};
use lexsyn_core::dataset::Benchmark;
use lexsyn_core::lexical::LexicalModeTag;
use lexsyn_core::pipeline::{self, Pipeline, PipelineError, RunConfig};
use lexsyn_core::stats::StabilityOptions;
use lexsyn_core::syntax::RealizationMode;

#[derive(Parser)]
#[command(name = "lexsyn", version, about = "Lexical and syntactic perturbation of QA benchmarks and leaderboard stability analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Run config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a perturbed variant of a benchmark.
    Perturb {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        benchmark: String,
        /// lexical or syntactic
        #[arg(long)]
        variant: String,
        /// lexicon|llm for lexical, rules|llm for syntactic.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Evaluate models on benchmark variants.
    Run {
        #[command(flatten)]
        common: Common,
        /// Model ids; all configured models by default.
        #[arg(long = "model")]
        models: Vec<String>,
        /// All configured benchmarks by default.
        #[arg(long)]
        benchmark: Option<String>,
        /// The original plus every perturbed variant on disk by default.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Compare variants: deltas, McNemar, rank stability, size correlation.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Analyze the bundled published results instead of runs.
        #[arg(long)]
        fixture: bool,
        /// Where to write the analysis JSON (fixture mode).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write CSV plot data and a markdown report.
    Report {
        #[command(flatten)]
        common: Common,
        /// Analysis JSON to report on; the config's by default.
        #[arg(long)]
        analysis: Option<PathBuf>,
        /// Report the bundled published results.
        #[arg(long)]
        fixture: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checks on the bundled published results.
    Fixtures {
        #[command(subcommand)]
        action: FixtureAction,
    },
}

#[derive(Subcommand)]
enum FixtureAction {
    /// Recompute the headline aggregates and compare them to the published ones.
    Verify {
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
    },
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    PipelineError::Usage(msg.into()).into()
}

fn benchmark(name: &str) -> Result<Benchmark> {
    Benchmark::from_short_name(name).ok_or_else(|| usage(format!("unknown benchmark {name:?} (mmlu, squad, amega)")))
}

fn variant(name: &str) -> Result<Variant> {
    Variant::from_name(name).ok_or_else(|| usage(format!("unknown variant {name:?} (original, lexical, syntactic)")))
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let path = common.config.as_deref().ok_or_else(|| usage("--config is required"))?;
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_mode(cfg: &mut RunConfig, kind: Variant, mode: &str) -> Result<()> {
    match (kind, mode) {
        (Variant::Lexical, "lexicon") => cfg.perturbation.lexical_mode = LexicalModeTag::Lexicon,
        (Variant::Lexical, "llm") => cfg.perturbation.lexical_mode = LexicalModeTag::Llm,
        (Variant::Syntactic, "rules") => cfg.perturbation.syntactic_mode = RealizationMode::Rules,
        (Variant::Syntactic, "llm") => cfg.perturbation.syntactic_mode = RealizationMode::Llm,
        _ => bail!(usage(format!("mode {mode:?} does not apply to {kind} perturbation"))),
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Perturb {
            common,
            benchmark: b,
            variant: v,
            mode,
        } => {
            let (b, v) = (benchmark(&b)?, variant(&v)?);
            let mut cfg = load_config(&common)?;
            if let Some(m) = mode {
                apply_mode(&mut cfg, v, &m)?;
            }
            let p = Pipeline::new(cfg)?;
            print_json(&p.perturb(b, v)?)
        }
        Command::Run {
            common,
            models,
            benchmark: b,
            variant: v,
        } => {
            let p = Pipeline::new(load_config(&common)?)?;
            let models = if models.is_empty() {
                p.config.evaluation.models.clone()
            } else {
                models
            };
            let benchmarks = match b {
                Some(b) => vec![benchmark(&b)?],
                None => p.config.benchmarks(),
            };
            for b in benchmarks {
                let variants = match &v {
                    Some(v) => vec![variant(v)?],
                    None => [Variant::Original, Variant::Lexical, Variant::Syntactic]
                        .into_iter()
                        .filter(|&v| v == Variant::Original || p.dataset_path(b, v).exists())
                        .collect(),
                };
                for v in variants {
                    for m in &models {
                        let s = p.run(m, b, v)?;
                        log::info!(
                            "{m} {} {v}: {} items, {} failed",
                            b.short_name(),
                            s.n_items,
                            s.n_failed
                        );
                        print_json(&s)?;
                    }
                }
            }
            Ok(())
        }
        Command::Analyze { common, fixture, out } => {
            let a = if fixture {
                let opts = match &common.config {
                    Some(_) => load_config(&common)?.analysis.stability_options(),
                    None => StabilityOptions::default(),
                };
                let a = pipeline::analyze_bundled(&opts)?;
                if let Some(out) = &out {
                    write_analysis(out, &a)?;
                }
                a
            } else {
                Pipeline::new(load_config(&common)?)?.analyze()?
            };
            for s in &a.stability {
                if let Some(r) = &s.report {
                    println!(
                        "{} {} tau={:.3} ci=[{:.3}, {:.3}] strict={} moderate={}",
                        s.benchmark.short_name(),
                        s.kind,
                        r.tau,
                        r.ci_low,
                        r.ci_high,
                        r.strict_equivalent,
                        r.moderate_equivalent
                    );
                }
            }
            for m in &a.mean_drops {
                println!("{} {} mean drop {:.3} ({})", m.benchmark.short_name(), m.kind, m.mean_drop + 0.0, m.metric);
            }
            Ok(())
        }
        Command::Report {
            common,
            analysis: path,
            fixture,
            out,
        } => {
            let (a, default_out) = if fixture {
                (pipeline::analyze_bundled(&StabilityOptions::default())?, None)
            } else if let Some(path) = path {
                (pipeline::read_analysis(&path)?, None)
            } else {
                let p = Pipeline::new(load_config(&common)?)?;
                (pipeline::read_analysis(&p.analysis_path())?, Some(p.report_dir()))
            };
            let dir = out.or(default_out).ok_or_else(|| usage("--out is required"))?;
            for f in pipeline::report(&a, &dir)? {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Fixtures {
            action: FixtureAction::Verify { resamples },
        } => {
            let checks = analysis::verify_bundled(&StabilityOptions {
                resamples,
                ..Default::default()
            })?;
            let mut failed = 0;
            for c in &checks {
                let verdict = if c.passed() { "PASS" } else { "FAIL" };
                println!(
                    "{verdict} {}: {:.4} (expected {} ± {})",
                    c.name, c.actual, c.expected, c.tolerance
                );
                failed += usize::from(!c.passed());
            }
            if failed > 0 {
                bail!("{failed} of {} checks failed", checks.len());
            }
            Ok(())
        }
    }
}

fn write_analysis(path: &Path, a: &analysis::Analysis) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(a)?)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_usage = e
                .downcast_ref::<PipelineError>()
                .is_some_and(|p| matches!(p, PipelineError::Usage(_) | PipelineError::Config(_)));
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}
