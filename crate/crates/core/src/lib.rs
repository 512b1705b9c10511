//! Meaning-preserving lexical and syntactic perturbation of QA benchmarks,
//! model evaluation over original and perturbed variants, and the
//! statistics used to judge score and leaderboard stability.

pub mod analysis;
pub mod dataset;
pub mod eval;
pub mod lexical;
pub mod llm;
pub mod metrics;
pub mod parse;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod syntax;
mod util;
pub mod verdict;
