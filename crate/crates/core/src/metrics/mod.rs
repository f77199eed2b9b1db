//! Evaluation metrics, analytic complexity counts and a latency benchmark.

mod bench;
mod complexity;
mod eval;

pub use bench::{bench_csv, bench_latency, BenchRow, DEFAULT_BATCHES};
pub use complexity::{count_complexity, ComplexityReport, LayerCost, FLOPS_CONVENTION};
pub use eval::{agreement, confusion_matrix, evaluate, predict_dataset, Agreement, EvalReport, SnrAccuracy};
