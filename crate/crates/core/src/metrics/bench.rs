use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::signal::stream_rng;
use crate::tensor::{Element, Tensor};

pub const DEFAULT_BATCHES: [usize; 4] = [2, 16, 128, 1024];
const WARMUP_RUNS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub batch: usize,
    pub per_sample_seconds: f64,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("batch,per_sample_seconds\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6e}", r.batch, r.per_sample_seconds);
    }
    s
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median per-sample inference time for each batch size after three warm-up
/// runs. With `parallel`, each batch is cut into per-thread slices.
pub fn bench_latency<T: Element>(
    model: &Model<T>,
    batches: &[usize],
    repetitions: usize,
    parallel: bool,
) -> Result<Vec<BenchRow>> {
    if repetitions == 0 || batches.contains(&0) {
        return Err(Error::Config("batch sizes and repetitions must be positive".into()));
    }
    let len = model.config.input_len;
    let mut rng = stream_rng(0, 0xbe_0000);
    let mut rows = Vec::with_capacity(batches.len());
    for &b in batches {
        let data: Vec<T> = (0..b * 2 * len).map(|_| T::of(rng.gen_range(-1.0..1.0))).collect();
        let x = Tensor::new(&[b, 1, 2, len], data)?;
        let slices: Vec<Tensor<T>> = if parallel {
            let per = b.div_ceil(rayon::current_num_threads()).max(1);
            x.data()
                .chunks(per * 2 * len)
                .map(|c| Tensor::new(&[c.len() / (2 * len), 1, 2, len], c.to_vec()))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let infer = |t: &Tensor<T>| -> Result<()> {
            if model.config.num_classes > 0 {
                model.logits(t).map(drop)
            } else {
                model.embed(t).map(drop)
            }
        };
        let run = || -> Result<()> {
            if parallel {
                slices.par_iter().try_for_each(infer)
            } else {
                infer(&x)
            }
        };
        for _ in 0..WARMUP_RUNS {
            run()?;
        }
        let mut times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t = Instant::now();
            run()?;
            times.push(t.elapsed().as_secs_f64() / b as f64);
        }
        rows.push(BenchRow { batch: b, per_sample_seconds: median(times) });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn medians() {
        assert_eq!(median(vec![3.0]), 3.0);
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn single_repetition_table() {
        let mut cfg = ModelConfig::new(32, 1, 3);
        cfg.channels = 4;
        let m: Model<f32> = Model::init(cfg, 0).unwrap();
        let rows = bench_latency(&m, &[2, 5], 1, false).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.per_sample_seconds > 0.0));
        assert!(bench_csv(&rows).starts_with("batch,per_sample_seconds\n2,"));
        assert!(bench_latency(&m, &[2], 0, false).is_err());
        assert_eq!(bench_latency(&m, &[3], 1, true).unwrap().len(), 1);
    }
}
