use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax_rows, Model};
use crate::signal::{Dataset, ModulationScheme};
use crate::tensor::Element;
use crate::train::class_labels;

/// `cm[truth][pred]` counts.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        return Err(crate::error::contract!("{} labels vs {} predictions", truth.len(), pred.len()));
    }
    let mut cm = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= k || p >= k {
            return Err(crate::error::contract!("class index out of range for {k} classes"));
        }
        cm[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub accuracy: f64,
    /// Unweighted mean F1 over all classes; an empty class scores 0.
    pub macro_f1: f64,
    pub kappa: f64,
}

pub fn agreement(cm: &[Vec<u64>]) -> Result<Agreement> {
    let k = cm.len();
    let total: u64 = cm.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Data("no samples to score".into()));
    }
    let n = total as f64;
    let trace: u64 = (0..k).map(|i| cm[i][i]).sum();
    let rows: Vec<f64> = cm.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..k).map(|j| cm.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let f1_sum: f64 = (0..k)
        .map(|i| {
            let tp = cm[i][i] as f64;
            let denom = rows[i] + cols[i];
            if denom == 0.0 { 0.0 } else { 2.0 * tp / denom }
        })
        .sum();
    let p_o = trace as f64 / n;
    let p_e: f64 = rows.iter().zip(&cols).map(|(r, c)| r * c).sum::<f64>() / (n * n);
    let kappa = if (1.0 - p_e).abs() < 1e-15 {
        if p_o == 1.0 { 1.0 } else { 0.0 }
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    Ok(Agreement { accuracy: p_o, macro_f1: f1_sum / k as f64, kappa })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrAccuracy {
    pub snr_db: i16,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ModulationScheme>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub kappa: f64,
    pub per_snr: Vec<SnrAccuracy>,
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn from_predictions(classes: &[ModulationScheme], truth: &[usize], pred: &[usize], snr: &[i16]) -> Result<Self> {
        let cm = confusion_matrix(truth, pred, classes.len())?;
        let a = agreement(&cm)?;
        let mut snrs: Vec<i16> = snr.to_vec();
        snrs.sort_unstable();
        snrs.dedup();
        let per_snr = snrs
            .into_iter()
            .map(|s| {
                let (mut hit, mut count) = (0, 0);
                for ((&t, &p), &f) in truth.iter().zip(pred).zip(snr) {
                    if f == s {
                        count += 1;
                        hit += usize::from(t == p);
                    }
                }
                SnrAccuracy { snr_db: s, accuracy: hit as f64 / count as f64, count }
            })
            .collect();
        Ok(Self {
            classes: classes.to_vec(),
            accuracy: a.accuracy,
            macro_f1: a.macro_f1,
            kappa: a.kappa,
            per_snr,
            confusion: cm,
        })
    }

    pub fn accuracy_at(&self, snr: i16) -> Option<f64> {
        self.per_snr.iter().find(|s| s.snr_db == snr).map(|s| s.accuracy)
    }

    pub fn snr_csv(&self) -> String {
        let mut s = String::from("snr_db,accuracy\n");
        for p in &self.per_snr {
            let _ = writeln!(s, "{},{:.6}", p.snr_db, p.accuracy);
        }
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("truth");
        for c in &self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            let _ = write!(s, "{c}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Predictions over a dataset in independent batches.
pub fn predict_dataset<T: Element>(model: &Model<T>, ds: &Dataset, batch: usize) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let parts = idx
        .par_chunks(batch.max(1))
        .map(|chunk| {
            let x = ds.input_tensor::<T>(chunk, model.config.normalize_input);
            model.logits(&x).map(|l| argmax_rows(&l))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.concat())
}

pub fn evaluate<T: Element>(model: &Model<T>, ds: &Dataset, batch: usize) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::Data("test set is empty".into()));
    }
    let truth = class_labels(&model.config.classes, ds)?;
    let pred = predict_dataset(model, ds, batch)?;
    let snr: Vec<i16> = ds.frames.iter().map(|f| f.snr_db).collect();
    EvalReport::from_predictions(&model.config.classes, &truth, &pred, &snr)
}
