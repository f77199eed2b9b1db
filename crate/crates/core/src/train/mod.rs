//! Mini-batch training with Adam and validation-loss early stopping.

mod adam;
mod split;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::{clip_global_norm, Adam};
pub use split::{stratified_split, stratified_split_indices, SplitRatios};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::{argmax_rows, composite_loss, forward, BoundParams, Model};
use crate::signal::{stream_rng, Dataset, ModulationScheme};
use crate::tensor::{Element, Tensor};

const SHUFFLE_STREAM: u64 = 0x7a41_0000_0000_0000;

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,val_acc,seconds";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub split: SplitRatios,
    pub seed: u64,
    /// Global gradient-norm ceiling; off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 100,
            patience: 5,
            lambda1: 0.01,
            lambda2: 0.01,
            split: SplitRatios::default(),
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return bad("regularizer weights must be non-negative");
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }

    pub fn optimizer<T: Element>(&self, params: &[Tensor<T>]) -> Adam<T> {
        Adam::for_tensors(params, self.learning_rate, self.beta1, self.beta2, self.epsilon)
    }
}

/// Class index of every frame under a model's class list.
pub fn class_labels(classes: &[ModulationScheme], ds: &Dataset) -> Result<Vec<usize>> {
    ds.frames
        .iter()
        .map(|f| {
            classes
                .iter()
                .position(|&c| c == f.scheme)
                .ok_or_else(|| Error::Data(format!("scheme {} is not one of the model's classes", f.scheme)))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl TrainLog {
    /// CSV with a leading `#` comment noting that validation loss carries
    /// the regularizers.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# val_loss includes wavelet regularizers: lambda1={} lambda2={}\n{LOG_HEADER}\n",
            self.lambda1, self.lambda2
        );
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.9},{:.9},{:.6},{:.3}",
                r.epoch, r.train_loss, r.val_loss, r.val_acc, r.seconds
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Outcome of one epoch under [`EarlyStopping`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stalled,
    Stop,
}

/// Stops after `patience` consecutive epochs without a new minimum.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stalled: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, stalled: 0 }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Progress {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stalled = 0;
            Progress::Improved
        } else {
            self.stalled += 1;
            if self.stalled >= self.patience {
                Progress::Stop
            } else {
                Progress::Stalled
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// One forward/backward/update on a batch; returns the pre-update loss.
pub fn train_step<T: Element>(
    model: &mut Model<T>,
    opt: &mut Adam<T>,
    x: Tensor<T>,
    labels: &[usize],
    lambda1: f64,
    lambda2: f64,
    clip_norm: Option<f64>,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = BoundParams::trainable(&mut g, &model.params);
    let xv = g.constant(x);
    let trace = forward(&mut g, &model.config, &p, xv)?;
    let loss = composite_loss(&mut g, &trace, labels, lambda1, lambda2)?;
    g.backward(loss)?;
    let value = g.value(loss).item().as_f64();
    let mut grads: Vec<Tensor<T>> = p.0.iter().map(|&v| g.grad(v).expect("param").clone()).collect();
    drop(g);
    if let Some(c) = clip_norm {
        clip_global_norm(&mut grads, c);
    }
    let refs: Vec<&Tensor<T>> = grads.iter().collect();
    opt.step(model.params.tensors_mut(), &refs);
    Ok(value)
}

/// Batch-weighted composite loss and accuracy over a dataset.
pub fn evaluate_loss<T: Element>(
    model: &Model<T>,
    ds: &Dataset,
    batch_size: usize,
    lambda1: f64,
    lambda2: f64,
) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let labels = class_labels(&model.config.classes, ds)?;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = ds.input_tensor::<T>(chunk, model.config.normalize_input);
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let mut g = Graph::new();
        let p = BoundParams::frozen(&mut g, &model.params);
        let xv = g.constant(x);
        let trace = forward(&mut g, &model.config, &p, xv)?;
        let l = composite_loss(&mut g, &trace, &y, lambda1, lambda2)?;
        loss += g.value(l).item().as_f64() * chunk.len() as f64;
        let pred = argmax_rows(g.value(trace.logits.expect("classifier")));
        correct += pred.iter().zip(&y).filter(|(a, b)| a == b).count();
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

pub struct TrainOutcome<T> {
    /// Weights from the epoch with the lowest validation loss.
    pub model: Model<T>,
    pub log: TrainLog,
}

/// Trains `model` on `train`, early-stopping on `val` (on `train` itself when
/// `val` is empty). The model's class list must cover both sets.
pub fn train<T: Element>(
    mut model: Model<T>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    model.config.lambda1 = cfg.lambda1;
    model.config.lambda2 = cfg.lambda2;
    let labels = class_labels(&model.config.classes, train)?;
    let val = if val.is_empty() { train } else { val };
    let mut opt = cfg.optimizer(model.params.tensors());
    let mut rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut records = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.input_tensor::<T>(chunk, model.config.normalize_input);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let l = train_step(&mut model, &mut opt, x, &y, cfg.lambda1, cfg.lambda2, cfg.clip_norm)?;
            if !l.is_finite() {
                return Err(Error::Data(format!("training loss diverged at epoch {epoch}")));
            }
            total += l * chunk.len() as f64;
        }
        let (val_loss, val_acc) = evaluate_loss(&model, val, cfg.batch_size, cfg.lambda1, cfg.lambda2)?;
        let rec = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} acc {:.4} ({:.1}s)",
            rec.train_loss,
            rec.val_loss,
            rec.val_acc,
            rec.seconds
        );
        records.push(rec);
        match stopper.observe(epoch, val_loss) {
            Progress::Improved => best = model.clone(),
            Progress::Stalled => {}
            Progress::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    let log = TrainLog {
        records,
        best_epoch: stopper.best_epoch(),
        stopped_early,
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
    };
    Ok(TrainOutcome { model: best, log })
}
