//! Prototypical few-shot classification with the wavelet network as encoder.

mod episode;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use episode::{
    adjust_dataset, adjust_length, episode_count, index_by_class, sample_episode, sample_episode_from, Distance,
    Episode, EpisodeSpec,
};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{add_regularizers, forward, BoundParams, Model, ModelConfig};
use crate::signal::{frames_to_tensor, stream_rng, Dataset, ModulationScheme};
use crate::tensor::{Element, Tensor};
use crate::train::Adam;

pub(crate) const EPISODE_STREAM: u64 = 0xe915_0000_0000_0000;
const META_TRAIN_STREAM: u64 = 0xe916_0000_0000_0000;
const META_TEST_STREAM: u64 = 0xe917_0000_0000_0000;

/// Class prototypes: row `l` is the mean support embedding of local class `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: Tensor<f64>,
    pub classes: Vec<ModulationScheme>,
}

/// Means of `embeddings` (S, D) rows grouped by `labels` in `0..n_way`.
pub fn prototypes(
    embeddings: &Tensor<f64>,
    labels: &[usize],
    classes: &[ModulationScheme],
) -> Result<PrototypeSet> {
    let (s, d) = match embeddings.shape() {
        [s, d] => (*s, *d),
        other => return Err(crate::error::contract!("embeddings must be (S, D), got {other:?}")),
    };
    if labels.len() != s {
        return Err(crate::error::contract!("{} labels for {s} embeddings", labels.len()));
    }
    let n = classes.len();
    let mut sums = vec![0.0; n * d];
    let mut counts = vec![0usize; n];
    for (row, &l) in embeddings.data().chunks_exact(d).zip(labels) {
        if l >= n {
            return Err(crate::error::contract!("label {l} outside {n} classes"));
        }
        counts[l] += 1;
        for (acc, v) in sums[l * d..(l + 1) * d].iter_mut().zip(row) {
            *acc += v;
        }
    }
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("class {} has no support frames", classes[l])));
    }
    for (l, &c) in counts.iter().enumerate() {
        sums[l * d..(l + 1) * d].iter_mut().for_each(|v| *v /= c as f64);
    }
    Ok(PrototypeSet { prototypes: Tensor::new(&[n, d], sums)?, classes: classes.to_vec() })
}

/// Softmax over negative distances from `query` to each prototype.
pub fn classify_query(protos: &PrototypeSet, query: &[f64], distance: Distance) -> Result<Vec<f64>> {
    let d = protos.prototypes.shape()[1];
    if query.len() != d {
        return Err(crate::error::contract!("query length {} vs prototype length {d}", query.len()));
    }
    let neg: Vec<f64> = protos
        .prototypes
        .data()
        .chunks_exact(d)
        .map(|p| {
            let sq: f64 = p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            match distance {
                Distance::SquaredEuclidean => -sq,
                Distance::Euclidean => -sq.sqrt(),
            }
        })
        .collect();
    let m = neg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = neg.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaTrainConfig {
    /// Episode budget; derived from the episode-count formula when absent.
    pub episodes: Option<usize>,
    /// Passes over the pool used by the episode-count formula.
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Most frames per encoder pass.
    pub pass_size: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            episodes: None,
            epochs: 1,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lambda1: 0.001,
            lambda2: 0.001,
            pass_size: 512,
            seed: 0,
            clip_norm: None,
        }
    }
}

impl MetaTrainConfig {
    pub fn episode_budget(&self, pool_len: usize, spec: &EpisodeSpec) -> Result<usize> {
        match self.episodes {
            Some(e) => Ok(e),
            None => episode_count(pool_len, 1.0, spec.n_way * spec.k_shot, spec.n_way * spec.q_query, self.epochs),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub loss: f64,
    pub query_acc: f64,
}

pub fn episode_log_csv(records: &[EpisodeRecord]) -> String {
    let mut s = String::from("episode,loss,query_acc\n");
    for r in records {
        let _ = writeln!(s, "{},{:.9},{:.6}", r.episode, r.loss, r.query_acc);
    }
    s
}

/// A fresh encoder (no classifier head) for frames of `spec.length`.
pub fn encoder_config(levels: usize, spec: &EpisodeSpec, classes: Vec<ModulationScheme>) -> ModelConfig {
    let mut cfg = ModelConfig::new(spec.length, levels, 0);
    cfg.lambda1 = 0.001;
    cfg.lambda2 = 0.001;
    cfg.classes = classes;
    cfg
}

/// Builds the episode loss on `g`: mean query cross-entropy over negative
/// distances plus the regularizers of every encoder pass.
struct EpisodeSetup<'a> {
    distance: Distance,
    lambda: (f64, f64),
    pass_size: usize,
    params: &'a BoundParams,
}

fn episode_graph<T: Element>(
    g: &mut Graph<T>,
    model: &Model<T>,
    pool: &Dataset,
    ep: &Episode,
    setup: &EpisodeSetup,
) -> Result<(Var, Var)> {
    let EpisodeSetup { distance, lambda, pass_size, params: p } = *setup;
    let rows: Vec<usize> = ep.support.iter().chain(&ep.query).copied().collect();
    let mut feats = Vec::new();
    let mut traces = Vec::new();
    for chunk in rows.chunks(pass_size.max(1)) {
        let x: Tensor<T> = frames_to_tensor(chunk.iter().map(|&i| &pool.frames[i]), model.config.normalize_input);
        let xv = g.constant(x);
        let t = forward(g, &model.config, p, xv)?;
        feats.push(t.features);
        traces.push(t);
    }
    let emb = if feats.len() == 1 { feats[0] } else { g.concat_rows(&feats)? };
    let protos = g.group_means(emb, &ep.support_groups())?;
    let s = ep.support.len();
    let qrows: Vec<usize> = (s..s + ep.query.len()).collect();
    let q = g.select_rows(emb, &qrows)?;
    let mut dist = g.sq_dist(q, protos)?;
    if distance == Distance::Euclidean {
        let eps = g.constant(Tensor::scalar(T::of(1e-12)));
        let shifted = g.add(dist, eps)?;
        dist = g.sqrt(shifted)?;
    }
    let logits = g.scale(dist, -T::one());
    let mut loss = g.cross_entropy_logits(logits, &ep.query_labels)?;
    for t in &traces {
        loss = add_regularizers(g, loss, t, lambda.0, lambda.1)?;
    }
    Ok((loss, logits))
}

pub struct MetaTrainOutcome<T> {
    pub model: Model<T>,
    pub log: Vec<EpisodeRecord>,
}

/// One Adam step per sampled episode on the mean query loss.
pub fn meta_train<T: Element>(
    mut model: Model<T>,
    pool: &Dataset,
    spec: &EpisodeSpec,
    cfg: &MetaTrainConfig,
) -> Result<MetaTrainOutcome<T>> {
    spec.validate()?;
    if spec.n_way < 2 {
        return Err(Error::Config("meta-training needs at least 2-way episodes".into()));
    }
    if model.config.num_classes != 0 {
        return Err(Error::Config("meta-training expects an encoder without a head".into()));
    }
    if model.config.input_len != spec.length {
        return Err(Error::Config(format!(
            "encoder length {} differs from episode length {}",
            model.config.input_len, spec.length
        )));
    }
    let pool = adjust_dataset(pool, spec.length)?;
    let by_class = index_by_class(&pool, |_| true);
    model.config.classes = by_class.keys().copied().collect();
    model.config.lambda1 = cfg.lambda1;
    model.config.lambda2 = cfg.lambda2;
    let episodes = cfg.episode_budget(pool.len(), spec)?;
    let mut opt = Adam::for_tensors(model.params.tensors(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut rng = stream_rng(cfg.seed, META_TRAIN_STREAM);
    let mut log = Vec::with_capacity(episodes);
    for e in 1..=episodes {
        let ep = sample_episode_from(&by_class, spec, &mut rng)?;
        let mut g = Graph::new();
        let p = BoundParams::trainable(&mut g, &model.params);
        let setup = EpisodeSetup {
            distance: spec.distance,
            lambda: (cfg.lambda1, cfg.lambda2),
            pass_size: cfg.pass_size,
            params: &p,
        };
        let (loss, logits) = episode_graph(&mut g, &model, &pool, &ep, &setup)?;
        g.backward(loss)?;
        let value = g.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::Data(format!("episode {e} loss is not finite")));
        }
        let pred = crate::model::argmax_rows(g.value(logits));
        let acc = pred.iter().zip(&ep.query_labels).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64;
        let mut grads: Vec<Tensor<T>> = p.0.iter().map(|&v| g.grad(v).expect("param").clone()).collect();
        drop(g);
        if let Some(c) = cfg.clip_norm {
            crate::train::clip_global_norm(&mut grads, c);
        }
        let refs: Vec<&Tensor<T>> = grads.iter().collect();
        opt.step(model.params.tensors_mut(), &refs);
        if e % 50 == 0 || e == episodes {
            log::info!("episode {e}/{episodes}: loss {value:.4} query acc {acc:.3}");
        }
        log.push(EpisodeRecord { episode: e, loss: value, query_acc: acc });
    }
    Ok(MetaTrainOutcome { model, log })
}

/// Episode loss at the current weights without updating them.
pub fn episode_loss<T: Element>(model: &Model<T>, pool: &Dataset, ep: &Episode, distance: Distance, lambda: (f64, f64)) -> Result<f64> {
    let mut g = Graph::new();
    let p = BoundParams::frozen(&mut g, &model.params);
    let setup = EpisodeSetup { distance, lambda, pass_size: 512, params: &p };
    let (loss, _) = episode_graph(&mut g, model, pool, ep, &setup)?;
    Ok(g.value(loss).item().as_f64())
}

/// Embeddings of every frame, computed in passes of `pass_size` frames.
pub fn embed_all<T: Element>(model: &Model<T>, ds: &Dataset, pass_size: usize) -> Result<Tensor<f64>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let parts = idx
        .par_chunks(pass_size.max(1))
        .map(|chunk| {
            let x = ds.input_tensor::<T>(chunk, model.config.normalize_input);
            model.embed(&x).map(|e| e.to_f64_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let d = model.config.feature_len();
    Tensor::new(&[ds.len(), d], parts.concat())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub k_shot: usize,
    pub n_way: usize,
    pub snr_db: i16,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrSummary {
    pub snr_db: i16,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaTestReport {
    pub n_way: usize,
    pub k_shot: usize,
    pub trials: usize,
    /// Mean and standard deviation over trials of the all-SNR accuracy.
    pub mean: f64,
    pub std: f64,
    pub per_snr: Vec<SnrSummary>,
    #[serde(skip)]
    pub results: Vec<TrialResult>,
}

impl MetaTestReport {
    /// Mean accuracy over SNRs at or above `min_snr`.
    pub fn accuracy_at_or_above(&self, min_snr: i16) -> Option<f64> {
        let v: Vec<f64> = self.per_snr.iter().filter(|s| s.snr_db >= min_snr).map(|s| s.mean).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("trial,k_shot,n_way,snr_db,accuracy\n");
        for r in &self.results {
            let _ = writeln!(s, "{},{},{},{},{:.6}", r.trial, r.k_shot, r.n_way, r.snr_db, r.accuracy);
        }
        s
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Fails when any pool class was seen during meta-training.
pub fn check_unseen(model: &ModelConfig, pool: &Dataset) -> Result<()> {
    let seen: Vec<ModulationScheme> = index_by_class(pool, |_| true)
        .into_keys()
        .filter(|m| model.classes.contains(m))
        .collect();
    if seen.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!("meta-test classes {seen:?} were used in meta-training")))
    }
}

/// Frozen-encoder evaluation: each trial draws one episode per SNR from the
/// pool, classifies its queries by nearest prototype, and records accuracy.
pub fn meta_test<T: Element>(
    model: &Model<T>,
    pool: &Dataset,
    spec: &EpisodeSpec,
    trials: usize,
    seed: u64,
    allow_seen: bool,
) -> Result<MetaTestReport> {
    spec.validate()?;
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    if !allow_seen {
        check_unseen(&model.config, pool)?;
    }
    if model.config.input_len != spec.length {
        return Err(Error::Config(format!(
            "encoder length {} differs from episode length {}",
            model.config.input_len, spec.length
        )));
    }
    let pool = adjust_dataset(pool, spec.length)?;
    let emb = embed_all(model, &pool, 512)?;
    let d = emb.shape()[1];
    let mut snrs: Vec<i16> = pool.frames.iter().map(|f| f.snr_db).collect();
    snrs.sort_unstable();
    snrs.dedup();
    let by_snr: Vec<(i16, BTreeMap<ModulationScheme, Vec<usize>>)> =
        snrs.iter().map(|&s| (s, index_by_class(&pool, |f| f.snr_db == s))).collect();

    let results = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream_rng(seed, META_TEST_STREAM + trial as u64);
            let mut out = Vec::with_capacity(by_snr.len());
            for (snr, by_class) in &by_snr {
                let ep = sample_episode_from(by_class, spec, &mut rng)?;
                let support: Vec<f64> = ep.support.iter().flat_map(|&i| emb.data()[i * d..(i + 1) * d].iter().copied()).collect();
                let protos = prototypes(&Tensor::new(&[ep.support.len(), d], support)?, &ep.support_labels, &ep.classes)?;
                let mut correct = 0;
                for (&i, &l) in ep.query.iter().zip(&ep.query_labels) {
                    let probs = classify_query(&protos, &emb.data()[i * d..(i + 1) * d], spec.distance)?;
                    let best = probs
                        .iter()
                        .enumerate()
                        .fold(0, |b, (j, &p)| if p > probs[b] { j } else { b });
                    correct += usize::from(best == l);
                }
                out.push(TrialResult {
                    trial,
                    k_shot: spec.k_shot,
                    n_way: spec.n_way,
                    snr_db: *snr,
                    accuracy: correct as f64 / ep.query.len() as f64,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let per_trial: Vec<f64> = results
        .iter()
        .map(|rs| rs.iter().map(|r| r.accuracy).sum::<f64>() / rs.len() as f64)
        .collect();
    let (mean, std) = mean_std(&per_trial);
    let per_snr = snrs
        .iter()
        .enumerate()
        .map(|(j, &snr)| {
            let v: Vec<f64> = results.iter().map(|rs| rs[j].accuracy).collect();
            let (mean, std) = mean_std(&v);
            SnrSummary { snr_db: snr, mean, std }
        })
        .collect();
    Ok(MetaTestReport {
        n_way: spec.n_way,
        k_shot: spec.k_shot,
        trials,
        mean,
        std,
        per_snr,
        results: results.into_iter().flatten().collect(),
    })
}

/// Meta-train / meta-test class splits over the synthetic scheme set,
/// patterned on the five published cases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    A,
    B,
    C,
    D,
    E,
}

impl Case {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Some(Self::A),
            "B" => Some(Self::B),
            "C" => Some(Self::C),
            "D" => Some(Self::D),
            "E" => Some(Self::E),
            _ => None,
        }
    }

    /// (meta-train classes, meta-test classes). Case E reuses every class
    /// on both sides and so needs the overlap check disabled.
    pub fn classes(self) -> (Vec<ModulationScheme>, Vec<ModulationScheme>) {
        use ModulationScheme::*;
        match self {
            Self::A => (vec![Ask4, Qpsk, Psk8, Qam64, AmDsb, Fm], vec![Ook, Bpsk, Qam16, Gfsk]),
            Self::B => (vec![Ook, Ask4, Bpsk, Psk8, Qam16, Qam64, Cpfsk, Gfsk], vec![AmDsb, Fm]),
            Self::C => (vec![Ook, Ask4, Bpsk, Qam64, Cpfsk, AmDsb], vec![Qam16, Qpsk, Psk8]),
            Self::D => (vec![Ook, Bpsk, Qpsk, Qam16, AmDsb, Gfsk], vec![Ask4, Psk8, Fm, Qam64]),
            Self::E => (ModulationScheme::ALL.to_vec(), ModulationScheme::ALL.to_vec()),
        }
    }

    pub fn allows_overlap(self) -> bool {
        self == Self::E
    }
}
