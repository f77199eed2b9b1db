use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{stream_rng, Dataset, IQFrame, ModulationScheme};

/// Distance used between query embeddings and prototypes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    #[default]
    SquaredEuclidean,
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    /// Every frame is cut or tiled to this length.
    pub length: usize,
    pub distance: Distance,
}

impl EpisodeSpec {
    pub fn new(n_way: usize, k_shot: usize, q_query: usize, length: usize) -> Self {
        Self { n_way, k_shot, q_query, length, distance: Distance::SquaredEuclidean }
    }

    /// Accepts `n_way = 1` (a degenerate evaluation case); training
    /// additionally requires two classes.
    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 || self.q_query == 0 || self.length == 0 {
            return Err(Error::Config(format!(
                "episode needs positive way/shot/query/length, got {}/{}/{}/{}",
                self.n_way, self.k_shot, self.q_query, self.length
            )));
        }
        Ok(())
    }
}

/// Cuts a frame to its first `z` samples, or tiles it cyclically to `z`.
pub fn adjust_length(frame: &IQFrame, z: usize) -> Result<IQFrame> {
    if frame.is_empty() {
        return Err(Error::Data("cannot adjust an empty frame".into()));
    }
    if z == 0 {
        return Err(Error::Config("target length must be positive".into()));
    }
    let fit = |v: &[f32]| v.iter().cycle().take(z).copied().collect::<Vec<f32>>();
    Ok(IQFrame { i: fit(&frame.i), q: fit(&frame.q), scheme: frame.scheme, snr_db: frame.snr_db })
}

pub fn adjust_dataset(ds: &Dataset, z: usize) -> Result<Dataset> {
    if ds.meta.length == z {
        return Ok(ds.clone());
    }
    let frames = ds.frames.iter().map(|f| adjust_length(f, z)).collect::<Result<Vec<_>>>()?;
    let mut meta = ds.meta.clone();
    meta.length = z;
    Ok(Dataset { meta, frames })
}

/// `floor(p_train·N / (N_S + N_Q) · epochs)`.
pub fn episode_count(n: usize, p_train: f64, n_support: usize, n_query: usize, epochs: usize) -> Result<usize> {
    if n_support + n_query == 0 {
        return Err(Error::Config("support plus query size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&p_train) {
        return Err(Error::Config(format!("training fraction {p_train} outside [0, 1]")));
    }
    // the small nudge keeps exact products such as 0.7·1000/100·2 = 14 from flooring to 13
    let v = p_train * n as f64 / (n_support + n_query) as f64 * epochs as f64;
    Ok((v + 1e-9).floor() as usize)
}

/// Support and query indices into a pool, with episode-local labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    /// Class-major: `k_shot` frames of local class 0, then class 1, ...
    pub support: Vec<usize>,
    pub support_labels: Vec<usize>,
    pub query: Vec<usize>,
    pub query_labels: Vec<usize>,
    /// Scheme behind each local label.
    pub classes: Vec<ModulationScheme>,
}

impl Episode {
    /// Support rows of each local class, for prototype averaging.
    pub fn support_groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.classes.len()];
        for (row, &l) in self.support_labels.iter().enumerate() {
            groups[l].push(row);
        }
        groups
    }
}

/// Frame indices by scheme.
pub fn index_by_class(ds: &Dataset, keep: impl Fn(&IQFrame) -> bool) -> BTreeMap<ModulationScheme, Vec<usize>> {
    let mut by: BTreeMap<ModulationScheme, Vec<usize>> = BTreeMap::new();
    for (i, f) in ds.frames.iter().enumerate() {
        if keep(f) {
            by.entry(f.scheme).or_default().push(i);
        }
    }
    by
}

/// Uniform class choice, then uniform disjoint support and query draws,
/// all without replacement.
pub fn sample_episode_from<R: Rng>(
    by_class: &BTreeMap<ModulationScheme, Vec<usize>>,
    spec: &EpisodeSpec,
    rng: &mut R,
) -> Result<Episode> {
    spec.validate()?;
    let need = spec.k_shot + spec.q_query;
    if by_class.len() < spec.n_way {
        return Err(Error::Data(format!(
            "{}-way episode from a pool of {} classes",
            spec.n_way,
            by_class.len()
        )));
    }
    if let Some((m, v)) = by_class.iter().find(|(_, v)| v.len() < need) {
        return Err(Error::Data(format!("class {m} has {} frames, episode needs {need}", v.len())));
    }
    let keys: Vec<ModulationScheme> = by_class.keys().copied().collect();
    let classes: Vec<ModulationScheme> = keys.choose_multiple(rng, spec.n_way).copied().collect();
    let mut ep = Episode {
        support: Vec::with_capacity(spec.n_way * spec.k_shot),
        support_labels: Vec::with_capacity(spec.n_way * spec.k_shot),
        query: Vec::with_capacity(spec.n_way * spec.q_query),
        query_labels: Vec::with_capacity(spec.n_way * spec.q_query),
        classes,
    };
    for (local, m) in ep.classes.iter().enumerate() {
        let pool = &by_class[m];
        let picks = index::sample(rng, pool.len(), need);
        for (j, p) in picks.into_iter().enumerate() {
            if j < spec.k_shot {
                ep.support.push(pool[p]);
                ep.support_labels.push(local);
            } else {
                ep.query.push(pool[p]);
                ep.query_labels.push(local);
            }
        }
    }
    Ok(ep)
}

pub fn sample_episode(pool: &Dataset, spec: &EpisodeSpec, seed: u64) -> Result<Episode> {
    let mut rng = stream_rng(seed, super::EPISODE_STREAM);
    sample_episode_from(&index_by_class(pool, |_| true), spec, &mut rng)
}
