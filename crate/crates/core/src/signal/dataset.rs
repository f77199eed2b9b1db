use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::channel::{apply_channel_with, ChannelSpec, Multipath};
use super::modulate::{modulate_with, normalize_power, DEFAULT_SAMPLES_PER_SYMBOL, RRC_SPAN};
use super::rng::stream_rng;
use super::scheme::ModulationScheme;
use crate::error::{ensure, Error, Result};
use crate::tensor::{Element, Tensor};

pub const DATASET_VERSION: u32 = 1;
pub const DATA_FILE: &str = "dataset.bin";
pub const META_FILE: &str = "dataset.json";

/// Named impairment presets for [`synth_dataset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImpairmentProfile {
    Clean,
    Standard,
    Harsh,
}

impl ImpairmentProfile {
    pub fn ranges(self) -> ImpairmentRanges {
        match self {
            Self::Clean => ImpairmentRanges {
                cfo_max: 0.0,
                random_phase: false,
                multipath: None,
            },
            Self::Standard => ImpairmentRanges {
                cfo_max: 0.01,
                random_phase: true,
                multipath: None,
            },
            Self::Harsh => ImpairmentRanges {
                cfo_max: 0.02,
                random_phase: true,
                multipath: Some(MultipathRange {
                    max_delay: 3,
                    max_gain: 0.5,
                }),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultipathRange {
    pub max_delay: usize,
    pub max_gain: f64,
}

/// Per-frame impairments are drawn uniformly from these ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentRanges {
    /// CFO is drawn from `[-cfo_max, cfo_max]` cycles/sample.
    pub cfo_max: f64,
    /// Draw the carrier phase from `[0, 2π)`; otherwise it is zero.
    pub random_phase: bool,
    pub multipath: Option<MultipathRange>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub schemes: Vec<ModulationScheme>,
    pub snr_grid: Vec<i16>,
    pub frames_per_cell: usize,
    pub length: usize,
    pub impairments: ImpairmentRanges,
    pub samples_per_symbol: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(
        schemes: Vec<ModulationScheme>,
        snr_grid: Vec<i16>,
        frames_per_cell: usize,
        length: usize,
        profile: ImpairmentProfile,
        seed: u64,
    ) -> Self {
        Self {
            schemes,
            snr_grid,
            frames_per_cell,
            length,
            impairments: profile.ranges(),
            samples_per_symbol: DEFAULT_SAMPLES_PER_SYMBOL,
            seed,
        }
    }
}

/// SNR values from `min` to `max` inclusive.
pub fn snr_range(min: i16, max: i16, step: i16) -> Result<Vec<i16>> {
    ensure!(step > 0, "SNR step must be positive");
    ensure!(min <= max, "SNR min {min} above max {max}");
    Ok((min..=max).step_by(step as usize).collect())
}

/// One received frame: `length` I samples and `length` Q samples.
#[derive(Clone, Debug, PartialEq)]
pub struct IQFrame {
    pub i: Vec<f32>,
    pub q: Vec<f32>,
    pub scheme: ModulationScheme,
    pub snr_db: i16,
}

impl IQFrame {
    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    pub fn power(&self) -> f64 {
        let s: f64 = self
            .i
            .iter()
            .zip(&self.q)
            .map(|(&a, &b)| (a as f64).powi(2) + (b as f64).powi(2))
            .sum();
        s / self.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub schemes: Vec<ModulationScheme>,
    pub snr_grid: Vec<i16>,
    pub length: usize,
    pub frames_per_cell: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub frames: Vec<IQFrame>,
}

/// Stream number of a frame; independent of which other cells are generated.
fn frame_stream(scheme: ModulationScheme, snr: i16, index: usize) -> u64 {
    ((scheme.id() as u64) << 48) | ((snr as u16 as u64) << 32) | index as u64
}

pub fn synth_frame(cfg: &SynthConfig, scheme: ModulationScheme, snr: i16, index: usize) -> Result<IQFrame> {
    let sps = cfg.samples_per_symbol;
    let len = cfg.length;
    let mut rng = stream_rng(cfg.seed, frame_stream(scheme, snr, index));
    let timing = rng.gen_range(0..sps);
    let symbols = len.div_ceil(sps) + RRC_SPAN + 2;
    let x = modulate_with(scheme, symbols, sps, &mut rng)?;
    let start = (RRC_SPAN / 2) * sps + timing;
    let mut window: Vec<Complex64> = x[start..start + len].to_vec();
    normalize_power(&mut window);

    let imp = &cfg.impairments;
    let cfo = if imp.cfo_max > 0.0 {
        rng.gen_range(-imp.cfo_max..=imp.cfo_max)
    } else {
        0.0
    };
    let phase = if imp.random_phase {
        rng.gen_range(0.0..2.0 * PI)
    } else {
        0.0
    };
    let multipath = imp.multipath.map(|mp| {
        let delay = rng.gen_range(1..=mp.max_delay.max(1));
        let g = Complex64::from_polar(rng.gen_range(0.0..=mp.max_gain), rng.gen_range(0.0..2.0 * PI));
        Multipath {
            delay,
            gain_re: g.re,
            gain_im: g.im,
        }
    });
    let ch = ChannelSpec {
        snr_db: snr as f64,
        cfo,
        phase,
        multipath,
        seed: cfg.seed,
    };
    let y = apply_channel_with(&window, &ch, &mut rng)?;
    Ok(IQFrame {
        i: y.iter().map(|c| c.re as f32).collect(),
        q: y.iter().map(|c| c.im as f32).collect(),
        scheme,
        snr_db: snr,
    })
}

/// Generates `frames_per_cell` frames for every (scheme, SNR) cell, ordered
/// scheme-major then SNR then index. Frames are synthesized in parallel but
/// the result depends only on `cfg`.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    ensure!(!cfg.schemes.is_empty(), "empty scheme list");
    ensure!(cfg.frames_per_cell > 0, "frames per cell must be positive");
    ensure!(!cfg.snr_grid.is_empty(), "empty SNR grid");
    ensure!(cfg.length > 0, "frame length must be positive");
    let mut seen = cfg.schemes.clone();
    seen.sort();
    seen.dedup();
    ensure!(seen.len() == cfg.schemes.len(), "duplicate schemes in {:?}", cfg.schemes);
    let jobs: Vec<(ModulationScheme, i16, usize)> = cfg
        .schemes
        .iter()
        .flat_map(|&m| {
            cfg.snr_grid
                .iter()
                .flat_map(move |&s| (0..cfg.frames_per_cell).map(move |k| (m, s, k)))
        })
        .collect();
    let frames = jobs
        .par_iter()
        .map(|&(m, s, k)| synth_frame(cfg, m, s, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            version: DATASET_VERSION,
            schemes: cfg.schemes.clone(),
            snr_grid: cfg.snr_grid.clone(),
            length: cfg.length,
            frames_per_cell: cfg.frames_per_cell,
            seed: cfg.seed,
        },
        frames,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.meta.schemes.len()
    }

    /// Class index of a scheme: its position in `meta.schemes`.
    pub fn class_of(&self, scheme: ModulationScheme) -> Option<usize> {
        self.meta.schemes.iter().position(|&m| m == scheme)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.frames
            .iter()
            .map(|f| self.class_of(f.scheme).expect("frame scheme listed in meta"))
            .collect()
    }

    /// Frame indices grouped by (scheme, SNR) cell.
    pub fn cells(&self) -> BTreeMap<(ModulationScheme, i16), Vec<usize>> {
        let mut cells: BTreeMap<_, Vec<usize>> = BTreeMap::new();
        for (i, f) in self.frames.iter().enumerate() {
            cells.entry((f.scheme, f.snr_db)).or_default().push(i);
        }
        cells
    }

    /// A new dataset holding the given frames; per-cell count is recomputed
    /// (zero when the cells are not balanced).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let frames: Vec<IQFrame> = indices.iter().map(|&i| self.frames[i].clone()).collect();
        self.with_frames(frames)
    }

    pub fn filter(&self, keep: impl Fn(&IQFrame) -> bool) -> Dataset {
        self.with_frames(self.frames.iter().filter(|f| keep(f)).cloned().collect())
    }

    fn with_frames(&self, frames: Vec<IQFrame>) -> Dataset {
        let mut out = Dataset {
            meta: self.meta.clone(),
            frames,
        };
        let counts: Vec<usize> = out.cells().values().map(Vec::len).collect();
        out.meta.frames_per_cell = match counts.split_first() {
            Some((&first, rest)) if rest.iter().all(|&c| c == first) => first,
            _ => 0,
        };
        out
    }

    /// Network input (N, 1, 2, L) for the given frames. With `normalize`
    /// each frame is scaled to unit received power.
    pub fn input_tensor<T: Element>(&self, indices: &[usize], normalize: bool) -> Tensor<T> {
        frames_to_tensor(indices.iter().map(|&i| &self.frames[i]), normalize)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut bytes = Vec::with_capacity(self.len() * (4 + 8 * self.meta.length));
        for f in &self.frames {
            ensure!(f.len() == self.meta.length, "frame length {} != {}", f.len(), self.meta.length);
            bytes.extend_from_slice(&f.scheme.id().to_le_bytes());
            bytes.extend_from_slice(&f.snr_db.to_le_bytes());
            for v in f.i.iter().chain(&f.q) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(dir.join(DATA_FILE), bytes)?;
        let mut meta = serde_json::to_string_pretty(&self.meta)?;
        meta.push('\n');
        fs::write(dir.join(META_FILE), meta)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let meta: DatasetMeta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?)
            .map_err(|e| Error::Format(format!("{}: {e}", META_FILE)))?;
        if meta.version != DATASET_VERSION {
            return Err(Error::Format(format!(
                "dataset version {} unsupported (expected {DATASET_VERSION})",
                meta.version
            )));
        }
        let bytes = fs::read(dir.join(DATA_FILE))?;
        let len = meta.length;
        let record = 4 + 8 * len;
        if len == 0 || bytes.len() % record != 0 {
            return Err(Error::Format(format!(
                "{} bytes is not a whole number of {record}-byte records",
                bytes.len()
            )));
        }
        let mut frames = Vec::with_capacity(bytes.len() / record);
        for rec in bytes.chunks_exact(record) {
            let id = u16::from_le_bytes([rec[0], rec[1]]);
            let scheme = ModulationScheme::from_id(id)
                .filter(|m| meta.schemes.contains(m))
                .ok_or_else(|| Error::Format(format!("scheme id {id} not in dataset schemes")))?;
            let snr_db = i16::from_le_bytes([rec[2], rec[3]]);
            let vals: Vec<f32> = rec[4..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            frames.push(IQFrame {
                i: vals[..len].to_vec(),
                q: vals[len..].to_vec(),
                scheme,
                snr_db,
            });
        }
        Ok(Dataset { meta, frames })
    }
}

pub fn frames_to_tensor<'a, T: Element>(frames: impl Iterator<Item = &'a IQFrame>, normalize: bool) -> Tensor<T> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut len = 0;
    for f in frames {
        len = f.len();
        let scale = if normalize {
            let p = f.power();
            if p > 0.0 { 1.0 / p.sqrt() } else { 1.0 }
        } else {
            1.0
        };
        data.extend(f.i.iter().chain(&f.q).map(|&v| T::of(v as f64 * scale)));
        n += 1;
    }
    Tensor::from_parts(vec![n, 1, 2, len], data)
}
