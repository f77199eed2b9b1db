use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::signal::{stream_rng, Dataset};

/// Stream offset reserved for splitting.
const SPLIT_STREAM: u64 = 0x5917_0000_0000_0000;

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.6, val: 0.2, test: 0.2 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {parts:?} must be in [0, 1] and sum to 1")));
        }
        Ok(())
    }
}

/// Splits every (scheme, SNR) cell independently: `floor` for train and
/// validation, remainder to test.
pub fn stratified_split(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let [a, b, c] = stratified_split_indices(ds, ratios, seed)?;
    Ok((ds.subset(&a), ds.subset(&b), ds.subset(&c)))
}

/// Frame indices of the (train, validation, test) partitions, each sorted.
pub fn stratified_split_indices(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<[Vec<usize>; 3]> {
    ratios.validate()?;
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (cell_no, ((scheme, snr), mut idx)) in ds.cells().into_iter().enumerate() {
        let n = idx.len();
        // floor with a small tolerance so 100·0.6 is 60, not 59
        let n_train = (n as f64 * ratios.train + 1e-9).floor() as usize;
        let n_val = (n as f64 * ratios.val + 1e-9).floor() as usize;
        let n_test = n - n_train - n_val;
        for (want, got, name) in [(ratios.train, n_train, "train"), (ratios.val, n_val, "validation"), (ratios.test, n_test, "test")] {
            if want > 0.0 && got == 0 {
                return Err(Error::Data(format!(
                    "cell {scheme}/{snr} dB with {n} frames is too small for a {name} partition"
                )));
            }
        }
        let mut rng = stream_rng(seed, SPLIT_STREAM + cell_no as u64);
        idx.shuffle(&mut rng);
        parts[0].extend_from_slice(&idx[..n_train]);
        parts[1].extend_from_slice(&idx[n_train..n_train + n_val]);
        parts[2].extend_from_slice(&idx[n_train + n_val..]);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synth_dataset, ImpairmentProfile, ModulationScheme, SynthConfig};

    fn ds(per_cell: usize) -> Dataset {
        synth_dataset(&SynthConfig::new(
            vec![ModulationScheme::Bpsk, ModulationScheme::Qpsk],
            vec![0, 10],
            per_cell,
            16,
            ImpairmentProfile::Clean,
            1,
        ))
        .unwrap()
    }

    #[test]
    fn six_two_two() {
        let d = ds(100);
        let (a, b, c) = stratified_split(&d, SplitRatios::default(), 3).unwrap();
        assert_eq!(a.meta.frames_per_cell, 60);
        assert_eq!(b.meta.frames_per_cell, 20);
        assert_eq!(c.meta.frames_per_cell, 20);
        let mut all: Vec<_> = a.frames.iter().chain(&b.frames).chain(&c.frames).map(|f| f.i.clone()).collect();
        let mut orig: Vec<_> = d.frames.iter().map(|f| f.i.clone()).collect();
        all.sort_by(|x, y| x.partial_cmp(y).unwrap());
        orig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(all, orig);
        let again = stratified_split(&d, SplitRatios::default(), 3).unwrap();
        assert_eq!(again.0, a);
    }

    #[test]
    fn all_to_train() {
        let d = ds(7);
        let r = SplitRatios { train: 1.0, val: 0.0, test: 0.0 };
        let (a, b, c) = stratified_split(&d, r, 3).unwrap();
        assert_eq!(a.len(), d.len());
        assert!(b.is_empty() && c.is_empty());
    }

    #[test]
    fn errors() {
        assert!(stratified_split(&ds(3), SplitRatios::default(), 0).is_err());
        let r = SplitRatios { train: 0.5, val: 0.2, test: 0.2 };
        assert!(stratified_split(&ds(10), r, 0).is_err());
    }
}
