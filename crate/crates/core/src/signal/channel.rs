use std::f64::consts::PI;

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng::stream_rng;
use crate::error::{ensure, Result};

/// Second propagation path: `gain * x[k - delay]` is added to `x[k]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multipath {
    pub delay: usize,
    pub gain_re: f64,
    pub gain_im: f64,
}

/// Channel applied to a unit-power transmit sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub snr_db: f64,
    /// Carrier frequency offset in cycles per sample.
    pub cfo: f64,
    /// Carrier phase in radians.
    pub phase: f64,
    pub multipath: Option<Multipath>,
    pub seed: u64,
}

impl ChannelSpec {
    pub fn awgn(snr_db: f64, seed: u64) -> Self {
        Self {
            snr_db,
            cfo: 0.0,
            phase: 0.0,
            multipath: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            (-20.0..=30.0).contains(&self.snr_db),
            "SNR {} dB outside [-20, 30]",
            self.snr_db
        );
        ensure!(self.cfo.abs() < 0.1, "CFO {} outside (-0.1, 0.1) cycles/sample", self.cfo);
        Ok(())
    }

    /// Total noise power relative to the unit signal power.
    pub fn noise_power(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }
}

/// Multipath, carrier rotation and complex white Gaussian noise, with noise
/// drawn from the channel's own seed.
pub fn apply_channel(x: &[Complex64], ch: &ChannelSpec) -> Result<Vec<Complex64>> {
    let mut rng = stream_rng(ch.seed, 0);
    apply_channel_with(x, ch, &mut rng)
}

pub(crate) fn apply_channel_with(
    x: &[Complex64],
    ch: &ChannelSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Complex64>> {
    ch.validate()?;
    let sigma = (ch.noise_power() / 2.0).sqrt();
    Ok(distort(x, ch)
        .into_iter()
        .map(|y| {
            let nr: f64 = StandardNormal.sample(rng);
            let ni: f64 = StandardNormal.sample(rng);
            y + Complex64::new(nr, ni) * sigma
        })
        .collect())
}

/// The deterministic part of the channel: FIR then rotation, no noise.
pub fn distort(x: &[Complex64], ch: &ChannelSpec) -> Vec<Complex64> {
    x.iter()
        .enumerate()
        .map(|(k, &v)| {
            let mut y = v;
            if let Some(mp) = ch.multipath {
                if k >= mp.delay {
                    y += x[k - mp.delay] * Complex64::new(mp.gain_re, mp.gain_im);
                }
            }
            y * Complex64::from_polar(1.0, 2.0 * PI * ch.cfo * k as f64 + ch.phase)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{modulate, ModulationScheme};

    #[test]
    fn zero_db_noise_matches_signal_power() {
        let x = vec![Complex64::new(0.0, 0.0); 200_000];
        let y = apply_channel(&x, &ChannelSpec::awgn(0.0, 3)).unwrap();
        let p = y.iter().map(|c| c.norm_sqr()).sum::<f64>() / y.len() as f64;
        assert!((p - 1.0).abs() < 0.01, "{p}");
    }

    #[test]
    fn half_turn_negates() {
        let x = modulate(ModulationScheme::Qpsk, 16, 8, 1).unwrap();
        let ch = ChannelSpec {
            phase: PI,
            ..ChannelSpec::awgn(0.0, 0)
        };
        for (a, b) in distort(&x, &ch).iter().zip(&x) {
            assert!((a + b).norm() < 1e-12);
        }
    }

    #[test]
    fn measured_snr_tracks_request() {
        // average over 100 frames of 1024 samples
        for snr in [-10.0, 0.0, 10.0] {
            let mut ratio = 0.0;
            for seed in 0..100u64 {
                let x = modulate(ModulationScheme::Qam16, 128, 8, seed).unwrap();
                let ch = ChannelSpec::awgn(snr, seed);
                let y = apply_channel(&x, &ch).unwrap();
                let noise: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / 1024.0;
                let sig: f64 = x.iter().map(|c| c.norm_sqr()).sum::<f64>() / 1024.0;
                ratio += sig / noise;
            }
            let measured = 10.0 * (ratio / 100.0).log10();
            assert!((measured - snr).abs() < 0.5, "requested {snr}, measured {measured}");
        }
    }

    #[test]
    fn out_of_range_specs_are_rejected() {
        let x = vec![Complex64::new(1.0, 0.0); 4];
        assert!(apply_channel(&x, &ChannelSpec::awgn(31.0, 0)).is_err());
        let ch = ChannelSpec { cfo: 0.2, ..ChannelSpec::awgn(0.0, 0) };
        assert!(apply_channel(&x, &ch).is_err());
    }

    #[test]
    fn multipath_adds_delayed_copy() {
        let x = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)];
        let ch = ChannelSpec {
            multipath: Some(Multipath { delay: 2, gain_re: 0.5, gain_im: 0.0 }),
            ..ChannelSpec::awgn(0.0, 0)
        };
        let y = distort(&x, &ch);
        assert!((y[2] - Complex64::new(0.5, 0.0)).norm() < 1e-12);
    }
}
