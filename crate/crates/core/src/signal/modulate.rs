//! Baseband waveform generation for every [`ModulationScheme`].

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rng::stream_rng;
use super::scheme::{ModulationScheme, SchemeKind};
use crate::error::{ensure, Result};

pub const DEFAULT_SAMPLES_PER_SYMBOL: usize = 8;
pub const RRC_ROLLOFF: f64 = 0.35;
/// Root-raised-cosine filter length in symbols.
pub const RRC_SPAN: usize = 8;
pub const GAUSSIAN_BT: f64 = 0.35;
const GAUSSIAN_SPAN: usize = 4;
pub const FSK_MODULATION_INDEX: f64 = 0.5;
/// Upper bound of the analog message bandwidth, cycles/sample.
pub const MESSAGE_BANDWIDTH: f64 = 0.05;
const MESSAGE_TONES: usize = 3;
const AM_INDEX: f64 = 0.5;
/// Peak FM frequency deviation, cycles/sample.
const FM_DEVIATION: f64 = 0.05;

/// Seeded, unit-power baseband waveform of `symbol_count * samples_per_symbol`
/// samples.
pub fn modulate(
    scheme: ModulationScheme,
    symbol_count: usize,
    samples_per_symbol: usize,
    seed: u64,
) -> Result<Vec<Complex64>> {
    let mut rng = stream_rng(seed, 0);
    modulate_with(scheme, symbol_count, samples_per_symbol, &mut rng)
}

pub(crate) fn modulate_with(
    scheme: ModulationScheme,
    symbol_count: usize,
    sps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Complex64>> {
    ensure!(sps >= 2, "samples per symbol must be at least 2, got {sps}");
    ensure!(symbol_count >= 1, "need at least one symbol");
    let mut x = match scheme.kind() {
        SchemeKind::Linear { bits_per_symbol } => {
            let bits: Vec<u8> = (0..symbol_count * bits_per_symbol as usize)
                .map(|_| rng.gen_range(0..2u8))
                .collect();
            let symbols = map_bits(scheme, &bits)?;
            pulse_shape(&symbols, sps, &rrc_taps(RRC_ROLLOFF, sps, RRC_SPAN))
        }
        SchemeKind::FrequencyShift { gaussian } => {
            let symbols: Vec<f64> = (0..symbol_count)
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            cpfsk(&symbols, sps, gaussian)
        }
        SchemeKind::Analog => {
            let msg = analog_message(symbol_count * sps, rng);
            match scheme {
                ModulationScheme::AmDsb => msg
                    .iter()
                    .map(|&m| Complex64::new(1.0 + AM_INDEX * m, 0.0))
                    .collect(),
                _ => {
                    let mut phase = 0.0;
                    msg.iter()
                        .map(|&m| {
                            phase += 2.0 * PI * FM_DEVIATION * m;
                            Complex64::from_polar(1.0, phase)
                        })
                        .collect()
                }
            }
        }
    };
    normalize_power(&mut x);
    Ok(x)
}

/// Maps bits (one per `u8`, most significant first) onto constellation points.
pub fn map_bits(scheme: ModulationScheme, bits: &[u8]) -> Result<Vec<Complex64>> {
    let SchemeKind::Linear { bits_per_symbol } = scheme.kind() else {
        return Err(crate::error::contract!("{scheme} has no constellation"));
    };
    let k = bits_per_symbol as usize;
    ensure!(bits.len().is_multiple_of(k), "{} bits do not fill {k}-bit symbols", bits.len());
    let table = scheme.constellation().expect("linear scheme");
    Ok(bits
        .chunks_exact(k)
        .map(|chunk| {
            let idx = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
            table[idx]
        })
        .collect())
}

/// Unit-energy root-raised-cosine taps, `span * sps + 1` long.
pub fn rrc_taps(beta: f64, sps: usize, span: usize) -> Vec<f64> {
    let n = span * sps;
    let mut taps: Vec<f64> = (0..=n)
        .map(|i| {
            let t = (i as f64 - n as f64 / 2.0) / sps as f64;
            if t.abs() < 1e-12 {
                1.0 - beta + 4.0 * beta / PI
            } else if (t.abs() - 1.0 / (4.0 * beta)).abs() < 1e-12 {
                beta / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * beta)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * beta)).cos())
            } else {
                let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
                let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
                num / den
            }
        })
        .collect();
    let e = taps.iter().map(|v| v * v).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|v| *v /= e);
    taps
}

/// Upsamples by `sps` and filters; sample `k * sps` sits on the peak of
/// symbol `k`.
pub fn pulse_shape(symbols: &[Complex64], sps: usize, taps: &[f64]) -> Vec<Complex64> {
    let delay = (taps.len() - 1) / 2;
    let len = symbols.len() * sps;
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (k, &s) in symbols.iter().enumerate() {
        let centre = k * sps;
        for (j, &h) in taps.iter().enumerate() {
            let pos = centre + j;
            if pos < delay {
                continue;
            }
            let n = pos - delay;
            if n < len {
                out[n] += s * h;
            }
        }
    }
    out
}

fn gaussian_taps(bt: f64, sps: usize) -> Vec<f64> {
    let n = GAUSSIAN_SPAN * sps;
    let alpha = (2.0 / 2f64.ln()).sqrt() * PI * bt;
    let mut taps: Vec<f64> = (0..=n)
        .map(|i| {
            let t = (i as f64 - n as f64 / 2.0) / sps as f64;
            (-(alpha * t).powi(2)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|v| *v /= s);
    taps
}

fn cpfsk(symbols: &[f64], sps: usize, gaussian: bool) -> Vec<Complex64> {
    let mut freq: Vec<f64> = symbols.iter().flat_map(|&s| std::iter::repeat_n(s, sps)).collect();
    if gaussian {
        let taps = gaussian_taps(GAUSSIAN_BT, sps);
        let delay = (taps.len() - 1) / 2;
        let len = freq.len();
        let src = freq.clone();
        for (n, f) in freq.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &h) in taps.iter().enumerate() {
                let idx = n as isize + j as isize - delay as isize;
                let v = if idx < 0 {
                    src[0]
                } else if idx as usize >= len {
                    src[len - 1]
                } else {
                    src[idx as usize]
                };
                acc += h * v;
            }
            *f = acc;
        }
    }
    let step = PI * FSK_MODULATION_INDEX / sps as f64;
    let mut phase = 0.0;
    freq.iter()
        .map(|&f| {
            phase += step * f;
            Complex64::from_polar(1.0, phase)
        })
        .collect()
}

/// Sum of three random tones below [`MESSAGE_BANDWIDTH`], peak-normalized.
fn analog_message(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let tones: Vec<(f64, f64, f64)> = (0..MESSAGE_TONES)
        .map(|_| {
            let f = rng.gen_range(0.002..MESSAGE_BANDWIDTH);
            let amp = rng.gen_range(0.3..1.0);
            let ph = rng.gen_range(0.0..2.0 * PI);
            (f, amp, ph)
        })
        .collect();
    let mut m: Vec<f64> = (0..len)
        .map(|n| {
            tones
                .iter()
                .map(|&(f, a, p)| a * (2.0 * PI * f * n as f64 + p).cos())
                .sum()
        })
        .collect();
    let peak = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-12);
    m.iter_mut().for_each(|v| *v /= peak);
    m
}

pub(crate) fn normalize_power(x: &mut [Complex64]) {
    let p = x.iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64;
    if p > 0.0 {
        let s = p.sqrt();
        x.iter_mut().for_each(|c| *c /= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power(x: &[Complex64]) -> f64 {
        x.iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn bpsk_maps_bits_antipodally() {
        let s = map_bits(ModulationScheme::Bpsk, &[0, 1]).unwrap();
        assert_eq!(s, vec![Complex64::new(-1.0, 0.0), Complex64::new(1.0, 0.0)]);
        assert!(map_bits(ModulationScheme::Qpsk, &[0, 1, 1]).is_err());
        assert!(map_bits(ModulationScheme::Fm, &[0]).is_err());
    }

    #[test]
    fn every_scheme_is_unit_power_with_requested_length() {
        for m in ModulationScheme::ALL {
            let x = modulate(m, 64, 8, 7).unwrap();
            assert_eq!(x.len(), 512);
            assert!((power(&x) - 1.0).abs() < 1e-9, "{m}");
        }
    }

    #[test]
    fn rejects_undersampled_pulses() {
        assert!(modulate(ModulationScheme::Bpsk, 8, 1, 0).is_err());
    }

    #[test]
    fn rrc_is_unit_energy_and_symmetric() {
        let h = rrc_taps(RRC_ROLLOFF, 8, RRC_SPAN);
        assert_eq!(h.len(), 65);
        assert!((h.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..h.len() {
            assert!((h[i] - h[h.len() - 1 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn matched_filter_recovers_bpsk_bits() {
        let sps = 8;
        let taps = rrc_taps(RRC_ROLLOFF, sps, RRC_SPAN);
        let mut rng = stream_rng(11, 3);
        let bits: Vec<u8> = (0..200).map(|_| rng.gen_range(0..2)).collect();
        let symbols = map_bits(ModulationScheme::Bpsk, &bits).unwrap();
        let tx = pulse_shape(&symbols, sps, &taps);
        // matched filtering with the same (symmetric) RRC gives a raised cosine
        let rx = pulse_shape_stream(&tx, &taps);
        for (k, &b) in bits.iter().enumerate() {
            let decided = u8::from(rx[k * sps].re > 0.0);
            assert_eq!(decided, b, "symbol {k}");
        }
    }

    fn pulse_shape_stream(x: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
        let delay = (taps.len() - 1) / 2;
        (0..x.len())
            .map(|n| {
                taps.iter()
                    .enumerate()
                    .filter_map(|(j, &h)| {
                        let idx = n as isize + j as isize - delay as isize;
                        (0..x.len() as isize).contains(&idx).then(|| x[idx as usize] * h)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn fsk_is_constant_envelope() {
        for m in [ModulationScheme::Cpfsk, ModulationScheme::Gfsk, ModulationScheme::Fm] {
            let x = modulate(m, 32, 8, 1).unwrap();
            for c in &x {
                assert!((c.norm() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_same_waveform() {
        let a = modulate(ModulationScheme::Qam16, 40, 8, 5).unwrap();
        let b = modulate(ModulationScheme::Qam16, 40, 8, 5).unwrap();
        let c = modulate(ModulationScheme::Qam16, 40, 8, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
