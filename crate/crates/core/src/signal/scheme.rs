use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Modulation schemes of the synthetic corpus. Discriminants are the
/// on-disk scheme ids and never change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
#[repr(u16)]
pub enum ModulationScheme {
    Ook = 0,
    Ask4 = 1,
    Bpsk = 2,
    Qpsk = 3,
    Psk8 = 4,
    Qam16 = 5,
    Qam64 = 6,
    Cpfsk = 7,
    Gfsk = 8,
    AmDsb = 9,
    Fm = 10,
}

/// How a scheme produces its baseband waveform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeKind {
    /// Constellation mapping followed by pulse shaping.
    Linear { bits_per_symbol: u32 },
    /// Continuous-phase frequency shift keying of binary symbols.
    FrequencyShift { gaussian: bool },
    Analog,
}

impl ModulationScheme {
    pub const ALL: [ModulationScheme; 11] = [
        Self::Ook,
        Self::Ask4,
        Self::Bpsk,
        Self::Qpsk,
        Self::Psk8,
        Self::Qam16,
        Self::Qam64,
        Self::Cpfsk,
        Self::Gfsk,
        Self::AmDsb,
        Self::Fm,
    ];

    pub fn id(self) -> u16 {
        self as u16
    }

    pub fn from_id(id: u16) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ook => "OOK",
            Self::Ask4 => "4ASK",
            Self::Bpsk => "BPSK",
            Self::Qpsk => "QPSK",
            Self::Psk8 => "8PSK",
            Self::Qam16 => "16QAM",
            Self::Qam64 => "64QAM",
            Self::Cpfsk => "CPFSK",
            Self::Gfsk => "GFSK",
            Self::AmDsb => "AM-DSB",
            Self::Fm => "FM",
        }
    }

    pub fn kind(self) -> SchemeKind {
        match self {
            Self::Ook | Self::Bpsk => SchemeKind::Linear { bits_per_symbol: 1 },
            Self::Ask4 | Self::Qpsk => SchemeKind::Linear { bits_per_symbol: 2 },
            Self::Psk8 => SchemeKind::Linear { bits_per_symbol: 3 },
            Self::Qam16 => SchemeKind::Linear { bits_per_symbol: 4 },
            Self::Qam64 => SchemeKind::Linear { bits_per_symbol: 6 },
            Self::Cpfsk => SchemeKind::FrequencyShift { gaussian: false },
            Self::Gfsk => SchemeKind::FrequencyShift { gaussian: true },
            Self::AmDsb | Self::Fm => SchemeKind::Analog,
        }
    }

    /// Unit-average-power constellation indexed by the symbol's bit pattern
    /// (first bit most significant). `None` for non-linear schemes.
    pub fn constellation(self) -> Option<Vec<Complex64>> {
        let points = match self {
            Self::Ook => vec![Complex64::new(0.0, 0.0), Complex64::new(2f64.sqrt(), 0.0)],
            Self::Bpsk => vec![Complex64::new(-1.0, 0.0), Complex64::new(1.0, 0.0)],
            Self::Ask4 => {
                let s = 5f64.sqrt();
                // Gray: 00 -3, 01 -1, 11 +1, 10 +3
                vec![-3.0, -1.0, 3.0, 1.0]
                    .into_iter()
                    .map(|a| Complex64::new(a / s, 0.0))
                    .collect()
            }
            Self::Qpsk => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                (0..4)
                    .map(|b| {
                        let re = if b & 0b10 == 0 { a } else { -a };
                        let im = if b & 0b01 == 0 { a } else { -a };
                        Complex64::new(re, im)
                    })
                    .collect()
            }
            Self::Psk8 => {
                let mut pts = vec![Complex64::new(0.0, 0.0); 8];
                for m in 0..8usize {
                    let gray = m ^ (m >> 1);
                    let ang = 2.0 * std::f64::consts::PI * m as f64 / 8.0;
                    pts[gray] = Complex64::from_polar(1.0, ang);
                }
                pts
            }
            Self::Qam16 => square_qam(2),
            Self::Qam64 => square_qam(3),
            _ => return None,
        };
        Some(points)
    }
}

/// Gray-coded square QAM with `bits_per_axis` bits on each of I and Q.
fn square_qam(bits_per_axis: u32) -> Vec<Complex64> {
    let side = 1usize << bits_per_axis;
    let level = |g: usize| {
        // invert Gray code to recover the level index
        let mut b = g;
        let mut shift = 1;
        while (g >> shift) > 0 {
            b ^= g >> shift;
            shift += 1;
        }
        2.0 * b as f64 - (side as f64 - 1.0)
    };
    let mut pts = Vec::with_capacity(side * side);
    for sym in 0..side * side {
        let gi = sym >> bits_per_axis;
        let gq = sym & (side - 1);
        pts.push(Complex64::new(level(gi), level(gq)));
    }
    let power = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64;
    let s = power.sqrt();
    pts.into_iter().map(|p| p / s).collect()
}

impl fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModulationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        let alias = match norm.as_str() {
            "4PAM" | "PAM4" => "4ASK",
            "QAM16" => "16QAM",
            "QAM64" => "64QAM",
            "PSK8" => "8PSK",
            "AMDSB" => "AM-DSB",
            "WBFM" => "FM",
            other => other,
        };
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name().replace('-', "") == alias.replace('-', ""))
            .ok_or_else(|| Error::Config(format!("unknown modulation scheme '{s}'")))
    }
}

impl From<ModulationScheme> for String {
    fn from(m: ModulationScheme) -> Self {
        m.name().to_string()
    }
}

impl TryFrom<String> for ModulationScheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}
