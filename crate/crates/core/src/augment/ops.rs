use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::stretch::time_stretch;
use crate::features::resample_by;
use crate::Result;

/// Probability and uniform parameter range of one randomized operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpSpec {
    pub prob: f64,
    pub low: f64,
    pub high: f64,
}

impl OpSpec {
    fn draw(&self, rng: &mut impl Rng) -> Option<f64> {
        if rng.gen::<f64>() >= self.prob {
            return None;
        }
        Some(if self.low < self.high { rng.gen_range(self.low..=self.high) } else { self.low })
    }
}

/// Randomized time-domain operations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeDomainOps {
    /// Gain in dB.
    pub volume: OpSpec,
    /// Additive white noise, SNR in dB.
    pub noise: OpSpec,
    /// Pitch shift in semitones.
    pub pitch: OpSpec,
    /// Playback speed factor (changes duration and pitch).
    pub speed: OpSpec,
}

impl Default for TimeDomainOps {
    fn default() -> Self {
        TimeDomainOps {
            volume: OpSpec { prob: 0.5, low: -6.0, high: 6.0 },
            noise: OpSpec { prob: 0.5, low: 20.0, high: 40.0 },
            pitch: OpSpec { prob: 0.5, low: -2.0, high: 2.0 },
            speed: OpSpec { prob: 0.5, low: 0.9, high: 1.1 },
        }
    }
}

impl TimeDomainOps {
    pub fn disabled() -> Self {
        let off = |s: OpSpec| OpSpec { prob: 0.0, ..s };
        let d = TimeDomainOps::default();
        TimeDomainOps {
            volume: off(d.volume),
            noise: off(d.noise),
            pitch: off(d.pitch),
            speed: off(d.speed),
        }
    }

    pub fn specs(&self) -> [OpSpec; 4] {
        [self.volume, self.noise, self.pitch, self.speed]
    }
}

/// One applied augmentation step with its drawn parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugOp {
    Stretch { factor: f64 },
    Volume { gain_db: f64 },
    Noise { snr_db: f64, seed: u64 },
    Pitch { semitones: f64 },
    Speed { factor: f64 },
    Vtlp { alpha: f64, fhi_hz: f64 },
    Flip,
}

impl std::fmt::Display for AugOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AugOp::Stretch { factor } => write!(f, "stretch({factor:.4})"),
            AugOp::Volume { gain_db } => write!(f, "volume({gain_db:.3}dB)"),
            AugOp::Noise { snr_db, .. } => write!(f, "noise({snr_db:.2}dB)"),
            AugOp::Pitch { semitones } => write!(f, "pitch({semitones:.3}st)"),
            AugOp::Speed { factor } => write!(f, "speed({factor:.4})"),
            AugOp::Vtlp { alpha, fhi_hz } => write!(f, "vtlp({alpha:.4},{fhi_hz:.0}Hz)"),
            AugOp::Flip => f.write_str("flip"),
        }
    }
}

impl AugOp {
    /// Whether the op acts on the waveform (as opposed to the features).
    pub fn is_time_domain(&self) -> bool {
        !matches!(self, AugOp::Vtlp { .. } | AugOp::Flip)
    }

    /// Apply a waveform op. Feature-domain ops return the input unchanged.
    pub fn apply(&self, samples: &[f64]) -> Result<Vec<f64>> {
        Ok(match *self {
            AugOp::Stretch { factor } => time_stretch(samples, factor)?,
            AugOp::Volume { gain_db } => {
                let g = 10f64.powf(gain_db / 20.0);
                samples.iter().map(|v| v * g).collect()
            }
            AugOp::Noise { snr_db, seed } => {
                let power = samples.iter().map(|v| v * v).sum::<f64>() / samples.len().max(1) as f64;
                let std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
                if std == 0.0 {
                    return Ok(samples.to_vec());
                }
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
                let normal = Normal::new(0.0, std).expect("finite std");
                samples.iter().map(|v| v + normal.sample(&mut rng)).collect()
            }
            AugOp::Pitch { semitones } => {
                let r = 2f64.powf(semitones / 12.0);
                let stretched = time_stretch(samples, 1.0 / r)?;
                let mut out = resample_by(&stretched, 1.0 / r);
                out.resize(samples.len(), 0.0);
                out
            }
            AugOp::Speed { factor } => resample_by(samples, 1.0 / factor),
            AugOp::Vtlp { .. } | AugOp::Flip => samples.to_vec(),
        })
    }
}

/// Draw each time-domain op independently and return the applied chain.
pub fn draw_time_domain(ops: &TimeDomainOps, rng: &mut impl Rng) -> Vec<AugOp> {
    let mut chain = Vec::new();
    if let Some(g) = ops.volume.draw(rng) {
        chain.push(AugOp::Volume { gain_db: g });
    }
    if let Some(s) = ops.noise.draw(rng) {
        chain.push(AugOp::Noise { snr_db: s, seed: rng.gen() });
    }
    if let Some(p) = ops.pitch.draw(rng) {
        chain.push(AugOp::Pitch { semitones: p });
    }
    if let Some(f) = ops.speed.draw(rng) {
        chain.push(AugOp::Speed { factor: f });
    }
    chain
}

/// Apply the randomized time-domain ops to a waveform.
pub fn random_time_domain(samples: &[f64], ops: &TimeDomainOps, rng: &mut impl Rng) -> Result<(Vec<f64>, Vec<AugOp>)> {
    let chain = draw_time_domain(ops, rng);
    let mut out = samples.to_vec();
    for op in &chain {
        out = op.apply(&out)?;
    }
    Ok((out, chain))
}
