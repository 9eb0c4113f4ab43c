use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute floor applied to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// Where a feature came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub segment_id: String,
    pub device: String,
    pub window: String,
    /// Spectrum-correction tag, e.g. `train-fold-0`; empty when uncorrected.
    pub correction: String,
}

/// Log-mel spectrogram `[n_mels, n_frames]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMelFeature {
    pub values: Array2<f64>,
    pub normalized: bool,
    pub provenance: Provenance,
}

impl LogMelFeature {
    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    /// Apply frozen dataset statistics.
    pub fn normalize(mut self, stats: &NormStats) -> Self {
        let inv = 1.0 / stats.std;
        self.values.mapv_inplace(|v| (v - stats.mean) * inv);
        self.normalized = true;
        self
    }
}

/// `ln(max(bank · mags, floor))`, before normalization.
pub fn logmel(mags: &Array2<f64>, bank: &Array2<f64>, floor: f64) -> Result<LogMelFeature> {
    if bank.ncols() != mags.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "filterbank has {} bins, spectrogram {}",
            bank.ncols(),
            mags.nrows()
        )));
    }
    let values = bank.dot(mags).mapv_into(|v| v.max(floor).ln());
    Ok(LogMelFeature {
        values,
        normalized: false,
        provenance: Provenance {
            window: super::WINDOW_NAME.to_string(),
            ..Provenance::default()
        },
    })
}

/// Streaming mean/variance with an exact merge (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NormAccumulator {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl NormAccumulator {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn extend<'a>(&mut self, values: impl IntoIterator<Item = &'a f64>) {
        for v in values {
            self.push(*v);
        }
    }

    pub fn merge(&self, other: &NormAccumulator) -> NormAccumulator {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let d = other.mean - self.mean;
        let (na, nb) = (self.count as f64, other.count as f64);
        NormAccumulator {
            count: n,
            mean: self.mean + d * nb / n as f64,
            m2: self.m2 + other.m2 + d * d * na * nb / n as f64,
        }
    }

    /// Population statistics; a zero spread falls back to unit scale.
    pub fn finish(&self) -> NormStats {
        let var = if self.count > 0 { self.m2 / self.count as f64 } else { 0.0 };
        let std = var.sqrt();
        NormStats {
            mean: self.mean,
            std: if std > 0.0 { std } else { 1.0 },
        }
    }
}

/// Global scalar normalization statistics, frozen from the training fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        NormStats { mean: 0.0, std: 1.0 }
    }
}
