//! Raw samples to fixed-size model inputs.
//!
//! The chain is [`resample`] → [`segment`] (with time-reversed padding) →
//! [`stft_magnitude`] → [`mel_filterbank`] projection → [`logmel`] →
//! normalization → [`to_model_input`]. Every step is a pure function of its
//! inputs and configuration.

mod cache;
mod input;
mod logmel;
mod mel;
mod resample;
mod segment;
mod stft;

use serde::{Deserialize, Serialize};

pub use cache::FeatureCache;
pub use input::{to_model_input, InputLayout, ModelInput, COLORMAP_NAME};
pub use logmel::{logmel, LogMelFeature, NormAccumulator, NormStats, Provenance, LOG_FLOOR};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, vtlp_warp};
pub use resample::{resample, resample_by};
pub use segment::{reflect_pad, segment, SegmentSpec};
pub use stft::{hann_window, stft_magnitude, StftPlan, WINDOW_NAME};

use crate::{Error, Result};

/// STFT and mel filterbank parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    pub sample_rate_hz: u32,
    pub nfft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// VTLP warp factor; 1.0 is the canonical bank.
    pub warp_factor: f64,
    /// Upper band edge F_hi of the piecewise-linear warp.
    pub warp_fhi_hz: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig::icbhi(16_000)
    }
}

impl SpectralConfig {
    /// ICBHI front end: 512-point FFT, 50 % overlap, 50 mel bands.
    pub fn icbhi(sample_rate_hz: u32) -> Self {
        SpectralConfig {
            sample_rate_hz,
            nfft: 512,
            hop: 256,
            n_mels: 50,
            fmin_hz: 0.0,
            fmax_hz: f64::from(sample_rate_hz) / 2.0,
            warp_factor: 1.0,
            warp_fhi_hz: 3500.0,
        }
    }

    /// Multi-channel corpus front end: as ICBHI with 45 mel bands.
    pub fn multichannel(sample_rate_hz: u32) -> Self {
        SpectralConfig {
            n_mels: 45,
            ..SpectralConfig::icbhi(sample_rate_hz)
        }
    }

    pub fn n_bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    pub fn nyquist_hz(&self) -> f64 {
        f64::from(self.sample_rate_hz) / 2.0
    }

    pub fn with_warp(&self, warp_factor: f64, warp_fhi_hz: f64) -> Self {
        SpectralConfig {
            warp_factor,
            warp_fhi_hz,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("features: {m}")));
        if self.sample_rate_hz == 0 {
            return fail("sample rate must be positive".into());
        }
        if self.nfft < 2 || self.hop * 2 != self.nfft {
            return fail(format!("hop {} must be half of nfft {}", self.hop, self.nfft));
        }
        if self.n_mels == 0 || self.n_mels >= self.n_bins() {
            return fail(format!("n_mels {} must be in [1, {})", self.n_mels, self.n_bins()));
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= self.nyquist_hz()) {
            return fail(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= nyquist ({})",
                self.fmin_hz,
                self.fmax_hz,
                self.nyquist_hz()
            ));
        }
        if !(0.8..=1.25).contains(&self.warp_factor) {
            return Err(Error::InvalidWarp(self.warp_factor));
        }
        if self.warp_fhi_hz <= 0.0 {
            return fail("warp_fhi_hz must be positive".into());
        }
        Ok(())
    }
}
