use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::SpectralConfig;
use crate::{Error, Result};

/// Analysis window used by [`stft_magnitude`], recorded in provenance.
pub const WINDOW_NAME: &str = "hann_periodic";

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reusable FFT plan and window for one frame size.
#[derive(Clone)]
pub struct StftPlan {
    nfft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(nfft: usize, hop: usize) -> Self {
        StftPlan {
            nfft,
            hop,
            window: hann_window(nfft),
            fft: FftPlanner::new().plan_fft_forward(nfft),
        }
    }

    pub fn from_config(cfg: &SpectralConfig) -> Self {
        Self::new(cfg.nfft, cfg.hop)
    }

    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.nfft {
            0
        } else {
            (len - self.nfft) / self.hop + 1
        }
    }

    /// Magnitude spectrogram `[nfft/2 + 1, n_frames]`. Frames lie entirely
    /// inside the segment; there is no centre padding.
    pub fn magnitude(&self, segment: &[f64]) -> Result<Array2<f64>> {
        if segment.len() < self.nfft {
            return Err(Error::SegmentTooShort {
                len: segment.len(),
                nfft: self.nfft,
            });
        }
        let frames = self.n_frames(segment.len());
        let bins = self.nfft / 2 + 1;
        let mut out = Array2::zeros((bins, frames));
        let mut buf = vec![Complex::new(0.0, 0.0); self.nfft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = t * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(segment[start + i] * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..bins {
                out[[k, t]] = buf[k].norm();
            }
        }
        Ok(out)
    }
}

/// Hann-windowed STFT magnitude of one segment.
pub fn stft_magnitude(segment: &[f64], cfg: &SpectralConfig) -> Result<Array2<f64>> {
    StftPlan::from_config(cfg).magnitude(segment)
}
