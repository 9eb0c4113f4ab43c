use ndarray::Array2;

use super::SpectralConfig;
use crate::Result;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Piecewise-linear VTLP frequency map.
///
/// Frequencies up to `F_hi * min(alpha, 1) / alpha` are scaled by `alpha`;
/// above that a second linear piece pins the Nyquist frequency in place.
pub fn vtlp_warp(freq_hz: f64, alpha: f64, fhi_hz: f64, nyquist_hz: f64) -> f64 {
    let knee = fhi_hz * alpha.min(1.0);
    let boundary = knee / alpha;
    if freq_hz <= boundary {
        freq_hz * alpha
    } else {
        nyquist_hz - (nyquist_hz - knee) / (nyquist_hz - boundary) * (nyquist_hz - freq_hz)
    }
}

/// Triangular mel filterbank `[n_mels, nfft/2 + 1]`.
///
/// Band edges are spaced evenly on the mel scale between `fmin_hz` and
/// `fmax_hz`. A warp factor other than 1 moves the edges through
/// [`vtlp_warp`] before the triangles are built. Filters peak at 1.
pub fn mel_filterbank(cfg: &SpectralConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let (mel_lo, mel_hi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
    let n_pts = cfg.n_mels + 2;
    let mut edges: Vec<f64> = (0..n_pts)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_pts - 1) as f64))
        .collect();
    if cfg.warp_factor != 1.0 {
        for e in &mut edges {
            *e = vtlp_warp(*e, cfg.warp_factor, cfg.warp_fhi_hz, cfg.nyquist_hz());
        }
    }
    let bin_hz = f64::from(cfg.sample_rate_hz) / cfg.nfft as f64;
    let mut bank = Array2::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let up = (f - l) / (c - l);
            let down = (r - f) / (r - c);
            bank[[m, k]] = up.min(down).max(0.0);
        }
    }
    Ok(bank)
}
