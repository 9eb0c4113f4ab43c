use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::features::hann_window;
use crate::{Error, Result};

/// Analysis/synthesis frame size of the phase vocoder.
pub const STRETCH_NFFT: usize = 512;
/// Analysis and synthesis hop.
pub const STRETCH_HOP: usize = 128;

/// Pitch-preserving duration change by a phase vocoder.
///
/// `factor > 1` speeds up: the output has `round(n / factor)` samples.
pub fn time_stretch(samples: &[f64], factor: f64) -> Result<Vec<f64>> {
    if !(0.8..=1.25).contains(&factor) || !factor.is_finite() {
        return Err(Error::InvalidFactor(factor));
    }
    let out_len = (samples.len() as f64 / factor).round() as usize;
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let (n, hop) = (STRETCH_NFFT, STRETCH_HOP);
    let bins = n / 2 + 1;
    let window = hann_window(n);

    // Centre the frames: n/2 zeros on both sides.
    let mut padded = vec![0.0; n / 2];
    padded.extend_from_slice(samples);
    padded.extend(std::iter::repeat(0.0).take(n / 2 + n));
    let n_frames = 1 + (padded.len() - n) / hop;

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut spec: Vec<Vec<Complex64>> = Vec::with_capacity(n_frames + 1);
    for f in 0..n_frames {
        let start = f * hop;
        let mut buf: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(padded[start + i] * window[i], 0.0))
            .collect();
        fwd.process(&mut buf);
        buf.truncate(bins);
        spec.push(buf);
    }
    spec.push(vec![Complex64::new(0.0, 0.0); bins]);

    // Expected phase advance per hop for each bin.
    let omega: Vec<f64> = (0..bins).map(|k| 2.0 * PI * hop as f64 * k as f64 / n as f64).collect();
    let mut phase: Vec<f64> = spec[0].iter().map(|c| c.arg()).collect();
    let mut steps = Vec::new();
    let mut t = 0.0;
    while t < n_frames as f64 {
        steps.push(t);
        t += factor;
    }

    let out_frames = steps.len();
    let mut out = vec![0.0; n + hop * (out_frames - 1)];
    let mut norm = vec![0.0; out.len()];
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    for (j, &step) in steps.iter().enumerate() {
        let i = step.floor() as usize;
        let frac = step - i as f64;
        let (a, b) = (&spec[i], &spec[i + 1]);
        for k in 0..bins {
            let mag = (1.0 - frac) * a[k].norm() + frac * b[k].norm();
            full[k] = Complex64::from_polar(mag, phase[k]);
            let mut dphi = b[k].arg() - a[k].arg() - omega[k];
            dphi -= 2.0 * PI * (dphi / (2.0 * PI)).round();
            phase[k] += omega[k] + dphi;
        }
        for k in 1..n - bins + 1 {
            full[n - k] = full[k].conj();
        }
        let mut frame = full.clone();
        inv.process(&mut frame);
        let start = j * hop;
        for i in 0..n {
            out[start + i] += frame[i].re / n as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    for (o, w) in out.iter_mut().zip(&norm) {
        if *w > 1e-8 {
            *o /= w;
        }
    }
    let mut result: Vec<f64> = out.into_iter().skip(n / 2).take(out_len).collect();
    result.resize(out_len, 0.0);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, sr: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / sr).sin()).collect()
    }

    /// Frequency of the largest FFT bin, with parabolic refinement.
    fn peak_hz(x: &[f64], sr: f64) -> f64 {
        let n = x.len();
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let mags: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
        let k = (1..n / 2 - 1).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
        let (l, c, r) = (mags[k - 1], mags[k], mags[k + 1]);
        let delta = 0.5 * (l - r) / (l - 2.0 * c + r);
        (k as f64 + delta) * sr / n as f64
    }

    #[test]
    fn unit_factor_keeps_length_and_signal() {
        let x = tone(440.0, 16000.0, 16000);
        let y = time_stretch(&x, 1.0).unwrap();
        assert!((y.len() as i64 - x.len() as i64).abs() <= STRETCH_HOP as i64);
        let err = x[1000..15000]
            .iter()
            .zip(&y[1000..15000])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn duration_scales_inversely() {
        let x = vec![0.1; 8 * 4000];
        let y = time_stretch(&x, 1.1).unwrap();
        assert!((y.len() as f64 / 4000.0 - 8.0 / 1.1).abs() < STRETCH_HOP as f64 / 4000.0);
    }

    #[test]
    fn pitch_is_preserved() {
        let sr = 16000.0;
        let x = tone(440.0, sr, 32000);
        for factor in [0.9, 1.1] {
            let y = time_stretch(&x, factor).unwrap();
            let f = peak_hz(&y[1024..y.len() - 1024], sr);
            assert!((f - 440.0).abs() / 440.0 < 0.02, "{factor}: {f}");
        }
    }

    #[test]
    fn rejects_out_of_range_factor() {
        assert!(matches!(time_stretch(&[0.0; 10], 1.5), Err(Error::InvalidFactor(_))));
        assert!(matches!(time_stretch(&[0.0; 10], 0.5), Err(Error::InvalidFactor(_))));
    }
}
