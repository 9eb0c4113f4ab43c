use std::f64::consts::PI;
use std::sync::OnceLock;

// Windowed-sinc interpolation: half-width in zero crossings of the kernel,
// Kaiser shape parameter, and table oversampling per zero crossing.
const ZERO_CROSSINGS: usize = 16;
const KAISER_BETA: f64 = 8.6;
const TABLE_RES: usize = 512;
const ROLLOFF: f64 = 0.95;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc sampled on `[0, ZERO_CROSSINGS]` zero crossings.
fn kernel_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ZERO_CROSSINGS * TABLE_RES + 2;
        let norm = bessel_i0(KAISER_BETA);
        (0..n)
            .map(|i| {
                let x = i as f64 / TABLE_RES as f64;
                let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
                let r = x / ZERO_CROSSINGS as f64;
                let w = if r >= 1.0 {
                    0.0
                } else {
                    bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm
                };
                sinc * w
            })
            .collect()
    })
}

fn kernel(x: f64) -> f64 {
    let table = kernel_table();
    let pos = x.abs() * TABLE_RES as f64;
    let i = pos as usize;
    if i + 1 >= table.len() {
        return 0.0;
    }
    let frac = pos - i as f64;
    table[i] + frac * (table[i + 1] - table[i])
}

/// Band-limited resampling between integer rates.
///
/// The output has `round(n * sr_out / sr_in)` samples; equal rates return
/// the input unchanged.
pub fn resample(samples: &[f64], sr_in: u32, sr_out: u32) -> Vec<f64> {
    if sr_in == sr_out || sr_in == 0 || sr_out == 0 {
        return samples.to_vec();
    }
    resample_by(samples, f64::from(sr_out) / f64::from(sr_in))
}

/// Resample by an arbitrary positive `ratio` (output rate over input rate).
pub fn resample_by(samples: &[f64], ratio: f64) -> Vec<f64> {
    let out_len = (samples.len() as f64 * ratio).round() as usize;
    if ratio == 1.0 {
        return samples.to_vec();
    }
    // Cutoff relative to the input Nyquist frequency.
    let cutoff = ratio.min(1.0) * ROLLOFF;
    let half_width = ZERO_CROSSINGS as f64 / cutoff;
    let n = samples.len() as isize;
    (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = ((t - half_width).ceil() as isize).max(0);
            let hi = ((t + half_width).floor() as isize).min(n - 1);
            let mut acc = 0.0;
            for i in lo..=hi {
                acc += samples[i as usize] * kernel((t - i as f64) * cutoff);
            }
            acc * cutoff
        })
        .collect()
}
