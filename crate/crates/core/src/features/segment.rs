use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fixed-length segmentation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentSpec {
    pub length_s: f64,
    /// 0 for cycles, 0.5 for whole recordings.
    pub overlap_fraction: f64,
    pub sample_rate_hz: u32,
}

impl Default for SegmentSpec {
    fn default() -> Self {
        SegmentSpec {
            length_s: 8.0,
            overlap_fraction: 0.0,
            sample_rate_hz: 16_000,
        }
    }
}

impl SegmentSpec {
    /// Segment length in samples.
    pub fn length_samples(&self) -> Result<usize> {
        let l = self.length_s * f64::from(self.sample_rate_hz);
        if !(l >= 1.0) || (l - l.round()).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "segment length {} s at {} Hz is not a whole number of samples",
                self.length_s, self.sample_rate_hz
            )));
        }
        Ok(l.round() as usize)
    }

    pub fn hop_samples(&self) -> Result<usize> {
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::Config(format!(
                "overlap fraction {} outside [0, 1)",
                self.overlap_fraction
            )));
        }
        let l = self.length_samples()?;
        Ok((((1.0 - self.overlap_fraction) * l as f64).round() as usize).max(1))
    }
}

/// Extend `samples` to `target_len` by mirroring without repeating the edge
/// sample, reflecting again as often as needed.
///
/// The result is the periodic extension of `x0 .. x(n-1), x(n-2) .. x1`, so
/// the seam never introduces a jump that is not already in the signal.
pub fn reflect_pad(samples: &[f64], target_len: usize) -> Result<Vec<f64>> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if target_len <= n {
        return Ok(samples.to_vec());
    }
    let mut out = Vec::with_capacity(target_len);
    out.extend_from_slice(samples);
    if n == 1 {
        out.resize(target_len, samples[0]);
        return Ok(out);
    }
    let period = 2 * n - 2;
    for i in n..target_len {
        let k = i % period;
        let src = if k < n { k } else { period - k };
        out.push(samples[src]);
    }
    Ok(out)
}

/// Split a cycle or recording into fixed-length segments.
///
/// Full windows start every hop while they fit. If the last full window
/// stops short of the end, one more segment starts at the next hop and is
/// reflect-padded; a signal shorter than one segment yields a single padded
/// segment.
pub fn segment(samples: &[f64], spec: &SegmentSpec) -> Result<Vec<Vec<f64>>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let len = spec.length_samples()?;
    let hop = spec.hop_samples()?;
    let n = samples.len();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut covered = 0usize;
    while start + len <= n {
        out.push(samples[start..start + len].to_vec());
        covered = start + len;
        start += hop;
    }
    if covered < n {
        out.push(reflect_pad(&samples[start..], len)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force: append mirrored copies until long enough.
    fn mirror_oracle(x: &[f64], l: usize) -> Vec<f64> {
        let mut out = x.to_vec();
        let mut forward = false;
        while out.len() < l {
            let piece: Vec<f64> = if forward {
                x[1..].to_vec()
            } else {
                x[..x.len() - 1].iter().rev().copied().collect()
            };
            out.extend(piece);
            forward = !forward;
        }
        out.truncate(l);
        out
    }

    #[test]
    fn single_mirror() {
        assert_eq!(reflect_pad(&[1.0, 2.0, 3.0], 5).unwrap(), vec![1.0, 2.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn repeated_mirror() {
        let expected = mirror_oracle(&[1.0, 2.0], 6);
        assert_eq!(expected, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(reflect_pad(&[1.0, 2.0], 6).unwrap(), expected);
    }

    #[test]
    fn pad_edge_cases() {
        assert_eq!(reflect_pad(&[1.0, 2.0, 3.0], 3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(reflect_pad(&[7.0], 4).unwrap(), vec![7.0; 4]);
        assert!(matches!(reflect_pad(&[], 4), Err(Error::EmptyInput)));
    }

    fn spec(length_s: f64, overlap: f64) -> SegmentSpec {
        SegmentSpec { length_s, overlap_fraction: overlap, sample_rate_hz: 10 }
    }

    #[test]
    fn twenty_second_cycle() {
        let x: Vec<f64> = (0..200).map(f64::from).collect();
        let segs = segment(&x, &spec(8.0, 0.0)).unwrap();
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.len() == 80));
        assert_eq!(segs[2][..40], x[160..]);
        assert_eq!(segs[2][40..], reflect_pad(&x[160..], 80).unwrap()[40..]);
    }

    #[test]
    fn short_cycle_single_padded() {
        let x: Vec<f64> = (0..30).map(f64::from).collect();
        let segs = segment(&x, &spec(8.0, 0.0)).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0], reflect_pad(&x, 80).unwrap());
    }

    #[test]
    fn overlapping_recording_starts() {
        // Enumerate window starts directly: every 4 s while the window fits.
        let n = 200usize;
        let (l, hop) = (80usize, 40usize);
        let starts: Vec<usize> = (0..n).step_by(hop).take_while(|s| s + l <= n).collect();
        assert_eq!(starts, vec![0, 40, 80, 120]);
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let segs = segment(&x, &spec(8.0, 0.5)).unwrap();
        assert_eq!(segs.len(), starts.len());
        for (seg, s) in segs.iter().zip(&starts) {
            assert_eq!(seg[0], *s as f64);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(segment(&[], &spec(8.0, 0.0)).is_err());
        assert!(segment(&[1.0], &spec(0.05, 0.0)).is_err());
        assert!(segment(&[1.0], &spec(1.0, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn pad_matches_mirror_oracle(x in prop::collection::vec(-10.0f64..10.0, 2..20), extra in 0usize..60) {
            let l = x.len() + extra;
            prop_assert_eq!(reflect_pad(&x, l).unwrap(), mirror_oracle(&x, l));
        }

        #[test]
        fn seam_has_no_new_jump(x in prop::collection::vec(-10.0f64..10.0, 2..20), extra in 1usize..60) {
            let n = x.len();
            let out = reflect_pad(&x, n + extra).unwrap();
            let seam = (out[n - 1] - out[n]).abs();
            prop_assert!(x.windows(2).any(|w| (w[0] - w[1]).abs() == seam));
        }

        #[test]
        fn non_overlapping_segments_cover_signal(x in prop::collection::vec(-1.0f64..1.0, 1..400), len_tenths in 1usize..60) {
            let sp = SegmentSpec { length_s: len_tenths as f64 / 10.0, overlap_fraction: 0.0, sample_rate_hz: 10 };
            let l = sp.length_samples().unwrap();
            let segs = segment(&x, &sp).unwrap();
            let mut rebuilt: Vec<f64> = segs.concat();
            prop_assert!(segs.iter().all(|s| s.len() == l));
            rebuilt.truncate(x.len());
            prop_assert_eq!(rebuilt, x);
        }
    }
}
