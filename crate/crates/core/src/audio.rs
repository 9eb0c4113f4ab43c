//! WAV input/output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::{Error, Result};

/// Header facts needed without decoding the samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavInfo {
    pub sample_rate_hz: u32,
    pub channels: u16,
    pub frames: u64,
}

impl WavInfo {
    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / f64::from(self.sample_rate_hz)
    }
}

pub fn wav_info(path: &Path) -> Result<WavInfo> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    Ok(WavInfo {
        sample_rate_hz: spec.sample_rate,
        channels: spec.channels,
        frames: u64::from(reader.duration()),
    })
}

/// Read a WAV file as `f64` samples in [-1, 1].
///
/// With `channel = None` multi-channel files are averaged to mono.
pub fn read_wav(path: &Path, channel: Option<usize>) -> Result<(Vec<f64>, u32)> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let n_ch = usize::from(spec.channels);
    if let Some(c) = channel {
        if c >= n_ch {
            return Err(Error::Data(format!(
                "{}: channel {c} requested, file has {n_ch}",
                path.display()
            )));
        }
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let samples = match channel {
        Some(c) => interleaved.iter().skip(c).step_by(n_ch).copied().collect(),
        None if n_ch == 1 => interleaved,
        None => interleaved
            .chunks_exact(n_ch)
            .map(|f| f.iter().sum::<f64>() / n_ch as f64)
            .collect(),
    };
    Ok((samples, spec.sample_rate))
}

/// Write mono 32-bit float WAV.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate_hz: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample(s as f32)?;
    }
    w.finalize()?;
    Ok(())
}
