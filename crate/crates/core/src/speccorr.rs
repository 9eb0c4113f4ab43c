//! Device spectrum correction.
//!
//! Every device gets a mean magnitude spectrum (the time-averaged STFT
//! magnitude, averaged again over that device's training segments). A
//! reference spectrum is the unweighted mean over a chosen set of reference
//! devices, and each device's magnitudes are scaled bin by bin by
//! `reference / device mean` before the mel projection.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::ingest::Device;
use crate::{Error, Result};

/// Coefficients are clipped into this range.
pub const COEFF_CLIP: (f64, f64) = (0.1, 10.0);

/// Per-bin mean over the frames of a `[bins, frames]` magnitude stack.
pub fn segment_mean_spectrum(mags: &Array2<f64>) -> Result<Array1<f64>> {
    mags.mean_axis(Axis(1)).ok_or(Error::EmptyStack)
}

/// Mean magnitude spectrum of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpectrumProfile {
    pub device: Device,
    pub mean_spectrum: Vec<f64>,
    pub n_segments: usize,
}

/// Mean of a device's segment spectra.
pub fn device_profile(segment_spectra: &[Vec<f64>], device: Device) -> Result<DeviceSpectrumProfile> {
    let mut acc = ProfileAccumulator::default();
    for s in segment_spectra {
        acc.push(&device, s)?;
    }
    acc.finish()
        .into_iter()
        .next()
        .ok_or_else(|| Error::EmptyDevice(device.to_string()))
}

/// Mergeable per-device `(sum, count)` reduction over segment spectra.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileAccumulator {
    sums: BTreeMap<Device, (Vec<f64>, usize)>,
}

impl ProfileAccumulator {
    pub fn push(&mut self, device: &Device, spectrum: &[f64]) -> Result<()> {
        let entry = self
            .sums
            .entry(device.clone())
            .or_insert_with(|| (vec![0.0; spectrum.len()], 0));
        if entry.0.len() != spectrum.len() {
            return Err(Error::ShapeMismatch(format!(
                "{device}: spectrum of {} bins, expected {}",
                spectrum.len(),
                entry.0.len()
            )));
        }
        for (s, v) in entry.0.iter_mut().zip(spectrum) {
            *s += v;
        }
        entry.1 += 1;
        Ok(())
    }

    pub fn merge(mut self, other: ProfileAccumulator) -> Result<ProfileAccumulator> {
        for (device, (sum, count)) in other.sums {
            match self.sums.get_mut(&device) {
                Some((mine, n)) => {
                    if mine.len() != sum.len() {
                        return Err(Error::ShapeMismatch(format!("{device}: bin counts differ")));
                    }
                    mine.iter_mut().zip(&sum).for_each(|(a, b)| *a += b);
                    *n += count;
                }
                None => {
                    self.sums.insert(device, (sum, count));
                }
            }
        }
        Ok(self)
    }

    pub fn finish(&self) -> Vec<DeviceSpectrumProfile> {
        self.sums
            .iter()
            .map(|(device, (sum, n))| DeviceSpectrumProfile {
                device: device.clone(),
                mean_spectrum: sum.iter().map(|s| s / *n as f64).collect(),
                n_segments: *n,
            })
            .collect()
    }
}

/// Reference spectrum together with the devices it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpectrum {
    pub values: Vec<f64>,
    pub devices: Vec<Device>,
}

/// Unweighted mean of the reference devices' mean spectra.
pub fn reference_spectrum(profiles: &[DeviceSpectrumProfile], set: &[Device]) -> Result<ReferenceSpectrum> {
    let mut chosen = Vec::with_capacity(set.len());
    for d in set {
        let p = profiles
            .iter()
            .find(|p| &p.device == d)
            .ok_or_else(|| Error::MissingDeviceProfile(d.to_string()))?;
        chosen.push(p);
    }
    let Some(first) = chosen.first() else {
        return Err(Error::Config("empty reference device set".into()));
    };
    let mut values = vec![0.0; first.mean_spectrum.len()];
    for p in &chosen {
        if p.mean_spectrum.len() != values.len() {
            return Err(Error::ShapeMismatch(format!("{}: bin counts differ", p.device)));
        }
        values.iter_mut().zip(&p.mean_spectrum).for_each(|(a, b)| *a += b);
    }
    values.iter_mut().for_each(|v| *v /= chosen.len() as f64);
    Ok(ReferenceSpectrum {
        values,
        devices: set.to_vec(),
    })
}

/// Per-bin scale factors for one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionCoefficients {
    pub device: Device,
    pub coeffs: Vec<f64>,
    pub reference_set: Vec<Device>,
}

impl CorrectionCoefficients {
    pub fn identity(device: Device, n_bins: usize) -> Self {
        CorrectionCoefficients {
            device,
            coeffs: vec![1.0; n_bins],
            reference_set: Vec::new(),
        }
    }
}

/// `reference / mean` per bin. Silent bins get 1; the rest is clipped into
/// [`COEFF_CLIP`].
pub fn correction_coefficients(
    reference: &ReferenceSpectrum,
    profile: &DeviceSpectrumProfile,
) -> Result<CorrectionCoefficients> {
    if reference.values.len() != profile.mean_spectrum.len() {
        return Err(Error::ShapeMismatch(format!(
            "reference has {} bins, {} profile {}",
            reference.values.len(),
            profile.device,
            profile.mean_spectrum.len()
        )));
    }
    let (lo, hi) = COEFF_CLIP;
    let mut clipped = 0;
    let coeffs = reference
        .values
        .iter()
        .zip(&profile.mean_spectrum)
        .map(|(&r, &m)| {
            if m == 0.0 {
                return 1.0;
            }
            let c = r / m;
            if c < lo || c > hi {
                clipped += 1;
            }
            c.clamp(lo, hi)
        })
        .collect();
    if clipped > 0 {
        log::warn!("{}: {clipped} correction coefficients clipped to [{lo}, {hi}]", profile.device);
    }
    Ok(CorrectionCoefficients {
        device: profile.device.clone(),
        coeffs,
        reference_set: reference.devices.clone(),
    })
}

/// Scale every frame of a `[bins, frames]` stack by the coefficients.
pub fn apply_correction(mags: &Array2<f64>, coeffs: &CorrectionCoefficients) -> Result<Array2<f64>> {
    if mags.nrows() != coeffs.coeffs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} bins against {} coefficients",
            mags.nrows(),
            coeffs.coeffs.len()
        )));
    }
    let c = Array1::from(coeffs.coeffs.clone()).insert_axis(Axis(1));
    Ok(mags * &c)
}

/// Named reference-set choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationPreset {
    NoCalib,
    CalibDev1,
    CalibDev2,
    CalibDev1Dev2,
    CalibAllDev,
}

impl CalibrationPreset {
    pub const ALL: [CalibrationPreset; 5] = [
        CalibrationPreset::NoCalib,
        CalibrationPreset::CalibDev1,
        CalibrationPreset::CalibDev2,
        CalibrationPreset::CalibDev1Dev2,
        CalibrationPreset::CalibAllDev,
    ];

    /// Reference devices. `CalibAllDev` takes every known device that has a
    /// profile; unrecognized devices never enter a reference set.
    pub fn reference_set(self, profiles: &[DeviceSpectrumProfile]) -> Vec<Device> {
        match self {
            CalibrationPreset::NoCalib => Vec::new(),
            CalibrationPreset::CalibDev1 => vec![Device::AKGC417L],
            CalibrationPreset::CalibDev2 => vec![Device::Meditron],
            CalibrationPreset::CalibDev1Dev2 => vec![Device::AKGC417L, Device::Meditron],
            CalibrationPreset::CalibAllDev => Device::KNOWN
                .iter()
                .filter(|d| profiles.iter().any(|p| &p.device == *d))
                .cloned()
                .collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationPreset::NoCalib => "no-calib",
            CalibrationPreset::CalibDev1 => "calib-dev1",
            CalibrationPreset::CalibDev2 => "calib-dev2",
            CalibrationPreset::CalibDev1Dev2 => "calib-dev1-dev2",
            CalibrationPreset::CalibAllDev => "calib-all-dev",
        }
    }
}

impl std::str::FromStr for CalibrationPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown calibration preset `{s}`")))
    }
}

/// Coefficients of every device for one training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub preset: CalibrationPreset,
    pub reference_set: Vec<Device>,
    pub coefficients: Vec<CorrectionCoefficients>,
    /// Which data the profiles came from, e.g. `train-fold-2`.
    pub source: String,
    pub config_hash: String,
}

impl Calibration {
    /// Fit coefficients for every profiled device.
    pub fn fit(
        profiles: &[DeviceSpectrumProfile],
        preset: CalibrationPreset,
        source: impl Into<String>,
        config_hash: impl Into<String>,
    ) -> Result<Calibration> {
        let reference_set = preset.reference_set(profiles);
        let coefficients = if reference_set.is_empty() {
            Vec::new()
        } else {
            let reference = reference_spectrum(profiles, &reference_set)?;
            profiles
                .iter()
                .map(|p| correction_coefficients(&reference, p))
                .collect::<Result<_>>()?
        };
        Ok(Calibration {
            preset,
            reference_set,
            coefficients,
            source: source.into(),
            config_hash: config_hash.into(),
        })
    }

    /// Coefficients for a device; devices without a training profile are
    /// left uncorrected.
    pub fn for_device(&self, device: &Device, n_bins: usize) -> CorrectionCoefficients {
        self.coefficients
            .iter()
            .find(|c| &c.device == device)
            .cloned()
            .unwrap_or_else(|| CorrectionCoefficients::identity(device.clone(), n_bins))
    }

    pub fn apply(&self, device: &Device, mags: &Array2<f64>) -> Result<Array2<f64>> {
        if self.coefficients.is_empty() {
            return Ok(mags.clone());
        }
        apply_correction(mags, &self.for_device(device, mags.nrows()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Calibration> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
