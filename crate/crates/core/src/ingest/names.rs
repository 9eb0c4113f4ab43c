use std::path::Path;

use super::{AcquisitionMode, Device};
use crate::{Error, Result};

/// Fields encoded in an ICBHI file name,
/// `patient_recindex_location_mode_device.wav`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingName {
    pub patient_id: String,
    pub recording_index: String,
    pub chest_location: String,
    pub acquisition_mode: AcquisitionMode,
    pub device: Device,
}

impl RecordingName {
    pub fn stem(&self) -> String {
        let mode = match self.acquisition_mode {
            AcquisitionMode::SingleChannel => "sc",
            AcquisitionMode::MultiChannel => "mc",
        };
        format!(
            "{}_{}_{}_{}_{}",
            self.patient_id, self.recording_index, self.chest_location, mode, self.device
        )
    }
}

/// Parse an ICBHI-style recording file name.
///
/// Unknown device tokens are kept as [`Device::Other`]. Names with fewer
/// than five fields, an unknown acquisition mode or a non-`.wav` extension
/// are rejected.
pub fn parse_recording_name(filename: &str) -> Result<RecordingName> {
    let malformed = || Error::MalformedName(filename.to_string());
    let path = Path::new(filename);
    let ext = path.extension().and_then(|e| e.to_str()).ok_or_else(malformed)?;
    if !ext.eq_ignore_ascii_case("wav") {
        return Err(malformed());
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).ok_or_else(malformed)?;
    let fields: Vec<&str> = stem.split('_').collect();
    if fields.len() < 5 || fields.iter().take(5).any(|f| f.is_empty()) {
        return Err(malformed());
    }
    let acquisition_mode = match fields[3].to_ascii_lowercase().as_str() {
        "sc" => AcquisitionMode::SingleChannel,
        "mc" => AcquisitionMode::MultiChannel,
        _ => return Err(malformed()),
    };
    // Device tokens never contain underscores in the public corpus; anything
    // past the fifth field is folded into the device token.
    let device = Device::parse(&fields[4..].join("_"));
    Ok(RecordingName {
        patient_id: fields[0].to_string(),
        recording_index: fields[1].to_string(),
        chest_location: fields[2].to_string(),
        acquisition_mode,
        device,
    })
}
