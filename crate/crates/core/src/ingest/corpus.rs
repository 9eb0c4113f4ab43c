use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::manifest::{read_diagnosis_table, read_manifest};
use super::names::parse_recording_name;
use super::{
    cycle_label, diagnosis_label, parse_annotation, AcquisitionMode, CycleAnnotation, Device,
    RecordingMeta, SplitUnit, Task, TaskLabel,
};
use crate::audio::{read_wav, wav_info};
use crate::{Error, Result};

/// One recording with its annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    /// Unit id used by splits and manifests.
    pub id: String,
    pub meta: RecordingMeta,
    pub audio_path: PathBuf,
    pub channel: Option<usize>,
    pub cycles: Vec<CycleAnnotation>,
    pub manifest_fold: Option<usize>,
}

impl Recording {
    pub fn split_unit(&self) -> SplitUnit {
        SplitUnit {
            unit_id: self.id.clone(),
            patient_id: self.meta.patient_id.clone(),
            stratum: self.meta.diagnosis.clone(),
            manifest_fold: self.manifest_fold,
        }
    }

    pub fn load_audio(&self) -> Result<Vec<f64>> {
        let (samples, sr) = read_wav(&self.audio_path, self.channel)?;
        if sr != self.meta.sample_rate_hz {
            return Err(Error::Data(format!(
                "{}: sample rate changed on disk",
                self.audio_path.display()
            )));
        }
        Ok(samples)
    }

    /// Recording-level label for RDC tasks.
    pub fn recording_label(&self, task: Task) -> Result<TaskLabel> {
        diagnosis_label(&self.meta.diagnosis, task)
    }
}

/// One respiratory cycle cut out of its recording.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleClip {
    /// Index of the cycle within its recording's annotation list.
    pub index: usize,
    pub annotation: CycleAnnotation,
    pub samples: Vec<f64>,
}

/// Cut annotated cycles out of a recording.
///
/// Boundaries are rounded to the nearest sample and clamped to the
/// recording; cycles left with zero samples are dropped with a warning.
pub fn extract_cycles(samples: &[f64], sample_rate_hz: u32, cycles: &[CycleAnnotation]) -> Vec<CycleClip> {
    let sr = f64::from(sample_rate_hz);
    let n = samples.len();
    let mut out = Vec::with_capacity(cycles.len());
    for (index, c) in cycles.iter().enumerate() {
        let begin = ((c.begin_s * sr).round() as usize).min(n);
        let end = ((c.end_s * sr).round() as usize).min(n);
        if c.end_s * sr > n as f64 + 0.5 {
            log::warn!("cycle {index} ends after the recording; clamped");
        }
        if end <= begin {
            log::warn!("cycle {index} has no samples after rounding; dropped");
            continue;
        }
        out.push(CycleClip {
            index,
            annotation: *c,
            samples: samples[begin..end].to_vec(),
        });
    }
    out
}

/// A loaded corpus: recordings with metadata and annotations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub recordings: Vec<Recording>,
}

impl Corpus {
    pub fn split_units(&self) -> Vec<SplitUnit> {
        self.recordings.iter().map(Recording::split_unit).collect()
    }

    /// Number of annotated cycles per class of a cycle-level task.
    pub fn cycle_label_counts(&self, task: Task) -> Result<Vec<usize>> {
        let mut counts = vec![0; task.n_classes()];
        for r in &self.recordings {
            for c in &r.cycles {
                counts[cycle_label(c.crackle, c.wheeze, task)?.label] += 1;
            }
        }
        Ok(counts)
    }

    /// Fraction of annotated cycles recorded by each known device.
    pub fn device_shares(&self) -> BTreeMap<Device, f64> {
        let mut counts: BTreeMap<Device, usize> = BTreeMap::new();
        let mut total = 0usize;
        for r in &self.recordings {
            *counts.entry(r.meta.device.clone()).or_default() += r.cycles.len();
            total += r.cycles.len();
        }
        counts
            .into_iter()
            .map(|(d, n)| (d, n as f64 / total.max(1) as f64))
            .collect()
    }
}

/// Load an ICBHI-layout directory: `*.wav` with same-stem `.txt` annotation
/// files, plus the patient diagnosis table.
pub fn load_icbhi(dir: &Path, diagnosis_table: &Path) -> Result<Corpus> {
    let diagnoses = read_diagnosis_table(diagnosis_table)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    let mut recordings = Vec::with_capacity(paths.len());
    for path in paths {
        let fname = path.file_name().and_then(|f| f.to_str()).unwrap_or_default();
        let name = parse_recording_name(fname)?;
        let info = wav_info(&path)?;
        let diagnosis = diagnoses
            .get(&name.patient_id)
            .ok_or_else(|| Error::Data(format!("patient {} missing from diagnosis table", name.patient_id)))?
            .clone();
        let ann_path = path.with_extension("txt");
        let text = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
        let cycles = parse_annotation(&text)?;
        let meta = RecordingMeta {
            patient_id: name.patient_id.clone(),
            recording_index: name.recording_index.clone(),
            chest_location: name.chest_location.clone(),
            acquisition_mode: name.acquisition_mode,
            device: name.device.clone(),
            sample_rate_hz: info.sample_rate_hz,
            duration_s: info.duration_s(),
            diagnosis,
        };
        recordings.push(Recording {
            id: name.stem(),
            meta,
            audio_path: path,
            channel: None,
            cycles,
            manifest_fold: None,
        });
    }
    Ok(Corpus { recordings })
}

/// Load a corpus described by a generic manifest (see [`super::manifest`]).
pub fn load_manifest_corpus(manifest: &Path) -> Result<Corpus> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let rows = read_manifest(manifest)?;
    let mut recordings = Vec::with_capacity(rows.len());
    for row in rows {
        let audio_path = base.join(&row.path);
        let info = wav_info(&audio_path)?;
        let stem = audio_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let id = row.recording_id.clone().unwrap_or_else(|| stem.clone());
        let fname = audio_path.file_name().and_then(|f| f.to_str()).unwrap_or_default();
        let (recording_index, chest_location, acquisition_mode) = match parse_recording_name(fname) {
            Ok(n) => (n.recording_index, n.chest_location, n.acquisition_mode),
            Err(_) => (stem, "unknown".to_string(), AcquisitionMode::MultiChannel),
        };
        let cycles = match &row.cycle_file {
            Some(f) => {
                let p = base.join(f);
                parse_annotation(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?
            }
            None => Vec::new(),
        };
        let meta = RecordingMeta {
            patient_id: row.patient.clone(),
            recording_index,
            chest_location,
            acquisition_mode,
            device: Device::parse(&row.device),
            sample_rate_hz: info.sample_rate_hz,
            duration_s: info.duration_s(),
            diagnosis: row.diagnosis.clone(),
        };
        recordings.push(Recording {
            id,
            meta,
            audio_path,
            channel: row.channel,
            cycles,
            manifest_fold: row.fold,
        });
    }
    Ok(Corpus { recordings })
}
