//! Synthetic corpora for smoke runs: tonal "normal" and noisy "abnormal"
//! breathing clips recorded through two simulated stethoscopes with
//! opposite spectral tilts, plus a small source task to pre-train on.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::write_wav;
use crate::augment::AugmentRecord;
use crate::backbone::{attach_heads, build, BackboneSpec, CheckpointMeta, Depth, PretrainedSource};
use crate::config::{DataSource, ExperimentConfig, GridConfig};
use crate::cotuning::{calibrate, fit, predict, Dataset, Example, Mode, TrainConfig};
use crate::eval::{run_experiment, ResultRow, RunOptions};
use crate::features::{InputLayout, NormAccumulator, SegmentSpec, SpectralConfig};
use crate::ingest::manifest::{write_manifest, ManifestRow};
use crate::ingest::{serialize_annotation, CycleAnnotation, Device, SplitScheme, Task};
use crate::pipeline::{device_gap, fit_calibration, load_corpus, split_plan, task_units, DeviceGap, FeatureExtractor};
use crate::speccorr::Calibration;
use crate::{Error, Result};

/// Size and shape of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_patients: usize,
    pub clips_per_patient: usize,
    pub clip_s: f64,
    /// Rate the clips are written at.
    pub sample_rate_hz: u32,
    /// First-order tilt `y[n] = x[n] + a x[n-1]` of each device.
    pub devices: Vec<(Device, f64)>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_patients: 20,
            clips_per_patient: 10,
            clip_s: 2.0,
            sample_rate_hz: 8_000,
            devices: vec![(Device::AKGC417L, 0.7), (Device::Meditron, -0.7)],
            seed: 7,
        }
    }
}

fn envelope(n: usize) -> impl Fn(usize) -> f64 {
    move |i| 0.3 + 0.7 * (PI * i as f64 / n as f64).sin().powi(2)
}

fn chord(n: usize, sr: f64, parts: &[(f64, f64, f64)], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let env = envelope(n);
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let s: f64 = parts.iter().map(|(f, ph, a)| a * (2.0 * PI * f * t + ph).sin()).sum();
            env(i) * s / parts.len() as f64 + 0.01 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

/// `k` tones with random frequencies in `[lo, hi]` Hz and a breathing envelope.
fn tones(n: usize, sr: f64, k: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let parts: Vec<(f64, f64, f64)> =
        (0..k).map(|_| (rng.gen_range(lo..hi), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.5..1.0))).collect();
    chord(n, sr, &parts, rng)
}

/// The full 16-step tone grid between 150 and 1800 Hz with random phases
/// and amplitudes, so every device sees the same long-run spectrum.
fn grid_tones(n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let parts: Vec<(f64, f64, f64)> =
        (0..16).map(|j| (150.0 + 110.0 * j as f64, rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.5..1.0))).collect();
    chord(n, sr, &parts, rng)
}

/// Gaussian noise, optionally smoothed by a one-pole low-pass with pole `pole`.
fn noise(n: usize, pole: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let env = envelope(n);
    let mut prev = 0.0;
    (0..n)
        .map(|i| {
            prev = pole * prev + (1.0 - pole) * rng.sample::<f64, _>(StandardNormal);
            env(i) * 0.3 * prev / (1.0 - pole).sqrt().max(0.2)
        })
        .collect()
}

fn tilt(x: &[f64], a: f64) -> Vec<f64> {
    let scale = 1.0 / (1.0 + a.abs());
    (0..x.len()).map(|i| scale * (x[i] + a * if i > 0 { x[i - 1] } else { 0.0 })).collect()
}

fn rms_normalize(x: &mut [f64], rms: f64) {
    let m = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v = (*v * rms / m).clamp(-1.0, 1.0));
    }
}

/// Write a two-class corpus: a CSV manifest plus one WAV file and one
/// annotation file per clip. Each clip is a single cycle spanning the
/// whole clip, flagged as a crackle when abnormal. Patients alternate
/// between devices and carry equal numbers of both classes.
pub fn write_corpus(dir: &Path, spec: &SynthSpec) -> Result<PathBuf> {
    if spec.devices.is_empty() || spec.n_patients == 0 || spec.clips_per_patient == 0 {
        return Err(Error::Config("synthetic corpus needs devices, patients and clips".into()));
    }
    let audio_dir = dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let sr = f64::from(spec.sample_rate_hz);
    let n = (spec.clip_s * sr).round() as usize;
    let mut rows = Vec::new();
    for p in 0..spec.n_patients {
        let (device, a) = &spec.devices[p % spec.devices.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (p as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let patient = format!("{}", 101 + p);
        for c in 0..spec.clips_per_patient {
            let abnormal = c % 2 == 1;
            let clean = if abnormal { noise(n, rng.gen_range(0.0..0.5), &mut rng) } else { grid_tones(n, sr, &mut rng) };
            let mut x = tilt(&clean, *a);
            rms_normalize(&mut x, rng.gen_range(0.08..0.12));
            let stem = format!("{patient}_{c}b1_Tc_sc_{device}");
            write_wav(&audio_dir.join(format!("{stem}.wav")), &x, spec.sample_rate_hz)?;
            let ann = serialize_annotation(&[CycleAnnotation { begin_s: 0.0, end_s: spec.clip_s, crackle: abnormal, wheeze: false }]);
            let ann_path = audio_dir.join(format!("{stem}.txt"));
            fs::write(&ann_path, ann).map_err(|e| Error::io(&ann_path, e))?;
            rows.push(ManifestRow {
                path: format!("audio/{stem}.wav"),
                patient: patient.clone(),
                device: device.to_string(),
                diagnosis: if p % 2 == 0 { "Healthy".into() } else { "COPD".into() },
                cycle_file: Some(format!("audio/{stem}.txt")),
                fold: None,
                recording_id: None,
                channel: None,
            });
        }
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

/// Front end of the smoke runs: 4 kHz, 1 s segments, 32 mel bands.
pub fn smoke_front_end() -> (SpectralConfig, SegmentSpec) {
    let spectral = SpectralConfig { n_mels: 32, ..SpectralConfig::icbhi(4_000) };
    (spectral, SegmentSpec { length_s: 1.0, overlap_fraction: 0.0, sample_rate_hz: 4_000 })
}

/// Smoke-run backbone: a ResNet-18 with 8 base channels.
pub fn smoke_backbone(pretrained: PretrainedSource) -> BackboneSpec {
    BackboneSpec { depth: Depth::R18, width: 8, pretrained, input_layout: InputLayout::Replicate3, ..BackboneSpec::default() }
}

/// Clip of source class `k` out of 8: six tone bands, then white and
/// low-passed noise.
fn source_clip(k: usize, n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = match k {
        0..=5 => {
            let lo = 100.0 + 280.0 * k as f64;
            tones(n, sr, 3, lo, lo + 200.0, rng)
        }
        6 => noise(n, 0.0, rng),
        _ => noise(n, 0.8, rng),
    };
    rms_normalize(&mut x, rng.gen_range(0.08..0.12));
    x
}

/// Pre-train a backbone on the synthetic 8-class source task and save it
/// as a checkpoint whose head serves as the source classifier. The head's
/// temperature is calibrated on held-out source clips.
pub fn pretrain_source(path: &Path, per_class: usize, epochs: usize, seed: u64) -> Result<()> {
    let (spectral, seg) = smoke_front_end();
    let fx = FeatureExtractor::new(&spectral, &seg)?;
    let identity = Calibration::fit(&[], crate::speccorr::CalibrationPreset::CalibAllDev, "none", "")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = f64::from(seg.sample_rate_hz);
    let n = sr as usize;
    let mut sets: [Vec<Example>; 2] = Default::default();
    for (slot, count) in [(0, per_class), (1, per_class.div_ceil(3).max(2))] {
        for i in 0..count {
            for k in 0..8 {
                let id = format!("src{slot}_{k}_{i}");
                let rec = AugmentRecord { id: id.clone(), source_id: id.clone(), label: k, ops: Vec::new() };
                for feature in fx.features(&source_clip(k, n, sr, &mut rng), &Device::Other("synthetic".into()), &identity, &rec)? {
                    sets[slot].push(Example { id: id.clone(), unit: id.clone(), feature, label: k });
                }
            }
        }
    }
    let mut acc = NormAccumulator::default();
    sets[0].iter().for_each(|e| acc.extend(e.feature.values.iter()));
    let stats = acc.finish();
    let [train, val] = sets.map(|ex| Dataset {
        examples: ex.into_iter().map(|e| Example { feature: e.feature.normalize(&stats), ..e }).collect(),
        layout: InputLayout::Replicate3,
        n_classes: 8,
    });
    let spec = BackboneSpec { seed, ..smoke_backbone(PretrainedSource::None) };
    let mut net = attach_heads(build(&spec)?, None, 8, Mode::Vanilla, seed)?;
    let cfg = TrainConfig { epochs, batch_size: 16, lr_backbone: 0.05, lr_heads: 0.05, seed, ..TrainConfig::for_mode(Mode::Vanilla) };
    let outcome = fit(&mut net, &train, &val, &cfg, None)?;
    log::info!("source task: validation accuracy {:.3}", outcome.best_val_accuracy);
    let log_probs = predict(&mut net, &val, 32)?.mapv(|p| p.max(1e-300).ln());
    let mut meta = CheckpointMeta::describe(&net, "synthetic-source");
    meta.temperature = Some(calibrate(&log_probs.view(), &val.labels())?);
    meta.norm_stats = Some(stats);
    meta.epoch = outcome.best_epoch;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    net.checkpoint(meta).save(path)
}

/// Settings of one smoke run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmokeOptions {
    pub corpus: SynthSpec,
    pub epochs: usize,
    pub source_epochs: usize,
    pub seed: u64,
}

impl Default for SmokeOptions {
    fn default() -> Self {
        SmokeOptions { corpus: SynthSpec::default(), epochs: 5, source_epochs: 4, seed: 0 }
    }
}

/// Experiment configuration of a smoke run rooted at `dir`.
pub fn smoke_config(dir: &Path, manifest: &Path, source: &Path, opts: &SmokeOptions) -> ExperimentConfig {
    let (features, segment) = smoke_front_end();
    let mut cfg = ExperimentConfig::for_task(Task::Alsc2);
    cfg.name = "smoke".into();
    cfg.seed = opts.seed;
    cfg.n_runs = 1;
    cfg.output_dir = dir.join("runs");
    cfg.data = DataSource::Manifest { path: manifest.to_path_buf() };
    cfg.split.scheme = SplitScheme::Kfold(5);
    cfg.features = features;
    cfg.segment = segment;
    cfg.backbone = smoke_backbone(PretrainedSource::Checkpoint { path: source.to_path_buf() });
    cfg.train.epochs = opts.epochs;
    cfg.train.batch_size = 16;
    cfg.train.lr_backbone = 0.01;
    cfg.train.lr_heads = 0.05;
    cfg.grid = GridConfig { modes: Mode::ALL.to_vec(), depths: vec![Depth::R18], folds: vec![0] };
    cfg
}

/// What a smoke run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmokeReport {
    pub rows: Vec<ResultRow>,
    pub gap: DeviceGap,
    pub seconds: f64,
}

impl SmokeReport {
    pub fn row(&self, mode: Mode) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

/// Generate a corpus, pre-train a source backbone and run all four modes
/// on one fold, all under `dir`.
pub fn run_smoke(dir: &Path, opts: &SmokeOptions) -> Result<SmokeReport> {
    let start = Instant::now();
    let manifest = write_corpus(&dir.join("data"), &opts.corpus)?;
    let source = dir.join("source.safetensors");
    pretrain_source(&source, 24, opts.source_epochs, opts.seed ^ 0x5eed)?;
    let cfg = smoke_config(dir, &manifest, &source, opts);
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let outcome = run_experiment(&cfg, RunOptions::default())?;
    let (corpus, official) = load_corpus(&cfg)?;
    let units = task_units(&corpus, cfg.task)?;
    let plan = split_plan(&cfg, &corpus, official.as_ref())?;
    let fold = &plan.folds[0];
    let calibration = fit_calibration(&cfg, &corpus, &units, fold)?;
    let gap = device_gap(&cfg, &corpus, &units, fold, &calibration)?;
    Ok(SmokeReport { rows: outcome.rows, gap, seconds: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::load_manifest_corpus;

    #[test]
    fn corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { n_patients: 4, clips_per_patient: 2, ..SynthSpec::default() };
        let m = write_corpus(dir.path(), &spec).unwrap();
        let corpus = load_manifest_corpus(&m).unwrap();
        assert_eq!(corpus.recordings.len(), 8);
        assert_eq!(corpus.cycle_label_counts(Task::Alsc2).unwrap(), vec![4, 4]);
        let devices: Vec<_> = corpus.recordings.iter().map(|r| r.meta.device.clone()).collect();
        assert_eq!(devices.iter().filter(|d| **d == Device::Meditron).count(), 4);
        assert_eq!(corpus.recordings[0].meta.sample_rate_hz, 8_000);
    }

    #[test]
    fn tilt_shapes_spectrum() {
        // a > 0 passes DC, a < 0 passes Nyquist
        let dc = vec![1.0; 8];
        let alt: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(tilt(&dc, 0.7)[4] > tilt(&dc, -0.7)[4]);
        assert!(tilt(&alt, -0.7)[4].abs() > tilt(&alt, 0.7)[4].abs());
    }
}
