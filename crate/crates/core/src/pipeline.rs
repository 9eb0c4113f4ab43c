//! From a loaded corpus to per-fold training, validation and test sets.
//!
//! For one fold the steps are: fit spectrum-correction coefficients on the
//! training units, expand the training units with the balancing plan,
//! compute (corrected, possibly warped and flipped) log-mel segments for
//! every unit, and normalize everything with statistics of the training
//! features.

use std::collections::BTreeMap;
use std::fs;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::augment::{expand, flip_frequency, AugmentPlan, AugmentRecord, TrainItem};
use crate::config::{DataSource, ExperimentConfig};
use crate::cotuning::{Dataset, Example};
use crate::features::{
    logmel, mel_filterbank, resample, segment, LogMelFeature, NormAccumulator, NormStats, SegmentSpec, SpectralConfig,
    StftPlan, LOG_FLOOR,
};
use crate::ingest::manifest::NormalizedRow;
use crate::ingest::{
    build_split, cycle_label, extract_cycles, load_icbhi, load_manifest_corpus, parse_split_file, Corpus, CycleClip,
    Device, Fold, Role, SplitPlan, Task,
};
use crate::speccorr::{segment_mean_spectrum, Calibration, ProfileAccumulator};
use crate::{Error, Result};

/// One classified unit: a respiratory cycle or a whole recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub id: String,
    /// Index into `Corpus::recordings`.
    pub recording: usize,
    /// Cycle index within the recording, for cycle-level tasks.
    pub cycle: Option<usize>,
    pub label: usize,
    pub device: Device,
}

/// Load the corpus and, when given, the official train/test list.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<(Corpus, Option<BTreeMap<String, Role>>)> {
    match &cfg.data {
        DataSource::Icbhi { root, diagnosis_table, split_file } => {
            let corpus = load_icbhi(root, diagnosis_table)?;
            let official = match split_file {
                Some(p) => Some(parse_split_file(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?),
                None => None,
            };
            Ok((corpus, official))
        }
        DataSource::Manifest { path } => Ok((load_manifest_corpus(path)?, None)),
    }
}

/// Units of a task in corpus order.
pub fn task_units(corpus: &Corpus, task: Task) -> Result<Vec<Unit>> {
    let mut out = Vec::new();
    for (ri, r) in corpus.recordings.iter().enumerate() {
        if task.is_cycle_level() {
            for (ci, c) in r.cycles.iter().enumerate() {
                out.push(Unit {
                    id: format!("{}#c{ci}", r.id),
                    recording: ri,
                    cycle: Some(ci),
                    label: cycle_label(c.crackle, c.wheeze, task)?.label,
                    device: r.meta.device.clone(),
                });
            }
        } else {
            out.push(Unit {
                id: r.id.clone(),
                recording: ri,
                cycle: None,
                label: r.recording_label(task)?.label,
                device: r.meta.device.clone(),
            });
        }
    }
    Ok(out)
}

/// Patient-disjoint split of the corpus recordings.
pub fn split_plan(cfg: &ExperimentConfig, corpus: &Corpus, official: Option<&BTreeMap<String, Role>>) -> Result<SplitPlan> {
    build_split(&corpus.split_units(), cfg.split.scheme, official, cfg.split.validation_fraction, cfg.seed)
}

/// Role of each unit in a fold, by its recording.
pub fn unit_roles<'a>(corpus: &Corpus, units: &'a [Unit], fold: &Fold) -> Vec<(&'a Unit, Role)> {
    units
        .iter()
        .filter_map(|u| fold.role(&corpus.recordings[u.recording].id).map(|r| (u, r)))
        .collect()
}

/// Resampled audio per unit, keeping the last recording in memory so that
/// consecutive cycles of one recording load it once.
struct AudioSource<'a> {
    corpus: &'a Corpus,
    sample_rate_hz: u32,
    last: Option<(usize, Vec<f64>, Vec<CycleClip>)>,
}

impl<'a> AudioSource<'a> {
    fn new(corpus: &'a Corpus, sample_rate_hz: u32) -> Self {
        AudioSource { corpus, sample_rate_hz, last: None }
    }

    /// `None` when the unit's cycle holds no samples.
    fn unit(&mut self, unit: &Unit) -> Result<Option<Vec<f64>>> {
        if self.last.as_ref().map(|l| l.0) != Some(unit.recording) {
            let rec = &self.corpus.recordings[unit.recording];
            let raw = rec.load_audio()?;
            let samples = resample(&raw, rec.meta.sample_rate_hz, self.sample_rate_hz);
            let clips = extract_cycles(&samples, self.sample_rate_hz, &rec.cycles);
            self.last = Some((unit.recording, samples, clips));
        }
        let (_, samples, clips) = self.last.as_ref().expect("just loaded");
        Ok(match unit.cycle {
            None => Some(samples.clone()),
            Some(ci) => clips.iter().find(|c| c.index == ci).map(|c| c.samples.clone()),
        })
    }
}

/// Segmentation, STFT and the canonical filterbank for one configuration.
pub struct FeatureExtractor {
    pub spectral: SpectralConfig,
    pub segment: SegmentSpec,
    stft: StftPlan,
    bank: Array2<f64>,
}

impl FeatureExtractor {
    pub fn new(spectral: &SpectralConfig, segment: &SegmentSpec) -> Result<Self> {
        spectral.validate()?;
        Ok(FeatureExtractor {
            spectral: spectral.clone(),
            segment: segment.clone(),
            stft: StftPlan::from_config(spectral),
            bank: mel_filterbank(spectral)?,
        })
    }

    /// STFT magnitudes of every fixed-length segment.
    pub fn magnitudes(&self, samples: &[f64]) -> Result<Vec<Array2<f64>>> {
        segment(samples, &self.segment)?.iter().map(|s| self.stft.magnitude(s)).collect()
    }

    /// Un-normalized log-mel segments of one (possibly augmented) item.
    pub fn features(
        &self,
        samples: &[f64],
        device: &Device,
        calibration: &Calibration,
        record: &AugmentRecord,
    ) -> Result<Vec<LogMelFeature>> {
        let mut audio = samples.to_vec();
        for op in record.time_ops() {
            audio = op.apply(&audio)?;
        }
        let warped;
        let bank = match record.vtlp() {
            Some((alpha, fhi)) => {
                warped = mel_filterbank(&self.spectral.with_warp(alpha, fhi))?;
                &warped
            }
            None => &self.bank,
        };
        let mut out = Vec::new();
        for (k, mags) in self.magnitudes(&audio)?.into_iter().enumerate() {
            let corrected = calibration.apply(device, &mags)?;
            let mut f = logmel(&corrected, bank, LOG_FLOOR)?;
            f.provenance.segment_id = format!("{}#s{k}", record.id);
            f.provenance.device = device.to_string();
            f.provenance.correction = calibration.source.clone();
            if record.flipped() {
                f = flip_frequency(&f);
            }
            out.push(f);
        }
        Ok(out)
    }
}

/// Spectrum-correction coefficients from the training units of a fold.
/// Devices outside the known set do not contribute.
pub fn fit_calibration(cfg: &ExperimentConfig, corpus: &Corpus, units: &[Unit], fold: &Fold) -> Result<Calibration> {
    let fx = FeatureExtractor::new(&cfg.features, &cfg.segment)?;
    let mut audio = AudioSource::new(corpus, cfg.features.sample_rate_hz);
    let mut acc = ProfileAccumulator::default();
    for (u, role) in unit_roles(corpus, units, fold) {
        if role != Role::Train || !u.device.is_known() {
            continue;
        }
        let Some(samples) = audio.unit(u)? else { continue };
        for mags in fx.magnitudes(&samples)? {
            acc.push(&u.device, segment_mean_spectrum(&mags)?.as_slice().expect("contiguous"))?;
        }
    }
    Calibration::fit(&acc.finish(), cfg.speccorr.preset, format!("train-fold-{}", fold.index), cfg.hash())
}

/// Training class counts of a fold.
pub fn train_counts(corpus: &Corpus, units: &[Unit], fold: &Fold, task: Task) -> Vec<usize> {
    let mut counts = vec![0; task.n_classes()];
    for (u, role) in unit_roles(corpus, units, fold) {
        if role == Role::Train {
            counts[u.label] += 1;
        }
    }
    counts
}

/// The balancing plan of a fold and its expanded training records.
pub fn fold_augmentation(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    units: &[Unit],
    fold: &Fold,
) -> Result<(AugmentPlan, Vec<AugmentRecord>)> {
    let plan = cfg.augment.plan(&train_counts(corpus, units, fold, cfg.task), cfg.task, cfg.seed)?;
    let items: Vec<TrainItem> = unit_roles(corpus, units, fold)
        .into_iter()
        .filter(|(_, r)| *r == Role::Train)
        .map(|(u, _)| TrainItem { id: u.id.clone(), label: u.label })
        .collect();
    let records = expand(&items, &plan, cfg.features.nyquist_hz());
    Ok((plan, records))
}

/// Everything a fold needs for training and testing.
#[derive(Debug, Clone)]
pub struct PreparedFold {
    pub fold: usize,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub calibration: Calibration,
    pub norm_stats: NormStats,
    pub plan: AugmentPlan,
    pub records: Vec<AugmentRecord>,
}

/// Build the normalized datasets of one fold.
pub fn prepare_fold(cfg: &ExperimentConfig, corpus: &Corpus, units: &[Unit], fold: &Fold) -> Result<PreparedFold> {
    let calibration = fit_calibration(cfg, corpus, units, fold)?;
    let (plan, records) = fold_augmentation(cfg, corpus, units, fold)?;
    let mut by_source: BTreeMap<&str, Vec<&AugmentRecord>> = BTreeMap::new();
    for r in &records {
        by_source.entry(r.source_id.as_str()).or_default().push(r);
    }
    let fx = FeatureExtractor::new(&cfg.features, &cfg.segment)?;
    let mut audio = AudioSource::new(corpus, cfg.features.sample_rate_hz);
    let mut sets: [Vec<Example>; 3] = Default::default();
    for (u, role) in unit_roles(corpus, units, fold) {
        let Some(samples) = audio.unit(u)? else {
            log::warn!("unit {} has no samples; skipped", u.id);
            continue;
        };
        let plain = AugmentRecord { id: u.id.clone(), source_id: u.id.clone(), label: u.label, ops: Vec::new() };
        let plain_ref = [&plain];
        let recs: &[&AugmentRecord] = match role {
            Role::Train => by_source.get(u.id.as_str()).map_or(&[], Vec::as_slice),
            _ => &plain_ref,
        };
        let slot = match role {
            Role::Train => 0,
            Role::Validation => 1,
            Role::Test => 2,
        };
        for rec in recs {
            for feature in fx.features(&samples, &u.device, &calibration, rec)? {
                sets[slot].push(Example {
                    id: feature.provenance.segment_id.clone(),
                    unit: u.id.clone(),
                    feature,
                    label: u.label,
                });
            }
        }
    }
    if sets[0].is_empty() {
        return Err(Error::Data(format!("fold {} has no training segments", fold.index)));
    }
    let mut acc = NormAccumulator::default();
    for e in &sets[0] {
        acc.extend(e.feature.values.iter());
    }
    let norm_stats = acc.finish();
    let [train, validation, test] = sets.map(|examples| Dataset {
        examples: examples
            .into_iter()
            .map(|e| Example { feature: e.feature.normalize(&norm_stats), ..e })
            .collect(),
        layout: cfg.backbone.input_layout,
        n_classes: cfg.task.n_classes(),
    });
    Ok(PreparedFold { fold: fold.index, train, validation, test, calibration, norm_stats, plan, records })
}

/// Normalized manifest rows of every fold: each unit with its role, plus
/// the augmented training copies with their op chains.
pub fn manifest_rows(cfg: &ExperimentConfig, corpus: &Corpus, units: &[Unit], plan: &SplitPlan) -> Result<Vec<NormalizedRow>> {
    let mut rows = Vec::new();
    let names = cfg.task.class_names();
    for fold in &plan.folds {
        let by_id: BTreeMap<&str, (&Unit, Role)> = unit_roles(corpus, units, fold).into_iter().map(|(u, r)| (u.id.as_str(), (u, r))).collect();
        let (_, records) = fold_augmentation(cfg, corpus, units, fold)?;
        let row = |u: &Unit, role: Role, id: &str, ops: String| {
            let rec = &corpus.recordings[u.recording];
            let cyc = u.cycle.map(|c| rec.cycles[c]);
            NormalizedRow {
                unit_id: id.to_string(),
                recording_id: rec.id.clone(),
                patient_id: rec.meta.patient_id.clone(),
                device: u.device.to_string(),
                task: cfg.task.to_string(),
                label: u.label,
                label_name: names[u.label].to_string(),
                fold: fold.index,
                role: role.as_str().to_string(),
                begin_s: cyc.map(|c| c.begin_s),
                end_s: cyc.map(|c| c.end_s),
                augmented: !ops.is_empty(),
                source_id: u.id.clone(),
                ops,
            }
        };
        for r in &records {
            let (u, role) = by_id[r.source_id.as_str()];
            rows.push(row(u, role, &r.id, r.op_chain()));
        }
        for (u, role) in by_id.values() {
            if *role != Role::Train {
                rows.push(row(u, *role, &u.id, String::new()));
            }
        }
    }
    Ok(rows)
}

/// Mean pairwise L2 distance between the per-device mean magnitude
/// spectra of a fold's test units, without and with spectrum correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceGap {
    pub raw: f64,
    pub corrected: f64,
}

impl DeviceGap {
    /// Share of the raw gap removed by correction.
    pub fn reduction(&self) -> f64 {
        if self.raw > 0.0 {
            1.0 - self.corrected / self.raw
        } else {
            0.0
        }
    }
}

pub fn device_gap(cfg: &ExperimentConfig, corpus: &Corpus, units: &[Unit], fold: &Fold, calibration: &Calibration) -> Result<DeviceGap> {
    let fx = FeatureExtractor::new(&cfg.features, &cfg.segment)?;
    let identity = Calibration { coefficients: Vec::new(), reference_set: Vec::new(), ..calibration.clone() };
    let mut audio = AudioSource::new(corpus, cfg.features.sample_rate_hz);
    let mut sums: BTreeMap<Device, [(Vec<f64>, usize); 2]> = BTreeMap::new();
    for (u, role) in unit_roles(corpus, units, fold) {
        if role != Role::Test || !u.device.is_known() {
            continue;
        }
        let Some(samples) = audio.unit(u)? else { continue };
        let slot = sums.entry(u.device.clone()).or_insert_with(Default::default);
        for mags in fx.magnitudes(&samples)? {
            for (k, cal) in [&identity, calibration].into_iter().enumerate() {
                let spectrum = segment_mean_spectrum(&cal.apply(&u.device, &mags)?)?;
                let (acc, n) = &mut slot[k];
                if acc.is_empty() {
                    *acc = vec![0.0; spectrum.len()];
                }
                acc.iter_mut().zip(spectrum.iter()).for_each(|(a, b)| *a += b);
                *n += 1;
            }
        }
    }
    if sums.len() < 2 {
        return Err(Error::Data(format!("fold {} test units cover fewer than two known devices", fold.index)));
    }
    let means: Vec<[Vec<f64>; 2]> =
        sums.into_values().map(|s| s.map(|(acc, n)| acc.into_iter().map(|v| v / n as f64).collect())).collect();
    let gap = |k: usize| {
        let mut total = 0.0;
        let mut pairs = 0;
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                total += means[i][k].iter().zip(&means[j][k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                pairs += 1;
            }
        }
        total / pairs as f64
    };
    Ok(DeviceGap { raw: gap(0), corrected: gap(1) })
}
