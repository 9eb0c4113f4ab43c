//! Experiment configuration: one TOML document with a section per stage,
//! plus dotted `key=value` overrides from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{build_balance_plan, AugmentPlan};
use crate::backbone::{BackboneSpec, Depth, PretrainedSource};
use crate::cotuning::{Mode, RelationshipMethod, ReverseFit, TrainConfig};
use crate::features::{InputLayout, SegmentSpec, SpectralConfig};
use crate::ingest::{SplitScheme, Task};
use crate::speccorr::CalibrationPreset;
use crate::{Error, Result};

/// First 12 hex digits of the SHA-256 of the value's canonical JSON.
pub fn short_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_value(value).expect("serializable value");
    let digest = Sha256::digest(json.to_string().as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// Where recordings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// ICBHI directory layout plus the diagnosis table and, for the official
    /// split, the train/test list.
    Icbhi {
        root: PathBuf,
        diagnosis_table: PathBuf,
        #[serde(default)]
        split_file: Option<PathBuf>,
    },
    /// Generic CSV manifest.
    Manifest { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Manifest { path: PathBuf::from("manifest.csv") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub scheme: SplitScheme,
    /// Share of training units held out for validation.
    pub validation_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { scheme: SplitScheme::Official6040, validation_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeccorrConfig {
    pub preset: CalibrationPreset,
}

impl Default for SpeccorrConfig {
    fn default() -> Self {
        SpeccorrConfig { preset: CalibrationPreset::CalibAllDev }
    }
}

/// Class balancing. `None` fields fall back to the task defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Disable to train on the original items only.
    pub disabled: bool,
    pub vtlp: Option<bool>,
    pub flip: Option<bool>,
    pub time_ops: Option<bool>,
    pub stretch_low: Option<f64>,
    pub stretch_high: Option<f64>,
}

impl AugmentConfig {
    /// Plan for the given training class counts.
    pub fn plan(&self, class_counts: &[usize], task: Task, seed: u64) -> Result<AugmentPlan> {
        if self.disabled {
            return Ok(AugmentPlan::none(seed));
        }
        let mut plan = build_balance_plan(class_counts, task, seed);
        if let Some(v) = self.vtlp {
            plan.vtlp_enabled = v;
        }
        if let Some(f) = self.flip {
            plan.flip_enabled = f;
        }
        if self.time_ops == Some(false) {
            plan.time_ops = crate::augment::TimeDomainOps::disabled();
        } else if self.time_ops == Some(true) && plan.time_ops == crate::augment::TimeDomainOps::disabled() {
            plan.time_ops = crate::augment::TimeDomainOps::default();
        }
        if let Some(lo) = self.stretch_low {
            plan.stretch_low = lo;
        }
        if let Some(hi) = self.stretch_high {
            plan.stretch_high = hi;
        }
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CotuningConfig {
    pub relationship: RelationshipMethod,
    pub reverse: ReverseFit,
    /// Source prior for the reverse approach; the mean source prediction
    /// when unset.
    pub source_prior: Option<Vec<f64>>,
    /// Source temperature when the pre-trained weights carry none.
    pub temperature: f64,
}

impl Default for CotuningConfig {
    fn default() -> Self {
        CotuningConfig {
            relationship: RelationshipMethod::Direct,
            reverse: ReverseFit::default(),
            source_prior: None,
            temperature: 1.0,
        }
    }
}

/// Which grid cells to run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Empty means `train.mode` only.
    pub modes: Vec<Mode>,
    /// Empty means `backbone.depth` only.
    pub depths: Vec<Depth>,
    /// Empty means every fold of the split.
    pub folds: Vec<usize>,
}

/// Everything one experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    pub seed: u64,
    /// Independent training runs per fold.
    pub n_runs: usize,
    pub output_dir: PathBuf,
    pub data: DataSource,
    pub split: SplitConfig,
    pub segment: SegmentSpec,
    pub features: SpectralConfig,
    pub speccorr: SpeccorrConfig,
    pub augment: AugmentConfig,
    pub backbone: BackboneSpec,
    pub train: TrainConfig,
    pub cotuning: CotuningConfig,
    pub grid: GridConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::for_task(Task::Alsc4)
    }
}

impl ExperimentConfig {
    /// Defaults for a task: 16 kHz cycles in replicated channels for the
    /// cycle-level tasks, 4 kHz half-overlapping recording segments as RGB
    /// images for disease classification.
    pub fn for_task(task: Task) -> Self {
        let (sr, overlap, layout) = if task.is_cycle_level() {
            (16_000, 0.0, InputLayout::Replicate3)
        } else {
            (4_000, 0.5, InputLayout::RgbUpscaled2x)
        };
        ExperimentConfig {
            name: task.as_str().to_string(),
            task,
            seed: 0,
            n_runs: if task.is_cycle_level() { 5 } else { 1 },
            output_dir: PathBuf::from("runs"),
            data: DataSource::default(),
            split: SplitConfig::default(),
            segment: SegmentSpec { length_s: 8.0, overlap_fraction: overlap, sample_rate_hz: sr },
            features: SpectralConfig::icbhi(sr),
            speccorr: SpeccorrConfig::default(),
            augment: AugmentConfig::default(),
            backbone: BackboneSpec { input_layout: layout, ..BackboneSpec::default() },
            // The head rate applies to the non-vanilla cells; see `cell`.
            train: TrainConfig { lr_heads: 0.01, ..TrainConfig::default() },
            cotuning: CotuningConfig::default(),
            grid: GridConfig::default(),
        }
    }

    /// Parse a TOML document and apply `key=value` overrides. Relative
    /// paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut doc: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        // Unset keys take the defaults of the named task.
        let task: Task = match doc.get("task") {
            Some(t) => t.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            None => Task::Alsc4,
        };
        let mut merged = toml::Value::try_from(ExperimentConfig::for_task(task)).expect("defaults serialize");
        merge(&mut merged, doc);
        let mut cfg: ExperimentConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, overrides, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        match &mut self.data {
            DataSource::Icbhi { root, diagnosis_table, split_file } => {
                fix(root);
                fix(diagnosis_table);
                if let Some(s) = split_file {
                    fix(s);
                }
            }
            DataSource::Manifest { path } => fix(path),
        }
        match &mut self.backbone.pretrained {
            PretrainedSource::Imagenet { path } | PretrainedSource::Checkpoint { path } => fix(path),
            PretrainedSource::None => {}
        }
    }

    /// Hard errors for unusable settings, warnings for departures from the
    /// task's usual front end.
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.train.validate()?;
        self.backbone.stochnorm.validate()?;
        self.segment.hop_samples()?;
        if self.segment.sample_rate_hz != self.features.sample_rate_hz {
            return Err(Error::Config(format!(
                "segment rate {} Hz differs from feature rate {} Hz",
                self.segment.sample_rate_hz, self.features.sample_rate_hz
            )));
        }
        if self.segment.length_samples()? < self.features.nfft {
            return Err(Error::Config("segments are shorter than one FFT frame".into()));
        }
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        if self.backbone.width == 0 {
            return Err(Error::Config("backbone width must be positive".into()));
        }
        let usual = ExperimentConfig::for_task(self.task);
        if self.backbone.input_layout != usual.backbone.input_layout {
            log::warn!("task {} usually uses the {:?} layout", self.task, usual.backbone.input_layout);
        }
        if self.features.sample_rate_hz != usual.features.sample_rate_hz {
            log::warn!("task {} usually runs at {} Hz", self.task, usual.features.sample_rate_hz);
        }
        if let Some(prior) = &self.cotuning.source_prior {
            let total: f64 = prior.iter().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::Config(format!("source prior sums to {total}")));
            }
        }
        Ok(())
    }

    pub fn modes(&self) -> Vec<Mode> {
        if self.grid.modes.is_empty() {
            vec![self.train.mode]
        } else {
            self.grid.modes.clone()
        }
    }

    pub fn depths(&self) -> Vec<Depth> {
        if self.grid.depths.is_empty() {
            vec![self.backbone.depth]
        } else {
            self.grid.depths.clone()
        }
    }

    /// The configuration of one grid cell: mode and depth fixed, learning
    /// rates as the mode prescribes (vanilla uses the backbone rate for the
    /// head as well).
    pub fn cell(&self, mode: Mode, depth: Depth) -> ExperimentConfig {
        let mut c = self.clone();
        c.train.mode = mode;
        if mode == Mode::Vanilla {
            c.train.lr_heads = c.train.lr_backbone;
        }
        c.backbone.depth = depth;
        c.backbone.norm = mode.norm_kind();
        c.grid = GridConfig::default();
        c
    }

    /// Hash of everything that affects a cell's results (run count and
    /// output location excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.n_runs = 0;
        c.output_dir = PathBuf::new();
        c.name = String::new();
        short_hash(&c)
    }
}

/// Overlay `top` onto `base`, table by table. A table that changes its
/// `kind` tag replaces the base table wholesale.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot @ toml::Value::Table(_)) if v.is_table() && same_kind(slot, &v) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn same_kind(a: &toml::Value, b: &toml::Value) -> bool {
    match (a.get("kind"), b.get("kind")) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    }
}

/// Set `a.b.c=value`. The value is read as a TOML value when it parses as
/// one and as a bare string otherwise.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut node = doc;
    for p in parts {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{p}` is inside a non-table value")))?;
        node = table.entry(p).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{key}` does not name a table entry")))?
        .insert(last.to_string(), value);
    Ok(())
}
