//! Corpus ingestion: recording names, cycle annotations, task labels and
//! patient-disjoint splits.
//!
//! The ICBHI conventions are supported directly (file naming, four-column
//! annotation files, the official train/test list and the diagnosis table).
//! Other corpora come in through the generic manifest in [`manifest`].

mod annotation;
mod corpus;
mod labels;
pub mod manifest;
mod names;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use annotation::{parse_annotation, serialize_annotation, CycleAnnotation};
pub use corpus::{extract_cycles, load_icbhi, load_manifest_corpus, Corpus, CycleClip, Recording};
pub use labels::{cycle_label, diagnosis_label, Diagnosis};
pub use names::parse_recording_name;
pub use split::{build_split, parse_split_file, Fold, Role, SplitPlan, SplitScheme, SplitUnit};

/// Recording device. Unknown tokens are kept verbatim under `Other`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Device {
    AKGC417L,
    Meditron,
    Litt3200,
    LittC2SE,
    Other(String),
}

impl Device {
    pub const KNOWN: [Device; 4] = [
        Device::AKGC417L,
        Device::Meditron,
        Device::Litt3200,
        Device::LittC2SE,
    ];

    pub fn parse(token: &str) -> Device {
        Self::KNOWN
            .iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(token))
            .cloned()
            .unwrap_or_else(|| Device::Other(token.to_string()))
    }

    pub fn as_str(&self) -> &str {
        match self {
            Device::AKGC417L => "AKGC417L",
            Device::Meditron => "Meditron",
            Device::Litt3200 => "Litt3200",
            Device::LittC2SE => "LittC2SE",
            Device::Other(s) => s,
        }
    }

    pub fn is_known(&self) -> bool {
        !matches!(self, Device::Other(_))
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionMode {
    SingleChannel,
    MultiChannel,
}

/// Metadata of one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub patient_id: String,
    pub recording_index: String,
    pub chest_location: String,
    pub acquisition_mode: AcquisitionMode,
    pub device: Device,
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    pub diagnosis: String,
}

impl RecordingMeta {
    /// Stable unit id, `patient_recindex_location_mode_device`.
    pub fn unit_id(&self) -> String {
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

/// Classification task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Normal / crackle / wheeze / both, per cycle.
    Alsc4,
    /// Normal / abnormal, per cycle.
    Alsc2,
    /// Healthy / chronic / non-chronic, per recording.
    Rdc3,
    /// Healthy / unhealthy, per recording.
    Rdc2,
    /// Normal / crackle, per cycle.
    Crackle2,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Alsc4, Task::Alsc2, Task::Rdc3, Task::Rdc2, Task::Crackle2];

    pub fn n_classes(self) -> usize {
        match self {
            Task::Alsc4 => 4,
            Task::Rdc3 => 3,
            Task::Alsc2 | Task::Rdc2 | Task::Crackle2 => 2,
        }
    }

    /// Whether the task labels respiratory cycles (as opposed to recordings).
    pub fn is_cycle_level(self) -> bool {
        !matches!(self, Task::Rdc3 | Task::Rdc2)
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::Alsc4 => &["normal", "crackle", "wheeze", "both"],
            Task::Alsc2 => &["normal", "abnormal"],
            Task::Rdc3 => &["healthy", "chronic", "non_chronic"],
            Task::Rdc2 => &["healthy", "unhealthy"],
            Task::Crackle2 => &["normal", "crackle"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Alsc4 => "alsc4",
            Task::Alsc2 => "alsc2",
            Task::Rdc3 => "rdc3",
            Task::Rdc2 => "rdc2",
            Task::Crackle2 => "crackle2",
        }
    }

    /// Two-class counterpart of a multi-class task, if any.
    pub fn binary_counterpart(self) -> Option<Task> {
        match self {
            Task::Alsc4 => Some(Task::Alsc2),
            Task::Rdc3 => Some(Task::Rdc2),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| crate::Error::Config(format!("unknown task `{s}`")))
    }
}

/// A label valid for its task. Class 0 is always the normal/healthy class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskLabel {
    pub task: Task,
    pub label: usize,
}

impl TaskLabel {
    pub fn new(task: Task, label: usize) -> crate::Result<Self> {
        if label >= task.n_classes() {
            return Err(crate::Error::Data(format!(
                "label {label} out of range for task {task}"
            )));
        }
        Ok(TaskLabel { task, label })
    }

    pub fn name(&self) -> &'static str {
        self.task.class_names()[self.label]
    }

    pub fn is_normal(&self) -> bool {
        self.label == 0
    }

    /// Collapse a multi-class label onto the normal/abnormal counterpart task.
    pub fn collapse_binary(&self) -> TaskLabel {
        match self.task.binary_counterpart() {
            Some(task) => TaskLabel {
                task,
                label: usize::from(self.label != 0),
            },
            None => *self,
        }
    }
}
