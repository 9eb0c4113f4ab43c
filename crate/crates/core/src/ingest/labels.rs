use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Task, TaskLabel};
use crate::{Error, Result};

/// Map a cycle's crackle/wheeze flags onto a cycle-level task label.
pub fn cycle_label(crackle: bool, wheeze: bool, task: Task) -> Result<TaskLabel> {
    let label = match task {
        Task::Alsc4 => match (crackle, wheeze) {
            (false, false) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (true, true) => 3,
        },
        Task::Alsc2 => usize::from(crackle || wheeze),
        Task::Crackle2 => usize::from(crackle),
        Task::Rdc3 | Task::Rdc2 => return Err(Error::UnsupportedTask(task.to_string())),
    };
    Ok(TaskLabel { task, label })
}

/// Diagnosis vocabulary of the public corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    Healthy,
    Copd,
    Bronchiectasis,
    Asthma,
    Urti,
    Lrti,
    Pneumonia,
    Bronchiolitis,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 8] = [
        Diagnosis::Healthy,
        Diagnosis::Copd,
        Diagnosis::Bronchiectasis,
        Diagnosis::Asthma,
        Diagnosis::Urti,
        Diagnosis::Lrti,
        Diagnosis::Pneumonia,
        Diagnosis::Bronchiolitis,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Diagnosis::Healthy => "Healthy",
            Diagnosis::Copd => "COPD",
            Diagnosis::Bronchiectasis => "Bronchiectasis",
            Diagnosis::Asthma => "Asthma",
            Diagnosis::Urti => "URTI",
            Diagnosis::Lrti => "LRTI",
            Diagnosis::Pneumonia => "Pneumonia",
            Diagnosis::Bronchiolitis => "Bronchiolitis",
        }
    }

    pub fn is_chronic(self) -> bool {
        matches!(self, Diagnosis::Copd | Diagnosis::Bronchiectasis | Diagnosis::Asthma)
    }
}

impl FromStr for Diagnosis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Diagnosis::ALL
            .into_iter()
            .find(|d| d.token().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownDiagnosis(s.to_string()))
    }
}

/// Map a diagnosis token onto a recording-level task label.
pub fn diagnosis_label(diagnosis: &str, task: Task) -> Result<TaskLabel> {
    let d: Diagnosis = diagnosis.parse()?;
    let label = match task {
        Task::Rdc3 => match d {
            Diagnosis::Healthy => 0,
            d if d.is_chronic() => 1,
            _ => 2,
        },
        Task::Rdc2 => usize::from(d != Diagnosis::Healthy),
        _ => {
            return Err(Error::Config(format!(
                "task {task} labels cycles, not diagnoses"
            )))
        }
    };
    Ok(TaskLabel { task, label })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn alsc4_classes() {
        assert_eq!(cycle_label(true, true, Task::Alsc4).unwrap().name(), "both");
        assert_eq!(cycle_label(true, false, Task::Alsc4).unwrap().name(), "crackle");
        assert_eq!(cycle_label(false, true, Task::Alsc4).unwrap().name(), "wheeze");
        assert_eq!(cycle_label(false, false, Task::Alsc4).unwrap().name(), "normal");
    }

    #[test]
    fn binary_cycle_tasks() {
        assert_eq!(cycle_label(false, false, Task::Alsc2).unwrap().name(), "normal");
        assert_eq!(cycle_label(false, true, Task::Alsc2).unwrap().name(), "abnormal");
        assert_eq!(cycle_label(true, false, Task::Crackle2).unwrap().name(), "crackle");
        assert_eq!(cycle_label(false, true, Task::Crackle2).unwrap().name(), "normal");
    }

    #[test]
    fn rdc_rejected_for_cycles() {
        assert!(matches!(cycle_label(true, false, Task::Rdc3), Err(Error::UnsupportedTask(_))));
        assert!(matches!(cycle_label(true, false, Task::Rdc2), Err(Error::UnsupportedTask(_))));
    }

    #[test]
    fn cycle_label_total_and_surjective() {
        for task in [Task::Alsc4, Task::Alsc2, Task::Crackle2] {
            let mut seen = BTreeSet::new();
            for c in [false, true] {
                for w in [false, true] {
                    seen.insert(cycle_label(c, w, task).unwrap().label);
                }
            }
            assert_eq!(seen.len(), task.n_classes(), "{task}");
        }
    }

    #[test]
    fn diagnoses() {
        assert_eq!(diagnosis_label("COPD", Task::Rdc3).unwrap().name(), "chronic");
        assert_eq!(diagnosis_label("Asthma", Task::Rdc3).unwrap().name(), "chronic");
        assert_eq!(diagnosis_label("Bronchiectasis", Task::Rdc3).unwrap().name(), "chronic");
        for nc in ["URTI", "LRTI", "Pneumonia", "Bronchiolitis"] {
            assert_eq!(diagnosis_label(nc, Task::Rdc3).unwrap().name(), "non_chronic");
            assert_eq!(diagnosis_label(nc, Task::Rdc2).unwrap().name(), "unhealthy");
        }
        assert_eq!(diagnosis_label("Healthy", Task::Rdc2).unwrap().name(), "healthy");
        assert_eq!(diagnosis_label("Healthy", Task::Rdc3).unwrap().name(), "healthy");
        assert!(matches!(diagnosis_label("Flu", Task::Rdc3), Err(Error::UnknownDiagnosis(_))));
        assert!(diagnosis_label("COPD", Task::Alsc4).is_err());
    }
}
