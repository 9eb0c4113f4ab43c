use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RecordingMeta;
use crate::{Error, Result};

/// Partition a unit belongs to within one fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Validation => "validation",
            Role::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "k")]
pub enum SplitScheme {
    /// The challenge's 60/40 train/test list.
    Official6040,
    /// Patient-wise k-fold cross-validation, stratified by diagnosis.
    Kfold(usize),
    /// Test folds taken verbatim from a manifest column.
    LeaveManifest,
}

/// What the splitter needs to know about a unit (a recording).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitUnit {
    pub unit_id: String,
    pub patient_id: String,
    /// Stratification key, normally the diagnosis.
    pub stratum: String,
    /// Test fold from a manifest, for [`SplitScheme::LeaveManifest`].
    pub manifest_fold: Option<usize>,
}

impl From<&RecordingMeta> for SplitUnit {
    fn from(meta: &RecordingMeta) -> Self {
        SplitUnit {
            unit_id: meta.unit_id(),
            patient_id: meta.patient_id.clone(),
            stratum: meta.diagnosis.clone(),
            manifest_fold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl Fold {
    pub fn role(&self, unit_id: &str) -> Option<Role> {
        let has = |v: &Vec<String>| v.binary_search_by(|u| u.as_str().cmp(unit_id)).is_ok();
        if has(&self.train) {
            Some(Role::Train)
        } else if has(&self.validation) {
            Some(Role::Validation)
        } else if has(&self.test) {
            Some(Role::Test)
        } else {
            None
        }
    }
}

/// Patient-disjoint train/validation/test assignment for every fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: SplitScheme,
    /// Unit id to the index of the fold whose test set contains it. The
    /// official scheme has one fold and lists only its test units.
    pub fold_assignments: BTreeMap<String, usize>,
    pub validation_fraction: f64,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    /// Short stable digest of the assignment, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(&self.folds).expect("folds serialize");
        crate::config::short_hash(&json)
    }
}

/// Parse a split file: one `unit_id train|test` pair per line.
pub fn parse_split_file(text: &str) -> Result<BTreeMap<String, Role>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 2 {
            return Err(Error::Data(format!("split file line {}: expected 2 columns", i + 1)));
        }
        let unit = cols[0].trim_end_matches(".wav").to_string();
        let role = match cols[1].to_ascii_lowercase().as_str() {
            "train" => Role::Train,
            "test" => Role::Test,
            other => {
                return Err(Error::Data(format!(
                    "split file line {}: unknown partition `{other}`",
                    i + 1
                )))
            }
        };
        out.insert(unit, role);
    }
    Ok(out)
}

/// Build a patient-disjoint split plan.
///
/// Validation units are carved from each fold's training patients until at
/// least `validation_fraction` of the training units are covered. The result
/// depends only on the inputs and `seed`.
pub fn build_split(
    units: &[SplitUnit],
    scheme: SplitScheme,
    official: Option<&BTreeMap<String, Role>>,
    validation_fraction: f64,
    seed: u64,
) -> Result<SplitPlan> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction {validation_fraction} outside (0, 1)"
        )));
    }
    let mut patients_of: BTreeMap<&str, Vec<&SplitUnit>> = BTreeMap::new();
    for u in units {
        patients_of.entry(u.patient_id.as_str()).or_default().push(u);
    }
    let n_patients = patients_of.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Per fold: the set of test patients.
    let (test_patients, fold_assignments): (Vec<BTreeSet<&str>>, BTreeMap<String, usize>) = match scheme {
        SplitScheme::Official6040 => {
            let table = official.ok_or(Error::SplitFileMissing)?;
            let mut test = BTreeSet::new();
            let mut train = BTreeSet::new();
            let mut assignments = BTreeMap::new();
            for u in units {
                match table.get(&u.unit_id) {
                    Some(Role::Test) => {
                        test.insert(u.patient_id.as_str());
                        assignments.insert(u.unit_id.clone(), 0);
                    }
                    Some(_) => {
                        train.insert(u.patient_id.as_str());
                    }
                    None => return Err(Error::UnassignedUnit(u.unit_id.clone())),
                }
            }
            if let Some(p) = test.intersection(&train).next() {
                return Err(Error::SplitOverlap(p.to_string()));
            }
            (vec![test], assignments)
        }
        SplitScheme::Kfold(k) => {
            if k < 2 || n_patients < k {
                return Err(Error::InsufficientPatients {
                    needed: k.max(2),
                    found: n_patients,
                });
            }
            // Stratify by each patient's majority stratum, then deal patients
            // round-robin so fold sizes differ by at most one patient.
            let mut by_stratum: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for (patient, us) in &patients_of {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for u in us {
                    *counts.entry(u.stratum.as_str()).or_default() += 1;
                }
                let stratum = counts
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(s, _)| *s)
                    .unwrap_or("");
                by_stratum.entry(stratum).or_default().push(patient);
            }
            let mut folds = vec![BTreeSet::new(); k];
            let mut next = 0usize;
            for group in by_stratum.values_mut() {
                group.shuffle(&mut rng);
                for p in group.iter() {
                    folds[next % k].insert(*p);
                    next += 1;
                }
            }
            let mut assignments = BTreeMap::new();
            for (i, f) in folds.iter().enumerate() {
                for p in f {
                    for u in &patients_of[p] {
                        assignments.insert(u.unit_id.clone(), i);
                    }
                }
            }
            (folds, assignments)
        }
        SplitScheme::LeaveManifest => {
            let mut assignments = BTreeMap::new();
            let mut patient_fold: BTreeMap<&str, usize> = BTreeMap::new();
            for u in units {
                let f = u.manifest_fold.ok_or_else(|| Error::UnassignedUnit(u.unit_id.clone()))?;
                if let Some(prev) = patient_fold.insert(u.patient_id.as_str(), f) {
                    if prev != f {
                        return Err(Error::SplitOverlap(u.patient_id.clone()));
                    }
                }
                assignments.insert(u.unit_id.clone(), f);
            }
            let k = patient_fold.values().max().map_or(0, |m| m + 1);
            if k < 1 || n_patients < 2 {
                return Err(Error::InsufficientPatients { needed: 2, found: n_patients });
            }
            let mut folds = vec![BTreeSet::new(); k];
            for (p, f) in patient_fold {
                folds[f].insert(p);
            }
            (folds, assignments)
        }
    };

    let mut folds = Vec::with_capacity(test_patients.len());
    for (index, test_set) in test_patients.iter().enumerate() {
        let mut train_patients: Vec<&str> = patients_of
            .keys()
            .copied()
            .filter(|p| !test_set.contains(p))
            .collect();
        if train_patients.len() < 2 {
            return Err(Error::InsufficientPatients {
                needed: 2,
                found: train_patients.len(),
            });
        }
        train_patients.shuffle(&mut rng);
        let train_units: usize = train_patients.iter().map(|p| patients_of[p].len()).sum();
        let target = validation_fraction * train_units as f64;
        let mut val_patients = BTreeSet::new();
        let mut covered = 0usize;
        for p in &train_patients[..train_patients.len() - 1] {
            if covered as f64 >= target {
                break;
            }
            covered += patients_of[p].len();
            val_patients.insert(*p);
        }
        let mut fold = Fold {
            index,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for (p, us) in &patients_of {
            let bucket = if test_set.contains(p) {
                &mut fold.test
            } else if val_patients.contains(p) {
                &mut fold.validation
            } else {
                &mut fold.train
            };
            bucket.extend(us.iter().map(|u| u.unit_id.clone()));
        }
        fold.train.sort();
        fold.validation.sort();
        fold.test.sort();
        folds.push(fold);
    }

    Ok(SplitPlan {
        scheme,
        fold_assignments,
        validation_fraction,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn units(patients: &[(&str, &str, usize)]) -> Vec<SplitUnit> {
        patients
            .iter()
            .flat_map(|(p, stratum, n)| {
                (0..*n).map(move |i| SplitUnit {
                    unit_id: format!("{p}_{i}"),
                    patient_id: p.to_string(),
                    stratum: stratum.to_string(),
                    manifest_fold: None,
                })
            })
            .collect()
    }

    fn patient_sets(plan: &SplitPlan, units: &[SplitUnit]) -> Vec<[BTreeSet<String>; 3]> {
        let patient: BTreeMap<&str, &str> = units
            .iter()
            .map(|u| (u.unit_id.as_str(), u.patient_id.as_str()))
            .collect();
        plan.folds
            .iter()
            .map(|f| {
                let set = |v: &Vec<String>| v.iter().map(|u| patient[u.as_str()].to_string()).collect();
                [set(&f.train), set(&f.validation), set(&f.test)]
            })
            .collect()
    }

    fn cohort() -> Vec<SplitUnit> {
        let ids: Vec<(String, &str, usize)> = (0..16)
            .map(|i| (format!("h{i:02}"), "Healthy", 3 + i % 4))
            .chain((0..7).map(|i| (format!("ipf{i}"), "IPF", 5 + i % 3)))
            .collect();
        let refs: Vec<(&str, &str, usize)> = ids.iter().map(|(a, b, c)| (a.as_str(), *b, *c)).collect();
        units(&refs)
    }

    #[test]
    fn seven_fold_places_each_ipf_subject_once() {
        let us = cohort();
        let plan = build_split(&us, SplitScheme::Kfold(7), None, 0.2, 11).unwrap();
        assert_eq!(plan.folds.len(), 7);
        let sets = patient_sets(&plan, &us);
        for i in 0..7 {
            let ipf = format!("ipf{i}");
            let n = sets.iter().filter(|s| s[2].contains(&ipf)).count();
            assert_eq!(n, 1, "{ipf}");
        }
        for s in &sets {
            assert_eq!(s[2].iter().filter(|p| p.starts_with("ipf")).count(), 1);
        }
        let sizes: Vec<usize> = sets.iter().map(|s| s[2].len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
    }

    #[test]
    fn deterministic_under_seed() {
        let us = cohort();
        let a = build_split(&us, SplitScheme::Kfold(5), None, 0.2, 3).unwrap();
        let b = build_split(&us, SplitScheme::Kfold(5), None, 0.2, 3).unwrap();
        assert_eq!(a, b);
        let c = build_split(&us, SplitScheme::Kfold(5), None, 0.2, 4).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn single_patient_is_insufficient() {
        let us = units(&[("p1", "COPD", 4)]);
        assert!(matches!(
            build_split(&us, SplitScheme::Kfold(5), None, 0.2, 0),
            Err(Error::InsufficientPatients { .. })
        ));
    }

    #[test]
    fn official_requires_file() {
        let us = units(&[("p1", "COPD", 2), ("p2", "COPD", 2)]);
        assert!(matches!(
            build_split(&us, SplitScheme::Official6040, None, 0.2, 0),
            Err(Error::SplitFileMissing)
        ));
    }

    #[test]
    fn official_split_from_file() {
        let us = units(&[("p1", "COPD", 2), ("p2", "URTI", 2), ("p3", "Healthy", 3), ("p4", "COPD", 1)]);
        let table = parse_split_file("p1_0\ttrain\np1_1 train\np2_0 train\np2_1 train\np3_0 train\np3_1 train\np3_2 train\np4_0 test\n").unwrap();
        let plan = build_split(&us, SplitScheme::Official6040, Some(&table), 0.2, 0).unwrap();
        assert_eq!(plan.folds.len(), 1);
        assert_eq!(plan.folds[0].test, vec!["p4_0".to_string()]);
        assert!(!plan.folds[0].validation.is_empty());
        assert_eq!(plan.folds[0].role("p4_0"), Some(Role::Test));
        assert_eq!(plan.fold_assignments.get("p4_0"), Some(&0));

        let mut overlap = table.clone();
        overlap.insert("p1_1".into(), Role::Test);
        assert!(matches!(
            build_split(&us, SplitScheme::Official6040, Some(&overlap), 0.2, 0),
            Err(Error::SplitOverlap(_))
        ));
        let mut missing = table;
        missing.remove("p3_2");
        assert!(matches!(
            build_split(&us, SplitScheme::Official6040, Some(&missing), 0.2, 0),
            Err(Error::UnassignedUnit(_))
        ));
    }

    #[test]
    fn manifest_folds() {
        let mut us = cohort();
        for u in &mut us {
            let n: usize = u.patient_id.bytes().map(usize::from).sum();
            u.manifest_fold = Some(n % 3);
        }
        let plan = build_split(&us, SplitScheme::LeaveManifest, None, 0.2, 0).unwrap();
        for u in &us {
            assert_eq!(plan.fold_assignments[&u.unit_id], u.manifest_fold.unwrap());
            assert_eq!(plan.folds[u.manifest_fold.unwrap()].role(&u.unit_id), Some(Role::Test));
        }
    }

    proptest! {
        #[test]
        fn folds_are_patient_disjoint(
            counts in prop::collection::vec(1usize..6, 6..30),
            k in 2usize..6,
            seed in any::<u64>(),
            frac in 0.05f64..0.5,
        ) {
            let ids: Vec<(String, &str, usize)> = counts
                .iter()
                .enumerate()
                .map(|(i, n)| (format!("p{i}"), if i % 3 == 0 { "COPD" } else { "Healthy" }, *n))
                .collect();
            let refs: Vec<(&str, &str, usize)> = ids.iter().map(|(a, b, c)| (a.as_str(), *b, *c)).collect();
            let us = units(&refs);
            let plan = build_split(&us, SplitScheme::Kfold(k), None, frac, seed).unwrap();
            let sets = patient_sets(&plan, &us);
            for s in &sets {
                prop_assert!(s[0].is_disjoint(&s[1]));
                prop_assert!(s[0].is_disjoint(&s[2]));
                prop_assert!(s[1].is_disjoint(&s[2]));
                prop_assert!(!s[0].is_empty());
            }
            let total: usize = plan.folds.iter().map(|f| f.test.len()).sum();
            prop_assert_eq!(total, us.len());
            let sizes: Vec<usize> = sets.iter().map(|s| s[2].len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
