//! Tabular corpus descriptions.
//!
//! The generic manifest is a CSV file with a header row and the columns
//! `path, patient, device, diagnosis` plus the optional `cycle_file, fold,
//! recording_id, channel`. Paths are relative to the manifest's directory.
//! `cycle_file` points at a four-column annotation file; `fold` feeds the
//! leave-manifest split scheme.
//!
//! The normalized manifest written by [`write_normalized_manifest`] has one
//! row per labelled unit (cycle or recording) with its fold and role.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub patient: String,
    pub device: String,
    pub diagnosis: String,
    #[serde(default, deserialize_with = "csv::invalid_option")]
    pub cycle_file: Option<String>,
    #[serde(default, deserialize_with = "csv::invalid_option")]
    pub fold: Option<usize>,
    #[serde(default, deserialize_with = "csv::invalid_option")]
    pub recording_id: Option<String>,
    #[serde(default, deserialize_with = "csv::invalid_option")]
    pub channel: Option<usize>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
    Ok(rows
        .into_iter()
        .map(|mut r| {
            if r.cycle_file.as_deref() == Some("") {
                r.cycle_file = None;
            }
            if r.recording_id.as_deref() == Some("") {
                r.recording_id = None;
            }
            r
        })
        .collect())
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Parse a `patient_id diagnosis` table (whitespace separated).
pub fn parse_diagnosis_table(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        match cols.as_slice() {
            [] => {}
            [patient, diagnosis] => {
                out.insert(patient.to_string(), diagnosis.to_string());
            }
            _ => {
                return Err(Error::Data(format!(
                    "diagnosis table line {}: expected 2 columns",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn read_diagnosis_table(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_diagnosis_table(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// One row of the normalized manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRow {
    pub unit_id: String,
    pub recording_id: String,
    pub patient_id: String,
    pub device: String,
    pub task: String,
    pub label: usize,
    pub label_name: String,
    pub fold: usize,
    pub role: String,
    pub begin_s: Option<f64>,
    pub end_s: Option<f64>,
    pub augmented: bool,
    pub source_id: String,
    pub ops: String,
}

pub fn write_normalized_manifest(path: &Path, rows: &[NormalizedRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_normalized_manifest(path: &Path) -> Result<Vec<NormalizedRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_optional_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(
            &p,
            "path,patient,device,diagnosis,cycle_file,fold\n\
             a.wav,p1,ch03,IPF,a.txt,2\n\
             b.wav,p2,ch03,Healthy,,\n",
        )
        .unwrap();
        let rows = read_manifest(&p).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].fold, Some(2));
        assert_eq!(rows[0].cycle_file.as_deref(), Some("a.txt"));
        assert_eq!(rows[1].fold, None);
        assert_eq!(rows[1].cycle_file, None);
        assert_eq!(rows[1].channel, None);

        let q = dir.path().join("n.csv");
        write_manifest(&q, &rows).unwrap();
        assert_eq!(read_manifest(&q).unwrap(), rows);
    }

    #[test]
    fn diagnosis_table() {
        let t = parse_diagnosis_table("101\tURTI\n102 Healthy\n\n").unwrap();
        assert_eq!(t["101"], "URTI");
        assert_eq!(t["102"], "Healthy");
        assert!(parse_diagnosis_table("101 URTI extra").is_err());
    }
}
