use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use super::{LogMelFeature, Provenance};
use crate::{Error, Result};

/// On-disk feature store keyed by `(segment id, config hash)`.
///
/// Layout: `<root>/<config hash>/config.json` holds the serialized config;
/// each feature is `<segment id>.bin` (rows, cols as little-endian `u32`,
/// then `f64` values row-major) next to a `<segment id>.json` provenance.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    root: PathBuf,
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FeatureCache { root: root.into() }
    }

    fn dir(&self, config_hash: &str) -> PathBuf {
        self.root.join(config_hash)
    }

    fn file_stem(segment_id: &str) -> String {
        segment_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "-_.#".contains(c) { c } else { '_' })
            .collect()
    }

    /// Record the configuration a hash stands for.
    pub fn write_config<C: Serialize>(&self, config_hash: &str, config: &C) -> Result<()> {
        let dir = self.dir(config_hash);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let p = dir.join("config.json");
        fs::write(&p, serde_json::to_vec_pretty(config)?).map_err(|e| Error::io(&p, e))
    }

    pub fn put(&self, config_hash: &str, feat: &LogMelFeature) -> Result<()> {
        let dir = self.dir(config_hash);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let stem = Self::file_stem(&feat.provenance.segment_id);
        let (rows, cols) = feat.values.dim();
        let mut bytes = Vec::with_capacity(8 + rows * cols * 8);
        bytes.extend_from_slice(&(rows as u32).to_le_bytes());
        bytes.extend_from_slice(&(cols as u32).to_le_bytes());
        for v in feat.values.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let bin = dir.join(format!("{stem}.bin"));
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let meta = dir.join(format!("{stem}.json"));
        let json = serde_json::to_vec(&(feat.normalized, &feat.provenance))?;
        fs::write(&meta, json).map_err(|e| Error::io(&meta, e))
    }

    pub fn get(&self, config_hash: &str, segment_id: &str) -> Result<Option<LogMelFeature>> {
        let dir = self.dir(config_hash);
        let stem = Self::file_stem(segment_id);
        let bin = dir.join(format!("{stem}.bin"));
        if !bin.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let values = decode(&bytes, &bin)?;
        let meta = dir.join(format!("{stem}.json"));
        let (normalized, provenance): (bool, Provenance) =
            serde_json::from_slice(&fs::read(&meta).map_err(|e| Error::io(&meta, e))?)?;
        Ok(Some(LogMelFeature {
            values,
            normalized,
            provenance,
        }))
    }
}

fn decode(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let bad = || Error::Data(format!("{}: truncated feature file", path.display()));
    if bytes.len() < 8 {
        return Err(bad());
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + rows * cols * 8 {
        return Err(bad());
    }
    let vals: Vec<f64> = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), vals).map_err(|_| bad())
}
