use std::collections::BTreeMap;
use std::path::Path;

use crate::backbone::Network;
use crate::cotuning::Dataset;
use crate::nn::ForwardCtx;
use crate::{Error, Result};

/// Mean pooled embedding of one evaluation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub unit: String,
    pub label: usize,
    pub values: Vec<f64>,
}

/// Pooled backbone features, averaged over each unit's segments, in the
/// order units first appear in `data`.
pub fn export_embeddings(net: &mut Network, data: &Dataset, batch_size: usize) -> Result<Vec<EmbeddingRow>> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = net.pooled_dim();
    let mut rows: Vec<(EmbeddingRow, usize)> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let x = data.batch(chunk)?;
        let pooled = net.backbone.forward(&x.view(), ForwardCtx::eval())?;
        for (k, &i) in chunk.iter().enumerate() {
            let e = &data.examples[i];
            let slot = *index.entry(e.unit.clone()).or_insert_with(|| {
                rows.push((EmbeddingRow { unit: e.unit.clone(), label: e.label, values: vec![0.0; dim] }, 0));
                rows.len() - 1
            });
            let (row, n) = &mut rows[slot];
            row.values.iter_mut().zip(pooled.row(k)).for_each(|(a, b)| *a += b);
            *n += 1;
        }
    }
    Ok(rows
        .into_iter()
        .map(|(mut r, n)| {
            r.values.iter_mut().for_each(|v| *v /= n as f64);
            r
        })
        .collect())
}

/// CSV with columns `unit,label,e0,e1,...`.
pub fn write_embeddings(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = rows.first().map_or(0, |r| r.values.len());
    let mut header = vec!["unit".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.unit.clone(), r.label.to_string()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
