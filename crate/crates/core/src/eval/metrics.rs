use serde::{Deserialize, Serialize};

use crate::ingest::Task;
use crate::{Error, Result};

/// Counts indexed `[true label][predicted label]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_labels(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::LengthMismatch { preds: preds.len(), labels: labels.len() });
        }
        let mut counts = vec![vec![0; n_classes]; n_classes];
        for (&p, &y) in preds.iter().zip(labels) {
            if p >= n_classes || y >= n_classes {
                return Err(Error::ShapeMismatch(format!("label pair ({y}, {p}) out of range for {n_classes} classes")));
            }
            counts[y][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    fn row_total(&self, i: usize) -> usize {
        self.counts[i].iter().sum()
    }

    /// Fold every abnormal class onto class 1.
    pub fn collapse_binary(&self) -> ConfusionMatrix {
        let mut counts = vec![vec![0; 2]; 2];
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                counts[usize::from(i > 0)][usize::from(j > 0)] += c;
            }
        }
        ConfusionMatrix { counts }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Average score: the arithmetic mean of sensitivity and specificity.
pub fn average_score(se: f64, sp: f64) -> f64 {
    (se + sp) / 2.0
}

/// Harmonic score: the harmonic mean of sensitivity and specificity
/// (0 when both are 0).
pub fn harmonic_score(se: f64, sp: f64) -> f64 {
    if se + sp > 0.0 {
        2.0 * se * sp / (se + sp)
    } else {
        0.0
    }
}

/// Challenge-style scores. Class 0 is the normal class; an abnormal sample
/// counts towards SE only when its exact class is predicted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub se: f64,
    pub sp: f64,
    /// Average score.
    pub score: f64,
    /// Harmonic score.
    pub hs: f64,
    pub accuracy: f64,
}

impl Metrics {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Metrics {
        let sp = ratio(cm.counts[0][0], cm.row_total(0));
        let abnormal: usize = (1..cm.n_classes()).map(|i| cm.row_total(i)).sum();
        let hits: usize = (1..cm.n_classes()).map(|i| cm.counts[i][i]).sum();
        let se = ratio(hits, abnormal);
        let diag: usize = (0..cm.n_classes()).map(|i| cm.counts[i][i]).sum();
        Metrics {
            se,
            sp,
            score: average_score(se, sp),
            hs: harmonic_score(se, sp),
            accuracy: ratio(diag, cm.total()),
        }
    }
}

/// Precision, recall and F1 of the positive class of a two-class task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PositiveClassScores {
    pub fn from_confusion(cm: &ConfusionMatrix) -> PositiveClassScores {
        let tp = cm.counts[1][1];
        let precision = ratio(tp, cm.counts[0][1] + tp);
        let recall = ratio(tp, cm.row_total(1));
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        PositiveClassScores { precision, recall, f1 }
    }
}

/// Scores of one evaluated unit set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// Present for the crackle task.
    pub positive: Option<PositiveClassScores>,
    pub n_units: usize,
    pub fold: usize,
    pub run_seed: u64,
}

/// Confusion and every score for unit-level predictions.
pub fn compute_metrics(preds: &[usize], labels: &[usize], task: Task) -> Result<MetricsReport> {
    let cm = ConfusionMatrix::from_labels(preds, labels, task.n_classes())?;
    Ok(report_from_confusion(cm, task))
}

pub(crate) fn report_from_confusion(cm: ConfusionMatrix, task: Task) -> MetricsReport {
    let metrics = Metrics::from_confusion(&cm);
    let positive = (task == Task::Crackle2).then(|| PositiveClassScores::from_confusion(&cm));
    MetricsReport { task, n_units: cm.total(), confusion: cm, metrics, positive, fold: 0, run_seed: 0 }
}

/// Most frequent label among segment predictions. Ties go to the tied label
/// with the highest mean probability, then to the lowest label.
pub fn majority_vote(preds: &[usize], probs: &[Vec<f64>]) -> Result<usize> {
    if preds.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    if probs.len() != preds.len() {
        return Err(Error::LengthMismatch { preds: preds.len(), labels: probs.len() });
    }
    let n = probs.iter().map(Vec::len).chain(preds.iter().map(|p| p + 1)).max().unwrap_or(0);
    let mut votes = vec![0usize; n];
    for &p in preds {
        votes[p] += 1;
    }
    let top = *votes.iter().max().expect("non-empty");
    let mean = |c: usize| probs.iter().map(|p| p.get(c).copied().unwrap_or(0.0)).sum::<f64>() / probs.len() as f64;
    let winner = (0..n)
        .filter(|&c| votes[c] == top)
        .fold(None::<(usize, f64)>, |best, c| {
            let m = mean(c);
            match best {
                Some((_, bm)) if bm >= m => best,
                _ => Some((c, m)),
            }
        })
        .expect("some label has the top count");
    Ok(winner.0)
}
