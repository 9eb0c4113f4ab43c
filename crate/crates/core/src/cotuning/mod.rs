//! Category relationships, probability calibration, the co-tuning loss and
//! the fine-tuning loop.

mod calibrate;
mod loss;
mod relationship;
mod train;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use calibrate::{calibrate, nll_at_temperature};
pub use loss::{cross_entropy, loss_cotuning, soft_cross_entropy, CotuningLoss};
pub use relationship::{bayes_invert, relationship_direct, relationship_reverse, CategoryRelationship, RelationshipMethod, ReverseFit};
pub use train::{evaluate_accuracy, fit, predict, source_logits, source_probabilities, Dataset, EpochRecord, Example, FitOutcome, History, TrainConfig};
pub(crate) use train::argmax;

use crate::nn::NormKind;

/// Fine-tuning variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Cross-entropy on the target head only.
    Vanilla,
    /// Target cross-entropy plus soft source supervision through G.
    Cotuning,
    /// Vanilla objective on a stochastic-normalization backbone.
    Stochnorm,
    /// Both.
    CotuningStochnorm,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Vanilla, Mode::Cotuning, Mode::Stochnorm, Mode::CotuningStochnorm];

    pub fn uses_cotuning(self) -> bool {
        matches!(self, Mode::Cotuning | Mode::CotuningStochnorm)
    }

    pub fn norm_kind(self) -> NormKind {
        match self {
            Mode::Stochnorm | Mode::CotuningStochnorm => NormKind::Stochastic,
            _ => NormKind::Batch,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Cotuning => "cotuning",
            Mode::Stochnorm => "stochnorm",
            Mode::CotuningStochnorm => "cotuning_stochnorm",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| crate::Error::Config(format!("unknown mode `{s}`")))
    }
}

/// Row-wise softmax of `logits / temperature`.
pub fn softmax_rows(logits: &ArrayView2<f64>, temperature: f64) -> Array2<f64> {
    let mut out = logits.mapv(|v| v / temperature);
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.fold(0.0, |s, &v| s + (v - max).exp()).ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}
