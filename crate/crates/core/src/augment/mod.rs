//! Class-balancing augmentation.
//!
//! A [`AugmentPlan`] says how many stretched copies each class gets, which
//! randomized waveform ops apply to them, and whether every item receives a
//! VTLP copy and a frequency-flipped copy. [`expand`] turns the plan into an
//! explicit list of [`AugmentRecord`]s, each carrying its source id and the
//! drawn parameters, so the augmented training set can be audited and
//! rebuilt byte for byte.

mod ops;
mod stretch;

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ops::{draw_time_domain, random_time_domain, AugOp, OpSpec, TimeDomainOps};
pub use stretch::{time_stretch, STRETCH_HOP, STRETCH_NFFT};

use crate::features::{mel_filterbank, LogMelFeature, SpectralConfig};
use crate::ingest::Task;
use crate::{Error, Result};

/// VTLP parameter ranges: `alpha ~ U(alpha_low, alpha_high)`,
/// `F_hi ~ U(fhi_low_hz, fhi_high_hz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VtlpRange {
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub fhi_low_hz: f64,
    pub fhi_high_hz: f64,
}

impl Default for VtlpRange {
    fn default() -> Self {
        VtlpRange {
            alpha_low: 0.9,
            alpha_high: 1.1,
            fhi_low_hz: 3200.0,
            fhi_high_hz: 3800.0,
        }
    }
}

impl VtlpRange {
    /// Draw `(alpha, F_hi)`; F_hi is capped just below Nyquist.
    pub fn draw(&self, nyquist_hz: f64, rng: &mut impl Rng) -> (f64, f64) {
        let u = |lo: f64, hi: f64, rng: &mut dyn rand::RngCore| if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        let alpha = u(self.alpha_low, self.alpha_high, rng);
        let fhi = u(self.fhi_low_hz, self.fhi_high_hz, rng);
        (alpha, fhi.min(0.95 * nyquist_hz))
    }
}

/// Augmentation schedule for one training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    /// Class label to total copies after stretching (1 = no stretch copy).
    pub multipliers: BTreeMap<usize, usize>,
    /// Stretch factors are drawn from `U(stretch_low, stretch_high)`.
    pub stretch_low: f64,
    pub stretch_high: f64,
    /// Randomized ops applied on top of every stretched copy.
    pub time_ops: TimeDomainOps,
    /// Add one VTLP copy of every (original and stretched) item.
    pub vtlp_enabled: bool,
    pub vtlp: VtlpRange,
    /// Add a frequency-flipped copy of every item, VTLP copies included.
    pub flip_enabled: bool,
    pub seed: u64,
}

impl AugmentPlan {
    /// A plan that leaves the training set untouched.
    pub fn none(seed: u64) -> Self {
        AugmentPlan {
            multipliers: BTreeMap::new(),
            stretch_low: 0.9,
            stretch_high: 1.1,
            time_ops: TimeDomainOps::disabled(),
            vtlp_enabled: false,
            vtlp: VtlpRange::default(),
            flip_enabled: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in self.time_ops.specs() {
            if !(0.0..=1.0).contains(&s.prob) || s.low > s.high {
                return Err(Error::Config(format!("invalid op range {s:?}")));
            }
        }
        let v = &self.vtlp;
        if v.alpha_low > v.alpha_high || v.fhi_low_hz > v.fhi_high_hz {
            return Err(Error::Config("invalid VTLP range".into()));
        }
        for a in [v.alpha_low, v.alpha_high] {
            if !(0.8..=1.25).contains(&a) {
                return Err(Error::InvalidWarp(a));
            }
        }
        for f in [self.stretch_low, self.stretch_high] {
            if !(0.8..=1.25).contains(&f) {
                return Err(Error::InvalidFactor(f));
            }
        }
        if self.multipliers.values().any(|&m| m == 0) {
            return Err(Error::Config("class multipliers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn multiplier(&self, label: usize) -> usize {
        self.multipliers.get(&label).copied().unwrap_or(1)
    }

    /// Closed-form size of the augmented set for given class counts.
    pub fn expected_counts(&self, class_counts: &[usize]) -> Vec<usize> {
        let tf = (1 + usize::from(self.vtlp_enabled)) * (1 + usize::from(self.flip_enabled));
        class_counts
            .iter()
            .enumerate()
            .map(|(c, &n)| n * self.multiplier(c) * tf)
            .collect()
    }
}

/// Default balancing plan for a task.
///
/// ALSC-4 doubles wheeze and both by stretching, ALSC-2 doubles the
/// abnormal class, the recording-level tasks double every class and add the
/// randomized waveform ops. VTLP copies are added for every task; flipping
/// applies to the cycle-level tasks. Classes with no samples get no entry.
pub fn build_balance_plan(class_counts: &[usize], task: Task, seed: u64) -> AugmentPlan {
    let doubled: Vec<usize> = match task {
        Task::Alsc4 => vec![2, 3],
        Task::Alsc2 => vec![1],
        Task::Crackle2 => vec![],
        Task::Rdc3 | Task::Rdc2 => (0..task.n_classes()).collect(),
    };
    let multipliers = doubled
        .into_iter()
        .filter(|&c| class_counts.get(c).copied().unwrap_or(0) > 0)
        .map(|c| (c, 2))
        .collect();
    let recording_level = !task.is_cycle_level();
    AugmentPlan {
        multipliers,
        time_ops: if recording_level { TimeDomainOps::default() } else { TimeDomainOps::disabled() },
        vtlp_enabled: true,
        flip_enabled: task.is_cycle_level(),
        ..AugmentPlan::none(seed)
    }
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Independent rng stream for one item, identical however work is split.
pub fn item_rng(seed: u64, item_id: &str) -> ChaCha8Rng {
    let mut key = seed.to_le_bytes().to_vec();
    key.extend_from_slice(item_id.as_bytes());
    ChaCha8Rng::seed_from_u64(fnv1a(&key))
}

/// A training item before augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub id: String,
    pub label: usize,
}

/// One (possibly augmented) training item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub id: String,
    pub source_id: String,
    pub label: usize,
    pub ops: Vec<AugOp>,
}

impl AugmentRecord {
    pub fn is_augmented(&self) -> bool {
        !self.ops.is_empty()
    }

    /// Op chain as a compact audit string, e.g. `stretch(1.0412)|flip`.
    pub fn op_chain(&self) -> String {
        self.ops.iter().map(|o| o.to_string()).collect::<Vec<_>>().join("|")
    }

    pub fn time_ops(&self) -> impl Iterator<Item = &AugOp> {
        self.ops.iter().filter(|o| o.is_time_domain())
    }

    pub fn vtlp(&self) -> Option<(f64, f64)> {
        self.ops.iter().find_map(|o| match o {
            AugOp::Vtlp { alpha, fhi_hz } => Some((*alpha, *fhi_hz)),
            _ => None,
        })
    }

    pub fn flipped(&self) -> bool {
        self.ops.contains(&AugOp::Flip)
    }
}

/// Expand training items into the augmented set described by the plan.
///
/// Order: originals and stretched copies, then a VTLP copy of each, then a
/// flipped copy of everything so far. Labels never change.
pub fn expand(items: &[TrainItem], plan: &AugmentPlan, nyquist_hz: f64) -> Vec<AugmentRecord> {
    let mut out = Vec::new();
    for item in items {
        let mut rng = item_rng(plan.seed, &item.id);
        let mut base = vec![AugmentRecord {
            id: item.id.clone(),
            source_id: item.id.clone(),
            label: item.label,
            ops: Vec::new(),
        }];
        for copy in 1..plan.multiplier(item.label) {
            let factor = if plan.stretch_low < plan.stretch_high {
                rng.gen_range(plan.stretch_low..=plan.stretch_high)
            } else {
                plan.stretch_low
            };
            let mut ops = vec![AugOp::Stretch { factor }];
            ops.extend(draw_time_domain(&plan.time_ops, &mut rng));
            base.push(AugmentRecord {
                id: format!("{}+s{copy}", item.id),
                source_id: item.id.clone(),
                label: item.label,
                ops,
            });
        }
        if plan.vtlp_enabled {
            let warped: Vec<AugmentRecord> = base
                .iter()
                .map(|r| {
                    let (alpha, fhi_hz) = plan.vtlp.draw(nyquist_hz, &mut rng);
                    let mut ops = r.ops.clone();
                    ops.push(AugOp::Vtlp { alpha, fhi_hz });
                    AugmentRecord { id: format!("{}+v", r.id), ops, ..r.clone() }
                })
                .collect();
            base.extend(warped);
        }
        if plan.flip_enabled {
            let flipped: Vec<AugmentRecord> = base
                .iter()
                .map(|r| {
                    let mut ops = r.ops.clone();
                    ops.push(AugOp::Flip);
                    AugmentRecord { id: format!("{}+f", r.id), ops, ..r.clone() }
                })
                .collect();
            base.extend(flipped);
        }
        out.extend(base);
    }
    out
}

/// Draw a VTLP warp and build the warped filterbank.
pub fn vtlp_bank(plan: &AugmentPlan, cfg: &SpectralConfig, rng: &mut impl Rng) -> Result<(Array2<f64>, f64, f64)> {
    let (alpha, fhi) = plan.vtlp.draw(cfg.nyquist_hz(), rng);
    Ok((mel_filterbank(&cfg.with_warp(alpha, fhi))?, alpha, fhi))
}

/// Reverse the mel (row) axis.
pub fn flip_frequency(feat: &LogMelFeature) -> LogMelFeature {
    let mut values = feat.values.clone();
    values.invert_axis(Axis(0));
    LogMelFeature {
        values: values.as_standard_layout().to_owned(),
        ..feat.clone()
    }
}
