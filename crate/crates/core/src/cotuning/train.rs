use std::fs::File;
use std::path::Path;

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_cotuning, softmax_rows, CategoryRelationship, Mode};
use crate::backbone::{Network, SOURCE_HEAD, TARGET_HEAD};
use crate::eval::{ConfusionMatrix, Metrics};
use crate::features::{to_model_input, InputLayout, LogMelFeature};
use crate::nn::{ForwardCtx, Slot, Sgd, Visit};
use crate::{Error, Result};

/// Optimization settings for one fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Weight of the source-supervision term.
    pub lambda: f64,
    pub lr_backbone: f64,
    pub lr_heads: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_mode(Mode::Vanilla)
    }
}

impl TrainConfig {
    /// Defaults per mode: a single rate of 0.001 for vanilla fine-tuning,
    /// otherwise 0.001 on the backbone and 0.01 on the heads.
    pub fn for_mode(mode: Mode) -> Self {
        let lr_heads = if mode == Mode::Vanilla { 0.001 } else { 0.01 };
        TrainConfig {
            mode,
            lambda: 1.0,
            lr_backbone: 0.001,
            lr_heads,
            momentum: 0.9,
            batch_size: 32,
            epochs: 150,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("train: {m}")));
        if !(self.lr_backbone >= 0.0 && self.lr_heads >= 0.0) {
            return fail("learning rates must be non-negative".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size < 2 {
            return fail("batch size must be at least 2".into());
        }
        if self.epochs == 0 {
            return fail("need at least one epoch".into());
        }
        Ok(())
    }

    fn optimizer(&self) -> Sgd {
        Sgd::new(self.lr_backbone, self.momentum).with_group("heads", &[SOURCE_HEAD, TARGET_HEAD], self.lr_heads)
    }
}

/// One normalized log-mel segment with its label.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    /// Cycle or recording this segment votes for.
    pub unit: String,
    pub feature: LogMelFeature,
    pub label: usize,
}

/// Examples in a fixed order plus the input layout they are fed in.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub layout: InputLayout,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Model inputs for the given example indices.
    pub fn batch(&self, idx: &[usize]) -> Result<Array4<f64>> {
        let inputs: Vec<_> = idx.iter().map(|&i| to_model_input(&self.examples[i].feature, self.layout)).collect();
        crate::backbone::stack_inputs(&inputs.iter().collect::<Vec<_>>())
    }
}

/// Index batches for one epoch. A trailing batch of one example is folded
/// into the previous batch, since batch statistics need two values.
fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch as u64);
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// Per-epoch training and validation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_se: f64,
    pub val_sp: f64,
    pub val_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<History> {
        let mut r = csv::Reader::from_path(path)?;
        let epochs = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(History { epochs })
    }
}

/// Result of [`fit`]. The network itself is left holding the best weights.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub history: History,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

fn snapshot(net: &mut Network) -> Vec<ndarray::ArrayD<f64>> {
    let mut out = Vec::new();
    net.visit("", &mut |_, slot| match slot {
        Slot::Param { value, .. } | Slot::Buffer(value) => out.push(value.to_owned()),
    });
    out
}

fn restore(net: &mut Network, saved: &[ndarray::ArrayD<f64>]) {
    let mut it = saved.iter();
    net.visit("", &mut |_, slot| match slot {
        Slot::Param { mut value, .. } | Slot::Buffer(mut value) => value.assign(it.next().expect("same structure")),
    });
}

/// Target-head probabilities in eval mode, batch by batch.
pub fn predict(net: &mut Network, data: &Dataset, batch_size: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((data.len(), net.n_target()));
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = data.batch(chunk)?;
        let p = net.predict_proba(&x.view())?;
        out.slice_mut(ndarray::s![chunk[0]..chunk[0] + chunk.len(), ..]).assign(&p);
    }
    Ok(out)
}

/// Segment-level accuracy of the target head.
pub fn evaluate_accuracy(net: &mut Network, data: &Dataset) -> Result<f64> {
    let probs = predict(net, data, 32)?;
    let hits = probs
        .rows()
        .into_iter()
        .zip(&data.examples)
        .filter(|(row, ex)| argmax(row.as_slice().expect("contiguous")) == ex.label)
        .count();
    Ok(hits as f64 / data.len().max(1) as f64)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

/// Source-head probabilities at `temperature` from a frozen eval-mode pass.
pub fn source_probabilities(net: &mut Network, data: &Dataset, temperature: f64) -> Result<Array2<f64>> {
    let logits = source_logits(net, data)?;
    Ok(softmax_rows(&logits.view(), temperature))
}

/// Raw source-head logits in eval mode.
pub fn source_logits(net: &mut Network, data: &Dataset) -> Result<Array2<f64>> {
    let n_source = net.n_source().ok_or_else(|| Error::HeadDimMismatch("network has no source head".into()))?;
    let mut out = Array2::zeros((data.len(), n_source));
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(32) {
        let x = data.batch(chunk)?;
        let l = net.forward(&x.view(), ForwardCtx::eval(), true)?;
        let s = l.source.expect("source head present");
        out.slice_mut(ndarray::s![chunk[0]..chunk[0] + chunk.len(), ..]).assign(&s);
    }
    Ok(out)
}

fn validate_epoch(net: &mut Network, val: &Dataset, batch_size: usize) -> Result<(f64, Metrics)> {
    let probs = predict(net, val, batch_size)?;
    let labels = val.labels();
    let loss = -labels.iter().enumerate().map(|(i, &y)| probs[[i, y]].max(1e-300).ln()).sum::<f64>() / labels.len() as f64;
    let preds: Vec<usize> = probs.rows().into_iter().map(|r| argmax(r.as_slice().expect("contiguous"))).collect();
    let cm = ConfusionMatrix::from_labels(&preds, &labels, net.n_target())?;
    Ok((loss, Metrics::from_confusion(&cm)))
}

/// Fine-tune `net` on `train`, keeping the weights of the epoch with the best
/// validation accuracy (the earliest on ties). The source head is dropped at
/// the end: inference uses the target head only.
pub fn fit(
    net: &mut Network,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    rel: Option<&CategoryRelationship>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    if train.n_classes != net.n_target() || val.n_classes != net.n_target() {
        return Err(Error::HeadDimMismatch(format!(
            "target head has {} classes, data has {}",
            net.n_target(),
            train.n_classes
        )));
    }
    let cotune = cfg.mode.uses_cotuning();
    match (cotune, rel, net.n_source()) {
        (true, Some(r), Some(s)) if r.n_source() == s && r.n_target() == net.n_target() => {}
        (true, Some(r), _) => {
            return Err(Error::HeadDimMismatch(format!(
                "relationship is {}x{}, network has {} target and {:?} source classes",
                r.n_target(),
                r.n_source(),
                net.n_target(),
                net.n_source()
            )))
        }
        (true, None, _) => return Err(Error::Config("co-tuning needs a category relationship".into())),
        (false, Some(_), _) => return Err(Error::Config(format!("mode {} takes no category relationship", cfg.mode))),
        (false, None, _) => {}
    }

    let mut opt = cfg.optimizer();
    let mut history = History::default();
    let mut best: Option<(usize, f64, Vec<ndarray::ArrayD<f64>>)> = None;
    let mut step: u64 = 0;
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for idx in epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch) {
            let x = train.batch(&idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train.examples[i].label).collect();
            let logits = net.forward(&x.view(), ForwardCtx::train(cfg.seed, step), cotune)?;
            let loss = match (rel, &logits.source) {
                (Some(rel), Some(src)) => loss_cotuning(&logits.target.view(), &src.view(), &labels, rel, cfg.lambda)?,
                _ => {
                    let (value, d_target) = super::cross_entropy(&logits.target.view(), &labels)?;
                    super::CotuningLoss { value, d_target, d_source: None }
                }
            };
            if !loss.value.is_finite() {
                return Err(Error::DivergenceDetected { epoch, step: step as usize, loss: loss.value });
            }
            net.backward(&loss.d_target.view(), loss.d_source.as_ref().map(|d| d.view()).as_ref());
            opt.step(net);
            loss_sum += loss.value * idx.len() as f64;
            seen += idx.len();
            step += 1;
        }
        let (val_loss, m) = validate_epoch(net, val, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss,
            val_accuracy: m.accuracy,
            val_se: m.se,
            val_sp: m.sp,
            val_score: m.score,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, val loss {:.4}, val acc {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_accuracy
        );
        if best.as_ref().map_or(true, |(_, acc, _)| record.val_accuracy > *acc) {
            best = Some((epoch, record.val_accuracy, snapshot(net)));
        }
        history.epochs.push(record);
    }
    let (best_epoch, best_val_accuracy, weights) = best.expect("at least one epoch");
    restore(net, &weights);
    net.source_head = None;
    Ok(FitOutcome { history, best_epoch, best_val_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{attach_heads, build, BackboneSpec, Depth};
    use crate::features::Provenance;
    use crate::nn::Linear;
    use rand::Rng;

    /// Two classes separated by the sign of a ramp over the mel axis.
    pub(crate) fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let examples = (0..n)
            .map(|i| {
                let label = i % 2;
                let sign = if label == 0 { 1.0 } else { -1.0 };
                let values = Array2::from_shape_fn((8, 8), |(m, _)| sign * (m as f64 - 3.5) / 3.5 + rng.gen_range(-0.3..0.3));
                Example {
                    id: format!("s{i}"),
                    unit: format!("u{i}"),
                    feature: LogMelFeature { values, normalized: true, provenance: Provenance::default() },
                    label,
                }
            })
            .collect();
        Dataset { examples, layout: InputLayout::Replicate3, n_classes: 2 }
    }

    fn tiny(mode: Mode, with_source: bool) -> Network {
        let spec = BackboneSpec { depth: Depth::R18, width: 4, norm: mode.norm_kind(), seed: 11, ..BackboneSpec::default() };
        let mut b = build(&spec).unwrap();
        if with_source {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            b.pretrained_head = Some(Linear::new(b.net.pooled_dim(), 3, &mut rng));
        }
        attach_heads(b, None, 2, mode, 3).unwrap()
    }

    fn params(net: &mut Network) -> Vec<ndarray::ArrayD<f64>> {
        let mut out = Vec::new();
        net.visit("", &mut |_, slot| {
            if let Slot::Param { value, .. } = slot {
                out.push(value.to_owned());
            }
        });
        out
    }

    fn cfg(mode: Mode, epochs: usize) -> TrainConfig {
        TrainConfig { epochs, batch_size: 8, ..TrainConfig::for_mode(mode) }
    }

    #[test]
    fn batches_cover_everything_without_singletons() {
        let b = epoch_batches(33, 8, 1, 1);
        assert_eq!(b.len(), 4);
        assert_eq!(b.last().unwrap().len(), 9);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..33).collect::<Vec<_>>());
        assert_ne!(epoch_batches(33, 8, 1, 1), epoch_batches(33, 8, 1, 2));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut net = tiny(Mode::Vanilla, false);
        let before = params(&mut net);
        let c = TrainConfig { lr_backbone: 0.0, lr_heads: 0.0, ..cfg(Mode::Vanilla, 1) };
        fit(&mut net, &separable(16, 1), &separable(8, 2), &c, None).unwrap();
        assert_eq!(params(&mut net), before);
    }

    #[test]
    fn learns_a_separable_task() {
        let mut net = tiny(Mode::Vanilla, false);
        let c = TrainConfig { lr_backbone: 0.01, lr_heads: 0.01, ..cfg(Mode::Vanilla, 20) };
        let out = fit(&mut net, &separable(64, 1), &separable(32, 2), &c, None).unwrap();
        assert!(out.best_val_accuracy >= 0.95, "{:?}", out.history);
        assert_eq!(evaluate_accuracy(&mut net, &separable(32, 2)).unwrap(), out.best_val_accuracy);
    }

    #[test]
    fn lambda_zero_gives_vanilla_gradients() {
        let data = separable(8, 3);
        let x = data.batch(&[0, 1, 2, 3]).unwrap();
        let y = [0, 1, 0, 1];
        let mut grads = Vec::new();
        for (mode, src) in [(Mode::Vanilla, false), (Mode::Cotuning, true)] {
            let mut net = tiny(mode, src);
            let l = net.forward(&x.view(), ForwardCtx::train(0, 0), src).unwrap();
            let rel = CategoryRelationship {
                matrix: Array2::from_elem((2, 3), 1.0 / 3.0),
                method: super::super::RelationshipMethod::Direct,
                calibration_temperature: 1.0,
                config_hash: String::new(),
            };
            let loss = match &l.source {
                Some(s) => loss_cotuning(&l.target.view(), &s.view(), &y, &rel, 0.0).unwrap(),
                None => {
                    let (value, d_target) = super::super::cross_entropy(&l.target.view(), &y).unwrap();
                    super::super::CotuningLoss { value, d_target, d_source: None }
                }
            };
            net.backward(&loss.d_target.view(), loss.d_source.as_ref().map(|d| d.view()).as_ref());
            let mut g = Vec::new();
            net.visit("", &mut |key, slot| {
                if let Slot::Param { grad, .. } = slot {
                    if !key.starts_with("fc.") {
                        g.push((key.to_string(), grad.to_owned()));
                    }
                }
            });
            grads.push(g);
        }
        assert_eq!(grads[0], grads[1]);
    }

    #[test]
    fn runs_are_deterministic_and_drop_the_source_head() {
        let data = separable(24, 4);
        let rel = CategoryRelationship {
            matrix: ndarray::arr2(&[[0.6, 0.3, 0.1], [0.1, 0.2, 0.7]]),
            method: super::super::RelationshipMethod::Direct,
            calibration_temperature: 1.0,
            config_hash: String::new(),
        };
        let mut runs = Vec::new();
        for _ in 0..2 {
            let mut net = tiny(Mode::CotuningStochnorm, true);
            let out = fit(&mut net, &data, &separable(8, 5), &cfg(Mode::CotuningStochnorm, 2), Some(&rel)).unwrap();
            assert!(net.source_head.is_none());
            runs.push(out.history);
        }
        assert_eq!(runs[0], runs[1]);
    }

    #[test]
    fn removing_source_head_keeps_predictions() {
        let data = separable(6, 6);
        let mut net = tiny(Mode::Cotuning, true);
        let before = predict(&mut net, &data, 4).unwrap();
        net.source_head = None;
        assert_eq!(predict(&mut net, &data, 4).unwrap(), before);
    }

    #[test]
    fn divergence_is_reported() {
        let mut net = tiny(Mode::Vanilla, false);
        let mut train = separable(16, 1);
        train.examples[3].feature.values[[0, 0]] = f64::INFINITY;
        let err = fit(&mut net, &train, &separable(8, 2), &cfg(Mode::Vanilla, 1), None).unwrap_err();
        assert!(matches!(err, Error::DivergenceDetected { epoch: 1, .. }), "{err}");
    }

    #[test]
    fn relationship_presence_must_match_mode() {
        let mut net = tiny(Mode::Vanilla, false);
        let err = fit(&mut net, &separable(8, 1), &separable(4, 2), &cfg(Mode::Cotuning, 1), None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn history_csv_roundtrip() {
        let h = History {
            epochs: vec![EpochRecord { epoch: 1, train_loss: 0.5, val_loss: 0.6, val_accuracy: 0.7, val_se: 0.8, val_sp: 0.9, val_score: 0.85 }],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        h.write_csv(&p).unwrap();
        assert_eq!(History::read_csv(&p).unwrap(), h);
    }

    #[test]
    fn batch_shape() {
        let d = separable(3, 1);
        assert_eq!(d.batch(&[0, 2]).unwrap().dim(), (2, 3, 8, 8));
        assert_eq!(d.batch(&[1]).unwrap().index_axis(ndarray::Axis(0), 0).dim(), (3, 8, 8));
    }
}
