//! Residual backbones, weight import, the source/target heads and
//! checkpoints.

mod resnet;
mod weights;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

pub use resnet::{Block, Depth, ResNet};
pub use weights::{export_weights, import_weights, key_table, load_safetensors, save_safetensors, WeightMap};

use crate::cotuning::Mode;
use crate::features::{InputLayout, ModelInput, NormStats};
use crate::nn::{join_key, ForwardCtx, Linear, NormKind, Slot, Visit};
use crate::stochnorm::StochNormConfig;
use crate::{Error, Result};

/// Key prefix of the source head G (the pre-trained classifier).
pub const SOURCE_HEAD: &str = "fc";
/// Key prefix of the target head H.
pub const TARGET_HEAD: &str = "target_fc";
const META_KEY: &str = "lungsound";

/// Where initial backbone weights come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PretrainedSource {
    /// An image-classification archive in the standard ResNet key layout
    /// (`conv1.weight`, ..., `fc.weight`), F32 or F64.
    Imagenet { path: PathBuf },
    /// A checkpoint written by this crate; its target head becomes the
    /// source head.
    Checkpoint { path: PathBuf },
    /// Random initialization (no transfer).
    None,
}

/// What network to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneSpec {
    pub depth: Depth,
    /// Base channel count; 64 for the standard networks.
    pub width: usize,
    pub norm: NormKind,
    pub stochnorm: StochNormConfig,
    pub pretrained: PretrainedSource,
    pub input_layout: InputLayout,
    /// Seed for every randomly initialized tensor.
    pub seed: u64,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            depth: Depth::R18,
            width: 64,
            norm: NormKind::Batch,
            stochnorm: StochNormConfig::default(),
            pretrained: PretrainedSource::None,
            input_layout: InputLayout::Replicate3,
            seed: 0,
        }
    }
}

/// A feature extractor plus whatever the pre-trained source carried along.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub net: ResNet,
    pub spec: BackboneSpec,
    /// Pre-trained classifier, if the source had one.
    pub pretrained_head: Option<Linear>,
    /// Calibration temperature stored with a pre-trained checkpoint.
    pub temperature: Option<f64>,
    /// Identifies the imported weights (file name and metadata).
    pub snapshot: String,
}

/// Build the feature extractor, import pre-trained weights and optionally
/// swap in stochastic normalization.
pub fn build(spec: &BackboneSpec) -> Result<Backbone> {
    spec.stochnorm.validate()?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(spec.seed);
    let mut net = ResNet::new(spec.depth, spec.width, &mut rng);
    let (pretrained_head, temperature, snapshot) = match &spec.pretrained {
        PretrainedSource::None => (None, None, "random".to_string()),
        PretrainedSource::Imagenet { path } => {
            let (weights, info) = load_safetensors(path)?;
            import_weights(&mut net, "", &weights)?;
            let head = linear_from(&weights, SOURCE_HEAD, net.pooled_dim())?;
            let tag = info.get("snapshot").cloned().unwrap_or_default();
            (head, None, format!("{}{}", file_name(path), if tag.is_empty() { String::new() } else { format!(" ({tag})") }))
        }
        PretrainedSource::Checkpoint { path } => {
            let ck = Checkpoint::load(path)?;
            let m = &ck.meta;
            if m.depth != spec.depth || m.width != spec.width {
                return Err(Error::CheckpointMismatch(format!(
                    "{} holds {} width {}, spec asks for {} width {}",
                    path.display(),
                    m.depth,
                    m.width,
                    spec.depth,
                    spec.width
                )));
            }
            if m.norm == NormKind::Stochastic {
                net.make_stochastic(m.stochnorm)?;
            }
            import_weights(&mut net, "", &ck.weights)?;
            let head = linear_from(&ck.weights, TARGET_HEAD, net.pooled_dim())?;
            (head, m.temperature, format!("{} ({})", file_name(path), m.config_hash))
        }
    };
    if spec.norm == NormKind::Stochastic {
        net.make_stochastic(spec.stochnorm)?;
    }
    Ok(Backbone {
        net,
        spec: spec.clone(),
        pretrained_head,
        temperature,
        snapshot,
    })
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn linear_from(weights: &WeightMap, prefix: &str, in_dim: usize) -> Result<Option<Linear>> {
    let (Some(w), Some(b)) = (weights.get(&format!("{prefix}.weight")), weights.get(&format!("{prefix}.bias"))) else {
        return Ok(None);
    };
    let w = w
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|_| Error::WeightShapeMismatch { key: format!("{prefix}.weight"), expected: vec![0, in_dim], found: w.shape().to_vec() })?;
    if w.ncols() != in_dim || b.len() != w.nrows() {
        return Err(Error::WeightShapeMismatch {
            key: format!("{prefix}.weight"),
            expected: vec![b.len(), in_dim],
            found: w.shape().to_vec(),
        });
    }
    let b = b.clone().into_dimensionality::<ndarray::Ix1>().expect("checked length");
    Ok(Some(Linear::from_parts(w, b)))
}

/// Backbone with target head H and, for co-tuning, source head G.
#[derive(Debug, Clone)]
pub struct Network {
    pub backbone: ResNet,
    pub spec: BackboneSpec,
    pub source_head: Option<Linear>,
    pub target_head: Linear,
    pub snapshot: String,
    pub source_temperature: Option<f64>,
}

/// Attach heads. H is freshly initialized from the seed; G is the
/// pre-trained classifier, kept only in co-tuning modes.
pub fn attach_heads(backbone: Backbone, n_source: Option<usize>, n_target: usize, mode: Mode, seed: u64) -> Result<Network> {
    if n_target < 2 {
        return Err(Error::HeadDimMismatch(format!("target head needs at least 2 classes, got {n_target}")));
    }
    let dim = backbone.net.pooled_dim();
    let source_head = if mode.uses_cotuning() {
        let head = backbone
            .pretrained_head
            .ok_or_else(|| Error::HeadDimMismatch("co-tuning needs a pre-trained source classifier".into()))?;
        if let Some(n) = n_source {
            if n != head.out_dim() {
                return Err(Error::HeadDimMismatch(format!(
                    "pre-trained classifier has {} classes, expected {n}",
                    head.out_dim()
                )));
            }
        }
        Some(head)
    } else {
        None
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 0x7461_7267_6574);
    Ok(Network {
        backbone: backbone.net,
        spec: backbone.spec,
        source_head,
        target_head: Linear::new(dim, n_target, &mut rng),
        snapshot: backbone.snapshot,
        source_temperature: backbone.temperature,
    })
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct Logits {
    pub pooled: Array2<f64>,
    pub target: Array2<f64>,
    pub source: Option<Array2<f64>>,
}

impl Network {
    pub fn n_target(&self) -> usize {
        self.target_head.out_dim()
    }

    pub fn n_source(&self) -> Option<usize> {
        self.source_head.as_ref().map(Linear::out_dim)
    }

    pub fn pooled_dim(&self) -> usize {
        self.backbone.pooled_dim()
    }

    /// Forward pass. The source head runs only when `with_source` is set.
    pub fn forward(&mut self, x: &ArrayView4<f64>, ctx: ForwardCtx, with_source: bool) -> Result<Logits> {
        let pooled = self.backbone.forward(x, ctx)?;
        let target = self.target_head.forward(&pooled.view(), ctx.train);
        let source = match (&mut self.source_head, with_source) {
            (Some(g), true) => Some(g.forward(&pooled.view(), ctx.train)),
            _ => None,
        };
        Ok(Logits { pooled, target, source })
    }

    /// Backward pass from logit gradients; sets all parameter gradients.
    pub fn backward(&mut self, d_target: &ArrayView2<f64>, d_source: Option<&ArrayView2<f64>>) {
        let mut d_pooled = self.target_head.backward(d_target);
        if let (Some(g), Some(ds)) = (&mut self.source_head, d_source) {
            d_pooled += &g.backward(ds);
        }
        self.backbone.backward(&d_pooled.view());
    }

    /// Eval-mode class probabilities of the target head.
    pub fn predict_proba(&mut self, x: &ArrayView4<f64>) -> Result<Array2<f64>> {
        let logits = self.forward(x, ForwardCtx::eval(), false)?;
        Ok(crate::cotuning::softmax_rows(&logits.target.view(), 1.0))
    }

    /// Export all tensors under their archive keys.
    pub fn weights(&mut self) -> WeightMap {
        let mut w = WeightMap::new();
        export_weights(self, "", &mut w);
        w
    }

    pub fn checkpoint(&mut self, meta: CheckpointMeta) -> Checkpoint {
        Checkpoint { weights: self.weights(), meta }
    }

    /// Rebuild a network from a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Network> {
        let m = &ck.meta;
        let spec = BackboneSpec {
            depth: m.depth,
            width: m.width,
            norm: m.norm,
            stochnorm: m.stochnorm,
            pretrained: PretrainedSource::None,
            input_layout: m.input_layout,
            seed: 0,
        };
        let mut backbone = build(&spec)?;
        backbone.pretrained_head = Some(Linear::from_parts(
            Array2::zeros((m.n_source.unwrap_or(2), backbone.net.pooled_dim())),
            ndarray::Array1::zeros(m.n_source.unwrap_or(2)),
        ));
        let mode = if m.n_source.is_some() { Mode::Cotuning } else { Mode::Vanilla };
        let mut net = attach_heads(backbone, m.n_source, m.n_target, mode, 0)?;
        net.snapshot = m.weights_snapshot.clone();
        net.source_temperature = m.temperature;
        import_weights(&mut net, "", &ck.weights).map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
        Ok(net)
    }
}

impl Visit for Network {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.backbone.visit(prefix, f);
        if let Some(g) = &mut self.source_head {
            g.visit(&join_key(prefix, SOURCE_HEAD), f);
        }
        self.target_head.visit(&join_key(prefix, TARGET_HEAD), f);
    }
}

/// Stack model inputs into a `[n, 3, h, w]` batch.
pub fn stack_inputs(inputs: &[&ModelInput]) -> Result<Array4<f64>> {
    let first = inputs.first().ok_or(Error::EmptyInput)?;
    let (c, h, w) = first.values.dim();
    let mut out = Array4::zeros((inputs.len(), c, h, w));
    for (i, m) in inputs.iter().enumerate() {
        if m.values.dim() != (c, h, w) {
            return Err(Error::ShapeMismatch(format!("input {i} has shape {:?}, expected {:?}", m.values.dim(), (c, h, w))));
        }
        out.index_axis_mut(Axis(0), i).assign(&m.values);
    }
    Ok(out)
}

/// Eval-mode average-pooled representation of one input.
pub fn pooled_embedding(net: &mut Network, input: &ModelInput) -> Result<Vec<f64>> {
    let x = input.values.view().insert_axis(Axis(0));
    let pooled = net.backbone.forward(&x, ForwardCtx::eval())?;
    Ok(pooled.row(0).to_vec())
}

/// Everything needed to restore a trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub depth: Depth,
    pub width: usize,
    pub norm: NormKind,
    pub stochnorm: StochNormConfig,
    pub input_layout: InputLayout,
    pub n_source: Option<usize>,
    pub n_target: usize,
    pub task: String,
    /// Temperature calibrated for the target head on held-out data.
    pub temperature: Option<f64>,
    pub norm_stats: Option<NormStats>,
    pub config_hash: String,
    pub split_fingerprint: String,
    pub fold: Option<usize>,
    pub run: Option<usize>,
    pub epoch: usize,
    pub weights_snapshot: String,
}

impl CheckpointMeta {
    /// Metadata skeleton describing `net`.
    pub fn describe(net: &Network, task: &str) -> Self {
        CheckpointMeta {
            depth: net.spec.depth,
            width: net.spec.width,
            norm: net.spec.norm,
            stochnorm: net.spec.stochnorm,
            input_layout: net.spec.input_layout,
            n_source: net.n_source(),
            n_target: net.n_target(),
            task: task.to_string(),
            temperature: None,
            norm_stats: None,
            config_hash: String::new(),
            split_fingerprint: String::new(),
            fold: None,
            run: None,
            epoch: 0,
            weights_snapshot: net.snapshot.clone(),
        }
    }
}

/// Weights plus metadata, stored as one safetensors file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: WeightMap,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut info = HashMap::new();
        info.insert(META_KEY.to_string(), serde_json::to_string(&self.meta)?);
        save_safetensors(path, &self.weights, info)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let (weights, info) = load_safetensors(path)?;
        let meta = info
            .get(META_KEY)
            .ok_or_else(|| Error::CheckpointMismatch(format!("{} carries no checkpoint metadata", path.display())))?;
        Ok(Checkpoint {
            weights,
            meta: serde_json::from_str(meta)?,
        })
    }
}
