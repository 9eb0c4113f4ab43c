use ndarray::{Array2, Array4, ArrayView2, ArrayView4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{global_avg_pool, global_avg_pool_backward, join_key, relu, relu_backward, BatchNorm2d, Conv2d, ForwardCtx, MaxPool, Norm, Slot, Visit};
use crate::stochnorm::StochNormConfig;
use crate::{Error, Result};

/// Supported network depths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Depth {
    R18,
    R34,
    R50,
    R101,
}

impl Depth {
    pub const ALL: [Depth; 4] = [Depth::R18, Depth::R34, Depth::R50, Depth::R101];

    pub fn layers(self) -> [usize; 4] {
        match self {
            Depth::R18 => [2, 2, 2, 2],
            Depth::R34 | Depth::R50 => [3, 4, 6, 3],
            Depth::R101 => [3, 4, 23, 3],
        }
    }

    pub fn bottleneck(self) -> bool {
        matches!(self, Depth::R50 | Depth::R101)
    }

    pub fn expansion(self) -> usize {
        if self.bottleneck() {
            4
        } else {
            1
        }
    }

    /// Width of the pooled embedding for a given base width (64 for the
    /// standard networks).
    pub fn pooled_dim(self, width: usize) -> usize {
        8 * width * self.expansion()
    }

    pub fn as_u32(self) -> u32 {
        match self {
            Depth::R18 => 18,
            Depth::R34 => 34,
            Depth::R50 => 50,
            Depth::R101 => 101,
        }
    }
}

impl TryFrom<u32> for Depth {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        Depth::ALL
            .into_iter()
            .find(|d| d.as_u32() == v)
            .ok_or_else(|| Error::Config(format!("unsupported depth {v}; use 18, 34, 50 or 101")))
    }
}

impl From<Depth> for u32 {
    fn from(d: Depth) -> u32 {
        d.as_u32()
    }
}

impl std::fmt::Display for Depth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "resnet{}", self.as_u32())
    }
}

#[derive(Debug, Clone)]
struct Downsample {
    conv: Conv2d,
    norm: Norm,
}

/// Basic (two 3x3 convs) or bottleneck (1x1, 3x3, 1x1) residual block.
#[derive(Debug, Clone)]
pub struct Block {
    convs: Vec<Conv2d>,
    norms: Vec<Norm>,
    downsample: Option<Downsample>,
    /// ReLU outputs inside the residual branch, then the block output.
    acts: Vec<Array4<f64>>,
}

impl Block {
    fn new(bottleneck: bool, inplanes: usize, planes: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let expansion = if bottleneck { 4 } else { 1 };
        let convs = if bottleneck {
            vec![
                Conv2d::new(inplanes, planes, 1, 1, 0, rng),
                Conv2d::new(planes, planes, 3, stride, 1, rng),
                Conv2d::new(planes, planes * 4, 1, 1, 0, rng),
            ]
        } else {
            vec![
                Conv2d::new(inplanes, planes, 3, stride, 1, rng),
                Conv2d::new(planes, planes, 3, 1, 1, rng),
            ]
        };
        let norms = convs.iter().map(|c| Norm::Batch(BatchNorm2d::new(c.out_channels()))).collect();
        let downsample = (stride != 1 || inplanes != planes * expansion).then(|| Downsample {
            conv: Conv2d::new(inplanes, planes * expansion, 1, stride, 0, rng),
            norm: Norm::Batch(BatchNorm2d::new(planes * expansion)),
        });
        Block {
            convs,
            norms,
            downsample,
            acts: Vec::new(),
        }
    }

    fn forward(&mut self, x: &ArrayView4<f64>, ctx: ForwardCtx) -> Result<Array4<f64>> {
        self.acts.clear();
        let last = self.convs.len() - 1;
        let mut h = x.to_owned();
        for i in 0..=last {
            h = self.convs[i].forward(&h.view(), ctx.train);
            h = self.norms[i].forward(&h.view(), ctx)?;
            if i < last {
                h = relu(h);
                if ctx.train {
                    self.acts.push(h.clone());
                }
            }
        }
        let identity = match &mut self.downsample {
            Some(ds) => {
                let s = ds.conv.forward(x, ctx.train);
                ds.norm.forward(&s.view(), ctx)?
            }
            None => x.to_owned(),
        };
        let out = relu(h + identity);
        if ctx.train {
            self.acts.push(out.clone());
        }
        Ok(out)
    }

    fn backward(&mut self, dy: Array4<f64>) -> Array4<f64> {
        let out = self.acts.pop().expect("block backward without training forward");
        let d = relu_backward(&out.view(), dy);
        let d_id = match &mut self.downsample {
            Some(ds) => {
                let t = ds.norm.backward(&d.view());
                ds.conv.backward(&t.view())
            }
            None => d.clone(),
        };
        let mut h = d;
        for i in (0..self.convs.len()).rev() {
            if i < self.convs.len() - 1 {
                let a = self.acts.pop().expect("cached activation");
                h = relu_backward(&a.view(), h);
            }
            h = self.norms[i].backward(&h.view());
            h = self.convs[i].backward(&h.view());
        }
        h + d_id
    }

    fn norms_mut(&mut self) -> impl Iterator<Item = &mut Norm> {
        self.norms.iter_mut().chain(self.downsample.as_mut().map(|d| &mut d.norm))
    }
}

impl Visit for Block {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        for (i, (conv, norm)) in self.convs.iter_mut().zip(self.norms.iter_mut()).enumerate() {
            conv.visit(&join_key(prefix, &format!("conv{}", i + 1)), f);
            norm.visit(&join_key(prefix, &format!("bn{}", i + 1)), f);
        }
        if let Some(ds) = &mut self.downsample {
            ds.conv.visit(&join_key(prefix, "downsample.0"), f);
            ds.norm.visit(&join_key(prefix, "downsample.1"), f);
        }
    }
}

/// Residual feature extractor ending in global average pooling.
#[derive(Debug, Clone)]
pub struct ResNet {
    pub depth: Depth,
    pub width: usize,
    conv1: Conv2d,
    bn1: Norm,
    pool: MaxPool,
    layers: Vec<Vec<Block>>,
    stem_out: Option<Array4<f64>>,
    final_dims: [usize; 4],
}

impl ResNet {
    /// Randomly initialized network; `width` is 64 for the standard models.
    pub fn new(depth: Depth, width: usize, rng: &mut impl Rng) -> Self {
        let conv1 = Conv2d::new(3, width, 7, 2, 3, rng);
        let bn1 = Norm::Batch(BatchNorm2d::new(width));
        let mut inplanes = width;
        let mut layers = Vec::new();
        for (i, &n) in depth.layers().iter().enumerate() {
            let planes = width << i;
            let stride = if i == 0 { 1 } else { 2 };
            let mut blocks = Vec::new();
            for b in 0..n {
                blocks.push(Block::new(depth.bottleneck(), inplanes, planes, if b == 0 { stride } else { 1 }, rng));
                inplanes = planes * depth.expansion();
            }
            layers.push(blocks);
        }
        ResNet {
            depth,
            width,
            conv1,
            bn1,
            pool: MaxPool::default(),
            layers,
            stem_out: None,
            final_dims: [0; 4],
        }
    }

    pub fn pooled_dim(&self) -> usize {
        self.depth.pooled_dim(self.width)
    }

    /// Every normalization site in visit order.
    pub fn norms_mut(&mut self) -> Vec<&mut Norm> {
        let mut out = vec![&mut self.bn1];
        for layer in &mut self.layers {
            for block in layer {
                out.extend(block.norms_mut());
            }
        }
        out
    }

    /// Swap every batch-norm site for stochastic normalization initialized
    /// from it. Learnable parameters are reused as they are.
    pub fn make_stochastic(&mut self, cfg: StochNormConfig) -> Result<()> {
        for (i, norm) in self.norms_mut().into_iter().enumerate() {
            let taken = std::mem::replace(norm, Norm::Batch(BatchNorm2d::new(0)));
            *norm = taken.into_stochastic(cfg, i as u64)?;
        }
        Ok(())
    }

    /// `[n, 3, h, w]` to pooled embeddings `[n, pooled_dim]`.
    pub fn forward(&mut self, x: &ArrayView4<f64>, ctx: ForwardCtx) -> Result<Array2<f64>> {
        if x.shape()[1] != 3 {
            return Err(Error::ShapeMismatch(format!("backbone expects 3 input channels, got {}", x.shape()[1])));
        }
        let h = self.conv1.forward(x, ctx.train);
        let h = relu(self.bn1.forward(&h.view(), ctx)?);
        if ctx.train {
            self.stem_out = Some(h.clone());
        }
        let mut h = self.pool.forward(&h.view(), ctx.train);
        for layer in &mut self.layers {
            for block in layer {
                h = block.forward(&h.view(), ctx)?;
            }
        }
        let d = h.dim();
        self.final_dims = [d.0, d.1, d.2, d.3];
        Ok(global_avg_pool(&h.view()))
    }

    /// Backpropagate a gradient on the pooled embedding; sets every
    /// parameter gradient.
    pub fn backward(&mut self, d_pooled: &ArrayView2<f64>) {
        let mut h = global_avg_pool_backward(d_pooled, self.final_dims);
        for layer in self.layers.iter_mut().rev() {
            for block in layer.iter_mut().rev() {
                h = block.backward(h);
            }
        }
        let h = self.pool.backward(&h.view());
        let stem = self.stem_out.take().expect("backbone backward without training forward");
        let h = relu_backward(&stem.view(), h);
        let h = self.bn1.backward(&h.view());
        self.conv1.backward(&h.view());
    }
}

impl Visit for ResNet {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.conv1.visit(&join_key(prefix, "conv1"), f);
        self.bn1.visit(&join_key(prefix, "bn1"), f);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (j, block) in layer.iter_mut().enumerate() {
                block.visit(&join_key(prefix, &format!("layer{}.{j}", i + 1)), f);
            }
        }
    }
}
