use ndarray::{Array1, Array4, ArrayView4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{join_key, ForwardCtx, Slot, Visit};
use crate::stochnorm::{channel_moments, normalize_affine, normalize_backward, BnParams, StochNormCache, StochNormConfig, StochNormState};
use crate::Result;

/// Which normalization every norm site of a network uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Batch,
    Stochastic,
}

/// Batch normalization with the usual running-statistics convention:
/// momentum 0.1, unbiased variance in the running estimate.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub weight: Array1<f64>,
    pub bias: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub grad_weight: Array1<f64>,
    pub grad_bias: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<StochNormCache>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            weight: Array1::ones(channels),
            bias: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            grad_weight: Array1::zeros(channels),
            grad_bias: Array1::zeros(channels),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn params(&self) -> BnParams {
        BnParams {
            weight: self.weight.clone(),
            bias: self.bias.clone(),
            running_mean: self.running_mean.clone(),
            running_var: self.running_var.clone(),
        }
    }

    pub fn forward(&mut self, x: &ArrayView4<f64>, train: bool) -> Result<Array4<f64>> {
        let c = self.weight.len();
        if !train {
            let mask = vec![false; c];
            let (y, _) = normalize_affine(x, &self.weight, &self.bias, self.eps, &mask, |ch| {
                (self.running_mean[ch], self.running_var[ch])
            });
            return Ok(y);
        }
        let (mean, var) = channel_moments(x)?;
        let mask = vec![true; c];
        let (y, cache) = normalize_affine(x, &self.weight, &self.bias, self.eps, &mask, |ch| (mean[ch], var[ch]));
        let m = (x.len() / c) as f64;
        let mo = self.momentum;
        for ch in 0..c {
            self.running_mean[ch] = (1.0 - mo) * self.running_mean[ch] + mo * mean[ch];
            self.running_var[ch] = (1.0 - mo) * self.running_var[ch] + mo * var[ch] * m / (m - 1.0);
        }
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &ArrayView4<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("batch-norm backward without training forward");
        let g = normalize_backward(&self.weight, &cache, dy);
        self.grad_weight = g.dgamma;
        self.grad_bias = g.dbeta;
        g.dx
    }
}

/// Stochastic normalization site inside a network.
#[derive(Debug, Clone)]
pub struct StochNormLayer {
    pub state: StochNormState,
    /// Position among the network's norm sites; part of the rng stream key.
    pub layer_id: u64,
    pub grad_gamma: Array1<f64>,
    pub grad_beta: Array1<f64>,
    cache: Option<StochNormCache>,
}

impl StochNormLayer {
    pub fn new(state: StochNormState, layer_id: u64) -> Self {
        let c = state.channels();
        StochNormLayer {
            state,
            layer_id,
            grad_gamma: Array1::zeros(c),
            grad_beta: Array1::zeros(c),
            cache: None,
        }
    }

    /// Rng for this layer at one training step.
    pub fn step_rng(&self, seed: u64, step: u64) -> ChaCha8Rng {
        let mut key = seed.to_le_bytes().to_vec();
        key.extend_from_slice(&self.layer_id.to_le_bytes());
        key.extend_from_slice(&step.to_le_bytes());
        let h = key.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3));
        ChaCha8Rng::seed_from_u64(h)
    }

    pub fn forward(&mut self, x: &ArrayView4<f64>, ctx: ForwardCtx) -> Result<Array4<f64>> {
        if !ctx.train {
            return Ok(self.state.forward_eval(x));
        }
        let mut rng = self.step_rng(ctx.seed, ctx.step);
        let out = self.state.forward_train(x, &mut rng)?;
        self.cache = Some(out.cache);
        Ok(out.y)
    }

    pub fn backward(&mut self, dy: &ArrayView4<f64>) -> Array4<f64> {
        let cache = self.cache.take().expect("stochnorm backward without training forward");
        let g = self.state.backward(&cache, dy);
        self.grad_gamma = g.dgamma;
        self.grad_beta = g.dbeta;
        g.dx
    }
}

/// A normalization site.
#[derive(Debug, Clone)]
pub enum Norm {
    Batch(BatchNorm2d),
    Stoch(StochNormLayer),
}

impl Norm {
    pub fn kind(&self) -> NormKind {
        match self {
            Norm::Batch(_) => NormKind::Batch,
            Norm::Stoch(_) => NormKind::Stochastic,
        }
    }

    /// Replace a batch-norm site by stochastic normalization initialized
    /// from it. Stochastic sites are returned unchanged.
    pub fn into_stochastic(self, cfg: StochNormConfig, layer_id: u64) -> Result<Norm> {
        match self {
            Norm::Batch(bn) => {
                let c = bn.weight.len();
                let state = StochNormState::from_pretrained(&bn.params(), c, cfg)?;
                Ok(Norm::Stoch(StochNormLayer::new(state, layer_id)))
            }
            s => Ok(s),
        }
    }

    pub fn forward(&mut self, x: &ArrayView4<f64>, ctx: ForwardCtx) -> Result<Array4<f64>> {
        match self {
            Norm::Batch(bn) => bn.forward(x, ctx.train),
            Norm::Stoch(sn) => sn.forward(x, ctx),
        }
    }

    pub fn backward(&mut self, dy: &ArrayView4<f64>) -> Array4<f64> {
        match self {
            Norm::Batch(bn) => bn.backward(dy),
            Norm::Stoch(sn) => sn.backward(dy),
        }
    }
}

impl Visit for Norm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        let (w, b, gw, gb, rm, rv) = match self {
            Norm::Batch(bn) => (&mut bn.weight, &mut bn.bias, &bn.grad_weight, &bn.grad_bias, &mut bn.running_mean, &mut bn.running_var),
            Norm::Stoch(sn) => (
                &mut sn.state.gamma,
                &mut sn.state.beta,
                &sn.grad_gamma,
                &sn.grad_beta,
                &mut sn.state.moving_mean,
                &mut sn.state.moving_var,
            ),
        };
        f(&join_key(prefix, "weight"), Slot::Param { value: w.view_mut().into_dyn(), grad: gw.view().into_dyn() });
        f(&join_key(prefix, "bias"), Slot::Param { value: b.view_mut().into_dyn(), grad: gb.view().into_dyn() });
        f(&join_key(prefix, "running_mean"), Slot::Buffer(rm.view_mut().into_dyn()));
        f(&join_key(prefix, "running_var"), Slot::Buffer(rv.view_mut().into_dyn()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn running_stats_use_unbiased_variance() {
        let mut bn = BatchNorm2d::new(1);
        let x = Array4::from_shape_vec((4, 1, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        bn.forward(&x.view(), true).unwrap();
        assert!((bn.running_mean[0] - 0.25).abs() < 1e-12);
        // Unbiased variance of 1..4 is 5/3.
        assert!((bn.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn stochastic_swap_with_p1_matches_batch_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bn = BatchNorm2d::new(3);
        bn.weight = Array1::from_shape_fn(3, |_| rng.gen_range(0.5..1.5));
        bn.bias = Array1::from_shape_fn(3, |_| rng.gen_range(-0.5..0.5));
        let x = Array4::from_shape_fn((4, 3, 2, 2), |_| rng.gen_range(-2.0..2.0));
        let cfg = StochNormConfig { p: 1.0, ..StochNormConfig::default() };
        let mut sn = Norm::Batch(bn.clone()).into_stochastic(cfg, 0).unwrap();
        let a = bn.forward(&x.view(), true).unwrap();
        let b = sn.forward(&x.view(), ForwardCtx::train(1, 1)).unwrap();
        assert_eq!(a, b);
        let dy = Array4::from_shape_fn(x.raw_dim(), |_| rng.gen_range(-1.0..1.0));
        assert_eq!(bn.backward(&dy.view()), sn.backward(&dy.view()));
    }
}
