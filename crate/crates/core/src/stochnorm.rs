//! Stochastic normalization.
//!
//! Each channel is normalized two ways: with the current batch statistics
//! and with moving statistics. During training one Bernoulli(p) draw per
//! channel and step picks the branch (1 = batch statistics). Moving
//! statistics start from a pre-trained batch-norm layer and follow an
//! exponential update after the branch outputs have been computed. At
//! inference only the moving branch is used.

use ndarray::{Array1, Array4, ArrayView4, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hyperparameters shared by every stochastic normalization site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StochNormConfig {
    /// Probability of the batch-statistics branch.
    pub p: f64,
    /// Moving-statistics update rate.
    pub alpha: f64,
    pub eps: f64,
}

impl Default for StochNormConfig {
    fn default() -> Self {
        StochNormConfig { p: 0.5, alpha: 0.1, eps: 1e-5 }
    }
}

impl StochNormConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("stochnorm.p = {} outside [0, 1]", self.p)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("stochnorm.alpha = {} outside (0, 1)", self.alpha)));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config("stochnorm.eps must be positive".into()));
        }
        Ok(())
    }
}

/// Per-channel state of one stochastic normalization layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochNormState {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub moving_mean: Array1<f64>,
    pub moving_var: Array1<f64>,
    pub alpha: f64,
    pub p: f64,
    pub eps: f64,
}

/// Parameters of a pre-trained batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub weight: Array1<f64>,
    pub bias: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl StochNormState {
    /// Identity-normalizing state for `channels` channels.
    pub fn new(channels: usize, cfg: StochNormConfig) -> Self {
        StochNormState {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            moving_mean: Array1::zeros(channels),
            moving_var: Array1::ones(channels),
            alpha: cfg.alpha,
            p: cfg.p,
            eps: cfg.eps,
        }
    }

    /// Copy scale, shift and moving statistics from a batch-norm layer.
    pub fn from_pretrained(bn: &BnParams, channels: usize, cfg: StochNormConfig) -> Result<Self> {
        for (name, a) in [
            ("weight", &bn.weight),
            ("bias", &bn.bias),
            ("running_mean", &bn.running_mean),
            ("running_var", &bn.running_var),
        ] {
            if a.len() != channels {
                return Err(Error::ShapeMismatch(format!(
                    "batch-norm {name} has {} channels, layer has {channels}",
                    a.len()
                )));
            }
        }
        Ok(StochNormState {
            gamma: bn.weight.clone(),
            beta: bn.bias.clone(),
            moving_mean: bn.running_mean.clone(),
            moving_var: bn.running_var.clone(),
            alpha: cfg.alpha,
            p: cfg.p,
            eps: cfg.eps,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// `moving <- moving + alpha * (batch - moving)` for mean and variance.
    pub fn update_moving(&mut self, batch_mean: &Array1<f64>, batch_var: &Array1<f64>) {
        let a = self.alpha;
        Zip::from(&mut self.moving_mean).and(batch_mean).for_each(|m, &b| *m += a * (b - *m));
        Zip::from(&mut self.moving_var).and(batch_var).for_each(|m, &b| *m += a * (b - *m));
    }

    /// Inference: moving statistics only, no sampling and no updates.
    pub fn forward_eval(&self, x: &ArrayView4<f64>) -> Array4<f64> {
        let mut y = x.to_owned();
        for (c, mut plane) in y.axis_iter_mut(Axis(1)).enumerate() {
            let inv = 1.0 / (self.moving_var[c] + self.eps).sqrt();
            let (g, b, m) = (self.gamma[c], self.beta[c], self.moving_mean[c]);
            plane.mapv_inplace(|v| g * (v - m) * inv + b);
        }
        y
    }

    /// Draw one branch per channel.
    pub fn draw_mask(&self, rng: &mut impl Rng) -> Vec<bool> {
        (0..self.channels()).map(|_| rng.gen_bool(self.p)).collect()
    }

    /// Training forward pass with a random branch mask.
    pub fn forward_train(&mut self, x: &ArrayView4<f64>, rng: &mut impl Rng) -> Result<StochNormOutput> {
        let mask = self.draw_mask(rng);
        self.forward_train_with_mask(x, &mask)
    }

    /// Training forward pass with an explicit mask (`true` = batch branch).
    pub fn forward_train_with_mask(&mut self, x: &ArrayView4<f64>, mask: &[bool]) -> Result<StochNormOutput> {
        let c = self.channels();
        if x.shape()[1] != c || mask.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels, mask {}, layer {c}",
                x.shape()[1],
                mask.len()
            )));
        }
        let (mean, var) = channel_moments(x)?;
        let (y, cache) = normalize_affine(x, &self.gamma, &self.beta, self.eps, mask, |ch| {
            if mask[ch] {
                (mean[ch], var[ch])
            } else {
                (self.moving_mean[ch], self.moving_var[ch])
            }
        });
        self.update_moving(&mean, &var);
        Ok(StochNormOutput {
            y,
            mask: mask.to_vec(),
            cache,
        })
    }

    /// Gradients for a loss whose gradient with respect to the output is `dy`.
    /// Moving statistics are treated as constants.
    pub fn backward(&self, cache: &StochNormCache, dy: &ArrayView4<f64>) -> StochNormGrads {
        normalize_backward(&self.gamma, cache, dy)
    }
}

/// Output of a training forward pass.
#[derive(Debug, Clone)]
pub struct StochNormOutput {
    pub y: Array4<f64>,
    pub mask: Vec<bool>,
    pub cache: StochNormCache,
}

/// What the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct StochNormCache {
    /// Normalized values of the selected branch.
    pub z: Array4<f64>,
    /// Inverse standard deviation of the selected branch per channel.
    pub inv_std: Array1<f64>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct StochNormGrads {
    pub dx: Array4<f64>,
    pub dgamma: Array1<f64>,
    pub dbeta: Array1<f64>,
}

/// `gamma * (x - m) / sqrt(v + eps) + beta` per channel with `(m, v)` from
/// `stats`; `mask` records which channels used batch statistics.
pub(crate) fn normalize_affine(
    x: &ArrayView4<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    eps: f64,
    mask: &[bool],
    stats: impl Fn(usize) -> (f64, f64),
) -> (Array4<f64>, StochNormCache) {
    let c = gamma.len();
    let mut z = x.to_owned();
    let mut y = Array4::zeros(x.raw_dim());
    let mut inv_std = Array1::zeros(c);
    for ch in 0..c {
        let (m, v) = stats(ch);
        let inv = 1.0 / (v + eps).sqrt();
        inv_std[ch] = inv;
        let (g, b) = (gamma[ch], beta[ch]);
        let mut zc = z.index_axis_mut(Axis(1), ch);
        zc.mapv_inplace(|t| (t - m) * inv);
        Zip::from(y.index_axis_mut(Axis(1), ch)).and(&zc).for_each(|o, &t| *o = g * t + b);
    }
    let cache = StochNormCache {
        z,
        inv_std,
        mask: mask.to_vec(),
    };
    (y, cache)
}

pub(crate) fn normalize_backward(gamma: &Array1<f64>, cache: &StochNormCache, dy: &ArrayView4<f64>) -> StochNormGrads {
    let c = gamma.len();
    let m = (dy.len() / c) as f64;
    let mut dx = Array4::zeros(dy.raw_dim());
    let mut dgamma = Array1::zeros(c);
    let mut dbeta = Array1::zeros(c);
    for ch in 0..c {
        let dyc = dy.index_axis(Axis(1), ch);
        let zc = cache.z.index_axis(Axis(1), ch);
        let sum_dy = dyc.sum();
        let sum_dyz = Zip::from(&dyc).and(&zc).fold(0.0, |acc, &a, &b| acc + a * b);
        dgamma[ch] = sum_dyz;
        dbeta[ch] = sum_dy;
        let k = gamma[ch] * cache.inv_std[ch];
        let mut dxc = dx.index_axis_mut(Axis(1), ch);
        if cache.mask[ch] {
            Zip::from(&mut dxc)
                .and(&dyc)
                .and(&zc)
                .for_each(|o, &d, &zz| *o = k * (d - sum_dy / m - zz * sum_dyz / m));
        } else {
            Zip::from(&mut dxc).and(&dyc).for_each(|o, &d| *o = k * d);
        }
    }
    StochNormGrads { dx, dgamma, dbeta }
}

/// Per-channel mean and biased variance over batch and spatial axes.
pub fn channel_moments(x: &ArrayView4<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    let c = x.shape()[1];
    let m = x.len() / c.max(1);
    if m < 2 {
        return Err(Error::BatchTooSmall(m));
    }
    let mut mean = Array1::zeros(c);
    let mut var = Array1::zeros(c);
    for (ch, plane) in x.axis_iter(Axis(1)).enumerate() {
        let mu = plane.sum() / m as f64;
        mean[ch] = mu;
        var[ch] = plane.fold(0.0, |acc, &v| acc + (v - mu) * (v - mu)) / m as f64;
    }
    Ok((mean, var))
}
