//! A small f64 training engine: exactly the layers a residual network needs.
//!
//! Layers keep what their backward pass needs from the most recent training
//! forward pass. Parameters and buffers are reached through [`Visit`], keyed
//! by dotted names that follow the usual ResNet checkpoint layout.

mod conv;
mod layers;
mod norm;
mod sgd;

use ndarray::{ArrayViewD, ArrayViewMutD};

pub use conv::Conv2d;
pub use layers::{global_avg_pool, global_avg_pool_backward, relu, relu_backward, Linear, MaxPool};
pub use norm::{BatchNorm2d, Norm, NormKind, StochNormLayer};
pub use sgd::{Sgd, SgdGroup};

/// Per-call forward settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardCtx {
    pub train: bool,
    /// Seed and step number drive the stochastic normalization draws.
    pub seed: u64,
    pub step: u64,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx { train: false, seed: 0, step: 0 }
    }

    pub fn train(seed: u64, step: u64) -> Self {
        ForwardCtx { train: true, seed, step }
    }
}

/// A named tensor handed to a visitor.
pub enum Slot<'a> {
    /// Learnable tensor with its gradient from the last backward pass.
    Param {
        value: ArrayViewMutD<'a, f64>,
        grad: ArrayViewD<'a, f64>,
    },
    /// Non-learnable state such as running statistics.
    Buffer(ArrayViewMutD<'a, f64>),
}

/// Walk every parameter and buffer under `prefix`.
pub trait Visit {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>));
}

/// `prefix.name`, or `name` at the root.
pub fn join_key(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Number of learnable scalars.
pub fn count_params(module: &mut dyn Visit) -> usize {
    let mut n = 0;
    module.visit("", &mut |_, slot| {
        if let Slot::Param { value, .. } = slot {
            n += value.len();
        }
    });
    n
}
