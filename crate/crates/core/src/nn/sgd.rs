use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::{Slot, Visit};

/// Learning rate for parameters whose key starts with any of `prefixes`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdGroup {
    pub name: String,
    pub prefixes: Vec<String>,
    pub lr: f64,
}

/// SGD with momentum: `v = mu v + g; p -= lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    /// Checked in order; parameters matching no group use `default_lr`.
    pub groups: Vec<SgdGroup>,
    pub default_lr: f64,
    velocity: BTreeMap<String, ArrayD<f64>>,
}

impl Sgd {
    pub fn new(default_lr: f64, momentum: f64) -> Self {
        Sgd {
            momentum,
            groups: Vec::new(),
            default_lr,
            velocity: BTreeMap::new(),
        }
    }

    pub fn with_group(mut self, name: &str, prefixes: &[&str], lr: f64) -> Self {
        self.groups.push(SgdGroup {
            name: name.to_string(),
            prefixes: prefixes.iter().map(|s| s.to_string()).collect(),
            lr,
        });
        self
    }

    pub fn lr_for(&self, key: &str) -> f64 {
        self.groups
            .iter()
            .find(|g| g.prefixes.iter().any(|p| key == p || key.starts_with(&format!("{p}."))))
            .map_or(self.default_lr, |g| g.lr)
    }

    /// Apply one update to every parameter reachable from `model`.
    pub fn step(&mut self, model: &mut dyn Visit) {
        let mut lrs = Vec::new();
        model.visit("", &mut |key, slot| {
            if let Slot::Param { .. } = slot {
                lrs.push((key.to_string(), self.lr_for(key)));
            }
        });
        let mut lrs = lrs.into_iter();
        let mu = self.momentum;
        let velocity = &mut self.velocity;
        model.visit("", &mut |key, slot| {
            if let Slot::Param { mut value, grad } = slot {
                let (k, lr) = lrs.next().expect("stable visit order");
                debug_assert_eq!(k, key);
                let v = velocity
                    .entry(key.to_string())
                    .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
                v.zip_mut_with(&grad, |v, &g| *v = mu * *v + g);
                value.zip_mut_with(v, |p, &v| *p -= lr * v);
            }
        });
    }
}
