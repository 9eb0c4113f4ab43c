use std::fs;
use std::path::Path;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationshipMethod {
    /// Per-class average of source predictions.
    Direct,
    /// Logistic map source → target, inverted with the source prior.
    Reverse,
}

/// Row-stochastic matrix `p(y_s | y_t)`, one row per target class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRelationship {
    pub matrix: Array2<f64>,
    pub method: RelationshipMethod,
    /// Temperature applied to the source logits that produced the matrix.
    pub calibration_temperature: f64,
    pub config_hash: String,
}

impl CategoryRelationship {
    pub fn n_target(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_source(&self) -> usize {
        self.matrix.ncols()
    }

    /// Largest deviation of a row sum from one, or infinity if any entry is
    /// negative or non-finite.
    pub fn row_sum_error(&self) -> f64 {
        if self.matrix.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return f64::INFINITY;
        }
        self.matrix.rows().into_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<CategoryRelationship> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn check_inputs(source_probs: &ArrayView2<f64>, labels: &[usize], n_target: usize) -> Result<Vec<usize>> {
    if source_probs.nrows() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} probability rows, {} labels", source_probs.nrows(), labels.len())));
    }
    let mut counts = vec![0usize; n_target];
    for &y in labels {
        *counts
            .get_mut(y)
            .ok_or_else(|| Error::ShapeMismatch(format!("label {y} out of range for {n_target} classes")))? += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClassSamples(missing));
    }
    Ok(counts)
}

/// Average the source predictions over the samples of each target class.
pub fn relationship_direct(source_probs: &ArrayView2<f64>, labels: &[usize], n_target: usize) -> Result<CategoryRelationship> {
    let counts = check_inputs(source_probs, labels, n_target)?;
    let mut matrix = Array2::zeros((n_target, source_probs.ncols()));
    for (row, &y) in source_probs.rows().into_iter().zip(labels) {
        let mut acc = matrix.row_mut(y);
        acc += &row;
    }
    for (mut row, &c) in matrix.rows_mut().into_iter().zip(&counts) {
        row /= c as f64;
    }
    Ok(CategoryRelationship {
        matrix,
        method: RelationshipMethod::Direct,
        calibration_temperature: 1.0,
        config_hash: String::new(),
    })
}

/// Settings of the logistic map used by the reverse approach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReverseFit {
    /// L2 penalty on the weights (not the bias).
    pub weight_decay: f64,
    pub max_iters: u64,
}

impl Default for ReverseFit {
    fn default() -> Self {
        ReverseFit { weight_decay: 1e-4, max_iters: 500 }
    }
}

/// Multinomial logistic regression `y_t ~ softmax(W x + b)`, parameters
/// flattened as `W` (row-major, `[T × S]`) followed by `b`.
struct Logistic<'a> {
    x: ArrayView2<'a, f64>,
    labels: &'a [usize],
    n_target: usize,
    weight_decay: f64,
}

impl Logistic<'_> {
    fn unpack(&self, p: &[f64]) -> (Array2<f64>, Array1<f64>) {
        let (t, s) = (self.n_target, self.x.ncols());
        let w = Array2::from_shape_vec((t, s), p[..t * s].to_vec()).expect("parameter length");
        (w, Array1::from_vec(p[t * s..].to_vec()))
    }

    /// Loss and gradient in one pass.
    fn evaluate(&self, p: &[f64]) -> (f64, Vec<f64>) {
        let (w, b) = self.unpack(p);
        let logits = self.x.dot(&w.t()) + &b;
        let logp = super::log_softmax_rows(&logits.view());
        let n = self.labels.len() as f64;
        let mut loss = -self.labels.iter().enumerate().map(|(i, &y)| logp[[i, y]]).sum::<f64>() / n;
        loss += 0.5 * self.weight_decay * w.iter().map(|v| v * v).sum::<f64>();
        let mut resid = logp.mapv(f64::exp);
        for (i, &y) in self.labels.iter().enumerate() {
            resid[[i, y]] -= 1.0;
        }
        resid /= n;
        let gw = resid.t().dot(&self.x) + &w * self.weight_decay;
        let gb = resid.sum_axis(Axis(0));
        (loss, gw.iter().chain(gb.iter()).copied().collect())
    }
}

impl CostFunction for Logistic<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        finite(p)?;
        Ok(self.evaluate(p).0)
    }
}

impl Gradient for Logistic<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        finite(p)?;
        Ok(self.evaluate(p).1)
    }
}

/// Once the fit has converged L-BFGS can propose a NaN direction (zero
/// curvature pair), and the line search would never terminate on it.
/// Rejecting the point ends the run with the best parameters so far.
fn finite(p: &[f64]) -> std::result::Result<(), argmin::core::Error> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(argmin::core::ArgminError::InvalidParameter { text: "non-finite parameters".into() }.into())
    }
}

/// `p(y_t | y_s = j)` for every source class `j`, as a `[S × T]` table read
/// off the fitted map at the basis vectors.
fn fit_likelihood(source_probs: &ArrayView2<f64>, labels: &[usize], n_target: usize, cfg: ReverseFit) -> Result<Array2<f64>> {
    let s = source_probs.ncols();
    let problem = Logistic { x: source_probs.view(), labels, n_target, weight_decay: cfg.weight_decay };
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7)
        .with_tolerance_grad(1e-12)
        .and_then(|l| l.with_tolerance_cost(0.0))
        .map_err(|e| Error::SingularFit(e.to_string()))?;
    let init = vec![0.0; n_target * s + n_target];
    let res = Executor::new(problem, solver)
        .configure(|st| st.param(init).max_iters(cfg.max_iters))
        .run()
        .map_err(|e| Error::SingularFit(e.to_string()))?;
    let best = res.state().get_best_param().ok_or_else(|| Error::SingularFit("no parameters returned".into()))?;
    if best.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularFit("non-finite weights".into()));
    }
    let logistic = Logistic { x: source_probs.view(), labels, n_target, weight_decay: cfg.weight_decay };
    let (w, b) = logistic.unpack(best);
    let basis_logits = w.t().to_owned() + &b;
    Ok(super::softmax_rows(&basis_logits.view(), 1.0))
}

/// Invert a likelihood table `p(y_t | y_s)` (`[S × T]`) with a source prior:
/// `p(y_s | y_t) ∝ p(y_t | y_s) p(y_s)`, normalized per target class.
pub fn bayes_invert(likelihood: &ArrayView2<f64>, prior: &[f64]) -> Result<Array2<f64>> {
    let (s, t) = likelihood.dim();
    if prior.len() != s {
        return Err(Error::ShapeMismatch(format!("prior has {} entries for {s} source classes", prior.len())));
    }
    let mut out = Array2::from_shape_fn((t, s), |(i, j)| likelihood[[j, i]] * prior[j]);
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let z = row.sum();
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::SingularFit(format!("target class {i} has zero posterior mass")));
        }
        row /= z;
    }
    Ok(out)
}

/// Reverse approach: learn `y_s → y_t`, then apply Bayes' rule.
///
/// Without an explicit prior the mean of `source_probs` stands in for
/// `p(y_s)`. If the fit breaks down the direct estimate is returned instead,
/// with a warning.
pub fn relationship_reverse(
    source_probs: &ArrayView2<f64>,
    labels: &[usize],
    n_target: usize,
    prior: Option<&[f64]>,
    cfg: ReverseFit,
) -> Result<CategoryRelationship> {
    check_inputs(source_probs, labels, n_target)?;
    let fallback_prior;
    let prior = match prior {
        Some(p) => {
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-6 || p.iter().any(|v| *v < 0.0) {
                return Err(Error::Config(format!("source prior must be a distribution, sums to {total}")));
            }
            p
        }
        None => {
            fallback_prior = source_probs.mean_axis(Axis(0)).expect("non-empty").to_vec();
            &fallback_prior
        }
    };
    let matrix = fit_likelihood(source_probs, labels, n_target, cfg).and_then(|lik| bayes_invert(&lik.view(), prior));
    match matrix {
        Ok(matrix) => Ok(CategoryRelationship {
            matrix,
            method: RelationshipMethod::Reverse,
            calibration_temperature: 1.0,
            config_hash: String::new(),
        }),
        Err(e) => {
            log::warn!("{e}; falling back to the direct relationship");
            relationship_direct(source_probs, labels, n_target)
        }
    }
}
