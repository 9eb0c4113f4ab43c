use argmin::core::{CostFunction, Executor, State};
use argmin::solver::brent::BrentOpt;
use ndarray::ArrayView2;

use super::log_softmax_rows;
use crate::{Error, Result};

/// Search range for the temperature.
const T_RANGE: (f64, f64) = (0.02, 50.0);

/// Mean negative log-likelihood of `softmax(logits / t)`.
pub fn nll_at_temperature(logits: &ArrayView2<f64>, labels: &[usize], t: f64) -> f64 {
    let scaled = logits.mapv(|v| v / t);
    let logp = log_softmax_rows(&scaled.view());
    -labels.iter().enumerate().map(|(i, &y)| logp[[i, y]]).sum::<f64>() / labels.len() as f64
}

struct Nll<'a> {
    logits: ArrayView2<'a, f64>,
    labels: &'a [usize],
}

impl CostFunction for Nll<'_> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, log_t: &f64) -> std::result::Result<f64, argmin::core::Error> {
        Ok(nll_at_temperature(&self.logits, self.labels, log_t.exp()))
    }
}

/// Temperature minimizing the validation NLL; a Brent search over `ln t`.
pub fn calibrate(logits: &ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() || logits.nrows() == 0 {
        return Err(Error::EmptyValidation);
    }
    if labels.len() != logits.nrows() {
        return Err(Error::ShapeMismatch(format!("{} logit rows, {} labels", logits.nrows(), labels.len())));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::DegenerateValidation);
    }
    let problem = Nll { logits: logits.view(), labels };
    let solver = BrentOpt::new(T_RANGE.0.ln(), T_RANGE.1.ln()).set_tolerance(1e-10, 1e-12);
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(200))
        .run()
        .map_err(|e| Error::Data(format!("temperature search failed: {e}")))?;
    let log_t = *res.state().get_best_param().ok_or_else(|| Error::Data("temperature search found no minimum".into()))?;
    Ok(log_t.exp())
}
