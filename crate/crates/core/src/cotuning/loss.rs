use ndarray::{Array2, ArrayView2};

use super::{log_softmax_rows, softmax_rows, CategoryRelationship};
use crate::{Error, Result};

/// Mean cross-entropy against hard labels, with its logit gradient.
pub fn cross_entropy(logits: &ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} logit rows, {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::ShapeMismatch(format!("label {bad} out of range for {k} classes")));
    }
    let logp = log_softmax_rows(logits);
    let loss = -labels.iter().enumerate().map(|(i, &y)| logp[[i, y]]).sum::<f64>() / n as f64;
    let mut grad = logp.mapv(f64::exp);
    for (i, &y) in labels.iter().enumerate() {
        grad[[i, y]] -= 1.0;
    }
    grad /= n as f64;
    Ok((loss, grad))
}

/// Mean cross-entropy against soft targets (rows summing to one).
pub fn soft_cross_entropy(logits: &ArrayView2<f64>, targets: &ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != targets.dim() {
        return Err(Error::ShapeMismatch(format!("logits {:?} against targets {:?}", logits.dim(), targets.dim())));
    }
    let n = logits.nrows() as f64;
    let logp = log_softmax_rows(logits);
    let loss = -(&logp * targets).sum() / n;
    let grad = (softmax_rows(logits, 1.0) - targets) / n;
    Ok((loss, grad))
}

/// Value and logit gradients of the co-tuning objective.
#[derive(Debug, Clone)]
pub struct CotuningLoss {
    pub value: f64,
    pub d_target: Array2<f64>,
    /// `None` when the source term is off (`lambda = 0`).
    pub d_source: Option<Array2<f64>>,
}

/// `CE(target_logits, y) + lambda * SoftCE(source_logits, rel[y])`.
///
/// With `lambda = 0` the source term is skipped entirely, so the value and
/// gradient are exactly those of plain cross-entropy.
pub fn loss_cotuning(
    target_logits: &ArrayView2<f64>,
    source_logits: &ArrayView2<f64>,
    labels: &[usize],
    rel: &CategoryRelationship,
    lambda: f64,
) -> Result<CotuningLoss> {
    let (ce, d_target) = cross_entropy(target_logits, labels)?;
    if lambda == 0.0 {
        return Ok(CotuningLoss { value: ce, d_target, d_source: None });
    }
    let (t, s) = rel.matrix.dim();
    if source_logits.nrows() != labels.len() || source_logits.ncols() != s || target_logits.ncols() != t {
        return Err(Error::ShapeMismatch(format!(
            "relationship is {t}x{s}, target logits {:?}, source logits {:?}",
            target_logits.dim(),
            source_logits.dim()
        )));
    }
    let soft = Array2::from_shape_fn((labels.len(), s), |(i, j)| rel.matrix[[labels[i], j]]);
    let (sce, d_source) = soft_cross_entropy(source_logits, &soft.view())?;
    Ok(CotuningLoss {
        value: ce + lambda * sce,
        d_target,
        d_source: Some(d_source * lambda),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cotuning::RelationshipMethod;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, k), |_| rng.gen_range(-3.0..3.0))
    }

    fn relationship(rng: &mut ChaCha8Rng, t: usize, s: usize) -> CategoryRelationship {
        let raw = Array2::from_shape_fn((t, s), |_| rng.gen_range(0.01..1.0));
        let matrix = &raw / &raw.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
        CategoryRelationship { matrix, method: RelationshipMethod::Direct, calibration_temperature: 1.0, config_hash: String::new() }
    }

    #[test]
    fn lambda_zero_is_plain_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random(&mut rng, 6, 4);
        let s = random(&mut rng, 6, 5);
        let y = [0, 1, 2, 3, 1, 0];
        let rel = relationship(&mut rng, 4, 5);
        let l = loss_cotuning(&t.view(), &s.view(), &y, &rel, 0.0).unwrap();
        let (ce, g) = cross_entropy(&t.view(), &y).unwrap();
        assert_eq!(l.value, ce);
        assert_eq!(l.d_target, g);
        assert!(l.d_source.is_none());
    }

    #[test]
    fn one_hot_row_is_hard_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random(&mut rng, 3, 2);
        let s = random(&mut rng, 3, 3);
        let mut rel = relationship(&mut rng, 2, 3);
        rel.matrix = ndarray::arr2(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let y = [0, 1, 0];
        let l = loss_cotuning(&t.view(), &s.view(), &y, &rel, 1.0).unwrap();
        let (ce_t, _) = cross_entropy(&t.view(), &y).unwrap();
        let (ce_s, _) = cross_entropy(&s.view(), &[1, 2, 1]).unwrap();
        assert!((l.value - ce_t - ce_s).abs() < 1e-12);
    }

    #[test]
    fn two_term_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random(&mut rng, 5, 3);
        let s = random(&mut rng, 5, 4);
        let rel = relationship(&mut rng, 3, 4);
        let y = [2, 0, 1, 1, 2];
        let lambda = 0.7;
        let mut expected = 0.0;
        for i in 0..5 {
            let zt: f64 = (0..3).map(|k| t[[i, k]].exp()).sum();
            expected += -(t[[i, y[i]]].exp() / zt).ln() / 5.0;
            let zs: f64 = (0..4).map(|k| s[[i, k]].exp()).sum();
            for j in 0..4 {
                expected -= lambda * rel.matrix[[y[i], j]] * (s[[i, j]].exp() / zs).ln() / 5.0;
            }
        }
        let l = loss_cotuning(&t.view(), &s.view(), &y, &rel, lambda).unwrap();
        assert!((l.value - expected).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random(&mut rng, 3, 3);
        let s = random(&mut rng, 3, 4);
        let rel = relationship(&mut rng, 3, 4);
        let y = [1, 0, 2];
        let l = loss_cotuning(&t.view(), &s.view(), &y, &rel, 0.5).unwrap();
        let f = |t: &Array2<f64>, s: &Array2<f64>| loss_cotuning(&t.view(), &s.view(), &y, &rel, 0.5).unwrap().value;
        let h = 1e-5;
        let rel_err = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for i in 0..3 {
            for k in 0..3 {
                let (mut p, mut m) = (t.clone(), t.clone());
                p[[i, k]] += h;
                m[[i, k]] -= h;
                assert!(rel_err((f(&p, &s) - f(&m, &s)) / (2.0 * h), l.d_target[[i, k]]) < 1e-3);
            }
            for k in 0..4 {
                let (mut p, mut m) = (s.clone(), s.clone());
                p[[i, k]] += h;
                m[[i, k]] -= h;
                let ds = l.d_source.as_ref().unwrap()[[i, k]];
                assert!(rel_err((f(&t, &p) - f(&t, &m)) / (2.0 * h), ds) < 1e-3);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let t = Array2::zeros((2, 2));
        let s = Array2::zeros((2, 3));
        let rel = relationship(&mut ChaCha8Rng::seed_from_u64(5), 2, 4);
        assert!(matches!(loss_cotuning(&t.view(), &s.view(), &[0, 1], &rel, 1.0), Err(Error::ShapeMismatch(_))));
        assert!(matches!(cross_entropy(&t.view(), &[0]), Err(Error::ShapeMismatch(_))));
    }
}
