use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4, Axis, Zip};
use rand::Rng;

use super::{join_key, Slot, Visit};

/// Rectifier. NaN passes through so that divergence stays visible.
pub fn relu(x: Array4<f64>) -> Array4<f64> {
    x.mapv_into(|v| if v < 0.0 { 0.0 } else { v })
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(y: &ArrayView4<f64>, dy: Array4<f64>) -> Array4<f64> {
    let mut dy = dy;
    Zip::from(&mut dy).and(y).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dy
}

/// 3x3 max pooling, stride 2, padding 1.
#[derive(Debug, Clone, Default)]
pub struct MaxPool {
    cache: Option<(Vec<usize>, [usize; 4])>,
}

impl MaxPool {
    pub fn forward(&mut self, x: &ArrayView4<f64>, train: bool) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        let oh = (h + 2 - 3) / 2 + 1;
        let ow = (w + 2 - 3) / 2 + 1;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut y = Array4::zeros((n, c, oh, ow));
        let mut arg = vec![0usize; n * c * oh * ow];
        for (plane, out) in y.as_slice_mut().unwrap().chunks_mut(oh * ow).enumerate() {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for a in 0..3 {
                        let iy = (oy * 2 + a) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for b in 0..3 {
                            let ix = (ox * 2 + b) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = base + iy as usize * w + ix as usize;
                            if xs[i] > best || xs[i].is_nan() {
                                best = xs[i];
                                at = i;
                            }
                        }
                    }
                    out[oy * ow + ox] = best;
                    arg[plane * oh * ow + oy * ow + ox] = at;
                }
            }
        }
        self.cache = train.then_some((arg, [n, c, h, w]));
        y
    }

    pub fn backward(&mut self, dy: &ArrayView4<f64>) -> Array4<f64> {
        let (arg, dims) = self.cache.take().expect("maxpool backward without training forward");
        let mut dx = Array4::zeros(dims);
        let dxs = dx.as_slice_mut().unwrap();
        let dy = dy.as_standard_layout();
        for (i, g) in arg.iter().zip(dy.as_slice().unwrap()) {
            dxs[*i] += g;
        }
        dx
    }
}

/// Mean over the spatial axes: `[n, c, h, w]` to `[n, c]`.
pub fn global_avg_pool(x: &ArrayView4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let flat = x.view().into_shape_with_order((n, c, h * w)).expect("contiguous");
    flat.mean_axis(Axis(2)).expect("non-empty spatial axes")
}

pub fn global_avg_pool_backward(dy: &ArrayView2<f64>, dims: [usize; 4]) -> Array4<f64> {
    let [n, c, h, w] = dims;
    let scale = 1.0 / (h * w) as f64;
    Array4::from_shape_fn((n, c, h, w), |(i, j, _, _)| dy[[i, j]] * scale)
}

/// Affine layer `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    /// `[out, in]`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub grad_weight: Array2<f64>,
    pub grad_bias: Array1<f64>,
    cache: Option<Array2<f64>>,
}

impl Linear {
    /// Zero-mean uniform init with bound `1/sqrt(fan_in)`.
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound));
        let bias = Array1::from_shape_fn(fan_out, |_| rng.gen_range(-bound..bound));
        Self::from_parts(weight, bias)
    }

    pub fn from_parts(weight: Array2<f64>, bias: Array1<f64>) -> Self {
        Linear {
            grad_weight: Array2::zeros(weight.raw_dim()),
            grad_bias: Array1::zeros(bias.len()),
            weight,
            bias,
            cache: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&mut self, x: &ArrayView2<f64>, train: bool) -> Array2<f64> {
        let y = x.dot(&self.weight.t()) + &self.bias;
        self.cache = train.then(|| x.to_owned());
        y
    }

    pub fn backward(&mut self, dy: &ArrayView2<f64>) -> Array2<f64> {
        let x = self.cache.take().expect("linear backward without training forward");
        self.grad_weight = dy.t().dot(&x);
        self.grad_bias = dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

impl Visit for Linear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(
            &join_key(prefix, "weight"),
            Slot::Param {
                value: self.weight.view_mut().into_dyn(),
                grad: self.grad_weight.view().into_dyn(),
            },
        );
        f(
            &join_key(prefix, "bias"),
            Slot::Param {
                value: self.bias.view_mut().into_dyn(),
                grad: self.grad_bias.view().into_dyn(),
            },
        );
    }
}
