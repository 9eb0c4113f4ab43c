use ndarray::{Array2, Array4, ArrayView4};
use rand::Rng;

use super::{join_key, Slot, Visit};

/// 2-D convolution without bias, square kernel, computed via im2col.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `[out, in, k, k]`.
    pub weight: Array4<f64>,
    pub grad: Array4<f64>,
    pub stride: usize,
    pub padding: usize,
    cache: Option<(Array2<f64>, [usize; 4])>,
}

impl Conv2d {
    /// He-normal (fan-out) initialization.
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, padding: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (cout * k * k) as f64).sqrt();
        let normal = rand_distr::Normal::new(0.0, std).expect("finite std");
        let weight = Array4::from_shape_fn((cout, cin, k, k), |_| rng.sample(normal));
        Self::from_weight(weight, stride, padding)
    }

    pub fn from_weight(weight: Array4<f64>, stride: usize, padding: usize) -> Self {
        Conv2d {
            grad: Array4::zeros(weight.raw_dim()),
            weight,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &ArrayView4<f64>) -> Array2<f64> {
        let (n, c, h, w) = x.dim();
        let k = self.kernel();
        let (oh, ow) = self.out_dims(h, w);
        let cols_per = oh * ow;
        let mut cols = Array2::zeros((c * k * k, n * cols_per));
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let total = n * cols_per;
        let out = cols.as_slice_mut().expect("fresh array");
        let (s, p) = (self.stride as isize, self.padding as isize);
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut out[row * total..(row + 1) * total];
                    for ni in 0..n {
                        let base = (ni * c + ci) * h * w;
                        for oy in 0..oh {
                            let iy = oy as isize * s + ki as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = base + iy as usize * w;
                            let dst_row = ni * cols_per + oy * ow;
                            for ox in 0..ow {
                                let ix = ox as isize * s + kj as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    dst[dst_row + ox] = xs[src_row + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, dims: [usize; 4]) -> Array4<f64> {
        let [n, c, h, w] = dims;
        let k = self.kernel();
        let (oh, ow) = self.out_dims(h, w);
        let cols_per = oh * ow;
        let total = n * cols_per;
        let mut dx = Array4::zeros((n, c, h, w));
        let dxs = dx.as_slice_mut().expect("fresh array");
        let src = cols.as_slice().expect("standard layout");
        let (s, p) = (self.stride as isize, self.padding as isize);
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let col = &src[row * total..(row + 1) * total];
                    for ni in 0..n {
                        let base = (ni * c + ci) * h * w;
                        for oy in 0..oh {
                            let iy = oy as isize * s + ki as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst_row = base + iy as usize * w;
                            let src_row = ni * cols_per + oy * ow;
                            for ox in 0..ow {
                                let ix = ox as isize * s + kj as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    dxs[dst_row + ix as usize] += col[src_row + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn weight_matrix(&self) -> ndarray::ArrayView2<'_, f64> {
        let o = self.out_channels();
        let kk = self.weight.len() / o;
        self.weight.view().into_shape_with_order((o, kk)).expect("contiguous weight")
    }

    /// `[n, in, h, w]` to `[n, out, oh, ow]`. Caches the unfolded input when
    /// `train` is set.
    pub fn forward(&mut self, x: &ArrayView4<f64>, train: bool) -> Array4<f64> {
        let (n, _, h, w) = x.dim();
        let (oh, ow) = self.out_dims(h, w);
        let cols = self.im2col(x);
        let y = self.weight_matrix().dot(&cols);
        let o = self.out_channels();
        let y = y
            .into_shape_with_order((o, n, oh, ow))
            .expect("conv output")
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_owned();
        self.cache = train.then(|| (cols, [x.dim().0, x.dim().1, h, w]));
        y
    }

    /// Sets the weight gradient and returns the input gradient.
    pub fn backward(&mut self, dy: &ArrayView4<f64>) -> Array4<f64> {
        let (cols, dims) = self.cache.take().expect("conv backward without training forward");
        let (n, o, oh, ow) = dy.dim();
        let dy2 = dy
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((o, n * oh * ow))
            .expect("conv grad");
        let gw = dy2.dot(&cols.t());
        self.grad = gw.into_shape_with_order(self.weight.raw_dim()).expect("weight grad shape");
        let dcols = self.weight_matrix().t().dot(&dy2);
        self.col2im(&dcols, dims)
    }
}

impl Visit for Conv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(
            &join_key(prefix, "weight"),
            Slot::Param {
                value: self.weight.view_mut().into_dyn(),
                grad: self.grad.view().into_dyn(),
            },
        );
    }
}
