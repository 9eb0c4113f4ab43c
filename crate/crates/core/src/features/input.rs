use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::LogMelFeature;

/// Colormap used for the RGB layout.
pub const COLORMAP_NAME: &str = "viridis";

/// Channel layout fed to the three-channel backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLayout {
    /// The log-mel image copied into all three channels.
    Replicate3,
    /// Colormapped RGB image enlarged 2x by bilinear interpolation.
    RgbUpscaled2x,
}

impl InputLayout {
    /// Spatial size of the model input for a `[n_mels, n_frames]` feature.
    pub fn input_dims(self, n_mels: usize, n_frames: usize) -> (usize, usize) {
        match self {
            InputLayout::Replicate3 => (n_mels, n_frames),
            InputLayout::RgbUpscaled2x => (2 * n_mels, 2 * n_frames),
        }
    }
}

/// `[3, H, W]` image for the backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub values: Array3<f64>,
    pub layout: InputLayout,
}

/// 2x bilinear enlargement with half-pixel centres.
fn upscale2x(src: &Array2<f64>) -> Array2<f64> {
    let (h, w) = src.dim();
    let coord = |dst: usize, n: usize| {
        let s = ((dst as f64 + 0.5) / 2.0 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    Array2::from_shape_fn((2 * h, 2 * w), |(y, x)| {
        let (y0, y1, fy) = coord(y, h);
        let (x0, x1, fx) = coord(x, w);
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Convert a log-mel feature into the backbone's three-channel input.
pub fn to_model_input(feat: &LogMelFeature, layout: InputLayout) -> ModelInput {
    let v = &feat.values;
    let (h, w) = v.dim();
    let values = match layout {
        InputLayout::Replicate3 => Array3::from_shape_fn((3, h, w), |(_, y, x)| v[[y, x]]),
        InputLayout::RgbUpscaled2x => {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            let mut planes = [Array2::zeros((h, w)), Array2::zeros((h, w)), Array2::zeros((h, w))];
            for ((y, x), &val) in v.indexed_iter() {
                let t = if span > 0.0 { (val - lo) / span } else { 0.0 };
                let c = colorous::VIRIDIS.eval_continuous(t);
                planes[0][[y, x]] = f64::from(c.r) / 255.0;
                planes[1][[y, x]] = f64::from(c.g) / 255.0;
                planes[2][[y, x]] = f64::from(c.b) / 255.0;
            }
            let mut out = Array3::zeros((3, 2 * h, 2 * w));
            for (c, plane) in planes.iter().enumerate() {
                out.index_axis_mut(ndarray::Axis(0), c).assign(&upscale2x(plane));
            }
            out
        }
    };
    ModelInput { values, layout }
}
