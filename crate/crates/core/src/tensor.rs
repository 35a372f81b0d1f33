//! Conversions between 8-bit RGB images and `C×H×W` float tensors.

use image::RgbImage;
use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `C×H×W` image tensor.
pub type Tensor = Array3<f64>;

/// RGB image to a `3×H×W` tensor in `[0, 1]`.
pub fn from_rgb(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
    })
}

/// Tensor in `[0, 1]` back to 8-bit RGB (rounded, clamped). Single-channel
/// tensors are replicated.
pub fn to_rgb(t: ArrayView3<'_, f64>) -> RgbImage {
    let (c, h, w) = t.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| {
            let v = t[[ch.min(c - 1), y as usize, x as usize]];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Per-channel standardization applied after masking decisions are made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for Normalization {
    /// Channel statistics of the contrastive image-text pretraining corpus
    /// used by CLIP-style encoders.
    fn default() -> Self {
        Self {
            mean: vec![0.481_454_66, 0.457_827_5, 0.408_210_73],
            std: vec![0.268_629_54, 0.261_302_58, 0.275_777_11],
        }
    }
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        let c = t.dim().0;
        if self.mean.len() != c || self.std.len() != c {
            return Err(Error::ShapeMismatch {
                expected: format!("{} normalization channels", c),
                actual: format!("{}/{}", self.mean.len(), self.std.len()),
            });
        }
        let mut out = t.clone();
        for (ch, mut plane) in out.outer_iter_mut().enumerate() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            plane.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }
}

pub(crate) fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite values")))
    }
}
