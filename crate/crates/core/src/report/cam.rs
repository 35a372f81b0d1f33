//! Class activation maps for token encoders: each token is scored by the
//! head weights, the grid is min-max normalized and upsampled bilinearly.

use std::path::PathBuf;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{ClassifierHead, Encoder};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CamMap {
    pub image: Option<PathBuf>,
    /// Normalized token scores on the token grid.
    pub grid: Array2<f64>,
    /// `grid` upsampled to the input size.
    pub heatmap: Array2<f64>,
}

/// Min-max normalization; a constant input maps to 0.5 everywhere.
pub fn normalize_scores(v: &Array2<f64>) -> Array2<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Array2::from_elem(v.dim(), 0.5);
    }
    v.mapv(|x| (x - lo) / (hi - lo))
}

/// Bilinear resize with pixel-center alignment and edge clamping.
pub fn bilinear_upsample(grid: &Array2<f64>, height: usize, width: usize) -> Array2<f64> {
    let (gh, gw) = grid.dim();
    let src = |o: usize, out: usize, n: usize| {
        let s = ((o as f64 + 0.5) * n as f64 / out as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(n - 1), s - i0 as f64)
    };
    Array2::from_shape_fn((height, width), |(y, x)| {
        let (y0, y1, fy) = src(y, height, gh);
        let (x0, x1, fx) = src(x, width, gw);
        let top = grid[[y0, x0]] * (1.0 - fx) + grid[[y0, x1]] * fx;
        let bottom = grid[[y1, x0]] * (1.0 - fx) + grid[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// CAM for a normalized input tensor.
pub fn cam(encoder: &dyn Encoder, head: &ClassifierHead, x: &Tensor) -> Result<CamMap> {
    let (_, h, w) = x.dim();
    let out = encoder.encode(x)?;
    let (gh, gw) = out.grid;
    if gh * gw == 0 || out.tokens.nrows() != gh * gw {
        return Err(Error::InvalidInput(format!(
            "encoder {} exposes no token grid",
            encoder.id()
        )));
    }
    if head.weights.len() != out.tokens.ncols() {
        return Err(Error::ShapeMismatch {
            expected: format!("head of width {}", out.tokens.ncols()),
            actual: head.weights.len().to_string(),
        });
    }
    let scores = out.tokens.dot(&head.weights).into_shape_with_order((gh, gw)).expect("token grid");
    let grid = normalize_scores(&scores);
    let heatmap = bilinear_upsample(&grid, h, w);
    Ok(CamMap {
        image: None,
        grid,
        heatmap,
    })
}

/// Share of total heat inside `region` (same shape as the heatmap).
pub fn region_share(heatmap: &Array2<f64>, region: &Array2<bool>) -> f64 {
    let total: f64 = heatmap.sum();
    if total <= 0.0 {
        return 0.0;
    }
    heatmap.iter().zip(region).filter(|(_, &r)| r).map(|(v, _)| v).sum::<f64>() / total
}

/// Blue-to-red ramp.
pub fn heat_color(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0)).round() as u8;
    let g = (255.0 * (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0)).round() as u8;
    let b = (255.0 * (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0)).round() as u8;
    Rgb([r, g, b])
}

/// Half-and-half blend of `img` and the colored heatmap.
pub fn overlay(img: &RgbImage, map: &CamMap) -> Result<RgbImage> {
    let (h, w) = map.heatmap.dim();
    if img.dimensions() != (w as u32, h as u32) {
        return Err(Error::ShapeMismatch {
            expected: format!("{w}x{h} image"),
            actual: format!("{}x{}", img.width(), img.height()),
        });
    }
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let c = heat_color(map.heatmap[[y as usize, x as usize]]);
        let p = img.get_pixel(x, y);
        Rgb(std::array::from_fn(|k| ((u16::from(p[k]) + u16::from(c[k])) / 2) as u8))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{tests::tiny_spec, ToyVit};
    use crate::tensor::Tensor;

    #[test]
    fn zero_head_gives_half_everywhere() {
        let m = ToyVit::new(tiny_spec(), 1).unwrap();
        let x = Tensor::from_shape_fn((3, 8, 8), |(c, y, x)| ((c + y * x) % 5) as f64 / 5.0);
        let map = cam(&m, &m.params.head, &x).unwrap();
        assert!(map.heatmap.iter().all(|&v| v == 0.5));
        assert_eq!(map.heatmap.dim(), (8, 8));
        assert_eq!(map.grid.dim(), (2, 2));
    }

    #[test]
    fn normalized_range_and_shape() {
        let mut m = ToyVit::new(tiny_spec(), 1).unwrap();
        m.params.head.weights.iter_mut().enumerate().for_each(|(i, w)| *w = i as f64 - 2.0);
        let x = Tensor::from_shape_fn((3, 8, 8), |(c, y, x)| ((c * 7 + y * 3 + x) % 11) as f64 / 11.0);
        let map = cam(&m, &m.params.head, &x).unwrap();
        let lo = map.grid.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = map.grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
        assert!(map.heatmap.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn upsample_of_constant_and_corners() {
        let g = Array2::from_elem((2, 3), 0.25);
        assert!(bilinear_upsample(&g, 7, 5).iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let g = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let u = bilinear_upsample(&g, 4, 4);
        assert_eq!(u[[0, 0]], 0.0);
        assert_eq!(u[[0, 3]], 1.0);
        assert_eq!(u[[2, 1]], 0.25);
    }

    #[test]
    fn region_share_uniform() {
        let h = Array2::from_elem((4, 4), 0.5);
        let mut r = Array2::from_elem((4, 4), false);
        r[[0, 0]] = true;
        r[[1, 1]] = true;
        assert!((region_share(&h, &r) - 2.0 / 16.0).abs() < 1e-15);
    }
}
