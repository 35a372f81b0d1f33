//! Robustness perturbations: Gaussian noise, Gaussian blur, JPEG
//! re-encoding, random crop with cubic resize back, and their chain.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::imageops::FilterType;
use image::{DynamicImage, ImageFormat, RgbImage};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{convolve_separable, gaussian_kernel, sigma_for_kernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Noise,
    Blur,
    Jpeg,
    Crop,
    /// Noise, then blur, then JPEG, then crop.
    Chain,
}

impl PerturbationKind {
    pub const SINGLES: [PerturbationKind; 4] = [Self::Noise, Self::Blur, Self::Jpeg, Self::Crop];

    pub fn name(self) -> &'static str {
        match self {
            Self::Noise => "noise",
            Self::Blur => "blur",
            Self::Jpeg => "jpeg",
            Self::Crop => "crop",
            Self::Chain => "chain",
        }
    }
}

impl std::str::FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Noise, Self::Blur, Self::Jpeg, Self::Crop, Self::Chain]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown perturbation {s}")))
    }
}

/// Sampling ranges for every perturbation parameter. Defaults are the
/// standard protocol: variance in `[5, 20]`, kernel in `{3, 5, 7, 9}`,
/// quality in `[10, 75]`, crop in `[5%, 20%]` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    /// Gaussian noise variance in 8-bit intensity units.
    pub noise_variance: [f64; 2],
    pub blur_kernels: Vec<usize>,
    pub jpeg_quality: [u8; 2],
    /// Fraction removed per axis.
    pub crop_fraction: [f64; 2],
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, seed: u64) -> Self {
        Self {
            kind,
            noise_variance: [5.0, 20.0],
            blur_kernels: vec![3, 5, 7, 9],
            jpeg_quality: [10, 75],
            crop_fraction: [0.05, 0.20],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [v0, v1] = self.noise_variance;
        if !(0.0 <= v0 && v0 <= v1 && v1.is_finite()) {
            return bad(format!("noise variance range {v0}..{v1} invalid"));
        }
        if self.blur_kernels.is_empty() || self.blur_kernels.iter().any(|k| k % 2 == 0) {
            return bad("blur kernels must be a non-empty set of odd sizes".into());
        }
        let [q0, q1] = self.jpeg_quality;
        if !(1 <= q0 && q0 <= q1 && q1 <= 100) {
            return bad(format!("jpeg quality range {q0}..{q1} invalid"));
        }
        let [c0, c1] = self.crop_fraction;
        if !(0.0 <= c0 && c0 <= c1 && c1 < 1.0) {
            return bad(format!("crop fraction range {c0}..{c1} invalid"));
        }
        Ok(())
    }

    /// Label used in report rows.
    pub fn name(&self) -> String {
        self.kind.name().to_string()
    }
}

/// Parameters actually drawn for one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub noise_variance: Option<f64>,
    pub blur_kernel: Option<usize>,
    pub blur_sigma: Option<f64>,
    pub jpeg_quality: Option<u8>,
    /// `(x, y)` fractions removed.
    pub crop_fraction: Option<(f64, f64)>,
    pub crop_origin: Option<(u32, u32)>,
}

impl PerturbationRecord {
    /// Whether every sampled parameter lies in the standard ranges.
    pub fn within_standard_ranges(&self) -> bool {
        let std = PerturbationSpec::new(PerturbationKind::Chain, 0);
        self.noise_variance
            .is_none_or(|v| (std.noise_variance[0]..=std.noise_variance[1]).contains(&v))
            && self.blur_kernel.is_none_or(|k| std.blur_kernels.contains(&k))
            && self
                .jpeg_quality
                .is_none_or(|q| (std.jpeg_quality[0]..=std.jpeg_quality[1]).contains(&q))
            && self.crop_fraction.is_none_or(|(fx, fy)| {
                let r = std.crop_fraction[0]..=std.crop_fraction[1];
                r.contains(&fx) && r.contains(&fy)
            })
    }
}

fn uniform<R: Rng + ?Sized>(range: [f64; 2], rng: &mut R) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

/// Rejects anything that is not 8 bits per channel; grayscale and alpha
/// inputs are converted to RGB.
pub fn ensure_8bit(img: &DynamicImage) -> Result<RgbImage> {
    match img {
        DynamicImage::ImageRgb8(i) => Ok(i.clone()),
        DynamicImage::ImageRgba8(_) | DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            Ok(img.to_rgb8())
        }
        other => Err(Error::InvalidInput(format!(
            "expected an 8-bit image, got {:?}",
            other.color()
        ))),
    }
}

pub fn add_noise<R: Rng + ?Sized>(img: &RgbImage, variance: f64, rng: &mut R) -> RgbImage {
    if variance == 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
    let mut out = img.clone();
    for px in out.pixels_mut() {
        for c in px.0.iter_mut() {
            let v = f64::from(*c) + normal.sample(rng);
            *c = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

pub fn gaussian_blur_rgb(img: &RgbImage, kernel: usize, sigma: f64) -> RgbImage {
    if kernel <= 1 {
        return img.clone();
    }
    let taps = gaussian_kernel(kernel, sigma);
    let (w, h) = img.dimensions();
    let mut out = img.clone();
    for c in 0..3 {
        let plane = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
            f64::from(img.get_pixel(x as u32, y as u32)[c])
        });
        let blurred = convolve_separable(&plane, &taps);
        for (x, y, px) in out.enumerate_pixels_mut() {
            px[c] = blurred[[y as usize, x as usize]].round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

pub fn jpeg_round_trip(img: &RgbImage, quality: u8) -> Result<RgbImage> {
    let mut buf = Cursor::new(Vec::new());
    JpegEncoder::new_with_quality(&mut buf, quality).encode_image(img)?;
    Ok(image::load_from_memory_with_format(buf.get_ref(), ImageFormat::Jpeg)?.to_rgb8())
}

/// Removes `fx`/`fy` of the width/height at a random anchor, then resizes
/// back with bicubic (Catmull-Rom) interpolation.
pub fn crop_resize<R: Rng + ?Sized>(img: &RgbImage, fx: f64, fy: f64, rng: &mut R) -> (RgbImage, (u32, u32)) {
    let (w, h) = img.dimensions();
    let cw = ((f64::from(w) * (1.0 - fx)).round() as u32).clamp(1, w);
    let ch = ((f64::from(h) * (1.0 - fy)).round() as u32).clamp(1, h);
    if cw == w && ch == h {
        return (img.clone(), (0, 0));
    }
    let x0 = rng.random_range(0..=w - cw);
    let y0 = rng.random_range(0..=h - ch);
    let cropped = image::imageops::crop_imm(img, x0, y0, cw, ch).to_image();
    (
        image::imageops::resize(&cropped, w, h, FilterType::CatmullRom),
        (x0, y0),
    )
}

/// Applies `spec` to `img`, returning the perturbed image and the drawn
/// parameters.
pub fn perturb<R: Rng + ?Sized>(
    img: &RgbImage,
    spec: &PerturbationSpec,
    rng: &mut R,
) -> Result<(RgbImage, PerturbationRecord)> {
    spec.validate()?;
    let mut rec = PerturbationRecord::default();
    let mut out = img.clone();
    let kinds: &[PerturbationKind] = match spec.kind {
        PerturbationKind::Chain => &PerturbationKind::SINGLES,
        PerturbationKind::Noise => &[PerturbationKind::Noise],
        PerturbationKind::Blur => &[PerturbationKind::Blur],
        PerturbationKind::Jpeg => &[PerturbationKind::Jpeg],
        PerturbationKind::Crop => &[PerturbationKind::Crop],
    };
    for kind in kinds {
        match kind {
            PerturbationKind::Noise => {
                let v = uniform(spec.noise_variance, rng);
                rec.noise_variance = Some(v);
                out = add_noise(&out, v, rng);
            }
            PerturbationKind::Blur => {
                let k = spec.blur_kernels[rng.random_range(0..spec.blur_kernels.len())];
                let sigma = sigma_for_kernel(k);
                rec.blur_kernel = Some(k);
                rec.blur_sigma = Some(sigma);
                out = gaussian_blur_rgb(&out, k, sigma);
            }
            PerturbationKind::Jpeg => {
                let [q0, q1] = spec.jpeg_quality;
                let q = rng.random_range(q0..=q1);
                rec.jpeg_quality = Some(q);
                out = jpeg_round_trip(&out, q)?;
            }
            PerturbationKind::Crop => {
                let fx = uniform(spec.crop_fraction, rng);
                let fy = uniform(spec.crop_fraction, rng);
                rec.crop_fraction = Some((fx, fy));
                let (o, origin) = crop_resize(&out, fx, fy, rng);
                rec.crop_origin = Some(origin);
                out = o;
            }
            PerturbationKind::Chain => unreachable!("chain expands to single perturbations"),
        }
    }
    Ok((out, rec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn test_image() -> RgbImage {
        RgbImage::from_fn(40, 30, |x, y| {
            image::Rgb([(x * 6) as u8, (y * 8) as u8, ((x * y) % 255) as u8])
        })
    }

    #[test]
    fn degenerate_parameters_are_identity() {
        let img = test_image();
        let mut noise = PerturbationSpec::new(PerturbationKind::Noise, 0);
        noise.noise_variance = [0.0, 0.0];
        assert_eq!(perturb(&img, &noise, &mut seed::rng(1)).unwrap().0, img);
        let mut crop = PerturbationSpec::new(PerturbationKind::Crop, 0);
        crop.crop_fraction = [0.0, 0.0];
        assert_eq!(perturb(&img, &crop, &mut seed::rng(1)).unwrap().0, img);
        assert_eq!(gaussian_blur_rgb(&img, 1, 1.0), img);
    }

    #[test]
    fn same_seed_same_bytes() {
        let img = test_image();
        for kind in [
            PerturbationKind::Noise,
            PerturbationKind::Blur,
            PerturbationKind::Jpeg,
            PerturbationKind::Crop,
            PerturbationKind::Chain,
        ] {
            let spec = PerturbationSpec::new(kind, 0);
            let a = perturb(&img, &spec, &mut seed::rng(5)).unwrap();
            let b = perturb(&img, &spec, &mut seed::rng(5)).unwrap();
            assert_eq!(a, b, "{kind:?}");
            assert_eq!(a.0.dimensions(), img.dimensions());
            assert!(a.1.within_standard_ranges());
        }
    }

    #[test]
    fn chain_records_every_stage() {
        let spec = PerturbationSpec::new(PerturbationKind::Chain, 0);
        let (_, rec) = perturb(&test_image(), &spec, &mut seed::rng(2)).unwrap();
        assert!(rec.noise_variance.is_some());
        assert!(rec.blur_kernel.is_some());
        assert!(rec.jpeg_quality.is_some());
        assert!(rec.crop_fraction.is_some());
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let img = RgbImage::from_pixel(12, 12, image::Rgb([90, 120, 30]));
        assert_eq!(gaussian_blur_rgb(&img, 9, sigma_for_kernel(9)), img);
    }

    #[test]
    fn rejects_non_8bit() {
        let img16 = DynamicImage::ImageRgb16(image::ImageBuffer::new(4, 4));
        assert!(ensure_8bit(&img16).is_err());
        let gray = DynamicImage::ImageLuma8(image::GrayImage::new(4, 4));
        assert_eq!(ensure_8bit(&gray).unwrap().dimensions(), (4, 4));
    }

    #[test]
    fn spec_validation() {
        let mut s = PerturbationSpec::new(PerturbationKind::Blur, 0);
        s.blur_kernels = vec![4];
        assert!(s.validate().is_err());
        let mut s = PerturbationSpec::new(PerturbationKind::Jpeg, 0);
        s.jpeg_quality = [80, 10];
        assert!(s.validate().is_err());
        let mut s = PerturbationSpec::new(PerturbationKind::Crop, 0);
        s.crop_fraction = [0.1, 1.0];
        assert!(s.validate().is_err());
        assert!("blur".parse::<PerturbationKind>().is_ok());
        assert!("rain".parse::<PerturbationKind>().is_err());
    }
}
