//! Dataset manifests, train/eval preprocessing and the synthetic
//! two-artifact-family dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::gaussian_blur;
use crate::seed;
use crate::tensor::{self, Normalization, Tensor};
use crate::texmask::{rank_patches, texture_diversity_map, PatchGrid};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Generated,
}

impl Label {
    /// 1 for generated, 0 for real.
    pub fn target(self) -> u8 {
        match self {
            Label::Real => 0,
            Label::Generated => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Generated => "generated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub label: Label,
    pub subset: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub records: Vec<ImageRecord>,
    pub subsets: Vec<String>,
    /// Fraction of real (negative) records per subset.
    #[serde(default)]
    pub class_balance: BTreeMap<String, f64>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Builds and validates a manifest rooted at `root`.
    pub fn new(records: Vec<ImageRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let subsets: Vec<String> = records
            .iter()
            .map(|r| r.subset.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut m = Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            records,
            subsets,
            class_balance: BTreeMap::new(),
            root: root.into(),
        };
        m.class_balance = m.compute_class_balance();
        m.validate(false)?;
        Ok(m)
    }

    fn compute_class_balance(&self) -> BTreeMap<String, f64> {
        self.subsets
            .iter()
            .map(|s| {
                let rows: Vec<_> = self.records.iter().filter(|r| &r.subset == s).collect();
                let neg = rows.iter().filter(|r| r.label == Label::Real).count();
                (s.clone(), neg as f64 / rows.len().max(1) as f64)
            })
            .collect()
    }

    fn validate(&self, check_files: bool) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported manifest schema_version {}",
                self.schema_version
            )));
        }
        if self.records.is_empty() {
            return Err(Error::Schema("manifest has no records".into()));
        }
        let known: BTreeSet<&str> = self.subsets.iter().map(String::as_str).collect();
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if r.subset.is_empty() {
                return Err(Error::Schema(format!("record {} has an empty subset", r.path.display())));
            }
            if !known.contains(r.subset.as_str()) {
                return Err(Error::Schema(format!(
                    "record {} names unlisted subset {}",
                    r.path.display(),
                    r.subset
                )));
            }
            if !seen.insert(&r.path) {
                return Err(Error::Schema(format!("duplicate path {}", r.path.display())));
            }
            if check_files && !self.resolve(&r.path).is_file() {
                return Err(Error::MissingFile(self.resolve(&r.path)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Test records grouped by subset, in `subsets` order. Every subset must
    /// hold both classes.
    pub fn test_subsets(&self) -> Result<Vec<(String, Vec<ImageRecord>)>> {
        let mut out = Vec::new();
        for s in &self.subsets {
            let rows: Vec<ImageRecord> = self
                .records_in(Split::Test)
                .filter(|r| &r.subset == s)
                .cloned()
                .collect();
            if rows.is_empty() {
                continue;
            }
            ensure_both_classes(s, &rows)?;
            out.push((s.clone(), rows));
        }
        if out.is_empty() {
            return Err(Error::Empty("test split"));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub(crate) fn ensure_both_classes(subset: &str, rows: &[ImageRecord]) -> Result<()> {
    let has = |l: Label| rows.iter().any(|r| r.label == l);
    if !has(Label::Real) || !has(Label::Generated) {
        return Err(Error::Schema(format!(
            "subset {subset} must contain both real and generated test records"
        )));
    }
    Ok(())
}

/// Reads and validates a manifest; image paths must exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
    m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate(true)?;
    m.class_balance = m.compute_class_balance();
    Ok(m)
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(image::open(path)?.to_rgb8())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    None,
    #[default]
    QuarterTurns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    pub crop_size: usize,
    pub flip_prob: f64,
    pub rotation: Rotation,
    /// Probability that a quarter-turn rotation is applied at all.
    pub rotation_prob: f64,
    pub tiling_expand: bool,
    pub normalization: Normalization,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            crop_size: 224,
            flip_prob: 0.5,
            rotation: Rotation::QuarterTurns,
            rotation_prob: 0.5,
            tiling_expand: true,
            normalization: Normalization::default(),
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 {
            return Err(Error::Config("crop_size must be positive".into()));
        }
        for (name, p) in [("flip_prob", self.flip_prob), ("rotation_prob", self.rotation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// A `[0, 1]` tensor ready for masking, with the normalization that the
/// model input stage applies afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub tensor: Tensor,
    pub normalization: Normalization,
    pub crop_origin: (usize, usize),
    pub flipped: bool,
    pub quarter_turns: u8,
}

/// Repeats the whole image in a grid until both sides reach `min_side`.
pub fn tile_expand(img: &RgbImage, min_side: usize) -> RgbImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w >= min_side && h >= min_side {
        return img.clone();
    }
    let nw = w * min_side.div_ceil(w).max(1);
    let nh = h * min_side.div_ceil(h).max(1);
    RgbImage::from_fn(nw as u32, nh as u32, |x, y| {
        *img.get_pixel(x % w as u32, y % h as u32)
    })
}

fn prepare_canvas(img: &RgbImage, crop: usize, tiling: bool) -> Result<RgbImage> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    let small = (img.width() as usize) < crop || (img.height() as usize) < crop;
    match (small, tiling) {
        (false, _) => Ok(img.clone()),
        (true, true) => Ok(tile_expand(img, crop)),
        (true, false) => Err(Error::ImageTooSmall {
            height: img.height() as usize,
            width: img.width() as usize,
            patch: crop,
        }),
    }
}

fn crop_tensor(img: &RgbImage, top: usize, left: usize, size: usize) -> Tensor {
    Array3::from_shape_fn((3, size, size), |(c, y, x)| {
        f64::from(img.get_pixel((left + x) as u32, (top + y) as u32)[c]) / 255.0
    })
}

/// Random crop, horizontal flip and quarter-turn rotation.
pub fn preprocess_train<R: Rng + ?Sized>(
    img: &RgbImage,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<Preprocessed> {
    cfg.validate()?;
    let canvas = prepare_canvas(img, cfg.crop_size, cfg.tiling_expand)?;
    let s = cfg.crop_size;
    let top = rng.random_range(0..=canvas.height() as usize - s);
    let left = rng.random_range(0..=canvas.width() as usize - s);
    let mut t = crop_tensor(&canvas, top, left, s);
    let flipped = rng.random_bool(cfg.flip_prob);
    if flipped {
        t.invert_axis(Axis(2));
    }
    let quarter_turns = match cfg.rotation {
        Rotation::QuarterTurns if rng.random_bool(cfg.rotation_prob) => rng.random_range(1..4u8),
        _ => 0,
    };
    for _ in 0..quarter_turns {
        t = rotate_quarter(&t);
    }
    Ok(Preprocessed {
        tensor: t.as_standard_layout().to_owned(),
        normalization: cfg.normalization.clone(),
        crop_origin: (top, left),
        flipped,
        quarter_turns,
    })
}

/// Counter-clockwise quarter turn of a square `C×S×S` tensor.
fn rotate_quarter(t: &Tensor) -> Tensor {
    let (c, h, w) = t.dim();
    Array3::from_shape_fn((c, w, h), |(ch, y, x)| t[[ch, x, w - 1 - y]])
}

/// Deterministic center crop (tiling first when the image is too small).
pub fn preprocess_eval(img: &RgbImage, crop_size: usize, norm: &Normalization) -> Result<Preprocessed> {
    if crop_size == 0 {
        return Err(Error::Config("crop_size must be positive".into()));
    }
    let canvas = prepare_canvas(img, crop_size, true)?;
    let top = (canvas.height() as usize - crop_size) / 2;
    let left = (canvas.width() as usize - crop_size) / 2;
    Ok(Preprocessed {
        tensor: crop_tensor(&canvas, top, left, crop_size),
        normalization: norm.clone(),
        crop_origin: (top, left),
        flipped: false,
        quarter_turns: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArtifactFamily {
    A,
    B,
}

impl ArtifactFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::A => "A",
            Self::B => "B",
        }
    }

    /// Zero-mean `±1` pattern value at pixel `(y, x)`. Family A is a
    /// fixed-phase checkerboard; family B is period-4 vertical ringing.
    pub fn pattern(self, y: usize, x: usize) -> f64 {
        match self {
            Self::A => {
                if (x + y) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::B => {
                if x % 4 < 2 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Parameters of the synthetic real / generated-A / generated-B dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub image_size: usize,
    /// Training images (half real, half generated-A).
    pub train_count: usize,
    /// Test images per subset (half real, half generated).
    pub test_count_per_subset: usize,
    /// Peak artifact amplitude in `[0, 1]` intensity units.
    pub artifact_amplitude: f64,
    /// Shared generator color shift, as a fraction of the artifact amplitude.
    pub signature_ratio: f64,
    /// Sigma (pixels) of the coarse low-pass field.
    pub base_smoothness: f64,
    /// Grid used to place artifacts on the top-quartile texture patches.
    pub artifact_patch_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_size: 32,
            train_count: 800,
            test_count_per_subset: 400,
            artifact_amplitude: 0.18,
            signature_ratio: 0.65,
            base_smoothness: 4.0,
            artifact_patch_size: 4,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_count < 2 || self.test_count_per_subset < 2 {
            return Err(Error::Config("synthetic counts must be >= 2".into()));
        }
        if !(self.artifact_amplitude >= 0.0) || !(self.signature_ratio >= 0.0) {
            return Err(Error::Config("artifact amplitude must be non-negative".into()));
        }
        if self.base_smoothness <= 0.0 {
            return Err(Error::Config("base_smoothness must be positive".into()));
        }
        PatchGrid::new(self.image_size, self.image_size, self.artifact_patch_size)?;
        if self.artifact_patch_size < 2 {
            return Err(Error::Config("artifact_patch_size must be >= 2".into()));
        }
        Ok(())
    }
}

fn unit_field<R: Rng + ?Sized>(size: usize, sigma: f64, rng: &mut R) -> Array2<f64> {
    let noise = Array2::from_shape_fn((size, size), |_| rng.sample::<f64, _>(StandardNormal));
    let mut f = gaussian_blur(&noise, sigma);
    let mean = f.mean().unwrap_or(0.0);
    let sd = f.std(0.0).max(1e-12);
    f.mapv_inplace(|v| (v - mean) / sd);
    f
}

/// Smooth procedural "real" image in `[0, 1]`: a tinted low-pass field with
/// fine texture confined to a random envelope.
pub fn synth_real_base<R: Rng + ?Sized>(size: usize, smoothness: f64, rng: &mut R) -> Tensor {
    let coarse = unit_field(size, smoothness, rng);
    let envelope = unit_field(size, size as f64 / 5.0, rng).mapv(|v| 1.0 / (1.0 + (-2.5 * v).exp()));
    let fine = unit_field(size, 0.8, rng);
    let tint: Vec<f64> = (0..3).map(|_| rng.random_range(0.35..0.65)).collect();
    let chroma: Vec<Array2<f64>> = (0..3).map(|_| unit_field(size, smoothness, rng)).collect();
    Array3::from_shape_fn((3, size, size), |(c, y, x)| {
        let v = tint[c]
            + 0.12 * coarse[[y, x]]
            + 0.02 * chroma[c][[y, x]]
            + 0.10 * envelope[[y, x]] * fine[[y, x]];
        v.clamp(0.0, 1.0)
    })
}

/// Indices of the top-quartile texture-diversity patches of `base`.
pub fn artifact_patches(base: &Tensor, patch_size: usize) -> Result<Vec<usize>> {
    let (_, h, w) = base.dim();
    let grid = PatchGrid::new(h, w, patch_size)?;
    let ranked = rank_patches(&texture_diversity_map(base, &grid)?)?;
    let mut top = ranked[..grid.patch_count().div_ceil(4)].to_vec();
    top.sort_unstable();
    Ok(top)
}

/// Generated image from a clean base: the shared generator color shift plus a
/// family-specific pattern inside `patches`.
pub fn synth_generated(
    base: &Tensor,
    family: ArtifactFamily,
    patches: &[usize],
    spec: &SynthSpec,
) -> Result<Tensor> {
    let (_, h, w) = base.dim();
    let grid = PatchGrid::new(h, w, spec.artifact_patch_size)?;
    let mut out = base.clone();
    let shift = spec.signature_ratio * spec.artifact_amplitude;
    // warmer reds, cooler blues
    for (c, delta) in [(0usize, shift), (2, -shift)] {
        out.index_axis_mut(Axis(0), c).mapv_inplace(|v| v + delta);
    }
    let p = spec.artifact_patch_size;
    for &k in patches {
        let (y0, x0) = grid.patch_origin(k);
        for y in y0..y0 + p {
            for x in x0..x0 + p {
                let a = spec.artifact_amplitude * family.pattern(y, x);
                for c in 0..3 {
                    out[[c, y, x]] += a;
                }
            }
        }
    }
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

/// One synthetic sample set sharing a base: the clean base, its artifact
/// patches, and the generated image for each family.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub base: Tensor,
    pub artifact_patches: Vec<usize>,
    pub generated_a: Tensor,
    pub generated_b: Tensor,
}

/// Draws the sample for `(stream, index)` of `spec`.
pub fn synth_sample(spec: &SynthSpec, stream: u64, index: u64) -> Result<SynthSample> {
    let mut rng = seed::derived_rng(spec.seed, &[stream, index]);
    let base = synth_real_base(spec.image_size, spec.base_smoothness, &mut rng);
    let patches = artifact_patches(&base, spec.artifact_patch_size)?;
    let generated_a = synth_generated(&base, ArtifactFamily::A, &patches, spec)?;
    let generated_b = synth_generated(&base, ArtifactFamily::B, &patches, spec)?;
    Ok(SynthSample {
        base,
        artifact_patches: patches,
        generated_a,
        generated_b,
    })
}

/// Quantizes a `[0, 1]` tensor to the 8-bit image written to disk.
pub fn quantize(t: &Tensor) -> RgbImage {
    tensor::to_rgb(t.view())
}

/// Artifact locations per generated image, written next to the manifest.
pub type ArtifactIndex = BTreeMap<String, Vec<usize>>;

const STREAM_TRAIN_REAL: u64 = 1;
const STREAM_TRAIN_GEN: u64 = 2;
const STREAM_TEST_REAL: u64 = 3;
const STREAM_TEST_GEN: u64 = 4;

/// Writes the synthetic dataset under `out_dir` (`manifest.json`,
/// `artifacts.json`, `images/`). Training holds real + generated-A; the test
/// split holds subsets `A` and `B`, each with its own real images. Generated
/// test images of both families share bases index by index.
pub fn synth_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut records = Vec::new();
    let mut artifacts = ArtifactIndex::new();
    let write = |rel: String, img: &Tensor| -> Result<PathBuf> {
        let path = out_dir.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        quantize(img).save(&path)?;
        Ok(PathBuf::from(rel))
    };

    let train_real = spec.train_count / 2;
    let train_gen = spec.train_count - train_real;
    for i in 0..train_real {
        let s = synth_sample(spec, STREAM_TRAIN_REAL, i as u64)?;
        let path = write(format!("images/train/real/{i:05}.png"), &s.base)?;
        records.push(rec(path, Label::Real, "A", Split::Train));
    }
    for i in 0..train_gen {
        let s = synth_sample(spec, STREAM_TRAIN_GEN, i as u64)?;
        let path = write(format!("images/train/A/{i:05}.png"), &s.generated_a)?;
        artifacts.insert(path.display().to_string(), s.artifact_patches.clone());
        records.push(rec(path, Label::Generated, "A", Split::Train));
    }

    let test_real = spec.test_count_per_subset / 2;
    let test_gen = spec.test_count_per_subset - test_real;
    for (k, family) in [ArtifactFamily::A, ArtifactFamily::B].into_iter().enumerate() {
        let name = family.name();
        for i in 0..test_real {
            let idx = (k * test_real + i) as u64;
            let s = synth_sample(spec, STREAM_TEST_REAL, idx)?;
            let path = write(format!("images/test/{name}/real/{i:05}.png"), &s.base)?;
            records.push(rec(path, Label::Real, name, Split::Test));
        }
    }
    for i in 0..test_gen {
        let s = synth_sample(spec, STREAM_TEST_GEN, i as u64)?;
        for (family, img) in [
            (ArtifactFamily::A, &s.generated_a),
            (ArtifactFamily::B, &s.generated_b),
        ] {
            let name = family.name();
            let path = write(format!("images/test/{name}/generated/{i:05}.png"), img)?;
            artifacts.insert(path.display().to_string(), s.artifact_patches.clone());
            records.push(rec(path, Label::Generated, name, Split::Test));
        }
    }

    let manifest = DatasetManifest::new(records, out_dir)?;
    manifest.save(&out_dir.join("manifest.json"))?;
    std::fs::write(
        out_dir.join("artifacts.json"),
        serde_json::to_string_pretty(&artifacts)?,
    )?;
    Ok(manifest)
}

fn rec(path: PathBuf, label: Label, subset: &str, split: Split) -> ImageRecord {
    ImageRecord {
        path,
        label,
        subset: subset.to_string(),
        split,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texmask::local_texture_diversity;

    fn gradient_image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn eval_identity_and_center_window() {
        let img = gradient_image(224, 224);
        let p = preprocess_eval(&img, 224, &Normalization::default()).unwrap();
        assert_eq!(p.tensor, tensor::from_rgb(&img));
        let big = gradient_image(448, 448);
        let p = preprocess_eval(&big, 224, &Normalization::default()).unwrap();
        assert_eq!(p.crop_origin, (112, 112));
        assert_eq!(p.tensor[[0, 0, 0]], 112.0 / 255.0);
        let again = preprocess_eval(&big, 224, &Normalization::default()).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn train_identity_without_augmentation() {
        let img = gradient_image(224, 224);
        let cfg = AugmentationConfig {
            flip_prob: 0.0,
            rotation: Rotation::None,
            ..Default::default()
        };
        let p = preprocess_train(&img, &cfg, &mut seed::rng(3)).unwrap();
        assert_eq!(p.tensor, tensor::from_rgb(&img));
    }

    #[test]
    fn tiling_restores_crop_precondition() {
        let img = gradient_image(300, 100);
        let tiled = tile_expand(&img, 224);
        assert!(tiled.height() >= 224 && tiled.width() >= 224);
        let cfg = AugmentationConfig::default();
        let p = preprocess_train(&img, &cfg, &mut seed::rng(1)).unwrap();
        assert_eq!(p.tensor.dim(), (3, 224, 224));
        let no_tile = AugmentationConfig {
            tiling_expand: false,
            ..Default::default()
        };
        assert!(preprocess_train(&img, &no_tile, &mut seed::rng(1)).is_err());
    }

    #[test]
    fn train_is_deterministic_per_seed() {
        let img = gradient_image(256, 240);
        let cfg = AugmentationConfig::default();
        let a = preprocess_train(&img, &cfg, &mut seed::rng(9)).unwrap();
        let b = preprocess_train(&img, &cfg, &mut seed::rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rotation_is_a_quarter_turn() {
        let t = Array3::from_shape_vec((1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = rotate_quarter(&t);
        assert_eq!(r.iter().copied().collect::<Vec<_>>(), vec![2.0, 4.0, 1.0, 3.0]);
        let mut full = t.clone();
        for _ in 0..4 {
            full = rotate_quarter(&full);
        }
        assert_eq!(full, t);
    }

    #[test]
    fn manifest_validation() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, body: &str| {
            let p = dir.path().join(name);
            std::fs::write(&p, body).unwrap();
            p
        };
        let empty = write("empty.json", r#"{"schema_version":1,"records":[],"subsets":[]}"#);
        assert!(matches!(load_manifest(&empty), Err(Error::Schema(_))));
        let bad_label = write(
            "bad.json",
            r#"{"schema_version":1,"subsets":["s1"],"records":[{"path":"a.png","label":"fake","subset":"s1","split":"test"}]}"#,
        );
        assert!(matches!(load_manifest(&bad_label), Err(Error::Schema(_))));
        let dangling = write(
            "dangling.json",
            r#"{"schema_version":1,"subsets":["s1"],"records":[{"path":"nope.png","label":"real","subset":"s1","split":"test"}]}"#,
        );
        assert!(matches!(load_manifest(&dangling), Err(Error::MissingFile(_))));
        assert!(matches!(
            load_manifest(&dir.path().join("absent.json")),
            Err(Error::MissingFile(_))
        ));

        let img = gradient_image(4, 4);
        for n in ["a", "b", "c", "d"] {
            img.save(dir.path().join(format!("{n}.png"))).unwrap();
        }
        let ok = write(
            "ok.json",
            r#"{"schema_version":1,"subsets":["s1","s2"],"records":[
                {"path":"a.png","label":"real","subset":"s1","split":"test"},
                {"path":"b.png","label":"generated","subset":"s1","split":"test"},
                {"path":"c.png","label":"real","subset":"s2","split":"test"},
                {"path":"d.png","label":"generated","subset":"s2","split":"train"}]}"#,
        );
        let m = load_manifest(&ok).unwrap();
        assert_eq!(m.subsets, vec!["s1", "s2"]);
        assert_eq!(m.class_balance["s1"], 0.5);
        let dup = write(
            "dup.json",
            r#"{"schema_version":1,"subsets":["s1"],"records":[
                {"path":"a.png","label":"real","subset":"s1","split":"test"},
                {"path":"a.png","label":"generated","subset":"s1","split":"test"}]}"#,
        );
        assert!(matches!(load_manifest(&dup), Err(Error::Schema(_))));
    }

    #[test]
    fn zero_amplitude_generated_equals_real() {
        let spec = SynthSpec {
            artifact_amplitude: 0.0,
            ..Default::default()
        };
        let s = synth_sample(&spec, 0, 0).unwrap();
        assert_eq!(s.generated_a, s.base);
        assert_eq!(s.generated_b, s.base);
    }

    #[test]
    fn families_differ_only_inside_artifact_patches() {
        let spec = SynthSpec::default();
        for i in 0..5 {
            let s = synth_sample(&spec, 4, i).unwrap();
            let grid = PatchGrid::new(32, 32, 4).unwrap();
            let mut inside = Array2::from_elem((32, 32), false);
            for &k in &s.artifact_patches {
                let (y, x) = grid.patch_origin(k);
                inside.slice_mut(ndarray::s![y..y + 4, x..x + 4]).fill(true);
            }
            let a = quantize(&s.generated_a);
            let b = quantize(&s.generated_b);
            let mut changed_inside = 0;
            for (x, y, pa) in a.enumerate_pixels() {
                let differs = pa != b.get_pixel(x, y);
                if inside[[y as usize, x as usize]] {
                    changed_inside += usize::from(differs);
                } else {
                    assert!(!differs, "pixel ({x},{y}) outside the artifact patches changed");
                }
            }
            assert!(changed_inside > 0);
        }
    }

    #[test]
    fn artifact_patches_raise_texture_diversity() {
        let spec = SynthSpec::default();
        let (mut art, mut rest) = (Vec::new(), Vec::new());
        for i in 0..10 {
            let s = synth_sample(&spec, 2, i).unwrap();
            let gray = s.generated_a.mean_axis(Axis(0)).unwrap();
            let grid = PatchGrid::new(32, 32, 4).unwrap();
            for k in 0..grid.patch_count() {
                let (y, x) = grid.patch_origin(k);
                // brute-force pair enumeration
                let patch = gray.slice(ndarray::s![y..y + 4, x..x + 4]);
                let mut d = 0.0;
                for (a, pa) in patch.indexed_iter() {
                    for (b, pb) in patch.indexed_iter() {
                        let (dy, dx) = (b.0 as isize - a.0 as isize, b.1 as isize - a.1 as isize);
                        if (dy, dx) == (0, 1) || (dy, dx) == (1, 0) || (dy, dx) == (1, 1) || (dy, dx) == (1, -1) {
                            d += (pa - pb).abs();
                        }
                    }
                }
                assert!((d - local_texture_diversity(patch).unwrap()).abs() < 1e-9);
                if s.artifact_patches.contains(&k) {
                    art.push(d);
                } else {
                    rest.push(d);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&art) > mean(&rest));
    }

    #[test]
    fn synth_dataset_layout_and_balance() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            train_count: 6,
            test_count_per_subset: 4,
            ..Default::default()
        };
        let m = synth_dataset(&spec, dir.path()).unwrap();
        assert_eq!(m.records_in(Split::Train).count(), 6);
        assert_eq!(m.records_in(Split::Test).count(), 8);
        assert_eq!(
            m.records_in(Split::Train).filter(|r| r.label == Label::Real).count(),
            3
        );
        let loaded = load_manifest(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.records, m.records);
        assert_eq!(loaded.subsets, vec!["A", "B"]);
        let subsets = loaded.test_subsets().unwrap();
        assert_eq!(subsets.len(), 2);
        assert!(subsets.iter().all(|(_, rows)| rows.len() == 4));
    }
}
