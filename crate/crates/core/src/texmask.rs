//! Texture-aware patch masking and the baseline masking strategies it is
//! ablated against.
//!
//! An image is tiled into non-overlapping `p×p` patches (row-major, anchored at
//! the top-left corner; remainder rows and columns are never masked). Each
//! patch is scored by its local texture diversity, the sum of absolute
//! differences between horizontally, vertically, diagonally and
//! anti-diagonally adjacent grayscale pixels, and the top-ranked fraction of
//! patches is zeroed.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::GrayImage;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tiling of an image into non-overlapping square patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
    /// Pixel offset of patch 0 (always `(0, 0)` for this tiling).
    pub origin: (usize, usize),
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 || height < patch_size || width < patch_size {
            return Err(Error::ImageTooSmall {
                height,
                width,
                patch: patch_size,
            });
        }
        Ok(Self {
            patch_size,
            rows: height / patch_size,
            cols: width / patch_size,
            origin: (0, 0),
        })
    }

    pub fn patch_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Top-left pixel `(y, x)` of patch `k`.
    pub fn patch_origin(&self, k: usize) -> (usize, usize) {
        let (r, c) = (k / self.cols, k % self.cols);
        (
            self.origin.0 + r * self.patch_size,
            self.origin.1 + c * self.patch_size,
        )
    }
}

/// Texture diversity of every grid patch, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureDiversityMap(pub Vec<f64>);

impl TextureDiversityMap {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sum of absolute differences between all adjacent pixel pairs of a square
/// grayscale patch (horizontal, vertical, diagonal and anti-diagonal
/// neighbours).
pub fn local_texture_diversity(patch: ArrayView2<'_, f64>) -> Result<f64> {
    let (rows, cols) = patch.dim();
    if rows != cols {
        return Err(Error::ShapeMismatch {
            expected: "square patch".into(),
            actual: format!("{rows}x{cols}"),
        });
    }
    if rows < 2 {
        return Err(Error::DegeneratePatch(rows));
    }
    if !patch.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("patch contains non-finite values".into()));
    }
    let m = rows;
    let x = |i: usize, j: usize| patch[[i, j]];
    let mut horizontal = 0.0;
    for i in 0..m {
        for j in 0..m - 1 {
            horizontal += (x(i, j) - x(i, j + 1)).abs();
        }
    }
    let mut vertical = 0.0;
    for i in 0..m - 1 {
        for j in 0..m {
            vertical += (x(i, j) - x(i + 1, j)).abs();
        }
    }
    let mut diagonal = 0.0;
    let mut anti_diagonal = 0.0;
    for i in 0..m - 1 {
        for j in 0..m - 1 {
            diagonal += (x(i, j) - x(i + 1, j + 1)).abs();
            anti_diagonal += (x(i + 1, j) - x(i, j + 1)).abs();
        }
    }
    Ok(horizontal + vertical + diagonal + anti_diagonal)
}

/// Per-pixel channel mean of a `C×h×w` tensor.
pub fn to_grayscale(patch: &Tensor) -> Result<Array2<f64>> {
    if patch.dim().0 == 0 {
        return Err(Error::ShapeMismatch {
            expected: "at least one channel".into(),
            actual: "0 channels".into(),
        });
    }
    Ok(patch.mean_axis(Axis(0)).expect("non-empty channel axis"))
}

/// Scores every grid patch of `image` (`C×H×W`, `[0, 1]` scale).
pub fn texture_diversity_map(image: &Tensor, grid: &PatchGrid) -> Result<TextureDiversityMap> {
    let gray = to_grayscale(image)?;
    let p = grid.patch_size;
    (0..grid.patch_count())
        .map(|k| {
            let (y, x) = grid.patch_origin(k);
            local_texture_diversity(gray.slice(ndarray::s![y..y + p, x..x + p]))
        })
        .collect::<Result<Vec<_>>>()
        .map(TextureDiversityMap)
}

/// Patch indices by descending texture diversity; equal scores keep
/// ascending index order.
pub fn rank_patches(div: &TextureDiversityMap) -> Result<Vec<usize>> {
    if div.is_empty() {
        return Err(Error::Empty("texture diversity map"));
    }
    let mut idx: Vec<usize> = (0..div.len()).collect();
    idx.sort_by(|&a, &b| div.0[b].total_cmp(&div.0[a]));
    Ok(idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    Tam,
    CutOut,
    GridMask,
    RandomPatch,
}

impl MaskStrategy {
    pub const ALL: [MaskStrategy; 4] = [Self::Tam, Self::CutOut, Self::GridMask, Self::RandomPatch];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tam => "tam",
            Self::CutOut => "cut_out",
            Self::GridMask => "grid_mask",
            Self::RandomPatch => "random_patch",
        }
    }
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

/// Which end of the texture ranking TAM masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TamVariant {
    #[default]
    High,
    Low,
    Both,
}

impl TamVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::High => "high",
            Self::Low => "low",
            Self::Both => "both",
        }
    }
}

impl FromStr for TamVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::High, Self::Low, Self::Both]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown TAM variant {s}")))
    }
}

/// Half-open interval `[lo, hi)` the masking ratio is drawn from. `lo == hi`
/// pins the ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct RatioInterval {
    lo: f64,
    hi: f64,
}

impl RatioInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!(
                "masking ratio interval [{lo}, {hi}) must satisfy 0 <= lo <= hi <= 1"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn fixed(r: f64) -> Result<Self> {
        Self::new(r, r)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, r: f64) -> bool {
        if self.lo == self.hi {
            r == self.lo
        } else {
            self.lo <= r && r < self.hi
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

impl TryFrom<[f64; 2]> for RatioInterval {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Self::new(v[0], v[1])
    }
}

impl From<RatioInterval> for [f64; 2] {
    fn from(r: RatioInterval) -> Self {
        [r.lo, r.hi]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub strategy: MaskStrategy,
    #[serde(default)]
    pub variant: TamVariant,
    pub patch_size: usize,
    pub ratio_interval: RatioInterval,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            strategy: MaskStrategy::Tam,
            variant: TamVariant::High,
            patch_size: 14,
            ratio_interval: RatioInterval { lo: 0.6, hi: 0.8 },
        }
    }
}

impl MaskConfig {
    pub fn tam(variant: TamVariant, patch_size: usize, ratio_interval: RatioInterval) -> Self {
        Self {
            strategy: MaskStrategy::Tam,
            variant,
            patch_size,
            ratio_interval,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 2 {
            return Err(Error::Config(format!(
                "mask patch_size must be >= 2, got {}",
                self.patch_size
            )));
        }
        RatioInterval::new(self.ratio_interval.lo, self.ratio_interval.hi)?;
        Ok(())
    }

    /// Short label used in report rows, e.g. `tam_high` or `grid_mask`.
    pub fn label(&self) -> String {
        match self.strategy {
            MaskStrategy::Tam => format!("tam_{}", self.variant.name()),
            s => s.name().to_string(),
        }
    }
}

/// Per-pixel `{0, 1}` mask aligned to a patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: Array2<u8>,
    patch_grid: PatchGrid,
    masked_patch_indices: Vec<usize>,
    sampled_ratio: f64,
    strategy: MaskStrategy,
    variant: TamVariant,
    seed: Option<u64>,
}

impl BinaryMask {
    fn from_indices(
        height: usize,
        width: usize,
        patch_grid: PatchGrid,
        mut indices: Vec<usize>,
        sampled_ratio: f64,
        cfg: &MaskConfig,
    ) -> Self {
        indices.sort_unstable();
        indices.dedup();
        let mut grid = Array2::<u8>::ones((height, width));
        let p = patch_grid.patch_size;
        for &k in &indices {
            let (y, x) = patch_grid.patch_origin(k);
            grid.slice_mut(ndarray::s![y..y + p, x..x + p]).fill(0);
        }
        Self {
            grid,
            patch_grid,
            masked_patch_indices: indices,
            sampled_ratio,
            strategy: cfg.strategy,
            variant: cfg.variant,
            seed: None,
        }
    }

    /// Attaches the seed the mask was drawn with (recorded in the sidecar).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// `H×W` grid of zeros and ones.
    pub fn grid(&self) -> &Array2<u8> {
        &self.grid
    }

    pub fn patch_grid(&self) -> &PatchGrid {
        &self.patch_grid
    }

    pub fn masked_patch_indices(&self) -> &[usize] {
        &self.masked_patch_indices
    }

    pub fn sampled_ratio(&self) -> f64 {
        self.sampled_ratio
    }

    /// `n_mask / N`.
    pub fn realized_ratio(&self) -> f64 {
        self.masked_patch_indices.len() as f64 / self.patch_grid.patch_count() as f64
    }

    pub fn strategy(&self) -> MaskStrategy {
        self.strategy
    }

    pub fn variant(&self) -> TamVariant {
        self.variant
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dim()
    }

    pub fn to_gray_image(&self) -> GrayImage {
        let (h, w) = self.grid.dim();
        GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([self.grid[[y as usize, x as usize]] * 255])
        })
    }

    pub fn sidecar(&self) -> MaskSidecar {
        MaskSidecar {
            seed: self.seed,
            sampled_ratio: self.sampled_ratio,
            strategy: self.strategy,
            variant: self.variant,
            patch_size: self.patch_grid.patch_size,
            masked_patch_indices: self.masked_patch_indices.clone(),
        }
    }

    /// Writes `<stem>.png` (0/255, single channel) and `<stem>.json`.
    pub fn save(&self, png_path: &Path) -> Result<()> {
        self.to_gray_image().save(png_path)?;
        let sidecar = png_path.with_extension("json");
        std::fs::write(sidecar, serde_json::to_string_pretty(&self.sidecar())?)?;
        Ok(())
    }

    /// Rebuilds a mask from its PNG and sidecar.
    pub fn load(png_path: &Path) -> Result<Self> {
        let img = image::open(png_path)?.to_luma8();
        let side: MaskSidecar =
            serde_json::from_str(&std::fs::read_to_string(png_path.with_extension("json"))?)?;
        let (w, h) = img.dimensions();
        let patch_grid = PatchGrid::new(h as usize, w as usize, side.patch_size)?;
        let cfg = MaskConfig {
            strategy: side.strategy,
            variant: side.variant,
            patch_size: side.patch_size,
            ratio_interval: RatioInterval::fixed(side.sampled_ratio)?,
        };
        let mask = Self::from_indices(
            h as usize,
            w as usize,
            patch_grid,
            side.masked_patch_indices,
            side.sampled_ratio,
            &cfg,
        );
        let stored = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
            u8::from(img.get_pixel(x as u32, y as u32)[0] != 0)
        });
        if stored != mask.grid {
            return Err(Error::Schema("mask PNG disagrees with sidecar indices".into()));
        }
        Ok(Self { seed: side.seed, ..mask })
    }
}

/// JSON sidecar written next to every mask PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSidecar {
    pub seed: Option<u64>,
    pub sampled_ratio: f64,
    pub strategy: MaskStrategy,
    pub variant: TamVariant,
    pub patch_size: usize,
    pub masked_patch_indices: Vec<usize>,
}

fn budget(n: usize, r: f64) -> usize {
    ((n as f64 * r).floor() as usize).min(n)
}

/// Texture-aware mask for `image` (`C×H×W`, `[0, 1]` scale).
pub fn generate_tam_mask<R: Rng + ?Sized>(
    image: &Tensor,
    cfg: &MaskConfig,
    rng: &mut R,
) -> Result<BinaryMask> {
    if cfg.strategy != MaskStrategy::Tam {
        return Err(Error::UnknownStrategy(cfg.strategy.to_string()));
    }
    cfg.validate()?;
    let (_, h, w) = image.dim();
    let grid = PatchGrid::new(h, w, cfg.patch_size)?;
    let r = cfg.ratio_interval.sample(rng);
    let n_mask = budget(grid.patch_count(), r);
    let ranked = rank_patches(&texture_diversity_map(image, &grid)?)?;
    let selected = select_ranked(&ranked, n_mask, cfg.variant);
    Ok(BinaryMask::from_indices(h, w, grid, selected, r, cfg))
}

fn select_ranked(ranked: &[usize], n_mask: usize, variant: TamVariant) -> Vec<usize> {
    let n = ranked.len();
    match variant {
        TamVariant::High => ranked[..n_mask].to_vec(),
        TamVariant::Low => ranked[n - n_mask..].to_vec(),
        TamVariant::Both => {
            let high = n_mask.div_ceil(2);
            let low = n_mask / 2;
            let mut sel = ranked[..high].to_vec();
            sel.extend_from_slice(&ranked[n - low..]);
            sel
        }
    }
}

/// Baseline masks used in the strategy ablation. All are patch-aligned and
/// zero the same expected area as a TAM mask with the same ratio.
pub fn generate_baseline_mask<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    cfg: &MaskConfig,
    rng: &mut R,
) -> Result<BinaryMask> {
    cfg.validate()?;
    let grid = PatchGrid::new(height, width, cfg.patch_size)?;
    let n = grid.patch_count();
    let r = cfg.ratio_interval.sample(rng);
    let n_mask = budget(n, r);
    let indices = match cfg.strategy {
        MaskStrategy::RandomPatch => sample(rng, n, n_mask).into_vec(),
        MaskStrategy::CutOut => cutout_square(&grid, r, rng),
        MaskStrategy::GridMask => grid_lattice(&grid, n_mask, rng),
        MaskStrategy::Tam => return Err(Error::UnknownStrategy("tam".into())),
    };
    Ok(BinaryMask::from_indices(height, width, grid, indices, r, cfg))
}

/// One square block of whole patches with area closest to `r·N`, placed
/// uniformly on the grid.
fn cutout_square<R: Rng + ?Sized>(grid: &PatchGrid, r: f64, rng: &mut R) -> Vec<usize> {
    let side = ((grid.patch_count() as f64 * r).sqrt().round() as usize)
        .min(grid.rows)
        .min(grid.cols);
    if side == 0 {
        return Vec::new();
    }
    let top = rng.random_range(0..=grid.rows - side);
    let left = rng.random_range(0..=grid.cols - side);
    (top..top + side)
        .flat_map(|row| (left..left + side).map(move |col| row * grid.cols + col))
        .collect()
}

/// Regular lattice with period two patches and a random phase. Cells are
/// filled level by level (diagonal, then anti-diagonal partner), so the
/// pattern stays periodic at every density; a partially filled level picks
/// its units at random.
fn grid_lattice<R: Rng + ?Sized>(grid: &PatchGrid, n_mask: usize, rng: &mut R) -> Vec<usize> {
    const LEVELS: [(usize, usize); 4] = [(0, 0), (1, 1), (0, 1), (1, 0)];
    let dy = rng.random_range(0..2usize);
    let dx = rng.random_range(0..2usize);
    let mut out = Vec::with_capacity(n_mask);
    for &(ly, lx) in &LEVELS {
        let remaining = n_mask - out.len();
        if remaining == 0 {
            break;
        }
        let cells: Vec<usize> = (0..grid.rows)
            .flat_map(|row| (0..grid.cols).map(move |col| (row, col)))
            .filter(|&(row, col)| (row + dy) % 2 == ly && (col + dx) % 2 == lx)
            .map(|(row, col)| row * grid.cols + col)
            .collect();
        if cells.len() <= remaining {
            out.extend(cells);
        } else {
            out.extend(sample(rng, cells.len(), remaining).into_iter().map(|i| cells[i]));
        }
    }
    out
}

/// Dispatches on `cfg.strategy`.
pub fn generate_mask<R: Rng + ?Sized>(
    image: &Tensor,
    cfg: &MaskConfig,
    rng: &mut R,
) -> Result<BinaryMask> {
    match cfg.strategy {
        MaskStrategy::Tam => generate_tam_mask(image, cfg, rng),
        _ => {
            let (_, h, w) = image.dim();
            generate_baseline_mask(h, w, cfg, rng)
        }
    }
}

/// Element-wise product with the mask broadcast over channels.
pub fn apply_mask(x: &Tensor, mask: &BinaryMask) -> Result<Tensor> {
    let (c, h, w) = x.dim();
    if mask.dims() != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} mask", h, w),
            actual: format!("{}x{}", mask.dims().0, mask.dims().1),
        });
    }
    let mut out = x.clone();
    for ch in 0..c {
        let mut plane = out.index_axis_mut(Axis(0), ch);
        ndarray::Zip::from(&mut plane)
            .and(&mask.grid)
            .for_each(|v, &m| {
                if m == 0 {
                    *v = 0.0;
                }
            });
    }
    Ok(out)
}
