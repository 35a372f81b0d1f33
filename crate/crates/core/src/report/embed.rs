//! Feature export and 2-D embeddings (exact t-SNE, PCA) with silhouette
//! scores.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_rgb, preprocess_eval, DatasetManifest, Label};
use crate::error::{Error, Result};
use crate::model::Encoder;
use crate::seed;
use crate::tensor::Normalization;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub path: PathBuf,
    pub subset: String,
    pub label: Label,
    pub feature: Vec<f64>,
}

impl FeatureRow {
    /// Scatter group: all real images share one group, generated images
    /// are grouped by subset.
    pub fn group(&self) -> String {
        match self.label {
            Label::Real => "real".into(),
            Label::Generated => self.subset.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDump {
    pub encoder_id: String,
    pub dim: usize,
    pub rows: Vec<FeatureRow>,
}

impl FeatureDump {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.rows.iter().find(|r| r.feature.len() != self.dim) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} feature dims", self.dim),
                actual: format!("{} for {}", r.feature.len(), r.path.display()),
            });
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let d: Self = serde_json::from_slice(&std::fs::read(path)?).map_err(|e| Error::Schema(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }

    /// `path, subset, label, f0, f1, ...`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["path".to_string(), "subset".into(), "label".into()];
        header.extend((0..self.dim).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.path.display().to_string(), r.subset.clone(), r.label.to_string()];
            rec.extend(r.feature.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Keeps at most `cap` rows per (subset, label) group, in order.
    pub fn capped(&self, cap: usize) -> Self {
        let mut counts: BTreeMap<(String, Label), usize> = BTreeMap::new();
        let rows = self
            .rows
            .iter()
            .filter(|r| {
                let c = counts.entry((r.subset.clone(), r.label)).or_default();
                *c += 1;
                *c <= cap
            })
            .cloned()
            .collect();
        Self {
            encoder_id: self.encoder_id.clone(),
            dim: self.dim,
            rows,
        }
    }
}

/// Pooled encoder features for every record of `manifest`, center-cropped
/// and unmasked.
pub fn export_features(
    encoder: &dyn Encoder,
    manifest: &DatasetManifest,
    norm: &Normalization,
) -> Result<FeatureDump> {
    let crop = encoder.image_size();
    let mut rows = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let img = load_rgb(&manifest.resolve(&r.path))?;
        let pre = preprocess_eval(&img, crop, norm)?;
        let out = encoder.encode(&norm.apply(&pre.tensor)?)?;
        rows.push(FeatureRow {
            path: r.path.clone(),
            subset: r.subset.clone(),
            label: r.label,
            feature: out.feature.to_vec(),
        });
    }
    Ok(FeatureDump {
        encoder_id: encoder.id(),
        dim: encoder.output_dim(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMethod {
    #[default]
    Tsne,
    Pca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    /// Method actually used; tiny inputs fall back from t-SNE to PCA.
    pub method: EmbedMethod,
    pub perplexity: Option<f64>,
    pub coords: Vec<[f64; 2]>,
}

fn check_rows(points: &[Vec<f64>]) -> Result<usize> {
    if points.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "embedding needs at least 3 rows, got {}",
            points.len()
        )));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::ShapeMismatch {
            expected: format!("{d} columns in every row"),
            actual: "ragged rows".into(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature".into()));
    }
    Ok(d)
}

/// Projection on the two leading principal axes.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let d = check_rows(points)?;
    let n = points.len();
    let mut x = DMatrix::from_fn(n, d, |i, j| points[i][j]);
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let svd = x.clone().svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::InvalidInput("svd failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut axes = Vec::new();
    for &k in order.iter().take(2) {
        let mut v: Vec<f64> = vt.row(k).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
        axes.push(v);
    }
    while axes.len() < 2 {
        axes.push(vec![0.0; d]);
    }
    Ok((0..n)
        .map(|i| {
            let row = x.row(i);
            let p = |a: &[f64]| row.iter().zip(a).map(|(r, c)| r * c).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect())
}

fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional affinities whose entropy matches `ln(perplexity)`.
fn affinities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
        let row = &dist[i * n..(i + 1) * n];
        let min_d = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
        for _ in 0..100 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let w = (-(row[j] - min_d) * beta).exp();
                p[i * n + j] = w;
                sum += w;
                weighted += w * (row[j] - min_d);
            }
            let entropy = sum.ln() + beta * weighted / sum;
            for j in 0..n {
                p[i * n + j] /= sum;
            }
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    sym
}

const TSNE_ITERS: usize = 1000;
const EXAGGERATION_ITERS: usize = 250;

/// Exact t-SNE with perplexity `min(30, rows/4)`; fewer than 8 rows use PCA.
pub fn tsne_2d(points: &[Vec<f64>], seed_value: u64) -> Result<Embedding> {
    check_rows(points)?;
    let n = points.len();
    let perplexity = (n as f64 / 4.0).min(30.0);
    if perplexity < 2.0 {
        return Ok(Embedding {
            method: EmbedMethod::Pca,
            perplexity: None,
            coords: pca_2d(points)?,
        });
    }
    let p = affinities(&squared_distances(points), n, perplexity);
    let mut rng = seed::rng(seed_value);
    let init = Normal::new(0.0, 1e-4).expect("valid");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let learning_rate = 200.0;
    let mut num = vec![0.0; n * n];
    for it in 0..TSNE_ITERS {
        let exaggeration = if it < EXAGGERATION_ITERS { 12.0 } else { 1.0 };
        let momentum = if it < EXAGGERATION_ITERS { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                z += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut g = [0.0f64; 2];
            for j in (0..n).filter(|&j| j != i) {
                let w = num[i * n + j];
                let m = (exaggeration * p[i * n + j] - w / z) * w;
                g[0] += 4.0 * m * (y[i][0] - y[j][0]);
                g[1] += 4.0 * m * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                gains[i][k] = if (g[k] > 0.0) != (velocity[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                velocity[i][k] = momentum * velocity[i][k] - learning_rate * gains[i][k] * g[k];
            }
        }
        for i in 0..n {
            y[i][0] += velocity[i][0];
            y[i][1] += velocity[i][1];
        }
        for k in 0..2 {
            let mean = y.iter().map(|c| c[k]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|c| c[k] -= mean);
        }
    }
    Ok(Embedding {
        method: EmbedMethod::Tsne,
        perplexity: Some(perplexity),
        coords: y,
    })
}

pub fn embed_2d(points: &[Vec<f64>], method: EmbedMethod, seed_value: u64) -> Result<Embedding> {
    match method {
        EmbedMethod::Tsne => tsne_2d(points, seed_value),
        EmbedMethod::Pca => Ok(Embedding {
            method: EmbedMethod::Pca,
            perplexity: None,
            coords: pca_2d(points)?,
        }),
    }
}

/// Mean silhouette coefficient under Euclidean distance. Points in
/// singleton clusters contribute 0.
pub fn silhouette(points: &[Vec<f64>], clusters: &[usize]) -> Result<f64> {
    if points.len() != clusters.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} cluster ids", points.len()),
            actual: clusters.len().to_string(),
        });
    }
    let ids: std::collections::BTreeSet<usize> = clusters.iter().copied().collect();
    if ids.len() < 2 {
        return Err(Error::InvalidInput("silhouette needs at least two clusters".into()));
    }
    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for j in (0..n).filter(|&j| j != i) {
            let e = sums.entry(clusters[j]).or_default();
            e.0 += dist(&points[i], &points[j]);
            e.1 += 1;
        }
        let own = match sums.get(&clusters[i]) {
            Some(&(s, c)) if c > 0 => s / c as f64,
            _ => continue,
        };
        let other = sums
            .iter()
            .filter(|(k, _)| **k != clusters[i])
            .map(|(_, &(s, c))| s / c as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = own.max(other);
        if denom > 0.0 {
            total += (other - own) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Silhouette of real versus generated rows in feature space.
pub fn real_vs_generated_silhouette(dump: &FeatureDump) -> Result<f64> {
    let points: Vec<Vec<f64>> = dump.rows.iter().map(|r| r.feature.clone()).collect();
    let clusters: Vec<usize> = dump.rows.iter().map(|r| usize::from(r.label.target())).collect();
    silhouette(&points, &clusters)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_keeps_collinear_points_collinear() {
        let pts = vec![vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0], vec![3.0, 6.0, 9.0]];
        let c = pca_2d(&pts).unwrap();
        let cross = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[1][1] - c[0][1]) * (c[2][0] - c[0][0]);
        assert!(cross.abs() < 1e-9);
    }

    #[test]
    fn too_few_rows() {
        assert!(pca_2d(&[vec![1.0], vec![2.0]]).is_err());
        assert!(tsne_2d(&[vec![1.0], vec![2.0]], 0).is_err());
    }

    #[test]
    fn tiny_sets_fall_back_to_pca() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
        assert_eq!(tsne_2d(&pts, 0).unwrap().method, EmbedMethod::Pca);
    }

    #[test]
    fn tsne_is_deterministic_and_separates_clusters() {
        let mut rng = seed::rng(9);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let c = if i < 20 { 0.0 } else { 5.0 };
                (0..4).map(|_| c + noise.sample(&mut rng)).collect()
            })
            .collect();
        let a = tsne_2d(&pts, 3).unwrap();
        let b = tsne_2d(&pts, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.perplexity, Some(10.0));
        let pts2: Vec<Vec<f64>> = a.coords.iter().map(|c| c.to_vec()).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        assert!(silhouette(&pts2, &labels).unwrap() > 0.8);
    }

    #[test]
    fn silhouette_hand_case() {
        // Two clusters on a line: {0, 1} and {4}.
        let pts = vec![vec![0.0], vec![1.0], vec![4.0]];
        let s = silhouette(&pts, &[0, 0, 1]).unwrap();
        // point 0: a=1, b=4 -> 0.75; point 1: a=1, b=3 -> 2/3; point 2 singleton -> 0
        assert!((s - (0.75 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!(silhouette(&pts, &[0, 0, 0]).is_err());
    }
}
