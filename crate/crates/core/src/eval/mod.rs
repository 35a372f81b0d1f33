//! Evaluation of trained detectors: per-subset accuracy and AP, cross
//! train/test matrices, robustness under perturbations and score dumps.

pub mod metrics;
pub mod perturb;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_rgb, preprocess_eval, DatasetManifest, Label};
use crate::error::{Error, Result};
use crate::model::{classify, ClassifierHead, Encoder, ToyVit};
use crate::seed;
use crate::tensor::{Normalization, Tensor};
use metrics::{accuracy, average_precision, ScoredSet, DEFAULT_THRESHOLD};
use perturb::{perturb, PerturbationKind, PerturbationSpec};

/// An encoder plus a binary head. The head reads the pooled feature.
#[derive(Clone, Copy)]
pub struct Detector<'a> {
    pub encoder: &'a dyn Encoder,
    pub head: &'a ClassifierHead,
}

impl<'a> Detector<'a> {
    pub fn new(encoder: &'a dyn Encoder, head: &'a ClassifierHead) -> Result<Self> {
        if head.weights.len() != encoder.output_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("head of width {}", encoder.output_dim()),
                actual: format!("{}", head.weights.len()),
            });
        }
        Ok(Self { encoder, head })
    }

    pub fn from_model(model: &'a ToyVit) -> Self {
        Self {
            encoder: model,
            head: &model.params.head,
        }
    }

    /// Probability that a normalized tensor is generated.
    pub fn score(&self, x: &Tensor) -> Result<f64> {
        classify(self.head, &self.encoder.encode(x)?.feature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub crop_size: usize,
    pub normalization: Normalization,
    pub threshold: f64,
    /// Applied to every decoded image before cropping.
    pub perturbation: Option<PerturbationSpec>,
}

impl EvalOptions {
    pub fn new(crop_size: usize) -> Self {
        Self {
            crop_size,
            normalization: Normalization::default(),
            threshold: DEFAULT_THRESHOLD,
            perturbation: None,
        }
    }
}

/// One line of a score dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub path: PathBuf,
    pub subset: String,
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub subset: String,
    pub count: usize,
    pub acc: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detector: String,
    pub subsets: Vec<SubsetMetrics>,
    pub avg_acc: f64,
    pub avg_ap: f64,
    pub threshold: f64,
    pub perturbation: Option<PerturbationSpec>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl EvalReport {
    pub fn subset(&self, name: &str) -> Option<&SubsetMetrics> {
        self.subsets.iter().find(|s| s.subset == name)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Scores every test image of `manifests`. Subset names must be unique
/// across manifests.
pub fn score_manifests(detector: Detector<'_>, manifests: &[&DatasetManifest], opts: &EvalOptions) -> Result<Vec<ScoreRow>> {
    if manifests.is_empty() {
        return Err(Error::Empty("manifest list"));
    }
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    let mut index = 0u64;
    for manifest in manifests {
        for (subset, records) in manifest.test_subsets()? {
            if !seen.insert(subset.clone()) {
                return Err(Error::InvalidInput(format!("subset {subset} appears in more than one manifest")));
            }
            for r in records {
                let mut img = load_rgb(&manifest.resolve(&r.path))?;
                if let Some(spec) = &opts.perturbation {
                    let mut rng = seed::derived_rng(spec.seed, &[index]);
                    img = perturb(&img, spec, &mut rng)?.0;
                }
                index += 1;
                let pre = preprocess_eval(&img, opts.crop_size, &opts.normalization)?;
                let x = opts.normalization.apply(&pre.tensor)?;
                rows.push(ScoreRow {
                    path: r.path.clone(),
                    subset: subset.clone(),
                    label: r.label,
                    score: detector.score(&x)?,
                });
            }
        }
    }
    Ok(rows)
}

/// Metrics from score rows, so detectors scored elsewhere go through the
/// same computation.
pub fn report_from_scores(detector: &str, rows: &[ScoreRow], threshold: f64) -> Result<EvalReport> {
    let mut grouped: BTreeMap<&str, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let e = grouped.entry(&r.subset).or_insert_with(|| {
            order.push(r.subset.clone());
            (Vec::new(), Vec::new())
        });
        e.0.push(r.score);
        e.1.push(r.label.target());
    }
    if order.is_empty() {
        return Err(Error::Empty("score rows"));
    }
    let mut subsets = Vec::new();
    for name in order {
        let (scores, labels) = grouped.remove(name.as_str()).expect("grouped");
        let set = ScoredSet::new(name.clone(), scores, labels)?;
        subsets.push(SubsetMetrics {
            count: set.len(),
            acc: accuracy(&set, threshold)?,
            ap: average_precision(&set)?,
            subset: name,
        });
    }
    let n = subsets.len() as f64;
    Ok(EvalReport {
        detector: detector.to_string(),
        avg_acc: subsets.iter().map(|s| s.acc).sum::<f64>() / n,
        avg_ap: subsets.iter().map(|s| s.ap).sum::<f64>() / n,
        subsets,
        threshold,
        perturbation: None,
        metadata: BTreeMap::new(),
    })
}

pub fn evaluate(detector: Detector<'_>, manifests: &[&DatasetManifest], opts: &EvalOptions) -> Result<(EvalReport, Vec<ScoreRow>)> {
    let rows = score_manifests(detector, manifests, opts)?;
    let mut report = report_from_scores(&detector.encoder.id(), &rows, opts.threshold)?;
    report.perturbation = opts.perturbation.clone();
    report.metadata.insert("crop_size".into(), opts.crop_size.into());
    report.metadata.insert("image_count".into(), rows.len().into());
    Ok((report, rows))
}

pub fn write_scores_csv(rows: &[ScoreRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// One table row per method: `method, <subset>_acc, <subset>_ap, ..., avg_acc, avg_ap`.
pub fn write_table_csv(rows: &[(String, EvalReport)], path: &Path) -> Result<()> {
    let first = rows.first().ok_or(Error::Empty("table rows"))?;
    let subsets: Vec<&str> = first.1.subsets.iter().map(|s| s.subset.as_str()).collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method".to_string()];
    for s in &subsets {
        header.push(format!("{s}_acc"));
        header.push(format!("{s}_ap"));
    }
    header.extend(["avg_acc".into(), "avg_ap".into()]);
    w.write_record(&header)?;
    for (method, rep) in rows {
        let mut rec = vec![method.clone()];
        for s in &subsets {
            let m = rep
                .subset(s)
                .ok_or_else(|| Error::InvalidInput(format!("row {method} lacks subset {s}")))?;
            rec.push(pct(m.acc));
            rec.push(pct(m.ap));
        }
        rec.push(pct(rep.avg_acc));
        rec.push(pct(rep.avg_ap));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Accuracy of every detector (rows, named by training subset) on every
/// test subset (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossMatrix {
    pub train_subsets: Vec<String>,
    pub test_subsets: Vec<String>,
    pub acc: Vec<Vec<f64>>,
    pub row_avg: Vec<f64>,
}

impl CrossMatrix {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["train".to_string()];
        header.extend(self.test_subsets.iter().cloned());
        header.push("avg".into());
        w.write_record(&header)?;
        for (i, name) in self.train_subsets.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(self.acc[i].iter().map(|&v| pct(v)));
            rec.push(pct(self.row_avg[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn cross_matrix(detectors: &[(String, Detector<'_>)], manifests: &[&DatasetManifest], opts: &EvalOptions) -> Result<CrossMatrix> {
    if detectors.is_empty() {
        return Err(Error::Empty("detector list"));
    }
    let mut acc = Vec::new();
    let mut test_subsets: Option<Vec<String>> = None;
    for (_, d) in detectors {
        let (rep, _) = evaluate(*d, manifests, opts)?;
        test_subsets.get_or_insert_with(|| rep.subsets.iter().map(|s| s.subset.clone()).collect());
        acc.push(rep.subsets.iter().map(|s| s.acc).collect::<Vec<_>>());
    }
    let row_avg = acc.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    Ok(CrossMatrix {
        train_subsets: detectors.iter().map(|(n, _)| n.clone()).collect(),
        test_subsets: test_subsets.unwrap_or_default(),
        acc,
        row_avg,
    })
}

/// Average metrics under one perturbation and their drop from clean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub perturbation: String,
    pub avg_acc: f64,
    pub avg_ap: f64,
    pub delta_acc: f64,
    pub delta_ap: f64,
}

impl RobustnessRow {
    pub fn acc_cell(&self) -> String {
        format_with_delta(self.avg_acc, self.delta_acc)
    }

    pub fn ap_cell(&self) -> String {
        format_with_delta(self.avg_ap, self.delta_ap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub clean: EvalReport,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["perturbation", "avg_acc", "avg_ap"])?;
        w.write_record(["none".to_string(), pct(self.clean.avg_acc), pct(self.clean.avg_ap)])?;
        for r in &self.rows {
            w.write_record([r.perturbation.clone(), r.acc_cell(), r.ap_cell()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Percentage with the change from clean, e.g. `81.1 (17.1↓)`. `delta` is
/// clean minus perturbed.
pub fn format_with_delta(value: f64, delta: f64) -> String {
    let d = 100.0 * delta;
    let arrow = if d >= 0.0 { '↓' } else { '↑' };
    format!("{:.1} ({:.1}{arrow})", 100.0 * value, d.abs())
}

/// Clean evaluation plus one row per perturbation in `kinds`.
pub fn robustness_report(
    detector: Detector<'_>,
    manifests: &[&DatasetManifest],
    opts: &EvalOptions,
    kinds: &[PerturbationKind],
    perturb_seed: u64,
) -> Result<RobustnessReport> {
    let clean_opts = EvalOptions {
        perturbation: None,
        ..opts.clone()
    };
    let (clean, _) = evaluate(detector, manifests, &clean_opts)?;
    let mut rows = Vec::new();
    for &kind in kinds {
        let o = EvalOptions {
            perturbation: Some(PerturbationSpec::new(kind, perturb_seed)),
            ..opts.clone()
        };
        let (rep, _) = evaluate(detector, manifests, &o)?;
        rows.push(RobustnessRow {
            perturbation: kind.name().to_string(),
            avg_acc: rep.avg_acc,
            avg_ap: rep.avg_ap,
            delta_acc: clean.avg_acc - rep.avg_acc,
            delta_ap: clean.avg_ap - rep.avg_ap,
        });
    }
    Ok(RobustnessReport { clean, rows })
}
