//! Ablation sweeps over masking ratio, patch size and strategy.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::model::EncoderSpec;
use crate::texmask::MaskConfig;
use crate::trainer::{fine_tune, SubsetScore, TrainConfig, TrainMode};

use super::config::{mask_for_label, RunConfig, SweepKind};

/// One masked fine-tuning setting averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub mask: MaskConfig,
    pub seeds: Vec<u64>,
    pub avg_acc: f64,
    pub avg_ap: f64,
    /// Mean accuracy over subsets absent from training.
    pub unseen_acc: Option<f64>,
    pub subsets: BTreeMap<String, SubsetScore>,
}

/// Labeled mask settings for the configured sweep.
pub fn sweep_settings(cfg: &RunConfig) -> Result<Vec<(String, MaskConfig)>> {
    let base = &cfg.mask;
    let rows: Vec<(String, MaskConfig)> = match cfg.report.sweep {
        SweepKind::Ratio => cfg
            .report
            .ratio_intervals
            .iter()
            .map(|r| {
                (
                    format!("[{}, {})", r.lo(), r.hi()),
                    MaskConfig {
                        ratio_interval: *r,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        SweepKind::PatchSize => cfg
            .report
            .patch_sizes
            .iter()
            .map(|&p| {
                (
                    format!("p={p}"),
                    MaskConfig {
                        patch_size: p,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        SweepKind::Strategy => cfg
            .report
            .strategies
            .iter()
            .map(|s| Ok((s.clone(), mask_for_label(s, base)?)))
            .collect::<Result<_>>()?,
    };
    if rows.is_empty() {
        return Err(Error::Config("sweep has no settings".into()));
    }
    for (_, m) in &rows {
        m.validate()?;
    }
    Ok(rows)
}

/// Trains one masked fine-tuning run per (setting, seed) and averages the
/// final epoch-end evaluation over seeds.
pub fn run_sweep(
    manifest: &DatasetManifest,
    encoder: &EncoderSpec,
    base: &TrainConfig,
    settings: &[(String, MaskConfig)],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if seeds.is_empty() {
        return Err(Error::Empty("sweep seeds"));
    }
    let mut out = Vec::with_capacity(settings.len());
    for (label, mask) in settings {
        let mut subsets: BTreeMap<String, SubsetScore> = BTreeMap::new();
        let (mut acc, mut ap, mut unseen, mut unseen_n) = (0.0, 0.0, 0.0, 0usize);
        for &seed in seeds {
            let cfg = TrainConfig {
                mode: TrainMode::Mpft,
                seed,
                mask: mask.clone(),
                ..base.clone()
            };
            let outcome = fine_tune(manifest, encoder, &cfg)?;
            let last = outcome
                .log
                .epoch_end_evals()
                .last()
                .ok_or(Error::Empty("epoch-end evaluations"))?
                .clone();
            acc += last.avg_acc;
            ap += last.avg_ap;
            if let Some(u) = last.unseen_acc {
                unseen += u;
                unseen_n += 1;
            }
            for (k, s) in last.subsets {
                let e = subsets.entry(k).or_insert(SubsetScore { acc: 0.0, ap: 0.0 });
                e.acc += s.acc;
                e.ap += s.ap;
            }
        }
        let n = seeds.len() as f64;
        for s in subsets.values_mut() {
            s.acc /= n;
            s.ap /= n;
        }
        out.push(SweepRow {
            label: label.clone(),
            mask: mask.clone(),
            seeds: seeds.to_vec(),
            avg_acc: acc / n,
            avg_ap: ap / n,
            unseen_acc: (unseen_n > 0).then(|| unseen / unseen_n as f64),
            subsets,
        });
    }
    Ok(out)
}

/// `setting, avg_acc, avg_ap, unseen_acc, <subset>_acc, <subset>_ap, ...`
/// in percent.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let first = rows.first().ok_or(Error::Empty("sweep rows"))?;
    let names: Vec<&String> = first.subsets.keys().collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["setting".to_string(), "avg_acc".into(), "avg_ap".into(), "unseen_acc".into()];
    for n in &names {
        header.push(format!("{n}_acc"));
        header.push(format!("{n}_ap"));
    }
    w.write_record(&header)?;
    let pct = |v: f64| format!("{:.1}", 100.0 * v);
    for r in rows {
        let mut rec = vec![
            r.label.clone(),
            pct(r.avg_acc),
            pct(r.avg_ap),
            r.unseen_acc.map(pct).unwrap_or_default(),
        ];
        for n in &names {
            let s = r.subsets.get(*n).ok_or_else(|| Error::InvalidInput(format!("row {} lacks subset {n}", r.label)))?;
            rec.push(pct(s.acc));
            rec.push(pct(s.ap));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
