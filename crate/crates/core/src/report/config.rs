//! Run configuration: a single JSON document with one section per stage,
//! dotted-path overrides, and the resolved form written to `run.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{AugmentationConfig, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::perturb::PerturbationKind;
use crate::model::EncoderSpec;
use crate::texmask::{MaskConfig, MaskStrategy, RatioInterval, TamVariant};
use crate::trainer::{CheckpointSelection, TrainConfig, TrainMode};

use super::embed::EmbedMethod;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    /// Single input image for `mask`, `cam` and image-level `perturb`.
    pub image: Option<PathBuf>,
    pub synth: SynthSpec,
    /// Rows kept per (subset, label) group by `embed`.
    pub samples_per_group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub encoder: EncoderSpec,
    pub checkpoint: Option<PathBuf>,
    /// Checkpoints compared by `matrix`, one row each.
    pub checkpoints: Vec<PathBuf>,
}

/// Training schedule; the masking policy lives in the `mask` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: TrainMode,
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay_step: usize,
    pub lr_decay_factor: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub augmentation: AugmentationConfig,
    pub eval_every: usize,
    pub checkpoint_selection: CheckpointSelection,
}

impl TrainSection {
    pub fn to_train_config(&self, mask: &MaskConfig) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            seed: self.seed,
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            lr_decay_step: self.lr_decay_step,
            lr_decay_factor: self.lr_decay_factor,
            betas: self.betas,
            eps: self.eps,
            mask: mask.clone(),
            augmentation: self.augmentation.clone(),
            eval_every: self.eval_every,
            checkpoint_selection: self.checkpoint_selection,
        }
    }

    pub fn from_train_config(c: &TrainConfig) -> Self {
        Self {
            mode: c.mode,
            seed: c.seed,
            batch_size: c.batch_size,
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            lr_decay_step: c.lr_decay_step,
            lr_decay_factor: c.lr_decay_factor,
            betas: c.betas,
            eps: c.eps,
            augmentation: c.augmentation.clone(),
            eval_every: c.eval_every,
            checkpoint_selection: c.checkpoint_selection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: f64,
    pub perturbations: Vec<PerturbationKind>,
    pub perturb_seed: u64,
    /// Externally produced score dump to evaluate instead of a checkpoint.
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Ratio,
    PatchSize,
    Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub embed_method: EmbedMethod,
    /// Precomputed feature dump for `embed`.
    pub features: Option<PathBuf>,
    pub sweep: SweepKind,
    pub ratio_intervals: Vec<RatioInterval>,
    pub patch_sizes: Vec<usize>,
    /// Strategy labels such as `cut_out` or `tam_high`.
    pub strategies: Vec<String>,
    pub sweep_seeds: Vec<u64>,
    /// Training logs drawn as accuracy-vs-step lines by `report`.
    pub logs: Vec<PathBuf>,
    /// Cross matrix JSON drawn as a heatmap by `report`.
    pub matrix: Option<PathBuf>,
    /// Training logs of runs with different training-set sizes.
    pub volume_logs: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Set in `run.json`; a config naming another command is rejected.
    pub command: Option<String>,
    pub data: DataSection,
    pub mask: MaskConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub report: ReportSection,
}

/// The nine ratio intervals of the ratio sweep.
pub fn standard_ratio_intervals() -> Vec<RatioInterval> {
    [
        (0.0, 0.2),
        (0.0, 0.4),
        (0.0, 0.6),
        (0.0, 0.8),
        (0.0, 1.0),
        (0.2, 0.4),
        (0.4, 0.6),
        (0.6, 0.8),
        (0.8, 1.0),
    ]
    .into_iter()
    .map(|(lo, hi)| RatioInterval::new(lo, hi).expect("valid interval"))
    .collect()
}

/// Strategy labels of the strategy ablation.
pub const STANDARD_STRATEGIES: [&str; 6] = ["cut_out", "grid_mask", "random_patch", "tam_low", "tam_both", "tam_high"];

/// `mask` with strategy and variant taken from a label like `tam_low`.
pub fn mask_for_label(label: &str, base: &MaskConfig) -> Result<MaskConfig> {
    let (strategy, variant) = match label {
        "tam_high" | "tam" => (MaskStrategy::Tam, TamVariant::High),
        "tam_low" => (MaskStrategy::Tam, TamVariant::Low),
        "tam_both" => (MaskStrategy::Tam, TamVariant::Both),
        other => (other.parse::<MaskStrategy>()?, TamVariant::High),
    };
    Ok(MaskConfig {
        strategy,
        variant,
        ..base.clone()
    })
}

/// Toy encoder used by the synthetic experiments.
pub fn desk_encoder() -> EncoderSpec {
    EncoderSpec {
        image_size: 32,
        channels: 3,
        token_patch_size: 8,
        depth: 2,
        heads: 2,
        width: 32,
        mlp_ratio: 2,
        output_dim: 32,
        frozen: false,
        freeze: Vec::new(),
    }
}

/// Masking policy of the synthetic experiments: TAM High on 4-pixel patches,
/// ratio in `[0.6, 0.8)`.
pub fn desk_mask() -> MaskConfig {
    MaskConfig::tam(TamVariant::High, 4, RatioInterval::new(0.6, 0.8).expect("valid"))
}

/// Training schedule of the synthetic experiments.
pub fn desk_train(mode: TrainMode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        learning_rate: 1e-3,
        eval_every: 200,
        mask: desk_mask(),
        augmentation: AugmentationConfig {
            crop_size: 32,
            ..AugmentationConfig::default()
        },
        ..TrainConfig::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = desk_train(TrainMode::Mpft, 3407);
        Self {
            schema_version: SCHEMA_VERSION,
            command: None,
            data: DataSection {
                manifest: None,
                image: None,
                synth: SynthSpec::default(),
                samples_per_group: 200,
            },
            mask: train.mask.clone(),
            model: ModelSection {
                encoder: desk_encoder(),
                checkpoint: None,
                checkpoints: Vec::new(),
            },
            train: TrainSection::from_train_config(&train),
            eval: EvalSection {
                threshold: 0.5,
                perturbations: vec![
                    PerturbationKind::Noise,
                    PerturbationKind::Blur,
                    PerturbationKind::Jpeg,
                    PerturbationKind::Crop,
                    PerturbationKind::Chain,
                ],
                perturb_seed: 3407,
                scores: None,
            },
            report: ReportSection {
                embed_method: EmbedMethod::Tsne,
                features: None,
                sweep: SweepKind::Ratio,
                ratio_intervals: standard_ratio_intervals(),
                patch_sizes: vec![2, 4, 8],
                strategies: STANDARD_STRATEGIES.iter().map(|s| s.to_string()).collect(),
                sweep_seeds: vec![3407],
                logs: Vec::new(),
                matrix: None,
                volume_logs: Vec::new(),
            },
        }
    }
}

/// Recursively overlays `patch` on `base`; keys absent from `base` are
/// rejected so typos never pass silently.
fn merge(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None => return Err(Error::Config(format!("unknown key {here}"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn set_path(root: &mut Value, dotted: &str, value: Value) -> Result<()> {
    let mut cur = root;
    for part in dotted.split('.') {
        cur = cur
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::Config(format!("unknown override {dotted}")))?;
    }
    *cur = value;
    Ok(())
}

/// Parses an override value as JSON, falling back to a plain string.
pub fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Defaults, then the optional config file, then the seed, then dotted
    /// overrides.
    pub fn resolve(file: Option<&Path>, seed: Option<u64>, overrides: &[(String, String)]) -> Result<Self> {
        let mut v = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            if !path.is_file() {
                return Err(Error::MissingFile(path.to_path_buf()));
            }
            let text = std::fs::read_to_string(path)?;
            let patch: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if !patch.is_object() {
                return Err(Error::Config("config must be a JSON object".into()));
            }
            merge(&mut v, patch, "")?;
        }
        if let Some(s) = seed {
            for p in ["train.seed", "data.synth.seed", "eval.perturb_seed"] {
                set_path(&mut v, p, Value::from(s))?;
            }
        }
        for (k, raw) in overrides {
            set_path(&mut v, k, parse_override_value(raw))?;
        }
        let cfg: Self = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate().map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.mask.validate()?;
        self.model.encoder.validate()?;
        self.data.synth.validate()?;
        self.train_config().validate()?;
        if self.model.encoder.image_size != self.train.augmentation.crop_size {
            return Err(Error::Config(format!(
                "model.encoder.image_size {} differs from train.augmentation.crop_size {}",
                self.model.encoder.image_size, self.train.augmentation.crop_size
            )));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::Config("eval.threshold must lie in [0, 1]".into()));
        }
        for s in &self.report.strategies {
            mask_for_label(s, &self.mask).map_err(|_| Error::Config(format!("unknown strategy label {s}")))?;
        }
        if self.report.sweep_seeds.is_empty() {
            return Err(Error::Config("report.sweep_seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.to_train_config(&self.mask)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
