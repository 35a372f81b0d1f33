//! Masked fine-tuning loop.
//!
//! In MPFT mode every training image is masked with a fresh mask right
//! before the forward pass; evaluation always sees the unmasked image.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    load_rgb, preprocess_eval, preprocess_train, AugmentationConfig, DatasetManifest, Split,
};
use crate::error::{Error, Result};
use crate::eval::metrics::{accuracy, average_precision, ScoredSet, DEFAULT_THRESHOLD};
use crate::model::{EncoderSpec, ModelParams, ToyVit};
use crate::seed;
use crate::tensor::{Normalization, Tensor};
use crate::texmask::{apply_mask, generate_mask, BinaryMask, MaskConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Masked inputs, all parameters trainable.
    Mpft,
    /// Unmasked inputs, all parameters trainable.
    DirectFt,
    /// Unmasked inputs, encoder frozen.
    FrozenLinear,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mpft => "mpft",
            Self::DirectFt => "direct_ft",
            Self::FrozenLinear => "frozen_linear",
        }
    }

    pub fn masks_inputs(self) -> bool {
        self == Self::Mpft
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Mpft, Self::DirectFt, Self::FrozenLinear]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown training mode {s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointSelection {
    #[default]
    Final,
    BestUnseen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay_step: usize,
    pub lr_decay_factor: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub mask: MaskConfig,
    pub augmentation: AugmentationConfig,
    pub eval_every: usize,
    pub checkpoint_selection: CheckpointSelection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Mpft,
            seed: 3407,
            batch_size: 4,
            epochs: 10,
            learning_rate: 1e-5,
            lr_decay_step: 1,
            lr_decay_factor: 0.5,
            betas: (0.9, 0.999),
            eps: 1e-8,
            mask: MaskConfig::default(),
            augmentation: AugmentationConfig::default(),
            eval_every: 100,
            checkpoint_selection: CheckpointSelection::Final,
        }
    }
}

impl TrainConfig {
    /// Learning rate and masking ratio for UniversalFakeDetect-style runs.
    pub fn ufd_style() -> Self {
        let mut c = Self {
            learning_rate: 1e-6,
            ..Self::default()
        };
        c.mask.ratio_interval = crate::texmask::RatioInterval::new(0.0, 0.4).expect("valid");
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay_factor > 0.0) || self.lr_decay_step == 0 {
            return bad("learning rate schedule values must be positive");
        }
        let in_open = |b: f64| b > 0.0 && b < 1.0;
        if !in_open(self.betas.0) || !in_open(self.betas.1) {
            return bad("betas must lie in (0, 1)");
        }
        if !(self.eps > 0.0) || self.eval_every == 0 {
            return bad("eps and eval_every must be positive");
        }
        self.mask.validate()?;
        self.augmentation.validate()
    }
}

/// `learning_rate · factor^floor(epoch / decay_step)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = (epoch / cfg.lr_decay_step.max(1)) as i32;
    cfg.learning_rate * cfg.lr_decay_factor.powi(k)
}

/// Counts mask applications per phase.
#[derive(Debug, Default)]
pub struct MaskProbe {
    train: AtomicUsize,
    eval: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

impl MaskProbe {
    pub fn train_count(&self) -> usize {
        self.train.load(Ordering::Relaxed)
    }

    pub fn eval_count(&self) -> usize {
        self.eval.load(Ordering::Relaxed)
    }
}

/// Builds the tensor fed to the encoder: normalize the `[0, 1]` tensor, then
/// zero masked pixels in every channel.
pub fn model_input(
    tensor01: &Tensor,
    norm: &Normalization,
    mask: Option<&BinaryMask>,
    probe: &MaskProbe,
    phase: Phase,
) -> Result<Tensor> {
    let x = norm.apply(tensor01)?;
    match mask {
        None => Ok(x),
        Some(m) => {
            let counter = match phase {
                Phase::Train => &probe.train,
                Phase::Eval => &probe.eval,
            };
            counter.fetch_add(1, Ordering::Relaxed);
            apply_mask(&x, m)
        }
    }
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: ModelParams,
    v: ModelParams,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One Adam update of every trainable parameter.
pub fn adam_update(model: &mut ToyVit, state: &mut AdamState, grads: &ModelParams, lr: f64, cfg: &TrainConfig) {
    state.t += 1;
    let (b1, b2) = cfg.betas;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let mut g_flat = Vec::with_capacity(grads.parameter_count());
    grads.for_each(|_, v, _| g_flat.extend_from_slice(v));
    let mut trainable = Vec::new();
    model.params.for_each(|name, _, _| {
        trainable.push(!name.starts_with("encoder.") || model.spec.is_trainable(name))
    });
    let mut m_flat = Vec::with_capacity(g_flat.len());
    let mut i = 0;
    state.m.for_each_mut(|_, m| {
        for (mv, g) in m.iter_mut().zip(&g_flat[i..]) {
            *mv = b1 * *mv + (1.0 - b1) * g;
        }
        m_flat.extend_from_slice(m);
        i += m.len();
    });
    let mut v_flat = Vec::with_capacity(g_flat.len());
    i = 0;
    state.v.for_each_mut(|_, v| {
        for (vv, g) in v.iter_mut().zip(&g_flat[i..]) {
            *vv = b2 * *vv + (1.0 - b2) * g * g;
        }
        v_flat.extend_from_slice(v);
        i += v.len();
    });
    i = 0;
    let mut tensor = 0;
    model.params.for_each_mut(|_, p| {
        if trainable[tensor] {
            for (k, x) in p.iter_mut().enumerate() {
                let mh = m_flat[i + k] / c1;
                let vh = v_flat[i + k] / c2;
                *x -= lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        i += p.len();
        tensor += 1;
    });
}

/// A training image after augmentation, with the seeds that produced it.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub index: usize,
    pub tensor: Tensor,
    pub label: u8,
    pub mask_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub sampled_ratios: Vec<f64>,
}

/// Masks (in MPFT mode), runs forward/backward over the batch and applies
/// one Adam update.
pub fn train_step(
    model: &mut ToyVit,
    opt: &mut AdamState,
    batch: &[TrainItem],
    cfg: &TrainConfig,
    lr: f64,
    step: usize,
    probe: &MaskProbe,
) -> Result<StepOutcome> {
    let mut inputs = Vec::with_capacity(batch.len());
    let mut ratios = Vec::new();
    for item in batch {
        let mask = if cfg.mode.masks_inputs() {
            let mut rng = seed::rng(item.mask_seed);
            let m = generate_mask(&item.tensor, &cfg.mask, &mut rng)?.with_seed(item.mask_seed);
            ratios.push(m.sampled_ratio());
            Some(m)
        } else {
            None
        };
        inputs.push(model_input(
            &item.tensor,
            &cfg.augmentation.normalization,
            mask.as_ref(),
            probe,
            Phase::Train,
        )?);
    }
    let labels: Vec<u8> = batch.iter().map(|b| b.label).collect();
    let (loss, grads) = model.loss_and_grads(&inputs, &labels)?;
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            lr,
            batch: batch.iter().map(|b| b.index).collect(),
        });
    }
    adam_update(model, opt, &grads, lr, cfg);
    Ok(StepOutcome {
        loss,
        sampled_ratios: ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Mean sampled masking ratio over the batch (absent without masking).
    pub sampled_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub acc: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: usize,
    pub epoch: usize,
    pub epoch_end: bool,
    pub subsets: BTreeMap<String, SubsetScore>,
    pub avg_acc: f64,
    pub avg_ap: f64,
    /// Mean accuracy over subsets absent from the training split.
    pub unseen_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub mode: TrainMode,
    pub subsets: Vec<String>,
    pub seen_subsets: Vec<String>,
    pub steps: Vec<StepRow>,
    pub evals: Vec<EvalRow>,
    pub sampled_ratios: Vec<f64>,
    pub images_seen: usize,
    pub train_mask_applications: usize,
    pub eval_mask_applications: usize,
}

impl TrainingLog {
    pub fn lr_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.lr).collect()
    }

    pub fn epoch_end_evals(&self) -> impl Iterator<Item = &EvalRow> {
        self.evals.iter().filter(|e| e.epoch_end)
    }

    /// Mean and population standard deviation of per-subset accuracy over
    /// the last `n` epoch-end evaluations.
    pub fn last_epochs_stats(&self, subset: &str, n: usize) -> Option<(f64, f64)> {
        let rows: Vec<f64> = self
            .epoch_end_evals()
            .filter_map(|e| e.subsets.get(subset).map(|s| s.acc))
            .collect();
        if rows.is_empty() {
            return None;
        }
        let tail = &rows[rows.len().saturating_sub(n)..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let var = tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / tail.len() as f64;
        Some((mean, var.sqrt()))
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("log serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// CSV with one row per optimizer step.
    pub fn write_steps_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "epoch", "loss", "lr", "sampled_ratio"])?;
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                s.epoch.to_string(),
                format!("{:.10}", s.loss),
                format!("{:e}", s.lr),
                s.sampled_ratio.map(|r| format!("{r:.6}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Decoded evaluation images of one subset, already center-cropped.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub subset: String,
    pub tensors: Vec<Tensor>,
    pub labels: Vec<u8>,
}

pub fn load_eval_sets(manifest: &DatasetManifest, crop: usize, norm: &Normalization) -> Result<Vec<EvalSet>> {
    manifest
        .test_subsets()?
        .into_iter()
        .map(|(subset, rows)| {
            let mut tensors = Vec::with_capacity(rows.len());
            let mut labels = Vec::with_capacity(rows.len());
            for r in &rows {
                let img = load_rgb(&manifest.resolve(&r.path))?;
                tensors.push(preprocess_eval(&img, crop, norm)?.tensor);
                labels.push(r.label.target());
            }
            Ok(EvalSet { subset, tensors, labels })
        })
        .collect()
}

/// Scores unmasked images.
pub fn score_set(model: &ToyVit, set: &EvalSet, norm: &Normalization, probe: &MaskProbe) -> Result<ScoredSet> {
    let scores = set
        .tensors
        .iter()
        .map(|t| model.predict(&model_input(t, norm, None, probe, Phase::Eval)?))
        .collect::<Result<Vec<_>>>()?;
    ScoredSet::new(set.subset.clone(), scores, set.labels.clone())
}

fn eval_row(
    model: &ToyVit,
    sets: &[EvalSet],
    seen: &BTreeSet<String>,
    norm: &Normalization,
    probe: &MaskProbe,
    step: usize,
    epoch: usize,
    epoch_end: bool,
) -> Result<EvalRow> {
    let mut subsets = BTreeMap::new();
    for set in sets {
        let scored = score_set(model, set, norm, probe)?;
        subsets.insert(
            set.subset.clone(),
            SubsetScore {
                acc: accuracy(&scored, DEFAULT_THRESHOLD)?,
                ap: average_precision(&scored)?,
            },
        );
    }
    let n = subsets.len() as f64;
    let avg_acc = subsets.values().map(|s| s.acc).sum::<f64>() / n;
    let avg_ap = subsets.values().map(|s| s.ap).sum::<f64>() / n;
    let unseen: Vec<f64> = subsets
        .iter()
        .filter(|(k, _)| !seen.contains(*k))
        .map(|(_, s)| s.acc)
        .collect();
    let unseen_acc = (!unseen.is_empty()).then(|| unseen.iter().sum::<f64>() / unseen.len() as f64);
    Ok(EvalRow {
        step,
        epoch,
        epoch_end,
        subsets,
        avg_acc,
        avg_ap,
        unseen_acc,
    })
}

/// Result of a full fine-tuning run.
#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub model: ToyVit,
    /// Parameters with the best unseen-subset accuracy at an epoch end, when
    /// any unseen subset exists.
    pub best_unseen: Option<(usize, ToyVit)>,
    pub log: TrainingLog,
    pub steps: usize,
}

impl FineTuneOutcome {
    /// The checkpoint picked by `cfg.checkpoint_selection`.
    pub fn selected(&self, cfg: &TrainConfig) -> &ToyVit {
        match (cfg.checkpoint_selection, &self.best_unseen) {
            (CheckpointSelection::BestUnseen, Some((_, m))) => m,
            _ => &self.model,
        }
    }
}

/// Fine-tunes a freshly initialized toy encoder on the train split of
/// `manifest`, evaluating every `cfg.eval_every` steps and at every epoch end.
pub fn fine_tune(manifest: &DatasetManifest, spec: &EncoderSpec, cfg: &TrainConfig) -> Result<FineTuneOutcome> {
    cfg.validate()?;
    let mut spec = spec.clone();
    if cfg.mode == TrainMode::FrozenLinear {
        spec.frozen = true;
    }
    if spec.image_size != cfg.augmentation.crop_size {
        return Err(Error::Config(format!(
            "encoder image_size {} differs from crop_size {}",
            spec.image_size, cfg.augmentation.crop_size
        )));
    }
    let model = ToyVit::new(spec, cfg.seed)?;
    fine_tune_model(manifest, model, cfg, &MaskProbe::default())
}

/// Like [`fine_tune`] but starting from `model` and reporting mask
/// applications through `probe`.
pub fn fine_tune_model(
    manifest: &DatasetManifest,
    mut model: ToyVit,
    cfg: &TrainConfig,
    probe: &MaskProbe,
) -> Result<FineTuneOutcome> {
    cfg.validate()?;
    let train: Vec<_> = manifest.records_in(Split::Train).cloned().collect();
    if train.is_empty() {
        return Err(Error::Empty("train split"));
    }
    let images = train
        .iter()
        .map(|r| load_rgb(&manifest.resolve(&r.path)))
        .collect::<Result<Vec<_>>>()?;
    let seen: BTreeSet<String> = train.iter().map(|r| r.subset.clone()).collect();
    let norm = &cfg.augmentation.normalization;
    let sets = load_eval_sets(manifest, cfg.augmentation.crop_size, norm)?;

    let mut log = TrainingLog {
        mode: cfg.mode,
        subsets: sets.iter().map(|s| s.subset.clone()).collect(),
        seen_subsets: seen.iter().cloned().collect(),
        steps: Vec::new(),
        evals: Vec::new(),
        sampled_ratios: Vec::new(),
        images_seen: 0,
        train_mask_applications: 0,
        eval_mask_applications: 0,
    };
    let mut opt = AdamState::new(&model.params);
    let mut best: Option<(usize, f64, ToyVit)> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::derived_rng(cfg.seed, &[0x5EED, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let mut rng = seed::derived_rng(cfg.seed, &[epoch as u64, i as u64, 0]);
                    let pre = preprocess_train(&images[i], &cfg.augmentation, &mut rng)?;
                    Ok(TrainItem {
                        index: i,
                        tensor: pre.tensor,
                        label: train[i].label.target(),
                        mask_seed: seed::derive(cfg.seed, &[epoch as u64, i as u64, 1]),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let out = train_step(&mut model, &mut opt, &batch, cfg, lr, step, probe)?;
            step += 1;
            log.images_seen += batch.len();
            let mean_ratio = (!out.sampled_ratios.is_empty())
                .then(|| out.sampled_ratios.iter().sum::<f64>() / out.sampled_ratios.len() as f64);
            log.sampled_ratios.extend(&out.sampled_ratios);
            log.steps.push(StepRow {
                step,
                epoch,
                loss: out.loss,
                lr,
                sampled_ratio: mean_ratio,
            });
            let is_epoch_end = chunk.as_ptr_range().end == order.as_ptr_range().end;
            if step % cfg.eval_every == 0 || is_epoch_end {
                let row = eval_row(&model, &sets, &seen, norm, probe, step, epoch, is_epoch_end)?;
                if is_epoch_end {
                    if let Some(u) = row.unseen_acc {
                        if best.as_ref().is_none_or(|(_, b, _)| u > *b) {
                            best = Some((epoch, u, model.clone()));
                        }
                    }
                }
                log.evals.push(row);
            }
        }
    }
    log.train_mask_applications = probe.train_count();
    log.eval_mask_applications = probe.eval_count();
    Ok(FineTuneOutcome {
        model,
        best_unseen: best.map(|(e, _, m)| (e, m)),
        log,
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texmask::{RatioInterval, TamVariant};
    use ndarray::Array3;
    use rand::Rng;

    fn tiny_spec() -> EncoderSpec {
        EncoderSpec {
            image_size: 8,
            channels: 3,
            token_patch_size: 4,
            depth: 1,
            heads: 2,
            width: 8,
            mlp_ratio: 2,
            output_dim: 4,
            frozen: false,
            freeze: vec![],
        }
    }

    fn cfg(mode: TrainMode, ratio: RatioInterval) -> TrainConfig {
        TrainConfig {
            mode,
            learning_rate: 1e-3,
            mask: MaskConfig::tam(TamVariant::High, 2, ratio),
            augmentation: AugmentationConfig {
                crop_size: 8,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn batch(n: usize) -> Vec<TrainItem> {
        let mut rng = seed::rng(42);
        (0..n)
            .map(|i| TrainItem {
                index: i,
                tensor: Array3::from_shape_fn((3, 8, 8), |_| rng.random::<f64>()),
                label: (i % 2) as u8,
                mask_seed: 100 + i as u64,
            })
            .collect()
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 1e-5);
        assert_eq!(lr_at(1, &c), 5e-6);
        assert_eq!(lr_at(3, &c), 1.25e-6);
        assert_eq!(TrainConfig::ufd_style().learning_rate, 1e-6);
    }

    #[test]
    fn zero_budget_mpft_step_equals_direct_step() {
        let b = batch(4);
        let zero = RatioInterval::fixed(0.0).unwrap();
        let mut m1 = ToyVit::new(tiny_spec(), 1).unwrap();
        m1.params.head.weights.fill(0.5);
        let mut m2 = m1.clone();
        let mut o1 = AdamState::new(&m1.params);
        let mut o2 = AdamState::new(&m2.params);
        let probe = MaskProbe::default();
        let c1 = cfg(TrainMode::Mpft, zero);
        let c2 = cfg(TrainMode::DirectFt, zero);
        let l1 = train_step(&mut m1, &mut o1, &b, &c1, 1e-3, 0, &probe).unwrap();
        let l2 = train_step(&mut m2, &mut o2, &b, &c2, 1e-3, 0, &probe).unwrap();
        assert_eq!(l1.loss, l2.loss);
        assert_eq!(m1, m2);
        assert_eq!(probe.train_count(), 4);
    }

    #[test]
    fn frozen_encoder_is_bit_identical_after_step() {
        let b = batch(4);
        let spec = EncoderSpec { frozen: true, ..tiny_spec() };
        let mut m = ToyVit::new(spec, 2).unwrap();
        let before = m.params.encoder.clone();
        let mut opt = AdamState::new(&m.params);
        let c = cfg(TrainMode::FrozenLinear, RatioInterval::fixed(0.0).unwrap());
        train_step(&mut m, &mut opt, &b, &c, 1e-2, 0, &MaskProbe::default()).unwrap();
        assert_eq!(m.params.encoder, before);
        assert!(m.params.head.weights.iter().any(|&w| w != 0.0));
    }

    #[test]
    fn step_is_deterministic() {
        let b = batch(4);
        let c = cfg(TrainMode::Mpft, RatioInterval::new(0.6, 0.8).unwrap());
        let run = || {
            let mut m = ToyVit::new(tiny_spec(), 3).unwrap();
            let mut opt = AdamState::new(&m.params);
            train_step(&mut m, &mut opt, &b, &c, 1e-3, 0, &MaskProbe::default()).unwrap();
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn masked_inputs_are_exactly_zero() {
        let b = batch(1);
        let c = cfg(TrainMode::Mpft, RatioInterval::fixed(0.5).unwrap());
        let probe = MaskProbe::default();
        let m = generate_mask(&b[0].tensor, &c.mask, &mut seed::rng(b[0].mask_seed)).unwrap();
        let x = model_input(&b[0].tensor, &c.augmentation.normalization, Some(&m), &probe, Phase::Train).unwrap();
        for ((_, y, xx), v) in x.indexed_iter() {
            if m.grid()[[y, xx]] == 0 {
                assert_eq!(*v, 0.0);
            }
        }
        assert_eq!(probe.train_count(), 1);
        assert_eq!(probe.eval_count(), 0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { betas: (1.0, 0.999), ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!("direct_ft".parse::<TrainMode>().unwrap(), TrainMode::DirectFt);
    }
}
