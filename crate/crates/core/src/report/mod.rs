//! Command layer: every command reads a [`config::RunConfig`], writes its
//! artifacts into a run directory together with `run.json` (the resolved
//! config) and `outputs.json` (SHA-256 of every artifact).

pub mod cam;
pub mod config;
pub mod embed;
pub mod render;
pub mod sweep;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::{load_manifest, load_rgb, preprocess_eval, synth_dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::eval::perturb::{ensure_8bit, perturb, PerturbationSpec};
use crate::eval::{
    cross_matrix, evaluate, read_scores_csv, report_from_scores, robustness_report, write_scores_csv, write_table_csv,
    CrossMatrix, Detector, EvalOptions,
};
use crate::model::{load_checkpoint, save_checkpoint, CheckpointMeta, ToyVit};
use crate::seed;
use crate::tensor::{from_rgb, to_rgb, Normalization};
use crate::texmask::{apply_mask, generate_mask};
use crate::trainer::{fine_tune, TrainingLog};
use config::RunConfig;
use embed::{embed_2d, export_features, real_vs_generated_silhouette, FeatureDump};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Synth,
    Mask,
    Train,
    Eval,
    Matrix,
    Perturb,
    Features,
    Embed,
    Cam,
    Sweep,
    Report,
}

impl Command {
    pub const ALL: [Command; 11] = [
        Self::Synth,
        Self::Mask,
        Self::Train,
        Self::Eval,
        Self::Matrix,
        Self::Perturb,
        Self::Features,
        Self::Embed,
        Self::Cam,
        Self::Sweep,
        Self::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Synth => "synth",
            Self::Mask => "mask",
            Self::Train => "train",
            Self::Eval => "eval",
            Self::Matrix => "matrix",
            Self::Perturb => "perturb",
            Self::Features => "features",
            Self::Embed => "embed",
            Self::Cam => "cam",
            Self::Sweep => "sweep",
            Self::Report => "report",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command {s}")))
    }
}

pub const RUN_FILE: &str = "run.json";
pub const OUTPUTS_FILE: &str = "outputs.json";
pub const ERROR_FILE: &str = "error.json";

/// Default run directory: `$MPFT_RUN_DIR/<command>` or `runs/<command>`.
pub fn default_out_dir(cmd: Command) -> PathBuf {
    let root = std::env::var_os("MPFT_RUN_DIR").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(cmd.name())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    /// Relative path to SHA-256 for every artifact.
    pub outputs: BTreeMap<String, String>,
}

/// Machine-readable failure record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub command: String,
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

impl ErrorRecord {
    pub fn new(command: &str, e: &Error) -> Self {
        Self {
            command: command.to_string(),
            kind: e.kind().to_string(),
            message: e.to_string(),
            exit_code: e.exit_code(),
        }
    }
}

pub fn write_error_record(out: &Path, rec: &ErrorRecord) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(ERROR_FILE), serde_json::to_vec_pretty(rec)?)?;
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn collect_files(dir: &Path, base: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_files(&p, base, out)?;
        } else {
            let rel = p.strip_prefix(base).expect("under base").to_string_lossy().replace('\\', "/");
            if ![RUN_FILE, OUTPUTS_FILE, ERROR_FILE].contains(&rel.as_str()) {
                out.insert(rel, sha256_file(&p)?);
            }
        }
    }
    Ok(())
}

/// SHA-256 of every artifact under `dir`, excluding the bookkeeping files.
pub fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    collect_files(dir, dir, &mut out)?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn require<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::Config(format!("{key} is required for this command")))
}

fn manifest_of(cfg: &RunConfig) -> Result<DatasetManifest> {
    load_manifest(require(&cfg.data.manifest, "data.manifest")?)
}

fn checkpoint_of(cfg: &RunConfig) -> Result<ToyVit> {
    Ok(load_checkpoint(require(&cfg.model.checkpoint, "model.checkpoint")?)?.0)
}

fn eval_options(cfg: &RunConfig, model: &ToyVit) -> EvalOptions {
    EvalOptions {
        crop_size: model.spec.image_size,
        normalization: cfg.train.augmentation.normalization.clone(),
        threshold: cfg.eval.threshold,
        perturbation: None,
    }
}

/// Runs `cmd` with `cfg`, writing everything into `out`.
pub fn run_command(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<RunOutcome> {
    if let Some(c) = &cfg.command {
        if c != cmd.name() {
            return Err(Error::Config(format!("config was recorded for command {c}, not {cmd}")));
        }
    }
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let mut resolved = cfg.clone();
    resolved.command = Some(cmd.name().to_string());
    write_json(&out.join(RUN_FILE), &resolved)?;
    let _ = std::fs::remove_file(out.join(ERROR_FILE));
    match cmd {
        Command::Synth => cmd_synth(&resolved, out)?,
        Command::Mask => cmd_mask(&resolved, out)?,
        Command::Train => cmd_train(&resolved, out)?,
        Command::Eval => cmd_eval(&resolved, out)?,
        Command::Matrix => cmd_matrix(&resolved, out)?,
        Command::Perturb => cmd_perturb(&resolved, out)?,
        Command::Features => cmd_features(&resolved, out)?,
        Command::Embed => cmd_embed(&resolved, out)?,
        Command::Cam => cmd_cam(&resolved, out)?,
        Command::Sweep => cmd_sweep(&resolved, out)?,
        Command::Report => cmd_report(&resolved, out)?,
    }
    let outputs = hash_outputs(out)?;
    write_json(&out.join(OUTPUTS_FILE), &outputs)?;
    Ok(RunOutcome {
        out_dir: out.to_path_buf(),
        outputs,
    })
}

/// Re-runs the command recorded in `run_json` into `out`.
pub fn rerun(run_json: &Path, out: &Path) -> Result<RunOutcome> {
    let cfg = RunConfig::resolve(Some(run_json), None, &[])?;
    let cmd: Command = require(&cfg.command, "command")?.parse()?;
    run_command(cmd, &cfg, out)
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    synth_dataset(&cfg.data.synth, &out.join("data"))?;
    Ok(())
}

fn cmd_mask(cfg: &RunConfig, out: &Path) -> Result<()> {
    let img = load_rgb(require(&cfg.data.image, "data.image")?)?;
    let x = from_rgb(&img);
    let mask_seed = seed::derive(cfg.train.seed, &[0]);
    let mask = generate_mask(&x, &cfg.mask, &mut seed::rng(mask_seed))?.with_seed(mask_seed);
    mask.save(&out.join("mask.png"))?;
    let masked = apply_mask(&x, &mask)?;
    to_rgb(masked.view()).save(out.join("masked.png"))?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = manifest_of(cfg)?;
    let tc = cfg.train_config();
    let outcome = fine_tune(&manifest, &cfg.model.encoder, &tc)?;
    let model = outcome.selected(&tc);
    let meta = CheckpointMeta {
        architecture: model.spec.clone(),
        seed: tc.seed,
        step: outcome.steps,
        config_hash: cfg.digest(),
        mode: tc.mode.name().to_string(),
    };
    save_checkpoint(&out.join("checkpoint.safetensors"), model, &meta)?;
    write_json(&out.join("training_log.json"), &outcome.log)?;
    outcome.log.write_steps_csv(&out.join("steps.csv"))?;
    let mut series = render::accuracy_series(&[("avg".to_string(), &outcome.log)])?;
    for subset in &outcome.log.subsets {
        series.push(render::Series {
            name: subset.clone(),
            points: outcome.log.evals.iter().map(|e| (e.step as f64, e.subsets[subset].acc)).collect(),
        });
    }
    render::line_chart(&series, &out.join("accuracy"))
}

fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (report, rows) = match &cfg.eval.scores {
        Some(p) => {
            let rows = read_scores_csv(p)?;
            (report_from_scores("external", &rows, cfg.eval.threshold)?, rows)
        }
        None => {
            let model = checkpoint_of(cfg)?;
            let manifest = manifest_of(cfg)?;
            evaluate(Detector::from_model(&model), &[&manifest], &eval_options(cfg, &model))?
        }
    };
    report.save_json(&out.join("eval.json"))?;
    write_scores_csv(&rows, &out.join("scores.csv"))?;
    write_table_csv(&[(report.detector.clone(), report)], &out.join("table.csv"))
}

fn cmd_matrix(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.model.checkpoints.is_empty() {
        return Err(Error::Config("model.checkpoints must list at least one checkpoint".into()));
    }
    let manifest = manifest_of(cfg)?;
    let models = cfg
        .model
        .checkpoints
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((name, load_checkpoint(p)?.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let detectors: Vec<_> = models.iter().map(|(n, m)| (n.clone(), Detector::from_model(m))).collect();
    let m = cross_matrix(&detectors, &[&manifest], &eval_options(cfg, &models[0].1))?;
    write_json(&out.join("matrix.json"), &m)?;
    render::heatmap(&m, &out.join("matrix"))
}

fn cmd_perturb(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.model.checkpoint.is_none() {
        // Image-level mode: write one perturbed copy per kind.
        let img = image::open(require(&cfg.data.image, "data.image")?)?;
        let img = ensure_8bit(&img)?;
        let mut records = BTreeMap::new();
        for (i, &kind) in cfg.eval.perturbations.iter().enumerate() {
            let spec = PerturbationSpec::new(kind, cfg.eval.perturb_seed);
            let (p, rec) = perturb(&img, &spec, &mut seed::derived_rng(spec.seed, &[i as u64]))?;
            p.save(out.join(format!("{}.png", kind.name())))?;
            records.insert(kind.name().to_string(), rec);
        }
        return write_json(&out.join("perturbations.json"), &records);
    }
    let model = checkpoint_of(cfg)?;
    let manifest = manifest_of(cfg)?;
    let rep = robustness_report(
        Detector::from_model(&model),
        &[&manifest],
        &eval_options(cfg, &model),
        &cfg.eval.perturbations,
        cfg.eval.perturb_seed,
    )?;
    write_json(&out.join("robustness.json"), &rep)?;
    rep.write_csv(&out.join("robustness.csv"))
}

fn features_of(cfg: &RunConfig) -> Result<FeatureDump> {
    let model = checkpoint_of(cfg)?;
    let manifest = manifest_of(cfg)?;
    export_features(&model, &manifest, &cfg.train.augmentation.normalization)
}

fn cmd_features(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dump = features_of(cfg)?;
    dump.save_json(&out.join("features.json"))?;
    dump.write_csv(&out.join("features.csv"))
}

#[derive(Serialize)]
struct EmbedSummary {
    method: embed::EmbedMethod,
    perplexity: Option<f64>,
    rows: usize,
    silhouette_features: f64,
    silhouette_embedding: f64,
}

fn cmd_embed(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dump = match &cfg.report.features {
        Some(p) => FeatureDump::load_json(p)?,
        None => features_of(cfg)?,
    }
    .capped(cfg.data.samples_per_group);
    let points: Vec<Vec<f64>> = dump.rows.iter().map(|r| r.feature.clone()).collect();
    let emb = embed_2d(&points, cfg.report.embed_method, cfg.train.seed)?;
    let groups: Vec<String> = dump.rows.iter().map(|r| r.group()).collect();
    render::scatter(&emb.coords, &groups, &out.join("embedding"))?;
    let coords: Vec<Vec<f64>> = emb.coords.iter().map(|c| c.to_vec()).collect();
    let clusters: Vec<usize> = dump.rows.iter().map(|r| usize::from(r.label.target())).collect();
    let summary = EmbedSummary {
        method: emb.method,
        perplexity: emb.perplexity,
        rows: dump.rows.len(),
        silhouette_features: real_vs_generated_silhouette(&dump)?,
        silhouette_embedding: embed::silhouette(&coords, &clusters)?,
    };
    write_json(&out.join("embed.json"), &summary)
}

fn cmd_cam(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = checkpoint_of(cfg)?;
    let image_path = require(&cfg.data.image, "data.image")?;
    let img = load_rgb(image_path)?;
    let norm: &Normalization = &cfg.train.augmentation.normalization;
    let pre = preprocess_eval(&img, model.spec.image_size, norm)?;
    let mut map = cam::cam(&model, &model.params.head, &norm.apply(&pre.tensor)?)?;
    map.image = Some(image_path.clone());
    let crop = to_rgb(pre.tensor.view());
    cam::overlay(&crop, &map)?.save(out.join("cam_overlay.png"))?;
    let (h, w) = map.heatmap.dim();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| cam::heat_color(map.heatmap[[y as usize, x as usize]]))
        .save(out.join("cam.png"))?;
    let mut wtr = csv::Writer::from_path(out.join("cam_grid.csv"))?;
    for row in map.grid.rows() {
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = manifest_of(cfg)?;
    let settings = sweep::sweep_settings(cfg)?;
    let rows = sweep::run_sweep(
        &manifest,
        &cfg.model.encoder,
        &cfg.train_config(),
        &settings,
        &cfg.report.sweep_seeds,
    )?;
    write_json(&out.join("sweep.json"), &rows)?;
    sweep::write_sweep_csv(&rows, &out.join("sweep.csv"))?;
    let bars: Vec<(String, f64)> = rows.iter().map(|r| (r.label.clone(), r.avg_acc)).collect();
    render::bar_chart(&bars, &out.join("sweep_chart"))
}

fn read_log(p: &Path) -> Result<TrainingLog> {
    if !p.is_file() {
        return Err(Error::MissingFile(p.to_path_buf()));
    }
    serde_json::from_slice(&std::fs::read(p)?).map_err(|e| Error::Schema(format!("{}: {e}", p.display())))
}

fn cmd_report(cfg: &RunConfig, out: &Path) -> Result<()> {
    let r = &cfg.report;
    if r.logs.is_empty() && r.matrix.is_none() && r.volume_logs.is_empty() {
        return Err(Error::Config(
            "report needs report.logs, report.matrix or report.volume_logs".into(),
        ));
    }
    if !r.logs.is_empty() {
        let logs = r.logs.iter().map(|p| read_log(p)).collect::<Result<Vec<_>>>()?;
        let named: Vec<(String, &TrainingLog)> = logs.iter().map(|l| (l.mode.name().to_string(), l)).collect();
        render::line_chart(&render::accuracy_series(&named)?, &out.join("generalization"))?;
    }
    if let Some(p) = &r.matrix {
        if !p.is_file() {
            return Err(Error::MissingFile(p.clone()));
        }
        let m: CrossMatrix = serde_json::from_slice(&std::fs::read(p)?).map_err(|e| Error::Schema(e.to_string()))?;
        render::heatmap(&m, &out.join("matrix"))?;
    }
    if !r.volume_logs.is_empty() {
        let logs = r.volume_logs.iter().map(|p| read_log(p)).collect::<Result<Vec<_>>>()?;
        let runs: Vec<(usize, &TrainingLog)> = logs
            .iter()
            .map(|l| (l.images_seen / l.epoch_end_evals().count().max(1), l))
            .collect();
        render::line_chart(&[render::data_volume_series("last5", &runs)?], &out.join("data_volume"))?;
    }
    Ok(())
}
