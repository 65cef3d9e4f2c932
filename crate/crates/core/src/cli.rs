//! Command-line front end. Reports go to stdout as JSON; diagnostics go to
//! the `log` facade (stderr in the binary).
//!
//! Exit codes: 0 success, 1 validation or precondition failure, 2 usage.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{
    generate_downstream, generate_synthetic, load_manifest, load_manifest_with, save_case_set,
    SyntheticConfig,
};
use crate::error::{CsclError, Result};
use crate::eval::{
    embed_cases, kshot_probe, mean_pool_cases, read_embeddings, retrieval_diagnostics, survival_cv,
    write_embeddings,
};
use crate::math::Parameters;
use crate::models::{read_checkpoint_file, write_checkpoint_file, Adapter, Mil};
use crate::training::{
    epoch_means, log_to_jsonl, train_stage1, train_stage2, FusionModel, TrainConfig,
};
use crate::verify;

pub const LOCK_FILE: &str = ".cscl.lock";

#[derive(Debug, Parser)]
#[command(
    name = "cscl",
    version,
    about = "Cross-stain contrastive pretraining for patch-embedding bags"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic aligned multi-stain cohort (bags + manifest).
    GenSynth(GenSynthArgs),
    /// Load a manifest and check every alignment invariant.
    Validate(ValidateArgs),
    /// Stage 1: fit the H&E adapter with the patch alignment loss.
    TrainStage1(TrainArgs),
    /// Stage 2: freeze the adapter, fit fusion + MIL with the slide alignment loss.
    TrainStage2(TrainArgs),
    /// Write H&E-only slide embeddings (or the mean-pool baseline).
    Embed(EmbedArgs),
    /// k-shot linear-probe AUC over seeds.
    EvalKshot(KshotArgs),
    /// Cross-validated C-index of a linear Cox model.
    EvalSurvival(SurvivalArgs),
    /// Patch- and slide-level cross-stain retrieval diagnostics.
    Retrieval(RetrievalArgs),
    /// Run every finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// JSON file with SyntheticConfig fields; missing fields take the standard values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_cases: Option<usize>,
    #[arg(long)]
    pub n_patches: Option<usize>,
    #[arg(long)]
    pub dim_latent: Option<usize>,
    #[arg(long)]
    pub dim_embed: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Also write an H&E-only downstream cohort of this many cases under `<out>/downstream`.
    #[arg(long)]
    pub downstream_cases: Option<usize>,
    /// Debug generator: identical stains, identity maps.
    #[arg(long)]
    pub identity_maps: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Accept cases without IHC bags regardless of the manifest flag.
    #[arg(long)]
    pub allow_he_only: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Full-scale optimizer settings (120 epochs, lr 1e-4, batch 24).
    Full,
    /// Short schedule for small synthetic cohorts.
    Synthetic,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON file with TrainConfig fields, applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoint and loss log.
    #[arg(long)]
    pub out: PathBuf,
    /// Stage-1 adapter checkpoint (stage 2 only).
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub batch_cases: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub n_neg: Option<usize>,
    #[arg(long)]
    pub shared_adapter: bool,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, required_unless_present = "mean_pool")]
    pub adapter: Option<PathBuf>,
    /// Checkpoint holding the MIL tensors (the stage-2 checkpoint).
    #[arg(long, required_unless_present = "mean_pool")]
    pub mil: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Mean-pool the raw H&E patches instead (baseline).
    #[arg(long, conflicts_with_all = ["adapter", "mil"])]
    pub mean_pool: bool,
}

#[derive(Debug, Args)]
pub struct KshotArgs {
    /// Embedding manifest written by `embed`.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Comma-separated probe seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4, 5, 6, 7, 8, 9])]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct SurvivalArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RetrievalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Adapter checkpoint; the identity adapter when omitted.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    /// Stage-2 checkpoint, enabling slide-level retrieval.
    #[arg(long)]
    pub fusion: Option<PathBuf>,
    #[arg(long)]
    pub shared_adapter: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Reports are written to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::GenSynth(a) => gen_synth(a, out),
        Command::Validate(a) => validate(a, out),
        Command::TrainStage1(a) => train(a, 1, out),
        Command::TrainStage2(a) => {
            if a.adapter.is_none() {
                eprintln!("error: train-stage2 requires --adapter <PATH>\n\nUsage: cscl train-stage2 --manifest <MANIFEST> --out <OUT> --adapter <ADAPTER>");
                return Ok(2);
            }
            train(a, 2, out)
        }
        Command::Embed(a) => embed(a, out),
        Command::EvalKshot(a) => eval_kshot(a, out),
        Command::EvalSurvival(a) => eval_survival(a, out),
        Command::Retrieval(a) => retrieval(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Exclusive ownership of an output directory for the lifetime of the guard.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CsclError::precondition(format!(
                    "{} is locked by another run ({} exists)",
                    dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Reads a JSON object and applies it over `base`, so files may be partial.
fn merge_config<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(base);
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CsclError::invalid(format!("{}: {e}", path.display())))?;
    let file: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CsclError::invalid(format!("{}: {e}", path.display())))?;
    let serde_json::Value::Object(file) = file else {
        return Err(CsclError::invalid(format!(
            "{}: expected a JSON object",
            path.display()
        )));
    };
    let mut merged = serde_json::to_value(base)?;
    let obj = merged
        .as_object_mut()
        .expect("config serializes to an object");
    for (k, v) in file {
        obj.insert(k, v);
    }
    serde_json::from_value(merged)
        .map_err(|e| CsclError::invalid(format!("{}: {e}", path.display())))
}

fn gen_synth(a: GenSynthArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = merge_config(SyntheticConfig::standard(0), a.config.as_deref())?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.n_cases {
        cfg.n_cases = v;
    }
    if let Some(v) = a.n_patches {
        cfg.n_patches = v;
    }
    if let Some(v) = a.dim_latent {
        cfg.dim_latent = v;
    }
    if let Some(v) = a.dim_embed {
        cfg.dim_embed = v;
    }
    if let Some(v) = a.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = a.downstream_cases {
        cfg.downstream_cases = v;
    }
    if a.identity_maps {
        cfg.identity_maps = true;
    }
    cfg.validate()?;
    let _lock = DirLock::acquire(&a.out)?;
    let set = generate_synthetic(&cfg)?;
    let manifest = save_case_set(&set, &a.out, "manifest.json")?;
    fs::write(
        a.out.join("synthetic_config.json"),
        serde_json::to_string_pretty(&cfg)? + "\n",
    )?;
    let downstream = if cfg.downstream_cases > 0 {
        let ds = generate_downstream(&cfg, cfg.downstream_cases)?;
        Some(save_case_set(
            &ds,
            a.out.join("downstream"),
            "manifest.json",
        )?)
    } else {
        None
    };
    log::info!("wrote {} cases to {}", set.len(), a.out.display());
    emit(
        out,
        &serde_json::json!({
            "manifest": manifest,
            "cases": set.len(),
            "downstream": downstream,
        }),
    )?;
    Ok(0)
}

fn validate(a: ValidateArgs, out: &mut dyn Write) -> Result<i32> {
    let set = if a.allow_he_only {
        load_manifest_with(&a.manifest, Some(false))?
    } else {
        load_manifest(&a.manifest)?
    };
    let with_ihc = set.cases.iter().filter(|c| c.has_ihc()).count();
    let patches: usize = set.cases.iter().map(|c| c.n_patches()).sum();
    emit(
        out,
        &serde_json::json!({
            "manifest": a.manifest,
            "cases": set.len(),
            "cases_with_ihc": with_ihc,
            "patches": patches,
            "dim": set.dim(),
            "labels": set.labels.is_some(),
            "survival": set.survival.is_some(),
        }),
    )?;
    Ok(0)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let seed = a.seed.unwrap_or(0);
    let base = match a.preset {
        Preset::Full => TrainConfig {
            seed,
            ..TrainConfig::default()
        },
        Preset::Synthetic => TrainConfig::synthetic(seed),
    };
    let mut cfg = merge_config(base, a.config.as_deref())?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
        cfg.stage1_epochs = None;
        cfg.stage2_epochs = None;
    }
    if let Some(v) = a.warmup_epochs {
        cfg.warmup_epochs = v;
    }
    if let Some(v) = a.lr_max {
        cfg.lr_max = v;
    }
    if let Some(v) = a.lr_min {
        cfg.lr_min = v;
    }
    if let Some(v) = a.batch_cases {
        cfg.batch_cases = v;
    }
    if let Some(v) = a.tau {
        cfg.tau = v;
    }
    if let Some(v) = a.n_neg {
        cfg.n_neg = v;
    }
    if a.shared_adapter {
        cfg.shared_adapter = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_adapter(path: &Path) -> Result<Adapter<f32>> {
    Adapter::from_tensors(&read_checkpoint_file(path)?)
}

fn train(a: TrainArgs, stage: u8, out: &mut dyn Write) -> Result<i32> {
    let cfg = train_config(&a)?;
    let cases = load_manifest(&a.manifest)?;
    let _lock = DirLock::acquire(&a.out)?;
    fs::write(
        a.out.join(format!("stage{stage}_config.json")),
        serde_json::to_string_pretty(&cfg)? + "\n",
    )?;
    let (ckpt, log, steps) = if stage == 1 {
        let r = train_stage1(&cases, &cfg)?;
        let ckpt = a.out.join("adapter.csck");
        write_checkpoint_file(&r.adapter.to_tensors(None), &ckpt)?;
        (ckpt, r.log, r.total_steps)
    } else {
        let adapter = load_adapter(a.adapter.as_deref().expect("checked by dispatch"))?;
        let r = train_stage2(&cases, &adapter, &cfg)?;
        let ckpt = a.out.join("fusion.csck");
        write_checkpoint_file(&r.model.to_tensors(None), &ckpt)?;
        (ckpt, r.log, r.total_steps)
    };
    let log_path = a.out.join(format!("stage{stage}_log.jsonl"));
    File::create(&log_path)?.write_all(log_to_jsonl(&log).as_bytes())?;
    let means = epoch_means(&log);
    emit(
        out,
        &serde_json::json!({
            "stage": stage,
            "checkpoint": ckpt,
            "log": log_path,
            "steps": steps,
            "first_epoch_loss": means.first(),
            "final_epoch_loss": means.last(),
        }),
    )?;
    Ok(0)
}

fn embed(a: EmbedArgs, out: &mut dyn Write) -> Result<i32> {
    let cases = load_manifest_with(&a.manifest, Some(false))?;
    let embeddings = if a.mean_pool {
        mean_pool_cases(&cases)
    } else {
        let adapter = load_adapter(a.adapter.as_deref().expect("required by clap"))?;
        let mil = Mil::from_tensors(&read_checkpoint_file(
            a.mil.as_deref().expect("required by clap"),
        )?)?;
        embed_cases(&cases, &adapter, &mil)?
    };
    let _lock = DirLock::acquire(&a.out)?;
    let manifest = write_embeddings(&embeddings, &cases, &a.out)?;
    emit(
        out,
        &serde_json::json!({
            "embeddings": manifest,
            "cases": embeddings.len(),
            "dim": embeddings.first().map(|e| e.vector.len()),
            "mean_pool": a.mean_pool,
        }),
    )?;
    Ok(0)
}

fn eval_kshot(a: KshotArgs, out: &mut dyn Write) -> Result<i32> {
    let (x, set) = read_embeddings(&a.embeddings)?;
    let labels = set
        .labels
        .ok_or_else(|| CsclError::precondition(format!("{}: no labels", a.embeddings.display())))?;
    emit(out, &kshot_probe(&x, &labels, a.k, &a.seeds)?)?;
    Ok(0)
}

fn eval_survival(a: SurvivalArgs, out: &mut dyn Write) -> Result<i32> {
    let (x, set) = read_embeddings(&a.embeddings)?;
    let surv = set.survival.ok_or_else(|| {
        CsclError::precondition(format!("{}: no survival data", a.embeddings.display()))
    })?;
    emit(out, &survival_cv(&x, &surv, a.folds, a.seed)?)?;
    Ok(0)
}

fn retrieval(a: RetrievalArgs, out: &mut dyn Write) -> Result<i32> {
    let cases = load_manifest_with(&a.manifest, Some(false))?;
    let dim = cases
        .dim()
        .ok_or_else(|| CsclError::precondition("empty manifest"))?;
    let adapter = match &a.adapter {
        Some(p) => load_adapter(p)?,
        None => Adapter::zeros(dim, 1),
    };
    let fusion = match &a.fusion {
        Some(p) => Some(FusionModel::from_tensors(&read_checkpoint_file(p)?)?),
        None => None,
    };
    emit(
        out,
        &retrieval_diagnostics(&cases, &adapter, fusion.as_ref(), a.shared_adapter)?,
    )?;
    Ok(0)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let reports = verify::run_all(a.seed)?;
    for r in &reports {
        log::info!(
            "{:<11} max rel err {:.3e} (tol {:.0e}) {}",
            r.suite,
            r.max_rel_err,
            r.tolerance,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    emit(out, &reports)?;
    Ok(if reports.iter().all(|r| r.passed) {
        0
    } else {
        1
    })
}
