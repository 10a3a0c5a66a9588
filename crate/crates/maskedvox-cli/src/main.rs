//! Command-line front end for the masked-voxel pipeline.
//!
//! One binary, six subcommands: `synth` writes deterministic synthetic
//! sequences, `mask-preview` shows how a frame would be masked,
//! `pretrain` runs the joint pretext training, `gradcheck` verifies the
//! backward pass against finite differences, `splits` samples nested
//! fine-tuning splits, and `eval` scores a checkpoint without training.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric failure.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use maskedvox::config::{
    load_run_config, parse_run_config_with_overrides, ConfigError, RunConfig,
};
use maskedvox::io::{
    generate_synthetic_frame, load_manifest, manifest_to_string, read_frame_bin, read_frame_text,
    write_frame_bin, Frame, SceneManifest,
};
use maskedvox::nn::{
    grad_check, gradcheck_fixture, load_checkpoint, save_checkpoint, LossKind,
};
use maskedvox::pretrain::{evaluate, metrics_to_string, pretrain_with, PretrainError};
use maskedvox::sampling::{build_mask_plan, mask_plan_to_string};
use maskedvox::splits::{
    diversity_report, sample_sequence_splits, sample_uniform_frame_split, split_result_to_string,
    SplitError, SplitView,
};
use maskedvox::voxel::voxelize;

// ---------------------------------------------------------------------
// Error-to-exit-code mapping

#[derive(Debug)]
enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn data<E: fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn from_pretrain(e: PretrainError) -> CliError {
    match e {
        PretrainError::BadConfig(_) | PretrainError::Incompatible(_) => {
            CliError::Config(e.to_string())
        }
        PretrainError::Numeric(_) => CliError::Numeric(e.to_string()),
        PretrainError::NoFrames | PretrainError::Frame { .. } => CliError::Data(e.to_string()),
    }
}

fn from_split(e: SplitError) -> CliError {
    match e {
        SplitError::BadSpec(_) => CliError::Config(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

// ---------------------------------------------------------------------
// Argument surface

/// Masked-voxel pre-training for LiDAR-style point clouds.
#[derive(Parser)]
#[command(name = "maskedvox", version, about, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic sequences plus a manifest.
    Synth(SynthArgs),
    /// Pre-train on manifest frames; writes a checkpoint and metrics.
    Pretrain(PretrainArgs),
    /// Verify reverse-mode gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Sample nested sequence splits from a manifest.
    Splits(SplitsArgs),
    /// Voxelize one frame and print its mask plan.
    MaskPreview(MaskPreviewArgs),
    /// Evaluate a checkpoint on manifest frames without updating it.
    Eval(EvalArgs),
}

/// Config file plus overrides shared by every subcommand. Dedicated
/// flags are applied after `--set` entries, so the specific flag wins.
#[derive(Args)]
struct ConfigArgs {
    /// TOML run config; built-in defaults are used when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any config field (repeatable), e.g. --set train.epochs=10.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Base seed for every stochastic component.
    #[arg(long)]
    seed: Option<u64>,
    /// Mask sampling strategy.
    #[arg(long, value_parser = ["rfvs", "fvs", "random"])]
    strategy: Option<String>,
    /// Fraction of voxels masked for the jigsaw task.
    #[arg(long)]
    rp: Option<f64>,
    /// Fraction of voxels masked for the reconstruction task.
    #[arg(long)]
    rs: Option<f64>,
    /// Jigsaw loss weight in the joint objective.
    #[arg(long)]
    alpha: Option<f64>,
    /// Reconstruction loss weight in the joint objective.
    #[arg(long)]
    beta: Option<f64>,
    /// Cap worker threads for data preparation (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

/// Format a float override so it always parses back as a float.
fn float_set(key: &str, v: f64) -> String {
    if v.fract() == 0.0 && v.is_finite() {
        format!("{key}={v:.1}")
    } else {
        format!("{key}={v}")
    }
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut sets = self.sets.clone();
        if let Some(s) = self.seed {
            sets.push(format!("seed={s}"));
        }
        if let Some(s) = &self.strategy {
            sets.push(format!("train.strategy={s}"));
        }
        if let Some(v) = self.rp {
            sets.push(float_set("train.rp", v));
        }
        if let Some(v) = self.rs {
            sets.push(float_set("train.rs", v));
        }
        if let Some(v) = self.alpha {
            sets.push(float_set("train.alpha", v));
        }
        if let Some(v) = self.beta {
            sets.push(float_set("train.beta", v));
        }
        let cfg = match &self.config {
            Some(path) => load_run_config(path, &sets)?,
            None => parse_run_config_with_overrides("", &sets)?,
        };
        if let Some(n) = self.threads {
            if n > 0 {
                // Ignore the error if a global pool already exists.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory receiving sequence subdirectories and manifest.txt.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Manifest listing the training frames.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Directory receiving checkpoint.bin and metrics.txt.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Central-difference step size.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Which loss to check.
    #[arg(long, default_value = "all", value_parser = ["all", "jigsaw", "recon", "joint"])]
    loss: String,
    /// Self-test hook: corrupt this parameter's reverse gradients so the
    /// check must fail.
    #[arg(long, value_name = "PARAM")]
    corrupt: Option<String>,
}

#[derive(Args)]
struct SplitsArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Manifest whose sequences are split.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// File receiving the serialized split blocks.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also sample a uniform-frame split at this fraction and print the
    /// scene-coverage comparison.
    #[arg(long, value_name = "PERCENT")]
    uniform: Option<f64>,
}

#[derive(Args)]
struct MaskPreviewArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Frame to voxelize (.bin, or text with one point per line).
    #[arg(long, value_name = "FILE")]
    frame: PathBuf,
    /// Write the serialized mask plan here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Manifest listing the evaluation frames.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Epoch index mixed into the evaluation mask seeds.
    #[arg(long, default_value_t = 0)]
    mask_epoch: usize,
}

// ---------------------------------------------------------------------
// Frame loading shared by pretrain/eval/mask-preview

fn is_text_frame(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("txt") | Some("xyz")
    )
}

fn load_frame(path: &Path, seq: &str, idx: usize) -> Result<Frame, CliError> {
    if is_text_frame(path) {
        read_frame_text(path, seq, idx).map_err(data)
    } else {
        read_frame_bin(path, seq, idx).map_err(data)
    }
}

/// Load every frame of a manifest, resolving relative paths against the
/// manifest's directory.
fn load_frames(manifest_path: &Path) -> Result<(SceneManifest, Vec<Frame>), CliError> {
    let manifest = load_manifest(manifest_path).map_err(data)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut frames = Vec::new();
    for (id, paths) in &manifest.sequences {
        for (idx, rel) in paths.iter().enumerate() {
            let path = if rel.is_absolute() {
                rel.clone()
            } else {
                base.join(rel)
            };
            frames.push(load_frame(&path, id, idx)?);
        }
    }
    Ok((manifest, frames))
}

// ---------------------------------------------------------------------
// Subcommands

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let cfg = args.config.load()?;
    let synth = cfg.synth_config()?;
    let (k, per) = (cfg.synth.sequences, cfg.synth.frames_per_sequence);
    if k == 0 || per == 0 {
        return Err(CliError::Config(
            "synth.sequences and synth.frames_per_sequence must be positive".into(),
        ));
    }
    std::fs::create_dir_all(&args.out).map_err(data)?;
    let mut manifest = SceneManifest {
        sequences: Vec::new(),
    };
    for s in 0..k {
        let id = format!("seq_{s:03}");
        std::fs::create_dir_all(args.out.join(&id)).map_err(data)?;
        let mut paths = Vec::new();
        for f in 0..per {
            let frame = generate_synthetic_frame(&synth, &id, f).map_err(data)?;
            let rel = PathBuf::from(format!("{id}/frame_{f:04}.bin"));
            write_frame_bin(&frame, &args.out.join(&rel)).map_err(data)?;
            paths.push(rel);
        }
        manifest.sequences.push((id, paths));
    }
    std::fs::write(args.out.join("manifest.txt"), manifest_to_string(&manifest)).map_err(data)?;
    println!(
        "wrote {k} sequences x {per} frames to {}",
        args.out.display()
    );
    Ok(())
}

fn cmd_pretrain(args: &PretrainArgs) -> Result<(), CliError> {
    let cfg = args.config.load()?;
    let train_cfg = cfg.train_config()?;
    let (_, frames) = load_frames(&args.manifest)?;
    let (params, metrics) = pretrain_with(&frames, &train_cfg, |e| {
        println!(
            "epoch={} joint={} mvj={} mvr={} acc={} seconds={:.2}",
            e.epoch, e.joint, e.mvj, e.mvr, e.accuracy, e.seconds
        );
    })
    .map_err(from_pretrain)?;
    std::fs::create_dir_all(&args.out).map_err(data)?;
    let ckpt = args.out.join("checkpoint.bin");
    let metrics_path = args.out.join("metrics.txt");
    save_checkpoint(&params, &ckpt).map_err(data)?;
    std::fs::write(&metrics_path, metrics_to_string(&metrics)).map_err(data)?;
    println!("checkpoint: {}", ckpt.display());
    println!("metrics: {}", metrics_path.display());
    Ok(())
}

fn loss_label(kind: LossKind) -> &'static str {
    match kind {
        LossKind::Jigsaw => "jigsaw",
        LossKind::Recon => "recon",
        LossKind::Joint => "joint",
    }
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    const TOL: f64 = 1e-4;
    let cfg = args.config.load()?;
    if !(args.h > 0.0 && args.h.is_finite()) {
        return Err(CliError::Config(format!("step size h={} must be positive", args.h)));
    }
    let (params, batch) = gradcheck_fixture(cfg.seed);
    let kinds: Vec<LossKind> = match args.loss.as_str() {
        "jigsaw" => vec![LossKind::Jigsaw],
        "recon" => vec![LossKind::Recon],
        "joint" => vec![LossKind::Joint],
        _ => vec![LossKind::Jigsaw, LossKind::Recon, LossKind::Joint],
    };
    let mut all_pass = true;
    for kind in kinds {
        let report = grad_check(&params, &batch, kind, args.h, args.corrupt.as_deref())
            .map_err(|e| CliError::Config(e.to_string()))?;
        let verdict = if report.passes(TOL) { "PASS" } else { "FAIL" };
        all_pass &= report.passes(TOL);
        println!(
            "loss={} h={} scalars={} max_rel_err={:.3e} worst={}[{}] {}",
            loss_label(kind),
            args.h,
            report.scalars_checked,
            report.max_rel_err,
            report.worst_param,
            report.worst_index,
            verdict
        );
    }
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check exceeded tolerance {TOL}"
        )))
    }
}

fn cmd_splits(args: &SplitsArgs) -> Result<(), CliError> {
    let cfg = args.config.load()?;
    let spec = cfg.split_spec()?;
    let manifest = load_manifest(&args.manifest).map_err(data)?;
    let result = sample_sequence_splits(&manifest, &spec).map_err(from_split)?;
    std::fs::write(&args.out, split_result_to_string(&result)).map_err(data)?;
    for block in &result.blocks {
        let report = diversity_report(SplitView::Sequences(&block.sequence_ids), &manifest)
            .map_err(from_split)?;
        println!(
            "percent={} subset={} sequences={} frames={} coverage={:.3}",
            block.percent,
            block.subset_index,
            block.sequence_ids.len(),
            report.total_frames,
            report.coverage
        );
    }
    println!("splits: {}", args.out.display());
    if let Some(p) = args.uniform {
        let uniform = sample_uniform_frame_split(&manifest, p, spec.seed).map_err(from_split)?;
        for w in &uniform.warnings {
            eprintln!("warning: {w}");
        }
        let report =
            diversity_report(SplitView::Frames(&uniform.frames), &manifest).map_err(from_split)?;
        println!(
            "uniform percent={} frames={} coverage={:.3}",
            p, report.total_frames, report.coverage
        );
    }
    Ok(())
}

fn cmd_mask_preview(args: &MaskPreviewArgs) -> Result<(), CliError> {
    let cfg = args.config.load()?;
    let grid = cfg.grid_config()?;
    let strategy = cfg.strategy()?;
    let frame = load_frame(&args.frame, "preview", 0)?;
    let vf = voxelize(&frame, &grid).map_err(data)?;
    let plan = build_mask_plan(&vf, strategy, cfg.train.rp, cfg.train.rs, cfg.seed)
        .map_err(data)?;
    println!(
        "voxels={} kept={} jigsaw={} shape={} strategy={} rp={} rs={} seed={}",
        plan.num_voxels(),
        plan.kept.len(),
        plan.jigsaw_masked.len(),
        plan.shape_masked.len(),
        strategy,
        cfg.train.rp,
        cfg.train.rs,
        cfg.seed
    );
    let text = mask_plan_to_string(&plan);
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(data)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let cfg = args.config.load()?;
    let train_cfg = cfg.train_config()?;
    let params = load_checkpoint(&args.checkpoint).map_err(data)?;
    let (_, frames) = load_frames(&args.manifest)?;
    let m = evaluate(&params, &frames, &train_cfg, args.mask_epoch).map_err(from_pretrain)?;
    println!(
        "frames={} joint={} mvj={} mvr={} acc={}",
        frames.len(),
        m.joint,
        m.mvj,
        m.mvr,
        m.accuracy
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Splits(a) => cmd_splits(a),
        Command::MaskPreview(a) => cmd_mask_preview(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
