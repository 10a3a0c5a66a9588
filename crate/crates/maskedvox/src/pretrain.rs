//! Joint pre-training orchestration: per-epoch seeded shuffling and mask
//! re-sampling, batched AdamW steps under a cosine schedule, per-epoch
//! metrics, and checkpoint evaluation.
//!
//! Determinism contract: for a fixed config (seed included) the entire
//! run — parameter trajectory, metrics, final checkpoint — is bit-identical
//! across executions and thread counts. Frames are prepared in parallel
//! but consumed in deterministic order.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::io::Frame;
use crate::nn::model::{forward, jigsaw_hits, loss_nodes, ModelConfig, ModelParams};
use crate::nn::optim::{cosine_lr, AdamW, AdamWConfig};
use crate::nn::tape::Tape;
use crate::nn::tensor::Tensor;
use crate::sampling::{build_mask_plan, mask_seed, SamplingStrategy};
use crate::targets::assemble_masked_batch;
use crate::voxel::{voxelize, GridConfig, VoxelizedFrame};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("no frames to train on")]
    NoFrames,
    #[error("frame {sequence_id:?}[{frame_index}] failed: {message}")]
    Frame {
        sequence_id: String,
        frame_index: usize,
        message: String,
    },
    #[error("checkpoint incompatible: {0}")]
    Incompatible(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Everything a pre-training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Frames per optimizer step.
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// Weight of the classification loss in the joint objective.
    pub alpha: f64,
    /// Weight of the reconstruction loss in the joint objective.
    pub beta: f64,
    /// Fraction of voxels masked for the classification task.
    pub rp: f64,
    /// Fraction of voxels masked for the reconstruction task.
    pub rs: f64,
    pub strategy: SamplingStrategy,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(PretrainError::BadConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr_max >= self.lr_min && self.lr_min >= 0.0) {
            return Err(PretrainError::BadConfig(format!(
                "lr_max={} must be >= lr_min={} >= 0",
                self.lr_max, self.lr_min
            )));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(PretrainError::BadConfig("alpha and beta must be >= 0".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(PretrainError::BadConfig("weight_decay must be >= 0".into()));
        }
        if !(self.rp >= 0.0 && self.rs >= 0.0 && self.rp + self.rs < 1.0) {
            return Err(PretrainError::BadConfig(format!(
                "mask ratios rp={} rs={} must satisfy 0 <= rp + rs < 1",
                self.rp, self.rs
            )));
        }
        Ok(())
    }
}

/// One epoch's aggregate numbers. `seconds` is wall-clock and therefore
/// excluded from the serialized metrics text, which must be reproducible
/// bit-for-bit across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub joint: f64,
    pub mvj: f64,
    pub mvr: f64,
    /// Fraction of jigsaw-masked voxels whose argmax class was correct.
    pub accuracy: f64,
    pub seconds: f64,
}

/// Per-epoch history of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub epochs: Vec<EpochMetrics>,
}

impl Metrics {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}

/// Render metrics as line-oriented text, one epoch per line. Timing is
/// intentionally omitted so two identical runs serialize identically.
pub fn metrics_to_string(metrics: &Metrics) -> String {
    let mut out = String::new();
    for e in &metrics.epochs {
        let _ = writeln!(
            out,
            "epoch={} joint={} mvj={} mvr={} acc={}",
            e.epoch, e.joint, e.mvj, e.mvr, e.accuracy
        );
    }
    out
}

/// Parse the text produced by [`metrics_to_string`]; `seconds` fields
/// come back as zero.
pub fn parse_metrics(text: &str) -> Result<Metrics, PretrainError> {
    let mut metrics = Metrics::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut e = EpochMetrics {
            epoch: 0,
            joint: f64::NAN,
            mvj: f64::NAN,
            mvr: f64::NAN,
            accuracy: f64::NAN,
            seconds: 0.0,
        };
        for field in line.split_whitespace() {
            let (key, val) = field.split_once('=').ok_or_else(|| {
                PretrainError::BadConfig(format!("metrics line {}: bad field {field:?}", i + 1))
            })?;
            let parse_err = || {
                PretrainError::BadConfig(format!("metrics line {}: bad value {val:?}", i + 1))
            };
            match key {
                "epoch" => e.epoch = val.parse().map_err(|_| parse_err())?,
                "joint" => e.joint = val.parse().map_err(|_| parse_err())?,
                "mvj" => e.mvj = val.parse().map_err(|_| parse_err())?,
                "mvr" => e.mvr = val.parse().map_err(|_| parse_err())?,
                "acc" => e.accuracy = val.parse().map_err(|_| parse_err())?,
                _ => {
                    return Err(PretrainError::BadConfig(format!(
                        "metrics line {}: unknown field {key:?}",
                        i + 1
                    )))
                }
            }
        }
        metrics.epochs.push(e);
    }
    Ok(metrics)
}

struct FrameStats {
    joint: f64,
    mvj: f64,
    mvr: f64,
    correct: usize,
    jigsaw_total: usize,
}

/// Voxelize every frame up front (in parallel, output in input order).
fn prepare_frames(
    frames: &[Frame],
    grid: &GridConfig,
) -> Result<Vec<VoxelizedFrame>, PretrainError> {
    frames
        .par_iter()
        .map(|f| {
            voxelize(f, grid).map_err(|e| PretrainError::Frame {
                sequence_id: f.sequence_id.clone(),
                frame_index: f.frame_index,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Forward/backward one frame under its epoch mask; returns gradients and
/// scalar stats. `slot` is the frame's position in the run's frame list,
/// which keys the mask seed (unlike `frame_index`, it never collides
/// across sequences).
fn frame_pass(
    params: &ModelParams,
    vf: &VoxelizedFrame,
    cfg: &TrainConfig,
    epoch: usize,
    slot: usize,
    with_grads: bool,
) -> Result<(Option<Vec<Tensor>>, FrameStats), PretrainError> {
    let frame_err = |message: String| PretrainError::Frame {
        sequence_id: vf.sequence_id.clone(),
        frame_index: vf.frame_index,
        message,
    };
    let seed = mask_seed(cfg.seed, epoch, slot);
    let plan = build_mask_plan(vf, cfg.strategy, cfg.rp, cfg.rs, seed)
        .map_err(|e| frame_err(e.to_string()))?;
    let batch = assemble_masked_batch(vf, &plan, &cfg.model.window)
        .map_err(|e| frame_err(e.to_string()))?;
    let mut tape = Tape::new();
    let fwd = forward(params, &batch, &mut tape).map_err(|e| frame_err(e.to_string()))?;
    let losses =
        loss_nodes(&mut tape, &fwd, &batch, cfg.alpha, cfg.beta).map_err(|e| frame_err(e.to_string()))?;
    let joint = losses.joint_value(&tape);
    if !joint.is_finite() {
        return Err(PretrainError::Numeric(format!(
            "non-finite loss on frame {:?}[{}]",
            vf.sequence_id, vf.frame_index
        )));
    }
    let (correct, jigsaw_total) = jigsaw_hits(&tape, &fwd, &batch).unwrap_or((0, 0));
    let grads = with_grads.then(|| tape.backward(losses.joint, params.num_tensors()));
    Ok((
        grads,
        FrameStats {
            joint,
            mvj: losses.mvj_value(&tape),
            mvr: losses.mvr_value(&tape),
            correct,
            jigsaw_total,
        },
    ))
}

/// Run joint pre-training and return the trained parameters with the
/// per-epoch metric history.
pub fn pretrain(frames: &[Frame], cfg: &TrainConfig) -> Result<(ModelParams, Metrics), PretrainError> {
    pretrain_with(frames, cfg, |_| {})
}

/// [`pretrain`] with a per-epoch observer, called right after each
/// epoch's metrics are final — handy for live console output.
pub fn pretrain_with(
    frames: &[Frame],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(ModelParams, Metrics), PretrainError> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(PretrainError::NoFrames);
    }
    let prepared = prepare_frames(frames, &cfg.grid)?;

    let mut params = ModelParams::init(cfg.model, cfg.seed);
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        &params.tensors,
    )
    .map_err(|e| PretrainError::BadConfig(e.to_string()))?;

    let steps_per_epoch = prepared.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut step = 0usize;
    let mut metrics = Metrics::default();

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mask_seed(cfg.seed ^ SHUFFLE_SALT, epoch, 0));
        order.shuffle(&mut shuffle_rng);

        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        let mut hits = (0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            // Parallel forward/backward, deterministic in-order reduce.
            let passes: Vec<(Option<Vec<Tensor>>, FrameStats)> = chunk
                .par_iter()
                .map(|&fi| frame_pass(&params, &prepared[fi], cfg, epoch, fi, true))
                .collect::<Result<_, _>>()?;

            let scale = 1.0 / chunk.len() as f64;
            let mut batch_grads: Vec<Tensor> = params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect();
            for (grads, stats) in &passes {
                let grads = grads.as_ref().expect("training pass computes grads");
                for (acc, g) in batch_grads.iter_mut().zip(grads) {
                    for (a, gv) in acc.data.iter_mut().zip(&g.data) {
                        *a += scale * gv;
                    }
                }
                sums.0 += stats.joint;
                sums.1 += stats.mvj;
                sums.2 += stats.mvr;
                hits.0 += stats.correct;
                hits.1 += stats.jigsaw_total;
            }

            let lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min)
                .map_err(|e| PretrainError::BadConfig(e.to_string()))?;
            opt.step(&mut params.tensors, &batch_grads, lr)
                .map_err(|e| PretrainError::Numeric(e.to_string()))?;
            step += 1;
        }

        let n = prepared.len() as f64;
        let epoch_metrics = EpochMetrics {
            epoch: epoch + 1,
            joint: sums.0 / n,
            mvj: sums.1 / n,
            mvr: sums.2 / n,
            accuracy: if hits.1 == 0 {
                0.0
            } else {
                hits.0 as f64 / hits.1 as f64
            },
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&epoch_metrics);
        metrics.epochs.push(epoch_metrics);
    }
    Ok((params, metrics))
}

/// Evaluate a checkpoint on frames without updating parameters. Masks are
/// re-sampled with the config seed at the given `mask_epoch`, so the same
/// inputs always produce the same metrics.
pub fn evaluate(
    params: &ModelParams,
    frames: &[Frame],
    cfg: &TrainConfig,
    mask_epoch: usize,
) -> Result<EpochMetrics, PretrainError> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(PretrainError::NoFrames);
    }
    if params.config != cfg.model {
        return Err(PretrainError::Incompatible(format!(
            "checkpoint model {:?} differs from configured model {:?}",
            params.config, cfg.model
        )));
    }
    let prepared = prepare_frames(frames, &cfg.grid)?;
    let passes: Vec<(Option<Vec<Tensor>>, FrameStats)> = prepared
        .par_iter()
        .enumerate()
        .map(|(slot, vf)| frame_pass(params, vf, cfg, mask_epoch, slot, false))
        .collect::<Result<_, _>>()?;

    let n = prepared.len() as f64;
    let mut sums = (0.0, 0.0, 0.0);
    let mut hits = (0usize, 0usize);
    for (_, stats) in &passes {
        sums.0 += stats.joint;
        sums.1 += stats.mvj;
        sums.2 += stats.mvr;
        hits.0 += stats.correct;
        hits.1 += stats.jigsaw_total;
    }
    Ok(EpochMetrics {
        epoch: mask_epoch,
        joint: sums.0 / n,
        mvj: sums.1 / n,
        mvr: sums.2 / n,
        accuracy: if hits.1 == 0 {
            0.0
        } else {
            hits.0 as f64 / hits.1 as f64
        },
        seconds: 0.0,
    })
}

/// Decorrelates the epoch-shuffle stream from the mask-sampling streams,
/// which share the same base seed.
const SHUFFLE_SALT: u64 = 0x51ff_1e5a_17ed_c0de;
