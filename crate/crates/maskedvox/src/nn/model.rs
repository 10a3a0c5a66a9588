//! The voxel encoder, windowed-attention trunk, and the two task heads,
//! built on the gradient tape.
//!
//! Architecture: per-point MLP (9 → enc_hidden → d) with masked max-pool
//! per voxel; `blocks` pre-norm attention blocks where self-attention runs
//! independently inside each spatial window with no positional embeddings;
//! a classification head over window-relative cells for jigsaw-masked
//! voxels and a point-set regression head (tanh-bounded) for shape-masked
//! voxels.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::tape::{NodeId, Tape};
use crate::nn::tensor::Tensor;
use crate::targets::{MaskedBatch, WindowConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("batch window {batch:?} differs from model window {model:?}")]
    WindowMismatch {
        batch: (usize, usize, usize),
        model: (usize, usize, usize),
    },
    #[error("malformed batch: {0}")]
    BadBatch(String),
}

/// Sizes of every learnable component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub enc_hidden: usize,
    pub blocks: usize,
    pub head_hidden: usize,
    /// Points emitted per reconstructed voxel.
    pub n_recon: usize,
    pub window: WindowConfig,
}

impl ModelConfig {
    pub fn num_classes(&self) -> usize {
        self.window.num_classes()
    }

    /// A deliberately small configuration for gradient checks and fast
    /// tests.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 8,
            enc_hidden: 8,
            blocks: 1,
            head_hidden: 8,
            n_recon: 4,
            window: WindowConfig::new(2, 2, 1).expect("2x2x1 window is non-trivial"),
        }
    }
}

/// All learnable tensors in a fixed, named order. The mask tokens `m_v`
/// (position token, 3 values) and `m_p` (point token, 9 values) are
/// ordinary parameters and sit at the end of the list.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
    names: Vec<String>,
}

impl ModelParams {
    /// Seeded Gaussian init: Xavier-scaled weights, zero biases, unit
    /// layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        let mut names = Vec::new();
        let linear = |name: String, fan_in: usize, fan_out: usize,
                          tensors: &mut Vec<Tensor>,
                          names: &mut Vec<String>,
                          rng: &mut ChaCha8Rng| {
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            tensors.push(Tensor::randn(fan_in, fan_out, std, rng));
            names.push(format!("{name}.w"));
            tensors.push(Tensor::zeros(1, fan_out));
            names.push(format!("{name}.b"));
        };

        let c = &config;
        linear("enc.l1".into(), 9, c.enc_hidden, &mut tensors, &mut names, &mut rng);
        linear("enc.l2".into(), c.enc_hidden, c.d_model, &mut tensors, &mut names, &mut rng);
        for b in 0..c.blocks {
            tensors.push(Tensor::filled(1, c.d_model, 1.0));
            names.push(format!("block{b}.ln1.g"));
            tensors.push(Tensor::zeros(1, c.d_model));
            names.push(format!("block{b}.ln1.b"));
            for proj in ["q", "k", "v", "o"] {
                linear(
                    format!("block{b}.attn.{proj}"),
                    c.d_model,
                    c.d_model,
                    &mut tensors,
                    &mut names,
                    &mut rng,
                );
            }
            tensors.push(Tensor::filled(1, c.d_model, 1.0));
            names.push(format!("block{b}.ln2.g"));
            tensors.push(Tensor::zeros(1, c.d_model));
            names.push(format!("block{b}.ln2.b"));
            linear(
                format!("block{b}.ff.l1"),
                c.d_model,
                2 * c.d_model,
                &mut tensors,
                &mut names,
                &mut rng,
            );
            linear(
                format!("block{b}.ff.l2"),
                2 * c.d_model,
                c.d_model,
                &mut tensors,
                &mut names,
                &mut rng,
            );
        }
        linear("jigsaw.l1".into(), c.d_model, c.head_hidden, &mut tensors, &mut names, &mut rng);
        linear(
            "jigsaw.l2".into(),
            c.head_hidden,
            c.num_classes(),
            &mut tensors,
            &mut names,
            &mut rng,
        );
        linear("recon.l1".into(), c.d_model, c.head_hidden, &mut tensors, &mut names, &mut rng);
        linear(
            "recon.l2".into(),
            c.head_hidden,
            3 * c.n_recon,
            &mut tensors,
            &mut names,
            &mut rng,
        );
        tensors.push(Tensor::randn(1, 3, 0.02, &mut rng));
        names.push("token.m_v".into());
        tensors.push(Tensor::randn(1, 9, 0.02, &mut rng));
        names.push("token.m_p".into());

        ModelParams {
            config,
            tensors,
            names,
        }
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors.len()
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        names: Vec<String>,
        tensors: Vec<Tensor>,
    ) -> Self {
        ModelParams {
            config,
            tensors,
            names,
        }
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug)]
pub struct ForwardOutput {
    /// R_p × num_classes logits, absent when no voxel is jigsaw-masked.
    pub logits: Option<NodeId>,
    /// R_s × 3·n_recon coordinates in [−1,1], absent when no voxel is
    /// shape-masked.
    pub recon: Option<NodeId>,
    /// Voxel ids matching logits rows, ascending.
    pub jigsaw_voxels: Vec<usize>,
    /// Voxel ids matching recon rows, ascending.
    pub shape_voxels: Vec<usize>,
    /// Final N×d trunk features (all voxels).
    pub trunk: NodeId,
}

/// Run the model over an assembled batch, recording onto `tape`.
pub fn forward(
    params: &ModelParams,
    batch: &MaskedBatch,
    tape: &mut Tape,
) -> Result<ForwardOutput, ModelError> {
    let cfg = &params.config;
    if batch.window != cfg.window {
        return Err(ModelError::WindowMismatch {
            batch: (batch.window.nx, batch.window.ny, batch.window.nz),
            model: (cfg.window.nx, cfg.window.ny, cfg.window.nz),
        });
    }
    let n = batch.num_voxels;
    let t = batch.points_per_voxel;
    if n == 0 {
        return Err(ModelError::BadBatch("batch has no voxels".into()));
    }
    if batch.features.len() != n * t * 9 || batch.point_mask.len() != n * t {
        return Err(ModelError::BadBatch(format!(
            "feature/mask buffers disagree with {n} voxels x {t} points"
        )));
    }

    // Register every parameter; leaf order defines gradient slots.
    let leaves: Vec<NodeId> = params
        .tensors
        .iter()
        .enumerate()
        .map(|(i, p)| tape.leaf(i, p))
        .collect();
    let by_name = |name: &str| -> NodeId {
        leaves[params.index_of(name).expect("registered param name")]
    };

    // Input features with learnable tokens written over the masked slots.
    let x = tape.constant(n * t, 9, batch.features.clone());
    let mv_rows: Vec<usize> = batch
        .jigsaw_masked
        .iter()
        .flat_map(|&v| (0..t).filter(move |&p| true_row(batch, v, p)).map(move |p| v * t + p))
        .collect();
    let mp_rows: Vec<usize> = batch
        .shape_masked
        .iter()
        .flat_map(|&v| (1..t).filter(move |&p| true_row(batch, v, p)).map(move |p| v * t + p))
        .collect();
    let x = if mv_rows.is_empty() {
        x
    } else {
        let m_v = by_name("token.m_v");
        tape.write_token(x, m_v, mv_rows, 0)
    };
    let x = if mp_rows.is_empty() {
        x
    } else {
        let m_p = by_name("token.m_p");
        tape.write_token(x, m_p, mp_rows, 0)
    };

    // Per-point encoder and masked max-pool to one feature per voxel.
    let h = {
        let w1 = by_name("enc.l1.w");
        let b1 = by_name("enc.l1.b");
        let w2 = by_name("enc.l2.w");
        let b2 = by_name("enc.l2.b");
        let a = tape.matmul(x, w1);
        let a = tape.add_bias(a, b1);
        let a = tape.gelu(a);
        let a = tape.matmul(a, w2);
        let a = tape.add_bias(a, b2);
        let a = tape.gelu(a);
        tape.max_pool_groups(a, t, batch.point_mask.clone())
    };

    // Voxels grouped by window, iterated in window order; batch order is
    // preserved inside each group.
    let mut windows: BTreeMap<(usize, usize, usize), Vec<usize>> = BTreeMap::new();
    for (vi, coord) in batch.coords.iter().enumerate() {
        let (wi, wj, wk) = cfg.window.window_of(*coord);
        windows.entry((wk, wj, wi)).or_default().push(vi);
    }

    let inv_sqrt_d = 1.0 / (cfg.d_model as f64).sqrt();
    let mut hidden = h;
    for b in 0..cfg.blocks {
        let pfx = format!("block{b}");
        let ln1 = {
            let g = by_name(&format!("{pfx}.ln1.g"));
            let be = by_name(&format!("{pfx}.ln1.b"));
            tape.layer_norm(hidden, g, be)
        };
        let q = linear(tape, ln1, by_name(&format!("{pfx}.attn.q.w")), by_name(&format!("{pfx}.attn.q.b")));
        let k = linear(tape, ln1, by_name(&format!("{pfx}.attn.k.w")), by_name(&format!("{pfx}.attn.k.b")));
        let v = linear(tape, ln1, by_name(&format!("{pfx}.attn.v.w")), by_name(&format!("{pfx}.attn.v.b")));

        let mut pieces = Vec::with_capacity(windows.len());
        for rows in windows.values() {
            let qw = tape.gather_rows(q, rows.clone());
            let kw = tape.gather_rows(k, rows.clone());
            let vw = tape.gather_rows(v, rows.clone());
            let scores = tape.matmul_nt(qw, kw);
            let scores = tape.scale(scores, inv_sqrt_d);
            let attn = tape.softmax_rows(scores);
            let mixed = tape.matmul(attn, vw);
            pieces.push((mixed, rows.clone()));
        }
        let merged = tape.assemble_rows(pieces, n);
        let projected = linear(
            tape,
            merged,
            by_name(&format!("{pfx}.attn.o.w")),
            by_name(&format!("{pfx}.attn.o.b")),
        );
        let after_attn = tape.add(hidden, projected);

        let ln2 = {
            let g = by_name(&format!("{pfx}.ln2.g"));
            let be = by_name(&format!("{pfx}.ln2.b"));
            tape.layer_norm(after_attn, g, be)
        };
        let f1 = linear(
            tape,
            ln2,
            by_name(&format!("{pfx}.ff.l1.w")),
            by_name(&format!("{pfx}.ff.l1.b")),
        );
        let f1 = tape.gelu(f1);
        let f2 = linear(
            tape,
            f1,
            by_name(&format!("{pfx}.ff.l2.w")),
            by_name(&format!("{pfx}.ff.l2.b")),
        );
        hidden = tape.add(after_attn, f2);
    }

    let logits = if batch.jigsaw_masked.is_empty() {
        None
    } else {
        let g = tape.gather_rows(hidden, batch.jigsaw_masked.clone());
        let a = linear(tape, g, by_name("jigsaw.l1.w"), by_name("jigsaw.l1.b"));
        let a = tape.gelu(a);
        Some(linear(tape, a, by_name("jigsaw.l2.w"), by_name("jigsaw.l2.b")))
    };
    let recon = if batch.shape_masked.is_empty() {
        None
    } else {
        let g = tape.gather_rows(hidden, batch.shape_masked.clone());
        let a = linear(tape, g, by_name("recon.l1.w"), by_name("recon.l1.b"));
        let a = tape.gelu(a);
        let raw = linear(tape, a, by_name("recon.l2.w"), by_name("recon.l2.b"));
        Some(tape.tanh(raw))
    };

    Ok(ForwardOutput {
        logits,
        recon,
        jigsaw_voxels: batch.jigsaw_masked.clone(),
        shape_voxels: batch.shape_masked.clone(),
        trunk: hidden,
    })
}

fn true_row(batch: &MaskedBatch, voxel: usize, point: usize) -> bool {
    batch.mask(voxel, point) > 0.0
}

fn linear(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let a = tape.matmul(x, w);
    tape.add_bias(a, b)
}

/// The three loss nodes for one forward pass. `mvj`/`mvr` are `None` when
/// their masked set was empty; the joint node treats them as zero.
#[derive(Debug)]
pub struct LossNodes {
    pub joint: NodeId,
    pub mvj: Option<NodeId>,
    pub mvr: Option<NodeId>,
}

impl LossNodes {
    pub fn joint_value(&self, tape: &Tape) -> f64 {
        tape.scalar(self.joint)
    }

    pub fn mvj_value(&self, tape: &Tape) -> f64 {
        self.mvj.map(|n| tape.scalar(n)).unwrap_or(0.0)
    }

    pub fn mvr_value(&self, tape: &Tape) -> f64 {
        self.mvr.map(|n| tape.scalar(n)).unwrap_or(0.0)
    }
}

/// Attach the weighted joint loss `α·L_cls + β·L_rec` to a forward pass.
pub fn loss_nodes(
    tape: &mut Tape,
    fwd: &ForwardOutput,
    batch: &MaskedBatch,
    alpha: f64,
    beta: f64,
) -> Result<LossNodes, ModelError> {
    let mvj = match fwd.logits {
        None => None,
        Some(logits) => {
            let labels = fwd
                .jigsaw_voxels
                .iter()
                .map(|v| {
                    batch
                        .jigsaw_target
                        .labels
                        .iter()
                        .find(|(voxel, _)| voxel == v)
                        .map(|&(_, label)| label)
                        .ok_or_else(|| {
                            ModelError::BadBatch(format!("no jigsaw label for voxel {v}"))
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(tape.cross_entropy_mean(logits, labels))
        }
    };
    let mvr = match fwd.recon {
        None => None,
        Some(recon) => {
            let targets = fwd
                .shape_voxels
                .iter()
                .map(|v| {
                    batch
                        .shape_target
                        .point_sets
                        .iter()
                        .find(|(voxel, _)| voxel == v)
                        .map(|(_, pts)| pts.clone())
                        .ok_or_else(|| {
                            ModelError::BadBatch(format!("no shape target for voxel {v}"))
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(tape.chamfer_rows(recon, targets))
        }
    };

    let joint = match (mvj, mvr) {
        (Some(j), Some(r)) => {
            let a = tape.scale(j, alpha);
            let b = tape.scale(r, beta);
            tape.add(a, b)
        }
        (Some(j), None) => tape.scale(j, alpha),
        (None, Some(r)) => tape.scale(r, beta),
        (None, None) => tape.scalar_const(0.0),
    };
    Ok(LossNodes { joint, mvj, mvr })
}

/// (correct, total) argmax classification counts over logits rows; `None`
/// when the batch had no jigsaw-masked voxels.
pub fn jigsaw_hits(tape: &Tape, fwd: &ForwardOutput, batch: &MaskedBatch) -> Option<(usize, usize)> {
    let logits = fwd.logits?;
    let (rows, cols) = tape.shape(logits);
    let values = tape.value(logits);
    let mut correct = 0;
    for (row, v) in fwd.jigsaw_voxels.iter().enumerate() {
        let label = batch
            .jigsaw_target
            .labels
            .iter()
            .find(|(voxel, _)| voxel == v)
            .map(|&(_, l)| l)
            .expect("label for logits row");
        let row_vals = &values[row * cols..(row + 1) * cols];
        let argmax = row_vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .expect("non-empty row");
        if argmax == label {
            correct += 1;
        }
    }
    Some((correct, rows))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{Frame, RawPoint};
    use crate::nn::loss::{chamfer_l2, mvj_loss};
    use crate::sampling::{build_mask_plan, MaskPlan, SamplingStrategy};
    use crate::targets::assemble_masked_batch;
    use crate::voxel::{voxelize, GridConfig};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_grid() -> GridConfig {
        GridConfig::new([0.0; 3], [8.0, 8.0, 2.0], [1.0, 1.0, 2.0], 4).unwrap()
    }

    fn scene(seed: u64, num_points: usize) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..num_points)
            .map(|_| {
                RawPoint::new(
                    rng.gen_range(0.0..8.0),
                    rng.gen_range(0.0..8.0),
                    rng.gen_range(0.0..2.0),
                    0.0,
                )
            })
            .collect();
        Frame::new(points, "s", 0)
    }

    fn tiny_batch(seed: u64) -> MaskedBatch {
        let vf = voxelize(&scene(seed, 40), &tiny_grid()).unwrap();
        let plan = build_mask_plan(&vf, SamplingStrategy::Rfvs, 0.2, 0.2, seed).unwrap();
        assemble_masked_batch(&vf, &plan, &WindowConfig::new(2, 2, 1).unwrap()).unwrap()
    }

    #[test]
    fn forward_shapes_follow_mask_counts() {
        let batch = tiny_batch(1);
        let params = ModelParams::init(ModelConfig::tiny(), 7);
        let mut tape = Tape::new();
        let fwd = forward(&params, &batch, &mut tape).unwrap();
        let rp = batch.jigsaw_masked.len();
        let rs = batch.shape_masked.len();
        assert!(rp > 0 && rs > 0, "want both masked sets exercised");
        assert_eq!(tape.shape(fwd.logits.unwrap()), (rp, 4));
        assert_eq!(tape.shape(fwd.recon.unwrap()), (rs, 12));
        assert_eq!(tape.shape(fwd.trunk), (batch.num_voxels, 8));
        // Recon values live in (−1,1) by construction.
        assert!(tape
            .value(fwd.recon.unwrap())
            .iter()
            .all(|v| v.abs() < 1.0));
    }

    #[test]
    fn no_masked_voxels_means_no_head_outputs() {
        let vf = voxelize(&scene(2, 40), &tiny_grid()).unwrap();
        let plan = build_mask_plan(&vf, SamplingStrategy::Rfvs, 0.0, 0.0, 2).unwrap();
        let batch =
            assemble_masked_batch(&vf, &plan, &WindowConfig::new(2, 2, 1).unwrap()).unwrap();
        let params = ModelParams::init(ModelConfig::tiny(), 7);
        let mut tape = Tape::new();
        let fwd = forward(&params, &batch, &mut tape).unwrap();
        assert!(fwd.logits.is_none());
        assert!(fwd.recon.is_none());
        let losses = loss_nodes(&mut tape, &fwd, &batch, 1.0, 1.0).unwrap();
        assert_eq!(losses.joint_value(&tape), 0.0);
        let grads = tape.backward(losses.joint, params.num_tensors());
        assert!(grads.iter().all(|g| g.data.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let batch = tiny_batch(3);
        let params = ModelParams::init(ModelConfig::tiny(), 9);
        let run = || {
            let mut tape = Tape::new();
            let fwd = forward(&params, &batch, &mut tape).unwrap();
            let losses = loss_nodes(&mut tape, &fwd, &batch, 1.0, 1.0).unwrap();
            (
                tape.value(fwd.trunk).to_vec(),
                losses.joint_value(&tape).to_bits(),
            )
        };
        let (t1, l1) = run();
        let (t2, l2) = run();
        assert!(t1.iter().zip(&t2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(l1, l2);
    }

    #[test]
    fn singleton_window_reduces_to_feedforward_path() {
        // One voxel with one point: its window contains only itself, so
        // attention mixes nothing and the trunk output must equal the
        // analytically reduced residual computation.
        let cfg = tiny_grid();
        let frame = Frame::new(vec![RawPoint::new(0.3, 0.4, 0.5, 0.0)], "s", 0);
        let vf = voxelize(&frame, &cfg).unwrap();
        let plan = MaskPlan {
            kept: vec![0],
            jigsaw_masked: vec![],
            shape_masked: vec![],
            strategy: SamplingStrategy::Rfvs,
            rp: 0.0,
            rs: 0.0,
            seed: 0,
        };
        let batch =
            assemble_masked_batch(&vf, &plan, &WindowConfig::new(2, 2, 1).unwrap()).unwrap();
        let params = ModelParams::init(ModelConfig::tiny(), 11);
        let mut tape = Tape::new();
        let fwd = forward(&params, &batch, &mut tape).unwrap();
        let got = tape.value(fwd.trunk).to_vec();

        // Reduced computation in plain f64: encoder, then
        // h + Wo·(Wv·ln1(h) + bv) + bo, then h2 + ff(ln2(h2)).
        let p = |name: &str| &params.tensors[params.index_of(name).unwrap()];
        let matvec = |w: &Tensor, x: &[f64], b: &Tensor| -> Vec<f64> {
            let mut out = b.data.clone();
            for (i, &xi) in x.iter().enumerate() {
                for j in 0..w.cols {
                    out[j] += xi * w.at(i, j);
                }
            }
            out
        };
        let gelu = |v: &mut Vec<f64>| {
            for x in v.iter_mut() {
                let u = 0.7978845608028654 * (*x + 0.044715 * *x * *x * *x);
                *x = 0.5 * *x * (1.0 + u.tanh());
            }
        };
        let layer_norm = |x: &[f64], g: &Tensor, b: &Tensor| -> Vec<f64> {
            let c = x.len() as f64;
            let mu = x.iter().sum::<f64>() / c;
            let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c;
            let inv = 1.0 / (var + 1e-5).sqrt();
            x.iter()
                .enumerate()
                .map(|(j, v)| (v - mu) * inv * g.data[j] + b.data[j])
                .collect()
        };

        // Feature row of the single real point.
        let feats: Vec<f64> = (0..9).map(|c| batch.feature(0, 0, c)).collect();
        let mut e1 = matvec(p("enc.l1.w"), &feats, p("enc.l1.b"));
        gelu(&mut e1);
        let mut h = matvec(p("enc.l2.w"), &e1, p("enc.l2.b"));
        gelu(&mut h);
        // Max-pool over one real row is the row itself.
        let ln1 = layer_norm(&h, p("block0.ln1.g"), p("block0.ln1.b"));
        // Softmax over a single key is 1, so mixing yields exactly v.
        let v = matvec(p("block0.attn.v.w"), &ln1, p("block0.attn.v.b"));
        let o = matvec(p("block0.attn.o.w"), &v, p("block0.attn.o.b"));
        let h2: Vec<f64> = h.iter().zip(&o).map(|(a, b)| a + b).collect();
        let ln2 = layer_norm(&h2, p("block0.ln2.g"), p("block0.ln2.b"));
        let mut f1 = matvec(p("block0.ff.l1.w"), &ln2, p("block0.ff.l1.b"));
        gelu(&mut f1);
        let f2 = matvec(p("block0.ff.l2.w"), &f1, p("block0.ff.l2.b"));
        let want: Vec<f64> = h2.iter().zip(&f2).map(|(a, b)| a + b).collect();

        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "trunk {g} vs reduced {w}");
        }
    }

    #[test]
    fn tape_losses_match_standalone_functions() {
        let batch = tiny_batch(5);
        let params = ModelParams::init(ModelConfig::tiny(), 13);
        let mut tape = Tape::new();
        let fwd = forward(&params, &batch, &mut tape).unwrap();
        let losses = loss_nodes(&mut tape, &fwd, &batch, 1.0, 1.0).unwrap();

        // Rebuild the same quantities with the scalar reference functions.
        let (rp, c) = tape.shape(fwd.logits.unwrap());
        let lv = tape.value(fwd.logits.unwrap());
        let logits: Vec<Vec<f64>> = (0..rp).map(|r| lv[r * c..(r + 1) * c].to_vec()).collect();
        let labels: Vec<usize> = fwd
            .jigsaw_voxels
            .iter()
            .map(|v| {
                batch
                    .jigsaw_target
                    .labels
                    .iter()
                    .find(|(voxel, _)| voxel == v)
                    .unwrap()
                    .1
            })
            .collect();
        let want_mvj = mvj_loss(&logits, &labels).unwrap().value;
        assert!((losses.mvj_value(&tape) - want_mvj).abs() < 1e-12);

        let (rs, cc) = tape.shape(fwd.recon.unwrap());
        let rv = tape.value(fwd.recon.unwrap());
        let mut want_mvr = 0.0;
        for (row, v) in fwd.shape_voxels.iter().enumerate() {
            let pred: Vec<[f64; 3]> = (0..cc / 3)
                .map(|i| {
                    [
                        rv[row * cc + 3 * i],
                        rv[row * cc + 3 * i + 1],
                        rv[row * cc + 3 * i + 2],
                    ]
                })
                .collect();
            let target = &batch
                .shape_target
                .point_sets
                .iter()
                .find(|(voxel, _)| voxel == v)
                .unwrap()
                .1;
            want_mvr += chamfer_l2(&pred, target).unwrap();
        }
        want_mvr /= rs as f64;
        assert!((losses.mvr_value(&tape) - want_mvr).abs() < 1e-12);

        let joint = losses.joint_value(&tape);
        assert!((joint - (want_mvj + want_mvr)).abs() < 1e-12);
    }

    #[test]
    fn permuting_voxels_within_batch_preserves_losses() {
        let batch = tiny_batch(8);
        let params = ModelParams::init(ModelConfig::tiny(), 15);
        let mut perm: Vec<usize> = (0..batch.num_voxels).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        perm.shuffle(&mut rng);
        let permuted = test_support::permute_batch(&batch, &perm);

        let eval = |b: &MaskedBatch| {
            let mut tape = Tape::new();
            let fwd = forward(&params, b, &mut tape).unwrap();
            let losses = loss_nodes(&mut tape, &fwd, b, 1.0, 1.0).unwrap();
            (
                losses.mvj_value(&tape),
                losses.mvr_value(&tape),
                losses.joint_value(&tape),
            )
        };
        let (j1, r1, t1) = eval(&batch);
        let (j2, r2, t2) = eval(&permuted);
        assert!((j1 - j2).abs() < 1e-9, "mvj {j1} vs {j2}");
        assert!((r1 - r2).abs() < 1e-9, "mvr {r1} vs {r2}");
        assert!((t1 - t2).abs() < 1e-9);
    }

    #[test]
    fn permuting_points_within_voxel_preserves_encoding() {
        // Swap two real points of a kept voxel: max-pool makes the voxel
        // encoding order-free, so trunk and losses are unchanged.
        let batch = tiny_batch(12);
        let voxel = *batch
            .kept
            .iter()
            .find(|&&v| batch.real_points(v) >= 2)
            .expect("a kept voxel with 2+ points");
        let mut swapped = batch.clone();
        let t = batch.points_per_voxel;
        for c in 0..9 {
            swapped
                .features
                .swap((voxel * t) * 9 + c, (voxel * t + 1) * 9 + c);
        }
        let params = ModelParams::init(ModelConfig::tiny(), 21);
        let eval = |b: &MaskedBatch| {
            let mut tape = Tape::new();
            let fwd = forward(&params, b, &mut tape).unwrap();
            let losses = loss_nodes(&mut tape, &fwd, b, 1.0, 1.0).unwrap();
            (tape.value(fwd.trunk).to_vec(), losses.joint_value(&tape))
        };
        let (trunk_a, loss_a) = eval(&batch);
        let (trunk_b, loss_b) = eval(&swapped);
        assert_eq!(trunk_a, trunk_b);
        assert_eq!(loss_a, loss_b);
    }

    #[test]
    fn unused_heads_get_exactly_zero_gradients() {
        // Plan with jigsaw masking only: recon head and m_p must have
        // exactly zero gradient; m_v must not.
        let vf = voxelize(&scene(31, 40), &tiny_grid()).unwrap();
        let n = vf.num_voxels();
        let plan = MaskPlan {
            kept: (1..n).collect(),
            jigsaw_masked: vec![0],
            shape_masked: vec![],
            strategy: SamplingStrategy::Rfvs,
            rp: 0.0,
            rs: 0.0,
            seed: 0,
        };
        let batch =
            assemble_masked_batch(&vf, &plan, &WindowConfig::new(2, 2, 1).unwrap()).unwrap();
        let params = ModelParams::init(ModelConfig::tiny(), 23);
        let mut tape = Tape::new();
        let fwd = forward(&params, &batch, &mut tape).unwrap();
        let losses = loss_nodes(&mut tape, &fwd, &batch, 1.0, 1.0).unwrap();
        let grads = tape.backward(losses.joint, params.num_tensors());
        for name in ["recon.l1.w", "recon.l1.b", "recon.l2.w", "recon.l2.b", "token.m_p"] {
            let g = &grads[params.index_of(name).unwrap()];
            assert!(
                g.data.iter().all(|&x| x == 0.0),
                "{name} expected exactly zero grad"
            );
        }
        let mv = &grads[params.index_of("token.m_v").unwrap()];
        assert!(mv.data.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn doubling_beta_doubles_recon_head_gradients_exactly() {
        let batch = tiny_batch(17);
        let params = ModelParams::init(ModelConfig::tiny(), 29);
        let grads_at = |beta: f64| {
            let mut tape = Tape::new();
            let fwd = forward(&params, &batch, &mut tape).unwrap();
            let losses = loss_nodes(&mut tape, &fwd, &batch, 1.0, beta).unwrap();
            tape.backward(losses.joint, params.num_tensors())
        };
        let g1 = grads_at(1.0);
        let g2 = grads_at(2.0);
        for name in ["recon.l1.w", "recon.l1.b", "recon.l2.w", "recon.l2.b"] {
            let i = params.index_of(name).unwrap();
            for (a, b) in g1[i].data.iter().zip(&g2[i].data) {
                assert_eq!(2.0 * a, *b, "{name} gradient not exactly doubled");
            }
        }
        // Jigsaw head gradients are untouched by β.
        let j = params.index_of("jigsaw.l2.w").unwrap();
        assert_eq!(g1[j].data, g2[j].data);
    }

    #[test]
    fn window_mismatch_is_reported() {
        let batch = tiny_batch(19);
        let mut cfg = ModelConfig::tiny();
        cfg.window = WindowConfig::new(4, 4, 1).unwrap();
        let params = ModelParams::init(cfg, 1);
        let mut tape = Tape::new();
        assert!(matches!(
            forward(&params, &batch, &mut tape),
            Err(ModelError::WindowMismatch { .. })
        ));
    }

    #[test]
    fn param_registry_is_stable_and_counted() {
        let params = ModelParams::init(ModelConfig::tiny(), 3);
        assert_eq!(params.num_tensors(), params.names().count());
        assert!(params.num_scalars() > 0);
        assert_eq!(params.index_of("token.m_v").map(|i| params.name(i)), Some("token.m_v"));
        assert_eq!(params.index_of("token.m_p"), Some(params.num_tensors() - 1));
        // Same seed, same init.
        assert_eq!(params, ModelParams::init(ModelConfig::tiny(), 3));
        assert_ne!(params, ModelParams::init(ModelConfig::tiny(), 4));
    }
}
