//! Full-model gradient verification against central finite differences.
//!
//! Every scalar parameter — weights, biases, layer-norm gains, and both
//! mask tokens — is perturbed by ±h and the numeric slope compared to the
//! reverse-mode gradient. Double precision makes a 1e-4 relative
//! tolerance meaningful at h=1e-5.

use crate::nn::model::{forward, loss_nodes, ModelConfig, ModelError, ModelParams};
use crate::nn::tape::Tape;
use crate::targets::MaskedBatch;

/// Which loss to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Classification loss only (α=1, β=0).
    Jigsaw,
    /// Reconstruction loss only (α=0, β=1).
    Recon,
    /// Both with α=β=1.
    Joint,
}

impl LossKind {
    fn weights(self) -> (f64, f64) {
        match self {
            LossKind::Jigsaw => (1.0, 0.0),
            LossKind::Recon => (0.0, 1.0),
            LossKind::Joint => (1.0, 1.0),
        }
    }
}

/// Worst-case relative error and where it occurred.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub scalars_checked: usize,
    pub loss: LossKind,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with a floor so near-zero gradient pairs compare
/// against the floor rather than each other.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Compare reverse-mode gradients of the chosen loss against central
/// finite differences for every parameter scalar.
///
/// `corrupt_param`: optional test hook naming a parameter whose computed
/// gradient is perturbed before comparison, to demonstrate that the check
/// actually detects wrong gradients.
pub fn grad_check(
    params: &ModelParams,
    batch: &MaskedBatch,
    kind: LossKind,
    h: f64,
    corrupt_param: Option<&str>,
) -> Result<GradCheckReport, ModelError> {
    let (alpha, beta) = kind.weights();
    let eval = |p: &ModelParams| -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let fwd = forward(p, batch, &mut tape)?;
        let losses = loss_nodes(&mut tape, &fwd, batch, alpha, beta)?;
        Ok(losses.joint_value(&tape))
    };

    let mut tape = Tape::new();
    let fwd = forward(params, batch, &mut tape)?;
    let losses = loss_nodes(&mut tape, &fwd, batch, alpha, beta)?;
    let mut grads = tape.backward(losses.joint, params.num_tensors());
    if let Some(name) = corrupt_param {
        let idx = params
            .index_of(name)
            .ok_or_else(|| ModelError::BadBatch(format!("unknown parameter {name:?}")))?;
        for g in grads[idx].data.iter_mut() {
            *g += 1.0;
        }
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        scalars_checked: 0,
        loss: kind,
    };
    let mut probe = params.clone();
    for ti in 0..params.num_tensors() {
        for i in 0..params.tensors[ti].data.len() {
            let original = probe.tensors[ti].data[i];
            probe.tensors[ti].data[i] = original + h;
            let plus = eval(&probe)?;
            probe.tensors[ti].data[i] = original - h;
            let minus = eval(&probe)?;
            probe.tensors[ti].data[i] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads[ti].data[i];
            let err = rel_err(analytic, numeric);
            report.scalars_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = params.name(ti).to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// The standard tiny configuration and batch used for gradient checks:
/// a handful of voxels, both mask sets non-empty, every parameter on an
/// active path.
pub fn gradcheck_fixture(seed: u64) -> (ModelParams, MaskedBatch) {
    use crate::io::{Frame, RawPoint};
    use crate::sampling::MaskPlan;
    use crate::sampling::SamplingStrategy;
    use crate::targets::assemble_masked_batch;
    use crate::voxel::{voxelize, GridConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let grid = GridConfig::new([0.0; 3], [4.0, 4.0, 2.0], [1.0, 1.0, 2.0], 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Five voxels: three kept, one jigsaw-masked, one shape-masked, with
    // 2–4 points each in distinct cells.
    let cells = [(0usize, 0usize), (1, 0), (2, 1), (0, 2), (3, 3)];
    let mut points = Vec::new();
    for (ci, &(cx, cy)) in cells.iter().enumerate() {
        let count = 2 + (ci % 3);
        for _ in 0..count {
            points.push(RawPoint::new(
                cx as f64 + rng.gen_range(0.05..0.95),
                cy as f64 + rng.gen_range(0.05..0.95),
                rng.gen_range(0.05..1.95),
                0.0,
            ));
        }
    }
    let vf = voxelize(&Frame::new(points, "gradcheck", 0), &grid).unwrap();
    assert_eq!(vf.num_voxels(), 5);
    let plan = MaskPlan {
        kept: vec![0, 2, 4],
        jigsaw_masked: vec![1],
        shape_masked: vec![3],
        strategy: SamplingStrategy::Rfvs,
        rp: 0.2,
        rs: 0.2,
        seed,
    };
    let cfg = ModelConfig::tiny();
    let batch = assemble_masked_batch(&vf, &plan, &cfg.window).unwrap();
    let params = ModelParams::init(cfg, seed ^ 0x5eed);
    (params, batch)
}
