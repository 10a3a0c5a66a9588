//! Mask selection over non-empty voxels: furthest-voxel sampling, the
//! reversed keep rule (R-FVS), the FVS and random ablation variants, and
//! the split of masked voxels into jigsaw and shape subsets.
//!
//! Distances are Euclidean in voxel-index space. Squared distances between
//! integer grid coordinates are exact in f64 for any realistic grid, so
//! comparisons carry no rounding ambiguity.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::voxel::{VoxelCoord, VoxelizedFrame};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("sample size {k} out of range 1..={n}")]
    SampleSizeOutOfRange { k: usize, n: usize },
    #[error("mask ratios r_p={rp} + r_s={rs} must satisfy 0 <= r_p + r_s < 1")]
    BadRatios { rp: f64, rs: f64 },
    #[error("frame has no voxels")]
    EmptyFrame,
    #[error("malformed mask plan line {line}: {reason}")]
    BadPlanLine { line: usize, reason: String },
}

/// Which voxels to mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// Furthest-voxel sampling selects the voxels to KEEP; the masked set
    /// is the complement, concentrated in dense regions.
    Rfvs,
    /// Furthest-voxel sampling selects the voxels to MASK (ablation).
    Fvs,
    /// Seeded uniform choice of the masked set (ablation).
    Random,
}

impl SamplingStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingStrategy::Rfvs => "rfvs",
            SamplingStrategy::Fvs => "fvs",
            SamplingStrategy::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rfvs" => Some(SamplingStrategy::Rfvs),
            "fvs" => Some(SamplingStrategy::Fvs),
            "random" => Some(SamplingStrategy::Random),
            _ => None,
        }
    }
}

impl std::fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Disjoint partition of voxel indices into kept, jigsaw-masked, and
/// shape-masked sets, with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub kept: Vec<usize>,
    pub jigsaw_masked: Vec<usize>,
    pub shape_masked: Vec<usize>,
    pub strategy: SamplingStrategy,
    pub rp: f64,
    pub rs: f64,
    pub seed: u64,
}

impl MaskPlan {
    pub fn num_voxels(&self) -> usize {
        self.kept.len() + self.jigsaw_masked.len() + self.shape_masked.len()
    }
}

fn sq_dist(a: VoxelCoord, b: VoxelCoord) -> f64 {
    let dx = a.i as f64 - b.i as f64;
    let dy = a.j as f64 - b.j as f64;
    let dz = a.k as f64 - b.k as f64;
    dx * dx + dy * dy + dz * dz
}

/// Greedy furthest-point sampling over voxel coordinates.
///
/// Starts from the voxel with the lexicographically smallest (k, j, i)
/// coordinate, then repeatedly adds the voxel maximizing its minimum
/// distance to the selected set, breaking ties toward the lowest index.
/// Returns indices in selection order. Runs in O(N·k).
pub fn furthest_voxel_sampling(
    coords: &[VoxelCoord],
    k: usize,
) -> Result<Vec<usize>, SamplingError> {
    let n = coords.len();
    if k == 0 || k > n {
        return Err(SamplingError::SampleSizeOutOfRange { k, n });
    }
    let start = (0..n)
        .min_by_key(|&i| (coords[i].k, coords[i].j, coords[i].i, i))
        .expect("n >= 1");

    let mut selected = Vec::with_capacity(k);
    let mut min_sq = vec![f64::INFINITY; n];
    let mut chosen = vec![false; n];
    let mut next = start;
    for _ in 0..k {
        selected.push(next);
        chosen[next] = true;
        let pivot = coords[next];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if chosen[i] {
                continue;
            }
            let d = sq_dist(coords[i], pivot);
            if d < min_sq[i] {
                min_sq[i] = d;
            }
            // Strict > keeps the lowest index on ties.
            if min_sq[i] > best_d {
                best_d = min_sq[i];
                best = i;
            }
        }
        if best == usize::MAX {
            break; // selection exhausted (k == n)
        }
        next = best;
    }
    Ok(selected)
}

/// Number of voxels to keep unmasked: `⌊N·(1 − r_p − r_s)⌋`.
pub fn kept_count(n: usize, rp: f64, rs: f64) -> usize {
    (n as f64 * (1.0 - rp - rs)).floor() as usize
}

/// Build the mask partition for one frame.
///
/// The masked set (complement of kept, size `⌈N·(r_p+r_s)⌉`) is shuffled
/// with the seed; the first `⌈N·r_p⌉` go to the jigsaw set and the rest to
/// the shape set. All three sets are returned sorted ascending.
pub fn build_mask_plan(
    vf: &VoxelizedFrame,
    strategy: SamplingStrategy,
    rp: f64,
    rs: f64,
    seed: u64,
) -> Result<MaskPlan, SamplingError> {
    let n = vf.num_voxels();
    if n == 0 {
        return Err(SamplingError::EmptyFrame);
    }
    if !(rp >= 0.0 && rs >= 0.0 && rp + rs < 1.0) {
        return Err(SamplingError::BadRatios { rp, rs });
    }
    let coords: Vec<VoxelCoord> = vf.voxels.iter().map(|v| v.coord).collect();
    let keep_n = kept_count(n, rp, rs);
    let mask_n = n - keep_n;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut kept, mut masked): (Vec<usize>, Vec<usize>) = match strategy {
        SamplingStrategy::Rfvs => {
            if keep_n == 0 {
                (Vec::new(), (0..n).collect())
            } else {
                let sel = furthest_voxel_sampling(&coords, keep_n)?;
                split_complement(n, &sel)
            }
        }
        SamplingStrategy::Fvs => {
            if mask_n == 0 {
                ((0..n).collect(), Vec::new())
            } else {
                let sel = furthest_voxel_sampling(&coords, mask_n)?;
                let (m, k) = split_complement(n, &sel);
                (k, m)
            }
        }
        SamplingStrategy::Random => {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            let masked = all[..mask_n].to_vec();
            let kept = all[mask_n..].to_vec();
            (kept, masked)
        }
    };

    let jig_n = (n as f64 * rp).ceil() as usize;
    let jig_n = jig_n.min(masked.len());
    masked.shuffle(&mut rng);
    let mut jigsaw: Vec<usize> = masked[..jig_n].to_vec();
    let mut shape: Vec<usize> = masked[jig_n..].to_vec();
    kept.sort_unstable();
    jigsaw.sort_unstable();
    shape.sort_unstable();

    Ok(MaskPlan {
        kept,
        jigsaw_masked: jigsaw,
        shape_masked: shape,
        strategy,
        rp,
        rs,
        seed,
    })
}

/// (selected, complement) as index sets over `0..n`.
fn split_complement(n: usize, selected: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut in_sel = vec![false; n];
    for &i in selected {
        in_sel[i] = true;
    }
    let sel = selected.to_vec();
    let rest = (0..n).filter(|&i| !in_sel[i]).collect();
    (sel, rest)
}

/// Serialize a plan as line-oriented text for reproducibility audits.
pub fn mask_plan_to_string(plan: &MaskPlan) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "strategy={} rp={} rs={} seed={}",
        plan.strategy, plan.rp, plan.rs, plan.seed
    );
    for (name, set) in [
        ("kept", &plan.kept),
        ("jigsaw", &plan.jigsaw_masked),
        ("shape", &plan.shape_masked),
    ] {
        let _ = write!(out, "{name}:");
        for i in set {
            let _ = write!(out, " {i}");
        }
        out.push('\n');
    }
    out
}

/// Parse the text form produced by [`mask_plan_to_string`].
pub fn parse_mask_plan(text: &str) -> Result<MaskPlan, SamplingError> {
    let bad = |line: usize, reason: &str| SamplingError::BadPlanLine {
        line,
        reason: reason.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
    let mut strategy = None;
    let mut rp = None;
    let mut rs = None;
    let mut seed = None;
    for field in header.split_whitespace() {
        let (key, val) = field.split_once('=').ok_or_else(|| bad(1, "expected key=value"))?;
        match key {
            "strategy" => {
                strategy =
                    Some(SamplingStrategy::parse(val).ok_or_else(|| bad(1, "unknown strategy"))?)
            }
            "rp" => rp = Some(val.parse().map_err(|_| bad(1, "bad rp"))?),
            "rs" => rs = Some(val.parse().map_err(|_| bad(1, "bad rs"))?),
            "seed" => seed = Some(val.parse().map_err(|_| bad(1, "bad seed"))?),
            _ => return Err(bad(1, "unknown header field")),
        }
    }
    let mut sets: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut seen = [false; 3];
    for (i, raw) in lines {
        let line = i + 1;
        let (name, rest) = raw.split_once(':').ok_or_else(|| bad(line, "expected name: list"))?;
        let slot = match name {
            "kept" => 0,
            "jigsaw" => 1,
            "shape" => 2,
            _ => return Err(bad(line, "unknown set name")),
        };
        if seen[slot] {
            return Err(bad(line, "duplicate set"));
        }
        seen[slot] = true;
        for tok in rest.split_whitespace() {
            sets[slot].push(tok.parse().map_err(|_| bad(line, "bad index"))?);
        }
    }
    if !seen.iter().all(|&s| s) {
        return Err(bad(text.lines().count(), "missing one of kept/jigsaw/shape"));
    }
    let [kept, jigsaw_masked, shape_masked] = sets;
    Ok(MaskPlan {
        kept,
        jigsaw_masked,
        shape_masked,
        strategy: strategy.ok_or_else(|| bad(1, "missing strategy"))?,
        rp: rp.ok_or_else(|| bad(1, "missing rp"))?,
        rs: rs.ok_or_else(|| bad(1, "missing rs"))?,
        seed: seed.ok_or_else(|| bad(1, "missing seed"))?,
    })
}

/// Deterministic per-(epoch, frame) seed derived from the base seed, so
/// masks re-randomize across epochs without global RNG state.
pub fn mask_seed(base_seed: u64, epoch: usize, frame_idx: usize) -> u64 {
    // splitmix64-style finalizer over the three inputs.
    let mut x = base_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(epoch as u64)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9)
        .wrapping_add(frame_idx as u64);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

/// Uniform random voxel layouts for tests and fuzzing helpers.
#[doc(hidden)]
pub fn random_coords(n: usize, dims: [usize; 3], rng: &mut impl Rng) -> Vec<VoxelCoord> {
    use std::collections::BTreeSet;
    let mut set = BTreeSet::new();
    while set.len() < n {
        set.insert((
            rng.gen_range(0..dims[2]),
            rng.gen_range(0..dims[1]),
            rng.gen_range(0..dims[0]),
        ));
    }
    // BTreeSet iterates in (k,j,i) order; shuffle so index order is not
    // correlated with spatial order.
    let mut coords: Vec<VoxelCoord> = set
        .into_iter()
        .map(|(k, j, i)| VoxelCoord::new(i, j, k))
        .collect();
    coords.shuffle(rng);
    coords
}
