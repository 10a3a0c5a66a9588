//! Pretext-task supervision: window-relative jigsaw labels, normalized
//! shape-reconstruction targets, and assembly of the network-ready masked
//! batch with symbolic token markers.
//!
//! Token substitution here is symbolic — marker flags say which rows and
//! columns the model must overwrite with its learnable token values at
//! forward time. The batch itself never contains masked geometry, which is
//! what makes the no-leakage property testable at this layer.

use thiserror::Error;

use crate::sampling::MaskPlan;
use crate::voxel::{GridConfig, Voxel, VoxelCoord, VoxelizedFrame};

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("invalid window config: product of sides must be at least 2, got {0}")]
    TrivialWindow(usize),
    #[error("mask plan covers {plan} voxels but frame has {frame}")]
    PlanMismatch { plan: usize, frame: usize },
}

/// Voxels per attention window along each grid axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl WindowConfig {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self, TargetError> {
        let classes = nx * ny * nz;
        if classes < 2 {
            return Err(TargetError::TrivialWindow(classes));
        }
        Ok(WindowConfig { nx, ny, nz })
    }

    /// Number of jigsaw classes = cells per window.
    pub fn num_classes(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Which window a voxel belongs to.
    pub fn window_of(&self, coord: VoxelCoord) -> (usize, usize, usize) {
        (coord.i / self.nx, coord.j / self.ny, coord.k / self.nz)
    }
}

/// Class label: the voxel's position within its window, flattened x-fastest.
pub fn window_relative_index(coord: VoxelCoord, w: &WindowConfig) -> usize {
    (coord.i % w.nx) + (coord.j % w.ny) * w.nx + (coord.k % w.nz) * w.nx * w.ny
}

/// Index of the point closest to the voxel's cluster mean (lowest index on
/// ties); this is the single point a shape-masked voxel retains.
pub fn select_retained_point(voxel: &Voxel) -> usize {
    let mut best = 0usize;
    let mut best_sq = f64::INFINITY;
    for (i, p) in voxel.points.iter().enumerate() {
        let sq = p.cx * p.cx + p.cy * p.cy + p.cz * p.cz;
        if sq < best_sq {
            best_sq = sq;
            best = i;
        }
    }
    best
}

/// Per-point voxel-center offsets normalized by the voxel half-extent to
/// [−1,1]³, clamped to absorb boundary overhang.
pub fn build_shape_target(voxel: &Voxel, cfg: &GridConfig) -> Vec<[f64; 3]> {
    let half = [
        cfg.voxel_size[0] / 2.0,
        cfg.voxel_size[1] / 2.0,
        cfg.voxel_size[2] / 2.0,
    ];
    voxel
        .points
        .iter()
        .map(|p| {
            [
                (p.vx / half[0]).clamp(-1.0, 1.0),
                (p.vy / half[1]).clamp(-1.0, 1.0),
                (p.vz / half[2]).clamp(-1.0, 1.0),
            ]
        })
        .collect()
}

/// Jigsaw labels for the masked voxels, keyed by voxel index.
#[derive(Debug, Clone, PartialEq)]
pub struct JigsawTarget {
    pub labels: Vec<(usize, usize)>,
}

/// Normalized point sets for the shape-masked voxels, keyed by voxel index.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTarget {
    pub point_sets: Vec<(usize, Vec<[f64; 3]>)>,
}

/// How the model must treat each voxel's feature rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoxelRole {
    /// Full 9 features visible.
    Kept,
    /// Columns 0–2 of every real row replaced by the position token.
    JigsawMasked,
    /// Row 0 keeps the retained point; rows 1..t−1 replaced entirely by
    /// the shape token.
    ShapeMasked,
}

/// Network-ready tensor payload for one frame: dense N×T×9 features with
/// masked entries zeroed, a padding mask, symbolic token markers, and both
/// target sets.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    /// Row-major `[voxel][point][feature]`; marked entries are zero and
    /// only become token values inside the model.
    pub features: Vec<f64>,
    /// 1.0 where the row is a real point (visible or token-substituted),
    /// 0.0 for padding.
    pub point_mask: Vec<f64>,
    pub num_voxels: usize,
    pub points_per_voxel: usize,
    pub coords: Vec<VoxelCoord>,
    pub roles: Vec<VoxelRole>,
    pub kept: Vec<usize>,
    pub jigsaw_masked: Vec<usize>,
    pub shape_masked: Vec<usize>,
    pub jigsaw_target: JigsawTarget,
    pub shape_target: ShapeTarget,
    pub window: WindowConfig,
}

impl MaskedBatch {
    pub fn feature(&self, voxel: usize, point: usize, col: usize) -> f64 {
        self.features[(voxel * self.points_per_voxel + point) * 9 + col]
    }

    pub fn mask(&self, voxel: usize, point: usize) -> f64 {
        self.point_mask[voxel * self.points_per_voxel + point]
    }

    /// Real-point count of a voxel (token rows included, padding excluded).
    pub fn real_points(&self, voxel: usize) -> usize {
        (0..self.points_per_voxel)
            .filter(|&t| self.mask(voxel, t) > 0.0)
            .count()
    }
}

/// Build the training payload for one frame under a mask plan.
///
/// Absolute coordinates of visible points are normalized per axis to
/// [0,1] over the grid range; decorations stay in meters. Jigsaw-masked
/// voxels zero their coordinate columns and keep decorations; shape-masked
/// voxels keep only the retained point's row.
pub fn assemble_masked_batch(
    vf: &VoxelizedFrame,
    plan: &MaskPlan,
    w: &WindowConfig,
) -> Result<MaskedBatch, TargetError> {
    let n = vf.num_voxels();
    if plan.num_voxels() != n {
        return Err(TargetError::PlanMismatch {
            plan: plan.num_voxels(),
            frame: n,
        });
    }
    let cfg = &vf.config;
    let t_max = cfg.max_points_per_voxel;
    let extent = [
        cfg.range_max[0] - cfg.range_min[0],
        cfg.range_max[1] - cfg.range_min[1],
        cfg.range_max[2] - cfg.range_min[2],
    ];

    let mut roles = vec![VoxelRole::Kept; n];
    for &i in &plan.jigsaw_masked {
        roles[i] = VoxelRole::JigsawMasked;
    }
    for &i in &plan.shape_masked {
        roles[i] = VoxelRole::ShapeMasked;
    }

    let mut features = vec![0.0f64; n * t_max * 9];
    let mut point_mask = vec![0.0f64; n * t_max];
    let mut jigsaw_labels = Vec::with_capacity(plan.jigsaw_masked.len());
    let mut shape_sets = Vec::with_capacity(plan.shape_masked.len());

    for (vi, voxel) in vf.voxels.iter().enumerate() {
        let role = roles[vi];
        match role {
            VoxelRole::Kept | VoxelRole::JigsawMasked => {
                for (ti, p) in voxel.points.iter().enumerate() {
                    let row = (vi * t_max + ti) * 9;
                    point_mask[vi * t_max + ti] = 1.0;
                    if role == VoxelRole::Kept {
                        features[row] = (p.x - cfg.range_min[0]) / extent[0];
                        features[row + 1] = (p.y - cfg.range_min[1]) / extent[1];
                        features[row + 2] = (p.z - cfg.range_min[2]) / extent[2];
                    }
                    // Jigsaw rows leave columns 0–2 zero: the position
                    // token is injected there by the model.
                    features[row + 3] = p.cx;
                    features[row + 4] = p.cy;
                    features[row + 5] = p.cz;
                    features[row + 6] = p.vx;
                    features[row + 7] = p.vy;
                    features[row + 8] = p.vz;
                }
                if role == VoxelRole::JigsawMasked {
                    jigsaw_labels.push((vi, window_relative_index(voxel.coord, w)));
                }
            }
            VoxelRole::ShapeMasked => {
                let keep = select_retained_point(voxel);
                let p = &voxel.points[keep];
                let row = vi * t_max * 9;
                point_mask[vi * t_max] = 1.0;
                features[row] = (p.x - cfg.range_min[0]) / extent[0];
                features[row + 1] = (p.y - cfg.range_min[1]) / extent[1];
                features[row + 2] = (p.z - cfg.range_min[2]) / extent[2];
                features[row + 3] = p.cx;
                features[row + 4] = p.cy;
                features[row + 5] = p.cz;
                features[row + 6] = p.vx;
                features[row + 7] = p.vy;
                features[row + 8] = p.vz;
                // Rows 1..t−1 are token rows: all-zero here, mask 1.
                for ti in 1..voxel.len() {
                    point_mask[vi * t_max + ti] = 1.0;
                }
                shape_sets.push((vi, build_shape_target(voxel, cfg)));
            }
        }
    }

    Ok(MaskedBatch {
        features,
        point_mask,
        num_voxels: n,
        points_per_voxel: t_max,
        coords: vf.voxels.iter().map(|v| v.coord).collect(),
        roles,
        kept: plan.kept.clone(),
        jigsaw_masked: plan.jigsaw_masked.clone(),
        shape_masked: plan.shape_masked.clone(),
        jigsaw_target: JigsawTarget {
            labels: jigsaw_labels,
        },
        shape_target: ShapeTarget {
            point_sets: shape_sets,
        },
        window: *w,
    })
}
