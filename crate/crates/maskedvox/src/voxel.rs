//! Voxelization: quantize a frame onto a regular grid and decorate each
//! point with cluster-mean and voxel-center offsets.
//!
//! Cells are half-open `[lo, hi)` per axis; a point exactly at
//! `range_max` is dropped. When a voxel receives more than `T` points the
//! first `T` in frame order are kept and the decoration is computed from
//! the kept points only.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::io::Frame;

#[derive(Debug, Error)]
pub enum VoxelError {
    #[error("invalid grid config: {0}")]
    InvalidConfig(String),
    #[error("frame {sequence_id:?}[{frame_index}] has no points inside the grid range")]
    EmptyFrame {
        sequence_id: String,
        frame_index: usize,
    },
    #[error("voxel coord ({i},{j},{k}) outside grid dims ({dx},{dy},{dz})")]
    CoordOutOfGrid {
        i: usize,
        j: usize,
        k: usize,
        dx: usize,
        dy: usize,
        dz: usize,
    },
}

/// Spatial extent, voxel size, and the per-voxel point cap `T`.
///
/// Grid dimensions are fixed at construction as `floor(extent / size)`;
/// extents that are an exact multiple of the voxel size resolve to the
/// exact quotient despite floating-point rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    pub voxel_size: [f64; 3],
    pub max_points_per_voxel: usize,
    dims: [usize; 3],
}

impl GridConfig {
    pub fn new(
        range_min: [f64; 3],
        range_max: [f64; 3],
        voxel_size: [f64; 3],
        max_points_per_voxel: usize,
    ) -> Result<Self, VoxelError> {
        for a in 0..3 {
            if !(range_max[a].is_finite() && range_min[a].is_finite()) {
                return Err(VoxelError::InvalidConfig(format!(
                    "range must be finite on axis {a}"
                )));
            }
            if !(range_max[a] > range_min[a]) {
                return Err(VoxelError::InvalidConfig(format!(
                    "range_max must exceed range_min on axis {a}"
                )));
            }
            if !(voxel_size[a] > 0.0 && voxel_size[a].is_finite()) {
                return Err(VoxelError::InvalidConfig(format!(
                    "voxel size must be positive on axis {a}"
                )));
            }
        }
        if max_points_per_voxel == 0 {
            return Err(VoxelError::InvalidConfig(
                "max_points_per_voxel must be positive".into(),
            ));
        }
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let extent = range_max[a] - range_min[a];
            // The epsilon absorbs cases like 149.76/0.32 where the true
            // quotient is an integer but the f64 ratio lands just below it.
            let d = (extent / voxel_size[a] + 1e-9).floor();
            if d < 1.0 {
                return Err(VoxelError::InvalidConfig(format!(
                    "extent smaller than one voxel on axis {a}"
                )));
            }
            dims[a] = d as usize;
        }
        Ok(GridConfig {
            range_min,
            range_max,
            voxel_size,
            max_points_per_voxel,
            dims,
        })
    }

    /// Grid dimensions (dim_x, dim_y, dim_z).
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Total number of grid cells, empty or not.
    pub fn cell_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
}

/// Non-negative grid indices of one voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VoxelCoord {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl VoxelCoord {
    pub fn new(i: usize, j: usize, k: usize) -> Self {
        VoxelCoord { i, j, k }
    }

    /// Lexicographic sort key matching the frame's voxel ordering.
    fn kji(&self) -> (usize, usize, usize) {
        (self.k, self.j, self.i)
    }
}

impl PartialOrd for VoxelCoord {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Coordinates order the same way voxels appear in a frame: k, then j,
/// then i.
impl Ord for VoxelCoord {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.kji().cmp(&other.kji())
    }
}

/// A point with its 9-feature decoration: absolute position, offset from
/// the voxel's cluster mean, and offset from the geometric voxel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoratedPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl DecoratedPoint {
    /// Feature row in the order the model consumes it.
    pub fn features(&self) -> [f64; 9] {
        [
            self.x, self.y, self.z, self.cx, self.cy, self.cz, self.vx, self.vy, self.vz,
        ]
    }
}

/// One non-empty voxel: its grid coordinate and decorated points.
#[derive(Debug, Clone, PartialEq)]
pub struct Voxel {
    pub coord: VoxelCoord,
    pub points: Vec<DecoratedPoint>,
}

impl Voxel {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// All non-empty voxels of one frame, sorted by (k, j, i).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelizedFrame {
    pub voxels: Vec<Voxel>,
    pub config: GridConfig,
    pub sequence_id: String,
    pub frame_index: usize,
}

impl VoxelizedFrame {
    /// Number of non-empty voxels N.
    pub fn num_voxels(&self) -> usize {
        self.voxels.len()
    }
}

/// Geometric center of a voxel cell in meters.
pub fn voxel_center(coord: VoxelCoord, cfg: &GridConfig) -> Result<[f64; 3], VoxelError> {
    let d = cfg.dims();
    if coord.i >= d[0] || coord.j >= d[1] || coord.k >= d[2] {
        return Err(VoxelError::CoordOutOfGrid {
            i: coord.i,
            j: coord.j,
            k: coord.k,
            dx: d[0],
            dy: d[1],
            dz: d[2],
        });
    }
    Ok([
        cfg.range_min[0] + (coord.i as f64 + 0.5) * cfg.voxel_size[0],
        cfg.range_min[1] + (coord.j as f64 + 0.5) * cfg.voxel_size[1],
        cfg.range_min[2] + (coord.k as f64 + 0.5) * cfg.voxel_size[2],
    ])
}

/// Quantize the frame, drop out-of-range points, cap each voxel at `T`
/// points (first come in frame order), and decorate the kept points.
pub fn voxelize(frame: &Frame, cfg: &GridConfig) -> Result<VoxelizedFrame, VoxelError> {
    let dims = cfg.dims();
    // BTreeMap keyed by (k, j, i) gives the output ordering for free.
    let mut cells: BTreeMap<(usize, usize, usize), Vec<[f64; 3]>> = BTreeMap::new();
    for p in &frame.points {
        let pos = [p.x, p.y, p.z];
        let mut idx = [0usize; 3];
        let mut in_range = true;
        for a in 0..3 {
            if pos[a] < cfg.range_min[a] || pos[a] >= cfg.range_max[a] {
                in_range = false;
                break;
            }
            let q = ((pos[a] - cfg.range_min[a]) / cfg.voxel_size[a]).floor() as usize;
            // Guard against float round-up at the far edge of the last cell.
            idx[a] = q.min(dims[a] - 1);
        }
        if !in_range {
            continue;
        }
        let cell = cells.entry((idx[2], idx[1], idx[0])).or_default();
        if cell.len() < cfg.max_points_per_voxel {
            cell.push(pos);
        }
    }
    if cells.is_empty() {
        return Err(VoxelError::EmptyFrame {
            sequence_id: frame.sequence_id.clone(),
            frame_index: frame.frame_index,
        });
    }

    let voxels = cells
        .into_iter()
        .map(|((k, j, i), pts)| {
            let coord = VoxelCoord::new(i, j, k);
            let center = voxel_center(coord, cfg).expect("coord derived from in-range point");
            let t = pts.len() as f64;
            let mean = pts.iter().fold([0.0f64; 3], |m, p| {
                [m[0] + p[0] / t, m[1] + p[1] / t, m[2] + p[2] / t]
            });
            let points = pts
                .iter()
                .map(|p| DecoratedPoint {
                    x: p[0],
                    y: p[1],
                    z: p[2],
                    cx: p[0] - mean[0],
                    cy: p[1] - mean[1],
                    cz: p[2] - mean[2],
                    vx: p[0] - center[0],
                    vy: p[1] - center[1],
                    vz: p[2] - center[2],
                })
                .collect();
            Voxel { coord, points }
        })
        .collect();

    Ok(VoxelizedFrame {
        voxels,
        config: cfg.clone(),
        sequence_id: frame.sequence_id.clone(),
        frame_index: frame.frame_index,
    })
}

/// Structured-text dump of a voxelized frame for golden-file inspection:
/// one header line per voxel followed by its decorated rows.
pub fn dump_voxelized_frame(vf: &VoxelizedFrame) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "frame {}[{}] voxels={}",
        vf.sequence_id,
        vf.frame_index,
        vf.num_voxels()
    );
    for v in &vf.voxels {
        let _ = writeln!(
            out,
            "voxel ({},{},{}) t={}",
            v.coord.i,
            v.coord.j,
            v.coord.k,
            v.len()
        );
        for p in &v.points {
            let f = p.features();
            let _ = writeln!(
                out,
                "  {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
                f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]
            );
        }
    }
    out
}
