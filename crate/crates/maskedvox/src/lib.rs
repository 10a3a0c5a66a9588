//! Masked-voxel modeling for LiDAR-style point clouds.
//!
//! The pipeline runs frame → voxel grid → mask plan → task targets →
//! network, with two pretext tasks supervising the masked voxels:
//!
//! - a jigsaw task that hides a voxel's absolute position and classifies
//!   its relative index inside an attention window, and
//! - a reconstruction task that hides a voxel's shape (keeping one point
//!   as a position hint) and regresses the point set under an L2 Chamfer
//!   distance.
//!
//! Masked voxels are chosen by reversed furthest-voxel sampling (R-FVS):
//! furthest-point sampling over voxel coordinates selects the voxels to
//! *keep*, so isolated voxels in sparse regions survive masking. The
//! plain FVS and uniform-random variants are available for comparison.
//!
//! Everything is deterministic given its inputs and seeds: same config,
//! same bytes out, including trained checkpoints.

pub mod config;
pub mod io;
pub mod nn;
pub mod pretrain;
pub mod sampling;
pub mod splits;
pub mod targets;
pub mod voxel;

pub use config::RunConfig;
pub use io::{Frame, RawPoint, SceneManifest, SynthConfig};
pub use sampling::{MaskPlan, SamplingStrategy};
pub use targets::{MaskedBatch, WindowConfig};
pub use voxel::{GridConfig, VoxelCoord, VoxelizedFrame};
