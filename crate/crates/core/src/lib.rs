//! Ray-aligned sector-wise serialization of sparse LiDAR voxels.
//!
//! The crate is organized bottom-up:
//!
//! - [`voxel`]: point clouds, grid specs and voxelization.
//! - [`sector`]: azimuth/sector math, packed ordering keys and the dense
//!   sector template with its on-disk format.
//! - [`curves`]: Hilbert and Morton keys used by the baseline orderings.
//! - [`serialize`]: spatial-to-sequence reordering and the inverse scatter.
//! - [`ssm`]: diagonal selective state-space scan with an analytic backward pass.
//! - [`sector_mamba`]: per-sector sequence block built on the scan.
//! - [`lidar`]: a small multi-beam LiDAR simulator with occlusion.
//! - [`metrics`]: context-window coherence metrics for comparing orderings.
//! - [`suite`]: the standard simulated scene suite.

pub mod curves;
pub mod error;
pub mod lidar;
pub mod metrics;
pub mod sector;
pub mod sector_mamba;
pub mod serialize;
pub mod ssm;
pub mod suite;
pub mod voxel;

pub use error::{Error, Result};
