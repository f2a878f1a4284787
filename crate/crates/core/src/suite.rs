//! The standard simulated scene suite shared by the metrics comparison, the
//! determinism checks and the CLI.

use rayon::prelude::*;

use crate::error::Result;
use crate::lidar::{simulate_scan, standard_scene, SensorModel};
use crate::voxel::{voxelize, Reduce, SparseVoxelSet, VoxelGridSpec};

/// 0.5 m voxels, `[10, 256, 256]`, covering +-64 m around the ego and
/// -0.5 m to 4.5 m in height.
pub fn standard_grid() -> VoxelGridSpec {
    VoxelGridSpec::ego_centered([0.5, 0.5, 0.5], [10, 256, 256], -0.5).expect("valid grid")
}

/// Simulates and voxelizes scene `seed`; the scene id is the seed.
pub fn simulated_voxels(seed: u64, sensor: &SensorModel, grid: &VoxelGridSpec) -> Result<SparseVoxelSet> {
    let scan = simulate_scan(&standard_scene(seed), sensor, seed)?;
    Ok(voxelize(&scan.cloud, grid, Reduce::Mean)?.voxels.with_scene_id(seed))
}

/// Scenes `base_seed .. base_seed + count`.
pub fn standard_suite(count: usize, base_seed: u64, sensor: &SensorModel) -> Result<Vec<SparseVoxelSet>> {
    let grid = standard_grid();
    (0..count as u64)
        .into_par_iter()
        .map(|i| simulated_voxels(base_seed + i, sensor, &grid))
        .collect()
}
