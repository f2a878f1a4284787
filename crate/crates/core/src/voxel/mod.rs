//! Point clouds, voxel grids and sparse voxel sets.
//!
//! Cell coordinates are always `(z, y, x)` row-major, matching the `[Z, Y, X]`
//! shape convention used for templates. World coordinates are `(x, y, z)`.

mod io;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_cloud, read_cloud_bin, read_cloud_csv, write_cloud_bin, write_cloud_csv};

/// One LiDAR return. Intensity is unitless in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && (0.0..=1.0).contains(&self.intensity)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    /// Opaque scene identifier; plays the role of the batch index.
    pub scene_id: u64,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, scene_id: u64) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_valid()) {
            return Err(Error::Contract(format!(
                "point {i} is non-finite or has intensity outside [0, 1]: {:?}",
                points[i]
            )));
        }
        Ok(Self { points, scene_id })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Integer cell index, `(z, y, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub z: u32,
    pub y: u32,
    pub x: u32,
}

impl Cell {
    pub const fn new(z: u32, y: u32, x: u32) -> Self {
        Self { z, y, x }
    }
}

impl From<[u32; 3]> for Cell {
    fn from([z, y, x]: [u32; 3]) -> Self {
        Self { z, y, x }
    }
}

/// Regular voxel grid.
///
/// `voxel_size` and `dims` are `(z, y, x)`; `origin` is the world `(x, y, z)`
/// of the corner of cell `(0, 0, 0)`; `center` is the ego position `(c_x, c_y)`
/// in fractional cell-index units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridSpec {
    pub voxel_size: [f64; 3],
    pub dims: [u32; 3],
    pub origin: [f64; 3],
    pub center: [f64; 2],
}

impl VoxelGridSpec {
    /// Grid with the ego placed at the middle cell, `((X-1)/2, (Y-1)/2)`.
    pub fn new(voxel_size: [f64; 3], dims: [u32; 3], origin: [f64; 3]) -> Result<Self> {
        let spec = Self {
            voxel_size,
            dims,
            origin,
            center: Self::default_center(dims),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid whose BEV middle sits at world `(0, 0)`, with the bottom layer at `z_min`.
    pub fn ego_centered(voxel_size: [f64; 3], dims: [u32; 3], z_min: f64) -> Result<Self> {
        let [_, dy, dx] = voxel_size;
        let [_, ny, nx] = dims;
        Self::new(
            voxel_size,
            dims,
            [-(nx as f64) * dx / 2.0, -(ny as f64) * dy / 2.0, z_min],
        )
    }

    pub fn default_center(dims: [u32; 3]) -> [f64; 2] {
        [
            (dims[2] as f64 - 1.0) / 2.0,
            (dims[1] as f64 - 1.0) / 2.0,
        ]
    }

    pub fn with_center(mut self, center: [f64; 2]) -> Result<Self> {
        self.center = center;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::config("dims", format!("all dims must be >= 1, got {:?}", self.dims)));
        }
        if self.voxel_size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config(
                "voxel_size",
                format!("all sizes must be finite and > 0, got {:?}", self.voxel_size),
            ));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::config("origin", "origin must be finite"));
        }
        let [cx, cy] = self.center;
        let in_x = (0.0..self.dims[2] as f64).contains(&cx);
        let in_y = (0.0..self.dims[1] as f64).contains(&cy);
        if !(in_x && in_y) {
            return Err(Error::config(
                "center",
                format!("center {:?} outside [0, X) x [0, Y)", self.center),
            ));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> u64 {
        self.dims.iter().map(|&d| d as u64).product()
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.z < self.dims[0] && cell.y < self.dims[1] && cell.x < self.dims[2]
    }

    pub fn linear_index(&self, cell: Cell) -> usize {
        let [_, ny, nx] = self.dims;
        (cell.z as usize * ny as usize + cell.y as usize) * nx as usize + cell.x as usize
    }

    pub fn cell_at(&self, linear: usize) -> Cell {
        let [_, ny, nx] = self.dims;
        let (nx, ny) = (nx as usize, ny as usize);
        Cell::new((linear / (nx * ny)) as u32, ((linear / nx) % ny) as u32, (linear % nx) as u32)
    }

    /// Cell containing a world point, or `None` if it falls outside the grid.
    pub fn cell_of_point(&self, x: f64, y: f64, z: f64) -> Option<Cell> {
        let idx = |w: f64, o: f64, s: f64, n: u32| -> Option<u32> {
            let i = ((w - o) / s).floor();
            (i >= 0.0 && i < n as f64).then_some(i as u32)
        };
        Some(Cell::new(
            idx(z, self.origin[2], self.voxel_size[0], self.dims[0])?,
            idx(y, self.origin[1], self.voxel_size[1], self.dims[1])?,
            idx(x, self.origin[0], self.voxel_size[2], self.dims[2])?,
        ))
    }

    /// BEV offset of a cell from the ego center, in cell units.
    pub fn bev_offset(&self, cell: Cell) -> (f64, f64) {
        (cell.x as f64 - self.center[0], cell.y as f64 - self.center[1])
    }

    /// World `(x, y)` of the ego center.
    pub fn ego_world_xy(&self) -> (f64, f64) {
        (
            self.origin[0] + (self.center[0] + 0.5) * self.voxel_size[2],
            self.origin[1] + (self.center[1] + 0.5) * self.voxel_size[1],
        )
    }
}

/// World `(x, y, z)` of a cell center: `origin + (cell + 0.5) * voxel_size`.
pub fn voxel_center_world(cell: Cell, spec: &VoxelGridSpec) -> Result<[f64; 3]> {
    if !spec.contains(cell) {
        return Err(Error::Bounds {
            what: "cell",
            value: vec![cell.z as i64, cell.y as i64, cell.x as i64],
            bound: spec.dims.iter().map(|&d| d as i64).collect(),
        });
    }
    Ok(center_unchecked(cell, spec))
}

pub(crate) fn center_unchecked(cell: Cell, spec: &VoxelGridSpec) -> [f64; 3] {
    [
        spec.origin[0] + (cell.x as f64 + 0.5) * spec.voxel_size[2],
        spec.origin[1] + (cell.y as f64 + 0.5) * spec.voxel_size[1],
        spec.origin[2] + (cell.z as f64 + 0.5) * spec.voxel_size[0],
    ]
}

/// Sparse set of active voxels with a fixed number of feature channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVoxelSet {
    coords: Vec<Cell>,
    features: Vec<f64>,
    channels: usize,
    point_counts: Vec<u32>,
    spec: VoxelGridSpec,
    pub scene_id: u64,
}

impl SparseVoxelSet {
    /// `features` is row-major, `coords.len() * channels` long.
    pub fn new(
        spec: VoxelGridSpec,
        coords: Vec<Cell>,
        features: Vec<f64>,
        channels: usize,
        point_counts: Vec<u32>,
    ) -> Result<Self> {
        spec.validate()?;
        if features.len() != coords.len() * channels || point_counts.len() != coords.len() {
            return Err(Error::Contract(format!(
                "length mismatch: {} coords, {} feature values for {} channels, {} counts",
                coords.len(),
                features.len(),
                channels,
                point_counts.len()
            )));
        }
        if let Some(c) = coords.iter().find(|c| !spec.contains(**c)) {
            return Err(Error::Bounds {
                what: "voxel coordinate",
                value: vec![c.z as i64, c.y as i64, c.x as i64],
                bound: spec.dims.iter().map(|&d| d as i64).collect(),
            });
        }
        if point_counts.contains(&0) {
            return Err(Error::Contract("point counts must be >= 1".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(coords.len());
        if let Some(c) = coords.iter().find(|c| !seen.insert(**c)) {
            return Err(Error::Contract(format!("duplicate voxel coordinate {c:?}")));
        }
        Ok(Self {
            coords,
            features,
            channels,
            point_counts,
            spec,
            scene_id: 0,
        })
    }

    pub fn empty(spec: VoxelGridSpec, channels: usize) -> Self {
        Self {
            coords: Vec::new(),
            features: Vec::new(),
            channels,
            point_counts: Vec::new(),
            spec,
            scene_id: 0,
        }
    }

    pub fn with_scene_id(mut self, scene_id: u64) -> Self {
        self.scene_id = scene_id;
        self
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    pub fn coords(&self) -> &[Cell] {
        &self.coords
    }

    pub fn point_counts(&self) -> &[u32] {
        &self.point_counts
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, row: usize) -> &[f64] {
        &self.features[row * self.channels..(row + 1) * self.channels]
    }

    /// Same voxels with a new feature matrix; the channel count may change.
    pub fn with_features(&self, features: Vec<f64>, channels: usize) -> Result<Self> {
        if features.len() != self.coords.len() * channels {
            return Err(Error::Contract(format!(
                "expected {} feature values, got {}",
                self.coords.len() * channels,
                features.len()
            )));
        }
        Ok(Self {
            features,
            channels,
            ..self.clone()
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduce {
    #[default]
    Mean,
    Max,
    /// Mean of the point features followed by the point count as an extra channel.
    CountAugmentedMean,
}

impl Reduce {
    pub fn channels(self) -> usize {
        match self {
            Reduce::Mean | Reduce::Max => POINT_CHANNELS,
            Reduce::CountAugmentedMean => POINT_CHANNELS + 1,
        }
    }
}

/// Per-point feature channels: `x, y, z, intensity`.
pub const POINT_CHANNELS: usize = 4;

#[derive(Clone, Debug)]
pub struct Voxelization {
    pub voxels: SparseVoxelSet,
    /// Points that fell outside the grid.
    pub dropped: usize,
}

/// Bins points into cells and merges duplicates with `reduce`.
///
/// Output rows are sorted by linear cell index, so the result does not depend
/// on the order of the input points.
pub fn voxelize(cloud: &PointCloud, spec: &VoxelGridSpec, reduce: Reduce) -> Result<Voxelization> {
    spec.validate()?;
    struct Acc {
        sum: [f64; POINT_CHANNELS],
        max: [f64; POINT_CHANNELS],
        count: u32,
    }
    let mut cells: HashMap<usize, Acc> = HashMap::new();
    let mut dropped = 0;
    for p in cloud.points() {
        let Some(cell) = spec.cell_of_point(p.x, p.y, p.z) else {
            dropped += 1;
            continue;
        };
        let f = [p.x, p.y, p.z, p.intensity];
        let acc = cells.entry(spec.linear_index(cell)).or_insert(Acc {
            sum: [0.0; POINT_CHANNELS],
            max: [f64::NEG_INFINITY; POINT_CHANNELS],
            count: 0,
        });
        for c in 0..POINT_CHANNELS {
            acc.sum[c] += f[c];
            acc.max[c] = acc.max[c].max(f[c]);
        }
        acc.count += 1;
    }

    let mut keys: Vec<usize> = cells.keys().copied().collect();
    keys.sort_unstable();
    let channels = reduce.channels();
    let mut coords = Vec::with_capacity(keys.len());
    let mut features = Vec::with_capacity(keys.len() * channels);
    let mut counts = Vec::with_capacity(keys.len());
    for k in keys {
        let acc = &cells[&k];
        coords.push(spec.cell_at(k));
        counts.push(acc.count);
        match reduce {
            Reduce::Max => features.extend_from_slice(&acc.max),
            Reduce::Mean | Reduce::CountAugmentedMean => {
                features.extend(acc.sum.iter().map(|s| s / acc.count as f64));
                if reduce == Reduce::CountAugmentedMean {
                    features.push(acc.count as f64);
                }
            }
        }
    }
    let voxels = SparseVoxelSet {
        coords,
        features,
        channels,
        point_counts: counts,
        spec: *spec,
        scene_id: cloud.scene_id,
    };
    Ok(Voxelization { voxels, dropped })
}
