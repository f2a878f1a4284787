//! Azimuth sectors, packed ordering keys and the dense sector template.
//!
//! Within a sector, voxels are ordered by descending height layer and then by
//! ascending azimuth. That relation is packed into one `u64` so a plain
//! unsigned comparison (and therefore a single integer sort) realizes it:
//!
//! ```text
//! bits 63..40  layer rank  (Z - 1 - z)
//! bits 39..16  azimuth     (theta * 2^24 / 360, truncated)
//! bits 15..0   radius      (cell units * 16, saturating)
//! ```
//!
//! The radius field only breaks ties between cells on the same ray; it is not
//! a primary sort dimension. Remaining ties are broken by linear cell index at
//! sort time.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::{Cell, VoxelGridSpec};

pub const LAYER_BITS: u32 = 24;
pub const THETA_BITS: u32 = 24;
pub const RADIUS_BITS: u32 = 16;
/// Radius quantization steps per cell.
pub const RADIUS_STEPS_PER_CELL: f64 = 16.0;
/// Width of one azimuth quantization step, in degrees.
pub const THETA_STEP_DEG: f64 = 360.0 / (1u64 << THETA_BITS) as f64;

const THETA_SHIFT: u32 = RADIUS_BITS;
const LAYER_SHIFT: u32 = RADIUS_BITS + THETA_BITS;
const THETA_MAX: u64 = (1 << THETA_BITS) - 1;
const RADIUS_MAX: u64 = (1 << RADIUS_BITS) - 1;

/// Default cap on template cells (about 640 MB of arrays).
pub const DEFAULT_MAX_TEMPLATE_CELLS: u64 = 64 << 20;

/// Azimuth of a BEV offset in degrees, in `[0, 360)`. The origin maps to 0.
pub fn azimuth_deg(r_x: f64, r_y: f64) -> f64 {
    if r_x == 0.0 && r_y == 0.0 {
        return 0.0;
    }
    let theta = (r_y.atan2(r_x) * (180.0 / std::f64::consts::PI) + 360.0) % 360.0;
    // -tiny + 360 can round up to exactly 360
    if theta >= 360.0 {
        0.0
    } else {
        theta
    }
}

/// Checks that `delta_theta` lies in `(0, 360]` and divides 360; returns the sector count.
pub fn sector_count(delta_theta: f64) -> Result<u16> {
    if !(delta_theta > 0.0 && delta_theta <= 360.0) {
        return Err(Error::config(
            "delta_theta",
            format!("{delta_theta} is outside (0, 360]"),
        ));
    }
    let n = (360.0 / delta_theta).round();
    if (n * delta_theta - 360.0).abs() > 1e-9 || n > u16::MAX as f64 {
        return Err(Error::config(
            "delta_theta",
            format!("{delta_theta} does not divide 360"),
        ));
    }
    Ok(n as u16)
}

/// `floor(theta / delta_theta)`. A theta exactly on an edge belongs to the higher sector.
pub fn sector_of(theta: f64, delta_theta: f64) -> Result<u16> {
    let n = sector_count(delta_theta)?;
    if !(0.0..360.0).contains(&theta) {
        return Err(Error::Contract(format!("theta {theta} outside [0, 360)")));
    }
    Ok(((theta / delta_theta).floor() as u16).min(n - 1))
}

pub fn quantize_theta(theta: f64) -> u64 {
    ((theta * (1u64 << THETA_BITS) as f64 / 360.0) as u64).min(THETA_MAX)
}

/// Saturates at `2^16 - 1`, i.e. radii beyond ~4096 cells all compare equal.
pub fn quantize_radius(radius: f64) -> u64 {
    ((radius * RADIUS_STEPS_PER_CELL) as u64).min(RADIUS_MAX)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrderKey(pub u64);

impl OrderKey {
    pub fn layer_rank(self) -> u64 {
        self.0 >> LAYER_SHIFT
    }

    pub fn theta_q(self) -> u64 {
        (self.0 >> THETA_SHIFT) & THETA_MAX
    }

    pub fn radius_q(self) -> u64 {
        self.0 & RADIUS_MAX
    }
}

/// Packs `(z, theta, radius)` for a grid with `layers` height layers.
pub fn order_key(z: u32, theta: f64, radius: f64, layers: u32) -> Result<OrderKey> {
    if z >= layers {
        return Err(Error::Bounds {
            what: "layer",
            value: vec![z as i64],
            bound: vec![layers as i64],
        });
    }
    if layers as u64 > 1 << LAYER_BITS {
        return Err(Error::Capacity {
            what: "height layers",
            requested: layers as u64,
            limit: 1 << LAYER_BITS,
        });
    }
    if !(0.0..360.0).contains(&theta) || !(radius >= 0.0) {
        return Err(Error::Contract(format!(
            "order key needs theta in [0, 360) and radius >= 0, got {theta}, {radius}"
        )));
    }
    let rank = (layers - 1 - z) as u64;
    Ok(OrderKey(
        rank << LAYER_SHIFT | quantize_theta(theta) << THETA_SHIFT | quantize_radius(radius),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorConfig {
    pub delta_theta: f64,
    /// Ego center `(c_x, c_y)` in cell units.
    pub center: [f64; 2],
}

impl SectorConfig {
    pub fn new(delta_theta: f64, center: [f64; 2]) -> Result<Self> {
        sector_count(delta_theta)?;
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("center", "center must be finite"));
        }
        Ok(Self {
            delta_theta,
            center,
        })
    }

    /// Uses the grid's ego center.
    pub fn for_grid(spec: &VoxelGridSpec, delta_theta: f64) -> Result<Self> {
        Self::new(delta_theta, spec.center)
    }

    pub fn num_sectors(&self) -> u16 {
        sector_count(self.delta_theta).expect("validated on construction")
    }
}

/// Sector id and key of one cell, computed directly from its coordinates.
pub fn cell_sector_and_key(cell: Cell, layers: u32, config: &SectorConfig) -> Result<(u16, OrderKey)> {
    let r_x = cell.x as f64 - config.center[0];
    let r_y = cell.y as f64 - config.center[1];
    let theta = azimuth_deg(r_x, r_y);
    let sector = sector_of(theta, config.delta_theta)?;
    let key = order_key(cell.z, theta, r_x.hypot(r_y), layers)?;
    Ok((sector, key))
}

/// Per-cell sector ids and ordering keys for a fixed grid, indexed by linear cell index.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorTemplate {
    dims: [u32; 3],
    config: SectorConfig,
    sector_of_cell: Vec<u16>,
    key_of_cell: Vec<u64>,
}

impl SectorTemplate {
    pub fn dims(&self) -> [u32; 3] {
        self.dims
    }

    pub fn config(&self) -> &SectorConfig {
        &self.config
    }

    pub fn num_cells(&self) -> usize {
        self.sector_of_cell.len()
    }

    pub fn sector_ids(&self) -> &[u16] {
        &self.sector_of_cell
    }

    pub fn keys(&self) -> &[u64] {
        &self.key_of_cell
    }

    pub fn linear_index(&self, cell: Cell) -> usize {
        let [_, ny, nx] = self.dims;
        (cell.z as usize * ny as usize + cell.y as usize) * nx as usize + cell.x as usize
    }

    /// Sector and key of a cell; the cell must lie inside `dims`.
    pub fn lookup(&self, cell: Cell) -> (u16, OrderKey) {
        let i = self.linear_index(cell);
        (self.sector_of_cell[i], OrderKey(self.key_of_cell[i]))
    }
}

pub fn build_template(spec: &VoxelGridSpec, config: &SectorConfig) -> Result<SectorTemplate> {
    build_template_capped(spec, config, DEFAULT_MAX_TEMPLATE_CELLS)
}

pub fn build_template_capped(
    spec: &VoxelGridSpec,
    config: &SectorConfig,
    max_cells: u64,
) -> Result<SectorTemplate> {
    spec.validate()?;
    let requested = spec.num_cells();
    if requested > max_cells {
        return Err(Error::Capacity {
            what: "template cells",
            requested,
            limit: max_cells,
        });
    }
    let [nz, ny, nx] = spec.dims;
    let layer = (ny as usize) * (nx as usize);

    // The BEV part (sector, azimuth, radius) is shared by every layer.
    let top: Vec<(u16, OrderKey)> = (0..layer)
        .into_par_iter()
        .map(|i| {
            let cell = Cell::new(0, (i / nx as usize) as u32, (i % nx as usize) as u32);
            cell_sector_and_key(cell, nz, config)
        })
        .collect::<Result<_>>()?;

    let mut sector_of_cell = vec![0u16; requested as usize];
    let mut key_of_cell = vec![0u64; requested as usize];
    sector_of_cell
        .par_chunks_mut(layer)
        .zip(key_of_cell.par_chunks_mut(layer))
        .enumerate()
        .for_each(|(z, (sectors, keys))| {
            // z = 0 has the largest rank; moving up one layer lowers it by one
            let rank_delta = (z as u64) << LAYER_SHIFT;
            for (i, &(s, k)) in top.iter().enumerate() {
                sectors[i] = s;
                keys[i] = k.0 - rank_delta;
            }
        });

    Ok(SectorTemplate {
        dims: spec.dims,
        config: *config,
        sector_of_cell,
        key_of_cell,
    })
}

pub const TEMPLATE_MAGIC: [u8; 4] = *b"RAYT";
pub const TEMPLATE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 3 * 4 + 3 * 8;

impl SectorTemplate {
    /// Little-endian encoding: magic, version, Z, Y, X, delta_theta, c_x, c_y,
    /// sector ids (u16), keys (u64), then a CRC32 of every preceding byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.num_cells();
        let mut out = Vec::with_capacity(HEADER_LEN + n * 10 + 4);
        out.extend_from_slice(&TEMPLATE_MAGIC);
        out.extend_from_slice(&TEMPLATE_VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in [self.config.delta_theta, self.config.center[0], self.config.center[1]] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in &self.sector_of_cell {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for k in &self.key_of_cell {
            out.extend_from_slice(&k.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(
                "header",
                format!("expected at least {HEADER_LEN} bytes, found {}", bytes.len()),
            ));
        }
        if bytes[0..4] != TEMPLATE_MAGIC {
            return Err(Error::format(
                "magic",
                format!("expected {:?}, found {:?}", TEMPLATE_MAGIC, &bytes[0..4]),
            ));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != TEMPLATE_VERSION {
            return Err(Error::format(
                "version",
                format!("expected {TEMPLATE_VERSION}, found {version}"),
            ));
        }
        let dims = [u32_at(8), u32_at(12), u32_at(16)];
        let n = dims.iter().map(|&d| d as u64).product::<u64>();
        if dims.contains(&0) {
            return Err(Error::format("dims", format!("zero dimension in {dims:?}")));
        }
        let expected = HEADER_LEN as u64 + n * 10 + 4;
        if bytes.len() as u64 != expected {
            return Err(Error::format(
                "payload",
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let n = n as usize;
        let crc_at = bytes.len() - 4;
        let stored = u32_at(crc_at);
        let actual = crc32fast::hash(&bytes[..crc_at]);
        if stored != actual {
            return Err(Error::format(
                "checksum",
                format!("stored {stored:#010x}, computed {actual:#010x}"),
            ));
        }
        let config = SectorConfig::new(f64_at(20), [f64_at(28), f64_at(36)]).map_err(|e| {
            Error::format("config", e.to_string())
        })?;

        let sec_start = HEADER_LEN;
        let key_start = sec_start + n * 2;
        let sector_of_cell: Vec<u16> = bytes[sec_start..key_start]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        let key_of_cell: Vec<u64> = bytes[key_start..crc_at]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let sectors = config.num_sectors();
        if let Some(bad) = sector_of_cell.iter().find(|&&s| s >= sectors) {
            return Err(Error::format(
                "sector_ids",
                format!("sector id {bad} >= sector count {sectors}"),
            ));
        }
        Ok(Self {
            dims,
            config,
            sector_of_cell,
            key_of_cell,
        })
    }
}

pub fn write_template(template: &SectorTemplate, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, template.to_bytes())?;
    Ok(())
}

pub fn read_template(path: impl AsRef<Path>) -> Result<SectorTemplate> {
    SectorTemplate::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn azimuth_examples() {
        assert_eq!(azimuth_deg(1.0, 0.0), 0.0);
        assert_eq!(azimuth_deg(0.0, 1.0), 90.0);
        assert!((azimuth_deg(-1.0, -1.0) - 225.0).abs() < 1e-12);
        assert_eq!(azimuth_deg(0.0, 0.0), 0.0);
        assert_eq!(azimuth_deg(1.0, -0.0), 0.0);
        let t = azimuth_deg(1.0, -1e-300);
        assert!((0.0..360.0).contains(&t));
    }

    #[test]
    fn sector_examples() {
        assert_eq!(sector_of(59.999, 60.0).unwrap(), 0);
        assert_eq!(sector_of(60.0, 60.0).unwrap(), 1);
        let ids: std::collections::BTreeSet<u16> =
            (0..3600).map(|i| sector_of(i as f64 / 10.0, 60.0).unwrap()).collect();
        assert_eq!(ids.into_iter().collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn sector_rejects_bad_delta() {
        for bad in [0.0, -60.0, 7.0, 361.0, f64::NAN] {
            assert!(matches!(sector_of(10.0, bad), Err(Error::Config { field: "delta_theta", .. })));
        }
        assert_eq!(sector_count(7.5).unwrap(), 48);
        assert_eq!(sector_count(360.0).unwrap(), 1);
    }

    #[test]
    fn key_orders_layers_then_angle_then_radius() {
        let k = |z, t, r| order_key(z, t, r, 11).unwrap();
        assert!(k(5, 10.0, 0.0) < k(3, 5.0, 0.0));
        assert!(k(4, 5.0, 9.0) < k(4, 10.0, 1.0));
        assert!(k(4, 5.0, 2.0) < k(4, 5.0, 7.0));
        assert_eq!(k(4, 5.0, 1e9).radius_q(), RADIUS_MAX);
        assert!(order_key(11, 0.0, 0.0, 11).is_err());
    }

    #[test]
    fn key_fields_unpack() {
        let key = order_key(2, 90.0, 3.0, 11).unwrap();
        assert_eq!(key.layer_rank(), 8);
        assert_eq!(key.theta_q(), 1 << 22);
        assert_eq!(key.radius_q(), 48);
    }

    #[test]
    fn quadrant_template() {
        let spec = VoxelGridSpec::new([1.0; 3], [1, 2, 2], [0.0; 3]).unwrap();
        assert_eq!(spec.center, [0.5, 0.5]);
        let t = build_template(&spec, &SectorConfig::for_grid(&spec, 90.0).unwrap()).unwrap();
        // (y, x) = (0,0): offset (-.5,-.5) -> 225 deg; (0,1): (.5,-.5) -> 315;
        // (1,0): (-.5,.5) -> 135; (1,1): (.5,.5) -> 45
        assert_eq!(t.sector_ids(), &[2, 3, 1, 0]);
    }

    #[test]
    fn single_sector_template() {
        let spec = VoxelGridSpec::new([1.0; 3], [3, 8, 8], [0.0; 3]).unwrap();
        let t = build_template(&spec, &SectorConfig::for_grid(&spec, 360.0).unwrap()).unwrap();
        assert!(t.sector_ids().iter().all(|&s| s == 0));
    }

    #[test]
    fn capacity_cap_enforced() {
        let spec = VoxelGridSpec::new([1.0; 3], [4, 16, 16], [0.0; 3]).unwrap();
        let cfg = SectorConfig::for_grid(&spec, 60.0).unwrap();
        assert!(matches!(
            build_template_capped(&spec, &cfg, 100),
            Err(Error::Capacity { requested: 1024, .. })
        ));
    }

    #[test]
    fn template_matches_direct_computation() {
        let spec = VoxelGridSpec::new([1.0; 3], [3, 9, 7], [0.0; 3]).unwrap();
        let cfg = SectorConfig::for_grid(&spec, 45.0).unwrap();
        let t = build_template(&spec, &cfg).unwrap();
        for i in 0..t.num_cells() {
            let cell = spec.cell_at(i);
            assert_eq!(t.lookup(cell), cell_sector_and_key(cell, 3, &cfg).unwrap());
        }
    }

    fn small_template() -> SectorTemplate {
        let spec = VoxelGridSpec::new([1.0; 3], [2, 5, 6], [0.0; 3]).unwrap();
        build_template(&spec, &SectorConfig::for_grid(&spec, 60.0).unwrap()).unwrap()
    }

    #[test]
    fn bytes_round_trip_and_corruption() {
        let t = small_template();
        let bytes = t.to_bytes();
        assert_eq!(SectorTemplate::from_bytes(&bytes).unwrap(), t);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(SectorTemplate::from_bytes(&bad), Err(Error::Format { field: "magic", .. })));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(SectorTemplate::from_bytes(&bad), Err(Error::Format { field: "version", .. })));

        let truncated = &bytes[..bytes.len() - 37];
        match SectorTemplate::from_bytes(truncated) {
            Err(Error::Format { field: "payload", reason }) => {
                assert!(reason.contains(&bytes.len().to_string()), "{reason}");
                assert!(reason.contains(&truncated.len().to_string()), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x40;
        assert!(matches!(SectorTemplate::from_bytes(&bad), Err(Error::Format { field: "checksum", .. })));
    }

    proptest! {
        #[test]
        fn azimuth_scale_invariant(rx in -1e3f64..1e3, ry in -1e3f64..1e3, s in 1e-3f64..1e3) {
            prop_assume!(rx.hypot(ry) > 1e-6);
            let a = azimuth_deg(rx, ry);
            let b = azimuth_deg(rx * s, ry * s);
            let d = (a - b).abs();
            prop_assert!(d.min(360.0 - d) < 1e-9, "{a} vs {b}");
        }

        #[test]
        fn azimuth_in_range(rx in -1e6f64..1e6, ry in -1e6f64..1e6) {
            let t = azimuth_deg(rx, ry);
            prop_assert!((0.0..360.0).contains(&t));
        }
    }
}
