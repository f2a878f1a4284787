//! Multi-beam LiDAR simulator over axis-aligned boxes and an optional ground plane.
//!
//! Each `(beam, azimuth)` ray returns its first hit within range. Output points
//! are ordered beam-major, azimuth-minor. Range noise is drawn from a per-beam
//! stream of a seeded generator, so results do not depend on thread count.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::{Point, PointCloud};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel {
    pub beams: u32,
    /// `[min, max]` elevation in degrees; beams are spaced uniformly across it.
    pub vertical_fov_deg: [f64; 2],
    pub azimuth_res_deg: f64,
    pub max_range: f64,
    pub origin: [f64; 3],
    /// Standard deviation of Gaussian range noise, meters.
    pub range_noise: f64,
}

impl Default for SensorModel {
    /// 32 beams over `[-30, +10]` degrees at 0.2 degree azimuth steps, mounted 1.8 m up.
    fn default() -> Self {
        Self {
            beams: 32,
            vertical_fov_deg: [-30.0, 10.0],
            azimuth_res_deg: 0.2,
            max_range: 100.0,
            origin: [0.0, 0.0, 1.8],
            range_noise: 0.02,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if self.beams == 0 {
            return Err(Error::config("beams", "need at least one beam"));
        }
        if !(self.azimuth_res_deg > 0.0) {
            return Err(Error::config("azimuth_res_deg", "must be > 0"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::config("max_range", "must be > 0"));
        }
        let [lo, hi] = self.vertical_fov_deg;
        if !(lo <= hi && lo >= -90.0 && hi <= 90.0) {
            return Err(Error::config("vertical_fov_deg", format!("invalid range [{lo}, {hi}]")));
        }
        if !(self.range_noise >= 0.0) {
            return Err(Error::config("range_noise", "must be >= 0"));
        }
        Ok(())
    }

    pub fn elevations_deg(&self) -> Vec<f64> {
        let [lo, hi] = self.vertical_fov_deg;
        if self.beams == 1 {
            return vec![lo];
        }
        let step = (hi - lo) / (self.beams - 1) as f64;
        (0..self.beams).map(|b| lo + b as f64 * step).collect()
    }

    pub fn azimuth_steps(&self) -> usize {
        (360.0 / self.azimuth_res_deg).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxRole {
    Target,
    Occluder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub id: u32,
    pub center: [f64; 3],
    /// Full extents along x, y, z in meters.
    pub size: [f64; 3],
    pub role: BoxRole,
}

impl SceneBox {
    /// Distance along the ray to the entry point, if the ray hits the box.
    fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            let lo = self.center[i] - self.size[i] / 2.0;
            let hi = self.center[i] + self.size[i] / 2.0;
            if dir[i] == 0.0 {
                if origin[i] < lo || origin[i] > hi {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (a, b) = ((lo - origin[i]) * inv, (hi - origin[i]) * inv);
            t_near = t_near.max(a.min(b));
            t_far = t_far.min(a.max(b));
        }
        (t_near <= t_far && t_far > 0.0).then_some(t_near.max(0.0))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub boxes: Vec<SceneBox>,
    /// Adds an infinite ground plane at `z = 0`.
    pub ground: bool,
}

impl Scene {
    pub fn new(boxes: Vec<SceneBox>, ground: bool) -> Result<Self> {
        let scene = Self { boxes, ground };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for b in &self.boxes {
            if b.size.iter().any(|&s| !(s > 0.0 && s.is_finite())) || b.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::config("boxes", format!("box {} has invalid geometry", b.id)));
            }
            if !ids.insert(b.id) {
                return Err(Error::config("boxes", format!("duplicate box id {}", b.id)));
            }
        }
        Ok(())
    }

    /// Parses a JSON list of `{id, center, size, role}` boxes.
    pub fn from_json(json: &str, ground: bool) -> Result<Self> {
        let boxes: Vec<SceneBox> =
            serde_json::from_str(json).map_err(|e| Error::format("scene", e.to_string()))?;
        Self::new(boxes, ground)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.boxes).expect("boxes serialize")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    pub cloud: PointCloud,
    /// Box hit by each point; `None` for ground returns.
    pub hits: Vec<Option<u32>>,
}

pub fn simulate_scan(scene: &Scene, sensor: &SensorModel, seed: u64) -> Result<ScanResult> {
    scene.validate()?;
    sensor.validate()?;
    let elevations = sensor.elevations_deg();
    let steps = sensor.azimuth_steps();
    let noise = Normal::new(0.0, sensor.range_noise).map_err(|e| Error::config("range_noise", e.to_string()))?;
    let o = sensor.origin;

    let per_beam: Vec<Vec<(Point, Option<u32>)>> = elevations
        .par_iter()
        .enumerate()
        .map(|(beam, &elev)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(beam as u64);
            let (se, ce) = elev.to_radians().sin_cos();
            let mut out = Vec::new();
            for k in 0..steps {
                let (sa, ca) = (k as f64 * sensor.azimuth_res_deg).to_radians().sin_cos();
                let dir = [ce * ca, ce * sa, se];
                let mut best: Option<(f64, Option<u32>)> = None;
                for b in &scene.boxes {
                    if let Some(t) = b.intersect(o, dir) {
                        if best.is_none_or(|(bt, _)| t < bt) {
                            best = Some((t, Some(b.id)));
                        }
                    }
                }
                if scene.ground && dir[2] < 0.0 && o[2] > 0.0 {
                    let t = -o[2] / dir[2];
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, None));
                    }
                }
                // one draw per ray, hit or miss
                let jitter = noise.sample(&mut rng);
                let Some((t, id)) = best.filter(|(t, _)| *t <= sensor.max_range) else {
                    continue;
                };
                let r = (t + jitter).max(1e-3);
                let intensity = (1.0 / (r * r)).clamp(0.0, 1.0);
                let p = Point::new(o[0] + r * dir[0], o[1] + r * dir[1], o[2] + r * dir[2], intensity);
                out.push((p, id));
            }
            out
        })
        .collect();

    let (points, hits): (Vec<Point>, Vec<Option<u32>>) = per_beam.into_iter().flatten().unzip();
    Ok(ScanResult {
        cloud: PointCloud::new(points, seed)?,
        hits,
    })
}

/// Number of returns per box id; boxes with no returns report 0.
pub fn returns_per_object(scan: &ScanResult, scene: &Scene) -> BTreeMap<u32, usize> {
    let mut counts: BTreeMap<u32, usize> = scene.boxes.iter().map(|b| (b.id, 0)).collect();
    for id in scan.hits.iter().flatten() {
        *counts.entry(*id).or_default() += 1;
    }
    counts
}

/// Passenger-car sized target of the far-field sparsity check: 2 m x 1 m x 1.5 m
/// resting on the ground at `range` meters along +x.
pub fn target_at(id: u32, range: f64, azimuth_deg: f64) -> SceneBox {
    let (s, c) = azimuth_deg.to_radians().sin_cos();
    SceneBox {
        id,
        center: [range * c, range * s, 0.75],
        size: [2.0, 1.0, 1.5],
        role: BoxRole::Target,
    }
}

/// Random urban-ish scene: near occluders (vehicles), mid-range walls and
/// far-field targets between 40 and 60 m. Always includes the ground plane.
pub fn standard_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boxes = Vec::new();
    let mut id = 0;
    let mut push = |boxes: &mut Vec<SceneBox>, range: f64, az: f64, size: [f64; 3], role| {
        let (s, c) = az.to_radians().sin_cos();
        boxes.push(SceneBox {
            id,
            center: [range * c, range * s, size[2] / 2.0],
            size,
            role,
        });
        id += 1;
    };
    for _ in 0..rng.random_range(4..8) {
        let range = rng.random_range(6.0..25.0);
        let az = rng.random_range(0.0..360.0);
        push(&mut boxes, range, az, [4.5, 1.9, 1.6], BoxRole::Occluder);
    }
    for _ in 0..rng.random_range(2..4) {
        let range = rng.random_range(25.0..40.0);
        let az = rng.random_range(0.0..360.0);
        let len = rng.random_range(3.0..10.0);
        push(&mut boxes, range, az, [1.0, len, 3.0], BoxRole::Occluder);
    }
    for _ in 0..rng.random_range(4..8) {
        let range = rng.random_range(40.0..60.0);
        let az = rng.random_range(0.0..360.0);
        let size = if rng.random_bool(0.7) {
            [4.5, 1.9, 1.6]
        } else {
            [0.8, 0.8, 1.8]
        };
        push(&mut boxes, range, az, size, BoxRole::Target);
    }
    Scene { boxes, ground: true }
}
