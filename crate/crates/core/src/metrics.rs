//! Context-window coherence of a serialization.
//!
//! For a reference voxel, its context window is the `K` positions nearest to
//! it in its own sequence (`K/2` per side, borrowing from the other side when
//! one side runs out; the reference itself is excluded). Windows never span
//! two sequences. A window is scored by its mean world distance to the
//! reference, the circular range of its azimuths, and the fraction of members
//! that fall in the reference's azimuth sector.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sector::{azimuth_deg, sector_of};
use crate::serialize::{spatial_to_sequence, InverseIndex, SectorSequences, SerializationStrategy};
use crate::voxel::{center_unchecked, SparseVoxelSet};

pub const DEFAULT_K: usize = 360;
pub const DEFAULT_FAR_FIELD_M: f64 = 40.0;

/// Rows of the context window around `ref_row`.
pub fn context_window(
    seqs: &SectorSequences,
    inv: &InverseIndex,
    ref_row: usize,
    k: usize,
) -> Result<Vec<usize>> {
    let (slot, offset) = inv
        .position_of(ref_row)
        .ok_or_else(|| Error::Lookup(format!("row {ref_row} is not in the sequences")))?;
    let rows = &seqs
        .sectors
        .get(slot)
        .ok_or_else(|| Error::Lookup(format!("sequence slot {slot} missing")))?
        .rows;
    let left_avail = offset;
    let right_avail = rows.len() - 1 - offset;
    let mut left = left_avail.min(k.div_ceil(2));
    let right = right_avail.min(k - left);
    left = left_avail.min(k - right);
    Ok(rows[offset - left..offset]
        .iter()
        .chain(&rows[offset + 1..offset + 1 + right])
        .copied()
        .collect())
}

/// Mean world distance from window members to the reference; `None` for an empty window.
pub fn dispersion(window: &[usize], voxels: &SparseVoxelSet, ref_row: usize) -> Option<f64> {
    if window.is_empty() {
        return None;
    }
    let spec = voxels.spec();
    let r = center_unchecked(voxels.coords()[ref_row], spec);
    let total: f64 = window
        .iter()
        .map(|&w| {
            let p = center_unchecked(voxels.coords()[w], spec);
            ((p[0] - r[0]).powi(2) + (p[1] - r[1]).powi(2) + (p[2] - r[2]).powi(2)).sqrt()
        })
        .sum();
    Some(total / window.len() as f64)
}

fn row_azimuth(voxels: &SparseVoxelSet, row: usize) -> f64 {
    let (rx, ry) = voxels.spec().bev_offset(voxels.coords()[row]);
    azimuth_deg(rx, ry)
}

/// Smallest arc covering a set of angles in degrees: 360 minus the widest gap.
pub fn circular_range(angles: &mut [f64]) -> Option<f64> {
    if angles.is_empty() {
        return None;
    }
    angles.sort_by(f64::total_cmp);
    let wrap = angles[0] + 360.0 - angles[angles.len() - 1];
    let widest = angles.windows(2).map(|w| w[1] - w[0]).fold(wrap, f64::max);
    Some((360.0 - widest).max(0.0))
}

/// Circular range of member azimuths about the grid's ego center.
pub fn angular_spread(window: &[usize], voxels: &SparseVoxelSet) -> Option<f64> {
    let mut angles: Vec<f64> = window.iter().map(|&w| row_azimuth(voxels, w)).collect();
    circular_range(&mut angles)
}

fn same_sector_fraction(window: &[usize], voxels: &SparseVoxelSet, ref_row: usize, delta_theta: f64) -> Option<f64> {
    if window.is_empty() {
        return None;
    }
    let sector = |row| sector_of(row_azimuth(voxels, row), delta_theta).expect("delta validated");
    let s = sector(ref_row);
    Some(window.iter().filter(|&&w| sector(w) == s).count() as f64 / window.len() as f64)
}

/// BEV distance of a voxel center from the ego, meters.
pub fn bev_range(voxels: &SparseVoxelSet, row: usize) -> f64 {
    let spec = voxels.spec();
    let (ex, ey) = spec.ego_world_xy();
    let p = center_unchecked(voxels.coords()[row], spec);
    (p[0] - ex).hypot(p[1] - ey)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsOptions {
    pub k: usize,
    /// References are voxels with BEV range above this, meters.
    pub far_field_m: f64,
    /// At most this many references per scene, taken at an even stride.
    pub max_refs: usize,
    /// Sector width used for the same-sector fraction.
    pub delta_theta: f64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            far_field_m: DEFAULT_FAR_FIELD_M,
            max_refs: 64,
            delta_theta: 60.0,
        }
    }
}

/// Far-field reference rows, chosen independently of any serialization.
pub fn reference_rows(voxels: &SparseVoxelSet, opts: &MetricsOptions) -> Vec<usize> {
    let far: Vec<usize> = (0..voxels.len())
        .filter(|&r| bev_range(voxels, r) > opts.far_field_m)
        .collect();
    if far.len() <= opts.max_refs {
        return far;
    }
    (0..opts.max_refs).map(|i| far[i * far.len() / opts.max_refs]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefMetrics {
    pub ref_row: usize,
    pub range_m: f64,
    pub window_len: usize,
    pub dispersion_m: Option<f64>,
    pub angular_spread_deg: Option<f64>,
    pub same_sector_frac: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

impl Summary {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.collect();
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Self {
            mean: Some(v.iter().sum::<f64>() / n as f64),
            median: Some(median),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub scene_id: u64,
    pub strategy: String,
    pub k: usize,
    pub voxels: usize,
    pub refs: Vec<RefMetrics>,
    pub dispersion_m: Summary,
    pub angular_spread_deg: Summary,
    pub same_sector_frac: Summary,
}

pub fn coherence(
    voxels: &SparseVoxelSet,
    strategy: &SerializationStrategy,
    refs: &[usize],
    opts: &MetricsOptions,
) -> Result<CoherenceReport> {
    crate::sector::sector_count(opts.delta_theta)?;
    let (seqs, inv) = spatial_to_sequence(voxels, strategy)?;
    let per_ref: Vec<RefMetrics> = refs
        .par_iter()
        .map(|&r| {
            let window = context_window(&seqs, &inv, r, opts.k)?;
            Ok(RefMetrics {
                ref_row: r,
                range_m: bev_range(voxels, r),
                window_len: window.len(),
                dispersion_m: dispersion(&window, voxels, r),
                angular_spread_deg: angular_spread(&window, voxels),
                same_sector_frac: same_sector_fraction(&window, voxels, r, opts.delta_theta),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CoherenceReport {
        scene_id: voxels.scene_id,
        strategy: strategy.name().to_string(),
        k: opts.k,
        voxels: voxels.len(),
        dispersion_m: Summary::of(per_ref.iter().filter_map(|m| m.dispersion_m)),
        angular_spread_deg: Summary::of(per_ref.iter().filter_map(|m| m.angular_spread_deg)),
        same_sector_frac: Summary::of(per_ref.iter().filter_map(|m| m.same_sector_frac)),
        refs: per_ref,
    })
}

/// Mean dispersion of one strategy against the first strategy, per scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub scene_id: u64,
    pub baseline: String,
    pub strategy: String,
    pub baseline_dispersion_m: Option<f64>,
    pub strategy_dispersion_m: Option<f64>,
    /// `strategy - baseline`; negative means the strategy's windows are tighter.
    pub delta_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignCounts {
    pub baseline: String,
    pub strategy: String,
    /// Scenes where the strategy's mean dispersion is lower than the baseline's.
    pub lower: usize,
    pub higher: usize,
    pub equal: usize,
    pub undefined: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub options: MetricsOptions,
    /// Scene-major, strategy-minor.
    pub reports: Vec<CoherenceReport>,
    pub paired: Vec<PairedRow>,
    pub signs: Vec<SignCounts>,
}

/// Scores every strategy on every scene with a shared reference set per scene.
/// The first strategy is the baseline of the paired rows.
pub fn compare_strategies(
    scenes: &[SparseVoxelSet],
    strategies: &[SerializationStrategy],
    opts: &MetricsOptions,
) -> Result<Comparison> {
    let mut out = Comparison {
        options: opts.clone(),
        ..Default::default()
    };
    if let Some(first) = scenes.first() {
        if scenes.iter().any(|s| s.spec() != first.spec()) {
            return Err(Error::config("scenes", "all scenes must share one voxel grid"));
        }
    }
    for voxels in scenes {
        let refs = reference_rows(voxels, opts);
        for s in strategies {
            out.reports.push(coherence(voxels, s, &refs, opts)?);
        }
    }
    let n = strategies.len();
    if n == 0 {
        return Ok(out);
    }
    for (i, s) in strategies.iter().enumerate() {
        let mut signs = SignCounts {
            baseline: strategies[0].name().into(),
            strategy: s.name().into(),
            lower: 0,
            higher: 0,
            equal: 0,
            undefined: 0,
        };
        for scene in out.reports.chunks(n) {
            let (b, r) = (&scene[0], &scene[i]);
            let delta = b.dispersion_m.mean.zip(r.dispersion_m.mean).map(|(b, r)| r - b);
            match delta {
                None => signs.undefined += 1,
                Some(d) if d < 0.0 => signs.lower += 1,
                Some(d) if d > 0.0 => signs.higher += 1,
                Some(_) => signs.equal += 1,
            }
            out.paired.push(PairedRow {
                scene_id: b.scene_id,
                baseline: b.strategy.clone(),
                strategy: r.strategy.clone(),
                baseline_dispersion_m: b.dispersion_m.mean,
                strategy_dispersion_m: r.dispersion_m.mean,
                delta_m: delta,
            });
        }
        out.signs.push(signs);
    }
    Ok(out)
}

impl Comparison {
    /// Columns: `scene,strategy,ref_row,range_m,K,dispersion_m,angular_spread_deg,same_sector_frac`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "scene,strategy,ref_row,range_m,K,dispersion_m,angular_spread_deg,same_sector_frac")?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.reports {
            for m in &r.refs {
                writeln!(
                    out,
                    "{},{},{},{:.6},{},{},{},{}",
                    r.scene_id,
                    r.strategy,
                    m.ref_row,
                    m.range_m,
                    r.k,
                    opt(m.dispersion_m),
                    opt(m.angular_spread_deg),
                    opt(m.same_sector_frac)
                )?;
            }
        }
        Ok(())
    }
}
