//! Per-sector sequence block: neighborhood aggregation, ray-aligned
//! serialization, one selective scan per non-empty sector, scatter-back and a
//! residual connection to the block input.
//!
//! One parameter set is shared by every sector of a layer. Sectors carry no
//! state between each other, so they may run in any order or in parallel with
//! bit-identical results.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sector::SectorTemplate;
use crate::serialize::{sequence_to_spatial, spatial_to_sequence, SerializationStrategy};
use crate::ssm::{selective_scan, SsmParams};
use crate::voxel::{Cell, SparseVoxelSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalKind {
    #[default]
    Learned,
    Sinusoidal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockConfig {
    pub layer: usize,
    pub in_channels: usize,
    /// Width of the sequence model.
    pub model_channels: usize,
    pub state_dim: usize,
    /// Chebyshev radius of the neighborhood mean, in cells.
    pub radius: u32,
    pub max_len: usize,
    pub seed: u64,
    pub positional: PositionalKind,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            layer: 0,
            in_channels: crate::voxel::POINT_CHANNELS,
            model_channels: 16,
            state_dim: 16,
            radius: 1,
            max_len: 65_536,
            seed: 0,
            positional: PositionalKind::Learned,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PositionalEmbedding {
    /// `max_len x D` table.
    Learned(Vec<f64>),
    Sinusoidal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SectorMambaBlock {
    pub config: BlockConfig,
    pub ssm: SsmParams,
    pub pos_embed: PositionalEmbedding,
    /// `D x C_in`
    pub w_in: Vec<f64>,
    pub b_in: Vec<f64>,
    /// `C_in x D`
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl SectorMambaBlock {
    pub fn seeded(config: BlockConfig) -> Result<Self> {
        if config.in_channels == 0 || config.model_channels == 0 || config.state_dim == 0 {
            return Err(Error::config("block", "channel and state sizes must be >= 1"));
        }
        let (c, d) = (config.in_channels, config.model_channels);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut uniform = |n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-scale..scale)).collect()
        };
        let w_in = uniform(d * c, 1.0 / (c as f64).sqrt());
        let b_in = uniform(d, 0.1);
        let w_out = uniform(c * d, 1.0 / (d as f64).sqrt());
        let b_out = uniform(c, 0.1);
        let pos_embed = match config.positional {
            PositionalKind::Learned => PositionalEmbedding::Learned(uniform(config.max_len * d, 0.02)),
            PositionalKind::Sinusoidal => PositionalEmbedding::Sinusoidal,
        };
        let ssm = SsmParams::seeded(d, config.state_dim, config.seed.wrapping_add(1));
        Ok(Self {
            config,
            ssm,
            pos_embed,
            w_in,
            b_in,
            w_out,
            b_out,
        })
    }

    /// Zeroes the output projection so the block reduces to its residual path.
    pub fn with_zero_output(mut self) -> Self {
        self.w_out.iter_mut().for_each(|v| *v = 0.0);
        self.b_out.iter_mut().for_each(|v| *v = 0.0);
        self
    }
}

/// Mean of the features of active voxels within Chebyshev `radius` (self included).
pub fn local_aggregate(voxels: &SparseVoxelSet, radius: u32) -> SparseVoxelSet {
    if radius == 0 || voxels.is_empty() {
        return voxels.clone();
    }
    let index: HashMap<Cell, usize> = voxels.coords().iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let dims = voxels.spec().dims;
    let ch = voxels.channels();
    let r = radius as i64;
    let span = |v: u32, n: u32| (v as i64 - r).max(0)..=(v as i64 + r).min(n as i64 - 1);

    let features: Vec<f64> = voxels
        .coords()
        .par_iter()
        .flat_map_iter(|&cell| {
            let mut sum = vec![0.0; ch];
            let mut count = 0usize;
            for z in span(cell.z, dims[0]) {
                for y in span(cell.y, dims[1]) {
                    for x in span(cell.x, dims[2]) {
                        if let Some(&row) = index.get(&Cell::new(z as u32, y as u32, x as u32)) {
                            for (s, f) in sum.iter_mut().zip(voxels.feature(row)) {
                                *s += f;
                            }
                            count += 1;
                        }
                    }
                }
            }
            sum.into_iter().map(move |s| s / count as f64)
        })
        .collect();
    voxels
        .with_features(features, ch)
        .expect("shape preserved")
}

/// Adds `pos_embed[t]` to row `t` of an `L x D` sequence.
pub fn positional_embed(features: &[f64], block: &SectorMambaBlock) -> Result<Vec<f64>> {
    let d = block.config.model_channels;
    let len = features.len() / d;
    if len > block.config.max_len {
        return Err(Error::Capacity {
            what: "sector sequence length",
            requested: len as u64,
            limit: block.config.max_len as u64,
        });
    }
    let mut out = features.to_vec();
    match &block.pos_embed {
        PositionalEmbedding::Learned(table) => {
            for (o, e) in out.iter_mut().zip(table) {
                *o += e;
            }
        }
        PositionalEmbedding::Sinusoidal => {
            for t in 0..len {
                for i in 0..d {
                    let freq = 10_000f64.powf(-((i / 2 * 2) as f64) / d as f64);
                    let angle = t as f64 * freq;
                    out[t * d + i] += if i % 2 == 0 { angle.sin() } else { angle.cos() };
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardOptions {
    pub execution: Execution,
    pub precision: Precision,
}

/// Instrumentation for one forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardStats {
    pub scans: usize,
    pub sectors: Vec<u16>,
    pub longest_sequence: usize,
}

fn linear(input: &[f64], in_dim: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let out_dim = b.len();
    let mut out = Vec::with_capacity(input.len() / in_dim * out_dim);
    for row in input.chunks_exact(in_dim) {
        for o in 0..out_dim {
            let wr = &w[o * in_dim..(o + 1) * in_dim];
            out.push(b[o] + wr.iter().zip(row).map(|(w, x)| w * x).sum::<f64>());
        }
    }
    out
}

pub fn sector_mamba_forward(
    voxels: &SparseVoxelSet,
    template: &SectorTemplate,
    block: &SectorMambaBlock,
    options: ForwardOptions,
) -> Result<(SparseVoxelSet, ForwardStats)> {
    let cfg = &block.config;
    if voxels.channels() != cfg.in_channels {
        return Err(Error::Contract(format!(
            "voxels have {} channels, block expects {}",
            voxels.channels(),
            cfg.in_channels
        )));
    }
    let aggregated = local_aggregate(voxels, cfg.radius);
    let (seqs, inv) = spatial_to_sequence(&aggregated, &SerializationStrategy::RayAligned(template))?;
    let longest = seqs.sectors.iter().map(|s| s.len()).max().unwrap_or(0);
    if longest > cfg.max_len {
        return Err(Error::Capacity {
            what: "sector sequence length",
            requested: longest as u64,
            limit: cfg.max_len as u64,
        });
    }

    let scans = AtomicUsize::new(0);
    let run = |features: &[f64]| -> Result<Vec<f64>> {
        let u = linear(features, cfg.in_channels, &block.w_in, &block.b_in);
        let u = positional_embed(&u, block)?;
        scans.fetch_add(1, Ordering::Relaxed);
        let y = match options.precision {
            Precision::F64 => selective_scan(&u, &block.ssm)?,
            Precision::F32 => {
                let u32s: Vec<f32> = u.iter().map(|&v| v as f32).collect();
                selective_scan(&u32s, &block.ssm)?.into_iter().map(f64::from).collect()
            }
        };
        Ok(linear(&y, cfg.model_channels, &block.w_out, &block.b_out))
    };

    let outputs: Vec<Vec<f64>> = match options.execution {
        Execution::Serial => seqs.sectors.iter().map(|s| run(&s.features)).collect::<Result<_>>()?,
        Execution::Parallel => seqs.sectors.par_iter().map(|s| run(&s.features)).collect::<Result<_>>()?,
    };
    let mut outputs = outputs.into_iter();
    let enhanced = seqs.map_features(cfg.in_channels, |_| Ok(outputs.next().expect("one output per sector")))?;
    let scattered = sequence_to_spatial(&enhanced, &inv, voxels)?;

    let fused: Vec<f64> = voxels
        .features()
        .iter()
        .zip(scattered.features())
        .map(|(x, e)| x + e)
        .collect();
    let stats = ForwardStats {
        scans: scans.into_inner(),
        sectors: seqs.sectors.iter().map(|s| s.sector).collect(),
        longest_sequence: longest,
    };
    Ok((voxels.with_features(fused, cfg.in_channels)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sector::{build_template, SectorConfig};
    use crate::voxel::VoxelGridSpec;

    fn spec() -> VoxelGridSpec {
        VoxelGridSpec::new([1.0; 3], [4, 16, 16], [0.0; 3]).unwrap()
    }

    fn set(cells: &[Cell], features: Vec<f64>, ch: usize) -> SparseVoxelSet {
        SparseVoxelSet::new(spec(), cells.to_vec(), features, ch, vec![1; cells.len()]).unwrap()
    }

    fn small_block(ch: usize, max_len: usize) -> SectorMambaBlock {
        SectorMambaBlock::seeded(BlockConfig {
            in_channels: ch,
            model_channels: 4,
            state_dim: 4,
            radius: 0,
            max_len,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn aggregate_radius_zero_is_identity() {
        let v = set(&[Cell::new(0, 1, 1), Cell::new(0, 1, 2)], vec![1.0, 5.0], 1);
        assert_eq!(local_aggregate(&v, 0), v);
    }

    #[test]
    fn aggregate_isolated_voxels_unchanged() {
        let v = set(&[Cell::new(0, 1, 1), Cell::new(3, 10, 10)], vec![1.0, 5.0], 1);
        assert_eq!(local_aggregate(&v, 2).features(), &[1.0, 5.0]);
    }

    #[test]
    fn aggregate_constant_patch_is_fixed_point() {
        let cells: Vec<Cell> = (0..3).flat_map(|y| (0..3).map(move |x| Cell::new(0, 4 + y, 4 + x))).collect();
        let v = set(&cells, vec![1.0; 9], 1);
        assert!(local_aggregate(&v, 1).features().iter().all(|&f| f == 1.0));
        // one neighbor pair
        let v = set(&[Cell::new(0, 1, 1), Cell::new(1, 2, 2)], vec![1.0, 3.0], 1);
        assert_eq!(local_aggregate(&v, 1).features(), &[2.0, 2.0]);
    }

    #[test]
    fn positional_embedding() {
        let mut b = small_block(1, 2);
        b.pos_embed = PositionalEmbedding::Learned(vec![0.0; 8]);
        let f = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        assert_eq!(positional_embed(&f, &b).unwrap(), f);

        b.pos_embed = PositionalEmbedding::Learned((0..8).map(|i| i as f64 * 10.0).collect());
        assert_eq!(
            positional_embed(&f, &b).unwrap(),
            vec![1.0, 12.0, 23.0, 34.0, 45.0, 56.0, 67.0, 78.0]
        );
        assert!(matches!(positional_embed(&[0.0; 12], &b), Err(Error::Capacity { .. })));

        b.pos_embed = PositionalEmbedding::Sinusoidal;
        let out = positional_embed(&[0.0; 8], &b).unwrap();
        assert_eq!(&out[..4], &[0.0, 1.0, 0.0, 1.0]);
    }

    fn template() -> SectorTemplate {
        build_template(&spec(), &SectorConfig::for_grid(&spec(), 60.0).unwrap()).unwrap()
    }

    #[test]
    fn empty_input_runs_no_scans() {
        let v = SparseVoxelSet::empty(spec(), 2);
        let (out, stats) = sector_mamba_forward(&v, &template(), &small_block(2, 64), Default::default()).unwrap();
        assert!(out.is_empty());
        assert_eq!(stats.scans, 0);
    }

    #[test]
    fn zero_output_projection_is_residual_identity() {
        let cells = [Cell::new(0, 1, 1), Cell::new(2, 12, 3), Cell::new(1, 9, 14)];
        let v = set(&cells, vec![0.5, -1.0, 2.0, 3.0, -4.0, 0.25], 2);
        let block = small_block(2, 64).with_zero_output();
        let (out, stats) = sector_mamba_forward(&v, &template(), &block, Default::default()).unwrap();
        assert_eq!(out, v);
        assert_eq!(stats.scans, stats.sectors.len());
    }

    #[test]
    fn sequence_longer_than_max_len_is_error() {
        // all on one ray from the center (7.5, 7.5)
        let cells = [Cell::new(0, 8, 12), Cell::new(1, 8, 12), Cell::new(2, 8, 12)];
        let v = set(&cells, vec![1.0; 3], 1);
        let err = sector_mamba_forward(&v, &template(), &small_block(1, 2), Default::default()).unwrap_err();
        assert!(matches!(err, Error::Capacity { requested: 3, limit: 2, .. }));
    }

    #[test]
    fn f32_precision_close_to_f64() {
        let cells = [Cell::new(0, 1, 1), Cell::new(2, 12, 3), Cell::new(1, 9, 14), Cell::new(3, 9, 13)];
        let v = set(&cells, vec![0.5, -1.0, 2.0, 3.0, -4.0, 0.25, 1.0, 1.5], 2);
        let b = small_block(2, 64);
        let (a, _) = sector_mamba_forward(&v, &template(), &b, Default::default()).unwrap();
        let opts = ForwardOptions {
            precision: Precision::F32,
            ..Default::default()
        };
        let (c, _) = sector_mamba_forward(&v, &template(), &b, opts).unwrap();
        for (x, y) in a.features().iter().zip(c.features()) {
            assert!((x - y).abs() < 1e-4);
        }
    }
}
