//! Spatial-to-sequence reordering and its exact inverse.
//!
//! Every strategy reduces to one integer sort: each active voxel gets a
//! `(sequence id, key, linear cell index)` triple, triples are sorted, and runs
//! of equal sequence id become sequences. The linear index makes every triple
//! unique, so the result does not depend on how the parallel sort schedules work.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{self, MAX_ORDER};
use crate::error::{Error, Result};
use crate::sector::SectorTemplate;
use crate::voxel::{Cell, SparseVoxelSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Z,
    Y,
    X,
}

impl Axis {
    fn of(self, cell: Cell) -> u32 {
        match self {
            Axis::Z => cell.z,
            Axis::Y => cell.y,
            Axis::X => cell.x,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum SerializationStrategy<'a> {
    /// Sector-wise layered angular order from a precomputed template.
    RayAligned(&'a SectorTemplate),
    /// Full 3D Hilbert order over `(z, y, x)`.
    Hilbert { order: u32 },
    Morton { order: u32 },
    /// Lexicographic sort, most significant axis first.
    AxisSort { priority: [Axis; 3] },
}

impl SerializationStrategy<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            SerializationStrategy::RayAligned(_) => "ray",
            SerializationStrategy::Hilbert { .. } => "hilbert",
            SerializationStrategy::Morton { .. } => "morton",
            SerializationStrategy::AxisSort { .. } => "axis",
        }
    }

    fn check(&self, dims: [u32; 3]) -> Result<()> {
        match *self {
            SerializationStrategy::RayAligned(t) => {
                if t.dims() != dims {
                    return Err(Error::config(
                        "template",
                        format!("template dims {:?} differ from grid dims {:?}", t.dims(), dims),
                    ));
                }
            }
            SerializationStrategy::Hilbert { order } | SerializationStrategy::Morton { order } => {
                let max = *dims.iter().max().unwrap() as u64;
                if order == 0 || order > MAX_ORDER || (1u64 << order) < max {
                    return Err(Error::config(
                        "order",
                        format!("curve order {order} cannot cover dims {dims:?} (max order {MAX_ORDER})"),
                    ));
                }
            }
            SerializationStrategy::AxisSort { priority } => {
                let mut p = priority;
                p.sort_by_key(|a| *a as u8);
                if p != [Axis::Z, Axis::Y, Axis::X] {
                    return Err(Error::config(
                        "priority",
                        format!("axis priority must be a permutation of z, y, x, got {priority:?}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Sequence id and key for one cell. Baselines use a single sequence 0.
    fn sequence_and_key(&self, cell: Cell) -> (u16, u64) {
        match *self {
            SerializationStrategy::RayAligned(t) => {
                let (s, k) = t.lookup(cell);
                (s, k.0)
            }
            SerializationStrategy::Hilbert { order } => {
                (0, curves::hilbert_key(cell, order).expect("order checked"))
            }
            SerializationStrategy::Morton { order } => {
                (0, curves::morton_key(cell, order).expect("order checked"))
            }
            SerializationStrategy::AxisSort { priority } => {
                let key = priority
                    .iter()
                    .fold(0u64, |acc, a| acc << 21 | a.of(cell) as u64);
                (0, key)
            }
        }
    }
}

/// One ordered sequence: source rows, their sort keys and the gathered features.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorSequence {
    pub sector: u16,
    pub rows: Vec<usize>,
    pub keys: Vec<u64>,
    /// Row-major, `rows.len() * channels`.
    pub features: Vec<f64>,
}

impl SectorSequence {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature(&self, offset: usize, channels: usize) -> &[f64] {
        &self.features[offset * channels..(offset + 1) * channels]
    }
}

/// Non-empty sequences in ascending sector id order. Empty sectors are absent.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorSequences {
    pub scene_id: u64,
    pub channels: usize,
    pub sectors: Vec<SectorSequence>,
}

impl SectorSequences {
    pub fn total_len(&self) -> usize {
        self.sectors.iter().map(SectorSequence::len).sum()
    }

    /// Source rows in sequence order, across all sectors.
    pub fn order(&self) -> impl Iterator<Item = usize> + '_ {
        self.sectors.iter().flat_map(|s| s.rows.iter().copied())
    }

    /// Replaces every sequence's features, keeping rows and keys.
    pub fn map_features<F>(&self, channels: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(&SectorSequence) -> Result<Vec<f64>>,
    {
        let sectors = self
            .sectors
            .iter()
            .map(|s| {
                let features = f(s)?;
                if features.len() != s.len() * channels {
                    return Err(Error::Contract(format!(
                        "sector {}: expected {} feature values, got {}",
                        s.sector,
                        s.len() * channels,
                        features.len()
                    )));
                }
                Ok(SectorSequence {
                    features,
                    ..s.clone()
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            scene_id: self.scene_id,
            channels,
            sectors,
        })
    }

    /// One JSON object per sector:
    /// `{scene_id, sector, count, voxel_rows, keys}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Record<'a> {
            scene_id: u64,
            sector: u16,
            count: usize,
            voxel_rows: &'a [usize],
            keys: &'a [u64],
        }
        for s in &self.sectors {
            let rec = Record {
                scene_id: self.scene_id,
                sector: s.sector,
                count: s.len(),
                voxel_rows: &s.rows,
                keys: &s.keys,
            };
            serde_json::to_writer(&mut out, &rec).map_err(|e| Error::format("jsonl", e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Maps between sequence positions `(slot, offset)` and source voxel rows.
/// `slot` indexes `SectorSequences::sectors`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InverseIndex {
    rows: Vec<Vec<usize>>,
    position_of_row: Vec<(usize, usize)>,
}

impl InverseIndex {
    pub fn row_at(&self, slot: usize, offset: usize) -> Option<usize> {
        self.rows.get(slot)?.get(offset).copied()
    }

    pub fn position_of(&self, row: usize) -> Option<(usize, usize)> {
        self.position_of_row.get(row).copied()
    }

    pub fn num_rows(&self) -> usize {
        self.position_of_row.len()
    }

    pub fn slot_lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.iter().map(Vec::len)
    }
}

pub fn spatial_to_sequence(
    voxels: &SparseVoxelSet,
    strategy: &SerializationStrategy,
) -> Result<(SectorSequences, InverseIndex)> {
    let spec = voxels.spec();
    strategy.check(spec.dims)?;

    let mut entries: Vec<(u16, u64, usize, usize)> = voxels
        .coords()
        .par_iter()
        .enumerate()
        .map(|(row, &cell)| {
            let (seq, key) = strategy.sequence_and_key(cell);
            (seq, key, spec.linear_index(cell), row)
        })
        .collect();
    entries.par_sort_unstable();

    let channels = voxels.channels();
    let mut sectors: Vec<SectorSequence> = Vec::new();
    let mut position_of_row = vec![(0, 0); voxels.len()];
    for &(seq, key, _, row) in &entries {
        if sectors.last().is_none_or(|s| s.sector != seq) {
            sectors.push(SectorSequence {
                sector: seq,
                rows: Vec::new(),
                keys: Vec::new(),
                features: Vec::new(),
            });
        }
        let slot = sectors.len() - 1;
        let s = sectors.last_mut().unwrap();
        position_of_row[row] = (slot, s.rows.len());
        s.rows.push(row);
        s.keys.push(key);
    }
    sectors.par_iter_mut().for_each(|s| {
        s.features = Vec::with_capacity(s.rows.len() * channels);
        for &row in &s.rows {
            s.features.extend_from_slice(voxels.feature(row));
        }
    });

    let inverse = InverseIndex {
        rows: sectors.iter().map(|s| s.rows.clone()).collect(),
        position_of_row,
    };
    Ok((
        SectorSequences {
            scene_id: voxels.scene_id,
            channels,
            sectors,
        },
        inverse,
    ))
}

/// Routes sequence features back to their source voxels; coordinates are untouched.
pub fn sequence_to_spatial(
    enhanced: &SectorSequences,
    inv: &InverseIndex,
    target: &SparseVoxelSet,
) -> Result<SparseVoxelSet> {
    let channels = enhanced.channels;
    if channels != target.channels() {
        return Err(Error::Contract(format!(
            "sequence features have {channels} channels, target has {}",
            target.channels()
        )));
    }
    if inv.num_rows() != target.len() {
        return Err(Error::Contract(format!(
            "inverse index covers {} rows, target has {}",
            inv.num_rows(),
            target.len()
        )));
    }
    if enhanced.sectors.len() != inv.rows.len() {
        return Err(Error::Contract(format!(
            "{} sequences, inverse index expects {}",
            enhanced.sectors.len(),
            inv.rows.len()
        )));
    }
    let mut out = vec![0.0; target.len() * channels];
    for (slot, (seq, rows)) in enhanced.sectors.iter().zip(&inv.rows).enumerate() {
        if seq.len() != rows.len() || seq.features.len() != rows.len() * channels {
            return Err(Error::Contract(format!(
                "sequence {slot} (sector {}) has {} entries and {} feature values, expected {} entries",
                seq.sector,
                seq.len(),
                seq.features.len(),
                rows.len()
            )));
        }
        for (offset, &row) in rows.iter().enumerate() {
            out[row * channels..(row + 1) * channels].copy_from_slice(seq.feature(offset, channels));
        }
    }
    target.with_features(out, channels)
}
