#![allow(dead_code)]

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rayserde::ssm::SsmParams;
use rayserde::voxel::{Cell, SparseVoxelSet, VoxelGridSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` distinct random cells with random features.
pub fn random_set(rng: &mut ChaCha8Rng, spec: &VoxelGridSpec, n: usize, channels: usize) -> SparseVoxelSet {
    let total = spec.num_cells() as usize;
    let n = n.min(total);
    let coords: Vec<Cell> = sample(rng, total, n).into_iter().map(|i| spec.cell_at(i)).collect();
    let features = (0..n * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    let counts = (0..n).map(|_| rng.random_range(1..20)).collect();
    SparseVoxelSet::new(spec.clone(), coords, features, channels, counts).unwrap()
}

/// Unit cells on `[Z, Y, X]` with the default ego center.
pub fn unit_grid(dims: [u32; 3]) -> VoxelGridSpec {
    VoxelGridSpec::new([1.0; 3], dims, [0.0; 3]).unwrap()
}

/// Sector, raw azimuth and BEV radius of a cell, computed here from scratch.
pub fn polar(cell: Cell, center: [f64; 2], delta_theta: f64) -> (u16, f64, f64) {
    let rx = cell.x as f64 - center[0];
    let ry = cell.y as f64 - center[1];
    let mut theta = ry.atan2(rx).to_degrees();
    if theta < 0.0 {
        theta += 360.0;
    }
    if theta >= 360.0 || (rx == 0.0 && ry == 0.0) {
        theta = 0.0;
    }
    let sector = (theta / delta_theta).floor() as u16;
    (sector, theta, rx.hypot(ry))
}

/// Azimuth truncated to the 24-bit key resolution.
pub fn theta_bucket(theta: f64) -> u64 {
    (theta / 360.0 * (1u64 << 24) as f64).floor() as u64
}

pub struct Attr {
    sector: u16,
    z: u32,
    theta_q: u64,
    radius: f64,
    linear: usize,
}

pub fn attrs(v: &SparseVoxelSet, dt: f64) -> Vec<Attr> {
    let spec = v.spec();
    v.coords()
        .iter()
        .map(|&c| {
            let (sector, theta, radius) = polar(c, spec.center, dt);
            Attr {
                sector,
                z: c.z,
                theta_q: theta_bucket(theta),
                radius,
                linear: spec.linear_index(c),
            }
        })
        .collect()
}

/// Sector, then higher layer first, then smaller azimuth, then radius, then linear index.
pub fn precedes(a: &Attr, b: &Attr) -> Ordering {
    a.sector
        .cmp(&b.sector)
        .then(b.z.cmp(&a.z))
        .then(a.theta_q.cmp(&b.theta_q))
        .then(a.radius.total_cmp(&b.radius))
        .then(a.linear.cmp(&b.linear))
}

/// Rank of every row = number of rows strictly before it. Quadratic on purpose.
pub fn brute_force_order(v: &SparseVoxelSet, dt: f64) -> Vec<(u16, Vec<usize>)> {
    let a = attrs(v, dt);
    let mut placed = vec![usize::MAX; a.len()];
    for i in 0..a.len() {
        let rank = (0..a.len()).filter(|&j| precedes(&a[j], &a[i]) == Ordering::Less).count();
        placed[rank] = i;
    }
    let mut out: Vec<(u16, Vec<usize>)> = Vec::new();
    for row in placed {
        match out.last_mut() {
            Some((s, rows)) if *s == a[row].sector => rows.push(row),
            _ => out.push((a[row].sector, vec![row])),
        }
    }
    out
}

/// Plain per-step recurrence written from the model equations, no shared code.
pub fn naive_scan(x: &[f64], p: &SsmParams) -> Vec<f64> {
    let (d, n) = (p.channels, p.state_dim);
    let len = x.len() / d;
    let mut h = vec![0.0; d * n];
    let mut y = vec![0.0; x.len()];
    for t in 0..len {
        let xt = &x[t * d..(t + 1) * d];
        let proj = |w: &[f64], b: f64| b + (0..d).map(|j| w[j] * xt[j]).sum::<f64>();
        let bt: Vec<f64> = (0..n).map(|k| proj(&p.w_b[k * d..(k + 1) * d], p.b_b[k])).collect();
        let ct: Vec<f64> = (0..n).map(|k| proj(&p.w_c[k * d..(k + 1) * d], p.b_c[k])).collect();
        for c in 0..d {
            let z = proj(&p.w_delta[c * d..(c + 1) * d], p.b_delta[c]);
            let delta = (1.0 + z.exp()).ln();
            for k in 0..n {
                let a = p.a[c * n + k];
                let abar = (delta * a).exp();
                let bbar = (abar - 1.0) / a * bt[k];
                h[c * n + k] = abar * h[c * n + k] + bbar * xt[c];
                y[t * d + c] += ct[k] * h[c * n + k];
            }
        }
    }
    y
}
