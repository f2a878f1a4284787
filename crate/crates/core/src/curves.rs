//! 3D Hilbert and Morton keys over `(z, y, x)` cells of a `2^order` cube.
//!
//! Hilbert uses Skilling's transpose construction: the axes are converted to a
//! "transposed" Hilbert index in place, and the key is the bit interleave of
//! that transpose.

use crate::error::{Error, Result};
use crate::voxel::Cell;

pub const MAX_ORDER: u32 = 21;

fn check_order(order: u32) -> Result<()> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::config(
            "order",
            format!("curve order must be in 1..={MAX_ORDER}, got {order}"),
        ));
    }
    Ok(())
}

fn check_cell(cell: Cell, order: u32) -> Result<[u32; 3]> {
    check_order(order)?;
    let side = 1u64 << order;
    let axes = [cell.z, cell.y, cell.x];
    if axes.iter().any(|&a| a as u64 >= side) {
        return Err(Error::Bounds {
            what: "curve cell",
            value: axes.iter().map(|&a| a as i64).collect(),
            bound: vec![side as i64; 3],
        });
    }
    Ok(axes)
}

fn check_key(key: u64, order: u32) -> Result<()> {
    check_order(order)?;
    if key >> (3 * order) != 0 {
        return Err(Error::Bounds {
            what: "curve key",
            value: vec![key as i64],
            bound: vec![1i64 << (3 * order)],
        });
    }
    Ok(())
}

fn interleave(axes: [u32; 3], order: u32) -> u64 {
    let mut key = 0u64;
    for b in (0..order).rev() {
        for a in axes {
            key = key << 1 | ((a >> b) & 1) as u64;
        }
    }
    key
}

fn deinterleave(key: u64, order: u32) -> [u32; 3] {
    let mut axes = [0u32; 3];
    for b in 0..order {
        for (i, a) in axes.iter_mut().enumerate() {
            let bit = (key >> (3 * b + (2 - i as u32))) & 1;
            *a |= (bit as u32) << b;
        }
    }
    axes
}

fn axes_to_transpose(x: &mut [u32; 3], order: u32) {
    let m = 1u32 << (order - 1);
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    for i in 1..3 {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    q = m;
    while q > 1 {
        if x[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in x.iter_mut() {
        *v ^= t;
    }
}

fn transpose_to_axes(x: &mut [u32; 3], order: u32) {
    let n = 2u64 << (order - 1);
    let t = x[2] >> 1;
    for i in (1..3).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    let mut q = 2u64;
    while q != n {
        let p = (q - 1) as u32;
        let qb = q as u32;
        for i in (0..3).rev() {
            if x[i] & qb != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
}

pub fn hilbert_key(cell: Cell, order: u32) -> Result<u64> {
    let mut axes = check_cell(cell, order)?;
    axes_to_transpose(&mut axes, order);
    Ok(interleave(axes, order))
}

pub fn hilbert_cell(key: u64, order: u32) -> Result<Cell> {
    check_key(key, order)?;
    let mut axes = deinterleave(key, order);
    transpose_to_axes(&mut axes, order);
    Ok(Cell::from(axes))
}

pub fn morton_key(cell: Cell, order: u32) -> Result<u64> {
    Ok(interleave(check_cell(cell, order)?, order))
}

pub fn morton_cell(key: u64, order: u32) -> Result<Cell> {
    check_key(key, order)?;
    Ok(Cell::from(deinterleave(key, order)))
}

/// Smallest order whose cube covers `dims`.
pub fn order_for_dims(dims: [u32; 3]) -> u32 {
    let max = dims.iter().copied().max().unwrap_or(1).max(2);
    32 - (max - 1).leading_zeros()
}
