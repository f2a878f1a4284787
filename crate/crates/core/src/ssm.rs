//! Diagonal selective state-space scan.
//!
//! Continuous dynamics `h' = A h + B x`, `y = C h` with diagonal `A < 0` are
//! discretized per step by zero-order hold:
//!
//! ```text
//! delta_t = softplus(W_delta x_t + b_delta)          (per channel)
//! B_t     = W_B x_t + b_B,  C_t = W_C x_t + b_C       (size N, shared by channels)
//! abar    = exp(delta_t * A)
//! bbar    = (abar - 1) / A * B_t
//! h_t     = abar * h_{t-1} + bbar * x_t,   h_{-1} = 0
//! y_t     = <C_t, h_t>
//! ```
//!
//! The recurrence is evaluated sequentially per channel, so cost is linear in
//! sequence length. Sequences are row-major `L x D`.

use std::fs;
use std::path::Path;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this magnitude `A` is treated as zero and `bbar = delta * B`.
pub const A_ZERO_GUARD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    pub channels: usize,
    pub state_dim: usize,
    /// `D x N`, strictly negative.
    pub a: Vec<f64>,
    /// `N x D`
    pub w_b: Vec<f64>,
    pub b_b: Vec<f64>,
    /// `N x D`
    pub w_c: Vec<f64>,
    pub b_c: Vec<f64>,
    /// `D x D`
    pub w_delta: Vec<f64>,
    pub b_delta: Vec<f64>,
    pub seed: u64,
}

/// Names of the parameter groups, in snapshot and gradient order.
pub const PARAM_GROUPS: [&str; 7] = ["a", "w_b", "b_b", "w_c", "b_c", "w_delta", "b_delta"];

impl SsmParams {
    /// `A = -(1..=N)` per channel; projections uniform in `±1/sqrt(D)`;
    /// `b_delta` chosen so the initial step sizes are log-uniform in `[1e-3, 1e-1]`.
    pub fn seeded(channels: usize, state_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (channels.max(1) as f64).sqrt();
        let uniform = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-scale..scale)).collect()
        };
        let a = (0..channels)
            .flat_map(|_| (1..=state_dim).map(|n| -(n as f64)))
            .collect();
        let w_b = uniform(state_dim * channels, &mut rng);
        let b_b = uniform(state_dim, &mut rng);
        let w_c = uniform(state_dim * channels, &mut rng);
        let b_c = uniform(state_dim, &mut rng);
        let w_delta = uniform(channels * channels, &mut rng);
        let b_delta = (0..channels)
            .map(|_| {
                let dt = (rng.random_range(1e-3f64.ln()..1e-1f64.ln())).exp();
                inverse_softplus(dt)
            })
            .collect();
        Self {
            channels,
            state_dim,
            a,
            w_b,
            b_b,
            w_c,
            b_c,
            w_delta,
            b_delta,
            seed,
        }
    }

    /// Parameters whose projections are all zero; only `b_delta` is set.
    pub fn zeros(channels: usize, state_dim: usize) -> Self {
        let mut p = Self::seeded(channels, state_dim, 0);
        for g in [&mut p.w_b, &mut p.b_b, &mut p.w_c, &mut p.b_c, &mut p.w_delta] {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        p.b_delta.iter_mut().for_each(|v| *v = 0.0);
        p
    }

    pub fn groups(&self) -> [&Vec<f64>; 7] {
        [&self.a, &self.w_b, &self.b_b, &self.w_c, &self.b_c, &self.w_delta, &self.b_delta]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.a,
            &mut self.w_b,
            &mut self.b_b,
            &mut self.w_c,
            &mut self.b_c,
            &mut self.w_delta,
            &mut self.b_delta,
        ]
    }

    fn expected_lens(&self) -> [usize; 7] {
        let (d, n) = (self.channels, self.state_dim);
        [d * n, n * d, n, n * d, n, d * d, d]
    }

    pub fn validate(&self) -> Result<()> {
        for ((name, g), len) in PARAM_GROUPS.iter().zip(self.groups()).zip(self.expected_lens()) {
            if g.len() != len {
                return Err(Error::Contract(format!(
                    "parameter `{name}` has {} values, expected {len}",
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract(format!("parameter `{name}` is not finite")));
            }
        }
        if let Some(i) = self.a.iter().position(|&a| a >= 0.0) {
            return Err(Error::Contract(format!(
                "A[{i}] = {} must be negative",
                self.a[i]
            )));
        }
        Ok(())
    }
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// ZOH factors for one diagonal entry: `(abar, (abar - 1) / a)`.
fn zoh<T: Float>(a: T, delta: T) -> (T, T) {
    let da = delta * a;
    let abar = da.exp();
    let coef = if a.abs() < T::from(A_ZERO_GUARD).unwrap() {
        delta
    } else {
        da.exp_m1() / a
    };
    (abar, coef)
}

/// Zero-order hold for one diagonal entry: `(exp(delta a), (exp(delta a) - 1) / a * b)`.
pub fn discretize(a: f64, b: f64, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0) {
        return Err(Error::Contract(format!("step size {delta} must be > 0")));
    }
    let (abar, coef) = zoh(a, delta);
    Ok((abar, coef * b))
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ScanCache<T = f64> {
    pub len: usize,
    pub channels: usize,
    pub state_dim: usize,
    pub x: Vec<T>,
    /// Pre-softplus step-size logits, `L x D`.
    pub z: Vec<T>,
    pub delta: Vec<T>,
    /// `L x N`
    pub b: Vec<T>,
    pub c: Vec<T>,
    /// `L x D x N`
    pub abar: Vec<T>,
    pub coef: Vec<T>,
    pub h: Vec<T>,
}

fn scan<T: Float>(x: &[T], params: &SsmParams, keep: bool) -> Result<(Vec<T>, Option<ScanCache<T>>)> {
    params.validate()?;
    let (dd, nn) = (params.channels, params.state_dim);
    if dd == 0 || x.len() % dd != 0 {
        return Err(Error::Contract(format!(
            "input of {} values is not a whole number of {dd}-channel steps",
            x.len()
        )));
    }
    let len = x.len() / dd;
    let cv = |v: &[f64]| -> Vec<T> { v.iter().map(|&f| T::from(f).unwrap()).collect() };
    let (a, w_b, b_b, w_c, b_c, w_delta, b_delta) = (
        cv(&params.a),
        cv(&params.w_b),
        cv(&params.b_b),
        cv(&params.w_c),
        cv(&params.b_c),
        cv(&params.w_delta),
        cv(&params.b_delta),
    );

    let mut cache = keep.then(|| ScanCache {
        len,
        channels: dd,
        state_dim: nn,
        x: x.to_vec(),
        z: Vec::with_capacity(len * dd),
        delta: Vec::with_capacity(len * dd),
        b: Vec::with_capacity(len * nn),
        c: Vec::with_capacity(len * nn),
        abar: Vec::with_capacity(len * dd * nn),
        coef: Vec::with_capacity(len * dd * nn),
        h: Vec::with_capacity(len * dd * nn),
    });
    let mut h = vec![T::zero(); dd * nn];
    let mut y = vec![T::zero(); len * dd];
    let mut bt = vec![T::zero(); nn];
    let mut ct = vec![T::zero(); nn];
    let dot = |w: &[T], xt: &[T]| w.iter().zip(xt).fold(T::zero(), |acc, (&w, &x)| acc + w * x);

    for t in 0..len {
        let xt = &x[t * dd..(t + 1) * dd];
        for n in 0..nn {
            bt[n] = b_b[n] + dot(&w_b[n * dd..(n + 1) * dd], xt);
            ct[n] = b_c[n] + dot(&w_c[n * dd..(n + 1) * dd], xt);
        }
        if let Some(c) = cache.as_mut() {
            c.b.extend_from_slice(&bt);
            c.c.extend_from_slice(&ct);
        }
        for d in 0..dd {
            let z = b_delta[d] + dot(&w_delta[d * dd..(d + 1) * dd], xt);
            let delta = T::from(softplus(z.to_f64().unwrap())).unwrap();
            let mut acc = T::zero();
            for n in 0..nn {
                let (abar, coef) = zoh(a[d * nn + n], delta);
                let hv = abar * h[d * nn + n] + coef * bt[n] * xt[d];
                h[d * nn + n] = hv;
                acc = acc + ct[n] * hv;
                if let Some(c) = cache.as_mut() {
                    c.abar.push(abar);
                    c.coef.push(coef);
                    c.h.push(hv);
                }
            }
            if !acc.is_finite() {
                return Err(Error::Numeric {
                    step: t,
                    what: "scan output",
                });
            }
            y[t * dd + d] = acc;
            if let Some(c) = cache.as_mut() {
                c.z.push(z);
                c.delta.push(delta);
            }
        }
    }
    Ok((y, cache))
}

/// Forward scan keeping the cache for [`selective_scan_bwd`].
pub fn selective_scan_fwd<T: Float>(x: &[T], params: &SsmParams) -> Result<(Vec<T>, ScanCache<T>)> {
    let (y, cache) = scan(x, params, true)?;
    Ok((y, cache.expect("cache requested")))
}

/// Forward scan without a cache; memory is `O(D N)` beyond the output.
pub fn selective_scan<T: Float>(x: &[T], params: &SsmParams) -> Result<Vec<T>> {
    Ok(scan(x, params, false)?.0)
}

/// Gradients with the same layout as [`SsmParams`], plus the input gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmGrads {
    pub a: Vec<f64>,
    pub w_b: Vec<f64>,
    pub b_b: Vec<f64>,
    pub w_c: Vec<f64>,
    pub b_c: Vec<f64>,
    pub w_delta: Vec<f64>,
    pub b_delta: Vec<f64>,
    pub x: Vec<f64>,
}

impl SsmGrads {
    pub fn groups(&self) -> [&Vec<f64>; 7] {
        [&self.a, &self.w_b, &self.b_b, &self.w_c, &self.b_c, &self.w_delta, &self.b_delta]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.a,
            &mut self.w_b,
            &mut self.b_b,
            &mut self.w_c,
            &mut self.b_c,
            &mut self.w_delta,
            &mut self.b_delta,
        ]
    }

    pub fn max_abs(&self) -> f64 {
        self.groups()
            .into_iter()
            .chain([&self.x])
            .flat_map(|g| g.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Reverse-time adjoint of the scan for upstream gradient `grad_y` (`L x D`).
pub fn selective_scan_bwd(cache: &ScanCache, params: &SsmParams, grad_y: &[f64]) -> Result<SsmGrads> {
    let (len, dd, nn) = (cache.len, cache.channels, cache.state_dim);
    if grad_y.len() != len * dd {
        return Err(Error::Contract(format!(
            "grad_y has {} values, forward output had {}",
            grad_y.len(),
            len * dd
        )));
    }
    if params.channels != dd || params.state_dim != nn {
        return Err(Error::Contract(format!(
            "cache is {dd}x{nn}, params are {}x{}",
            params.channels, params.state_dim
        )));
    }
    let mut g = SsmGrads {
        a: vec![0.0; dd * nn],
        w_b: vec![0.0; nn * dd],
        b_b: vec![0.0; nn],
        w_c: vec![0.0; nn * dd],
        b_c: vec![0.0; nn],
        w_delta: vec![0.0; dd * dd],
        b_delta: vec![0.0; dd],
        x: vec![0.0; len * dd],
    };
    // adjoint flowing into h_t from step t+1: abar_{t+1} * dL/dh_{t+1}
    let mut carry = vec![0.0; dd * nn];
    let mut db = vec![0.0; nn];

    for t in (0..len).rev() {
        let xt = &cache.x[t * dd..(t + 1) * dd];
        let bt = &cache.b[t * nn..(t + 1) * nn];
        let ct = &cache.c[t * nn..(t + 1) * nn];
        let dxt_base = t * dd;
        db.iter_mut().for_each(|v| *v = 0.0);

        for d in 0..dd {
            let gy = grad_y[t * dd + d];
            let delta = cache.delta[t * dd + d];
            let mut ddelta = 0.0;
            for n in 0..nn {
                let i = (t * dd + d) * nn + n;
                let a = params.a[d * nn + n];
                let (abar, coef) = (cache.abar[i], cache.coef[i]);
                let h_prev = if t > 0 { cache.h[i - dd * nn] } else { 0.0 };

                let gh = carry[d * nn + n] + ct[n] * gy;

                let dabar = gh * h_prev;
                let dbbar = gh * xt[d];
                g.x[dxt_base + d] += gh * coef * bt[n];
                carry[d * nn + n] = gh * abar;

                ddelta += dabar * a * abar;
                g.a[d * nn + n] += dabar * delta * abar;

                db[n] += dbbar * coef;
                let dcoef = dbbar * bt[n];
                let (dcoef_ddelta, dcoef_da) = if a.abs() < A_ZERO_GUARD {
                    (1.0, delta * delta / 2.0)
                } else {
                    (abar, (delta * abar - coef) / a)
                };
                ddelta += dcoef * dcoef_ddelta;
                g.a[d * nn + n] += dcoef * dcoef_da;
            }
            let dz = ddelta * sigmoid(cache.z[t * dd + d]);
            g.b_delta[d] += dz;
            for j in 0..dd {
                g.w_delta[d * dd + j] += dz * xt[j];
                g.x[dxt_base + j] += params.w_delta[d * dd + j] * dz;
            }
        }
        for n in 0..nn {
            // dL/dC_t[n] = sum_d gy[t,d] * h_t[d,n]
            let dc: f64 = (0..dd)
                .map(|d| grad_y[t * dd + d] * cache.h[(t * dd + d) * nn + n])
                .sum();
            g.b_b[n] += db[n];
            g.b_c[n] += dc;
            for j in 0..dd {
                g.w_b[n * dd + j] += db[n] * xt[j];
                g.x[dxt_base + j] += params.w_b[n * dd + j] * db[n];
                g.w_c[n * dd + j] += dc * xt[j];
                g.x[dxt_base + j] += params.w_c[n * dd + j] * dc;
            }
        }
    }
    Ok(g)
}

/// Worst parameter found by [`grad_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub eps: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.rel_err <= tol
    }
}

/// Denominator floor for the relative error, so gradients that are zero up to
/// finite-difference noise do not blow it up.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(REL_ERR_FLOOR)
}

/// Central-difference check of the analytic gradient of `sum(y)` with respect
/// to every parameter and every input value.
pub fn grad_check(params: &SsmParams, x: &[f64], eps: f64) -> Result<GradCheckReport> {
    grad_check_with(params, x, eps, selective_scan_bwd)
}

/// [`grad_check`] against an arbitrary backward implementation.
pub fn grad_check_with<F>(params: &SsmParams, x: &[f64], eps: f64, backward: F) -> Result<GradCheckReport>
where
    F: Fn(&ScanCache, &SsmParams, &[f64]) -> Result<SsmGrads>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::config("eps", format!("{eps} outside [1e-7, 1e-3]")));
    }
    let (y, cache) = selective_scan_fwd(x, params)?;
    let grads = backward(&cache, params, &vec![1.0; y.len()])?;
    let loss = |p: &SsmParams, x: &[f64]| -> Result<f64> { Ok(selective_scan(x, p)?.iter().sum()) };

    let mut worst = GradCheckReport {
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        rel_err: -1.0,
        eps,
        checked: 0,
    };
    let mut record = |name: String, analytic: f64, numeric: f64| {
        let rel = relative_error(analytic, numeric);
        worst.checked += 1;
        if rel > worst.rel_err {
            worst.worst_param = name;
            worst.analytic = analytic;
            worst.numeric = numeric;
            worst.rel_err = rel;
        }
    };

    let mut p = params.clone();
    for gi in 0..PARAM_GROUPS.len() {
        for i in 0..p.groups()[gi].len() {
            let orig = p.groups()[gi][i];
            p.groups_mut()[gi][i] = orig + eps;
            let up = loss(&p, x)?;
            p.groups_mut()[gi][i] = orig - eps;
            let down = loss(&p, x)?;
            p.groups_mut()[gi][i] = orig;
            record(
                format!("{}[{i}]", PARAM_GROUPS[gi]),
                grads.groups()[gi][i],
                (up - down) / (2.0 * eps),
            );
        }
    }
    let mut xp = x.to_vec();
    for i in 0..xp.len() {
        let orig = xp[i];
        xp[i] = orig + eps;
        let up = loss(params, &xp)?;
        xp[i] = orig - eps;
        let down = loss(params, &xp)?;
        xp[i] = orig;
        record(format!("x[{i}]"), grads.x[i], (up - down) / (2.0 * eps));
    }
    Ok(worst)
}

const SNAPSHOT_MAGIC: [u8; 4] = *b"RSSM";
const SNAPSHOT_VERSION: u32 = 1;

impl SsmParams {
    /// Little-endian: magic `RSSM`, version, D, N (u32), seed (u64), then the
    /// groups of [`PARAM_GROUPS`] as raw `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.state_dim as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for g in self.groups() {
            for v in g {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 {
            return Err(Error::format("header", format!("{} bytes is too short", bytes.len())));
        }
        if bytes[..4] != SNAPSHOT_MAGIC {
            return Err(Error::format("magic", format!("found {:?}", &bytes[..4])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if u32_at(4) != SNAPSHOT_VERSION {
            return Err(Error::format(
                "version",
                format!("expected {SNAPSHOT_VERSION}, found {}", u32_at(4)),
            ));
        }
        let mut p = SsmParams::zeros(u32_at(8) as usize, u32_at(12) as usize);
        p.seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let lens = p.expected_lens();
        let expected = 24 + lens.iter().sum::<usize>() * 8;
        if bytes.len() != expected {
            return Err(Error::format(
                "payload",
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let mut values = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for (g, len) in p.groups_mut().into_iter().zip(lens) {
            *g = values.by_ref().take(len).collect();
        }
        p.validate().map_err(|e| Error::format("values", e.to_string()))?;
        Ok(p)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(len: usize, channels: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len * channels).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn discretize_limits() {
        let (abar, bbar) = discretize(0.0, 2.0, 0.1).unwrap();
        assert_eq!(abar, 1.0);
        assert!((bbar - 0.2).abs() < 1e-15);

        let (abar, bbar) = discretize(-3.0, 2.0, 1e-12).unwrap();
        assert!((abar - 1.0).abs() < 1e-11);
        assert!(bbar.abs() < 1e-11);

        // exp(-ln 2) = 1/2, (1/2 - 1) / -1 = 1/2
        let (abar, bbar) = discretize(-1.0, 3.0, std::f64::consts::LN_2).unwrap();
        assert!((abar - 0.5).abs() < 1e-15);
        assert!((bbar - 1.5).abs() < 1e-15);

        assert!(discretize(-1.0, 1.0, 0.0).is_err());
        assert!(discretize(-1.0, 1.0, -0.5).is_err());
    }

    #[test]
    fn softplus_is_positive_and_stable() {
        assert!(softplus(-50.0) > 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        for y in [1e-3, 0.05, 0.1, 2.0] {
            assert!((softplus(inverse_softplus(y)) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let p = SsmParams::seeded(3, 4, 1);
        let y = selective_scan(&[0.0; 30], &p).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_closed_form() {
        let p = SsmParams::seeded(2, 3, 5);
        let x = [0.7, -0.4];
        let (y, cache) = selective_scan_fwd(&x[..], &p).unwrap();
        for d in 0..2 {
            let expect: f64 = (0..3)
                .map(|n| cache.c[n] * cache.coef[d * 3 + n] * cache.b[n])
                .sum::<f64>()
                * x[d];
            assert!((y[d] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_params() {
        let p = SsmParams::seeded(3, 4, 1);
        assert!(selective_scan(&[0.0; 4], &p).is_err());
        let mut bad = p.clone();
        bad.a[0] = 0.0;
        assert!(selective_scan(&[0.0; 3], &bad).is_err());
        let (_, cache) = selective_scan_fwd(&[0.0; 3], &p).unwrap();
        assert!(selective_scan_bwd(&cache, &p, &[0.0; 4]).is_err());
    }

    #[test]
    fn non_finite_reports_step() {
        let p = SsmParams::seeded(1, 2, 1);
        let x = [0.1, 0.2, f64::INFINITY, 0.0];
        assert!(matches!(selective_scan(&x, &p), Err(Error::Numeric { step: 2, .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = SsmParams::seeded(3, 4, 2);
        let x = random_input(10, 3, 3);
        let (_, cache) = selective_scan_fwd(&x, &p).unwrap();
        assert_eq!(selective_scan_bwd(&cache, &p, &[0.0; 30]).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = SsmParams::seeded(2, 3, 11);
        let x = random_input(1, 2, 12);
        let r = grad_check(&p, &x, 1e-5).unwrap();
        assert!(r.rel_err <= 1e-4, "{r:?}");
        let x = random_input(64, 4, 13);
        let r = grad_check(&SsmParams::seeded(4, 8, 14), &x, 1e-5).unwrap();
        assert!(r.rel_err <= 1e-4, "{r:?}");
        assert_eq!(r.checked, 4 * 8 * 3 + 8 * 2 + 16 + 4 + 256);
    }

    #[test]
    fn scaled_backward_is_flagged() {
        let p = SsmParams::seeded(2, 3, 21);
        let x = random_input(8, 2, 22);
        let r = grad_check_with(&p, &x, 1e-5, |c, p, g| {
            let mut grads = selective_scan_bwd(c, p, g)?;
            grads.groups_mut().into_iter().for_each(|g| g.iter_mut().for_each(|v| *v *= 2.0));
            Ok(grads)
        })
        .unwrap();
        assert!(!r.passed(1e-4));
        assert!((r.rel_err - 1.0).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn grad_check_eps_range() {
        let p = SsmParams::seeded(1, 1, 0);
        assert!(grad_check(&p, &[0.1], 1e-2).is_err());
        assert!(grad_check(&p, &[0.1], 1e-9).is_err());
    }

    #[test]
    fn f32_path_tracks_f64() {
        let p = SsmParams::seeded(4, 8, 3);
        let x = random_input(128, 4, 4);
        let y64 = selective_scan(&x, &p).unwrap();
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let y32 = selective_scan(&x32, &p).unwrap();
        for (a, b) in y64.iter().zip(&y32) {
            assert!((a - *b as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let p = SsmParams::seeded(3, 5, 99);
        let bytes = p.to_bytes();
        assert_eq!(SsmParams::from_bytes(&bytes).unwrap(), p);
        assert!(SsmParams::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = 0;
        assert!(matches!(SsmParams::from_bytes(&bad), Err(Error::Format { field: "magic", .. })));
    }
}
