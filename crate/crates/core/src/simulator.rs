//! Coupled simulation of (X, X•, ζ¹), the noise sequences Δ and D, and batch-means
//! correlation estimates.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::controlled::{ControlledFamily, InputSpec};
use crate::error::{Error, Result};
use crate::markov::stationary_distribution;
use crate::second_order::LagSeries;

pub const BURN_IN: usize = 10_000;
pub const BATCHES: usize = 100;

const STREAM_ZETA: u64 = 0;
const STREAM_BULLET: u64 = 1;
const STREAM_FREE: u64 = 2;
const STREAM_INIT: u64 = 3;

/// Inverse-CDF draw: the first j with u < Σ_{k≤j} row(k), summing in index order.
pub fn sample_row(row: &[f64], u: f64) -> usize {
    let mut c = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        c += p;
        last = j;
        if u < c {
            return j;
        }
    }
    last
}

/// Cumulative sums over the nonzero entries of each row.
#[derive(Debug, Clone)]
struct CumRows {
    targets: Vec<Vec<usize>>,
    cum: Vec<Vec<f64>>,
}

impl CumRows {
    fn new(m: &DMatrix<f64>) -> Self {
        let mut targets = Vec::with_capacity(m.nrows());
        let mut cum = Vec::with_capacity(m.nrows());
        for i in 0..m.nrows() {
            let mut t = Vec::new();
            let mut c = Vec::new();
            let mut acc = 0.0;
            for j in 0..m.ncols() {
                if m[(i, j)] > 0.0 {
                    acc += m[(i, j)];
                    t.push(j);
                    c.push(acc);
                }
            }
            targets.push(t);
            cum.push(c);
        }
        CumRows { targets, cum }
    }

    fn draw(&self, i: usize, u: f64) -> usize {
        let c = &self.cum[i];
        let k = c.partition_point(|v| *v <= u).min(c.len() - 1);
        self.targets[i][k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPath {
    pub x: Vec<u32>,
    pub x_bullet: Vec<u32>,
    /// Index into the input alphabet.
    pub zeta_index: Vec<u16>,
    pub states: Vec<f64>,
    pub epsilon: f64,
    pub seed: u64,
}

impl CoupledPath {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn zeta1(&self, t: usize) -> f64 {
        self.states[self.zeta_index[t] as usize]
    }

    /// ζ_t = εζ¹_t along the path.
    pub fn zeta(&self) -> Vec<f64> {
        self.zeta_index.iter().map(|&i| self.epsilon * self.states[i as usize]).collect()
    }

    pub fn mismatch_fraction(&self) -> f64 {
        let n = self.x.iter().zip(&self.x_bullet).filter(|(a, b)| a != b).count();
        n as f64 / self.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# seed={} epsilon={}\nt,x,x_bullet,zeta1\n", self.seed, self.epsilon);
        for t in 0..self.len() {
            let _ = writeln!(out, "{t},{},{},{}", self.x[t], self.x_bullet[t], self.zeta1(t));
        }
        out
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn input_matrices(family: &ControlledFamily, input: &InputSpec) -> Result<Vec<DMatrix<f64>>> {
    input
        .states()
        .iter()
        .map(|&z| family.evaluate(input.epsilon() * z).map(|p| p.into_matrix()))
        .collect()
}

/// Runs the coupled recursion for `BURN_IN + t_len` steps and keeps the last `t_len` states.
///
/// X = X• at the start, drawn from π₀, with ζ¹ drawn from μ. The input state at time t
/// drives the transition t → t+1.
pub fn simulate_coupled(family: &ControlledFamily, input: &InputSpec, t_len: usize, seed: u64) -> Result<CoupledPath> {
    if t_len == 0 {
        return Err(Error::InvalidArgument("path length must be positive".into()));
    }
    let pz: Vec<CumRows> = input_matrices(family, input)?.iter().map(CumRows::new).collect();
    let p0 = CumRows::new(family.p0().matrix());
    let k = CumRows::new(input.k().matrix());
    let pi0 = stationary_distribution(family.p0())?;

    let mut init = stream(seed, STREAM_INIT);
    let mut rz = stream(seed, STREAM_ZETA);
    let mut rb = stream(seed, STREAM_BULLET);
    let mut rf = stream(seed, STREAM_FREE);

    let mut x = sample_row(pi0.as_slice(), init.random::<f64>());
    let mut xb = x;
    let mut z = sample_row(input.mu().as_slice(), init.random::<f64>());

    let mut path = CoupledPath {
        x: Vec::with_capacity(t_len),
        x_bullet: Vec::with_capacity(t_len),
        zeta_index: Vec::with_capacity(t_len),
        states: input.states().to_vec(),
        epsilon: input.epsilon(),
        seed,
    };
    for step in 0..BURN_IN + t_len {
        if step >= BURN_IN {
            path.x.push(x as u32);
            path.x_bullet.push(xb as u32);
            path.zeta_index.push(z as u16);
        }
        let nb: f64 = rb.random();
        let nf: f64 = rf.random();
        let n = if x == xb { nb } else { nf };
        let x_next = pz[z].draw(x, n);
        xb = p0.draw(xb, nb);
        x = x_next;
        z = k.draw(z, rz.random());
    }
    Ok(path)
}

/// Sequence of sparse vectors in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSeries {
    dim: usize,
    row_ptr: Vec<usize>,
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl SparseSeries {
    pub fn from_scalars(v: &[f64]) -> Self {
        SparseSeries {
            dim: 1,
            row_ptr: (0..=v.len()).collect(),
            idx: vec![0; v.len()],
            val: v.to_vec(),
        }
    }

    /// Indicator vectors e_{x_t}.
    pub fn from_states(x: &[u32], dim: usize) -> Self {
        SparseSeries {
            dim,
            row_ptr: (0..=x.len()).collect(),
            idx: x.to_vec(),
            val: vec![1.0; x.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self, t: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[t]..self.row_ptr[t + 1];
        self.idx[r.clone()].iter().map(|&i| i as usize).zip(self.val[r].iter().copied())
    }

    pub fn dense(&self, t: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        for (i, x) in self.entries(t) {
            v[i] += x;
        }
        v
    }

    fn push(&mut self, entries: impl Iterator<Item = (usize, f64)>) {
        for (i, v) in entries {
            self.idx.push(i as u32);
            self.val.push(v);
        }
        self.row_ptr.push(self.idx.len());
    }
}

fn innovation(path: &CoupledPath, rows: impl Fn(usize, usize) -> Vec<(usize, f64)>, dim: usize) -> SparseSeries {
    let mut s = SparseSeries { dim, row_ptr: vec![0], idx: Vec::new(), val: Vec::new() };
    for t in 0..path.len().saturating_sub(1) {
        let (x, x1) = (path.x[t] as usize, path.x[t + 1] as usize);
        let mut e = rows(x, path.zeta_index[t] as usize);
        match e.iter_mut().find(|(j, _)| *j == x1) {
            Some(entry) => entry.1 += 1.0,
            None => e.push((x1, 1.0)),
        }
        s.push(e.into_iter());
    }
    s
}

fn neg_sparse_row(m: &DMatrix<f64>, i: usize) -> Vec<(usize, f64)> {
    (0..m.ncols()).filter(|&j| m[(i, j)] != 0.0).map(|j| (j, -m[(i, j)])).collect()
}

/// Δ_{t+1} = e_{x_{t+1}} − P_{ζ_t}(x_t, ·), for t = 0..T−2.
pub fn extract_delta(path: &CoupledPath, family: &ControlledFamily, input: &InputSpec) -> Result<SparseSeries> {
    let pz = input_matrices(family, input)?;
    Ok(innovation(path, |x, z| neg_sparse_row(&pz[z], x), family.dim()))
}

/// D_{t+1} = e_{x_{t+1}} − P₀(x_t, ·), for t = 0..T−2.
pub fn extract_d(path: &CoupledPath, family: &ControlledFamily) -> SparseSeries {
    let p0 = family.p0().matrix();
    innovation(path, |x, _| neg_sparse_row(p0, x), family.dim())
}

/// Lag-indexed estimates with batch-means standard errors.
#[derive(Debug, Clone)]
pub struct EmpiricalSeries {
    pub estimate: LagSeries<DMatrix<f64>>,
    pub std_error: LagSeries<DMatrix<f64>>,
}

impl EmpiricalSeries {
    pub fn at(&self, lag: i64) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        Some((self.estimate.get(lag)?, self.std_error.get(lag)?))
    }

    /// Largest |estimate − target| / SE over entries; entries with zero SE must match exactly.
    pub fn max_z_score(&self, lag: i64, target: &DMatrix<f64>) -> f64 {
        let (est, se) = self.at(lag).expect("lag in range");
        let mut worst = 0.0f64;
        for ((e, s), t) in est.iter().zip(se.iter()).zip(target.iter()) {
            let diff = (e - t).abs();
            let z = if *s > 0.0 {
                diff / s
            } else if diff <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
        }
        worst
    }
}

impl EmpiricalSeries {
    /// Number of entries at `lag` with a positive standard error.
    pub fn tested_entries(&self, lag: i64) -> usize {
        self.std_error.get(lag).map_or(0, |s| s.iter().filter(|v| **v > 0.0).count())
    }
}

/// Per-entry z threshold that gives `n_tests` two-sided normal tests the same family-wise
/// false-alarm probability as a single test at `z` (Šidák).
pub fn familywise_threshold(n_tests: usize, z: f64) -> f64 {
    let std = Normal::standard();
    if n_tests <= 1 {
        return z;
    }
    let alpha = 2.0 * std.sf(z);
    let per = -(-alpha).ln_1p() / n_tests as f64;
    let per = -(-per).exp_m1();
    std.inverse_cdf(1.0 - per / 2.0)
}

fn batch_bounds(n: usize, batches: usize) -> Vec<usize> {
    (0..=batches).map(|b| b * n / batches).collect()
}

fn mean_and_se(batch: &[DMatrix<f64>], weights: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let total: f64 = weights.iter().sum();
    let (r, c) = batch[0].shape();
    let mut mean = DMatrix::zeros(r, c);
    for (m, w) in batch.iter().zip(weights) {
        mean += m * *w;
    }
    mean /= total;
    let used: Vec<&DMatrix<f64>> = batch.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(m, _)| m).collect();
    let nb = used.len() as f64;
    let mut var = DMatrix::zeros(r, c);
    for m in &used {
        var += (*m - &mean).map(|v| v * v);
    }
    let se = var.map(|v| (v / (nb - 1.0).max(1.0) / nb).sqrt());
    (mean, se)
}

/// Plug-in estimate of E[a_{s+t} b_sᵀ] for each lag t, averaged over the T − |t| pairs.
pub fn empirical_corr(a: &SparseSeries, b: &SparseSeries, lags: RangeInclusive<i64>) -> Result<EmpiricalSeries> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let cap = (n / 10) as i64;
    let (lo, hi) = (*lags.start(), *lags.end());
    if let Some(bad) = [lo, hi].into_iter().find(|l| l.abs() > cap) {
        return Err(Error::LagTooLarge { lag: bad, len: n });
    }
    let per_lag: Vec<(DMatrix<f64>, DMatrix<f64>)> = (lo..=hi)
        .into_par_iter()
        .map(|t| {
            let s0 = (-t).max(0) as usize;
            let s1 = n - t.max(0) as usize;
            let bounds = batch_bounds(s1 - s0, BATCHES);
            let mut sums = Vec::with_capacity(BATCHES);
            let mut counts = Vec::with_capacity(BATCHES);
            for w in bounds.windows(2) {
                let mut m = DMatrix::zeros(a.dim(), b.dim());
                for s in s0 + w[0]..s0 + w[1] {
                    let u = (s as i64 + t) as usize;
                    for (i, va) in a.entries(u) {
                        for (j, vb) in b.entries(s) {
                            m[(i, j)] += va * vb;
                        }
                    }
                }
                let c = (w[1] - w[0]) as f64;
                if c > 0.0 {
                    m /= c;
                }
                sums.push(m);
                counts.push(c);
            }
            mean_and_se(&sums, &counts)
        })
        .collect();
    let (est, se): (Vec<_>, Vec<_>) = per_lag.into_iter().unzip();
    Ok(EmpiricalSeries {
        estimate: LagSeries::new("empirical", lo, est),
        std_error: LagSeries::new("std_error", lo, se),
    })
}

/// Sample mean with batch-means standard error.
pub fn empirical_mean(a: &SparseSeries) -> (DVector<f64>, DVector<f64>) {
    let bounds = batch_bounds(a.len(), BATCHES);
    let mut sums = Vec::with_capacity(BATCHES);
    let mut counts = Vec::with_capacity(BATCHES);
    for w in bounds.windows(2) {
        let mut m = DMatrix::zeros(a.dim(), 1);
        for s in w[0]..w[1] {
            for (i, v) in a.entries(s) {
                m[(i, 0)] += v;
            }
        }
        let c = (w[1] - w[0]) as f64;
        if c > 0.0 {
            m /= c;
        }
        sums.push(m);
        counts.push(c);
    }
    let (m, se) = mean_and_se(&sums, &counts);
    (m.column(0).into_owned(), se.column(0).into_owned())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRow {
    pub epsilon: f64,
    pub rate: f64,
    pub binomial_se: f64,
    pub batch_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTable {
    pub rows: Vec<CouplingRow>,
    /// Least-squares slope of log rate against log ε over rows with positive rate.
    pub slope: Option<f64>,
}

pub fn coupling_rate(
    family: &ControlledFamily,
    input: &InputSpec,
    eps_list: &[f64],
    t_len: usize,
    seed: u64,
) -> Result<CouplingTable> {
    let rows: Result<Vec<CouplingRow>> = eps_list
        .par_iter()
        .map(|&eps| {
            let path = simulate_coupled(family, &input.with_epsilon(eps)?, t_len, seed)?;
            let ind: Vec<f64> = path.x.iter().zip(&path.x_bullet).map(|(a, b)| (a != b) as u8 as f64).collect();
            let (m, se) = empirical_mean(&SparseSeries::from_scalars(&ind));
            let rate = m[0];
            Ok(CouplingRow {
                epsilon: eps,
                rate,
                binomial_se: (rate * (1.0 - rate) / t_len as f64).sqrt(),
                batch_se: se[0],
            })
        })
        .collect();
    let rows = rows?;
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.rate > 0.0 && r.epsilon > 0.0)
        .map(|r| (r.epsilon.ln(), r.rate.ln()))
        .collect();
    Ok(CouplingTable { slope: loglog_slope(&pts), rows })
}

fn loglog_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Stationary P{X ≠ X•} of the coupled chain on (x, x•, ζ¹), by power iteration of its
/// lazy version.
pub fn exact_mismatch_probability(family: &ControlledFamily, input: &InputSpec) -> Result<f64> {
    let d = family.dim();
    let pz = input_matrices(family, input)?;
    let p0 = family.p0().matrix();
    let k = input.k().matrix();
    let nz = input.n_states();
    let idx = |x: usize, xb: usize, z: usize| (x * d + xb) * nz + z;

    // Transitions of (x, x•) given z, without the input move.
    let mut pair_moves: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d * d * nz];
    for z in 0..nz {
        let cz = CumRows::new(&pz[z]);
        let cb = CumRows::new(p0);
        for x in 0..d {
            for xb in 0..d {
                let mut moves = Vec::new();
                if x == xb {
                    // shared uniform: intersect the two interval partitions
                    let mut edges: Vec<f64> = cz.cum[x].iter().chain(&cb.cum[xb]).copied().collect();
                    edges.push(0.0);
                    edges.sort_by(f64::total_cmp);
                    for w in edges.windows(2) {
                        let width = w[1] - w[0];
                        if width > 0.0 {
                            let mid = 0.5 * (w[0] + w[1]);
                            moves.push((cz.draw(x, mid) * d + cb.draw(xb, mid), width));
                        }
                    }
                } else {
                    for j in 0..d {
                        for jb in 0..d {
                            let w = pz[z][(x, j)] * p0[(xb, jb)];
                            if w > 0.0 {
                                moves.push((j * d + jb, w));
                            }
                        }
                    }
                }
                pair_moves[(x * d + xb) * nz + z] = moves;
            }
        }
    }

    let pi0 = stationary_distribution(family.p0())?;
    let n = d * d * nz;
    let mut v = vec![0.0; n];
    for x in 0..d {
        for z in 0..nz {
            v[idx(x, x, z)] = pi0[x] * input.mu()[z];
        }
    }
    for _ in 0..200_000 {
        let mut next = vec![0.0; n];
        for (s, &mass) in v.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let z = s % nz;
            for &(pair, w) in &pair_moves[s] {
                for z2 in 0..nz {
                    let kz = k[(z, z2)];
                    if kz > 0.0 {
                        next[pair * nz + z2] += 0.5 * mass * w * kz;
                    }
                }
            }
        }
        let mut change = 0.0f64;
        for (a, b) in next.iter_mut().zip(&v) {
            *a += 0.5 * b;
            change = change.max((*a - b).abs());
        }
        v = next;
        if change < 1e-15 {
            let mut p = 0.0;
            for x in 0..d {
                for xb in (0..d).filter(|&xb| xb != x) {
                    for z in 0..nz {
                        p += v[idx(x, xb, z)];
                    }
                }
            }
            return Ok(p);
        }
    }
    Err(Error::TruncationNotConverged { max_terms: 200_000 })
}
