//! Dense primitives for finite irreducible aperiodic chains.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row sums within this distance of 1 are renormalized instead of rejected.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Negative entries of roundoff size are flushed to zero.
const NEG_FLUSH: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErgodicFlags {
    pub irreducible: bool,
    /// Exactly one closed communicating class; other states are transient.
    pub unichain: bool,
    /// Aperiodicity of the closed class (of the whole chain when irreducible).
    pub aperiodic: bool,
}

impl ErgodicFlags {
    /// Unique stationary law with geometric convergence from every start.
    pub fn ergodic(&self) -> bool {
        self.unichain && self.aperiodic
    }
}

/// Row-stochastic square matrix, validated at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    entries: DMatrix<f64>,
    flags: ErgodicFlags,
}

impl StochasticMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        validate_stochastic(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        validate_stochastic(matrix_from_rows(rows)?)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn flags(&self) -> ErgodicFlags {
        self.flags
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.entries.row(i).iter().copied().collect()
    }
}

/// Builds a dense matrix from nested rows, rejecting ragged or non-square input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    for r in rows {
        if r.len() != n {
            return Err(Error::NonSquare { rows: n, cols: r.len() });
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn validate_stochastic(mut m: DMatrix<f64>) -> Result<StochasticMatrix> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(Error::NonSquare { rows, cols });
    }
    if rows < 2 {
        return Err(Error::TooFewStates(rows));
    }
    for i in 0..rows {
        let mut sum = 0.0;
        for j in 0..cols {
            let v = m[(i, j)];
            if !v.is_finite() || v < -NEG_FLUSH {
                return Err(Error::NegativeEntry { row: i, col: j, value: v });
            }
            if v < 0.0 {
                m[(i, j)] = 0.0;
            }
            sum += m[(i, j)];
        }
        if (sum - 1.0).abs() >= ROW_SUM_TOL {
            return Err(Error::RowSumViolation { row: i, sum });
        }
        if sum != 1.0 {
            for j in 0..cols {
                m[(i, j)] /= sum;
            }
        }
    }
    let flags = ergodic_flags(&m);
    Ok(StochasticMatrix { entries: m, flags })
}

pub fn check_ergodic(p: &StochasticMatrix) -> ErgodicFlags {
    p.flags
}

fn ergodic_flags(m: &DMatrix<f64>) -> ErgodicFlags {
    let n = m.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| m[(i, j)] > 0.0).collect())
        .collect();
    let comp = strong_components(&adj);
    let n_comp = comp.iter().max().map_or(0, |c| c + 1);
    let mut closed = vec![true; n_comp];
    for (u, out) in adj.iter().enumerate() {
        if out.iter().any(|&v| comp[v] != comp[u]) {
            closed[comp[u]] = false;
        }
    }
    let closed_ids: Vec<usize> = (0..n_comp).filter(|&c| closed[c]).collect();
    let irreducible = n_comp == 1;
    let unichain = closed_ids.len() == 1;
    let class = closed_ids[0];
    let root = comp.iter().position(|&c| c == class).unwrap();

    // Period of the closed class: gcd of level(u) + 1 - level(v) over edges inside it.
    let fwd = bfs_levels(&adj, root);
    let mut g: usize = 0;
    for u in (0..n).filter(|&u| comp[u] == class) {
        let lu = fwd[u].unwrap();
        for &v in &adj[u] {
            let lv = fwd[v].unwrap();
            g = gcd(g, (lu as i64 + 1 - lv as i64).unsigned_abs() as usize);
        }
    }
    ErgodicFlags { irreducible, unichain, aperiodic: g == 1 }
}

/// Strongly connected component label of every vertex (iterative Tarjan).
fn strong_components(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![usize::MAX; n];
    let mut stack = Vec::new();
    let mut next = 0;
    let mut n_comp = 0;
    for s in 0..n {
        if index[s] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(s, 0)];
        index[s] = next;
        low[s] = next;
        next += 1;
        stack.push(s);
        on_stack[s] = true;
        while let Some(&(u, k)) = call.last() {
            if k < adj[u].len() {
                let v = adj[u][k];
                call.last_mut().unwrap().1 += 1;
                if index[v] == usize::MAX {
                    index[v] = next;
                    low[v] = next;
                    next += 1;
                    stack.push(v);
                    on_stack[v] = true;
                    call.push((v, 0));
                } else if on_stack[v] {
                    low[u] = low[u].min(index[v]);
                }
            } else {
                call.pop();
                if let Some(&(p, _)) = call.last() {
                    low[p] = low[p].min(low[u]);
                }
                if low[u] == index[u] {
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp[w] = n_comp;
                        if w == u {
                            break;
                        }
                    }
                    n_comp += 1;
                }
            }
        }
    }
    comp
}

fn bfs_levels(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    let mut queue = VecDeque::new();
    level[start] = Some(0);
    queue.push_back(start);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// A pmf on a finite set, stored as a column vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(DVector<f64>);

impl ProbabilityVector {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidProbability("negative or non-finite entry".into()));
        }
        let s = v.sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidProbability(format!("sum is {s}")));
        }
        Ok(ProbabilityVector(v))
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(v))
    }

    pub fn uniform(n: usize) -> Self {
        ProbabilityVector(DVector::from_element(n, 1.0 / n as f64))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// The matrix 1 ⊗ π: every row equal to π.
    pub fn ones_outer(&self) -> DMatrix<f64> {
        let n = self.0.len();
        DMatrix::from_fn(n, n, |_, j| self.0[j])
    }

    pub fn diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.0)
    }
}

impl std::ops::Index<usize> for ProbabilityVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Solves πP = π, Σπ = 1 by dense LU with the last balance row replaced by normalization.
pub fn stationary_distribution(p: &StochasticMatrix) -> Result<ProbabilityVector> {
    if !p.flags.unichain {
        return Err(Error::NotIrreducible);
    }
    let pm = p.matrix();
    let n = p.dim();
    let mut a = DMatrix::<f64>::identity(n, n) - pm.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("stationary balance equations".into()))?;
    // one step of iterative refinement
    let r = &rhs - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    for v in x.iter_mut() {
        if *v < 0.0 && *v > -1e-13 {
            *v = 0.0;
        }
    }
    if x.iter().any(|v| *v < 0.0) {
        return Err(Error::SingularSystem("stationary solve produced negative mass".into()));
    }
    let s = x.sum();
    x /= s;
    let resid = stationarity_residual(pm, &x);
    if resid > 1e-10 {
        return Err(Error::SingularSystem(format!("stationary residual {resid:e}")));
    }
    Ok(ProbabilityVector(x))
}

/// ‖πP − π‖∞.
pub fn stationarity_residual(p: &DMatrix<f64>, pi: &DVector<f64>) -> f64 {
    (p.tr_mul(pi) - pi).amax()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalMatrix(DMatrix<f64>);

impl FundamentalMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// U₁ = [I − P + 1⊗π]⁻¹.
pub fn fundamental_matrix(p: &StochasticMatrix, pi: &ProbabilityVector) -> Result<FundamentalMatrix> {
    let n = p.dim();
    if pi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: pi.len() });
    }
    let z = DMatrix::<f64>::identity(n, n) - p.matrix() + pi.ones_outer();
    let u = z
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("I - P + 1 pi".into()))?;
    let err = (&u * &z - DMatrix::<f64>::identity(n, n)).amax();
    if err > 1e-9 {
        return Err(Error::SingularSystem(format!("fundamental identity error {err:e}")));
    }
    Ok(FundamentalMatrix(u))
}

/// e_n = Pⁿ − 1⊗π.
pub fn ergodic_deviation(p: &StochasticMatrix, pi: &ProbabilityVector, n: u32) -> DMatrix<f64> {
    matrix_power(p.matrix(), n) - pi.ones_outer()
}

pub fn matrix_power(m: &DMatrix<f64>, mut n: u32) -> DMatrix<f64> {
    let d = m.nrows();
    let mut result = DMatrix::<f64>::identity(d, d);
    let mut base = m.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = &result * &base;
        }
        n >>= 1;
        if n > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Induced ∞-norm: the largest absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
