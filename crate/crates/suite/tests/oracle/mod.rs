//! Exact joint chain on (ζ¹, x), assembled from the model definitions alone.
//!
//! Nothing here goes through the library's approximation or oracle code. States are stored
//! input-major (index z·d + x) and π comes from repeated squaring of the lazy chain.

use nalgebra::{DMatrix, DVector};

/// Queue transition matrix with arrival probability λ(1+ζ); state (n, s) at index 2n + s.
pub fn queue_matrix(lambda: f64, q_bar: usize, zeta: f64) -> DMatrix<f64> {
    let d = 2 * (q_bar + 1);
    let a = lambda * (1.0 + zeta);
    let mut p = DMatrix::zeros(d, d);
    for n in 0..=q_bar {
        for s in 0..2 {
            let x = 2 * n + s;
            p[(x, 2 * (n + 1).min(q_bar))] += a;
            p[(x, 2 * n.saturating_sub(1) + 1)] += 1.0 - a;
        }
    }
    p
}

/// Three-state input on {−1, 0, 1} with autocovariance (2/3)(1−γ)^|m|.
pub fn three_state_k(gamma: f64) -> DMatrix<f64> {
    let rows = if gamma <= 0.5 {
        [[1.0 - gamma, gamma, 0.0], [gamma, 1.0 - 2.0 * gamma, gamma], [0.0, gamma, 1.0 - gamma]]
    } else {
        let c = (2.0 * gamma - 1.0) / 4.0;
        let a = 1.0 - gamma + c;
        [[a, 0.5, c], [0.5, 0.0, 0.5], [c, 0.5, a]]
    };
    DMatrix::from_fn(3, 3, |i, j| rows[i][j])
}

pub const THREE_STATES: [f64; 3] = [-1.0, 0.0, 1.0];

pub struct Joint {
    pub d: usize,
    pub nz: usize,
    pub p: DMatrix<f64>,
    pub pi: DVector<f64>,
    pub p0: DMatrix<f64>,
    /// P_{εz} for each input state z.
    pub pz: Vec<DMatrix<f64>>,
    /// ζ = εz on each joint state.
    pub zeta: DVector<f64>,
}

/// Stationary law of a unichain: every row of (½(I + P))^(2^k) converges to π.
pub fn stationary(p: &DMatrix<f64>) -> DVector<f64> {
    let n = p.nrows();
    let mut q = (DMatrix::identity(n, n) + p) * 0.5;
    for _ in 0..64 {
        let next = &q * &q;
        let done = (&next - &q).amax() < 1e-16;
        q = next;
        if done {
            break;
        }
    }
    let pi = q.row_mean().transpose();
    &pi / pi.sum()
}

impl Joint {
    pub fn new(eval: impl Fn(f64) -> DMatrix<f64>, states: &[f64], k: &DMatrix<f64>, eps: f64) -> Joint {
        let p0 = eval(0.0);
        let d = p0.nrows();
        let nz = states.len();
        let pz: Vec<DMatrix<f64>> = states.iter().map(|z| eval(eps * z)).collect();
        let n = d * nz;
        let p = DMatrix::from_fn(n, n, |i, j| k[(i / d, j / d)] * pz[i / d][(i % d, j % d)]);
        let pi = stationary(&p);
        let zeta = DVector::from_fn(n, |i, _| eps * states[i / d]);
        Joint { d, nz, p, pi, p0, pz, zeta }
    }

    pub fn queue(gamma: f64, eps: f64) -> Joint {
        let lambda = 0.9 / 1.9;
        Joint::new(|z| queue_matrix(lambda, 18, z), &THREE_STATES, &three_state_k(gamma), eps)
    }

    pub fn n(&self) -> usize {
        self.d * self.nz
    }

    fn x(&self, i: usize) -> usize {
        i % self.d
    }

    fn row(&self, i: usize) -> DVector<f64> {
        self.pz[i / self.d].row(self.x(i)).transpose()
    }

    pub fn lift(&self, f: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n(), |i, _| f[self.x(i)])
    }

    pub fn marginal(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.d);
        for i in 0..self.n() {
            m[self.x(i)] += self.pi[i];
        }
        m
    }

    /// E[Γ_0 ζ_0].
    pub fn r_gamma_zeta0(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.d);
        for i in 0..self.n() {
            m[self.x(i)] += self.pi[i] * self.zeta[i];
        }
        m
    }

    /// E[Δ_1 Δ_1ᵀ] with Δ_1 = e_{X_1} − P_{ζ_0}[X_0].
    pub fn sigma_delta(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.d, self.d);
        for i in 0..self.n() {
            let r = self.row(i);
            acc += (DMatrix::from_diagonal(&r) - &r * r.transpose()) * self.pi[i];
        }
        acc
    }

    /// E[D_t | Ψ_0] for t ≥ 1, one row per joint state.
    fn conditional_d(&self, t: i64) -> DMatrix<f64> {
        let mut y = DMatrix::from_fn(self.n(), self.d, |i, c| self.row(i)[c] - self.p0[(self.x(i), c)]);
        for _ in 1..t {
            y = &self.p * y;
        }
        y
    }

    /// Calls `visit(weight, j, v)` for every transition i → j, with v = e_{x_j} − P₀[x_i].
    fn transitions(&self, mut visit: impl FnMut(f64, usize, &DVector<f64>)) {
        for i in 0..self.n() {
            for j in 0..self.n() {
                let w = self.pi[i] * self.p[(i, j)];
                if w == 0.0 {
                    continue;
                }
                let mut v = -self.p0.row(self.x(i)).transpose();
                v[self.x(j)] += 1.0;
                visit(w, j, &v);
            }
        }
    }

    /// E[D_t D_0ᵀ], D_t = e_{X_t} − P₀[X_{t−1}], for t ≥ 0.
    pub fn r_d(&self, t: i64) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.d, self.d);
        if t == 0 {
            self.transitions(|w, _, v| acc += v * v.transpose() * w);
        } else {
            let y = self.conditional_d(t);
            self.transitions(|w, j, v| acc += y.row(j).transpose() * v.transpose() * w);
        }
        acc
    }

    /// E[D_t ζ_0] for t ≥ 0.
    pub fn r_d_zeta(&self, t: i64) -> DVector<f64> {
        let mut acc = DVector::zeros(self.d);
        if t == 0 {
            self.transitions(|w, j, v| acc += v * (w * self.zeta[j]));
        } else {
            let y = self.conditional_d(t);
            for j in 0..self.n() {
                acc += y.row(j).transpose() * (self.pi[j] * self.zeta[j]);
            }
        }
        acc
    }

    /// Cov(f(Ψ_t), g(Ψ_0)) for t = 0..=max_lag.
    fn cov_forward(&self, f: &DVector<f64>, g: &DVector<f64>, max_lag: usize) -> Vec<f64> {
        let gc = g.add_scalar(-self.pi.dot(g)).component_mul(&self.pi);
        let mut y = f.add_scalar(-self.pi.dot(f));
        let mut out = Vec::with_capacity(max_lag + 1);
        for _ in 0..=max_lag {
            out.push(gc.dot(&y));
            y = &self.p * y;
        }
        out
    }

    /// Cov(f(Ψ_t), g(Ψ_0)) for t in −max_lag..=max_lag, index t + max_lag.
    pub fn cov_series(&self, f: &DVector<f64>, g: &DVector<f64>, max_lag: usize) -> Vec<f64> {
        let pos = self.cov_forward(f, g, max_lag);
        let neg = self.cov_forward(g, f, max_lag);
        neg.iter().skip(1).rev().chain(pos.iter()).copied().collect()
    }

    /// Smallest lag after which both directions of Cov(f(Ψ_t), g(Ψ_0)) stay below `tol`.
    pub fn decay_lag(&self, f: &DVector<f64>, g: &DVector<f64>, tol: f64, cap: usize) -> usize {
        let a = self.cov_forward(f, g, cap);
        let b = self.cov_forward(g, f, cap);
        (0..=cap).rev().find(|&t| a[t].abs() > tol || b[t].abs() > tol).map_or(0, |t| t + 1).min(cap)
    }
}
