//! Exact statistics through the joint chain Ψ = (X, ζ¹).
//!
//! Joint states are flattened x-major: index = x·n_z + z.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::controlled::{ControlledFamily, InputSpec};
use crate::error::{Error, Result};
use crate::markov::{stationary_distribution, ProbabilityVector, StochasticMatrix};
use crate::second_order::LagSeries;
use crate::spectral::{theta_grid, SpectralGrid};

#[derive(Debug, Clone)]
pub struct JointChain {
    p: StochasticMatrix,
    pi: ProbabilityVector,
    d: usize,
    nz: usize,
    /// P_{εz} for each input state
    pz: Vec<DMatrix<f64>>,
    p0: DMatrix<f64>,
    zeta: DVector<f64>,
}

pub fn build_joint(family: &ControlledFamily, input: &InputSpec) -> Result<JointChain> {
    let d = family.dim();
    let nz = input.n_states();
    let eps = input.epsilon();
    let mut pz = Vec::with_capacity(nz);
    for &z in input.states() {
        pz.push(family.evaluate(eps * z)?.into_matrix());
    }
    let k = input.k().matrix();
    let n = d * nz;
    let mut pj = DMatrix::zeros(n, n);
    for x in 0..d {
        for (zi, pm) in pz.iter().enumerate() {
            for x2 in 0..d {
                let v = pm[(x, x2)];
                if v == 0.0 {
                    continue;
                }
                for zj in 0..nz {
                    pj[(x * nz + zi, x2 * nz + zj)] = v * k[(zi, zj)];
                }
            }
        }
    }
    let p = StochasticMatrix::new(pj)?;
    let pi = stationary_distribution(&p)?;
    let zeta = DVector::from_fn(n, |i, _| eps * input.states()[i % nz]);
    Ok(JointChain { p, pi, d, nz, pz, p0: family.p0().matrix().clone(), zeta })
}

impl JointChain {
    pub fn p(&self) -> &StochasticMatrix {
        &self.p
    }

    pub fn pi(&self) -> &ProbabilityVector {
        &self.pi
    }

    pub fn n_states(&self) -> usize {
        self.d * self.nz
    }

    pub fn dim_x(&self) -> usize {
        self.d
    }

    pub fn dim_z(&self) -> usize {
        self.nz
    }

    pub fn index(&self, x: usize, z: usize) -> usize {
        x * self.nz + z
    }

    /// f(x) lifted to the joint states.
    pub fn lift(&self, f: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n_states(), |i, _| f[i / self.nz])
    }

    /// The observable ζ = εz on joint states.
    pub fn zeta(&self) -> &DVector<f64> {
        &self.zeta
    }

    /// Σ_z π(x, z) for each x.
    pub fn marginal_x(&self) -> DVector<f64> {
        DVector::from_fn(self.d, |x, _| (0..self.nz).map(|z| self.pi[self.index(x, z)]).sum())
    }

    /// Σ_x π(x, z) for each z.
    pub fn marginal_z(&self) -> DVector<f64> {
        DVector::from_fn(self.nz, |z, _| (0..self.d).map(|x| self.pi[self.index(x, z)]).sum())
    }

    fn weighted(&self, g: &DVector<f64>) -> DVector<f64> {
        self.pi.vector().component_mul(g)
    }

    /// m(ψ) = E[D_{t+1} | Ψ_t = ψ] = row x of P_{εz} − P₀, one row per joint state.
    fn drift(&self) -> DMatrix<f64> {
        let n = self.n_states();
        DMatrix::from_fn(n, self.d, |i, j| {
            let (x, z) = (i / self.nz, i % self.nz);
            self.pz[z][(x, j)] - self.p0[(x, j)]
        })
    }

    /// E[Γ_t ζ_0] as a vector over x.
    pub fn r_gamma_zeta(&self, t: i64) -> DVector<f64> {
        let n = self.n_states();
        let gamma = DMatrix::from_fn(n, self.d, |i, j| if i / self.nz == j { 1.0 } else { 0.0 });
        let pm = self.p.matrix();
        if t >= 0 {
            let mut y = gamma;
            for _ in 0..t {
                y = pm * y;
            }
            y.tr_mul(&self.weighted(&self.zeta))
        } else {
            let mut y = self.zeta.clone();
            for _ in 0..(-t) {
                y = pm * y;
            }
            gamma.tr_mul(&self.weighted(&y))
        }
    }

    /// E[D_tᵀ D_0] with D_{t+1} = Γ_{t+1} − Γ_tP₀.
    pub fn r_d(&self, t: i64) -> DMatrix<f64> {
        if t < 0 {
            return self.r_d(-t).transpose();
        }
        let n = self.n_states();
        let d = self.d;
        let pm = self.p.matrix();
        let pi = self.pi.vector();
        if t == 0 {
            let mut acc = DMatrix::zeros(d, d);
            for i in 0..n {
                let x = i / self.nz;
                for j in 0..n {
                    let w = pi[i] * pm[(i, j)];
                    if w == 0.0 {
                        continue;
                    }
                    let x2 = j / self.nz;
                    let dv = DVector::from_fn(d, |k, _| (if k == x2 { 1.0 } else { 0.0 }) - self.p0[(x, k)]);
                    acc += &dv * dv.transpose() * w;
                }
            }
            return acc;
        }
        // Y(ψ) = (P^{t−1} m)(ψ); R = Σ_ψ π Y(ψ) e_xᵀ − Σ_ψ π (PY)(ψ) P₀[x]
        let mut y = self.drift();
        for _ in 1..t {
            y = pm * y;
        }
        let py = pm * &y;
        let mut acc = DMatrix::zeros(d, d);
        for i in 0..n {
            let x = i / self.nz;
            for r in 0..d {
                acc[(r, x)] += pi[i] * y[(i, r)];
                let v = pi[i] * py[(i, r)];
                if v != 0.0 {
                    for c in 0..d {
                        acc[(r, c)] -= v * self.p0[(x, c)];
                    }
                }
            }
        }
        acc
    }

    /// E[D_tᵀ ζ_0].
    pub fn r_d_zeta(&self, t: i64) -> DVector<f64> {
        let n = self.n_states();
        let d = self.d;
        let pm = self.p.matrix();
        if t >= 1 {
            let mut y = self.drift();
            for _ in 1..t {
                y = pm * y;
            }
            return y.tr_mul(&self.weighted(&self.zeta));
        }
        let mut h = self.zeta.clone();
        for _ in 0..(-t) {
            h = pm * h;
        }
        // Σ_{ψ,ψ'} π P (e_{x'} − P₀[x]) h(ψ') with h = P^{−t}ζ
        let ph = pm * &h;
        let pi = self.pi.vector();
        let mut acc = DVector::zeros(d);
        for i in 0..n {
            let x = i / self.nz;
            for j in 0..n {
                let w = pi[i] * pm[(i, j)];
                if w != 0.0 {
                    acc[j / self.nz] += w * h[j];
                }
            }
            for c in 0..d {
                acc[c] -= pi[i] * ph[i] * self.p0[(x, c)];
            }
        }
        acc
    }

    /// 𝓧(ψ) = diag(P_{εz}[x]) − P_{εz}[x]ᵀP_{εz}[x].
    fn cond_cov(&self, i: usize) -> DMatrix<f64> {
        let (x, z) = (i / self.nz, i % self.nz);
        let row = self.pz[z].row(x).transpose();
        DMatrix::from_diagonal(&row) - &row * row.transpose()
    }
}

pub fn exact_marginal(jc: &JointChain) -> ProbabilityVector {
    let m = jc.marginal_x();
    let s = m.sum();
    ProbabilityVector::new(m / s).expect("marginal of a pmf")
}

/// E_π[f(Ψ_t) g(Ψ_0)].
pub fn exact_cross_corr(jc: &JointChain, f: &DVector<f64>, g: &DVector<f64>, t: i64) -> f64 {
    let (f, g) = if t >= 0 { (f, g) } else { (g, f) };
    let pm = jc.p.matrix();
    let mut y = f.clone();
    for _ in 0..t.unsigned_abs() {
        y = pm * y;
    }
    jc.weighted(g).dot(&y)
}

/// Cov(f(Ψ_t), g(Ψ_0)) over a lag range, one matrix-vector product per lag.
pub fn exact_cross_cov_series(
    jc: &JointChain,
    f: &DVector<f64>,
    g: &DVector<f64>,
    lag_min: i64,
    lag_max: i64,
) -> LagSeries<f64> {
    let pi = jc.pi.vector();
    let fc = f.add_scalar(-pi.dot(f));
    let gc = g.add_scalar(-pi.dot(g));
    let pm = jc.p.matrix();
    let one_side = |a: &DVector<f64>, b: &DVector<f64>, upto: i64| -> Vec<f64> {
        let wb = pi.component_mul(b);
        let mut y = a.clone();
        let mut out = Vec::new();
        for _ in 0..=upto.max(0) {
            out.push(wb.dot(&y));
            y = pm * y;
        }
        out
    };
    let pos = one_side(&fc, &gc, lag_max);
    let neg = one_side(&gc, &fc, -lag_min);
    LagSeries::from_fn("exact_cov", lag_min, lag_max, |t| {
        if t >= 0 {
            pos[t as usize]
        } else {
            neg[(-t) as usize]
        }
    })
}

/// S_{f,g}(θ) = Σ_t Cov(f(Ψ_t), g(Ψ_0)) e^{−jθt} by resolvents of the centred chain.
pub fn exact_psd(jc: &JointChain, f: &DVector<f64>, g: &DVector<f64>, m: usize) -> Result<SpectralGrid> {
    let n = jc.n_states();
    if f.len() != n || g.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: f.len().min(g.len()) });
    }
    let pi = jc.pi.vector();
    let fc = f.add_scalar(-pi.dot(f));
    let gc = g.add_scalar(-pi.dot(g));
    let pt = jc.p.matrix() - jc.pi.ones_outer();
    let wf = pi.component_mul(&fc).map(Complex64::from);
    let wg = pi.component_mul(&gc).map(Complex64::from);
    let fcc = fc.map(Complex64::from);
    let gcc = gc.map(Complex64::from);
    let lag0 = pi.component_mul(&fc).dot(&gc);
    let ptc = pt.map(Complex64::from);
    let thetas = theta_grid(m);
    let values: Result<Vec<DMatrix<Complex64>>> = thetas
        .par_iter()
        .map(|&theta| {
            let z = Complex64::from_polar(1.0, -theta);
            let a = DMatrix::<Complex64>::identity(n, n) - &ptc * z;
            let lu = a.lu();
            let x = lu.solve(&fcc).ok_or(Error::SingularResolvent { theta })?;
            let y = lu.solve(&gcc).ok_or(Error::SingularResolvent { theta })?;
            // the conjugate resolvent handles negative lags
            let s = wg.transpose() * x;
            let s2 = (wf.transpose() * y)[(0, 0)].conj();
            Ok(DMatrix::from_element(1, 1, s[(0, 0)] + s2 - lag0))
        })
        .collect();
    Ok(SpectralGrid::new(thetas, values?, 0.0))
}

#[derive(Debug, Clone)]
pub struct DeltaStats {
    pub sigma_delta: DMatrix<f64>,
    /// R_{Δ²,ζ}(−t) stored at lag t = 0..=max_lag.
    pub r_d2z: LagSeries<DMatrix<f64>>,
}

/// Σ^Δ and R_{Δ²,ζ}(−t) from the conditional covariance of Δ given the current joint state.
pub fn exact_delta_stats(jc: &JointChain, max_lag: usize) -> DeltaStats {
    let n = jc.n_states();
    let d = jc.d;
    let pi = jc.pi.vector();
    let covs: Vec<DMatrix<f64>> = (0..n).map(|i| jc.cond_cov(i)).collect();
    let mut sigma = DMatrix::zeros(d, d);
    for (i, c) in covs.iter().enumerate() {
        sigma += c * pi[i];
    }
    let pm = jc.p.matrix();
    let mut h = pm * &jc.zeta;
    let mut vals = Vec::with_capacity(max_lag + 1);
    for _ in 0..=max_lag {
        let mut acc = DMatrix::zeros(d, d);
        for (i, c) in covs.iter().enumerate() {
            let w = pi[i] * h[i];
            if w != 0.0 {
                acc += c * w;
            }
        }
        vals.push(acc);
        h = pm * h;
    }
    DeltaStats { sigma_delta: sigma, r_d2z: LagSeries::new("R_delta2_zeta", 0, vals) }
}

/// Rows "i,j,value" of the joint transition matrix, nonzero entries only.
pub fn export_joint_csv(jc: &JointChain) -> String {
    let mut out = format!("# joint chain, index = x*{} + z\nrow,col,value\n", jc.nz);
    let pm = jc.p.matrix();
    for i in 0..pm.nrows() {
        for j in 0..pm.ncols() {
            if pm[(i, j)] != 0.0 {
                out.push_str(&format!("{i},{j},{:e}\n", pm[(i, j)]));
            }
        }
    }
    out
}

pub fn export_pi_csv(jc: &JointChain) -> String {
    let mut out = String::from("index,x,z,pi\n");
    for i in 0..jc.n_states() {
        out.push_str(&format!("{i},{},{},{:e}\n", i / jc.nz, i % jc.nz, jc.pi[i]));
    }
    out
}
