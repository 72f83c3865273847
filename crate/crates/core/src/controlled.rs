//! Controlled transition families P_ζ and the scaled input process ζ = ε·ζ¹.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::markov::{stationary_distribution, ProbabilityVector, StochasticMatrix};

pub type Evaluator = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-4;
const DERIV_ROW_TOL: f64 = 1e-10;

/// P_ζ with its Taylor data at ζ = 0.
#[derive(Clone)]
pub struct ControlledFamily {
    p0: StochasticMatrix,
    e: DMatrix<f64>,
    w: DMatrix<f64>,
    evaluator: Evaluator,
    domain: (f64, f64),
}

impl fmt::Debug for ControlledFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlledFamily")
            .field("dim", &self.dim())
            .field("domain", &self.domain)
            .finish()
    }
}

fn check_zero_rows(m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let sum: f64 = m.row(i).iter().sum();
        if sum.abs() > DERIV_ROW_TOL {
            return Err(Error::DerivativeRowSum { row: i, sum });
        }
    }
    Ok(())
}

impl ControlledFamily {
    /// Family with supplied derivatives; `evaluate(0)` becomes P₀.
    pub fn with_derivatives(
        evaluate: Evaluator,
        e: DMatrix<f64>,
        w: DMatrix<f64>,
        domain: (f64, f64),
    ) -> Result<Self> {
        if !(domain.0 <= 0.0 && 0.0 <= domain.1) {
            return Err(Error::InvalidZetaDomain { zeta: 0.0, lo: domain.0, hi: domain.1 });
        }
        let p0 = StochasticMatrix::new(evaluate(0.0))?;
        let d = p0.dim();
        for m in [&e, &w] {
            if m.shape() != (d, d) {
                return Err(Error::DimensionMismatch { expected: d, got: m.nrows() });
            }
        }
        check_zero_rows(&e)?;
        check_zero_rows(&w)?;
        Ok(ControlledFamily { p0, e, w, evaluator: evaluate, domain })
    }

    /// The quadratic family P₀ + ζ𝓔 + ½ζ²𝓦.
    pub fn from_taylor(
        p0: DMatrix<f64>,
        e: DMatrix<f64>,
        w: DMatrix<f64>,
        domain: (f64, f64),
    ) -> Result<Self> {
        let (p, ee, ww) = (p0.clone(), e.clone(), w.clone());
        let eval: Evaluator = Arc::new(move |z| &p + &ee * z + &ww * (0.5 * z * z));
        Self::with_derivatives(eval, e, w, domain)
    }

    /// A family that ignores ζ.
    pub fn constant(p0: StochasticMatrix) -> Self {
        let d = p0.dim();
        let m = p0.matrix().clone();
        ControlledFamily {
            p0,
            e: DMatrix::zeros(d, d),
            w: DMatrix::zeros(d, d),
            evaluator: Arc::new(move |_| m.clone()),
            domain: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.p0.dim()
    }

    pub fn p0(&self) -> &StochasticMatrix {
        &self.p0
    }

    /// First derivative 𝓔.
    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    /// Second derivative 𝓦.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn in_domain(&self, zeta: f64) -> bool {
        self.domain.0 <= zeta && zeta <= self.domain.1
    }

    /// Raw P_ζ without validation.
    pub fn evaluate_raw(&self, zeta: f64) -> DMatrix<f64> {
        if zeta == 0.0 {
            return self.p0.matrix().clone();
        }
        (self.evaluator)(zeta)
    }

    pub fn evaluate(&self, zeta: f64) -> Result<StochasticMatrix> {
        if !self.in_domain(zeta) {
            return Err(Error::InvalidZetaDomain { zeta, lo: self.domain.0, hi: self.domain.1 });
        }
        if zeta == 0.0 {
            return Ok(self.p0.clone());
        }
        StochasticMatrix::new((self.evaluator)(zeta))
    }
}

/// Builds the Taylor data by central differences with step `h`.
pub fn taylor_from_evaluator(evaluate: Evaluator, domain: (f64, f64), h: f64) -> Result<ControlledFamily> {
    if !(h > 0.0 && domain.0 <= -h && h <= domain.1) {
        return Err(Error::DomainTooSmall { lo: domain.0, hi: domain.1, h });
    }
    let p0 = evaluate(0.0);
    let ph = evaluate(h);
    let pm = evaluate(-h);
    let mut e = (&ph - &pm) / (2.0 * h);
    let mut w = (&ph - &p0 * 2.0 + &pm) / (h * h);
    project_zero_rows(&mut e);
    project_zero_rows(&mut w);
    ControlledFamily::with_derivatives(evaluate, e, w, domain)
}

fn project_zero_rows(m: &mut DMatrix<f64>) {
    let n = m.ncols() as f64;
    for i in 0..m.nrows() {
        let mean = m.row(i).sum() / n;
        for j in 0..m.ncols() {
            m[(i, j)] -= mean;
        }
    }
}

/// Finite-state Markov input ζ¹ with alphabet `states`, scaled by ε.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    states: Vec<f64>,
    k: StochasticMatrix,
    mu: ProbabilityVector,
    epsilon: f64,
}

impl InputSpec {
    pub fn new(states: Vec<f64>, k: StochasticMatrix, epsilon: f64) -> Result<Self> {
        if states.len() != k.dim() {
            return Err(Error::DimensionMismatch { expected: k.dim(), got: states.len() });
        }
        if let Some(z) = states.iter().find(|z| !(z.abs() <= 1.0)) {
            return Err(Error::InvalidInput(format!("state value {z} outside [-1, 1]")));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidInput(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let mu = stationary_distribution(&k)?;
        let mean: f64 = mu.as_slice().iter().zip(&states).map(|(m, z)| m * z).sum();
        if mean.abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("stationary mean {mean:e} is not zero")));
        }
        Ok(InputSpec { states, k, mu, epsilon })
    }

    /// The symmetric three-state chain on {−1, 0, 1} with R_{ζ¹}(m) = (2/3)(1−γ)^{|m|}.
    ///
    /// For γ ≤ ½ each step to a neighbouring level has probability γ and the ends never jump
    /// directly to each other. For ½ < γ < 1 that matrix has a negative diagonal entry, so the
    /// chain [[a, ½, c], [½, 0, ½], [c, ½, a]] with c = (2γ−1)/4, a = 1 − γ + c is used instead;
    /// it has the same uniform pmf and the same autocovariance.
    pub fn three_state(gamma: f64, epsilon: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma {gamma} outside (0, 1)")));
        }
        let rows = if gamma <= 0.5 {
            vec![
                vec![1.0 - gamma, gamma, 0.0],
                vec![gamma, 1.0 - 2.0 * gamma, gamma],
                vec![0.0, gamma, 1.0 - gamma],
            ]
        } else {
            let c = (2.0 * gamma - 1.0) / 4.0;
            let a = 1.0 - gamma + c;
            vec![vec![a, 0.5, c], vec![0.5, 0.0, 0.5], vec![c, 0.5, a]]
        };
        Self::new(vec![-1.0, 0.0, 1.0], StochasticMatrix::from_rows(&rows)?, epsilon)
    }

    /// Constant ζ¹ ≡ 0 on a two-state chain (no input at all).
    pub fn silent() -> Self {
        let k = StochasticMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        Self::new(vec![0.0, 0.0], k, 0.0).unwrap()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidInput(format!("epsilon {epsilon} outside [0, 1]")));
        }
        Ok(InputSpec { epsilon, ..self.clone() })
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn k(&self) -> &StochasticMatrix {
        &self.k
    }

    pub fn mu(&self) -> &ProbabilityVector {
        &self.mu
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// σ² of ζ¹.
    pub fn variance(&self) -> f64 {
        input_autocovariance(self, 0)
    }

    /// R_{ζ¹}(0..=max_lag).
    pub fn autocovariance_series(&self, max_lag: usize) -> Vec<f64> {
        let z = DVector::from_column_slice(&self.states);
        let u: DVector<f64> = self.mu.vector().component_mul(&z);
        let mut w = z;
        let mut out = Vec::with_capacity(max_lag + 1);
        for _ in 0..=max_lag {
            out.push(u.dot(&w));
            w = self.k.matrix() * w;
        }
        out
    }

    /// R_ζ(t) = ε²·R_{ζ¹}(t).
    pub fn scaled_autocovariance(&self, t: i64) -> f64 {
        self.epsilon * self.epsilon * input_autocovariance(self, t)
    }
}

/// R_{ζ¹}(t) = Σ_{i,j} μ(i) z_i K^{|t|}(i,j) z_j.
pub fn input_autocovariance(spec: &InputSpec, t: i64) -> f64 {
    *spec.autocovariance_series(t.unsigned_abs() as usize).last().unwrap()
}

/// R_{ζ¹}(t) = Σ a_k ρ_k^{|t|} with distinct real poles.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricCovariance {
    pub coeffs: Vec<f64>,
    pub poles: Vec<f64>,
}

impl GeometricCovariance {
    pub fn len(&self) -> usize {
        self.poles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poles.is_empty()
    }

    pub fn eval(&self, t: i64) -> f64 {
        let m = t.unsigned_abs() as i32;
        self.coeffs
            .iter()
            .zip(&self.poles)
            .map(|(a, r)| if m == 0 { *a } else { a * r.powi(m) })
            .sum()
    }

    /// Σ_t R(t) e^{−jθt} = Σ a_k (1−ρ_k²)/(1 − 2ρ_k cos θ + ρ_k²).
    pub fn spectrum(&self, theta: f64) -> f64 {
        let c = theta.cos();
        self.coeffs
            .iter()
            .zip(&self.poles)
            .map(|(a, r)| a * (1.0 - r * r) / (1.0 - 2.0 * r * c + r * r))
            .sum()
    }
}

const POLE_CLUSTER: f64 = 1e-8;
const RECON_TOL: f64 = 1e-9;

/// Real eigenvalues of K: symmetric solve when K is μ-reversible, bounded Schur otherwise.
fn real_eigenvalues(spec: &InputSpec) -> Result<Vec<f64>> {
    let k = spec.k.matrix();
    let mu = spec.mu.vector();
    let n = k.nrows();
    let reversible = (0..n).all(|i| (0..n).all(|j| (mu[i] * k[(i, j)] - mu[j] * k[(j, i)]).abs() < 1e-14));
    if reversible && mu.iter().all(|m| *m > 0.0) {
        let s = DMatrix::from_fn(n, n, |i, j| (mu[i] / mu[j]).sqrt() * k[(i, j)]);
        let sym = (&s + s.transpose()) * 0.5;
        return Ok(sym.symmetric_eigenvalues().iter().copied().collect());
    }
    let schur = nalgebra::Schur::try_new(k.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::NonGeometricCovariance("eigenvalue iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().filter(|l| l.im.abs() <= 1e-9).map(|l| l.re).collect())
}

/// Fits R_{ζ¹} to geometric terms over the real eigenvalues of K.
pub fn geometric_representation(spec: &InputSpec) -> Result<GeometricCovariance> {
    let mut poles: Vec<f64> = Vec::new();
    for l in real_eigenvalues(spec)? {
        if !poles.iter().any(|p| (p - l).abs() < POLE_CLUSTER) {
            poles.push(l);
        }
    }
    poles.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let m = poles.len();
    let r = spec.autocovariance_series(60);
    let v = DMatrix::from_fn(m, m, |t, k| if t == 0 { 1.0 } else { poles[k].powi(t as i32) });
    let rhs = DVector::from_fn(m, |t, _| r[t]);
    let coeffs = v
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonGeometricCovariance("singular Vandermonde system".into()))?;
    let scale = r[0].abs().max(f64::MIN_POSITIVE);
    let mut out = GeometricCovariance { coeffs: Vec::new(), poles: Vec::new() };
    for (a, p) in coeffs.iter().zip(&poles) {
        if a.abs() <= 1e-12 * scale {
            continue;
        }
        if p.abs() >= 1.0 - 1e-12 {
            return Err(Error::NonGeometricCovariance(format!("pole {p} on the unit circle")));
        }
        out.coeffs.push(*a);
        out.poles.push(*p);
    }
    for (t, rt) in r.iter().enumerate().take(51) {
        let err = (out.eval(t as i64) - rt).abs();
        if err > RECON_TOL {
            return Err(Error::NonGeometricCovariance(format!("reconstruction error {err:e} at lag {t}")));
        }
    }
    Ok(out)
}
