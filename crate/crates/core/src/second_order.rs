//! Second-order (in ε) approximations of the steady state and of the correlation
//! structure of Γ, Δ and D.
//!
//! Vectors indexed by the chain state are stored as columns; a row vector such as π₀ or
//! ξ is held as its transpose.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::controlled::{geometric_representation, ControlledFamily, GeometricCovariance, InputSpec};
use crate::error::{Error, Result};
use crate::markov::{fundamental_matrix, stationary_distribution, FundamentalMatrix, ProbabilityVector};

/// Lag-indexed sequence over a contiguous range `lag_min..=lag_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagSeries<T> {
    kind: String,
    lag_min: i64,
    values: Vec<T>,
}

impl<T> LagSeries<T> {
    pub fn new(kind: impl Into<String>, lag_min: i64, values: Vec<T>) -> Self {
        LagSeries { kind: kind.into(), lag_min, values }
    }

    /// Builds the series by evaluating `f` on every lag of the range.
    pub fn from_fn(kind: impl Into<String>, lag_min: i64, lag_max: i64, f: impl FnMut(i64) -> T) -> Self {
        LagSeries::new(kind, lag_min, (lag_min..=lag_max).map(f).collect())
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn lag_min(&self) -> i64 {
        self.lag_min
    }

    pub fn lag_max(&self) -> i64 {
        self.lag_min + self.values.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, lag: i64) -> Option<&T> {
        if lag < self.lag_min {
            return None;
        }
        self.values.get((lag - self.lag_min) as usize)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &T)> {
        self.values.iter().enumerate().map(move |(i, v)| (self.lag_min + i as i64, v))
    }

    pub fn map<U>(&self, kind: impl Into<String>, f: impl FnMut(&T) -> U) -> LagSeries<U> {
        LagSeries::new(kind, self.lag_min, self.values.iter().map(f).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    pub tol: f64,
    pub max_terms: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation { tol: 1e-12, max_terms: 1_000_000 }
    }
}

/// π̂_ε = π₀ + ξU₁; kept unclipped, with a flag when some entry is negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxDistribution {
    pub values: DVector<f64>,
    pub has_negative: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XiRoute {
    Geometric,
    LagDomain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XiVector {
    pub value: DVector<f64>,
    pub route: XiRoute,
}

/// ε-independent data shared by every context built on the same family and input chain.
#[derive(Debug)]
struct Cache {
    pi0: ProbabilityVector,
    u1: FundamentalMatrix,
    b: DVector<f64>,
    pi0_diag: DMatrix<f64>,
    /// (BᵀP₀^{i−1})ᵀ for i = 1..=len
    b_terms: Vec<DVector<f64>>,
    /// R_{ζ¹}(m) for m < len; zero beyond
    r1: Vec<f64>,
    geometric: Option<GeometricCovariance>,
    sigma_bullet: DMatrix<f64>,
    /// 𝓧 moment: diag(π₀𝓔) − (P₀ᵀΠ₀𝓔 + [P₀ᵀΠ₀𝓔]ᵀ)
    ex1: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SecondOrderContext {
    family: ControlledFamily,
    input: InputSpec,
    truncation: Truncation,
    cache: Arc<Cache>,
}

fn r1_series(input: &InputSpec, trunc: &Truncation) -> Result<Vec<f64>> {
    let z = DVector::from_column_slice(input.states());
    let u = input.mu().vector().component_mul(&z);
    let k = input.k().matrix();
    let mut w = z;
    let mut out = Vec::new();
    let mut small = 0;
    let scale = u.dot(&w).abs();
    while small < 5 {
        let v = u.dot(&w);
        small = if v.abs() <= 1e-17 * scale { small + 1 } else { 0 };
        out.push(v);
        if out.len() > trunc.max_terms {
            return Err(Error::TruncationNotConverged { max_terms: trunc.max_terms });
        }
        w = k * w;
    }
    out.truncate(out.len() - 5);
    Ok(out)
}

fn b_terms(p0: &DMatrix<f64>, b: &DVector<f64>, rmax: f64, trunc: &Truncation) -> Result<Vec<DVector<f64>>> {
    let d = p0.nrows();
    let a = p0.transpose();
    let mut terms = vec![b.clone()];
    let mut norms = vec![b.amax()];
    let mut cap = trunc.max_terms;
    loop {
        let n = norms.len();
        let last = norms[n - 1];
        let monotone = n >= 5 && norms[n - 5..].windows(2).all(|w| w[1] <= w[0]);
        if last * rmax < trunc.tol && (monotone || last == 0.0) {
            return Ok(terms);
        }
        if n >= 20 {
            let ratio = (last / norms[n - 11]).powf(0.1);
            if ratio < 1.0 {
                cap = cap.min(((10 * d) as f64 / (1.0 - ratio)).max(200.0) as usize);
            }
        }
        if n >= cap {
            return Err(Error::TruncationNotConverged { max_terms: cap });
        }
        let next = &a * &terms[n - 1];
        norms.push(next.amax());
        terms.push(next);
    }
}

impl SecondOrderContext {
    pub fn new(family: ControlledFamily, input: InputSpec) -> Result<Self> {
        Self::with_truncation(family, input, Truncation::default())
    }

    pub fn with_truncation(family: ControlledFamily, input: InputSpec, truncation: Truncation) -> Result<Self> {
        let p0 = family.p0();
        let flags = p0.flags();
        if !flags.unichain {
            return Err(Error::NotIrreducible);
        }
        if !flags.aperiodic {
            return Err(Error::NotAperiodic);
        }
        let pi0 = stationary_distribution(p0)?;
        let u1 = fundamental_matrix(p0, &pi0)?;
        let e = family.e();
        let b = e.tr_mul(pi0.vector());
        let pi0_diag = pi0.diag();
        let r1 = r1_series(&input, &truncation)?;
        let rmax = r1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let b_terms = b_terms(p0.matrix(), &b, rmax, &truncation)?;
        let geometric = geometric_representation(&input).ok();
        let pm = p0.matrix();
        let sigma_bullet = &pi0_diag - pm.transpose() * &pi0_diag * pm;
        let m = pm.transpose() * &pi0_diag * e;
        let ex1 = DMatrix::from_diagonal(&b) - (&m + m.transpose());
        let cache = Cache { pi0, u1, b, pi0_diag, b_terms, r1, geometric, sigma_bullet, ex1 };
        Ok(SecondOrderContext { family, input, truncation, cache: Arc::new(cache) })
    }

    /// Same family and input chain at a different ε; reuses all ε-independent data.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Ok(SecondOrderContext { input: self.input.with_epsilon(epsilon)?, ..self.clone() })
    }

    pub fn family(&self) -> &ControlledFamily {
        &self.family
    }

    pub fn input(&self) -> &InputSpec {
        &self.input
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn epsilon(&self) -> f64 {
        self.input.epsilon()
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn pi0(&self) -> &ProbabilityVector {
        &self.cache.pi0
    }

    pub fn u1(&self) -> &FundamentalMatrix {
        &self.cache.u1
    }

    /// B with Bᵀ = π₀𝓔.
    pub fn b(&self) -> &DVector<f64> {
        &self.cache.b
    }

    pub fn pi0_diag(&self) -> &DMatrix<f64> {
        &self.cache.pi0_diag
    }

    pub fn geometric(&self) -> Option<&GeometricCovariance> {
        self.cache.geometric.as_ref()
    }

    /// Number of terms kept in the truncated sum for R_{Γ,ζ}.
    pub fn n_terms(&self) -> usize {
        self.cache.b_terms.len()
    }

    /// Σ^{Δ•} = Π₀ − P₀ᵀΠ₀P₀.
    pub fn sigma_delta_bullet(&self) -> &DMatrix<f64> {
        &self.cache.sigma_bullet
    }

    fn eps2(&self) -> f64 {
        let e = self.input.epsilon();
        e * e
    }

    fn a(&self) -> DMatrix<f64> {
        self.family.p0().matrix().transpose()
    }

    /// R_{ζ¹}(t) from the cached series.
    pub fn r1(&self, t: i64) -> f64 {
        self.cache.r1.get(t.unsigned_abs() as usize).copied().unwrap_or(0.0)
    }

    /// R_ζ(t) = ε²R_{ζ¹}(t).
    pub fn r_zeta(&self, t: i64) -> f64 {
        self.eps2() * self.r1(t)
    }

    /// R_{Γ,ζ}(t) = ε² Σ_{i≥1} (BᵀP₀^{i−1})ᵀ R_{ζ¹}(t−i).
    pub fn cross_corr_gamma_zeta(&self, t: i64) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim());
        for (k, bi) in self.cache.b_terms.iter().enumerate() {
            let r = self.r1(t - 1 - k as i64);
            if r != 0.0 {
                acc.axpy(r, bi, 1.0);
            }
        }
        acc * self.eps2()
    }

    pub fn cross_corr_gamma_zeta_series(&self, lag_min: i64, lag_max: i64) -> LagSeries<DVector<f64>> {
        LagSeries::from_fn("R_gamma_zeta", lag_min, lag_max, |t| self.cross_corr_gamma_zeta(t))
    }

    /// ξ from the lag-domain sum R_{Γ,ζ}(0).
    pub fn xi_lag_domain(&self) -> DVector<f64> {
        let r0 = self.cross_corr_gamma_zeta(0);
        let mut xi = self.family.e().tr_mul(&r0);
        xi += self.family.w().tr_mul(self.pi0().vector()) * (0.5 * self.r_zeta(0));
        xi
    }

    /// ξ from the geometric closed form, one linear solve per pole.
    pub fn xi_geometric(&self) -> Result<DVector<f64>> {
        let g = match &self.cache.geometric {
            Some(g) => g.clone(),
            None => geometric_representation(&self.input)?,
        };
        let d = self.dim();
        let p0 = self.family.p0().matrix();
        let mut acc = DVector::zeros(d);
        for (a, rho) in g.coeffs.iter().zip(&g.poles) {
            if *rho == 0.0 {
                continue;
            }
            let m = (DMatrix::<f64>::identity(d, d) - p0 * *rho).transpose();
            let y = m
                .lu()
                .solve(self.b())
                .ok_or_else(|| Error::SingularSystem("I - rho P0".into()))?;
            acc.axpy(a * rho, &y, 1.0);
        }
        let mut xi = self.family.e().tr_mul(&acc) * self.eps2();
        xi += self.family.w().tr_mul(self.pi0().vector()) * (0.5 * self.r_zeta(0));
        Ok(xi)
    }

    /// ξ via the closed form when the input covariance is geometric, else the lag sum.
    pub fn xi_vector(&self) -> XiVector {
        if self.cache.geometric.is_some() {
            if let Ok(value) = self.xi_geometric() {
                return XiVector { value, route: XiRoute::Geometric };
            }
        }
        XiVector { value: self.xi_lag_domain(), route: XiRoute::LagDomain }
    }

    pub fn steady_state_mean_approx(&self) -> ApproxDistribution {
        let xi = self.xi_vector().value;
        let values = self.pi0().vector() + self.u1().matrix().tr_mul(&xi);
        let has_negative = values.iter().any(|v| *v < 0.0);
        ApproxDistribution { values, has_negative }
    }

    /// Σ^Δ with Π_ε replaced by diag(π̂_ε).
    pub fn delta_covariance(&self) -> DMatrix<f64> {
        let p0 = self.family.p0().matrix();
        let e = self.family.e();
        let w = self.family.w();
        let pi_hat = DMatrix::from_diagonal(&self.steady_state_mean_approx().values);
        let r0 = DMatrix::from_diagonal(&self.cross_corr_gamma_zeta(0));
        let pi0 = self.pi0_diag();
        let mut s = &pi_hat - p0.transpose() * &pi_hat * p0;
        s -= p0.transpose() * &r0 * e + e.transpose() * &r0 * p0;
        let second = p0.transpose() * pi0 * w + e.transpose() * pi0 * e * 2.0 + w.transpose() * pi0 * p0;
        s -= second * (0.5 * self.r_zeta(0));
        s
    }

    /// R_{Δ²,ζ}(−t) for t ≥ 0.
    pub fn r_delta2_zeta(&self, t: usize) -> DMatrix<f64> {
        let t = t as i64;
        let p0 = self.family.p0().matrix();
        let r = self.cross_corr_gamma_zeta(-t - 1);
        let mut m = DMatrix::from_diagonal(&p0.tr_mul(&r));
        m -= p0.transpose() * DMatrix::from_diagonal(&r) * p0;
        m += &self.cache.ex1 * self.r_zeta(t + 1);
        m
    }

    /// R_{Bζ}(t); negative lags by transposition.
    pub fn r_bzeta(&self, t: i64) -> DMatrix<f64> {
        if t < 0 {
            return self.r_bzeta(-t).transpose();
        }
        let p0 = self.family.p0().matrix();
        let e = self.family.e();
        let mut pte = e.clone();
        for _ in 0..t {
            pte = p0 * pte;
        }
        pte.transpose() * self.pi0_diag() * e * self.r_zeta(t)
    }

    /// R_{Bζ,Δ}(t), summing the inner convolution term by term.
    pub fn r_bzeta_delta(&self, t: i64) -> DMatrix<f64> {
        let d = self.dim();
        if t < 0 {
            return DMatrix::zeros(d, d);
        }
        let a = self.a();
        let et = self.family.e().transpose();
        let mut apow = vec![DMatrix::<f64>::identity(d, d)];
        for i in 0..t as usize {
            apow.push(&a * &apow[i]);
        }
        let tu = t as usize;
        let mut m = &et * &apow[tu] * self.r_delta2_zeta(tu);
        if t >= 1 {
            let mut s = DMatrix::zeros(d, d);
            for i in 0..tu {
                s += &apow[tu - 1 - i] * &et * &apow[i] * self.r_zeta(t - i as i64);
            }
            m += &et * s * self.sigma_delta_bullet();
        }
        m
    }

    /// R_{Vζ²,Δ}(t) = ½R_ζ(0)(P₀ᵗ𝓦)ᵀΣ^{Δ•} for t ≥ 0, zero before.
    pub fn r_vzeta2_delta(&self, t: i64) -> DMatrix<f64> {
        let d = self.dim();
        if t < 0 {
            return DMatrix::zeros(d, d);
        }
        let p0 = self.family.p0().matrix();
        let mut ptw = self.family.w().clone();
        for _ in 0..t {
            ptw = p0 * ptw;
        }
        ptw.transpose() * self.sigma_delta_bullet() * (0.5 * self.r_zeta(0))
    }

    /// R_D(t) assembled from its five parts.
    pub fn r_d(&self, t: i64) -> DMatrix<f64> {
        let mut m = self.r_bzeta(t);
        if t == 0 {
            m += self.delta_covariance();
        }
        m += self.r_bzeta_delta(t - 1);
        m += self.r_bzeta_delta(-t - 1).transpose();
        m += self.r_vzeta2_delta(t - 1);
        m += self.r_vzeta2_delta(-t - 1).transpose();
        m
    }

    /// R_{D,ζ}(t) = B·R_ζ(t−1).
    pub fn r_d_zeta(&self, t: i64) -> DVector<f64> {
        self.b() * self.r_zeta(t - 1)
    }

    /// R_D over `-max_lag..=max_lag`, using recursions instead of per-lag sums.
    pub fn r_d_series(&self, max_lag: usize) -> LagSeries<DMatrix<f64>> {
        let pos = self.r_d_nonnegative(max_lag);
        let l = max_lag as i64;
        LagSeries::from_fn("R_D", -l, l, |t| {
            if t >= 0 {
                pos[t as usize].clone()
            } else {
                pos[(-t) as usize].transpose()
            }
        })
    }

    /// R_D(0..=max_lag).
    fn r_d_nonnegative(&self, max_lag: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(max_lag + 1);
        let mut it = RdIter::new(self);
        for _ in 0..=max_lag {
            out.push(it.next_lag());
        }
        out
    }

    /// R_D over `-L..=L`, with L the first lag after which five consecutive lags have
    /// ∞-norm below the truncation tolerance.
    pub fn r_d_series_auto(&self) -> Result<LagSeries<DMatrix<f64>>> {
        let mut it = RdIter::new(self);
        let mut pos = Vec::new();
        let mut small = 0;
        while small < 5 {
            let m = it.next_lag();
            small = if pos.is_empty() || m.amax() >= self.truncation.tol { 0 } else { small + 1 };
            pos.push(m);
            if pos.len() > self.truncation.max_terms.min(200_000) {
                return Err(Error::TruncationNotConverged { max_terms: pos.len() });
            }
        }
        let l = pos.len() as i64 - 1;
        Ok(LagSeries::from_fn("R_D", -l, l, |t| {
            if t >= 0 {
                pos[t as usize].clone()
            } else {
                pos[(-t) as usize].transpose()
            }
        }))
    }

    pub fn r_d_zeta_series(&self, lag_min: i64, lag_max: i64) -> LagSeries<DVector<f64>> {
        LagSeries::from_fn("R_D_zeta", lag_min, lag_max, |t| self.r_d_zeta(t))
    }

    pub fn r_zeta_series(&self, lag_min: i64, lag_max: i64) -> LagSeries<f64> {
        LagSeries::from_fn("R_zeta", lag_min, lag_max, |t| self.r_zeta(t))
    }
}

/// Walks t = 0, 1, 2, … producing R_D(t) with the inner convolution of R_{Bζ,Δ} carried
/// by a recursion over the input chain states.
struct RdIter<'a> {
    ctx: &'a SecondOrderContext,
    t: usize,
    a: DMatrix<f64>,
    /// P₀ᵗ𝓔
    pte: DMatrix<f64>,
    /// 𝓔ᵀAᵗ for the current R_{Bζ,Δ} lag
    et_at: DMatrix<f64>,
    /// P₀ᵗ𝓦 for the current R_{Vζ²,Δ} lag
    ptw: DMatrix<f64>,
    /// T_j for the current R_{Bζ,Δ} lag; see `bzd`
    tj: Vec<DMatrix<f64>>,
    /// 𝓔ᵀA^s for the recursion of `tj`
    et_as: DMatrix<f64>,
    u: DVector<f64>,
    kz: DVector<f64>,
    s_delta: DMatrix<f64>,
}

impl<'a> RdIter<'a> {
    fn new(ctx: &'a SecondOrderContext) -> Self {
        let d = ctx.dim();
        let e = ctx.family.e().clone();
        let z = DVector::from_column_slice(ctx.input.states());
        let u = ctx.input.mu().vector().component_mul(&z);
        let kz = ctx.input.k().matrix() * &z;
        let nz = z.len();
        RdIter {
            ctx,
            t: 0,
            a: ctx.a(),
            pte: e.clone(),
            et_at: e.transpose(),
            ptw: ctx.family.w().clone(),
            tj: vec![DMatrix::zeros(d, d); nz],
            et_as: e.transpose(),
            u,
            kz,
            s_delta: ctx.delta_covariance(),
        }
    }

    /// R_{Bζ,Δ}(s) for s = t−1, advancing the internal state by one lag.
    ///
    /// With w_m = K^m z, T_j(s) = Σ_{i<s} A^{s−1−i}𝓔ᵀA^i (w_{s−i})_j obeys
    /// T_j(s+1) = Σ_l K_{jl} A T_l(s) + 𝓔ᵀA^s (Kz)_j, and the convolution is ε² Σ_j u_j T_j(s).
    fn bzd(&mut self, s: usize) -> DMatrix<f64> {
        let ctx = self.ctx;
        let mut m = &self.et_at * ctx.r_delta2_zeta(s);
        if s >= 1 {
            let d = ctx.dim();
            let mut conv = DMatrix::zeros(d, d);
            for (j, tj) in self.tj.iter().enumerate() {
                if self.u[j] != 0.0 {
                    conv += tj * self.u[j];
                }
            }
            m += ctx.family.e().transpose() * conv * ctx.sigma_delta_bullet() * ctx.eps2();
        }
        // advance to s+1
        let k = ctx.input.k().matrix();
        let at: Vec<DMatrix<f64>> = self.tj.iter().map(|t| &self.a * t).collect();
        for j in 0..self.tj.len() {
            let mut next = &self.et_as * self.kz[j];
            for (l, atl) in at.iter().enumerate() {
                let kjl = k[(j, l)];
                if kjl != 0.0 {
                    next += atl * kjl;
                }
            }
            self.tj[j] = next;
        }
        self.et_as = &self.et_as * &self.a;
        self.et_at = &self.et_at * &self.a;
        m
    }

    fn next_lag(&mut self) -> DMatrix<f64> {
        let ctx = self.ctx;
        let t = self.t;
        let p0 = ctx.family.p0().matrix();
        let mut m = self.pte.transpose() * ctx.pi0_diag() * ctx.family.e() * ctx.r_zeta(t as i64);
        if t == 0 {
            m += &self.s_delta;
        } else {
            m += self.bzd(t - 1);
            m += self.ptw.transpose() * ctx.sigma_delta_bullet() * (0.5 * ctx.r_zeta(0));
            self.ptw = p0 * &self.ptw;
        }
        self.pte = p0 * &self.pte;
        self.t += 1;
        m
    }
}
