//! Power spectral densities on a uniform θ grid, S(θ) = Σ_t Σ(t) e^{−jθt}.
//!
//! Σ_{XY}(t) = E[X_t Y_0ᵀ] (mean removed). The grid is θ_k = −π + 2πk/M, k = 0..M−1.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::second_order::{LagSeries, SecondOrderContext};

pub type SigmaSeries = LagSeries<DMatrix<f64>>;

pub const DEFAULT_GRID: usize = 1024;
const TAIL_BUDGET: f64 = 1e-9;

pub fn theta_grid(m: usize) -> Vec<f64> {
    (0..m).map(|k| -PI + 2.0 * PI * k as f64 / m as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrid {
    thetas: Vec<f64>,
    values: Vec<DMatrix<Complex64>>,
    /// Bound on the truncated lag tail, per entry.
    error_budget: f64,
}

impl SpectralGrid {
    pub fn new(thetas: Vec<f64>, values: Vec<DMatrix<Complex64>>, error_budget: f64) -> Self {
        assert_eq!(thetas.len(), values.len());
        SpectralGrid { thetas, values, error_budget }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn values(&self) -> &[DMatrix<Complex64>] {
        &self.values
    }

    pub fn error_budget(&self) -> f64 {
        self.error_budget
    }

    /// Grid index of −θ_k.
    pub fn mirror(&self, k: usize) -> usize {
        (self.len() - k) % self.len()
    }

    /// Entry (i, j) across the grid.
    pub fn entry(&self, i: usize, j: usize) -> Vec<Complex64> {
        self.values.iter().map(|m| m[(i, j)]).collect()
    }

    /// max_k |S(−θ_k) − conj S(θ_k)|.
    pub fn conjugate_symmetry_error(&self) -> f64 {
        (0..self.len())
            .map(|k| {
                let a = &self.values[self.mirror(k)];
                let b = &self.values[k];
                a.iter().zip(b.iter()).map(|(x, y)| (x - y.conj()).norm()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// max_k ‖S(θ_k) − S(θ_k)^H‖.
    pub fn hermitian_error(&self) -> f64 {
        self.values
            .iter()
            .map(|m| (m - m.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    /// Smallest real part on the diagonal over the grid.
    pub fn min_diagonal(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|m| (0..m.nrows().min(m.ncols())).map(move |i| m[(i, i)].re))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn zip_with(&self, other: &SpectralGrid, f: impl Fn(&DMatrix<Complex64>, &DMatrix<Complex64>) -> DMatrix<Complex64>) -> SpectralGrid {
        assert_eq!(self.len(), other.len());
        let values = self.values.iter().zip(&other.values).map(|(a, b)| f(a, b)).collect();
        SpectralGrid::new(self.thetas.clone(), values, self.error_budget + other.error_budget)
    }

    /// CSV with columns theta, re(S_ij), im(S_ij) for the requested pairs.
    pub fn to_csv(&self, pairs: &[(usize, usize)]) -> String {
        let mut out = String::from("theta");
        for (i, j) in pairs {
            out.push_str(&format!(",re_S_{i}_{j},im_S_{i}_{j}"));
        }
        out.push('\n');
        for (theta, m) in self.thetas.iter().zip(&self.values) {
            out.push_str(&format!("{theta:.10}"));
            for &(i, j) in pairs {
                out.push_str(&format!(",{:.12e},{:.12e}", m[(i, j)].re, m[(i, j)].im));
            }
            out.push('\n');
        }
        out
    }
}

fn tail_bound(norms: &[f64]) -> Result<f64> {
    let n = norms.len();
    if n < 2 {
        return Ok(norms.last().copied().unwrap_or(0.0));
    }
    let w = n.min(6);
    let tail = &norms[n - w..];
    let last_max = tail.iter().fold(0.0f64, |a, b| a.max(*b));
    if last_max < 1e-15 {
        return Ok(last_max);
    }
    let first = tail[0].max(f64::MIN_POSITIVE);
    let ratio = (tail[w - 1] / first).powf(1.0 / (w - 1) as f64);
    if !(ratio < 1.0) {
        return Err(Error::TailNotSummable(format!("tail ratio {ratio:.3} at magnitude {last_max:e}")));
    }
    Ok(last_max * ratio / (1.0 - ratio))
}

/// Fourier transform of a lag series on the M-point grid, after checking that the omitted
/// tail beyond the stored lags is negligible.
pub fn psd_of_series(series: &SigmaSeries, m: usize) -> Result<SpectralGrid> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    let pos: Vec<f64> = (0..=series.lag_max().max(0)).filter_map(|t| series.get(t)).map(|v| v.amax()).collect();
    let neg: Vec<f64> = (0..=(-series.lag_min()).max(0)).filter_map(|t| series.get(-t)).map(|v| v.amax()).collect();
    let budget = tail_bound(&pos)? + tail_bound(&neg)?;
    if budget > TAIL_BUDGET {
        return Err(Error::TailNotSummable(format!("tail bound {budget:e}")));
    }
    let mut out = psd_of_finite_series(series, m)?;
    out.error_budget = budget;
    Ok(out)
}

/// Transform of a series that is zero outside its stored lags.
pub fn psd_of_finite_series(series: &SigmaSeries, m: usize) -> Result<SpectralGrid> {
    if series.is_empty() || m == 0 {
        return Err(Error::InvalidArgument("empty series or grid".into()));
    }
    let (rows, cols) = series.values()[0].shape();
    let mut folded = vec![vec![Complex64::new(0.0, 0.0); m]; rows * cols];
    for (t, v) in series.iter() {
        let r = t.rem_euclid(m as i64) as usize;
        let sign = if t.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        for j in 0..cols {
            for i in 0..rows {
                folded[i + j * rows][r] += sign * v[(i, j)];
            }
        }
    }
    let fft = FftPlanner::new().plan_fft_forward(m);
    for buf in folded.iter_mut() {
        fft.process(buf);
    }
    let values = (0..m)
        .map(|k| DMatrix::from_fn(rows, cols, |i, j| folded[i + j * rows][k]))
        .collect();
    Ok(SpectralGrid::new(theta_grid(m), values, 0.0))
}

pub fn scalar_series_psd(series: &LagSeries<f64>, m: usize) -> Result<SpectralGrid> {
    psd_of_series(&series.map(series.kind(), |v| DMatrix::from_element(1, 1, *v)), m)
}

/// Ã = (P₀ − 1⊗π₀)ᵀ.
pub fn deviation_matrix(ctx: &SecondOrderContext) -> DMatrix<f64> {
    (ctx.family().p0().matrix() - ctx.pi0().ones_outer()).transpose()
}

/// Ŝ_D from the assembled R_D lag series.
pub fn psd_d_approx(ctx: &SecondOrderContext, m: usize) -> Result<SpectralGrid> {
    let rd = ctx.r_d_series_auto()?;
    psd_of_series(&rd, m)
}

fn resolvent(a: &DMatrix<Complex64>, theta: f64) -> Result<DMatrix<Complex64>> {
    let n = a.nrows();
    let z = Complex64::from_polar(1.0, -theta);
    (DMatrix::<Complex64>::identity(n, n) - a * z)
        .lu()
        .try_inverse()
        .ok_or(Error::SingularResolvent { theta })
}

/// Ŝ_Γ = (I − e^{−jθ}Ã)⁻¹ Ŝ_D (I − e^{jθ}Ãᵀ)⁻¹.
pub fn psd_gamma(ctx: &SecondOrderContext, s_d: &SpectralGrid) -> Result<SpectralGrid> {
    let a = deviation_matrix(ctx).map(Complex64::from);
    let values: Result<Vec<_>> = s_d
        .thetas
        .par_iter()
        .zip(&s_d.values)
        .map(|(&theta, sd)| {
            let l = resolvent(&a, theta)?;
            Ok(&l * sd * l.adjoint())
        })
        .collect();
    Ok(SpectralGrid::new(s_d.thetas.clone(), values?, s_d.error_budget))
}

#[derive(Debug, Clone)]
pub struct CrossSpectra {
    pub gamma_d: SpectralGrid,
    pub gamma_zeta: SpectralGrid,
}

/// Ŝ_{Γ,D} and Ŝ_{Γ,ζ}; the latter in closed form when the input covariance is geometric.
pub fn cross_psd_gamma(ctx: &SecondOrderContext, s_d: &SpectralGrid) -> Result<CrossSpectra> {
    let a = deviation_matrix(ctx).map(Complex64::from);
    let gd: Result<Vec<_>> = s_d
        .thetas
        .par_iter()
        .zip(&s_d.values)
        .map(|(&theta, sd)| Ok(resolvent(&a, theta)? * sd))
        .collect();
    let gamma_d = SpectralGrid::new(s_d.thetas.clone(), gd?, s_d.error_budget);
    let gamma_zeta = match cross_psd_gamma_zeta_closed(ctx, s_d.len()) {
        Ok(g) => g,
        Err(_) => cross_psd_gamma_zeta_lag(ctx, s_d.len())?,
    };
    Ok(CrossSpectra { gamma_d, gamma_zeta })
}

/// Ŝ_{Γ,ζ}(θ) = ε²(e^{jθ}I − Ã)⁻¹ B S_{ζ¹}(θ) with the geometric S_{ζ¹}.
pub fn cross_psd_gamma_zeta_closed(ctx: &SecondOrderContext, m: usize) -> Result<SpectralGrid> {
    let g = ctx
        .geometric()
        .cloned()
        .ok_or_else(|| Error::NonGeometricCovariance("no geometric representation".into()))?;
    let d = ctx.dim();
    let a = deviation_matrix(ctx).map(Complex64::from);
    let b = ctx.b().map(Complex64::from);
    let eps2 = ctx.epsilon() * ctx.epsilon();
    let thetas = theta_grid(m);
    let values: Result<Vec<_>> = thetas
        .par_iter()
        .map(|&theta| {
            let z = Complex64::from_polar(1.0, theta);
            let lhs = DMatrix::<Complex64>::identity(d, d) * z - &a;
            let x = lhs.lu().solve(&b).ok_or(Error::SingularResolvent { theta })?;
            let v: DVector<Complex64> = x * Complex64::from(eps2 * g.spectrum(theta));
            Ok(DMatrix::from_column_slice(d, 1, v.as_slice()))
        })
        .collect();
    Ok(SpectralGrid::new(thetas, values?, 0.0))
}

/// Ŝ_{Γ,ζ} by transforming the truncated lag series of R_{Γ,ζ}.
pub fn cross_psd_gamma_zeta_lag(ctx: &SecondOrderContext, m: usize) -> Result<SpectralGrid> {
    let (lo, hi) = gamma_zeta_lag_range(ctx)?;
    let series = ctx.cross_corr_gamma_zeta_series(lo, hi);
    let d = ctx.dim();
    let as_mat = series.map("R_gamma_zeta", |v| DMatrix::from_column_slice(d, 1, v.as_slice()));
    psd_of_series(&as_mat, m)
}

/// Lags beyond which R_{Γ,ζ} stays below the truncation tolerance.
fn gamma_zeta_lag_range(ctx: &SecondOrderContext) -> Result<(i64, i64)> {
    let tol = ctx.truncation().tol * 1e-3;
    let cap = 100_000i64;
    let find = |dir: i64| -> Result<i64> {
        let mut small = 0;
        let mut t = 0i64;
        while small < 8 {
            t += dir;
            small = if ctx.cross_corr_gamma_zeta(t).amax() < tol { small + 1 } else { 0 };
            if t.abs() > cap {
                return Err(Error::TruncationNotConverged { max_terms: cap as usize });
            }
        }
        Ok(t)
    };
    let hi = find(1)?.max(ctx.n_terms() as i64 + 8);
    let lo = find(-1)?;
    Ok((lo, hi))
}

/// Approximate spectra of the pair (Γ, ζ).
#[derive(Debug, Clone)]
pub struct JointSpectrum {
    pub gamma: SpectralGrid,
    pub gamma_zeta: SpectralGrid,
    pub zeta: SpectralGrid,
}

impl JointSpectrum {
    pub fn approx(ctx: &SecondOrderContext, m: usize) -> Result<Self> {
        let s_d = psd_d_approx(ctx, m)?;
        let gamma = psd_gamma(ctx, &s_d)?;
        let gamma_zeta = cross_psd_gamma(ctx, &s_d)?.gamma_zeta;
        let eps2 = ctx.epsilon() * ctx.epsilon();
        let zeta = match ctx.geometric() {
            Some(g) => {
                let thetas = theta_grid(m);
                let values = thetas
                    .iter()
                    .map(|&t| DMatrix::from_element(1, 1, Complex64::from(eps2 * g.spectrum(t))))
                    .collect();
                SpectralGrid::new(thetas, values, 0.0)
            }
            None => {
                let l = (ctx.truncation().max_terms as i64).min(100_000);
                let mut hi = 1;
                while hi < l && ctx.r1(hi).abs() > 0.0 {
                    hi += 1;
                }
                scalar_series_psd(&ctx.r_zeta_series(-hi, hi), m)?
            }
        };
        Ok(JointSpectrum { gamma, gamma_zeta, zeta })
    }
}

/// Spectrum of Y = fᵀΓ + cζ from the joint (Γ, ζ) spectra.
pub fn observable_psd(s: &JointSpectrum, f: &DVector<f64>, c: f64) -> Result<SpectralGrid> {
    let d = s.gamma.values.first().map(|m| m.nrows()).unwrap_or(0);
    if f.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: f.len() });
    }
    let fc = f.map(Complex64::from);
    let values = (0..s.gamma.len())
        .map(|k| {
            let g = &s.gamma.values[k];
            let gz = &s.gamma_zeta.values[k];
            let z = s.zeta.values[k][(0, 0)];
            let mut v = (fc.transpose() * g * &fc)[(0, 0)];
            if c != 0.0 {
                let cross = (fc.transpose() * gz)[(0, 0)];
                v += cross * c + cross.conj() * c + z * (c * c);
            }
            DMatrix::from_element(1, 1, v)
        })
        .collect();
    Ok(SpectralGrid::new(s.gamma.thetas.clone(), values, s.gamma.error_budget))
}

/// Approximate lag covariances Σ̂_Γ(m) for m = 0..=max_lag, from
/// C(t) = ÃC(t−1) + R̂_D(t) and Σ̂_Γ(m) = C(m) + Σ̂_Γ(m+1)Ãᵀ.
pub fn sigma_gamma_series(ctx: &SecondOrderContext, rd: &SigmaSeries, max_lag: usize) -> Result<SigmaSeries> {
    let a = deviation_matrix(ctx);
    let at = a.transpose();
    let d = ctx.dim();
    let zero = DMatrix::zeros(d, d);
    let rd_at = |t: i64| rd.get(t).unwrap_or(&zero);
    let top = max_lag as i64;
    let mut c = DMatrix::zeros(d, d);
    let mut stored = Vec::with_capacity(max_lag + 1);
    for t in rd.lag_min()..=top {
        c = &a * &c + rd_at(t);
        if t >= 0 {
            stored.push(c.clone());
        }
    }
    // Σ̂_Γ(top) = Σ_k C(top+k)(Ãᵀ)^k, summed until both factors have died out
    let mut g = c.clone();
    let mut pk = DMatrix::<f64>::identity(d, d);
    let mut t = top;
    let mut small = 0;
    while small < 5 {
        t += 1;
        c = &a * &c + rd_at(t);
        pk = &pk * &at;
        let term = &c * &pk;
        small = if term.amax() < 1e-17 { small + 1 } else { 0 };
        g += term;
        if t - top > 1_000_000 {
            return Err(Error::TruncationNotConverged { max_terms: 1_000_000 });
        }
    }
    let mut out = vec![DMatrix::zeros(d, d); max_lag + 1];
    out[max_lag] = g;
    for m in (0..max_lag).rev() {
        out[m] = &stored[m] + &out[m + 1] * &at;
    }
    Ok(LagSeries::new("Sigma_gamma", 0, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(lag_min: i64, vals: Vec<f64>) -> SigmaSeries {
        LagSeries::new("s", lag_min, vals.into_iter().map(|v| DMatrix::from_element(1, 1, v)).collect())
    }

    #[test]
    fn white_series_is_flat() {
        let s = psd_of_finite_series(&scalar(0, vec![2.5]), 64).unwrap();
        for v in s.values() {
            assert!((v[(0, 0)] - Complex64::new(2.5, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn geometric_series_closed_form() {
        let (a, rho) = (0.7, 0.5f64);
        let l = 80i64;
        let vals = (-l..=l).map(|t| a * rho.powi(t.abs() as i32)).collect();
        let s = psd_of_series(&scalar(-l, vals), 128).unwrap();
        for (theta, v) in s.thetas().iter().zip(s.values()) {
            let want = a * (1.0 - rho * rho) / (1.0 - 2.0 * rho * theta.cos() + rho * rho);
            assert!((v[(0, 0)].re - want).abs() < 1e-12);
            assert!(v[(0, 0)].im.abs() < 1e-12);
        }
        let zero = s.thetas().iter().position(|t| t.abs() < 1e-12).unwrap();
        assert!((s.values()[zero][(0, 0)].re - a * (1.0 + rho) / (1.0 - rho)).abs() < 1e-12);
        assert!(s.conjugate_symmetry_error() < 1e-13);
    }

    #[test]
    fn fft_matches_direct_sum() {
        let vals: Vec<f64> = (0..9).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let series = scalar(-4, vals.clone());
        let s = psd_of_finite_series(&series, 8).unwrap();
        for (theta, v) in s.thetas().iter().zip(s.values()) {
            let mut direct = Complex64::new(0.0, 0.0);
            for (i, x) in vals.iter().enumerate() {
                let t = i as f64 - 4.0;
                direct += Complex64::from_polar(*x, -theta * t);
            }
            assert!((v[(0, 0)] - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn slow_tail_is_rejected() {
        let vals = (0..20).map(|t| 0.99f64.powi(t)).collect();
        assert!(matches!(psd_of_series(&scalar(0, vals), 32), Err(Error::TailNotSummable(_))));
    }

    #[test]
    fn grid_layout() {
        let g = theta_grid(4);
        assert_eq!(g, vec![-PI, -PI / 2.0, 0.0, PI / 2.0]);
    }
}
