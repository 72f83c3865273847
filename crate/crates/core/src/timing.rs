//! Bits through queues: the uniformized finite-buffer queue, the quadratic divergence D̂
//! and the correlation-based mutual-information lower bound.

use std::ops::RangeInclusive;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::controlled::{ControlledFamily, Evaluator};
use crate::error::{Error, Result};
use crate::oracle::{exact_cross_cov_series, JointChain};
use crate::second_order::{LagSeries, SecondOrderContext};
use crate::spectral::sigma_gamma_series;

/// Queue with arrival probability λ(1+ζ) per slot, states (n, s) at index 2n + s.
///
/// s = 1 marks a departure (or an idle service slot at n = 0) on the last transition.
#[derive(Debug, Clone)]
pub struct QueueModel {
    lambda: f64,
    q_bar: usize,
    family: ControlledFamily,
}

pub fn build_queue_model(rho: f64, q_bar: usize) -> Result<QueueModel> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidLoad(rho));
    }
    QueueModel::with_lambda(rho / (1.0 + rho), q_bar)
}

impl QueueModel {
    pub fn with_lambda(lambda: f64, q_bar: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 0.5) {
            return Err(Error::InvalidLoad(lambda / (1.0 - lambda)));
        }
        if q_bar < 1 {
            return Err(Error::InvalidBuffer(q_bar));
        }
        let d = 2 * (q_bar + 1);
        let up = move |n: usize| 2 * (n + 1).min(q_bar);
        let down = move |n: usize| 2 * n.saturating_sub(1) + 1;
        let eval: Evaluator = Arc::new(move |zeta| {
            let mut p = DMatrix::zeros(d, d);
            let a = lambda * (1.0 + zeta);
            for x in 0..d {
                let n = x / 2;
                p[(x, up(n))] = a;
                p[(x, down(n))] = 1.0 - a;
            }
            p
        });
        let mut e = DMatrix::zeros(d, d);
        for x in 0..d {
            let n = x / 2;
            e[(x, up(n))] = lambda;
            e[(x, down(n))] = -lambda;
        }
        let family = ControlledFamily::with_derivatives(eval, e, DMatrix::zeros(d, d), (-1.0, 1.0))?;
        Ok(QueueModel { lambda, q_bar, family })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn q_bar(&self) -> usize {
        self.q_bar
    }

    pub fn dim(&self) -> usize {
        2 * (self.q_bar + 1)
    }

    pub fn family(&self) -> &ControlledFamily {
        &self.family
    }

    pub fn index(n: usize, s: usize) -> usize {
        2 * n + s
    }

    /// Indicator of s = 1.
    pub fn departure_observable(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |x, _| (x % 2) as f64)
    }

    pub fn queue_length_observable(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |x, _| (x / 2) as f64)
    }
}

/// π^Q(n) = Σ_s π(n, s).
pub fn queue_marginal(pi: &DVector<f64>) -> Vec<f64> {
    pi.as_slice().chunks(2).map(|c| c.iter().sum()).collect()
}

pub fn mean_queue(pi: &DVector<f64>) -> f64 {
    queue_marginal(pi).iter().enumerate().map(|(n, p)| n as f64 * p).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistributionPair {
    psi_a: Vec<f64>,
    psi_b: Vec<f64>,
}

impl DiscreteDistributionPair {
    pub fn new(psi_a: Vec<f64>, psi_b: Vec<f64>) -> Result<Self> {
        if psi_a.len() != psi_b.len() {
            return Err(Error::DimensionMismatch { expected: psi_a.len(), got: psi_b.len() });
        }
        for v in [&psi_a, &psi_b] {
            if v.iter().any(|p| !(*p >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidProbability("not a pmf".into()));
            }
        }
        Ok(DiscreteDistributionPair { psi_a, psi_b })
    }

    pub fn psi_a(&self) -> &[f64] {
        &self.psi_a
    }

    pub fn psi_b(&self) -> &[f64] {
        &self.psi_b
    }

    fn check_support(&self) -> Result<()> {
        for (i, (a, b)) in self.psi_a.iter().zip(&self.psi_b).enumerate() {
            if *a > 0.0 && *b == 0.0 {
                return Err(Error::SupportViolation { index: i });
            }
        }
        Ok(())
    }

    /// f* = log(dψ_a/dψ_b) on the support of ψ_b (−∞ where ψ_a vanishes).
    pub fn log_likelihood_ratio(&self) -> Result<Vec<f64>> {
        self.check_support()?;
        Ok(self
            .psi_a
            .iter()
            .zip(&self.psi_b)
            .filter(|(_, b)| **b > 0.0)
            .map(|(a, b)| (a / b).ln())
            .collect())
    }
}

/// D̂(ψ_a‖ψ_b) = ½ Σ (ψ_a − ψ_b)²/ψ_b.
pub fn dhat(pair: &DiscreteDistributionPair) -> Result<f64> {
    pair.check_support()?;
    Ok(0.5
        * pair
            .psi_a
            .iter()
            .zip(&pair.psi_b)
            .filter(|(_, b)| **b > 0.0)
            .map(|(a, b)| (a - b) * (a - b) / b)
            .sum::<f64>())
}

pub fn kl_divergence(pair: &DiscreteDistributionPair) -> Result<f64> {
    pair.check_support()?;
    Ok(pair
        .psi_a
        .iter()
        .zip(&pair.psi_b)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiBound {
    pub value: f64,
    pub argmax_n: i64,
    /// S_{S×ζ}(0) = Σ_m Σ_S(m)Σ_ζ(m)
    pub denominator: f64,
}

fn geometric_tail(terms: &[f64]) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    let n = terms.len();
    let w = n.min(6);
    let tail: Vec<f64> = terms[n - w..].iter().map(|v| v.abs()).collect();
    let last = tail.iter().fold(0.0f64, |a, b| a.max(*b));
    if last == 0.0 || w < 2 {
        return last;
    }
    let ratio = (tail[w - 1] / tail[0].max(f64::MIN_POSITIVE)).powf(1.0 / (w - 1) as f64);
    if ratio >= 1.0 {
        f64::INFINITY
    } else {
        last * ratio / (1.0 - ratio)
    }
}

/// ½ max_n Σ_{S,ζ}(n)² / S_{S×ζ}(0).
pub fn mi_lower_bound(
    sigma_s_zeta: &LagSeries<f64>,
    sigma_s: &LagSeries<f64>,
    sigma_zeta: &LagSeries<f64>,
    n_range: RangeInclusive<i64>,
) -> Result<MiBound> {
    let lo = sigma_s.lag_min().max(sigma_zeta.lag_min());
    let hi = sigma_s.lag_max().min(sigma_zeta.lag_max());
    if lo > hi {
        return Err(Error::InvalidArgument("Sigma_S and Sigma_zeta lag ranges do not overlap".into()));
    }
    let terms: Vec<f64> = (lo..=hi).map(|m| sigma_s.get(m).unwrap() * sigma_zeta.get(m).unwrap()).collect();
    let denominator: f64 = terms.iter().sum();
    // |Σ_S| is bounded, so the neglected tail is at most max|Σ_S| times the Σ_ζ tail
    let s_max = (lo..=hi).map(|m| sigma_s.get(m).unwrap().abs()).fold(0.0, f64::max);
    let zpos: Vec<f64> = (lo.max(0)..=hi).map(|m| *sigma_zeta.get(m).unwrap()).collect();
    let zneg: Vec<f64> = (lo..=hi.min(0)).rev().map(|m| *sigma_zeta.get(m).unwrap()).collect();
    let tail = s_max * (geometric_tail(&zpos) + geometric_tail(&zneg));
    if tail > 1e-10 * denominator.abs() && tail > 0.0 {
        return Err(Error::TailNotConverged(format!("tail {tail:e} against S(0) = {denominator:e}")));
    }
    let mut best = (f64::NEG_INFINITY, *n_range.start());
    for n in n_range {
        let v = *sigma_s_zeta
            .get(n)
            .ok_or_else(|| Error::InvalidArgument(format!("Sigma_S_zeta misses lag {n}")))?;
        if v * v > best.0 {
            best = (v * v, n);
        }
    }
    let value = if best.0 == 0.0 { 0.0 } else { 0.5 * best.0 / denominator };
    Ok(MiBound { value, argmax_n: best.1, denominator })
}

/// Bound for the filtered pair S^α_k = Σ_m α_m S_{k+m}, ζ^β_k = Σ_m β_m ζ_{k+m}.
pub fn filter_pair_bound(
    alpha: &[(i64, f64)],
    beta: &[(i64, f64)],
    sigma_s_zeta: &LagSeries<f64>,
    sigma_s: &LagSeries<f64>,
    sigma_zeta: &LagSeries<f64>,
) -> Result<f64> {
    let mut num = 0.0;
    for &(m, a) in alpha {
        for &(mp, b) in beta {
            let v = sigma_s_zeta
                .get(m - mp)
                .ok_or_else(|| Error::InvalidArgument(format!("Sigma_S_zeta misses lag {}", m - mp)))?;
            num += a * b * v;
        }
    }
    let filtered = |w: &[(i64, f64)], s: &LagSeries<f64>, l: i64| -> f64 {
        let mut acc = 0.0;
        for &(m, a) in w {
            for &(mp, b) in w {
                acc += a * b * s.get(l + m - mp).copied().unwrap_or(0.0);
            }
        }
        acc
    };
    let lo = sigma_s.lag_min().max(sigma_zeta.lag_min());
    let hi = sigma_s.lag_max().min(sigma_zeta.lag_max());
    let den: f64 = (lo..=hi).map(|l| filtered(alpha, sigma_s, l) * filtered(beta, sigma_zeta, l)).sum();
    Ok(if num == 0.0 { 0.0 } else { 0.5 * num * num / den })
}

/// Σ_{S,ζ}, Σ_S and Σ_ζ for an observable S = fᵀΓ.
#[derive(Debug, Clone)]
pub struct ChannelSeries {
    pub sigma_s_zeta: LagSeries<f64>,
    pub sigma_s: LagSeries<f64>,
    pub sigma_zeta: LagSeries<f64>,
}

/// Lag beyond which R_{ζ¹} is negligible relative to its variance.
fn input_lag_horizon(ctx: &SecondOrderContext) -> i64 {
    let r0 = ctx.r1(0).abs();
    let mut m = 1;
    let mut small = 0;
    while small < 5 && m < 100_000 {
        small = if ctx.r1(m).abs() <= 1e-15 * r0 { small + 1 } else { 0 };
        m += 1;
    }
    m
}

impl ChannelSeries {
    /// Series from the second-order approximation.
    pub fn approx(ctx: &SecondOrderContext, f: &DVector<f64>, n_range: RangeInclusive<i64>) -> Result<Self> {
        let horizon = input_lag_horizon(ctx);
        let rd = ctx.r_d_series_auto()?;
        let sg = sigma_gamma_series(ctx, &rd, horizon as usize)?;
        let pos: Vec<f64> = sg.values().iter().map(|m| f.dot(&(m * f))).collect();
        let sigma_s = LagSeries::from_fn("Sigma_S", -horizon, horizon, |t| pos[t.unsigned_abs() as usize]);
        let sigma_s_zeta = LagSeries::from_fn("Sigma_S_zeta", *n_range.start(), *n_range.end(), |n| {
            f.dot(&ctx.cross_corr_gamma_zeta(n))
        });
        let sigma_zeta = ctx.r_zeta_series(-horizon, horizon);
        Ok(ChannelSeries { sigma_s_zeta, sigma_s, sigma_zeta })
    }

    /// Series from the exact joint chain; `horizon` as for the approximation.
    pub fn exact(jc: &JointChain, ctx: &SecondOrderContext, f: &DVector<f64>, n_range: RangeInclusive<i64>) -> Self {
        let horizon = input_lag_horizon(ctx);
        let fl = jc.lift(f);
        let sigma_s = exact_cross_cov_series(jc, &fl, &fl, -horizon, horizon);
        let sigma_s_zeta = exact_cross_cov_series(jc, &fl, jc.zeta(), *n_range.start(), *n_range.end());
        let sigma_zeta = exact_cross_cov_series(jc, jc.zeta(), jc.zeta(), -horizon, horizon);
        ChannelSeries {
            sigma_s_zeta: sigma_s_zeta.map("Sigma_S_zeta", |v| *v),
            sigma_s: sigma_s.map("Sigma_S", |v| *v),
            sigma_zeta: sigma_zeta.map("Sigma_zeta", |v| *v),
        }
    }

    pub fn bound(&self, n_range: RangeInclusive<i64>) -> Result<MiBound> {
        mi_lower_bound(&self.sigma_s_zeta, &self.sigma_s, &self.sigma_zeta, n_range)
    }
}
