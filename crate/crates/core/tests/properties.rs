use nalgebra::{DMatrix, DVector};
use perturbmc_core::controlled::{ControlledFamily, InputSpec};
use perturbmc_core::markov::{fundamental_matrix, stationary_distribution, stationarity_residual, StochasticMatrix};
use perturbmc_core::oracle::{build_joint, exact_delta_stats, exact_marginal};
use perturbmc_core::second_order::SecondOrderContext;
use perturbmc_core::simulator::sample_row;
use perturbmc_core::timing::{dhat, kl_divergence, DiscreteDistributionPair};
use proptest::prelude::*;

fn normalize_rows(raw: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_row_slice(d, d, raw);
    for i in 0..d {
        let s: f64 = m.row(i).sum();
        for j in 0..d {
            m[(i, j)] /= s;
        }
    }
    m
}

/// Rows of a zero-row-sum matrix scaled so that P₀ + ζE + ½ζ²W stays nonnegative for |ζ| ≤ 1.
fn zero_sum(raw: &[f64], d: usize, floor: f64) -> DMatrix<f64> {
    let mut m = DMatrix::from_row_slice(d, d, raw);
    for i in 0..d {
        let mean = m.row(i).sum() / d as f64;
        for j in 0..d {
            m[(i, j)] -= mean;
        }
    }
    let a = m.amax();
    if a > 0.0 {
        m *= floor / (3.0 * a);
    }
    m
}

fn chain() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..7).prop_flat_map(|d| prop::collection::vec(0.05f64..1.0, d * d).prop_map(move |v| normalize_rows(&v, d)))
}

fn pmf(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn family() -> impl Strategy<Value = ControlledFamily> {
    (2usize..6).prop_flat_map(|d| {
        (
            prop::collection::vec(0.2f64..1.0, d * d),
            prop::collection::vec(-1.0f64..1.0, d * d),
            prop::collection::vec(-1.0f64..1.0, d * d),
        )
            .prop_map(move |(p, e, w)| {
                let p0 = normalize_rows(&p, d);
                let floor = p0.min();
                ControlledFamily::from_taylor(p0, zero_sum(&e, d, floor), zero_sum(&w, d, floor), (-1.0, 1.0)).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fundamental_identity(p in chain()) {
        let sm = StochasticMatrix::new(p.clone()).unwrap();
        let pi = stationary_distribution(&sm).unwrap();
        prop_assert!(stationarity_residual(&p, pi.vector()) < 1e-12);
        let u = fundamental_matrix(&sm, &pi).unwrap();
        let n = p.nrows();
        let z = DMatrix::identity(n, n) - &p + pi.ones_outer();
        prop_assert!((u.matrix() * z - DMatrix::<f64>::identity(n, n)).amax() < 1e-9);
    }

    #[test]
    fn zero_input_degeneracies(fam in family(), gamma in 0.05f64..0.95) {
        let ctx = SecondOrderContext::new(fam.clone(), InputSpec::three_state(gamma, 0.0).unwrap()).unwrap();
        let pi0 = ctx.pi0().vector().clone();
        prop_assert_eq!(&ctx.steady_state_mean_approx().values, &pi0);
        let p0 = fam.p0().matrix();
        let bullet = ctx.pi0_diag() - p0.transpose() * ctx.pi0_diag() * p0;
        prop_assert!((ctx.delta_covariance() - bullet).amax() < 1e-12);
        for t in -3..=3 {
            prop_assert_eq!(ctx.cross_corr_gamma_zeta(t).amax(), 0.0);
            prop_assert_eq!(ctx.r_d_zeta(t).amax(), 0.0);
        }
    }

    #[test]
    fn xi_routes_agree(fam in family(), gamma in 0.05f64..0.95, eps in 0.0f64..1.0) {
        let ctx = SecondOrderContext::new(fam, InputSpec::three_state(gamma, eps).unwrap()).unwrap();
        let a = ctx.xi_lag_domain();
        let b = ctx.xi_geometric().unwrap();
        prop_assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn approximate_law_sums_to_one(fam in family(), gamma in 0.05f64..0.95, eps in 0.0f64..1.0) {
        let ctx = SecondOrderContext::new(fam, InputSpec::three_state(gamma, eps).unwrap()).unwrap();
        prop_assert!((ctx.steady_state_mean_approx().values.sum() - 1.0).abs() < 1e-12);
        let s = ctx.delta_covariance();
        prop_assert!((&s - s.transpose()).amax() < 1e-12);
        prop_assert!((&s * DVector::from_element(s.nrows(), 1.0)).amax() < 1e-12);
    }

    #[test]
    fn family_evaluations_are_stochastic(fam in family(), z in -1.0f64..1.0) {
        let p = fam.evaluate(z).unwrap();
        for i in 0..p.dim() {
            prop_assert!((p.matrix().row(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_row_lands_on_support(row in pmf(6), u in 0.0f64..1.0) {
        let j = sample_row(&row, u);
        prop_assert!(row[j] > 0.0);
        let below: f64 = row[..j].iter().sum();
        prop_assert!(below <= u + 1e-12);
    }

    #[test]
    fn dhat_is_half_chi_square_maximum(a in pmf(5), b in pmf(5), f in prop::collection::vec(-1.0f64..1.0, 5)) {
        let pair = DiscreteDistributionPair::new(a.clone(), b.clone()).unwrap();
        let d = dhat(&pair).unwrap();
        prop_assert!(d >= 0.0);
        let same = DiscreteDistributionPair::new(b.clone(), b.clone()).unwrap();
        prop_assert_eq!(dhat(&same).unwrap(), 0.0);
        // any centred direction gives at most the closed form
        let mean: f64 = f.iter().zip(&b).map(|(x, p)| x * p).sum();
        let fc: Vec<f64> = f.iter().map(|x| x - mean).collect();
        let num: f64 = fc.iter().zip(&a).map(|(x, p)| x * p).sum();
        let den: f64 = fc.iter().zip(&b).map(|(x, p)| x * x * p).sum();
        if den > 1e-12 {
            prop_assert!(0.5 * num * num / den <= d * (1.0 + 1e-9) + 1e-15);
        }
        // the likelihood ratio direction attains it
        let opt: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x / y - 1.0).collect();
        let num: f64 = opt.iter().zip(&a).map(|(x, p)| x * p).sum();
        let den: f64 = opt.iter().zip(&b).map(|(x, p)| x * x * p).sum();
        if den > 0.0 {
            prop_assert!((0.5 * num * num / den - d).abs() <= 1e-12 * (1.0 + d));
        }
        prop_assert!(kl_divergence(&pair).unwrap() >= -1e-15);
    }
}

/// P_ζ = P₀ + ζE + ½ζ²W with W ≠ 0.
fn curved_family() -> ControlledFamily {
    let p0 = DMatrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.2, 0.5, 0.3, 0.3, 0.2, 0.5]);
    let e = DMatrix::from_row_slice(3, 3, &[0.1, -0.05, -0.05, -0.1, 0.1, 0.0, 0.05, 0.05, -0.1]);
    let w = DMatrix::from_row_slice(3, 3, &[-0.1, 0.1, 0.0, 0.05, -0.1, 0.05, 0.0, -0.1, 0.1]);
    ControlledFamily::from_taylor(p0, e, w, (-1.0, 1.0)).unwrap()
}

#[test]
fn curved_family_residuals_are_third_order() {
    let fam = curved_family();
    let resid = |eps: f64| {
        let input = InputSpec::three_state(0.3, eps).unwrap();
        let ctx = SecondOrderContext::new(fam.clone(), input.clone()).unwrap();
        let jc = build_joint(&fam, &input).unwrap();
        let mut r = vec![
            (ctx.steady_state_mean_approx().values - exact_marginal(&jc).vector()).amax(),
            (ctx.cross_corr_gamma_zeta(0) - jc.r_gamma_zeta(0)).amax(),
            (ctx.delta_covariance() - exact_delta_stats(&jc, 0).sigma_delta).amax(),
        ];
        for t in 0..4 {
            r.push((ctx.r_d(t) - jc.r_d(t)).amax());
            r.push((ctx.r_d_zeta(t) - jc.r_d_zeta(t)).amax());
        }
        r
    };
    let (big, small) = (resid(0.2), resid(0.1));
    for (i, (b, s)) in big.iter().zip(&small).enumerate() {
        eprintln!("quantity {i}: {b:e} -> {s:e}");
        assert!(*s <= b / 6.0, "quantity {i}: {b:e} -> {s:e}");
    }
}

#[test]
fn finite_differences_recover_queue_derivatives() {
    use perturbmc_core::controlled::taylor_from_evaluator;
    let q = perturbmc_core::timing::build_queue_model(0.9, 18).unwrap();
    let fam = q.family();
    let eval = {
        let f = fam.clone();
        std::sync::Arc::new(move |z: f64| f.evaluate_raw(z)) as perturbmc_core::controlled::Evaluator
    };
    let fd = taylor_from_evaluator(eval, (-1.0, 1.0), 1e-4).unwrap();
    assert!((fd.e() - fam.e()).amax() < 1e-6);
    assert!(fd.w().amax() < 1e-6);
}
