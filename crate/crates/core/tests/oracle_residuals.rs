use perturbmc_core::controlled::InputSpec;
use perturbmc_core::oracle::{build_joint, exact_delta_stats, exact_marginal};
use perturbmc_core::second_order::SecondOrderContext;
use perturbmc_core::timing::build_queue_model;

struct Residuals {
    pi: f64,
    rgz0: f64,
    sigma_delta: f64,
    rd: [f64; 4],
    rdz: [f64; 4],
}

fn residuals(gamma: f64, eps: f64) -> Residuals {
    let q = build_queue_model(0.9, 18).unwrap();
    let input = InputSpec::three_state(gamma, eps).unwrap();
    let ctx = SecondOrderContext::new(q.family().clone(), input.clone()).unwrap();
    let jc = build_joint(q.family(), &input).unwrap();
    let pi_hat = ctx.steady_state_mean_approx().values;
    let pi = exact_marginal(&jc);
    let ds = exact_delta_stats(&jc, 0);
    let mut rd = [0.0; 4];
    let mut rdz = [0.0; 4];
    for t in 0..4 {
        rd[t] = (ctx.r_d(t as i64) - jc.r_d(t as i64)).amax();
        rdz[t] = (ctx.r_d_zeta(t as i64) - jc.r_d_zeta(t as i64)).amax();
    }
    Residuals {
        pi: (pi_hat - pi.vector()).amax(),
        rgz0: (ctx.cross_corr_gamma_zeta(0) - jc.r_gamma_zeta(0)).amax(),
        sigma_delta: (ctx.delta_covariance() - &ds.sigma_delta).amax(),
        rd,
        rdz,
    }
}

#[test]
fn queue_residuals_shrink_at_third_order() {
    let big = residuals(0.4, 0.2);
    let small = residuals(0.4, 0.1);
    let mut pairs = vec![
        ("pi", big.pi, small.pi),
        ("R_Gz(0)", big.rgz0, small.rgz0),
        ("Sigma_Delta", big.sigma_delta, small.sigma_delta),
    ];
    for t in 0..4 {
        pairs.push(("R_D", big.rd[t], small.rd[t]));
        pairs.push(("R_Dz", big.rdz[t], small.rdz[t]));
    }
    for (name, b, s) in pairs {
        eprintln!("{name}: {b:e} -> {s:e}  ratio {:.4}", s / b);
        assert!(s <= b / 6.0, "{name}: {b:e} -> {s:e}");
    }
}

#[test]
fn joint_chain_has_six_states_per_queue_level() {
    let q = build_queue_model(0.9, 18).unwrap();
    let jc = build_joint(q.family(), &InputSpec::three_state(0.4, 0.3).unwrap()).unwrap();
    assert_eq!(jc.n_states(), 114);
}

#[test]
fn residual_vanishes_at_zero_input() {
    let r = residuals(0.4, 0.0);
    assert!(r.pi < 1e-12 && r.rgz0 < 1e-12 && r.sigma_delta < 1e-12);
    assert!(r.rd.iter().chain(r.rdz.iter()).all(|v| *v < 1e-12));
}
