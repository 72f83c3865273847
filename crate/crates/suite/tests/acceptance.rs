//! Acceptance criteria 1–11. Prints one `[PASS]` or `[FAIL]` line per criterion and exits
//! non-zero if any criterion fails.

mod oracle;

use std::error::Error;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use perturbmc_cli::config::{load_input, load_model};
use perturbmc_cli::figures::{cmd_figure, FigureArgs, FigureId};
use perturbmc_core::controlled::InputSpec;
use perturbmc_core::markov::{fundamental_matrix, stationary_distribution, StochasticMatrix};
use perturbmc_core::second_order::{LagSeries, SecondOrderContext};
use perturbmc_core::simulator::{
    coupling_rate, empirical_corr, empirical_mean, exact_mismatch_probability, extract_delta, familywise_threshold,
    simulate_coupled, EmpiricalSeries, SparseSeries,
};
use perturbmc_core::spectral::cross_psd_gamma_zeta_closed;
use perturbmc_core::timing::{build_queue_model, dhat, mean_queue, queue_marginal, ChannelSeries, DiscreteDistributionPair};

use oracle::Joint;

type Outcome = Result<(bool, String), Box<dyn Error>>;

const RHO: f64 = 0.9;
const Q_BAR: usize = 18;
const SEED: u64 = 1;
const T_MC: usize = 1_000_000;

fn context(gamma: f64, eps: f64) -> Result<SecondOrderContext, Box<dyn Error>> {
    let q = build_queue_model(RHO, Q_BAR)?;
    Ok(SecondOrderContext::new(q.family().clone(), InputSpec::three_state(gamma, eps)?)?)
}

fn departures() -> DVector<f64> {
    DVector::from_fn(2 * (Q_BAR + 1), |x, _| (x % 2) as f64)
}

fn identity_error(p: &DMatrix<f64>) -> Result<f64, Box<dyn Error>> {
    let sm = StochasticMatrix::new(p.clone())?;
    let pi = stationary_distribution(&sm)?;
    let u = fundamental_matrix(&sm, &pi)?;
    let n = p.nrows();
    let ones_pi = DMatrix::from_fn(n, n, |_, j| pi.as_slice()[j]);
    Ok((u.matrix() * (DMatrix::identity(n, n) - p + ones_pi) - DMatrix::identity(n, n)).amax())
}

/// Random chain with a Hamiltonian cycle, so irreducible, plus a self-loop for aperiodicity.
fn random_irreducible(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = rng.random_range(3..=12);
    let mut p = DMatrix::from_fn(n, n, |_, _| 0.0);
    for i in 0..n {
        for j in 0..n {
            if rng.random_bool(0.4) {
                p[(i, j)] = rng.random::<f64>();
            }
        }
        p[(i, (i + 1) % n)] += 0.1 + rng.random::<f64>();
    }
    p[(0, 0)] += 0.1;
    for i in 0..n {
        let s = p.row(i).sum();
        p.row_mut(i).scale_mut(1.0 / s);
    }
    p
}

fn c1_fundamental_identity() -> Outcome {
    let q = oracle::queue_matrix(RHO / (1.0 + RHO), Q_BAR, 0.0);
    let mut worst = vec![identity_error(&q)?];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..5 {
        worst.push(identity_error(&random_irreducible(&mut rng))?);
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    Ok((max < 1e-9, format!("max |U1(I - P0 + 1 pi0) - I| = {max:.2e} over the queue and 5 random chains")))
}

fn c2_zero_input() -> Outcome {
    let ctx = context(0.4, 0.0)?;
    let p0 = oracle::queue_matrix(RHO / (1.0 + RHO), Q_BAR, 0.0);
    let pi0 = oracle::stationary(&p0);
    let lib_pi0 = ctx.pi0().vector();
    let same = ctx.steady_state_mean_approx().values == *lib_pi0;
    let pi_err = (lib_pi0 - &pi0).amax();
    let d0 = DMatrix::from_diagonal(&pi0);
    let bullet = &d0 - p0.transpose() * &d0 * &p0;
    let sd = (ctx.delta_covariance() - bullet).amax();
    let mut cross = 0.0f64;
    for t in -20..=20 {
        cross = cross.max(ctx.cross_corr_gamma_zeta(t).amax()).max(ctx.r_d_zeta(t).amax());
    }
    for v in cross_psd_gamma_zeta_closed(&ctx, 1024)?.values() {
        cross = cross.max(v.iter().map(|c| c.norm()).fold(0.0, f64::max));
    }
    let pass = same && pi_err < 1e-12 && sd < 1e-12 && cross == 0.0;
    Ok((
        pass,
        format!(
            "pi_hat == pi0 bitwise: {same} (pi0 vs oracle {pi_err:.1e}); Sigma_Delta vs Pi0 - P0'Pi0P0 {sd:.1e}; \
             max zeta-cross magnitude {cross:e}"
        ),
    ))
}

fn residuals(gamma: f64, eps: f64) -> Result<Vec<(String, f64)>, Box<dyn Error>> {
    let ctx = context(gamma, eps)?;
    let j = Joint::queue(gamma, eps);
    let mut r = vec![
        ("pi".to_string(), (ctx.steady_state_mean_approx().values - j.marginal()).amax()),
        ("R_Gz(0)".to_string(), (ctx.cross_corr_gamma_zeta(0) - j.r_gamma_zeta0()).amax()),
        ("Sigma_Delta".to_string(), (ctx.delta_covariance() - j.sigma_delta()).amax()),
    ];
    for t in 0..=3 {
        r.push((format!("R_D({t})"), (ctx.r_d(t) - j.r_d(t)).amax()));
    }
    for t in 0..=3 {
        r.push((format!("R_Dz({t})"), (ctx.r_d_zeta(t) - j.r_d_zeta(t)).amax()));
    }
    Ok(r)
}

fn c3_residual_ratios() -> Outcome {
    let big = residuals(0.4, 0.2)?;
    let small = residuals(0.4, 0.1)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for ((name, b), (_, s)) in big.iter().zip(&small) {
        let ratio = s / b;
        pass &= ratio <= 1.0 / 6.0;
        parts.push(format!("{name} {ratio:.3}"));
    }
    Ok((pass, format!("r(0.1)/r(0.2): {}", parts.join(", "))))
}

fn c4_mean_queue() -> Outcome {
    let approx = mean_queue(&context(0.4, 1.0)?.steady_state_mean_approx().values);
    let exact = mean_queue(&Joint::queue(0.4, 1.0).marginal());
    let rel = (approx - exact).abs() / exact;
    Ok(((0.15..=0.35).contains(&rel), format!("E[Q] exact {exact:.4}, approx {approx:.4}, relative error {rel:.4}")))
}

fn pi_q_error(gamma: f64) -> Result<f64, Box<dyn Error>> {
    let approx = queue_marginal(&context(gamma, 1.0)?.steady_state_mean_approx().values);
    let exact = queue_marginal(&Joint::queue(gamma, 1.0).marginal());
    Ok(approx.iter().zip(&exact).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max))
}

fn c5_pi_q_split() -> Outcome {
    let (fast, slow) = (pi_q_error(0.8)?, pi_q_error(0.2)?);
    Ok((fast < 0.01 && slow > 0.01, format!("max_n |pi_hat^Q - pi^Q|: gamma 0.8 {fast:.4}, gamma 0.2 {slow:.4}")))
}

fn c6_cross_psd() -> Outcome {
    let f = departures();
    let mut pass = true;
    let mut parts = Vec::new();
    for eps in [0.3, 0.7, 1.0] {
        let ctx = context(0.4, eps)?;
        let grid = cross_psd_gamma_zeta_closed(&ctx, 1024)?;
        let fc = f.map(Complex64::from);
        let approx: Vec<Complex64> = grid.values().iter().map(|v| (fc.transpose() * v)[(0, 0)]).collect();
        let j = Joint::queue(0.4, eps);
        let s = j.lift(&f);
        let lag = j.decay_lag(&s, &j.zeta, 1e-18, 20_000);
        let cov = j.cov_series(&s, &j.zeta, lag);
        let exact: Vec<Complex64> = grid
            .thetas()
            .iter()
            .map(|&th| {
                cov.iter().enumerate().map(|(k, c)| Complex64::from_polar(*c, -th * (k as f64 - lag as f64))).sum()
            })
            .collect();
        let scale = exact.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let err = approx.iter().zip(&exact).map(|(a, e)| (a - e).norm()).fold(0.0, f64::max);
        let rel = err / scale;
        pass &= rel < 0.02;
        parts.push(format!("eps {eps}: {rel:.2e}"));
    }
    Ok((pass, format!("max relative error on M = 1024: {}", parts.join(", "))))
}

fn c7_coupling_slope() -> Outcome {
    let q = build_queue_model(RHO, Q_BAR)?;
    let input = InputSpec::three_state(0.4, 0.05)?;
    let eps = [0.05, 0.1, 0.2];
    let table = coupling_rate(q.family(), &input, &eps, T_MC, SEED)?;
    let slope = table.slope.ok_or("no positive mismatch rates")?;
    let mut parts = Vec::new();
    for r in &table.rows {
        let exact = exact_mismatch_probability(q.family(), &input.with_epsilon(r.epsilon)?)?;
        parts.push(format!("eps {} rate {:.4} (+/- {:.4}, stationary {exact:.4})", r.epsilon, r.rate, r.batch_se));
    }
    Ok(((0.8..=1.2).contains(&slope), format!("log-log slope {slope:.3}; {}", parts.join("; "))))
}

fn c8_martingale_suite() -> Outcome {
    let q = build_queue_model(RHO, Q_BAR)?;
    let fam = q.family();
    let d = fam.dim();
    let spec = InputSpec::three_state(0.4, 0.3)?;
    let path = simulate_coupled(fam, &spec, T_MC, SEED)?;
    let delta = extract_delta(&path, fam, &spec)?;
    let zeta = path.zeta();
    let zs = SparseSeries::from_scalars(&zeta[1..]);

    let (m, se) = empirical_mean(&delta);
    let mean = EmpiricalSeries {
        estimate: LagSeries::new("mean", 0, vec![DMatrix::from_column_slice(d, 1, m.as_slice())]),
        std_error: LagSeries::new("se", 0, vec![DMatrix::from_column_slice(d, 1, se.as_slice())]),
    };
    let rdz = empirical_corr(&delta, &zs, -3..=3)?;
    let rdd = empirical_corr(&delta, &delta, 0..=3)?;
    let sigma = Joint::queue(0.4, 0.3).sigma_delta();

    let mut checks: Vec<(String, &EmpiricalSeries, i64, DMatrix<f64>)> =
        vec![("E[Delta]".into(), &mean, 0, DMatrix::zeros(d, 1))];
    for k in -3..=3 {
        checks.push((format!("R_Dz({k})"), &rdz, k, DMatrix::zeros(d, 1)));
    }
    for t in 1..=3 {
        checks.push((format!("R_Delta({t})"), &rdd, t, DMatrix::zeros(d, d)));
    }
    checks.push(("Sigma_Delta".into(), &rdd, 0, sigma));

    let mut pass = true;
    let mut worst = (0.0f64, String::new());
    let mut failures = Vec::new();
    for (name, s, lag, target) in &checks {
        let z = s.max_z_score(*lag, target);
        let thr = familywise_threshold(s.tested_entries(*lag), 3.0);
        if z > thr {
            pass = false;
            failures.push(format!("{name} {z:.2} > {thr:.2}"));
        }
        if z > worst.0 {
            worst = (z, name.clone());
        }
    }
    let detail = format!(
        "{} statistics, family-wise 3-sigma per statistic{}; largest entrywise |z| {:.2} ({}), \
         entrywise 3-sigma {}",
        checks.len(),
        if failures.is_empty() { String::new() } else { format!(", exceeded: {}", failures.join(", ")) },
        worst.0,
        worst.1,
        if worst.0 <= 3.0 { "holds" } else { "exceeded" }
    );
    Ok((pass, detail))
}

fn exact_bound(gamma: f64, eps: f64) -> (f64, i64) {
    let j = Joint::queue(gamma, eps);
    let s = j.lift(&departures());
    let h = j.decay_lag(&j.zeta, &j.zeta, 1e-20, 5_000);
    let ss = j.cov_series(&s, &s, h);
    let zz = j.cov_series(&j.zeta, &j.zeta, h);
    let den: f64 = ss.iter().zip(&zz).map(|(a, b)| a * b).sum();
    let sz = j.cov_series(&s, &j.zeta, 5);
    let (k, v) = sz.iter().enumerate().fold((0, 0.0f64), |best, (k, v)| if v * v > best.1 { (k, v * v) } else { best });
    (0.5 * v / den, k as i64 - 5)
}

fn c9_mi_bound() -> Outcome {
    let f = departures();
    let mut pass = true;
    let mut argmax = Vec::new();
    let mut worst = 0.0f64;
    for gamma in [0.2, 0.4, 0.8] {
        let b = ChannelSeries::approx(&context(gamma, 0.5)?, &f, -5..=5)?.bound(-5..=5)?;
        pass &= b.argmax_n == 1;
        argmax.push(format!("gamma {gamma}: n = {}", b.argmax_n));
        for eps in [0.1, 0.2, 0.3] {
            let a = ChannelSeries::approx(&context(gamma, eps)?, &f, -5..=5)?.bound(-5..=5)?;
            let (exact, _) = exact_bound(gamma, eps);
            let rel = (a.value - exact).abs() / exact;
            worst = worst.max(rel);
        }
    }
    pass &= worst < 0.05;
    Ok((pass, format!("argmax at eps 0.5: {}; max relative gap approx vs exact for eps <= 0.3: {worst:.2e}", argmax.join(", "))))
}

fn random_pmf(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// max over centred f of ½ψ_a(f)²/ψ_b(f²): random directions, then gradient ascent on
/// ψ_a(g) − ψ_b(g) − ½ψ_b(g²) from the best direction.
fn numerical_dhat(rng: &mut ChaCha8Rng, a: &[f64], b: &[f64]) -> f64 {
    let k = a.len();
    let score = |f: &[f64]| {
        let m: f64 = f.iter().zip(b).map(|(x, p)| x * p).sum();
        let num: f64 = f.iter().zip(a).map(|(x, p)| (x - m) * p).sum();
        let den: f64 = f.iter().zip(b).map(|(x, p)| (x - m) * (x - m) * p).sum();
        if den > 0.0 {
            (0.5 * num * num / den, num / den, m)
        } else {
            (0.0, 0.0, m)
        }
    };
    let mut best = (f64::NEG_INFINITY, vec![0.0; k]);
    for _ in 0..100_000 {
        let f: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = score(&f).0;
        if s > best.0 {
            best = (s, f);
        }
    }
    let (_, theta, m) = score(&best.1);
    let mut g: Vec<f64> = best.1.iter().map(|x| theta * (x - m)).collect();
    let step = 1.0 / b.iter().copied().fold(0.0, f64::max);
    for _ in 0..200_000 {
        let grad: Vec<f64> = (0..k).map(|i| a[i] - b[i] - b[i] * g[i]).collect();
        if grad.iter().all(|v| v.abs() < 1e-15) {
            break;
        }
        for i in 0..k {
            g[i] += step * grad[i];
        }
    }
    (0..k).map(|i| (a[i] - b[i]) * g[i] - 0.5 * b[i] * g[i] * g[i]).sum()
}

fn c10_dhat() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut self_max = 0.0f64;
    let mut gap = 0.0f64;
    for _ in 0..20 {
        let k = rng.random_range(2..=5);
        let (a, b) = (random_pmf(&mut rng, k), random_pmf(&mut rng, k));
        self_max = self_max.max(dhat(&DiscreteDistributionPair::new(b.clone(), b.clone())?)?);
        let closed = dhat(&DiscreteDistributionPair::new(a.clone(), b.clone())?)?;
        gap = gap.max((closed - numerical_dhat(&mut rng, &a, &b)).abs());
    }
    let mut kl_gap = 0.0f64;
    let mut n_kl = 0;
    while n_kl < 20 {
        let k = rng.random_range(2..=5);
        let b = random_pmf(&mut rng, k);
        let w: Vec<f64> = b.iter().map(|p| p * rng.random_range(-0.09f64..0.09).exp()).collect();
        let z: f64 = w.iter().sum();
        let a: Vec<f64> = w.iter().map(|v| v / z).collect();
        let pair = DiscreteDistributionPair::new(a.clone(), b.clone())?;
        let f_star = pair.log_likelihood_ratio()?;
        if f_star.iter().any(|v| v.abs() >= 0.1) || f_star.iter().all(|v| *v == 0.0) {
            continue;
        }
        let kl: f64 = a.iter().zip(&b).map(|(x, y)| x * (x / y).ln()).sum();
        kl_gap = kl_gap.max((dhat(&pair)? - kl).abs() / kl);
        n_kl += 1;
    }
    let pass = self_max == 0.0 && gap < 1e-6 && kl_gap < 0.05;
    Ok((
        pass,
        format!(
            "max D(psi||psi) = {self_max:e}; closed vs numerical max gap {gap:.1e} on 20 pairs; \
             max |D - KL|/KL {kl_gap:.4} on 20 pairs with |f*| < 0.1"
        ),
    ))
}

fn c11_determinism() -> Outcome {
    let args = FigureArgs {
        model: load_model("queue")?,
        input: load_input("three-state", 0.4)?,
        gamma: None,
        epsilons: None,
        lags: (-5, 5),
        grid: 1024,
        seed: SEED,
        steps: T_MC,
    };
    let ids = [FigureId::MeanQueue, FigureId::PiQ, FigureId::CrossPsd, FigureId::MiBound, FigureId::Coupling];
    let mut files = 0;
    let mut differ = Vec::new();
    for id in ids {
        let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
        let pa = cmd_figure(id, &args, a.path())?;
        cmd_figure(id, &args, b.path())?;
        for p in pa {
            let name = p.file_name().ok_or("unnamed output")?;
            files += 1;
            if std::fs::read(&p)? != std::fs::read(b.path().join(name))? {
                differ.push(name.to_string_lossy().into_owned());
            }
        }
    }
    Ok((differ.is_empty(), format!("{files} files from 5 figures, {} differ {:?}", differ.len(), differ)))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("fundamental-matrix identity", c1_fundamental_identity),
        ("zero-input degeneracies", c2_zero_input),
        ("third-order residual ratios", c3_residual_ratios),
        ("mean queue error at eps = 1", c4_mean_queue),
        ("pi^Q quality split by gamma", c5_pi_q_split),
        ("cross-PSD near-exactness", c6_cross_psd),
        ("coupling slope", c7_coupling_slope),
        ("martingale-difference suite", c8_martingale_suite),
        ("MI bound", c9_mi_bound),
        ("D-hat properties", c10_dhat),
        ("determinism", c11_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {n} {name}: {detail} ({:.1}s)", start.elapsed().as_secs_f64());
        if !pass {
            failed.push(n);
        }
    }
    println!("acceptance: {}/{} criteria pass", criteria.len() - failed.len(), criteria.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
