//! Data behind the queue figures: mean queue, π^Q, S_{S,ζ}, the information bound and
//! the coupling rate.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use nalgebra::DVector;
use rayon::prelude::*;

use perturbmc_core::controlled::InputSpec;
use perturbmc_core::oracle::{build_joint, exact_marginal, exact_psd};
use perturbmc_core::second_order::SecondOrderContext;
use perturbmc_core::simulator::{coupling_rate, exact_mismatch_probability};
use perturbmc_core::spectral::{cross_psd_gamma_zeta_closed, cross_psd_gamma_zeta_lag};
use perturbmc_core::timing::{mean_queue, queue_marginal, ChannelSeries};

use crate::config::{Model, RawInput};
use crate::output::{write_tables, RunParams, Table};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FigureId {
    MeanQueue,
    PiQ,
    CrossPsd,
    MiBound,
    Coupling,
}

impl FigureId {
    pub fn name(self) -> &'static str {
        match self {
            FigureId::MeanQueue => "mean-queue",
            FigureId::PiQ => "pi-q",
            FigureId::CrossPsd => "cross-psd",
            FigureId::MiBound => "mi-bound",
            FigureId::Coupling => "coupling",
        }
    }

    fn default_epsilons(self) -> Vec<f64> {
        match self {
            FigureId::MeanQueue | FigureId::MiBound => EPS2_GRID.iter().map(|e| e.sqrt()).collect(),
            FigureId::PiQ => vec![1.0],
            FigureId::CrossPsd => vec![0.3, 0.7, 1.0],
            FigureId::Coupling => vec![0.05, 0.1, 0.2],
        }
    }
}

/// ε² values swept by the ε² figures.
pub const EPS2_GRID: [f64; 6] = [0.01, 0.05, 0.1, 0.2, 0.5, 1.0];
/// π^Q fits with a larger max error than this are marked poor.
pub const POOR_FIT: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct FigureArgs {
    pub model: Model,
    pub input: RawInput,
    /// Explicit --gamma; the bound figure otherwise sweeps 0.2, 0.4, 0.8.
    pub gamma: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
    pub lags: (i64, i64),
    pub grid: usize,
    pub seed: u64,
    pub steps: usize,
}

fn context(a: &FigureArgs, input: &RawInput, eps: f64) -> Result<(SecondOrderContext, InputSpec), CliError> {
    let spec = input.build(eps)?;
    Ok((SecondOrderContext::new(a.model.family().clone(), spec.clone())?, spec))
}

fn eps_label(e: f64) -> String {
    format!("eps{e}")
}

pub fn cmd_figure(id: FigureId, a: &FigureArgs, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let eps = a.epsilons.clone().unwrap_or_else(|| id.default_epsilons());
    if let Some(bad) = eps.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(CliError::Validation(format!("epsilon {bad} outside [0, 1]")));
    }
    let mut params = RunParams {
        model: a.model.to_string(),
        input: a.input.label.clone(),
        gamma: a.input.gamma,
        epsilon: eps.clone(),
        lags: a.lags,
        grid: a.grid,
        seed: a.seed,
        steps: 0,
    };
    let tables = match id {
        FigureId::MeanQueue => vec![mean_queue_table(a, &eps)?],
        FigureId::PiQ => eps.iter().map(|&e| pi_q_table(a, e)).collect::<Result<_, _>>()?,
        FigureId::CrossPsd => eps.iter().map(|&e| cross_psd_table(a, e)).collect::<Result<_, _>>()?,
        FigureId::MiBound => {
            let gammas = match (a.gamma, a.input.gamma) {
                (Some(g), _) => vec![g],
                (None, Some(_)) => vec![0.2, 0.4, 0.8],
                (None, None) => vec![],
            };
            if gammas.len() > 1 {
                params.gamma = None;
                params.input = "three-state gamma in {0.2, 0.4, 0.8}".into();
            }
            if gammas.is_empty() {
                vec![mi_bound_table(a, &a.input, &eps, "mi_bound".into())?]
            } else {
                gammas
                    .iter()
                    .map(|&g| mi_bound_table(a, &RawInput::three_state(g)?, &eps, format!("mi_bound_gamma{g}")))
                    .collect::<Result<_, _>>()?
            }
        }
        FigureId::Coupling => {
            params.steps = a.steps;
            vec![coupling_table(a, &eps)?]
        }
    };
    write_tables(out, id.name(), &params, &tables)
}

fn mean_queue_table(a: &FigureArgs, eps: &[f64]) -> Result<Table, CliError> {
    a.model.queue()?;
    let rows: Result<Vec<Vec<f64>>, CliError> = eps
        .par_iter()
        .map(|&e| {
            let (ctx, spec) = context(a, &a.input, e)?;
            let jc = build_joint(a.model.family(), &spec)?;
            let exact = mean_queue(exact_marginal(&jc).vector());
            let approx = mean_queue(&ctx.steady_state_mean_approx().values);
            Ok(vec![e * e, e, exact, approx, (approx - exact).abs() / exact])
        })
        .collect();
    let mut t = Table::new("mean_queue", &["eps2", "epsilon", "exact", "approx", "rel_error"]);
    for r in rows? {
        t.push(r);
    }
    Ok(t)
}

fn pi_q_table(a: &FigureArgs, e: f64) -> Result<Table, CliError> {
    let q = a.model.queue()?;
    let (ctx, spec) = context(a, &a.input, e)?;
    let jc = build_joint(q.family(), &spec)?;
    let exact = queue_marginal(exact_marginal(&jc).vector());
    let approx = queue_marginal(&ctx.steady_state_mean_approx().values);
    let mut t = Table::new(format!("pi_q_{}", eps_label(e)), &["n", "exact", "approx", "abs_error"]);
    let mut worst = 0.0f64;
    for (n, (x, y)) in exact.iter().zip(&approx).enumerate() {
        worst = worst.max((x - y).abs());
        t.push(vec![n as f64, *x, *y, (x - y).abs()]);
    }
    t.note("table_epsilon", e);
    t.note("max_abs_error", format!("{worst:e}"));
    t.note("fit", if worst < POOR_FIT { "good" } else { "poor" });
    Ok(t)
}

fn cross_psd_table(a: &FigureArgs, e: f64) -> Result<Table, CliError> {
    let q = a.model.queue()?;
    let (ctx, spec) = context(a, &a.input, e)?;
    let jc = build_joint(q.family(), &spec)?;
    let f = q.departure_observable();
    let approx = match cross_psd_gamma_zeta_closed(&ctx, a.grid) {
        Ok(s) => s,
        Err(_) => cross_psd_gamma_zeta_lag(&ctx, a.grid)?,
    };
    let exact = exact_psd(&jc, &jc.lift(&f), jc.zeta(), a.grid)?;
    let fc = f.map(|v| nalgebra::Complex::new(v, 0.0));
    let mut t = Table::new(
        format!("cross_psd_{}", eps_label(e)),
        &["theta", "exact_re", "exact_im", "approx_re", "approx_im"],
    );
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for ((theta, ex), ap) in exact.thetas().iter().zip(exact.values()).zip(approx.values()) {
        let x = ex[(0, 0)];
        let y = (fc.transpose() * ap)[(0, 0)];
        worst = worst.max((x - y).norm());
        scale = scale.max(x.norm());
        t.push(vec![*theta, x.re, x.im, y.re, y.im]);
    }
    t.note("table_epsilon", e);
    t.note("observable", "departure indicator s = 1");
    t.note("max_rel_error", format!("{:e}", worst / scale));
    Ok(t)
}

fn mi_bound_table(a: &FigureArgs, input: &RawInput, eps: &[f64], name: String) -> Result<Table, CliError> {
    let q = a.model.queue()?;
    let f: DVector<f64> = q.departure_observable();
    let n_range = a.lags.0..=a.lags.1;
    let rows: Result<Vec<Vec<f64>>, CliError> = eps
        .par_iter()
        .map(|&e| {
            let (ctx, spec) = context(a, input, e)?;
            let jc = build_joint(q.family(), &spec)?;
            let ap = ChannelSeries::approx(&ctx, &f, n_range.clone())?.bound(n_range.clone())?;
            let ex = ChannelSeries::exact(&jc, &ctx, &f, n_range.clone()).bound(n_range.clone())?;
            Ok(vec![e * e, e, ap.value, ex.value, ap.argmax_n as f64, ex.argmax_n as f64])
        })
        .collect();
    let mut t = Table::new(name, &["eps2", "epsilon", "bound_approx", "bound_exact", "argmax_approx", "argmax_exact"]);
    if let Some(g) = input.gamma {
        t.note("gamma", g);
    }
    for r in rows? {
        t.push(r);
    }
    Ok(t)
}

fn coupling_table(a: &FigureArgs, eps: &[f64]) -> Result<Table, CliError> {
    let spec = a.input.build(eps.first().copied().unwrap_or(0.0))?;
    let fam = a.model.family();
    let table = coupling_rate(fam, &spec, eps, a.steps, a.seed)?;
    let exact: Result<Vec<f64>, CliError> = eps
        .par_iter()
        .map(|&e| Ok(exact_mismatch_probability(fam, &spec.with_epsilon(e)?)?))
        .collect();
    let mut t = Table::new("coupling", &["epsilon", "rate", "binomial_se", "batch_se", "exact"]);
    for (r, x) in table.rows.iter().zip(exact?) {
        t.push(vec![r.epsilon, r.rate, r.binomial_se, r.batch_se, x]);
    }
    t.note("loglog_slope", table.slope.map_or("undefined".to_string(), |s| format!("{s}")));
    Ok(t)
}
