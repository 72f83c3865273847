//! Structural checks on a model and input before any approximation is run.

use perturbmc_core::markov::{stationary_distribution, StochasticMatrix};

use crate::config::{load_model, Model, RawInput};
use crate::{Check, CliError};

pub fn cmd_validate(model_arg: &str, input: &RawInput, epsilon: f64) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();
    let model = match load_model(model_arg) {
        Ok(m) => {
            checks.push(Check::new("model", true, m.to_string()));
            Some(m)
        }
        Err(CliError::Io(e)) => return Err(CliError::Io(e)),
        Err(e) => {
            checks.push(Check::new("model", false, e.to_string()));
            None
        }
    };
    if let Some(m) = &model {
        model_checks(m, &mut checks);
    }
    input_checks(input, epsilon, model.as_ref(), &mut checks);
    Ok(checks)
}

fn model_checks(m: &Model, checks: &mut Vec<Check>) {
    let fam = m.family();
    let flags = fam.p0().flags();
    let detail = if flags.irreducible {
        "irreducible".to_string()
    } else if flags.unichain {
        let pi = stationary_distribution(fam.p0()).ok();
        let transient = pi.map_or(0, |p| p.as_slice().iter().filter(|v| **v == 0.0).count());
        format!("one closed class, {transient} transient state(s)")
    } else {
        "more than one closed class".to_string()
    };
    checks.push(Check::new("irreducible (single recurrent class)", flags.unichain, detail));
    checks.push(Check::new("aperiodic", flags.aperiodic, if flags.aperiodic { "period 1" } else { "periodic" }));
    let row = |m: &nalgebra::DMatrix<f64>| m.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
    let e = row(fam.e());
    let w = row(fam.w());
    checks.push(Check::new("E 1 = 0", e < 1e-10, format!("max |row sum| {e:e}")));
    checks.push(Check::new("W 1 = 0", w < 1e-10, format!("max |row sum| {w:e}")));
}

fn input_checks(input: &RawInput, epsilon: f64, model: Option<&Model>, checks: &mut Vec<Check>) {
    checks.push(Check::new("input", true, input.label.clone()));
    let k = match StochasticMatrix::from_rows(&input.k) {
        Ok(k) => k,
        Err(e) => {
            checks.push(Check::new("input chain row-stochastic", false, e.to_string()));
            return;
        }
    };
    let ergodic = k.flags().ergodic();
    checks.push(Check::new("input chain ergodic", ergodic, format!("{:?}", k.flags())));
    if k.dim() != input.states.len() {
        checks.push(Check::new(
            "input alphabet",
            false,
            format!("{} states for a {}-state chain", input.states.len(), k.dim()),
        ));
        return;
    }
    let bounded = input.states.iter().all(|z| z.abs() <= 1.0);
    checks.push(Check::new("|z| <= 1", bounded, format!("{:?}", input.states)));
    if let Ok(mu) = stationary_distribution(&k) {
        let mean: f64 = mu.as_slice().iter().zip(&input.states).map(|(p, z)| p * z).sum();
        checks.push(Check::new("zero-mean input", mean.abs() < 1e-12, format!("mean {mean:e}")));
    }
    let eps_ok = (0.0..=1.0).contains(&epsilon);
    checks.push(Check::new("epsilon in [0, 1]", eps_ok, format!("epsilon {epsilon}")));
    if let Some(m) = model {
        let fam = m.family();
        let bad: Vec<f64> = input.states.iter().map(|z| epsilon * z).filter(|z| fam.evaluate(*z).is_err()).collect();
        checks.push(Check::new(
            "P_zeta stochastic on the input alphabet",
            bad.is_empty(),
            if bad.is_empty() { "all input values admissible".to_string() } else { format!("fails at {bad:?}") },
        ));
    }
}
