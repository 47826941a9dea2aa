//! Central finite-difference gradient checking.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors.
pub const REL_FLOOR: f64 = 1e-8;

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// `(input index, flat element index)` where the maximum was seen.
    pub worst: (usize, usize),
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    /// Number of scalar entries compared.
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of `f` with respect to every entry of `inputs`
/// against central differences `(f(x+h) − f(x−h)) / 2h`.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, floor: f64, f: F) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        if out.numel() != 1 {
            return Err(Error::Contract("gradient check needs a scalar function".into()));
        }
        Ok(out.item())
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut perturbed: Vec<Tensor> = inputs.to_vec();
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        for (ei, &a) in analytic.iter().enumerate() {
            let orig = inputs[ti].data()[ei];
            perturbed[ti].data_mut()[ei] = orig + step;
            let up = eval(&perturbed)?;
            perturbed[ti].data_mut()[ei] = orig - step;
            let down = eval(&perturbed)?;
            perturbed[ti].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(a, numeric, floor);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (ti, ei);
                report.worst_values = (a, numeric);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
