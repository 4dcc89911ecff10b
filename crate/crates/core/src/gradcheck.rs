//! Central-difference gradient checking.

use crate::autodiff::{Tape, Var};
use crate::error::TensorError;
use crate::tensor::{Float, Tensor};

/// Worst coordinate found by [`finite_diff_check_many`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: Float,
    /// Largest `|analytic - numeric|` over all coordinates.
    pub max_abs_error: Float,
    /// `(input index, flat element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: Float,
    pub numeric: Float,
    pub coordinates: usize,
    /// Largest relative error among coordinates where `max(|a|, |b|)` is at
    /// least [`RESOLVED_GRADIENT`].
    pub max_rel_error_resolved: Float,
}

/// Gradient magnitude below which central differences at `h = 1e-5` cannot
/// resolve a relative error of 1e-4 in 64-bit arithmetic: the rounding noise
/// of `(f(x+h) - f(x-h)) / 2h` is about `1e-16 |f| / h`.
pub const RESOLVED_GRADIENT: Float = 1e-6;

impl GradCheckReport {
    /// The acceptance rule: relative error below `rtol` wherever the gradient
    /// is resolvable, and absolute error below `atol` everywhere.
    pub fn passes(&self, rtol: Float, atol: Float) -> bool {
        self.max_rel_error_resolved < rtol && self.max_abs_error < atol
    }
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate of
/// `x`. Relative error uses the denominator `max(|a|, |b|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: Float) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// [`finite_diff_check`] over several inputs at once.
pub fn finite_diff_check_many<F>(f: F, inputs: &[Tensor], h: Float) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |xs: &[Tensor]| -> Result<Float, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        max_rel_error_resolved: 0.0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned();
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            work[k].data_mut()[i] = x0 + h;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = x0 - h;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = x0;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[i]);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.coordinates += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if a.abs().max(numeric.abs()) >= RESOLVED_GRADIENT {
                report.max_rel_error_resolved = report.max_rel_error_resolved.max(rel);
            }
            if rel > report.max_rel_error || report.coordinates == 1 {
                report.max_rel_error = rel;
                report.worst = (k, i);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
