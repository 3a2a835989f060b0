//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ParamStore;

/// Settings for [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Probe step for the central difference. The default sits near the
    /// cube root of f64 epsilon, where truncation and roundoff error balance.
    pub probe_eps: f64,
    /// Denominator floor in the relative error, so near-zero gradients are
    /// compared absolutely.
    pub denom_floor: f64,
    /// Check at most this many coordinates per parameter (evenly strided).
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            probe_eps: 1e-5,
            denom_floor: 1e-5,
            max_coords_per_param: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter and coordinate where the maximum was reached.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates skipped because a probe flipped some ReLU input's sign.
    pub skipped_kinks: usize,
}

/// A scalar objective that can be recorded at any precision.
pub trait Objective {
    fn record<'a, S: Scalar>(&self, tape: &mut Tape<'a, S>, params: &'a ParamStore<S>) -> Result<Var>;
}

/// Compares tape gradients of `objective` with central differences.
///
/// Gradients are computed in the store's own precision; finite differences
/// always run in `f64` on a widened copy of the parameters, so an `f32` store
/// is checked against a 64-bit reference.
pub fn grad_check<T: Scalar, O: Objective>(
    objective: &O,
    params: &ParamStore<T>,
    config: GradCheckConfig,
) -> Result<GradCheckReport> {
    check_with(
        params,
        config,
        |tape, p| objective.record(tape, p),
        |tape, p| objective.record(tape, p),
    )
}

/// [`grad_check`] for a plain 64-bit closure.
pub fn grad_check_fn<F>(params: &ParamStore<f64>, config: GradCheckConfig, forward: F) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Tape<'a, f64>, &'a ParamStore<f64>) -> Result<Var>,
{
    check_with(params, config, &forward, &forward)
}

fn check_with<T, A, N>(
    params: &ParamStore<T>,
    config: GradCheckConfig,
    analytic_fn: A,
    forward: N,
) -> Result<GradCheckReport>
where
    T: Scalar,
    A: for<'a> Fn(&mut Tape<'a, T>, &'a ParamStore<T>) -> Result<Var>,
    N: for<'a> Fn(&mut Tape<'a, f64>, &'a ParamStore<f64>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let loss = analytic_fn(&mut tape, params)?;
        check_finite(tape.value(loss).data()[0].to_f64_lossy())?;
        tape.backward(loss)?
    };

    let wide: ParamStore<f64> = params.cast();
    let base_pattern = {
        let mut tape = Tape::new();
        let loss = forward(&mut tape, &wide)?;
        check_finite(tape.value(loss).data()[0])?;
        tape.relu_pattern()
    };

    let names: Vec<String> = wide.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
    };
    let h = config.probe_eps;
    for name in &names {
        let len = wide.get(name)?.len();
        let stride = match config.max_coords_per_param {
            Some(m) if m > 0 && len > m => len.div_ceil(m),
            _ => 1,
        };
        let zeros = vec![T::zero(); len];
        let grad = analytic.get(name).unwrap_or(&zeros);
        for idx in (0..len).step_by(stride) {
            let mut probe = wide.clone();
            let orig = probe.get(name)?.data()[idx];
            probe.get_mut(name)?.data_mut()[idx] = orig + h;
            let (plus, pat_plus) = eval(&forward, &probe)?;
            probe.get_mut(name)?.data_mut()[idx] = orig - h;
            let (minus, pat_minus) = eval(&forward, &probe)?;
            if pat_plus != base_pattern || pat_minus != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad[idx].to_f64_lossy();
            let denom = a.abs().max(numeric.abs()).max(config.denom_floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(report)
}

fn eval<F>(forward: &F, params: &ParamStore<f64>) -> Result<(f64, Vec<bool>)>
where
    F: for<'a> Fn(&mut Tape<'a, f64>, &'a ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = forward(&mut tape, params)?;
    let v = tape.value(loss).data()[0];
    check_finite(v)?;
    Ok((v, tape.relu_pattern()))
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("loss evaluated to {v}")))
    }
}
