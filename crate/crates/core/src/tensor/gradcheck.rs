//! Central finite-difference gradient checking.
//!
//! The numerical side only evaluates forward values on fresh tapes with
//! constant inputs, so it shares nothing with the backward rules it checks.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Default probe step.
pub const FD_STEP: f64 = 1e-4;

/// Denominator floor for the relative error, so entries whose true gradient
/// is numerically zero are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

impl GradReport {
    fn update(&mut self, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.max_abs_err = self.max_abs_err.max(abs);
        self.max_rel_err = self.max_rel_err.max(rel);
        self.checked += 1;
    }

    pub fn merge(&mut self, other: GradReport) {
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.checked += other.checked;
    }
}

/// Analytic gradient of `f` w.r.t. each input.
pub fn analytic_gradients<F>(inputs: &[Tensor], f: &F) -> Result<(f64, Vec<Tensor>)>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((loss.item(), grads))
}

/// Central-difference gradient of `f` w.r.t. each input.
pub fn numeric_gradients<F>(inputs: &[Tensor], f: &F, step: f64) -> Result<Vec<Tensor>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |ins: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + step;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = x - step;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = x;
            g.data_mut()[j] = (fp - fm) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Compare analytic and central-difference gradients of a scalar function.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, step: f64) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let (_, analytic) = analytic_gradients(inputs, &f)?;
    let numeric = numeric_gradients(inputs, &f, step)?;
    Ok(compare(&analytic, &numeric))
}

pub fn compare(analytic: &[Tensor], numeric: &[Tensor]) -> GradReport {
    let mut report = GradReport::default();
    for (a, n) in analytic.iter().zip(numeric) {
        for (x, y) in a.data().iter().zip(n.data()) {
            report.update(*x, *y);
        }
    }
    report
}
