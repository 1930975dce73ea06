//! Central finite-difference verification of tape gradients.
//!
//! Every differentiable block in this crate is tested against the same
//! oracle: perturb one scalar at a time by ±h and compare the centered
//! difference quotient against the analytic gradient from
//! [`Tape::backward`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::fmath;
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Relative-error acceptance for gradient comparisons.
#[derive(Debug, Clone, Copy)]
pub struct RelTol {
    /// Maximum allowed |analytic − numeric| / max(|analytic|, |numeric|, floor).
    pub tol: f64,
    /// Denominator floor: keeps near-zero gradients from demanding
    /// impossible absolute precision.
    pub floor: f64,
    /// Base finite-difference step; scaled by max(1, |x|) per coordinate.
    pub step: f64,
}

impl Default for RelTol {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            floor: 1e-3,
            step: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = fmath::abs(analytic).max(fmath::abs(numeric)).max(floor);
    fmath::abs(analytic - numeric) / denom
}

/// Checks gradients w.r.t. every parameter in `params` and every tensor in
/// `inputs`. The closure must rebuild the same scalar loss from scratch each
/// call (it runs 1 + 2·n_coords times). Panics on the first violation.
pub fn check<F>(params: &mut ParamSet, inputs: &[Tensor], tol: RelTol, build: F) -> GradReport
where
    F: Fn(&mut Tape, &ParamSet, &[Var]) -> Var,
{
    let eval = |params: &ParamSet, inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let root = build(&mut tape, params, &vars);
        tape.value(root).item()
    };

    // analytic pass
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let root = build(&mut tape, params, &vars);
    assert!(
        tape.value(root).len() == 1,
        "gradient check root must be scalar"
    );
    assert!(tape.value(root).item().is_finite(), "loss is not finite");
    let grads = tape.backward(root);
    let param_grads = tape.param_grads(params, &grads);

    let mut report = GradReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };

    let record = |report: &mut GradReport, name: &str, j: usize, analytic: f64, numeric: f64| {
        let e = rel_err(analytic, numeric, tol.floor);
        report.checked += 1;
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst = format!("{name}[{j}] analytic={analytic:.8e} numeric={numeric:.8e}");
        }
        assert!(
            e <= tol.tol,
            "gradient mismatch at {name}[{j}]: analytic={analytic:.10e} numeric={numeric:.10e} rel={e:.3e}"
        );
    };

    // finite differences over parameters
    for id in params.ids().collect::<Vec<_>>() {
        let n = params.get(id).len();
        let name = params.entry(id).name.clone();
        for j in 0..n {
            let orig = params.get(id).data()[j];
            let h = tol.step * orig.abs().max(1.0);
            params.get_mut(id).data_mut()[j] = orig + h;
            let fp = eval(params, inputs);
            params.get_mut(id).data_mut()[j] = orig - h;
            let fm = eval(params, inputs);
            params.get_mut(id).data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = param_grads[id.0].data()[j];
            record(&mut report, &name, j, analytic, numeric);
        }
    }

    // finite differences over inputs
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let n = work[i].len();
        let zero;
        let g = match grads.wrt(*var) {
            Some(g) => g,
            None => {
                zero = Tensor::zeros(work[i].dims());
                &zero
            }
        };
        let g = g.clone();
        for j in 0..n {
            let orig = work[i].data()[j];
            let h = tol.step * orig.abs().max(1.0);
            work[i].data_mut()[j] = orig + h;
            let fp = eval(params, &work);
            work[i].data_mut()[j] = orig - h;
            let fm = eval(params, &work);
            work[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            record(&mut report, &format!("input{i}"), j, g.data()[j], numeric);
        }
    }

    report
}

/// Gradient check against inputs only (no parameters involved).
pub fn check_inputs<F>(inputs: &[Tensor], tol: RelTol, build: F) -> GradReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut empty = ParamSet::new();
    check(&mut empty, inputs, tol, |tape, _, vars| build(tape, vars))
}
