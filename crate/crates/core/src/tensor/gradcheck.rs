//! Central finite-difference verification of reverse-mode gradients.
//!
//! Used by the test suite as the independent oracle for every differentiable
//! op and for whole training objectives. The convention throughout is
//! relative error `|analytic - numeric| / max(1, |numeric|)`.

use super::params::ParamSet;
use super::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn ok(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compares `analytic` (aligned with `params`) against central finite
/// differences of `loss` over every coordinate of every parameter.
pub fn check_param_grads(
    params: &ParamSet,
    analytic: &[Tensor],
    step: f64,
    loss: impl Fn(&ParamSet) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let mut work = params.clone();
    for pid in params.ids() {
        let n = params.get(pid).len();
        for k in 0..n {
            let orig = params.get(pid).data()[k];
            work.get_mut(pid).data_mut()[k] = orig + step;
            let up = loss(&work);
            work.get_mut(pid).data_mut()[k] = orig - step;
            let down = loss(&work);
            work.get_mut(pid).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pid.index()].data()[k];
            let rel = (a - numeric).abs() / f64::max(1.0, numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = params.name(pid).to_string();
                report.worst_index = k;
            }
        }
    }
    report
}

/// One-stop check: runs `loss` once for the analytic gradient and then
/// finite-differences it, where `loss` both builds the graph and returns
/// `(loss value, per-parameter gradients)` when asked for gradients.
pub fn check_objective(
    params: &ParamSet,
    step: f64,
    grads: impl Fn(&ParamSet) -> (f64, Vec<Tensor>),
    loss: impl Fn(&ParamSet) -> f64,
) -> GradCheckReport {
    let (_, analytic) = grads(params);
    check_param_grads(params, &analytic, step, loss)
}
