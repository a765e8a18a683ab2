//! Central finite-difference verification of analytic gradients.

use super::linalg::Mat;
use super::net::FeedForwardNet;
use crate::error::{Error, Result};

/// Relative-error denominators never drop below this, so gradients that are
/// zero up to round-off do not register as failures.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate holding `max_rel_error`.
    pub worst: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because the ±h probe straddles a kink.
    pub nondifferentiable: Vec<usize>,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` with central differences of `f` at `x`.
///
/// `regime`, when given, labels the smooth piece of a piecewise function
/// (ReLU sign pattern, sort order). A coordinate whose `+h` and `-h` probes
/// land in different pieces is reported as non-differentiable and excluded.
pub fn check_gradient<F, R>(
    f: F,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    tol: f64,
    regime: Option<R>,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
    R: Fn(&[f64]) -> Vec<u64>,
{
    if !(h > 0.0) || !(tol > 0.0) {
        return Err(Error::invalid(format!("h and tol must be positive (h={h}, tol={tol})")));
    }
    if analytic.len() != x.len() {
        return Err(Error::dims("analytic gradient", x.len(), analytic.len()));
    }
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        nondifferentiable: Vec::new(),
        tol,
        passed: true,
    };
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        let rp = regime.as_ref().map(|r| r(&probe));
        probe[i] = x[i] - h;
        let fm = f(&probe);
        let rm = regime.as_ref().map(|r| r(&probe));
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at coordinate {i}: f(+h)={fp}, f(-h)={fm}"
            )));
        }
        if rp != rm {
            report.nondifferentiable.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some(i);
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

/// Checks the reverse-mode gradient of `loss_fn ∘ net` with respect to every
/// parameter followed by every input coordinate (report indices run over that
/// concatenation). `loss_fn` returns the loss and its gradient with respect to
/// the network output.
pub fn finite_diff_check<L>(net: &FeedForwardNet, x: &[f64], loss_fn: L, h: f64, tol: f64) -> Result<GradCheckReport>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n_p = net.num_params();
    let row = Mat::row_vector(x);
    let cache = net.forward_batch(&row)?;
    let (loss, up) = loss_fn(cache.output().as_slice());
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss} at the check point")));
    }
    let mut grads = vec![0.0; n_p];
    let gx = net.backward_batch(&cache, &Mat::row_vector(&up), &mut grads)?;
    grads.extend_from_slice(gx.as_slice());

    let mut point = net.params().to_vec();
    point.extend_from_slice(x);
    let split = |v: &[f64]| {
        let mut n = net.clone();
        n.params_mut().copy_from_slice(&v[..n_p]);
        (n, Mat::row_vector(&v[n_p..]))
    };
    let eval = |v: &[f64]| {
        let (n, xx) = split(v);
        n.predict(&xx).map(|y| loss_fn(y.as_slice()).0).unwrap_or(f64::NAN)
    };
    let pattern = |v: &[f64]| {
        let (n, xx) = split(v);
        n.forward_batch(&xx)
            .map(|c| c.relu_pattern().into_iter().map(u64::from).collect())
            .unwrap_or_default()
    };
    check_gradient(eval, &point, &grads, h, tol, Some(pattern))
}
