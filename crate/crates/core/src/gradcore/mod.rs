//! Numerical substrate: dense matrices, a reverse-mode tape, MLP helpers,
//! the Gaussian log-density, RMSprop and a finite-difference gradient check.

mod matrix;
pub mod nn;
mod params;
mod rmsprop;
mod tape;

pub use matrix::Matrix;
pub use nn::{forward_mlp, init_mlp, mlp, mlp_param_count, MlpOutput};
pub use params::{Param, ParamStore};
pub use rmsprop::RmspropState;
pub use tape::{Activation, Gradients, Tape, Var};

use crate::error::{shape_err, Result};

/// Log-density of a diagonal Gaussian together with the tape that computed it.
#[derive(Debug)]
pub struct LogDensity {
    pub logp: f64,
    pub tape: Tape,
    pub output: Var,
    pub z: Var,
    pub mu: Var,
    pub sigma: Var,
}

/// `sum_k [ -ln(2 pi)/2 - ln sigma_k - (z_k - mu_k)^2 / (2 sigma_k^2) ]`.
pub fn gaussian_logpdf(z: &[f64], mu: &[f64], sigma: &[f64]) -> Result<LogDensity> {
    if mu.len() != z.len() || sigma.len() != z.len() {
        return Err(shape_err(
            "gaussian_logpdf",
            format!("three vectors of length {}", z.len()),
            format!("mu {}, sigma {}", mu.len(), sigma.len()),
        ));
    }
    let mut tape = Tape::new();
    let zv = tape.input(Matrix::row_vector(z));
    let mv = tape.input(Matrix::row_vector(mu));
    let sv = tape.input(Matrix::row_vector(sigma));
    let out = tape.gaussian_logpdf(zv, mv, sv)?;
    Ok(LogDensity {
        logp: tape.scalar(out),
        tape,
        output: out,
        z: zv,
        mu: mv,
        sigma: sv,
    })
}

/// Compares reverse-mode gradients of a scalar loss with central differences.
///
/// `loss_fn` records the loss on a fresh tape and returns it with the `1 x 1`
/// output handle. The error for each parameter tensor is
/// `|analytic - numeric| / max(1e-8, |numeric|)` with Euclidean norms over the
/// tensor; the maximum over tensors is returned.
pub fn finite_diff_check<F>(loss_fn: F, params: &ParamStore, step: f64) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(Tape, Var)>,
{
    finite_diff_check_filtered(loss_fn, params, step, |_| true)
}

/// [`finite_diff_check`] restricted to parameters whose name satisfies `include`.
pub fn finite_diff_check_filtered<F, P>(loss_fn: F, params: &ParamStore, step: f64, include: P) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(Tape, Var)>,
    P: Fn(&str) -> bool,
{
    let mut analytic = params.clone();
    analytic.zero_grads();
    let (mut tape, out) = loss_fn(&analytic)?;
    tape.backward(out, &[1.0], &mut analytic)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let (tape, out) = loss_fn(store)?;
        Ok(tape.scalar(out))
    };

    let mut worst = 0.0f64;
    let mut probe = params.clone();
    let names: Vec<String> = params.names().filter(|n| include(n)).map(str::to_string).collect();
    for name in names {
        let base = params.value(&name)?.clone();
        let grad = analytic.grad(&name)?.clone();
        let mut diff_sq = 0.0;
        let mut num_sq = 0.0;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus.as_mut_slice()[i] += step;
            probe.set_value(&name, plus)?;
            let fp = eval(&probe)?;
            let mut minus = base.clone();
            minus.as_mut_slice()[i] -= step;
            probe.set_value(&name, minus)?;
            let fm = eval(&probe)?;
            let numeric = (fp - fm) / (2.0 * step);
            let d = grad.as_slice()[i] - numeric;
            diff_sq += d * d;
            num_sq += numeric * numeric;
        }
        probe.set_value(&name, base)?;
        let rel = diff_sq.sqrt() / num_sq.sqrt().max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
