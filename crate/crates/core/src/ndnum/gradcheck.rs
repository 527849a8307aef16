use super::Mlp;
use crate::error::{Error, Result};

/// `|a − b| / max(|a|, |b|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Largest relative error between the analytic parameter gradient of
/// `network` at `input` and a central finite difference with step `epsilon`.
pub fn finite_diff_check(network: &Mlp, input: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::precondition(format!(
            "finite-difference step must lie in (0, 1e-2], got {epsilon}"
        )));
    }
    let (_, analytic) = network.loss_and_grad(input)?;
    let base = network.params();
    let mut probe = network.clone();
    let mut params = base.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        params[i] = base[i] + epsilon;
        probe.set_params(&params)?;
        let up = probe.loss(input)?;
        params[i] = base[i] - epsilon;
        probe.set_params(&params)?;
        let down = probe.loss(input)?;
        params[i] = base[i];
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
