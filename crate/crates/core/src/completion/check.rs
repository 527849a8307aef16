use super::networks::{Discriminator, Generator};
use super::train::{disc_batch, gen_batch};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::ndnum::relative_error;
use crate::par::Exec;

/// Largest relative error between the analytic gradients of the
/// discriminator objective (over discriminator parameters) and the
/// generator objective (over generator parameters) and their central
/// finite differences with step `epsilon`.
pub fn chain_gradient_error(
    gen: &Generator,
    disc: &Discriminator,
    occluded: &[&FeatureMap],
    visible: &[&FeatureMap],
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::precondition(format!(
            "finite-difference step must lie in (0, 1e-2], got {epsilon}"
        )));
    }
    let exec = Exec::Sequential;
    let mut worst = 0.0f64;

    let analytic = disc_batch(gen, disc, occluded, visible, exec)?.grads.flat();
    let base = disc.params();
    let mut probe = disc.clone();
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + epsilon;
        probe.set_params(&p)?;
        let up = disc_batch(gen, &probe, occluded, visible, exec)?.disc_objective;
        p[i] = base[i] - epsilon;
        probe.set_params(&p)?;
        let down = disc_batch(gen, &probe, occluded, visible, exec)?.disc_objective;
        p[i] = base[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * epsilon)));
    }

    let analytic = gen_batch(gen, disc, occluded, exec)?.1.flat();
    let base = gen.params();
    let mut probe = gen.clone();
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + epsilon;
        probe.set_params(&p)?;
        let up = gen_batch(&probe, disc, occluded, exec)?.0;
        p[i] = base[i] - epsilon;
        probe.set_params(&p)?;
        let down = gen_batch(&probe, disc, occluded, exec)?.0;
        p[i] = base[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * epsilon)));
    }
    Ok(worst)
}
