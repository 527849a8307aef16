use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

/// One plain SGD update: `p + rate·g` when ascending, `p − rate·g` when
/// descending.
pub fn sgd_step(params: &mut [f64], grads: &[f64], rate: f64, direction: Direction) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::DimensionMismatch {
            context: "sgd parameters vs gradients",
            expected: params.len(),
            found: grads.len(),
        });
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::precondition(format!(
            "learning rate must be positive, got {rate}"
        )));
    }
    match direction {
        Direction::Ascend => params.iter_mut().zip(grads).for_each(|(p, g)| *p += rate * g),
        Direction::Descend => params.iter_mut().zip(grads).for_each(|(p, g)| *p -= rate * g),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        sgd_step(&mut p, &[0.0; 3], 0.5, Direction::Descend).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn hand_examples() {
        let mut p = vec![1.0];
        sgd_step(&mut p, &[2.0], 0.1, Direction::Descend).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        let mut p = vec![1.0];
        sgd_step(&mut p, &[2.0], 0.1, Direction::Ascend).unwrap();
        assert!((p[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = vec![1.0, 2.0];
        assert!(sgd_step(&mut p, &[1.0], 0.1, Direction::Ascend).is_err());
        assert!(sgd_step(&mut p, &[1.0, 1.0], 0.0, Direction::Ascend).is_err());
    }

    proptest! {
        // Dyadic values on a bounded grid add and subtract without rounding.
        #[test]
        fn ascend_then_descend_restores_dyadic(
            p in prop::collection::vec(-1_000_000i64..1_000_000, 1..32),
            g in prop::collection::vec(-1_000_000i64..1_000_000, 32),
            rate_exp in 1u32..8,
        ) {
            let scale = 2f64.powi(-16);
            let mut params: Vec<f64> = p.iter().map(|&v| v as f64 * scale).collect();
            let grads: Vec<f64> = g[..params.len()].iter().map(|&v| v as f64 * scale).collect();
            let rate = 2f64.powi(-(rate_exp as i32));
            let before = params.clone();
            sgd_step(&mut params, &grads, rate, Direction::Ascend).unwrap();
            sgd_step(&mut params, &grads, rate, Direction::Descend).unwrap();
            prop_assert_eq!(params, before);
        }

        #[test]
        fn ascend_then_descend_restores_within_rounding(
            p in prop::collection::vec(-10.0f64..10.0, 1..32),
            g in prop::collection::vec(-10.0f64..10.0, 32),
            rate in 1e-4f64..1.0,
        ) {
            let mut params = p.clone();
            let grads = &g[..params.len()];
            sgd_step(&mut params, grads, rate, Direction::Ascend).unwrap();
            sgd_step(&mut params, grads, rate, Direction::Descend).unwrap();
            for ((after, before), grad) in params.iter().zip(&p).zip(grads) {
                let tol = 4.0 * f64::EPSILON * (before.abs() + (rate * grad).abs());
                prop_assert!((after - before).abs() <= tol);
            }
        }
    }
}
