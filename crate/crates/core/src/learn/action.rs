//! Squared-error imitation loss.

use crate::{Error, Result};

/// `‖a − a*‖²` and its gradient `2(a − a*)` with respect to `a`.
pub fn action_loss(predicted: &[f64], expert: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != expert.len() {
        return Err(Error::DimensionMismatch {
            context: "action loss",
            expected: expert.len(),
            actual: predicted.len(),
        });
    }
    let diff: Vec<f64> = predicted.iter().zip(expert).map(|(a, b)| a - b).collect();
    let loss = diff.iter().map(|d| d * d).sum();
    Ok((loss, diff.iter().map(|d| 2.0 * d).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::check_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn examples() {
        assert_eq!(action_loss(&[0.3, 0.1, 0.0, 1.0], &[0.3, 0.1, 0.0, 1.0]).unwrap().0, 0.0);
        assert_eq!(action_loss(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4]).unwrap().0, 1.0);
        assert!(matches!(action_loss(&[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn matches_summed_squares_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (loss, grad) = action_loss(&a, &b).unwrap();
            let mut oracle = 0.0;
            for i in 0..4 {
                oracle += (a[i] - b[i]).powi(2);
            }
            assert!((loss - oracle).abs() < 1e-12);
            check_gradient(|x| action_loss(x, &b).unwrap().0, &a, &grad, 1e-5, 1e-4);
        }
    }
}
