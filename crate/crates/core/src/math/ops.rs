use crate::error::{DrError, Result};

/// Smallest probability fed to `ln`.
pub const PROB_FLOOR: f64 = 1e-12;

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Numerically stable `ln Σ exp(zᵢ)`. Returns -∞ for an empty slice or
/// when every entry is -∞.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = max_of(z);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + z.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(DrError::shape("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(DrError::input("softmax logits must be finite"));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let m = max_of(logits);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(DrError::shape("log-softmax of an empty vector"));
    }
    Ok(log_softmax_unchecked(logits))
}

pub(crate) fn log_softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&z| z - lse).collect()
}

/// Cross-entropy of a distribution against a target class, with the gradient
/// with respect to the logits that produced `probabilities` through softmax.
///
/// The loss is `-ln max(p[target], PROB_FLOOR)`; the gradient is `p - onehot`.
pub fn cross_entropy_grad(probabilities: &[f64], target_index: usize) -> Result<(f64, Vec<f64>)> {
    if target_index >= probabilities.len() {
        return Err(DrError::input(format!(
            "target {target_index} out of range for {} classes",
            probabilities.len()
        )));
    }
    let loss = -probabilities[target_index].max(PROB_FLOOR).ln();
    let mut grad = probabilities.to_vec();
    grad[target_index] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1] < 1e-300 && p[1] >= 0.0);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_matches_extended_precision_reference() {
        // e^z / Σ e^z for z = [1,2,3], reference digits computed with 50-digit arithmetic.
        let expect = [
            0.090_030_573_170_380_46_f64,
            0.244_728_471_054_797_65,
            0.665_240_955_774_821_9,
        ];
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn empty_softmax_is_shape_error() {
        assert!(matches!(softmax(&[]), Err(DrError::Shape(_))));
        assert!(matches!(log_softmax(&[]), Err(DrError::Shape(_))));
    }

    #[test]
    fn cross_entropy_of_certain_prediction_is_zero() {
        let (loss, grad) = cross_entropy_grad(&[1.0, 0.0, 0.0], 0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_uniform_three_classes() {
        let third = 1.0 / 3.0;
        let (loss, grad) = cross_entropy_grad(&[third, third, third], 1).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
        let expect = [third, third - 1.0, third];
        for (a, b) in grad.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_probability_uses_floor() {
        let (loss, _) = cross_entropy_grad(&[1.0, 0.0], 1).unwrap();
        assert!((loss - (-PROB_FLOOR.ln())).abs() < 1e-12);
        assert!(loss.is_finite());
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        assert!(cross_entropy_grad(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(2..8);
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t = rng.random_range(0..n);
            let loss_at = |z: &[f64]| -> f64 { -log_softmax(z).unwrap()[t] };
            let (_, grad) = cross_entropy_grad(&softmax(&z).unwrap(), t).unwrap();
            let h = 1e-5;
            for i in 0..n {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                let fd = (loss_at(&zp) - loss_at(&zm)) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
                assert!(rel < 1e-5, "component {i}: fd {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn log_sum_exp_of_neg_infinity() {
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }
}
