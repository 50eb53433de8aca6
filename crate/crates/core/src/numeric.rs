//! Shared numerical kernels.

use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted). Rejects non-finite input.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if let Some(x) = logits.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("softmax input {x}")));
    }
    Ok(softmax_unchecked(logits))
}

/// Softmax that tolerates `-inf` entries (masked positions). At least one
/// entry must be finite.
pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `ln(sum(exp(x)))`, computed stably.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

        let p = softmax(&[1000.0, 0.0, 0.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));

        let p = softmax(&[2f64.ln(), 0.0, 0.0]).unwrap();
        for (got, want) in p.iter().zip([0.5, 0.25, 0.25]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        for logits in [vec![3.0, -2.0, 0.5], vec![-700.0, -710.0, -705.0], vec![42.0]] {
            let s: f64 = softmax(&logits).unwrap().iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0, 1.0]), 0);
    }
}
