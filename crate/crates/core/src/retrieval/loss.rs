//! Softmax normalization and the multiple-choice cross-entropy objective.

use super::RetrievalError;

fn check_logits(logits: &[f64]) -> Result<(), RetrievalError> {
    if logits.is_empty() {
        return Err(RetrievalError::Argument("empty logit vector".into()));
    }
    if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
        return Err(RetrievalError::Argument(format!(
            "non-finite logit at index {i}"
        )));
    }
    Ok(())
}

/// Numerically stable softmax. Subtracting the maximum makes the result
/// invariant under adding a constant to every logit.
pub fn softmax_normalize(logits: &[f64]) -> Result<Vec<f64>, RetrievalError> {
    check_logits(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// log-sum-exp of the logits, stable for large magnitudes.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn check_index(logits: &[f64], positive: usize) -> Result<(), RetrievalError> {
    check_logits(logits)?;
    if positive >= logits.len() {
        return Err(RetrievalError::Argument(format!(
            "positive index {positive} out of range for {} candidates",
            logits.len()
        )));
    }
    Ok(())
}

/// `-log softmax(logits)[positive]`.
pub fn mc_loss(logits: &[f64], positive: usize) -> Result<f64, RetrievalError> {
    check_index(logits, positive)?;
    let anchor = logits[positive];
    let shifted: Vec<f64> = logits.iter().map(|&x| x - anchor).collect();
    if shifted.iter().all(|&s| s <= 0.0) {
        // Positive holds the maximum: log(1 + sum of the others) keeps full
        // precision when the loss is tiny.
        let rest: f64 = shifted
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != positive)
            .map(|(_, &s)| s.exp())
            .sum();
        Ok(rest.ln_1p())
    } else {
        Ok(log_sum_exp(&shifted).max(0.0))
    }
}

/// Gradient of [`mc_loss`] with respect to the logits: `softmax - onehot`.
pub fn mc_loss_grad(logits: &[f64], positive: usize) -> Result<Vec<f64>, RetrievalError> {
    check_index(logits, positive)?;
    let mut grad = softmax_normalize(logits)?;
    grad[positive] -= 1.0;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_normalize(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for c in [-7.5, 0.0, 3.0, 1e3] {
            let p = softmax_normalize(&[c; 4]).unwrap();
            assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        }
        // exp(2) / (exp(2) + exp(1) + 1), evaluated with 50-digit arithmetic.
        let p = softmax_normalize(&[2.0, 1.0, 0.0]).unwrap();
        assert!((p[0] - 0.665_240_955_774_821_9).abs() < 1e-12);
        assert!((p[1] - 0.244_728_471_054_797_65).abs() < 1e-12);
        assert!((p[2] - 0.090_030_573_170_380_46).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax_normalize(&[]).is_err());
        assert!(softmax_normalize(&[0.0, f64::NAN]).is_err());
        assert!(softmax_normalize(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn loss_examples() {
        let l = mc_loss(&[0.3; 4], 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-9);
        // log(1 + e^-10) and 10 + log(1 + e^-10), high-precision reference.
        let l = mc_loss(&[10.0, 0.0], 0).unwrap();
        assert!((l - 4.539_889_921_686_465e-5).abs() < 1e-15);
        let l = mc_loss(&[0.0, 10.0], 0).unwrap();
        assert!((l - 10.000_045_398_899_217).abs() < 1e-12);
        assert!(mc_loss(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(mc_loss_grad(&[0.0, 0.0], 0).unwrap(), vec![-0.5, 0.5]);
        let g = mc_loss_grad(&[10.0, 0.0], 0).unwrap();
        let p0 = 0.999_954_602_131_297_6;
        assert!((g[0] - (p0 - 1.0)).abs() < 1e-12);
        assert!((g[1] - (1.0 - p0)).abs() < 1e-12);
        assert!(mc_loss_grad(&[1.0], 1).is_err());
    }

    #[test]
    fn singleton_is_certain() {
        assert_eq!(softmax_normalize(&[-3.0]).unwrap(), vec![1.0]);
        assert_eq!(mc_loss(&[42.0], 0).unwrap(), 0.0);
    }
}
