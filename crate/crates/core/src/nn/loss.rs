use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

fn clamp<T: Real>(p: T) -> (T, bool) {
    let lo = T::lit(PROB_CLAMP);
    let hi = T::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

/// Mean binary cross-entropy over the batch and its gradient w.r.t. the
/// probabilities (`1 × B × 1`).
pub fn bce_loss<T: Real>(probs: &Tensor<T>, targets: &[T]) -> Result<(T, Tensor<T>)> {
    let (c, b, l) = probs.shape();
    if c != 1 || l != 1 || targets.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "bce needs 1×{b}×1 probabilities and {b} targets, got {c}×{b}×{l} and {}",
            targets.len()
        )));
    }
    if targets.iter().any(|&t| t != T::zero() && t != T::one()) {
        return Err(Error::Label("binary targets must be 0 or 1".into()));
    }
    let inv = T::lit(1.0 / b as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(1, b, 1);
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(probs.data()).zip(targets) {
        let (pc, clamped) = clamp(p);
        loss -= t * pc.ln() + (T::one() - t) * (T::one() - pc).ln();
        if !clamped {
            *g = -(t / pc - (T::one() - t) / (T::one() - pc)) * inv;
        }
    }
    Ok((loss * inv, grad))
}

/// Mean categorical cross-entropy; `targets` has the same `K × B × 1` shape
/// with one-hot columns.
pub fn cce_loss<T: Real>(probs: &Tensor<T>, targets: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if probs.shape() != targets.shape() || probs.length() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "cce shapes {:?} and {:?}",
            probs.shape(),
            targets.shape()
        )));
    }
    let (k, b, _) = probs.shape();
    for s in 0..b {
        let col: Vec<T> = (0..k).map(|c| targets.get(c, s, 0)).collect();
        let ones = col.iter().filter(|&&v| v == T::one()).count();
        let zeros = col.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || ones + zeros != k {
            return Err(Error::Label(format!("target column {s} is not one-hot")));
        }
    }
    let inv = T::lit(1.0 / b as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(k, b, 1);
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(probs.data())
        .zip(targets.data())
    {
        let (pc, clamped) = clamp(p);
        loss -= t * pc.ln();
        if !clamped {
            *g = -t / pc * inv;
        }
    }
    Ok((loss * inv, grad))
}

/// Gradient of the mean cross-entropy with respect to the logits feeding
/// the output sigmoid or softmax: `(p - t) / B`. Stays non-zero when the
/// output saturates, where the probability gradient is clamped to zero.
pub fn logit_gradient<T: Real>(probs: &Tensor<T>, targets: &Tensor<T>) -> Result<Tensor<T>> {
    if probs.shape() != targets.shape() || probs.length() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "logit gradient shapes {:?} and {:?}",
            probs.shape(),
            targets.shape()
        )));
    }
    let inv = T::lit(1.0 / probs.batch() as f64);
    let (k, b, _) = probs.shape();
    let data = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &t)| (p - t) * inv)
        .collect();
    Tensor::from_vec(k, b, 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_values() {
        let p = Tensor::from_vec(1, 1, 1, vec![0.5f64]).unwrap();
        let (l, _) = bce_loss(&p, &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let p = Tensor::from_vec(1, 2, 1, vec![1.0f64, 0.0]).unwrap();
        let (l, g) = bce_loss(&p, &[1.0, 0.0]).unwrap();
        assert!(l > 0.0 && l < 1e-6);
        assert!(g.data().iter().all(|v| *v == 0.0));
        let p = Tensor::from_vec(4, 1, 1, vec![0.0f64, 1.0, 0.0, 0.0]).unwrap();
        let t = p.clone();
        assert!(cce_loss(&p, &t).unwrap().0 < 1e-6);
    }

    #[test]
    fn logit_gradient_matches_chain_rule_and_survives_saturation() {
        // sigmoid: dL/dz = dL/dp * p(1-p)
        let p = Tensor::from_vec(1, 2, 1, vec![0.3f64, 0.8]).unwrap();
        let (_, gp) = bce_loss(&p, &[1.0, 0.0]).unwrap();
        let t = Tensor::from_vec(1, 2, 1, vec![1.0, 0.0]).unwrap();
        let gz = logit_gradient(&p, &t).unwrap();
        for ((a, b), p) in gz.data().iter().zip(gp.data()).zip(p.data()) {
            assert!((a - b * p * (1.0 - p)).abs() < 1e-12);
        }
        let saturated = Tensor::from_vec(1, 1, 1, vec![1.0f64]).unwrap();
        let t = Tensor::from_vec(1, 1, 1, vec![0.0]).unwrap();
        assert_eq!(logit_gradient(&saturated, &t).unwrap().data(), &[1.0]);
        assert!(logit_gradient(&saturated, &Tensor::zeros(2, 1, 1)).is_err());
    }

    #[test]
    fn bad_targets() {
        let p = Tensor::from_vec(1, 2, 1, vec![0.3f64, 0.6]).unwrap();
        assert!(bce_loss(&p, &[0.5, 1.0]).is_err());
        assert!(bce_loss(&p, &[1.0]).is_err());
        let p = Tensor::from_vec(2, 1, 1, vec![0.3f64, 0.7]).unwrap();
        let t = Tensor::from_vec(2, 1, 1, vec![1.0, 1.0]).unwrap();
        assert!(cce_loss(&p, &t).is_err());
    }
}
