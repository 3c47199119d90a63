//! Training objectives as graph nodes.

use crate::error::{Error, Result};
use crate::masks::psa_loss_with_grad;
use crate::real::Real;
use crate::signal::si_snr_loss_with_grad;

use super::tensor::Tensor;

/// Negative mean Si-SNR of `[B, L]` estimates against fixed targets.
pub fn si_snr_loss<F: Real>(estimates: &Tensor<F>, targets: &[Vec<F>]) -> Result<Tensor<F>> {
    let [b, l] = *estimates.shape() else {
        return Err(Error::ShapeMismatch {
            expected: vec![targets.len(), 0],
            actual: estimates.shape().to_vec(),
        });
    };
    if targets.len() != b || targets.iter().any(|t| t.len() != l) {
        return Err(Error::ShapeMismatch {
            expected: vec![b, l],
            actual: vec![targets.len(), targets.first().map_or(0, Vec::len)],
        });
    }
    let (value, grads) = {
        let data = estimates.data();
        let est: Vec<&[F]> = data.chunks(l).collect();
        let tgt: Vec<&[F]> = targets.iter().map(Vec::as_slice).collect();
        si_snr_loss_with_grad(&est, &tgt)?
    };
    let flat: Vec<F> = grads.into_iter().flatten().collect();
    Ok(Tensor::from_op(
        vec![value],
        vec![1],
        vec![estimates.clone()],
        move |ctx| {
            let d = ctx.grad[0];
            ctx.parents[0].accumulate_with(|g| {
                for (a, v) in g.iter_mut().zip(&flat) {
                    *a += d * *v;
                }
            });
        },
    ))
}

/// Mean squared phase-sensitive approximation error. All operands share the
/// mask's flat layout.
pub fn psa_loss<F: Real>(mask: &Tensor<F>, mixture_mag: &[F], target_term: &[F]) -> Result<Tensor<F>> {
    let (value, grad) = psa_loss_with_grad(&mask.data(), mixture_mag, target_term)?;
    Ok(Tensor::from_op(vec![value], vec![1], vec![mask.clone()], move |ctx| {
        let d = ctx.grad[0];
        ctx.parents[0].accumulate_with(|g| {
            for (a, v) in g.iter_mut().zip(&grad) {
                *a += d * *v;
            }
        });
    }))
}

/// Mean softmax cross-entropy of `[N, K]` logits.
pub fn cross_entropy<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> Result<Tensor<F>> {
    let [n, k] = *logits.shape() else {
        return Err(Error::ShapeMismatch {
            expected: vec![labels.len(), 0],
            actual: logits.shape().to_vec(),
        });
    };
    if labels.len() != n || n == 0 {
        return Err(Error::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside {k} classes")));
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut total = 0.0;
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        total += z.ln() + max - row[y].as_f64();
        probs.extend(row.iter().map(|v| (v.as_f64() - max).exp() / z));
    }
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        vec![F::lit(total / n as f64)],
        vec![1],
        vec![logits.clone()],
        move |ctx| {
            let d = ctx.grad[0].as_f64() / n as f64;
            ctx.parents[0].accumulate_with(|g| {
                for (i, &y) in labels.iter().enumerate() {
                    for c in 0..k {
                        let onehot = if c == y { 1.0 } else { 0.0 };
                        g[i * k + c] += F::lit(d * (probs[i * k + c] - onehot));
                    }
                }
            });
        },
    ))
}
