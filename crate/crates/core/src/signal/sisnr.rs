//! Scale-invariant SNR: the evaluation metric, the training loss and its
//! permutation-invariant variant.

use crate::error::{ensure, Error, Result};
use crate::real::Real;

use super::Waveform;

/// Reported Si-SNR values are clamped to `[-30, 30]` dB.
pub const REPORT_CLAMP_DB: f64 = 30.0;

/// Added to both norms inside the training loss.
pub const LOSS_EPS: f64 = 1e-8;

/// Permutation search is exhaustive, so the source count is capped.
pub const MAX_PIT_SOURCES: usize = 4;

const DB_PER_NEPER: f64 = 20.0 / std::f64::consts::LN_10;

/// Zero-meaned projection of an estimate onto a target.
struct Projection {
    target: Vec<f64>,
    residual: Vec<f64>,
    alpha: f64,
    target_norm: f64,
    residual_norm: f64,
}

fn zero_mean(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(estimate: &[f64], target: &[f64]) -> Result<Projection> {
    ensure!(
        estimate.len() == target.len(),
        Error::LengthMismatch {
            left: estimate.len(),
            right: target.len()
        }
    );
    ensure!(
        target.len() >= 2,
        Error::TooShort {
            needed: 2,
            actual: target.len()
        }
    );
    let e = zero_mean(estimate);
    let t = zero_mean(target);
    let energy = dot(target, target);
    let tt = dot(&t, &t);
    // A constant target leaves only rounding noise after mean removal.
    ensure!(tt > 1e-24 * energy && tt > 0.0, Error::ZeroVarianceTarget);
    let alpha = dot(&e, &t) / tt;
    let residual: Vec<f64> = e.iter().zip(&t).map(|(ev, tv)| ev - alpha * tv).collect();
    let residual_norm = dot(&residual, &residual).sqrt();
    Ok(Projection {
        target: t,
        residual,
        alpha,
        target_norm: tt.sqrt(),
        residual_norm,
    })
}

/// Si-SNR in dB for reporting, clamped to `±REPORT_CLAMP_DB`.
pub fn si_snr_slices(estimate: &[f64], target: &[f64]) -> Result<f64> {
    let p = project(estimate, target)?;
    let signal = p.alpha.abs() * p.target_norm;
    let value = if signal == 0.0 {
        -REPORT_CLAMP_DB
    } else if p.residual_norm == 0.0 {
        REPORT_CLAMP_DB
    } else {
        20.0 * (signal / p.residual_norm).log10()
    };
    Ok(value.clamp(-REPORT_CLAMP_DB, REPORT_CLAMP_DB))
}

pub fn si_snr(estimate: &Waveform, target: &Waveform) -> Result<f64> {
    si_snr_slices(estimate.samples(), target.samples())
}

/// Unclamped, ε-guarded Si-SNR of one pair together with its gradient with
/// respect to the estimate.
pub fn si_snr_with_grad<F: Real>(estimate: &[F], target: &[F], eps: f64) -> Result<(F, Vec<F>)> {
    let e: Vec<f64> = estimate.iter().map(|v| v.as_f64()).collect();
    let t: Vec<f64> = target.iter().map(|v| v.as_f64()).collect();
    let p = project(&e, &t)?;
    let signal = p.alpha.abs() * p.target_norm;
    let value = DB_PER_NEPER * ((signal + eps).ln() - (p.residual_norm + eps).ln());

    // d|αt|/de = sign(α) t/|t| and d|r|/de = r/|r|; both are already zero-mean,
    // so the mean-removal Jacobian drops out.
    let sig_coef = if p.alpha == 0.0 {
        0.0
    } else {
        p.alpha.signum() / (p.target_norm * (signal + eps))
    };
    let res_coef = if p.residual_norm == 0.0 {
        0.0
    } else {
        1.0 / (p.residual_norm * (p.residual_norm + eps))
    };
    let grad = p
        .target
        .iter()
        .zip(&p.residual)
        .map(|(tv, rv)| F::lit(DB_PER_NEPER * (sig_coef * tv - res_coef * rv)))
        .collect();
    Ok((F::lit(value), grad))
}

/// Negative mean Si-SNR over a batch (no reporting clamp) with per-estimate
/// gradients.
pub fn si_snr_loss_with_grad<F: Real>(estimates: &[&[F]], targets: &[&[F]]) -> Result<(F, Vec<Vec<F>>)> {
    ensure!(
        estimates.len() == targets.len(),
        Error::LengthMismatch {
            left: estimates.len(),
            right: targets.len()
        }
    );
    ensure!(!estimates.is_empty(), Error::InvalidArgument("empty batch".into()));
    let scale = -1.0 / estimates.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(estimates.len());
    for (e, t) in estimates.iter().zip(targets) {
        let (value, grad) = si_snr_with_grad::<F>(e, t, LOSS_EPS)?;
        total += value.as_f64();
        grads.push(grad.into_iter().map(|g| g * F::lit(scale)).collect());
    }
    Ok((F::lit(total * scale), grads))
}

/// Training loss: `-mean(si_snr)` with ε = 1e-8 inside the norms.
pub fn si_snr_loss(estimates: &[Waveform], targets: &[Waveform]) -> Result<f64> {
    let e: Vec<&[f64]> = estimates.iter().map(|w| w.samples()).collect();
    let t: Vec<&[f64]> = targets.iter().map(|w| w.samples()).collect();
    Ok(si_snr_loss_with_grad::<f64>(&e, &t)?.0)
}

/// Outcome of the permutation search.
#[derive(Debug, Clone, PartialEq)]
pub struct PitResult {
    pub loss: f64,
    /// `permutation[i]` is the estimate assigned to target `i`.
    pub permutation: Vec<usize>,
}

/// Advances `perm` to the next permutation in lexicographic order.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Minimum mean Si-SNR loss over every estimate-to-target assignment.
///
/// Permutations are visited in lexicographic order and only a strictly lower
/// loss replaces the incumbent, so ties resolve to the smallest permutation.
pub fn pit_si_snr_loss(estimates: &[Waveform], targets: &[Waveform]) -> Result<PitResult> {
    let n = targets.len();
    ensure!(
        estimates.len() == n,
        Error::LengthMismatch {
            left: estimates.len(),
            right: n
        }
    );
    ensure!(
        (1..=MAX_PIT_SOURCES).contains(&n),
        Error::InvalidArgument(format!(
            "permutation search supports 1..={MAX_PIT_SOURCES} sources, got {n}"
        ))
    );
    // pair[i][j]: loss of estimate j against target i
    let mut pair = vec![vec![0.0; n]; n];
    for (i, t) in targets.iter().enumerate() {
        for (j, e) in estimates.iter().enumerate() {
            pair[i][j] = si_snr_loss(std::slice::from_ref(e), std::slice::from_ref(t))?;
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<PitResult> = None;
    loop {
        let loss = perm.iter().enumerate().map(|(i, &j)| pair[i][j]).sum::<f64>() / n as f64;
        if best.as_ref().is_none_or(|b| loss < b.loss) {
            best = Some(PitResult {
                loss,
                permutation: perm.clone(),
            });
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best.expect("at least one permutation"))
}
