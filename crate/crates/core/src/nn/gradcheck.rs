//! Finite-difference checks for every op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss;
use super::ops::{self, BatchStats};
use super::tensor::Tensor;

fn rand_param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::param((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape)
}

/// Projects the op output onto fixed random weights so every output element
/// contributes to a scalar, then compares analytic and central-difference
/// gradients for each input.
fn check(inputs: &[Tensor<f64>], f: impl Fn(&[Tensor<f64>]) -> Tensor<f64>, tol: f64) {
    let probe_out = f(inputs);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let proj: Vec<f64> = (0..probe_out.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let proj_t = Tensor::new(proj.clone(), probe_out.shape());
    let scalar = |ins: &[Tensor<f64>]| f(ins).mul(&proj_t).sum_all();

    inputs.iter().for_each(Tensor::zero_grad);
    scalar(inputs).backward();
    let h = 1e-6;
    for (k, x) in inputs.iter().enumerate() {
        if !x.requires_grad() {
            continue;
        }
        let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
        for (i, &exact) in analytic.iter().enumerate() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let up = scalar(inputs).item();
            x.data_mut()[i] = orig - h;
            let down = scalar(inputs).item();
            x.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - exact).abs();
            assert!(
                err <= tol * (1.0 + numeric.abs()),
                "input {k} element {i}: numeric {numeric} analytic {exact}"
            );
        }
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn elementwise_ops() {
    let mut r = rng();
    let a = rand_param(&mut r, &[2, 3, 4]);
    let b = rand_param(&mut r, &[2, 3, 4]);
    check(&[a.clone(), b.clone()], |t| t[0].add(&t[1]), 1e-6);
    check(&[a.clone(), b.clone()], |t| t[0].sub(&t[1]), 1e-6);
    check(&[a.clone(), b.clone()], |t| t[0].mul(&t[1]), 1e-6);
    check(std::slice::from_ref(&a), |t| t[0].scale(-1.7), 1e-6);
    check(std::slice::from_ref(&a), |t| t[0].sigmoid(), 1e-6);
    check(std::slice::from_ref(&a), |t| t[0].relu(), 1e-6);
    check(std::slice::from_ref(&a), |t| t[0].mean_all(), 1e-6);
    check(
        std::slice::from_ref(&a),
        |t| t[0].reshape(&[6, 4]).transpose_last2_2d(),
        1e-6,
    );
    check(std::slice::from_ref(&a), |t| t[0].transpose_last2(), 1e-6);
    let alpha = Tensor::param(vec![0.3], &[1]);
    check(&[a, alpha], |t| t[0].prelu(&t[1]), 1e-6);
}

impl Tensor<f64> {
    fn transpose_last2_2d(&self) -> Tensor<f64> {
        let s = self.shape().to_vec();
        self.reshape(&[1, s[0], s[1]]).transpose_last2()
    }
}

#[test]
fn pointwise_and_linear() {
    let mut r = rng();
    let x = rand_param(&mut r, &[2, 3, 5]);
    let w = rand_param(&mut r, &[4, 3]);
    let b = rand_param(&mut r, &[4]);
    check(
        &[x.clone(), w.clone(), b.clone()],
        |t| ops::pointwise_conv(&t[0], &t[1], Some(&t[2])),
        1e-6,
    );
    check(&[x, w.clone()], |t| ops::pointwise_conv(&t[0], &t[1], None), 1e-6);
    let x2 = rand_param(&mut r, &[5, 3]);
    check(&[x2, w, b], |t| ops::linear(&t[0], &t[1], Some(&t[2])), 1e-6);
}

#[test]
fn depthwise_conv_with_dilation() {
    let mut r = rng();
    let x = rand_param(&mut r, &[2, 3, 9]);
    let w = rand_param(&mut r, &[3, 3]);
    for (d, pad) in [(1, 1), (2, 2), (4, 4), (2, 0)] {
        check(
            &[x.clone(), w.clone()],
            |t| ops::depthwise_conv1d(&t[0], &t[1], d, pad),
            1e-6,
        );
    }
}

#[test]
fn strided_conv_and_transpose() {
    let mut r = rng();
    let x = rand_param(&mut r, &[2, 2, 13]);
    let w = rand_param(&mut r, &[3, 2, 4]);
    check(&[x, w], |t| ops::conv1d(&t[0], &t[1], 2), 1e-6);
    let y = rand_param(&mut r, &[2, 3, 5]);
    let wt = rand_param(&mut r, &[3, 2, 4]);
    check(&[y, wt], |t| ops::conv_transpose1d(&t[0], &t[1], 2), 1e-6);
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    let mut r = rng();
    let x = rand_param(&mut r, &[1, 2, 11]);
    let w = rand_param(&mut r, &[3, 2, 3]);
    let y = ops::conv1d(&x, &w, 2);
    let z = rand_param(&mut r, y.shape());
    let lhs: f64 = y.to_vec().iter().zip(z.to_vec()).map(|(a, b)| a * b).sum();
    let back = ops::conv_transpose1d(&z, &w, 2);
    let rhs: f64 = back.to_vec().iter().zip(x.to_vec()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10);
}

#[test]
fn conv2d_and_pool() {
    let mut r = rng();
    let x = rand_param(&mut r, &[2, 2, 7, 6]);
    let w = rand_param(&mut r, &[3, 2, 3, 3]);
    check(&[x.clone(), w.clone()], |t| ops::conv2d(&t[0], &t[1], 1, 1), 1e-6);
    check(&[x.clone(), w], |t| ops::conv2d(&t[0], &t[1], 2, 1), 1e-6);
    check(std::slice::from_ref(&x), |t| ops::max_pool2d(&t[0], 3, 2, 1), 1e-6);
    check(&[x], |t| ops::mean_inner(&t[0]), 1e-6);
}

#[test]
fn conv3d_over_frames() {
    let mut r = rng();
    let x = rand_param(&mut r, &[1, 4, 2, 6, 5]);
    let w = rand_param(&mut r, &[2, 2, 3, 3, 3]);
    check(&[x, w], |t| ops::conv3d_frames(&t[0], &t[1], 2, 1, 1), 1e-6);
}

#[test]
fn conv3d_with_unit_time_kernel_matches_conv2d() {
    let mut r = rng();
    let x = rand_param(&mut r, &[1, 3, 2, 6, 6]);
    let w = rand_param(&mut r, &[4, 2, 1, 3, 3]);
    let a = ops::conv3d_frames(&x, &w, 2, 0, 1);
    let b = ops::conv2d(&x.reshape(&[3, 2, 6, 6]), &w.reshape(&[4, 2, 3, 3]), 2, 1);
    for (p, q) in a.to_vec().iter().zip(b.to_vec()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn layout_ops() {
    let mut r = rng();
    let a = rand_param(&mut r, &[2, 2, 4]);
    let b = rand_param(&mut r, &[2, 3, 4]);
    check(&[a.clone(), b], |t| ops::concat_channels(&t[0], &t[1]), 1e-6);
    check(&[a], |t| ops::gather_time(&t[0], &[0, 0, 1, 3, 3, 3]), 1e-6);
}

#[test]
fn normalisation_layers() {
    let mut r = rng();
    let x = rand_param(&mut r, &[2, 3, 5]);
    let g = rand_param(&mut r, &[3]);
    let b = rand_param(&mut r, &[3]);
    check(
        &[x.clone(), g.clone(), b.clone()],
        |t| ops::global_layer_norm(&t[0], &t[1], &t[2], 1e-8),
        1e-5,
    );
    let stats = BatchStats {
        mean: Tensor::zeros(&[3]),
        var: Tensor::filled(1.0, &[3]),
        momentum: 0.1,
    };
    check(
        &[x.clone(), g.clone(), b.clone()],
        |t| ops::batch_norm(&t[0], &t[1], &t[2], &stats, true, 1e-5),
        1e-5,
    );
    check(
        &[x, g, b],
        |t| ops::batch_norm(&t[0], &t[1], &t[2], &stats, false, 1e-5),
        1e-6,
    );
}

#[test]
fn batch_norm_updates_running_stats_only_in_training() {
    let x = Tensor::<f64>::new(vec![1.0, 3.0, 5.0, 7.0], &[2, 1, 2]);
    let g = Tensor::filled(1.0, &[1]);
    let b = Tensor::zeros(&[1]);
    let stats = BatchStats {
        mean: Tensor::zeros(&[1]),
        var: Tensor::filled(1.0, &[1]),
        momentum: 0.5,
    };
    ops::batch_norm(&x, &g, &b, &stats, false, 1e-5);
    assert_eq!(stats.mean.item(), 0.0);
    ops::batch_norm(&x, &g, &b, &stats, true, 1e-5);
    assert!((stats.mean.item() - 2.0).abs() < 1e-12);
    // unbiased batch variance is 20/3
    assert!((stats.var.item() - (0.5 + 0.5 * 20.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn losses() {
    let mut r = rng();
    let est = rand_param(&mut r, &[2, 16]);
    let tgt: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..16).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    check(&[est], |t| loss::si_snr_loss(&t[0], &tgt).unwrap(), 1e-5);
    let mask = rand_param(&mut r, &[3, 4]);
    let mag: Vec<f64> = (0..12).map(|_| r.random_range(0.0..2.0)).collect();
    let term: Vec<f64> = (0..12).map(|_| r.random_range(0.0..1.0)).collect();
    check(&[mask], |t| loss::psa_loss(&t[0], &mag, &term).unwrap(), 1e-6);
    let logits = rand_param(&mut r, &[4, 5]);
    check(&[logits], |t| loss::cross_entropy(&t[0], &[0, 4, 2, 2]).unwrap(), 1e-6);
}

#[test]
fn cross_entropy_rejects_bad_labels() {
    let logits = Tensor::<f64>::zeros(&[2, 3]);
    assert!(loss::cross_entropy(&logits, &[0, 3]).is_err());
    assert!(loss::cross_entropy(&logits, &[0]).is_err());
    let uniform = loss::cross_entropy(&logits, &[0, 1]).unwrap().item();
    assert!((uniform - 3f64.ln()).abs() < 1e-12);
}
