//! Differentiable operations.
//!
//! Layouts: sequences are `[B, C, T]`, images `[N, C, H, W]`, and frame
//! stacks for the 3-D front-end `[B, T, C, H, W]`. Channel-wise ops accept
//! any `[outer, C, inner]` view.

use crate::real::Real;

use super::tensor::{numel, Tensor};

fn dims3<F: Real>(x: &Tensor<F>, what: &str) -> (usize, usize, usize) {
    match *x.shape() {
        [a, b, c] => (a, b, c),
        ref s => panic!("{what}: expected a 3-d tensor, got {s:?}"),
    }
}

fn dims4<F: Real>(x: &Tensor<F>, what: &str) -> (usize, usize, usize, usize) {
    match *x.shape() {
        [a, b, c, d] => (a, b, c, d),
        ref s => panic!("{what}: expected a 4-d tensor, got {s:?}"),
    }
}

/// Views a tensor of rank ≥ 2 as `[outer, C, inner]` around axis 1.
fn channel_view(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "channel op needs rank ≥ 2, got {shape:?}");
    (shape[0], shape[1], numel(&shape[2..]))
}

impl<F: Real> Tensor<F> {
    fn zip_map(&self, other: &Tensor<F>, f: impl Fn(F, F) -> F) -> Vec<F> {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        let a = self.data();
        let b = other.data();
        a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&self, other: &Tensor<F>) -> Tensor<F> {
        let data = self.zip_map(other, |a, b| a + b);
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], |ctx| {
            ctx.parents[0].accumulate(ctx.grad);
            ctx.parents[1].accumulate(ctx.grad);
        })
    }

    pub fn sub(&self, other: &Tensor<F>) -> Tensor<F> {
        let data = self.zip_map(other, |a, b| a - b);
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], |ctx| {
            ctx.parents[0].accumulate(ctx.grad);
            ctx.parents[1].accumulate_with(|g| {
                for (a, d) in g.iter_mut().zip(ctx.grad) {
                    *a -= *d;
                }
            });
        })
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Tensor<F>) -> Tensor<F> {
        let data = self.zip_map(other, |a, b| a * b);
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], |ctx| {
            let (a, b) = (&ctx.parents[0], &ctx.parents[1]);
            if a.requires_grad() {
                let bv = b.data();
                a.accumulate_with(|g| {
                    for ((acc, d), y) in g.iter_mut().zip(ctx.grad).zip(bv.iter()) {
                        *acc += *d * *y;
                    }
                });
            }
            if b.requires_grad() {
                let av = a.data();
                b.accumulate_with(|g| {
                    for ((acc, d), x) in g.iter_mut().zip(ctx.grad).zip(av.iter()) {
                        *acc += *d * *x;
                    }
                });
            }
        })
    }

    pub fn scale(&self, c: F) -> Tensor<F> {
        let data = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |ctx| {
            ctx.parents[0].accumulate_with(|g| {
                for (a, d) in g.iter_mut().zip(ctx.grad) {
                    *a += *d * c;
                }
            });
        })
    }

    pub fn relu(&self) -> Tensor<F> {
        let data = self.data().iter().map(|&v| v.max(F::zero())).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |ctx| {
            ctx.parents[0].accumulate_with(|g| {
                for ((a, d), y) in g.iter_mut().zip(ctx.grad).zip(ctx.out) {
                    if *y > F::zero() {
                        *a += *d;
                    }
                }
            });
        })
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        let data = self
            .data()
            .iter()
            .map(|&v| F::one() / (F::one() + (-v).exp()))
            .collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |ctx| {
            ctx.parents[0].accumulate_with(|g| {
                for ((a, d), y) in g.iter_mut().zip(ctx.grad).zip(ctx.out) {
                    *a += *d * *y * (F::one() - *y);
                }
            });
        })
    }

    /// Leaky ReLU with one learnable slope shared by all channels.
    pub fn prelu(&self, alpha: &Tensor<F>) -> Tensor<F> {
        assert_eq!(alpha.numel(), 1, "prelu slope must be a scalar");
        let a = alpha.item();
        let data = self
            .data()
            .iter()
            .map(|&v| if v > F::zero() { v } else { a * v })
            .collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), alpha.clone()], |ctx| {
            let (x, alpha) = (&ctx.parents[0], &ctx.parents[1]);
            let a = alpha.item();
            let xv = x.data();
            if x.requires_grad() {
                x.accumulate_with(|g| {
                    for ((acc, d), v) in g.iter_mut().zip(ctx.grad).zip(xv.iter()) {
                        *acc += if *v > F::zero() { *d } else { *d * a };
                    }
                });
            }
            if alpha.requires_grad() {
                let s: F = ctx
                    .grad
                    .iter()
                    .zip(xv.iter())
                    .filter(|(_, v)| **v <= F::zero())
                    .map(|(d, v)| *d * *v)
                    .sum();
                alpha.accumulate(&[s]);
            }
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<F> {
        assert_eq!(numel(shape), self.numel(), "reshape {:?} -> {shape:?}", self.shape());
        Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], |ctx| {
            ctx.parents[0].accumulate(ctx.grad);
        })
    }

    pub fn sum_all(&self) -> Tensor<F> {
        let s: F = self.data().iter().copied().sum();
        Tensor::from_op(vec![s], vec![1], vec![self.clone()], |ctx| {
            let d = ctx.grad[0];
            ctx.parents[0].accumulate_with(|g| g.iter_mut().for_each(|a| *a += d));
        })
    }

    pub fn mean_all(&self) -> Tensor<F> {
        let n = F::lit(self.numel() as f64);
        self.sum_all().scale(F::one() / n)
    }

    /// `[B, M, N] -> [B, N, M]`.
    pub fn transpose_last2(&self) -> Tensor<F> {
        let (b, m, n) = dims3(self, "transpose_last2");
        let x = self.data();
        let mut out = vec![F::zero(); x.len()];
        for bi in 0..b {
            let src = &x[bi * m * n..(bi + 1) * m * n];
            let dst = &mut out[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        drop(x);
        Tensor::from_op(out, vec![b, n, m], vec![self.clone()], move |ctx| {
            ctx.parents[0].accumulate_with(|g| {
                for bi in 0..b {
                    let gs = &ctx.grad[bi * m * n..(bi + 1) * m * n];
                    let gd = &mut g[bi * m * n..(bi + 1) * m * n];
                    for i in 0..m {
                        for j in 0..n {
                            gd[i * n + j] += gs[j * m + i];
                        }
                    }
                }
            });
        })
    }
}

/// Position-wise channel mixing: `[B, Ci, I] × [Co, Ci] -> [B, Co, I]`.
pub fn pointwise_conv<F: Real>(x: &Tensor<F>, w: &Tensor<F>, bias: Option<&Tensor<F>>) -> Tensor<F> {
    let (b, ci, t) = dims3(x, "pointwise_conv");
    let co = w.shape()[0];
    assert_eq!(w.shape(), &[co, ci], "pointwise_conv weight shape");
    let mut out = vec![F::zero(); b * co * t];
    {
        let xv = x.data();
        let wv = w.data();
        for bi in 0..b {
            F::gemm(
                co,
                ci,
                t,
                F::one(),
                &wv,
                false,
                &xv[bi * ci * t..],
                false,
                F::zero(),
                &mut out[bi * co * t..],
            );
        }
        if let Some(bias) = bias {
            let bv = bias.data();
            for bi in 0..b {
                for c in 0..co {
                    let row = &mut out[(bi * co + c) * t..(bi * co + c + 1) * t];
                    row.iter_mut().for_each(|v| *v += bv[c]);
                }
            }
        }
    }
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(bias) = bias {
        parents.push(bias.clone());
    }
    Tensor::from_op(out, vec![b, co, t], parents, move |ctx| {
        let (x, w) = (&ctx.parents[0], &ctx.parents[1]);
        let g = ctx.grad;
        if x.requires_grad() {
            let wv = w.data();
            x.accumulate_with(|gx| {
                for bi in 0..b {
                    F::gemm(
                        ci,
                        co,
                        t,
                        F::one(),
                        &wv,
                        true,
                        &g[bi * co * t..],
                        false,
                        F::one(),
                        &mut gx[bi * ci * t..],
                    );
                }
            });
        }
        if w.requires_grad() {
            let xv = x.data();
            w.accumulate_with(|gw| {
                for bi in 0..b {
                    F::gemm(
                        co,
                        t,
                        ci,
                        F::one(),
                        &g[bi * co * t..],
                        false,
                        &xv[bi * ci * t..],
                        true,
                        F::one(),
                        gw,
                    );
                }
            });
        }
        if let Some(bias) = ctx.parents.get(2) {
            bias.accumulate_with(|gb| {
                for bi in 0..b {
                    for c in 0..co {
                        let row = &g[(bi * co + c) * t..(bi * co + c + 1) * t];
                        gb[c] += row.iter().copied().sum::<F>();
                    }
                }
            });
        }
    })
}

/// Dense layer `[N, Ci] × [Co, Ci]ᵀ + b -> [N, Co]`.
pub fn linear<F: Real>(x: &Tensor<F>, w: &Tensor<F>, bias: Option<&Tensor<F>>) -> Tensor<F> {
    let [n, ci] = *x.shape() else {
        panic!("linear: expected [N, Ci], got {:?}", x.shape())
    };
    let co = w.shape()[0];
    assert_eq!(w.shape(), &[co, ci], "linear weight shape");
    let mut out = vec![F::zero(); n * co];
    F::gemm(
        n,
        ci,
        co,
        F::one(),
        &x.data(),
        false,
        &w.data(),
        true,
        F::zero(),
        &mut out,
    );
    if let Some(bias) = bias {
        let bv = bias.data();
        for row in out.chunks_mut(co) {
            row.iter_mut().zip(bv.iter()).for_each(|(v, b)| *v += *b);
        }
    }
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(bias) = bias {
        parents.push(bias.clone());
    }
    Tensor::from_op(out, vec![n, co], parents, move |ctx| {
        let (x, w) = (&ctx.parents[0], &ctx.parents[1]);
        let g = ctx.grad;
        if x.requires_grad() {
            let wv = w.data();
            x.accumulate_with(|gx| F::gemm(n, co, ci, F::one(), g, false, &wv, false, F::one(), gx));
        }
        if w.requires_grad() {
            let xv = x.data();
            w.accumulate_with(|gw| F::gemm(co, n, ci, F::one(), g, true, &xv, false, F::one(), gw));
        }
        if let Some(bias) = ctx.parents.get(2) {
            bias.accumulate_with(|gb| {
                for row in g.chunks(co) {
                    gb.iter_mut().zip(row).for_each(|(a, d)| *a += *d);
                }
            });
        }
    })
}

/// Per-channel dilated convolution with symmetric zero padding.
/// `[B, C, T] × [C, K] -> [B, C, T + 2·pad − dilation·(K − 1)]`.
pub fn depthwise_conv1d<F: Real>(x: &Tensor<F>, w: &Tensor<F>, dilation: usize, pad: usize) -> Tensor<F> {
    let (b, c, t) = dims3(x, "depthwise_conv1d");
    let k = w.shape()[1];
    assert_eq!(w.shape(), &[c, k], "depthwise weight shape");
    let span = dilation * (k - 1);
    assert!(t + 2 * pad > span, "depthwise_conv1d: input too short");
    let t_out = t + 2 * pad - span;
    // output position o reads input o - pad + j·dilation
    let mut out = vec![F::zero(); b * c * t_out];
    {
        let xv = x.data();
        let wv = w.data();
        for bc in 0..b * c {
            let ch = bc % c;
            let xs = &xv[bc * t..(bc + 1) * t];
            let ys = &mut out[bc * t_out..(bc + 1) * t_out];
            for j in 0..k {
                let wj = wv[ch * k + j];
                let shift = j * dilation;
                // valid o: 0 <= o + shift - pad < t
                let lo = pad.saturating_sub(shift);
                let hi = (t + pad).saturating_sub(shift).min(t_out);
                for o in lo..hi {
                    ys[o] += wj * xs[o + shift - pad];
                }
            }
        }
    }
    Tensor::from_op(out, vec![b, c, t_out], vec![x.clone(), w.clone()], move |ctx| {
        let (x, w) = (&ctx.parents[0], &ctx.parents[1]);
        let g = ctx.grad;
        let xv = x.data();
        let wv = w.data();
        let ranges: Vec<(usize, usize, usize)> = (0..k)
            .map(|j| {
                let shift = j * dilation;
                (
                    shift,
                    pad.saturating_sub(shift),
                    (t + pad).saturating_sub(shift).min(t_out),
                )
            })
            .collect();
        if x.requires_grad() {
            x.accumulate_with(|gx| {
                for bc in 0..b * c {
                    let ch = bc % c;
                    let gs = &g[bc * t_out..(bc + 1) * t_out];
                    let gd = &mut gx[bc * t..(bc + 1) * t];
                    for (j, &(shift, lo, hi)) in ranges.iter().enumerate() {
                        let wj = wv[ch * k + j];
                        for o in lo..hi {
                            gd[o + shift - pad] += wj * gs[o];
                        }
                    }
                }
            });
        }
        if w.requires_grad() {
            w.accumulate_with(|gw| {
                for bc in 0..b * c {
                    let ch = bc % c;
                    let gs = &g[bc * t_out..(bc + 1) * t_out];
                    let xs = &xv[bc * t..(bc + 1) * t];
                    for (j, &(shift, lo, hi)) in ranges.iter().enumerate() {
                        let mut acc = F::zero();
                        for o in lo..hi {
                            acc += gs[o] * xs[o + shift - pad];
                        }
                        gw[ch * k + j] += acc;
                    }
                }
            });
        }
    })
}

/// Strided 1-D convolution without padding or bias.
/// `[B, Ci, L] × [Co, Ci, K] -> [B, Co, (L − K)/S + 1]`.
pub fn conv1d<F: Real>(x: &Tensor<F>, w: &Tensor<F>, stride: usize) -> Tensor<F> {
    let (b, ci, l) = dims3(x, "conv1d");
    let (co, k) = (w.shape()[0], w.shape()[2]);
    assert_eq!(w.shape(), &[co, ci, k], "conv1d weight shape");
    assert!(l >= k && stride >= 1, "conv1d: input shorter than kernel");
    let t = (l - k) / stride + 1;
    let rows = ci * k;
    let im2col = move |xs: &[F], cols: &mut [F]| {
        for c in 0..ci {
            for j in 0..k {
                let row = &mut cols[(c * k + j) * t..(c * k + j + 1) * t];
                for (o, v) in row.iter_mut().enumerate() {
                    *v = xs[c * l + o * stride + j];
                }
            }
        }
    };
    let mut out = vec![F::zero(); b * co * t];
    {
        let xv = x.data();
        let wv = w.data();
        let mut cols = vec![F::zero(); rows * t];
        for bi in 0..b {
            im2col(&xv[bi * ci * l..(bi + 1) * ci * l], &mut cols);
            F::gemm(
                co,
                rows,
                t,
                F::one(),
                &wv,
                false,
                &cols,
                false,
                F::zero(),
                &mut out[bi * co * t..],
            );
        }
    }
    Tensor::from_op(out, vec![b, co, t], vec![x.clone(), w.clone()], move |ctx| {
        let (x, w) = (&ctx.parents[0], &ctx.parents[1]);
        let g = ctx.grad;
        let xv = x.data();
        let wv = w.data();
        let mut cols = vec![F::zero(); rows * t];
        if w.requires_grad() {
            w.accumulate_with(|gw| {
                for bi in 0..b {
                    im2col(&xv[bi * ci * l..(bi + 1) * ci * l], &mut cols);
                    F::gemm(
                        co,
                        t,
                        rows,
                        F::one(),
                        &g[bi * co * t..],
                        false,
                        &cols,
                        true,
                        F::one(),
                        gw,
                    );
                }
            });
        }
        if x.requires_grad() {
            x.accumulate_with(|gx| {
                for bi in 0..b {
                    F::gemm(
                        rows,
                        co,
                        t,
                        F::one(),
                        &wv,
                        true,
                        &g[bi * co * t..],
                        false,
                        F::zero(),
                        &mut cols,
                    );
                    let gd = &mut gx[bi * ci * l..(bi + 1) * ci * l];
                    for c in 0..ci {
                        for j in 0..k {
                            let row = &cols[(c * k + j) * t..(c * k + j + 1) * t];
                            for (o, v) in row.iter().enumerate() {
                                gd[c * l + o * stride + j] += *v;
                            }
                        }
                    }
                }
            });
        }
    })
}

/// Transposed 1-D convolution (overlap-add) without bias.
/// `[B, Ci, T] × [Ci, Co, K] -> [B, Co, (T − 1)·S + K]`.
pub fn conv_transpose1d<F: Real>(x: &Tensor<F>, w: &Tensor<F>, stride: usize) -> Tensor<F> {
    let (b, ci, t) = dims3(x, "conv_transpose1d");
    let (co, k) = (w.shape()[1], w.shape()[2]);
    assert_eq!(w.shape(), &[ci, co, k], "conv_transpose1d weight shape");
    assert!(t >= 1 && stride >= 1);
    let l = (t - 1) * stride + k;
    let rows = co * k;
    let mut out = vec![F::zero(); b * co * l];
    {
        let xv = x.data();
        let wv = w.data();
        let mut cols = vec![F::zero(); rows * t];
        for bi in 0..b {
            F::gemm(
                rows,
                ci,
                t,
                F::one(),
                &wv,
                true,
                &xv[bi * ci * t..],
                false,
                F::zero(),
                &mut cols,
            );
            let ys = &mut out[bi * co * l..(bi + 1) * co * l];
            for c in 0..co {
                for j in 0..k {
                    let row = &cols[(c * k + j) * t..(c * k + j + 1) * t];
                    for (o, v) in row.iter().enumerate() {
                        ys[c * l + o * stride + j] += *v;
                    }
                }
            }
        }
    }
    Tensor::from_op(out, vec![b, co, l], vec![x.clone(), w.clone()], move |ctx| {
        let (x, w) = (&ctx.parents[0], &ctx.parents[1]);
        let g = ctx.grad;
        let xv = x.data();
        let wv = w.data();
        let mut cols = vec![F::zero(); rows * t];
        for bi in 0..b {
            let gs = &g[bi * co * l..(bi + 1) * co * l];
            for c in 0..co {
                for j in 0..k {
                    let row = &mut cols[(c * k + j) * t..(c * k + j + 1) * t];
                    for (o, v) in row.iter_mut().enumerate() {
                        *v = gs[c * l + o * stride + j];
                    }
                }
            }
            if x.requires_grad() {
                x.accumulate_with(|gx| {
                    F::gemm(
                        ci,
                        rows,
                        t,
                        F::one(),
                        &wv,
                        false,
                        &cols,
                        false,
                        F::one(),
                        &mut gx[bi * ci * t..],
                    );
                });
            }
            if w.requires_grad() {
                w.accumulate_with(|gw| {
                    F::gemm(
                        ci,
                        t,
                        rows,
                        F::one(),
                        &xv[bi * ci * t..],
                        false,
                        &cols,
                        true,
                        F::one(),
                        gw,
                    );
                });
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Conv2dGeom {
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Conv2dGeom {
    fn new(ci: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        assert!(
            h + 2 * pad >= kh && w + 2 * pad >= kw && stride >= 1,
            "conv2d: kernel larger than input"
        );
        Self {
            ci,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        }
    }

    fn rows(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one image into `cols[rows, Ho·Wo]` starting at row `row0`.
    fn im2col<F: Real>(&self, img: &[F], cols: &mut [F], row0: usize) {
        let n = self.cols();
        for c in 0..self.ci {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let r = row0 + (c * self.kh + i) * self.kw + j;
                    let row = &mut cols[r * n..(r + 1) * n];
                    for oy in 0..self.ho {
                        let y = (oy * self.stride + i) as isize - self.pad as isize;
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        if y < 0 || y >= self.h as isize {
                            dst.iter_mut().for_each(|v| *v = F::zero());
                            continue;
                        }
                        let src = &img[(c * self.h + y as usize) * self.w..(c * self.h + y as usize + 1) * self.w];
                        for (ox, v) in dst.iter_mut().enumerate() {
                            let xx = (ox * self.stride + j) as isize - self.pad as isize;
                            *v = if xx < 0 || xx >= self.w as isize {
                                F::zero()
                            } else {
                                src[xx as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`]: scatters `cols` rows back onto the image.
    fn col2im<F: Real>(&self, cols: &[F], img: &mut [F], row0: usize) {
        let n = self.cols();
        for c in 0..self.ci {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let r = row0 + (c * self.kh + i) * self.kw + j;
                    let row = &cols[r * n..(r + 1) * n];
                    for oy in 0..self.ho {
                        let y = (oy * self.stride + i) as isize - self.pad as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let base = (c * self.h + y as usize) * self.w;
                        for ox in 0..self.wo {
                            let xx = (ox * self.stride + j) as isize - self.pad as isize;
                            if xx >= 0 && xx < self.w as isize {
                                img[base + xx as usize] += row[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution without bias: `[N, Ci, H, W] × [Co, Ci, kh, kw]`.
pub fn conv2d<F: Real>(x: &Tensor<F>, w: &Tensor<F>, stride: usize, pad: usize) -> Tensor<F> {
    let (n, ci, h, wd) = dims4(x, "conv2d");
    let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    assert_eq!(w.shape(), &[co, ci, kh, kw], "conv2d weight shape");
    let geo = Conv2dGeom::new(ci, h, wd, kh, kw, stride, pad);
    let (rows, m) = (geo.rows(), geo.cols());
    let img = ci * h * wd;
    let mut out = vec![F::zero(); n * co * m];
    {
        let xv = x.data();
        let wv = w.data();
        let mut cols = vec![F::zero(); rows * m];
        for i in 0..n {
            geo.im2col(&xv[i * img..(i + 1) * img], &mut cols, 0);
            F::gemm(
                co,
                rows,
                m,
                F::one(),
                &wv,
                false,
                &cols,
                false,
                F::zero(),
                &mut out[i * co * m..],
            );
        }
    }
    Tensor::from_op(
        out,
        vec![n, co, geo.ho, geo.wo],
        vec![x.clone(), w.clone()],
        move |ctx| {
            let (x, w) = (&ctx.parents[0], &ctx.parents[1]);
            let g = ctx.grad;
            let xv = x.data();
            let wv = w.data();
            let mut cols = vec![F::zero(); rows * m];
            if w.requires_grad() {
                w.accumulate_with(|gw| {
                    for i in 0..n {
                        geo.im2col(&xv[i * img..(i + 1) * img], &mut cols, 0);
                        F::gemm(
                            co,
                            m,
                            rows,
                            F::one(),
                            &g[i * co * m..],
                            false,
                            &cols,
                            true,
                            F::one(),
                            gw,
                        );
                    }
                });
            }
            if x.requires_grad() {
                x.accumulate_with(|gx| {
                    for i in 0..n {
                        F::gemm(
                            rows,
                            co,
                            m,
                            F::one(),
                            &wv,
                            true,
                            &g[i * co * m..],
                            false,
                            F::zero(),
                            &mut cols,
                        );
                        geo.col2im(&cols, &mut gx[i * img..(i + 1) * img], 0);
                    }
                });
            }
        },
    )
}

/// Spatio-temporal convolution over a frame stack, stride 1 in time.
///
/// `[B, T, Ci, H, W] × [Co, Ci, kt, kh, kw] -> [B, T + 2·pad_t − kt + 1, Co, Ho, Wo]`;
/// frames stay the leading axis so the result reshapes directly into a
/// batch of images. Each input frame is unfolded once and shared by every
/// temporal tap that reads it.
pub fn conv3d_frames<F: Real>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    stride_hw: usize,
    pad_t: usize,
    pad_hw: usize,
) -> Tensor<F> {
    let [b, t, ci, h, wd] = *x.shape() else {
        panic!("conv3d_frames: expected [B, T, C, H, W], got {:?}", x.shape())
    };
    let [co, wci, kt, kh, kw] = *w.shape() else {
        panic!("conv3d_frames: expected a 5-d weight, got {:?}", w.shape())
    };
    assert_eq!(wci, ci, "conv3d_frames channel mismatch");
    assert!(t + 2 * pad_t >= kt, "conv3d_frames: too few frames");
    let t_out = t + 2 * pad_t - kt + 1;
    let geo = Conv2dGeom::new(ci, h, wd, kh, kw, stride_hw, pad_hw);
    let slab = geo.rows();
    let m = geo.cols();
    let img = ci * h * wd;
    let khw = kh * kw;
    // per-tap weight matrices: taps[dt] is [Co, Ci·kh·kw]
    let split = move |wv: &[F]| -> Vec<Vec<F>> {
        (0..kt)
            .map(|dt| {
                let mut r = vec![F::zero(); co * slab];
                for o in 0..co {
                    for c in 0..ci {
                        let src = ((o * ci + c) * kt + dt) * khw;
                        r[o * slab + c * khw..o * slab + (c + 1) * khw].copy_from_slice(&wv[src..src + khw]);
                    }
                }
                r
            })
            .collect()
    };
    // (output frame, tap, input frame) triples that touch real frames
    let links: Vec<(usize, usize, usize)> = (0..t_out)
        .flat_map(|to| (0..kt).map(move |dt| (to, dt)))
        .filter_map(|(to, dt)| {
            let src = (to + dt).checked_sub(pad_t)?;
            (src < t).then_some((to, dt, src))
        })
        .collect();
    let unfold = {
        let xv = x.data();
        let mut cols = vec![F::zero(); b * t * slab * m];
        for f in 0..b * t {
            geo.im2col(
                &xv[f * img..(f + 1) * img],
                &mut cols[f * slab * m..(f + 1) * slab * m],
                0,
            );
        }
        cols
    };
    let mut out = vec![F::zero(); b * t_out * co * m];
    {
        let taps = split(&w.data());
        for bi in 0..b {
            for &(to, dt, src) in &links {
                let cols = &unfold[(bi * t + src) * slab * m..];
                F::gemm(
                    co,
                    slab,
                    m,
                    F::one(),
                    &taps[dt],
                    false,
                    cols,
                    false,
                    F::one(),
                    &mut out[(bi * t_out + to) * co * m..],
                );
            }
        }
    }
    Tensor::from_op(
        out,
        vec![b, t_out, co, geo.ho, geo.wo],
        vec![x.clone(), w.clone()],
        move |ctx| {
            let (x, w) = (&ctx.parents[0], &ctx.parents[1]);
            let g = ctx.grad;
            if w.requires_grad() {
                let mut gtaps = vec![vec![F::zero(); co * slab]; kt];
                for bi in 0..b {
                    for &(to, dt, src) in &links {
                        let cols = &unfold[(bi * t + src) * slab * m..];
                        F::gemm(
                            co,
                            m,
                            slab,
                            F::one(),
                            &g[(bi * t_out + to) * co * m..],
                            false,
                            cols,
                            true,
                            F::one(),
                            &mut gtaps[dt],
                        );
                    }
                }
                w.accumulate_with(|gw| {
                    for (dt, tap) in gtaps.iter().enumerate() {
                        for o in 0..co {
                            for c in 0..ci {
                                let dst = ((o * ci + c) * kt + dt) * khw;
                                for s in 0..khw {
                                    gw[dst + s] += tap[o * slab + c * khw + s];
                                }
                            }
                        }
                    }
                });
            }
            if x.requires_grad() {
                let taps = split(&w.data());
                let mut gcols = vec![F::zero(); b * t * slab * m];
                for bi in 0..b {
                    for &(to, dt, src) in &links {
                        F::gemm(
                            slab,
                            co,
                            m,
                            F::one(),
                            &taps[dt],
                            true,
                            &g[(bi * t_out + to) * co * m..],
                            false,
                            F::one(),
                            &mut gcols[(bi * t + src) * slab * m..],
                        );
                    }
                }
                x.accumulate_with(|gx| {
                    for f in 0..b * t {
                        geo.col2im(
                            &gcols[f * slab * m..(f + 1) * slab * m],
                            &mut gx[f * img..(f + 1) * img],
                            0,
                        );
                    }
                });
            }
        },
    )
}

/// Max pooling over square windows with zero-free (−∞) padding.
pub fn max_pool2d<F: Real>(x: &Tensor<F>, k: usize, stride: usize, pad: usize) -> Tensor<F> {
    let (n, c, h, w) = dims4(x, "max_pool2d");
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    {
        let xv = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = F::neg_infinity();
                    let mut at = base;
                    for i in 0..k {
                        let y = (oy * stride + i) as isize - pad as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for j in 0..k {
                            let xx = (ox * stride + j) as isize - pad as isize;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let idx = base + y as usize * w + xx as usize;
                            if xv[idx] > best {
                                best = xv[idx];
                                at = idx;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(at);
                }
            }
        }
    }
    Tensor::from_op(out, vec![n, c, ho, wo], vec![x.clone()], move |ctx| {
        ctx.parents[0].accumulate_with(|g| {
            for (d, &i) in ctx.grad.iter().zip(&arg) {
                g[i] += *d;
            }
        });
    })
}

/// Mean over everything after the channel axis: `[O, C, ...] -> [O, C]`.
pub fn mean_inner<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let (o, c, inner) = channel_view(x.shape());
    let scale = F::one() / F::lit(inner as f64);
    let out: Vec<F> = x
        .data()
        .chunks(inner)
        .map(|row| row.iter().copied().sum::<F>() * scale)
        .collect();
    Tensor::from_op(out, vec![o, c], vec![x.clone()], move |ctx| {
        ctx.parents[0].accumulate_with(|g| {
            for (row, d) in g.chunks_mut(inner).zip(ctx.grad) {
                row.iter_mut().for_each(|v| *v += *d * scale);
            }
        });
    })
}

/// Concatenates `[B, Ca, I]` and `[B, Cb, I]` along channels.
pub fn concat_channels<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (n, ca, t) = dims3(a, "concat_channels");
    let (nb, cb, tb) = dims3(b, "concat_channels");
    assert!(
        n == nb && t == tb,
        "concat_channels: {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    let mut out = Vec::with_capacity(n * (ca + cb) * t);
    {
        let (av, bv) = (a.data(), b.data());
        for i in 0..n {
            out.extend_from_slice(&av[i * ca * t..(i + 1) * ca * t]);
            out.extend_from_slice(&bv[i * cb * t..(i + 1) * cb * t]);
        }
    }
    Tensor::from_op(out, vec![n, ca + cb, t], vec![a.clone(), b.clone()], move |ctx| {
        let g = ctx.grad;
        let stride = (ca + cb) * t;
        ctx.parents[0].accumulate_with(|ga| {
            for i in 0..n {
                for (x, d) in ga[i * ca * t..(i + 1) * ca * t]
                    .iter_mut()
                    .zip(&g[i * stride..i * stride + ca * t])
                {
                    *x += *d;
                }
            }
        });
        ctx.parents[1].accumulate_with(|gb| {
            for i in 0..n {
                for (x, d) in gb[i * cb * t..(i + 1) * cb * t]
                    .iter_mut()
                    .zip(&g[i * stride + ca * t..(i + 1) * stride])
                {
                    *x += *d;
                }
            }
        });
    })
}

/// Picks time steps: `out[.., .., j] = x[.., .., index[j]]`.
pub fn gather_time<F: Real>(x: &Tensor<F>, index: &[usize]) -> Tensor<F> {
    let (n, c, t) = dims3(x, "gather_time");
    assert!(index.iter().all(|&i| i < t), "gather_time: index out of range");
    let index = index.to_vec();
    let m = index.len();
    let mut out = Vec::with_capacity(n * c * m);
    {
        let xv = x.data();
        for row in xv.chunks(t) {
            out.extend(index.iter().map(|&i| row[i]));
        }
    }
    Tensor::from_op(out, vec![n, c, m], vec![x.clone()], move |ctx| {
        ctx.parents[0].accumulate_with(|g| {
            for (grow, drow) in g.chunks_mut(t).zip(ctx.grad.chunks(m)) {
                for (&i, d) in index.iter().zip(drow) {
                    grow[i] += *d;
                }
            }
        });
    })
}

/// Input gradient of `gain · x̂ + bias` for one normalisation group whose
/// flat indices are `idx`.
fn normalise_backward<F: Real>(
    g: &[F],
    xhat: &[F],
    inv_std: F,
    gain: impl Fn(usize) -> F,
    idx: impl Iterator<Item = usize> + Clone,
    count: usize,
    gx: &mut [F],
) {
    let m = F::lit(count as f64);
    let mut sum_d = F::zero();
    let mut sum_dx = F::zero();
    for i in idx.clone() {
        let d = g[i] * gain(i);
        sum_d += d;
        sum_dx += d * xhat[i];
    }
    for i in idx {
        let d = g[i] * gain(i);
        gx[i] += inv_std * (d - sum_d / m - xhat[i] * sum_dx / m);
    }
}

/// Layer norm over every channel and time step of each sample, followed by a
/// per-channel affine map. `[B, C, T]`.
pub fn global_layer_norm<F: Real>(x: &Tensor<F>, gain: &Tensor<F>, bias: &Tensor<F>, eps: f64) -> Tensor<F> {
    let (b, c, t) = dims3(x, "global_layer_norm");
    assert_eq!(gain.numel(), c);
    assert_eq!(bias.numel(), c);
    let len = c * t;
    let mut xhat = vec![F::zero(); b * len];
    let mut inv_stds = Vec::with_capacity(b);
    {
        let xv = x.data();
        for bi in 0..b {
            let s = &xv[bi * len..(bi + 1) * len];
            let mean = s.iter().map(|v| v.as_f64()).sum::<f64>() / len as f64;
            let var = s.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / len as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_stds.push(F::lit(inv));
            for (o, v) in xhat[bi * len..(bi + 1) * len].iter_mut().zip(s) {
                *o = F::lit((v.as_f64() - mean) * inv);
            }
        }
    }
    let out = {
        let (gv, bv) = (gain.data(), bias.data());
        xhat.iter()
            .enumerate()
            .map(|(i, &v)| v * gv[(i / t) % c] + bv[(i / t) % c])
            .collect()
    };
    Tensor::from_op(
        out,
        vec![b, c, t],
        vec![x.clone(), gain.clone(), bias.clone()],
        move |ctx| {
            let (x, gain, bias) = (&ctx.parents[0], &ctx.parents[1], &ctx.parents[2]);
            let g = ctx.grad;
            if gain.requires_grad() {
                gain.accumulate_with(|gg| {
                    for (i, (d, h)) in g.iter().zip(&xhat).enumerate() {
                        gg[(i / t) % c] += *d * *h;
                    }
                });
            }
            if bias.requires_grad() {
                bias.accumulate_with(|gb| {
                    for (i, d) in g.iter().enumerate() {
                        gb[(i / t) % c] += *d;
                    }
                });
            }
            if x.requires_grad() {
                let gv = gain.data();
                x.accumulate_with(|gx| {
                    for (bi, &inv_std) in inv_stds.iter().enumerate().take(b) {
                        normalise_backward(
                            g,
                            &xhat,
                            inv_std,
                            |i| gv[(i / t) % c],
                            bi * len..(bi + 1) * len,
                            len,
                            gx,
                        );
                    }
                });
            }
        },
    )
}

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone)]
pub struct BatchStats<F: Real> {
    pub mean: Tensor<F>,
    pub var: Tensor<F>,
    pub momentum: f64,
}

/// Batch norm over `[O, C, I]`: statistics per channel across `O` and `I`.
///
/// In training mode the batch statistics are used and the running
/// statistics are updated; otherwise the running statistics form a fixed
/// affine map.
pub fn batch_norm<F: Real>(
    x: &Tensor<F>,
    gain: &Tensor<F>,
    bias: &Tensor<F>,
    stats: &BatchStats<F>,
    training: bool,
    eps: f64,
) -> Tensor<F> {
    let (o, c, inner) = channel_view(x.shape());
    assert_eq!(gain.numel(), c);
    assert_eq!(bias.numel(), c);
    let count = o * inner;
    let mut means = vec![0.0; c];
    let mut vars = vec![0.0; c];
    {
        let xv = x.data();
        if training {
            for ch in 0..c {
                let mut s = 0.0;
                for oi in 0..o {
                    s += xv[(oi * c + ch) * inner..(oi * c + ch + 1) * inner]
                        .iter()
                        .map(|v| v.as_f64())
                        .sum::<f64>();
                }
                let mean = s / count as f64;
                let mut v = 0.0;
                for oi in 0..o {
                    v += xv[(oi * c + ch) * inner..(oi * c + ch + 1) * inner]
                        .iter()
                        .map(|x| (x.as_f64() - mean).powi(2))
                        .sum::<f64>();
                }
                means[ch] = mean;
                vars[ch] = v / count as f64;
            }
            let mom = stats.momentum;
            let unbias = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            let mut rm = stats.mean.data_mut();
            let mut rv = stats.var.data_mut();
            for ch in 0..c {
                rm[ch] = F::lit((1.0 - mom) * rm[ch].as_f64() + mom * means[ch]);
                rv[ch] = F::lit((1.0 - mom) * rv[ch].as_f64() + mom * vars[ch] * unbias);
            }
        } else {
            let (rm, rv) = (stats.mean.data(), stats.var.data());
            for ch in 0..c {
                means[ch] = rm[ch].as_f64();
                vars[ch] = rv[ch].as_f64();
            }
        }
    }
    let inv: Vec<F> = vars.iter().map(|v| F::lit(1.0 / (v + eps).sqrt())).collect();
    let means: Vec<F> = means.into_iter().map(F::lit).collect();
    let xhat: Vec<F> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = (i / inner) % c;
            (v - means[ch]) * inv[ch]
        })
        .collect();
    let out = {
        let (gv, bv) = (gain.data(), bias.data());
        xhat.iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / inner) % c;
                v * gv[ch] + bv[ch]
            })
            .collect()
    };
    Tensor::from_op(
        out,
        x.shape().to_vec(),
        vec![x.clone(), gain.clone(), bias.clone()],
        move |ctx| {
            let (x, gain, bias) = (&ctx.parents[0], &ctx.parents[1], &ctx.parents[2]);
            let g = ctx.grad;
            let ch_of = |i: usize| (i / inner) % c;
            if gain.requires_grad() {
                gain.accumulate_with(|gg| {
                    for (i, (d, h)) in g.iter().zip(&xhat).enumerate() {
                        gg[ch_of(i)] += *d * *h;
                    }
                });
            }
            if bias.requires_grad() {
                bias.accumulate_with(|gb| {
                    for (i, d) in g.iter().enumerate() {
                        gb[ch_of(i)] += *d;
                    }
                });
            }
            if x.requires_grad() {
                let gv = gain.data();
                x.accumulate_with(|gx| {
                    if training {
                        for ch in 0..c {
                            let idx = (0..o).flat_map(move |oi| (oi * c + ch) * inner..(oi * c + ch + 1) * inner);
                            normalise_backward(g, &xhat, inv[ch], |_| gv[ch], idx, count, gx);
                        }
                    } else {
                        for (i, (a, d)) in gx.iter_mut().zip(g).enumerate() {
                            let ch = ch_of(i);
                            *a += *d * gv[ch] * inv[ch];
                        }
                    }
                });
            }
        },
    )
}
