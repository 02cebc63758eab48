//! Batched forward and backward passes.
//!
//! Activations are stored per example in `h, w, c` order. Convolutions are
//! lowered to a GEMM over an im2col buffer whose columns follow the weight
//! layout `[out, in, kh, kw]`, so model tensors are used as stored.

use std::ops::{Add, AddAssign, Mul, Sub};

use crate::model::{ActShape, ArchSpec, ParamRole, Stage};
use crate::{Error, Result};

pub(crate) trait Real:
    Copy
    + Default
    + PartialOrd
    + Add<Output = Self>
    + AddAssign
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c = alpha * a·b + beta * c` with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn to_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa || k == 0);
                assert!(b.len() > (k.max(1) - 1) * rsb + (n - 1) * csb || k == 0);
                assert!(c.len() >= (m - 1) * rsc + n);
                // SAFETY: the asserts above keep every strided access in bounds.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone)]
enum Op {
    Dense {
        inputs: usize,
        outputs: usize,
        weight: usize,
        bias: usize,
    },
    Conv {
        h: usize,
        w: usize,
        cin: usize,
        cout: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        oh: usize,
        ow: usize,
        weight: usize,
        bias: usize,
    },
    Relu,
    Pool {
        h: usize,
        w: usize,
        c: usize,
        size: usize,
        stride: usize,
        oh: usize,
        ow: usize,
    },
}

/// A compiled architecture. Parameters are passed in at call time in the
/// order of [`ArchSpec::params`].
#[derive(Debug, Clone)]
pub(crate) struct Network {
    ops: Vec<Op>,
    /// Per-example activation length before op `i` (index 0 is the input);
    /// the last entry is the logit count.
    lens: Vec<usize>,
    param_lens: Vec<usize>,
}

/// Scratch buffers for one batch.
#[derive(Debug, Default)]
pub(crate) struct Workspace<T> {
    acts: Vec<Vec<T>>,
    cols: Vec<Vec<T>>,
    argmax: Vec<Vec<u32>>,
    grad_a: Vec<T>,
    grad_b: Vec<T>,
    dcols: Vec<T>,
    batch: usize,
}

impl Network {
    pub fn new(arch: &ArchSpec) -> Result<Self> {
        let shapes = arch.shapes()?;
        let specs = arch.params();
        let mut param_of_stage = vec![usize::MAX; arch.stages.len()];
        for (i, s) in specs.iter().enumerate() {
            if s.role == ParamRole::Weight {
                param_of_stage[s.stage] = i;
            }
        }
        let mut ops = Vec::new();
        let mut lens = vec![arch.input_len()];
        let mut cur = arch.input_shape()?;
        for (i, stage) in arch.stages.iter().enumerate() {
            let out = shapes[i];
            match *stage {
                Stage::Dense { inputs, outputs } => ops.push(Op::Dense {
                    inputs,
                    outputs,
                    weight: param_of_stage[i],
                    bias: param_of_stage[i] + 1,
                }),
                Stage::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                } => {
                    let (ActShape::Spatial { h, w, .. }, ActShape::Spatial { h: oh, w: ow, .. }) =
                        (cur, out)
                    else {
                        unreachable!("type-checked architecture")
                    };
                    ops.push(Op::Conv {
                        h,
                        w,
                        cin: in_channels,
                        cout: out_channels,
                        kh: kernel_h,
                        kw: kernel_w,
                        stride,
                        pad: padding,
                        oh,
                        ow,
                        weight: param_of_stage[i],
                        bias: param_of_stage[i] + 1,
                    });
                }
                Stage::Relu => ops.push(Op::Relu),
                Stage::MaxPool2d { size, stride } => {
                    let (ActShape::Spatial { h, w, c }, ActShape::Spatial { h: oh, w: ow, .. }) =
                        (cur, out)
                    else {
                        unreachable!("type-checked architecture")
                    };
                    ops.push(Op::Pool {
                        h,
                        w,
                        c,
                        size,
                        stride,
                        oh,
                        ow,
                    });
                }
                Stage::Flatten | Stage::SoftmaxLogits => {}
            }
            if !matches!(stage, Stage::Flatten | Stage::SoftmaxLogits) {
                lens.push(out.len());
            }
            cur = out;
        }
        Ok(Network {
            ops,
            lens,
            param_lens: specs.iter().map(|s| s.len()).collect(),
        })
    }

    pub fn input_len(&self) -> usize {
        self.lens[0]
    }

    pub fn classes(&self) -> usize {
        *self.lens.last().expect("non-empty")
    }

    fn check_params<T>(&self, params: &[&[T]]) -> Result<()> {
        if params.len() != self.param_lens.len()
            || params.iter().zip(&self.param_lens).any(|(p, &n)| p.len() != n)
        {
            return Err(Error::ShapeMismatch("parameters do not match the network".into()));
        }
        Ok(())
    }

    fn prepare<T: Real>(&self, ws: &mut Workspace<T>, batch: usize) {
        ws.batch = batch;
        ws.acts.resize_with(self.lens.len(), Vec::new);
        ws.cols.resize_with(self.ops.len(), Vec::new);
        ws.argmax.resize_with(self.ops.len(), Vec::new);
        for (i, len) in self.lens.iter().enumerate().skip(1) {
            ws.acts[i].resize(len * batch, T::ZERO);
        }
    }

    /// Runs the network on `batch` examples laid out back to back in `input`
    /// and returns the logits (`batch × classes`).
    pub fn forward<'w, T: Real>(
        &self,
        params: &[&[T]],
        input: &[T],
        batch: usize,
        ws: &'w mut Workspace<T>,
    ) -> Result<&'w [T]> {
        self.check_params(params)?;
        if input.len() != batch * self.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "input holds {} values, expected {batch} × {}",
                input.len(),
                self.input_len()
            )));
        }
        self.prepare(ws, batch);
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(input);
        for (i, op) in self.ops.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(i + 1);
            let x = &before[i];
            let y = &mut after[0];
            match *op {
                Op::Dense {
                    inputs,
                    outputs,
                    weight,
                    bias,
                } => {
                    let (w, b) = (params[weight], params[bias]);
                    for row in y.chunks_exact_mut(outputs) {
                        row.copy_from_slice(b);
                    }
                    T::gemm(batch, inputs, outputs, x, inputs, 1, w, 1, inputs, T::from_f64(1.0), y, outputs);
                }
                Op::Conv {
                    cout,
                    weight,
                    bias,
                    oh,
                    ow,
                    ..
                } => {
                    let k = self.conv_k(op);
                    let rows = batch * oh * ow;
                    let cols = &mut ws.cols[i];
                    cols.resize(rows * k, T::ZERO);
                    im2col(op, x, batch, cols);
                    let (w, b) = (params[weight], params[bias]);
                    for row in y.chunks_exact_mut(cout) {
                        row.copy_from_slice(b);
                    }
                    T::gemm(rows, k, cout, cols, k, 1, w, 1, k, T::from_f64(1.0), y, cout);
                }
                Op::Relu => {
                    for (o, &v) in y.iter_mut().zip(x.iter()) {
                        *o = if v > T::ZERO { v } else { T::ZERO };
                    }
                }
                Op::Pool {
                    h,
                    w,
                    c,
                    size,
                    stride,
                    oh,
                    ow,
                } => {
                    let am = &mut ws.argmax[i];
                    am.resize(batch * oh * ow * c, 0);
                    let (in_len, out_len) = (h * w * c, oh * ow * c);
                    for b in 0..batch {
                        let xs = &x[b * in_len..(b + 1) * in_len];
                        let ys = &mut y[b * out_len..(b + 1) * out_len];
                        let am = &mut am[b * out_len..(b + 1) * out_len];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                for ch in 0..c {
                                    let mut best = usize::MAX;
                                    let mut val = T::ZERO;
                                    for dy in 0..size {
                                        for dx in 0..size {
                                            let idx = ((oy * stride + dy) * w + ox * stride + dx) * c + ch;
                                            if best == usize::MAX || xs[idx] > val {
                                                best = idx;
                                                val = xs[idx];
                                            }
                                        }
                                    }
                                    let o = (oy * ow + ox) * c + ch;
                                    ys[o] = val;
                                    am[o] = best as u32;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(ws.acts.last().expect("non-empty"))
    }

    fn conv_k(&self, op: &Op) -> usize {
        match *op {
            Op::Conv { cin, kh, kw, .. } => cin * kh * kw,
            _ => 0,
        }
    }

    /// Backpropagates `dlogits` through the activations cached by the last
    /// [`forward`](Self::forward) call, accumulating into `grads`.
    pub fn backward<T: Real>(
        &self,
        params: &[&[T]],
        dlogits: &[T],
        ws: &mut Workspace<T>,
        grads: &mut [Vec<T>],
    ) -> Result<()> {
        self.check_params(params)?;
        let batch = ws.batch;
        let mut grad = std::mem::take(&mut ws.grad_a);
        let mut next = std::mem::take(&mut ws.grad_b);
        grad.clear();
        grad.extend_from_slice(dlogits);
        for (i, op) in self.ops.iter().enumerate().rev() {
            let x = &ws.acts[i];
            let need_input_grad = i > 0;
            next.clear();
            if need_input_grad {
                next.resize(self.lens[i] * batch, T::ZERO);
            }
            match *op {
                Op::Dense {
                    inputs,
                    outputs,
                    weight,
                    bias,
                } => {
                    // dW[o, i] += Σ_b dY[b, o] X[b, i]
                    T::gemm(outputs, batch, inputs, &grad, 1, outputs, x, inputs, 1, T::from_f64(1.0), &mut grads[weight], inputs);
                    let db = &mut grads[bias];
                    for row in grad.chunks_exact(outputs) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    if need_input_grad {
                        T::gemm(batch, outputs, inputs, &grad, outputs, 1, params[weight], inputs, 1, T::ZERO, &mut next, inputs);
                    }
                }
                Op::Conv {
                    cout,
                    weight,
                    bias,
                    oh,
                    ow,
                    ..
                } => {
                    let k = self.conv_k(op);
                    let rows = batch * oh * ow;
                    let cols = &ws.cols[i];
                    T::gemm(cout, rows, k, &grad, 1, cout, cols, k, 1, T::from_f64(1.0), &mut grads[weight], k);
                    let db = &mut grads[bias];
                    for row in grad.chunks_exact(cout) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    if need_input_grad {
                        ws.dcols.resize(rows * k, T::ZERO);
                        T::gemm(rows, cout, k, &grad, cout, 1, params[weight], k, 1, T::ZERO, &mut ws.dcols, k);
                        col2im(op, &ws.dcols, batch, &mut next);
                    }
                }
                Op::Relu => {
                    let y = &ws.acts[i + 1];
                    for ((n, &g), &out) in next.iter_mut().zip(&grad).zip(y.iter()) {
                        *n = if out > T::ZERO { g } else { T::ZERO };
                    }
                }
                Op::Pool { h, w, c, oh, ow, .. } => {
                    if need_input_grad {
                        let (in_len, out_len) = (h * w * c, oh * ow * c);
                        let am = &ws.argmax[i];
                        for b in 0..batch {
                            let ns = &mut next[b * in_len..(b + 1) * in_len];
                            for o in 0..out_len {
                                ns[am[b * out_len + o] as usize] += grad[b * out_len + o];
                            }
                        }
                    }
                }
            }
            if !need_input_grad {
                break;
            }
            std::mem::swap(&mut grad, &mut next);
        }
        ws.grad_a = grad;
        ws.grad_b = next;
        Ok(())
    }
}

fn im2col<T: Real>(op: &Op, x: &[T], batch: usize, cols: &mut [T]) {
    let Op::Conv {
        h,
        w,
        cin,
        kh,
        kw,
        stride,
        pad,
        oh,
        ow,
        ..
    } = *op
    else {
        unreachable!()
    };
    let k = cin * kh * kw;
    let in_len = h * w * cin;
    for b in 0..batch {
        let xs = &x[b * in_len..(b + 1) * in_len];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut cols[((b * oh + oy) * ow + ox) * k..][..k];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                        let base = if inside { (iy as usize * w + ix as usize) * cin } else { 0 };
                        for ci in 0..cin {
                            row[(ci * kh + ky) * kw + kx] = if inside { xs[base + ci] } else { T::ZERO };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(op: &Op, dcols: &[T], batch: usize, dx: &mut [T]) {
    let Op::Conv {
        h,
        w,
        cin,
        kh,
        kw,
        stride,
        pad,
        oh,
        ow,
        ..
    } = *op
    else {
        unreachable!()
    };
    let k = cin * kh * kw;
    let in_len = h * w * cin;
    for b in 0..batch {
        let xs = &mut dx[b * in_len..(b + 1) * in_len];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &dcols[((b * oh + oy) * ow + ox) * k..][..k];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let base = (iy as usize * w + ix as usize) * cin;
                        for ci in 0..cin {
                            xs[base + ci] += row[(ci * kh + ky) * kw + kx];
                        }
                    }
                }
            }
        }
    }
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub(crate) fn softmax_xent<T: Real>(logits: &[T], labels: &[u8], classes: usize, dlogits: &mut Vec<T>) -> f64 {
    let batch = labels.len();
    dlogits.resize(logits.len(), T::ZERO);
    let mut loss = 0.0;
    let inv = 1.0 / batch as f64;
    for ((row, drow), &y) in logits
        .chunks_exact(classes)
        .zip(dlogits.chunks_exact_mut(classes))
        .zip(labels)
    {
        let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v.to_f64() - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y as usize].to_f64();
        for (c, (d, v)) in drow.iter_mut().zip(row).enumerate() {
            let p = (v.to_f64() - log_z).exp();
            let target = if c == y as usize { 1.0 } else { 0.0 };
            *d = T::from_f64((p - target) * inv);
        }
    }
    loss * inv
}

/// Index of the largest logit; ties go to the smallest class index.
pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, Stage};
    use rand::{Rng, SeedableRng};

    fn loss_at(net: &Network, params: &[Vec<f64>], x: &[f64], y: &[u8]) -> f64 {
        let views: Vec<&[f64]> = params.iter().map(|p| p.as_slice()).collect();
        let mut ws = Workspace::default();
        let logits = net.forward(&views, x, y.len(), &mut ws).unwrap().to_vec();
        softmax_xent(&logits, y, net.classes(), &mut Vec::new())
    }

    /// Central finite differences against backprop, in double precision.
    fn gradient_check(arch: ArchSpec, seed: u64) {
        let net = Network::new(&arch).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let model = Model::init(arch.clone(), seed).unwrap();
        let mut params: Vec<Vec<f64>> = model
            .layers
            .iter()
            .map(|l| l.values.iter().map(|&v| v as f64).collect())
            .collect();
        for p in params.iter_mut() {
            for v in p.iter_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let batch = 3;
        let x: Vec<f64> = (0..batch * net.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<u8> = (0..batch).map(|_| rng.random_range(0..arch.classes as u8)).collect();

        let views: Vec<&[f64]> = params.iter().map(|p| p.as_slice()).collect();
        let mut ws = Workspace::default();
        let logits = net.forward(&views, &x, batch, &mut ws).unwrap().to_vec();
        let mut dl = Vec::new();
        softmax_xent(&logits, &y, net.classes(), &mut dl);
        let mut grads: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        net.backward(&views, &dl, &mut ws, &mut grads).unwrap();

        let eps = 1e-6;
        let mut worst = 0.0f64;
        for li in 0..params.len() {
            let n = params[li].len();
            let picks: Vec<usize> = (0..n.min(12)).map(|_| rng.random_range(0..n)).collect();
            for idx in picks {
                let orig = params[li][idx];
                params[li][idx] = orig + eps;
                let up = loss_at(&net, &params, &x, &y);
                params[li][idx] = orig - eps;
                let down = loss_at(&net, &params, &x, &y);
                params[li][idx] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = grads[li][idx];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn gradient_check_dense() {
        gradient_check(ArchSpec::mlp(5, &[7, 6], 4), 1);
    }

    #[test]
    fn gradient_check_conv_pool() {
        let arch = ArchSpec {
            input: vec![2, 8, 6],
            stages: vec![
                Stage::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel_h: 3,
                    kernel_w: 2,
                    stride: 1,
                    padding: 1,
                },
                Stage::Relu,
                Stage::MaxPool2d { size: 2, stride: 2 },
                Stage::Conv2d {
                    in_channels: 3,
                    out_channels: 4,
                    kernel_h: 2,
                    kernel_w: 2,
                    stride: 2,
                    padding: 0,
                },
                Stage::Flatten,
                Stage::Dense { inputs: 8, outputs: 3 },
                Stage::SoftmaxLogits,
            ],
            classes: 3,
        };
        gradient_check(arch, 2);
    }

    #[test]
    fn argmax_prefers_smallest_index_on_ties() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0f32; 10]), 0);
    }

    #[test]
    fn f32_and_f64_forward_agree() {
        let arch = ArchSpec::lenet5();
        let net = Network::new(&arch).unwrap();
        let m = Model::init(arch, 4).unwrap();
        let x32: Vec<f32> = (0..2 * 784).map(|i| ((i * 37) % 255) as f32 / 255.0).collect();
        let x64: Vec<f64> = x32.iter().map(|&v| v as f64).collect();
        let p32: Vec<&[f32]> = m.layers.iter().map(|l| l.values.as_slice()).collect();
        let p64v: Vec<Vec<f64>> = m.layers.iter().map(|l| l.values.iter().map(|&v| v as f64).collect()).collect();
        let p64: Vec<&[f64]> = p64v.iter().map(|v| v.as_slice()).collect();
        let a = net.forward(&p32, &x32, 2, &mut Workspace::default()).unwrap().to_vec();
        let b = net.forward(&p64, &x64, 2, &mut Workspace::default()).unwrap().to_vec();
        for (u, v) in a.iter().zip(&b) {
            assert!((*u as f64 - v).abs() < 1e-4 * (1.0 + v.abs()), "{u} vs {v}");
        }
    }
}
