//! Reverse-mode tape.
//!
//! Every op appends one node holding its output value. `backward` walks the
//! nodes once in reverse order and accumulates adjoints.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{NdError, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::{GradSet, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatVec(Var, Var),
    VecMat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Neg(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Elu1p(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Pick(Var, usize),
    Row(Var, usize),
    StackRows(Vec<Var>),
    RowSum(Var),
    Reshape(Var),
    Conv2d(Var, Var, ConvGeom),
    ConvTranspose2d(Var, Var, ConvGeom),
    ChannelBias(Var, Var),
    BceLogits(Var, Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recording of executed primitive ops, bound to one parameter store.
pub struct Tape<'p, T: Real = f32> {
    id: u64,
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    bound: Vec<Option<Var>>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<T> {
    tape: u64,
    node_grads: Vec<Option<Tensor<T>>>,
    param_grads: GradSet<T>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to every parameter of the bound store; unused
    /// parameters get zeros.
    pub fn params(&self) -> &GradSet<T> {
        &self.param_grads
    }

    pub fn into_params(self) -> GradSet<T> {
        self.param_grads
    }

    /// Gradient with respect to an arbitrary recorded value.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.node_grads.get(v.idx).and_then(|g| g.as_ref())
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NdError {
    NdError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    // ln(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Overflow-safe `ln Σ exp(v)` in subtract-max form.
pub fn log_sum_exp_slice<T: Real>(v: &[T]) -> T {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    let s: T = v.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn softmax_slice<T: Real>(v: &[T]) -> Vec<T> {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = v.iter().map(|&x| (x - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `ELU(1, x) + 1`: `x + 1` for `x >= 0`, `exp(x)` otherwise. Strictly
/// positive: the exponential branch is floored at the smallest normal value.
pub fn elu1p<T: Real>(x: T) -> T {
    if x >= T::zero() {
        x + T::one()
    } else {
        x.exp().max(T::min_positive_value())
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            params,
            nodes: Vec::new(),
            bound: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node<T> {
        debug_assert_eq!(v.tape, self.id);
        &self.nodes[v.idx]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn scalar(&self, v: Var) -> T {
        self.node(v).value.item()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(NdError::ForeignVar);
        }
        Ok(())
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(NdError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    /// Records a constant input. Gradients reaching it are available through
    /// [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("input", value, Op::Leaf)
    }

    pub fn input_vec(&mut self, data: &[T]) -> Result<Var> {
        self.input(Tensor::from_vec(data.to_vec()))
    }

    pub fn constant_scalar(&mut self, x: T) -> Result<Var> {
        self.input(Tensor::scalar(x))
    }

    /// Binds a parameter of the store; repeated calls return the same var.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.bound.get(id.0).copied().flatten() {
            return Ok(v);
        }
        if id.0 >= self.params.len() {
            return Err(NdError::OutOfRange {
                index: id.0,
                len: self.params.len(),
            });
        }
        let v = self.push("param", self.params.get(id).clone(), Op::Param)?;
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(f);
        self.push(name, out, op)
    }

    fn binary_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb, name)?;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(name, out, op)
    }

    /// `W x` for `W: [m, n]`, `x: [n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.check(w)?;
        self.check(x)?;
        let (vw, vx) = (self.value(w), self.value(x));
        if vw.shape().len() != 2 || vx.numel() != vw.shape()[1] {
            return Err(mismatch("matvec", vw.shape(), vx.shape()));
        }
        let (m, n) = (vw.shape()[0], vw.shape()[1]);
        let xd = vx.data();
        let out: Vec<T> = vw
            .data()
            .chunks_exact(n)
            .map(|row| row.iter().zip(xd).map(|(&a, &b)| a * b).sum())
            .collect();
        debug_assert_eq!(out.len(), m);
        self.push("matvec", Tensor::from_vec(out), Op::MatVec(w, x))
    }

    /// `x^T W` for `x: [m]`, `W: [m, n]`.
    pub fn vecmat(&mut self, x: Var, w: Var) -> Result<Var> {
        self.check(w)?;
        self.check(x)?;
        let (vw, vx) = (self.value(w), self.value(x));
        if vw.shape().len() != 2 || vx.numel() != vw.shape()[0] {
            return Err(mismatch("vecmat", vx.shape(), vw.shape()));
        }
        let n = vw.shape()[1];
        let mut out = vec![T::zero(); n];
        for (row, &xi) in vw.data().chunks_exact(n).zip(vx.data()) {
            for (o, &r) in out.iter_mut().zip(row) {
                *o += xi * r;
            }
        }
        self.push("vecmat", Tensor::from_vec(out), Op::VecMat(x, w))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let k = T::lit(k);
        self.unary("scale", a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let k = T::lit(k);
        self.unary("add_scalar", a, |x| x + k, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary("neg", a, |x| -x, Op::Neg(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(T::zero()), Op::Relu(a))
    }

    /// `ELU(1, x) + 1`, used wherever a strictly positive scale is needed.
    pub fn elu1p(&mut self, a: Var) -> Result<Var> {
        self.unary("elu1p", a, elu1p, Op::Elu1p(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary("ln", a, |x| x.ln(), Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = Tensor::from_vec(softmax_slice(self.value(a).data()));
        self.push("softmax", out, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a).data();
        let lse = log_sum_exp_slice(v);
        let out = Tensor::from_vec(v.iter().map(|&x| x - lse).collect());
        self.push("log_softmax", out, Op::LogSoftmax(a))
    }

    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = Tensor::scalar(log_sum_exp_slice(self.value(a).data()));
        self.push("log_sum_exp", out, Op::LogSumExp(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s: T = self.value(a).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum::<T>() / T::lit(v.numel() as f64);
        self.push("mean", Tensor::scalar(s), Op::Mean(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.numel() != vb.numel() {
            return Err(mismatch("dot", va.shape(), vb.shape()));
        }
        let s: T = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).sum();
        self.push("dot", Tensor::scalar(s), Op::Dot(a, b))
    }

    /// Concatenates flattened inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            self.check(p)?;
            data.extend_from_slice(self.value(p).data());
        }
        self.push("concat", Tensor::from_vec(data), Op::Concat(parts.to_vec()))
    }

    /// Contiguous sub-vector `[start, start + len)` of a flattened value.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a);
        if start + len > v.numel() {
            return Err(NdError::OutOfRange {
                index: start + len,
                len: v.numel(),
            });
        }
        let out = Tensor::from_vec(v.data()[start..start + len].to_vec());
        self.push("slice", out, Op::Slice(a, start))
    }

    /// Element `index` of a flattened value, as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a);
        if index >= v.numel() {
            return Err(NdError::OutOfRange {
                index,
                len: v.numel(),
            });
        }
        let out = Tensor::scalar(v.data()[index]);
        self.push("pick", out, Op::Pick(a, index))
    }

    /// Row `index` of a matrix `[m, n]`.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a);
        if v.shape().len() != 2 {
            return Err(mismatch("row", v.shape(), &[0, 0]));
        }
        let (m, n) = (v.shape()[0], v.shape()[1]);
        if index >= m {
            return Err(NdError::OutOfRange { index, len: m });
        }
        let out = Tensor::from_vec(v.data()[index * n..(index + 1) * n].to_vec());
        self.push("row", out, Op::Row(a, index))
    }

    /// Stacks equal-length vectors into a `[rows.len(), n]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(NdError::Invalid("stack_rows of nothing".into()));
        }
        let n = self.value(rows[0]).numel();
        let mut data = Vec::with_capacity(n * rows.len());
        for &r in rows {
            self.check(r)?;
            let v = self.value(r);
            if v.numel() != n {
                return Err(mismatch("stack_rows", &[n], v.shape()));
            }
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![rows.len(), n], data)?;
        self.push("stack_rows", out, Op::StackRows(rows.to_vec()))
    }

    /// Sums each row of `[m, n]` into an `[m]` vector.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a);
        if v.shape().len() != 2 {
            return Err(mismatch("row_sum", v.shape(), &[0, 0]));
        }
        let n = v.shape()[1];
        let out: Vec<T> = v
            .data()
            .chunks_exact(n)
            .map(|r| r.iter().copied().sum())
            .collect();
        self.push("row_sum", Tensor::from_vec(out), Op::RowSum(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(a))
    }

    /// 2-D convolution of `x: [C_in, H, W]` with `w: [C_out, C_in, K, K]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (vx, vw) = (self.value(x), self.value(w));
        let (xs, ws) = (vx.shape(), vw.shape());
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] {
            return Err(mismatch("conv2d", xs, ws));
        }
        let k = ws[2];
        let (out_h, out_w) = match (
            kernels::conv_out_len(xs[1], k, stride, pad),
            kernels::conv_out_len(xs[2], k, stride, pad),
        ) {
            (Some(h), Some(w)) => (h, w),
            _ => return Err(mismatch("conv2d", xs, ws)),
        };
        let g = ConvGeom {
            c_in: xs[0],
            c_out: ws[0],
            in_h: xs[1],
            in_w: xs[2],
            out_h,
            out_w,
            kernel: k,
            stride,
            pad,
        };
        let y = kernels::conv2d_forward(vx.data(), vw.data(), &g);
        let out = Tensor::new(vec![g.c_out, out_h, out_w], y)?;
        self.push("conv2d", out, Op::Conv2d(x, w, g))
    }

    /// Transposed convolution: the adjoint of [`Tape::conv2d`]. `x: [C, h, w]`,
    /// `w: [C, C_out, K, K]` (the forward conv's kernel layout), producing
    /// `[C_out, out_h, out_w]`; `out_h`/`out_w` must convolve back to `h`/`w`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
        out_hw: (usize, usize),
    ) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (vx, vw) = (self.value(x), self.value(w));
        let (xs, ws) = (vx.shape(), vw.shape());
        if xs.len() != 3 || ws.len() != 4 || ws[0] != xs[0] || ws[2] != ws[3] {
            return Err(mismatch("conv_transpose2d", xs, ws));
        }
        let k = ws[2];
        let back_h = kernels::conv_out_len(out_hw.0, k, stride, pad);
        let back_w = kernels::conv_out_len(out_hw.1, k, stride, pad);
        if back_h != Some(xs[1]) || back_w != Some(xs[2]) {
            return Err(mismatch("conv_transpose2d", xs, &[out_hw.0, out_hw.1]));
        }
        let g = ConvGeom {
            c_in: ws[1],
            c_out: ws[0],
            in_h: out_hw.0,
            in_w: out_hw.1,
            out_h: xs[1],
            out_w: xs[2],
            kernel: k,
            stride,
            pad,
        };
        let y = kernels::conv2d_grad_input(vx.data(), vw.data(), &g);
        let out = Tensor::new(vec![g.c_in, out_hw.0, out_hw.1], y)?;
        self.push("conv_transpose2d", out, Op::ConvTranspose2d(x, w, g))
    }

    /// Adds `b[c]` to every pixel of channel `c` in `x: [C, H, W]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(b)?;
        let (vx, vb) = (self.value(x), self.value(b));
        if vx.shape().len() != 3 || vb.numel() != vx.shape()[0] {
            return Err(mismatch("channel_bias", vx.shape(), vb.shape()));
        }
        let plane = vx.shape()[1] * vx.shape()[2];
        let mut data = vx.data().to_vec();
        for (chunk, &bv) in data.chunks_exact_mut(plane).zip(vb.data()) {
            for x in chunk {
                *x += bv;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        self.push("channel_bias", out, Op::ChannelBias(x, b))
    }

    /// `Σ softplus(z) − t·z`: Bernoulli cross-entropy of targets `t` against
    /// `sigmoid(z)`, summed. Gradient flows to the logits only.
    pub fn bce_logits(&mut self, logits: Var, target: Var) -> Result<Var> {
        self.check(logits)?;
        self.check(target)?;
        let (vz, vt) = (self.value(logits), self.value(target));
        if vz.numel() != vt.numel() {
            return Err(mismatch("bce_logits", vz.shape(), vt.shape()));
        }
        let s: T = vz
            .data()
            .iter()
            .zip(vt.data())
            .map(|(&z, &t)| softplus(z) - t * z)
            .sum();
        self.push(
            "bce_logits",
            Tensor::scalar(s),
            Op::BceLogits(logits, target),
        )
    }

    /// Replays the tape backward from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NdError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(Tensor::full(lv.shape().to_vec(), T::one()));

        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut param_grads = GradSet::zeros_like(self.params);
        for (pid, bound) in self.bound.iter().enumerate() {
            if let Some(v) = bound {
                if let Some(Some(g)) = grads.get(v.idx) {
                    param_grads.tensors_mut()[pid] = g.clone();
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            node_grads: grads,
            param_grads,
        })
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let gd = g.data();
        let val = |v: Var| &self.nodes[v.idx].value;

        fn acc<T: Real>(
            grads: &mut [Option<Tensor<T>>],
            v: Var,
            shape: &[usize],
            f: impl FnOnce(&mut [T]),
        ) {
            let slot = &mut grads[v.idx];
            if slot.is_none() {
                *slot = Some(Tensor::zeros(shape.to_vec()));
            }
            f(slot.as_mut().unwrap().data_mut());
        }
        fn acc_elem<T: Real>(
            grads: &mut [Option<Tensor<T>>],
            v: Var,
            shape: &[usize],
            src: impl Iterator<Item = T>,
        ) {
            acc(grads, v, shape, |d| {
                for (x, s) in d.iter_mut().zip(src) {
                    *x += s;
                }
            });
        }

        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatVec(w, x) => {
                let (vw, vx) = (val(*w), val(*x));
                let n = vw.shape()[1];
                acc(grads, *w, vw.shape(), |dw| {
                    for (row, &gi) in dw.chunks_exact_mut(n).zip(gd) {
                        for (r, &xj) in row.iter_mut().zip(vx.data()) {
                            *r += gi * xj;
                        }
                    }
                });
                acc(grads, *x, vx.shape(), |dx| {
                    for (row, &gi) in vw.data().chunks_exact(n).zip(gd) {
                        for (d, &wij) in dx.iter_mut().zip(row) {
                            *d += gi * wij;
                        }
                    }
                });
            }
            Op::VecMat(x, w) => {
                let (vw, vx) = (val(*w), val(*x));
                let n = vw.shape()[1];
                acc(grads, *w, vw.shape(), |dw| {
                    for (row, &xi) in dw.chunks_exact_mut(n).zip(vx.data()) {
                        for (r, &gj) in row.iter_mut().zip(gd) {
                            *r += xi * gj;
                        }
                    }
                });
                acc(grads, *x, vx.shape(), |dx| {
                    for (d, row) in dx.iter_mut().zip(vw.data().chunks_exact(n)) {
                        *d += row.iter().zip(gd).map(|(&a, &b)| a * b).sum::<T>();
                    }
                });
            }
            Op::Add(a, b) => {
                acc_elem(grads, *a, out.shape(), gd.iter().copied());
                acc_elem(grads, *b, out.shape(), gd.iter().copied());
            }
            Op::Sub(a, b) => {
                acc_elem(grads, *a, out.shape(), gd.iter().copied());
                acc_elem(grads, *b, out.shape(), gd.iter().map(|&x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc_elem(
                    grads,
                    *a,
                    out.shape(),
                    gd.iter().zip(vb).map(|(&g, &y)| g * y),
                );
                acc_elem(
                    grads,
                    *b,
                    out.shape(),
                    gd.iter().zip(va).map(|(&g, &x)| g * x),
                );
            }
            Op::Div(a, b) => {
                let vb = val(*b).data();
                let o = out.data();
                acc_elem(
                    grads,
                    *a,
                    out.shape(),
                    gd.iter().zip(vb).map(|(&g, &y)| g / y),
                );
                acc_elem(
                    grads,
                    *b,
                    out.shape(),
                    gd.iter().zip(vb).zip(o).map(|((&g, &y), &q)| -g * q / y),
                );
            }
            Op::Scale(a, k) => acc_elem(grads, *a, out.shape(), gd.iter().map(|&g| g * *k)),
            Op::AddScalar(a) => acc_elem(grads, *a, out.shape(), gd.iter().copied()),
            Op::Neg(a) => acc_elem(grads, *a, out.shape(), gd.iter().map(|&g| -g)),
            Op::Sigmoid(a) => acc_elem(
                grads,
                *a,
                out.shape(),
                gd.iter()
                    .zip(out.data())
                    .map(|(&g, &s)| g * s * (T::one() - s)),
            ),
            Op::Tanh(a) => acc_elem(
                grads,
                *a,
                out.shape(),
                gd.iter()
                    .zip(out.data())
                    .map(|(&g, &t)| g * (T::one() - t * t)),
            ),
            Op::Relu(a) => acc_elem(
                grads,
                *a,
                out.shape(),
                gd.iter()
                    .zip(val(*a).data())
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() }),
            ),
            Op::Elu1p(a) => acc_elem(
                grads,
                *a,
                out.shape(),
                gd.iter()
                    .zip(val(*a).data())
                    .zip(out.data())
                    .map(|((&g, &x), &y)| if x >= T::zero() { g } else { g * y }),
            ),
            Op::Exp(a) => acc_elem(
                grads,
                *a,
                out.shape(),
                gd.iter().zip(out.data()).map(|(&g, &y)| g * y),
            ),
            Op::Ln(a) => acc_elem(
                grads,
                *a,
                out.shape(),
                gd.iter().zip(val(*a).data()).map(|(&g, &x)| g / x),
            ),
            Op::Square(a) => acc_elem(
                grads,
                *a,
                out.shape(),
                gd.iter().zip(val(*a).data()).map(|(&g, &x)| g * (x + x)),
            ),
            Op::Softmax(a) => {
                let s = out.data();
                let dot: T = gd.iter().zip(s).map(|(&g, &p)| g * p).sum();
                acc_elem(
                    grads,
                    *a,
                    out.shape(),
                    gd.iter().zip(s).map(|(&g, &p)| p * (g - dot)),
                );
            }
            Op::LogSoftmax(a) => {
                let total: T = gd.iter().copied().sum();
                acc_elem(
                    grads,
                    *a,
                    out.shape(),
                    gd.iter()
                        .zip(out.data())
                        .map(|(&g, &l)| g - l.exp() * total),
                );
            }
            Op::LogSumExp(a) => {
                let g0 = gd[0];
                let p = softmax_slice(val(*a).data());
                acc_elem(grads, *a, val(*a).shape(), p.into_iter().map(|pi| g0 * pi));
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                let va = val(*a);
                acc_elem(grads, *a, va.shape(), std::iter::repeat_n(g0, va.numel()));
            }
            Op::Mean(a) => {
                let va = val(*a);
                let g0 = gd[0] / T::lit(va.numel() as f64);
                acc_elem(grads, *a, va.shape(), std::iter::repeat_n(g0, va.numel()));
            }
            Op::Dot(a, b) => {
                let g0 = gd[0];
                let (va, vb) = (val(*a), val(*b));
                acc_elem(grads, *a, va.shape(), vb.data().iter().map(|&y| g0 * y));
                acc_elem(grads, *b, vb.shape(), va.data().iter().map(|&x| g0 * x));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let vp = val(*p);
                    let n = vp.numel();
                    acc_elem(grads, *p, vp.shape(), gd[off..off + n].iter().copied());
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                let va = val(*a);
                let start = *start;
                acc(grads, *a, va.shape(), |d| {
                    for (x, &gv) in d[start..start + gd.len()].iter_mut().zip(gd) {
                        *x += gv;
                    }
                });
            }
            Op::Pick(a, index) => {
                let va = val(*a);
                let index = *index;
                acc(grads, *a, va.shape(), |d| d[index] += gd[0]);
            }
            Op::Row(a, index) => {
                let va = val(*a);
                let n = va.shape()[1];
                let index = *index;
                acc(grads, *a, va.shape(), |d| {
                    for (x, &gv) in d[index * n..(index + 1) * n].iter_mut().zip(gd) {
                        *x += gv;
                    }
                });
            }
            Op::StackRows(rows) => {
                let n = out.shape()[1];
                for (r, chunk) in rows.iter().zip(gd.chunks_exact(n)) {
                    acc_elem(grads, *r, val(*r).shape(), chunk.iter().copied());
                }
            }
            Op::RowSum(a) => {
                let va = val(*a);
                let n = va.shape()[1];
                acc(grads, *a, va.shape(), |d| {
                    for (row, &gv) in d.chunks_exact_mut(n).zip(gd) {
                        for x in row {
                            *x += gv;
                        }
                    }
                });
            }
            Op::Reshape(a) => acc_elem(grads, *a, val(*a).shape(), gd.iter().copied()),
            Op::Conv2d(x, w, geom) => {
                let (vx, vw) = (val(*x), val(*w));
                let dx = kernels::conv2d_grad_input(gd, vw.data(), geom);
                let dw = kernels::conv2d_grad_weight(gd, vx.data(), geom);
                acc_elem(grads, *x, vx.shape(), dx.into_iter());
                acc_elem(grads, *w, vw.shape(), dw.into_iter());
            }
            Op::ConvTranspose2d(x, w, geom) => {
                let (vx, vw) = (val(*x), val(*w));
                let dx = kernels::conv2d_forward(gd, vw.data(), geom);
                let dw = kernels::conv2d_grad_weight(vx.data(), gd, geom);
                acc_elem(grads, *x, vx.shape(), dx.into_iter());
                acc_elem(grads, *w, vw.shape(), dw.into_iter());
            }
            Op::ChannelBias(x, b) => {
                acc_elem(grads, *x, out.shape(), gd.iter().copied());
                let plane = out.shape()[1] * out.shape()[2];
                let vb = val(*b);
                acc_elem(
                    grads,
                    *b,
                    vb.shape(),
                    gd.chunks_exact(plane).map(|c| c.iter().copied().sum::<T>()),
                );
            }
            Op::BceLogits(z, t) => {
                let g0 = gd[0];
                let (vz, vt) = (val(*z), val(*t));
                acc_elem(
                    grads,
                    *z,
                    vz.shape(),
                    vz.data()
                        .iter()
                        .zip(vt.data())
                        .map(|(&z, &t)| g0 * (sigmoid(z) - t)),
                );
            }
        }
    }
}
