//! Parameterised building blocks. Each layer only holds [`ParamId`]s; values
//! live in the [`ParamStore`] the tape is bound to.

use rand::Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("shape product")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(
            format!("{name}.w"),
            uniform(rng, vec![out_dim, in_dim], in_dim),
        )?;
        let b = store.add(format!("{name}.b"), uniform(rng, vec![out_dim], in_dim))?;
        Ok(Self {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = t.param(self.w)?;
        let b = t.param(self.b)?;
        let y = t.matvec(w, x)?;
        t.add(y, b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = c_in * kernel * kernel;
        let w = store.add(
            format!("{name}.w"),
            uniform(rng, vec![c_out, c_in, kernel, kernel], fan_in),
        )?;
        let b = store.add(format!("{name}.b"), uniform(rng, vec![c_out], fan_in))?;
        Ok(Self { w, b, stride, pad })
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = t.param(self.w)?;
        let b = t.param(self.b)?;
        let y = t.conv2d(x, w, self.stride, self.pad)?;
        t.channel_bias(y, b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvTranspose2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = c_in * kernel * kernel;
        let w = store.add(
            format!("{name}.w"),
            uniform(rng, vec![c_in, c_out, kernel, kernel], fan_in),
        )?;
        let b = store.add(format!("{name}.b"), uniform(rng, vec![c_out], fan_in))?;
        Ok(Self { w, b, stride, pad })
    }

    pub fn forward<T: Real>(
        &self,
        t: &mut Tape<'_, T>,
        x: Var,
        out_hw: (usize, usize),
    ) -> Result<Var> {
        let w = t.param(self.w)?;
        let b = t.param(self.b)?;
        let y = t.conv_transpose2d(x, w, self.stride, self.pad, out_hw)?;
        t.channel_bias(y, b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let table = store.add(format!("{name}.table"), uniform(rng, vec![vocab, dim], 1))?;
        Ok(Self { table, vocab, dim })
    }

    pub fn lookup<T: Real>(&self, t: &mut Tape<'_, T>, token: usize) -> Result<Var> {
        let table = t.param(self.table)?;
        t.row(table, token)
    }
}

/// Hidden and cell state of an LSTM.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Single LSTM cell with gates laid out `[input, forget, cell, output]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_dim + hidden;
        let w = store.add(
            format!("{name}.w"),
            uniform(rng, vec![4 * hidden, fan_in], fan_in),
        )?;
        let mut bias: Tensor<T> = uniform(rng, vec![4 * hidden], fan_in);
        for x in &mut bias.data_mut()[hidden..2 * hidden] {
            *x = T::one();
        }
        let b = store.add(format!("{name}.b"), bias)?;
        Ok(Self {
            w,
            b,
            in_dim,
            hidden,
        })
    }

    pub fn zero_state<T: Real>(&self, t: &mut Tape<'_, T>) -> Result<LstmState> {
        let h = t.input(Tensor::zeros(vec![self.hidden]))?;
        let c = t.input(Tensor::zeros(vec![self.hidden]))?;
        Ok(LstmState { h, c })
    }

    pub fn step<T: Real>(
        &self,
        t: &mut Tape<'_, T>,
        x: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        let n = self.hidden;
        let xh = t.concat(&[x, state.h])?;
        let w = t.param(self.w)?;
        let b = t.param(self.b)?;
        let z = t.matvec(w, xh)?;
        let z = t.add(z, b)?;
        let i = t.slice(z, 0, n)?;
        let f = t.slice(z, n, n)?;
        let g = t.slice(z, 2 * n, n)?;
        let o = t.slice(z, 3 * n, n)?;
        let i = t.sigmoid(i)?;
        let f = t.sigmoid(f)?;
        let g = t.tanh(g)?;
        let o = t.sigmoid(o)?;
        let keep = t.mul(f, state.c)?;
        let write = t.mul(i, g)?;
        let c = t.add(keep, write)?;
        let tc = t.tanh(c)?;
        let h = t.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}
