//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass over the
//! parameters of a [`ParamStore`]. Calling [`Graph::backward`] on a scalar
//! node walks the tape in reverse and returns a [`Gradients`] table, which can
//! be folded into the store with [`ParamStore::accumulate`]. Gradients are
//! accumulated additively; callers reset them between optimizer steps.
//!
//! One graph belongs to one thread. Independent samples can be processed in
//! parallel by giving each its own graph over a shared `&ParamStore`.

use std::collections::HashMap;

use super::ops::{self, Activation};
use super::param::{ParamId, ParamStore};
use super::tensor::{fmt_shape, same_shape, Precision, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowVector(Var, Var),
    AddChannelBias(Var, Var),
    Act(Var, Activation),
    Softmax(Var),
    Sum(Var),
    MeanLastAxis(Var),
    Reshape(Var),
    Kronecker(Var, Var),
    WeightedSum(Var, Vec<Var>),
    StApply(Var, Var, Var),
    ChannelMix(Var, Var),
    ShiftLastAxis(Var, usize),
    Mpjpe(Var, Tensor),
    Mae(Var, Tensor, Vec<bool>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    precision: Precision,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var, Vec<usize>)>,
}

impl Gradients {
    /// Gradient with respect to any recorded node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// One entry per parameter touched by the graph; unreached parameters get zeros.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .params
            .iter()
            .map(|(id, v, shape)| {
                let g = self.grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(shape));
                (*id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            precision: store.precision(),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut value = value;
        if self.precision == Precision::Binary32 && value.precision() != Precision::Binary32 {
            value = value.to_precision(Precision::Binary32);
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A non-parameter leaf whose gradient is recorded (see [`Gradients::wrt`]).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// The node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = self.store.value(id).clone();
        let v = self.push(value, Op::Param, true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// `x[r×c] + b[c]`, the bias added to every row.
    pub fn add_row_vector(&mut self, x: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(b);
        let (r, c) = xv.dims2("add_row_vector")?;
        if bv.shape() != [c] {
            return Err(dim_err("add_row_vector", xv, bv));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let out = Tensor::from_parts(vec![r, c], data, xv.precision().join(bv.precision()));
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddRowVector(x, b), rg))
    }

    /// `x[w×…] + b[w]`, one bias per leading-axis slice.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(b);
        let w = xv.shape()[0];
        if bv.shape() != [w] {
            return Err(dim_err("add_channel_bias", xv, bv));
        }
        let inner = xv.len() / w;
        let mut data = xv.data().to_vec();
        for (c, chunk) in data.chunks_mut(inner).enumerate() {
            let bb = bv.data()[c];
            chunk.iter_mut().for_each(|o| *o += bb);
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data, xv.precision().join(bv.precision()));
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddChannelBias(x, b), rg))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        if kind == Activation::Identity {
            return a;
        }
        let out = ops::activation(self.value(a), kind);
        let rg = self.rg(a);
        self.push(out, Op::Act(a, kind), rg)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = ops::softmax(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::from_parts(vec![1], vec![av.sum()], av.precision());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    /// Mean over the last axis: `[…×k] → […]` (a 1-D input yields `[1]`).
    pub fn mean_last_axis(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let k = *av.shape().last().expect("tensor has at least one axis");
        let data: Vec<f64> = av
            .data()
            .chunks(k)
            .map(|c| c.iter().sum::<f64>() / k as f64)
            .collect();
        let shape = if av.ndim() == 1 {
            vec![1]
        } else {
            av.shape()[..av.ndim() - 1].to_vec()
        };
        let out = Tensor::from_parts(shape, data, av.precision());
        let rg = self.rg(a);
        self.push(out, Op::MeanLastAxis(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn kronecker(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::kronecker(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Kronecker(a, b), rg))
    }

    /// `Σᵢ weights[i] · items[i]` over equally shaped items.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let wv = self.value(weights);
        if wv.shape() != [items.len()] {
            return Err(Error::Config(format!(
                "weighted_sum: {} weights for {} items",
                fmt_shape(wv.shape()),
                items.len()
            )));
        }
        let first = self.value(items[0]);
        let shape = first.shape().to_vec();
        let mut precision = wv.precision();
        let mut data = vec![0.0; first.len()];
        for (i, &item) in items.iter().enumerate() {
            let iv = self.value(item);
            same_shape("weighted_sum", first, iv)?;
            precision = precision.join(iv.precision());
            let wi = wv.data()[i];
            for (o, &x) in data.iter_mut().zip(iv.data()) {
                *o += wi * x;
            }
        }
        let out = Tensor::from_parts(shape, data, precision);
        let rg = self.rg(weights) || items.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::WeightedSum(weights, items.to_vec()), rg))
    }

    /// Per-channel `spatial · h[c] · temporalᵀ`; see [`ops::st_apply`].
    pub fn st_apply(&mut self, spatial: Var, temporal: Var, h: Var) -> Result<Var> {
        let out = ops::st_apply(self.value(spatial), self.value(temporal), self.value(h))?;
        let rg = self.rg(spatial) || self.rg(temporal) || self.rg(h);
        Ok(self.push(out, Op::StApply(spatial, temporal, h), rg))
    }

    /// Mixes the leading (channel) axis: `out[o, …] = Σ_c weight[c, o] · x[c, …]`.
    pub fn channel_mix(&mut self, x: Var, weight: Var) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(weight);
        let (w_in, w_out) = wv.dims2("channel_mix")?;
        if xv.shape()[0] != w_in {
            return Err(dim_err("channel_mix", xv, wv));
        }
        let inner = xv.len() / w_in;
        let mut data = vec![0.0; w_out * inner];
        ops::matmul_tn_into(wv.data(), xv.data(), &mut data, w_in, w_out, inner);
        let mut shape = xv.shape().to_vec();
        shape[0] = w_out;
        let out = Tensor::from_parts(shape, data, xv.precision().join(wv.precision()));
        let rg = self.rg(x) || self.rg(weight);
        Ok(self.push(out, Op::ChannelMix(x, weight), rg))
    }

    /// Delays the last axis by `shift` steps, filling the front with zeros.
    pub fn shift_last_axis(&mut self, x: Var, shift: usize) -> Var {
        if shift == 0 {
            return x;
        }
        let xv = self.value(x);
        let t = *xv.shape().last().expect("non-empty shape");
        let mut data = vec![0.0; xv.len()];
        for (dst, src) in data.chunks_mut(t).zip(xv.data().chunks(t)) {
            if shift < t {
                dst[shift..].copy_from_slice(&src[..t - shift]);
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data, xv.precision());
        let rg = self.rg(x);
        self.push(out, Op::ShiftLastAxis(x, shift), rg)
    }

    /// Mean per-joint Euclidean error for channel-major `[C×N×t]` predictions.
    pub fn mpjpe_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let pv = self.value(pred);
        same_shape("mpjpe_loss", pv, target)?;
        let (c, n, t) = pv.dims3("mpjpe_loss")?;
        let mut total = 0.0;
        for j in 0..n {
            for f in 0..t {
                let mut sq = 0.0;
                for ch in 0..c {
                    let k = (ch * n + j) * t + f;
                    let d = pv.data()[k] - target.data()[k];
                    sq += d * d;
                }
                total += sq.sqrt();
            }
        }
        let out = Tensor::from_parts(vec![1], vec![total / (n * t) as f64], pv.precision());
        let rg = self.rg(pred);
        Ok(self.push(out, Op::Mpjpe(pred, target.clone()), rg))
    }

    /// Mean absolute error over the joints selected by `joint_mask`, `[C×N×t]` layout.
    pub fn mae_loss(&mut self, pred: Var, target: &Tensor, joint_mask: &[bool]) -> Result<Var> {
        let pv = self.value(pred);
        same_shape("mae_loss", pv, target)?;
        let (c, n, t) = pv.dims3("mae_loss")?;
        if joint_mask.len() != n {
            return Err(Error::Config(format!(
                "mae_loss: mask covers {} joints, prediction has {n}",
                joint_mask.len()
            )));
        }
        let count = c * t * joint_mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Config("mae_loss: mask selects no joints".into()));
        }
        let mut total = 0.0;
        for ch in 0..c {
            for (j, _) in joint_mask.iter().enumerate().filter(|(_, &m)| m) {
                for f in 0..t {
                    let k = (ch * n + j) * t + f;
                    total += (pv.data()[k] - target.data()[k]).abs();
                }
            }
        }
        let out = Tensor::from_parts(vec![1], vec![total / count as f64], pv.precision());
        let rg = self.rg(pred);
        Ok(self.push(out, Op::Mae(pred, target.clone(), joint_mask.to_vec()), rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {}",
                fmt_shape(lv.shape())
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            for (parent, contrib) in self.node_backward(i, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        let params = self
            .param_vars
            .iter()
            .map(|(&id, &v)| (id, v, self.value(v).shape().to_vec()))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn node_backward(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let y = &node.value;
        let p = Precision::Binary64;
        let out = match &node.op {
            Op::Leaf | Op::Param => vec![],
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                let mut ga = vec![0.0; m * k];
                ops::matmul_nt_into(g.data(), bv.data(), &mut ga, m, n, k);
                let mut gb = vec![0.0; k * n];
                ops::matmul_tn_into(av.data(), g.data(), &mut gb, m, k, n);
                vec![
                    (*a, Tensor::from_parts(vec![m, k], ga, p)),
                    (*b, Tensor::from_parts(vec![k, n], gb, p)),
                ]
            }
            Op::Transpose(a) => vec![(*a, g.transpose()?)],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(self.value(*b), "mul", |x, y| x * y)?),
                (*b, g.zip_map(self.value(*a), "mul", |x, y| x * y)?),
            ],
            Op::Scale(a, c) => vec![(*a, g.scale(*c))],
            Op::AddRowVector(x, b) => {
                let c = g.shape()[1];
                let mut gb = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (o, &v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                vec![(*x, g.clone()), (*b, Tensor::from_parts(vec![c], gb, p))]
            }
            Op::AddChannelBias(x, b) => {
                let w = g.shape()[0];
                let inner = g.len() / w;
                let gb: Vec<f64> = g.data().chunks(inner).map(|c| c.iter().sum()).collect();
                vec![(*x, g.clone()), (*b, Tensor::from_parts(vec![w], gb, p))]
            }
            Op::Act(a, kind) => {
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gg, &yy)| gg * kind.derivative_from_output(yy))
                    .collect();
                vec![(*a, Tensor::from_parts(g.shape().to_vec(), data, p))]
            }
            Op::Softmax(a) => {
                let dot: f64 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gg, &yy)| yy * (gg - dot))
                    .collect();
                vec![(*a, Tensor::from_parts(g.shape().to_vec(), data, p))]
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                vec![(*a, Tensor::full(&shape, g.data()[0]))]
            }
            Op::MeanLastAxis(a) => {
                let av = self.value(*a);
                let k = *av.shape().last().unwrap();
                let mut data = Vec::with_capacity(av.len());
                for &gg in g.data() {
                    data.extend(std::iter::repeat_n(gg / k as f64, k));
                }
                vec![(*a, Tensor::from_parts(av.shape().to_vec(), data, p))]
            }
            Op::Reshape(a) => vec![(*a, g.reshape(self.value(*a).shape())?)],
            Op::Kronecker(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (pp, q) = (av.shape()[0], av.shape()[1]);
                let (r, s) = (bv.shape()[0], bv.shape()[1]);
                let cols = q * s;
                let mut ga = vec![0.0; pp * q];
                let mut gb = vec![0.0; r * s];
                for ii in 0..pp {
                    for j in 0..q {
                        let aij = av.data()[ii * q + j];
                        for u in 0..r {
                            for v in 0..s {
                                let gv = g.data()[(ii * r + u) * cols + j * s + v];
                                ga[ii * q + j] += gv * bv.data()[u * s + v];
                                gb[u * s + v] += gv * aij;
                            }
                        }
                    }
                }
                vec![
                    (*a, Tensor::from_parts(vec![pp, q], ga, p)),
                    (*b, Tensor::from_parts(vec![r, s], gb, p)),
                ]
            }
            Op::WeightedSum(w, items) => {
                let wv = self.value(*w);
                let mut out = Vec::with_capacity(items.len() + 1);
                let mut gw = vec![0.0; items.len()];
                for (k, item) in items.iter().enumerate() {
                    let iv = self.value(*item);
                    gw[k] = g.data().iter().zip(iv.data()).map(|(a, b)| a * b).sum();
                    out.push((*item, g.scale(wv.data()[k]).to_precision(p)));
                }
                out.push((*w, Tensor::from_parts(vec![items.len()], gw, p)));
                out
            }
            Op::StApply(s, t, h) => {
                let sv = self.value(*s);
                let tv = self.value(*t);
                let hv = self.value(*h);
                let (w, n, tt) = (hv.shape()[0], hv.shape()[1], hv.shape()[2]);
                let mut gs = vec![0.0; n * n];
                let mut gt = vec![0.0; tt * tt];
                let mut gh = vec![0.0; w * n * tt];
                let mut tmp = vec![0.0; n * tt];
                for c in 0..w {
                    let range = c * n * tt..(c + 1) * n * tt;
                    let gc = &g.data()[range.clone()];
                    let hc = &hv.data()[range.clone()];
                    // G·T  [n×tt]
                    tmp.iter_mut().for_each(|x| *x = 0.0);
                    ops::matmul_into(gc, tv.data(), &mut tmp, n, tt, tt);
                    // dS += (G·T)·Hᵀ
                    ops::matmul_nt_into(&tmp, hc, &mut gs, n, tt, n);
                    // dH = Sᵀ·(G·T)
                    ops::matmul_tn_into(sv.data(), &tmp, &mut gh[range], n, n, tt);
                    // dT += Gᵀ·(S·H)
                    tmp.iter_mut().for_each(|x| *x = 0.0);
                    ops::matmul_into(sv.data(), hc, &mut tmp, n, n, tt);
                    ops::matmul_tn_into(gc, &tmp, &mut gt, n, tt, tt);
                }
                vec![
                    (*s, Tensor::from_parts(vec![n, n], gs, p)),
                    (*t, Tensor::from_parts(vec![tt, tt], gt, p)),
                    (*h, Tensor::from_parts(vec![w, n, tt], gh, p)),
                ]
            }
            Op::ChannelMix(x, weight) => {
                let xv = self.value(*x);
                let wv = self.value(*weight);
                let (w_in, w_out) = (wv.shape()[0], wv.shape()[1]);
                let inner = xv.len() / w_in;
                let mut gx = vec![0.0; xv.len()];
                ops::matmul_into(wv.data(), g.data(), &mut gx, w_in, w_out, inner);
                let mut gw = vec![0.0; w_in * w_out];
                ops::matmul_nt_into(xv.data(), g.data(), &mut gw, w_in, inner, w_out);
                vec![
                    (*x, Tensor::from_parts(xv.shape().to_vec(), gx, p)),
                    (*weight, Tensor::from_parts(vec![w_in, w_out], gw, p)),
                ]
            }
            Op::ShiftLastAxis(x, shift) => {
                let t = *g.shape().last().unwrap();
                let mut data = vec![0.0; g.len()];
                for (dst, src) in data.chunks_mut(t).zip(g.data().chunks(t)) {
                    if *shift < t {
                        dst[..t - shift].copy_from_slice(&src[*shift..]);
                    }
                }
                vec![(*x, Tensor::from_parts(g.shape().to_vec(), data, p))]
            }
            Op::Mpjpe(pred, target) => {
                let pv = self.value(*pred);
                let (c, n, t) = (pv.shape()[0], pv.shape()[1], pv.shape()[2]);
                let scale = g.data()[0] / (n * t) as f64;
                let mut data = vec![0.0; pv.len()];
                for j in 0..n {
                    for f in 0..t {
                        let norm = (0..c)
                            .map(|ch| {
                                let k = (ch * n + j) * t + f;
                                let d = pv.data()[k] - target.data()[k];
                                d * d
                            })
                            .sum::<f64>()
                            .sqrt();
                        if norm == 0.0 {
                            continue;
                        }
                        for ch in 0..c {
                            let k = (ch * n + j) * t + f;
                            data[k] = scale * (pv.data()[k] - target.data()[k]) / norm;
                        }
                    }
                }
                vec![(*pred, Tensor::from_parts(pv.shape().to_vec(), data, p))]
            }
            Op::Mae(pred, target, mask) => {
                let pv = self.value(*pred);
                let (c, n, t) = (pv.shape()[0], pv.shape()[1], pv.shape()[2]);
                let count = c * t * mask.iter().filter(|&&m| m).count();
                let scale = g.data()[0] / count as f64;
                let mut data = vec![0.0; pv.len()];
                for ch in 0..c {
                    for (j, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                        for f in 0..t {
                            let k = (ch * n + j) * t + f;
                            let d = pv.data()[k] - target.data()[k];
                            data[k] = if d > 0.0 {
                                scale
                            } else if d < 0.0 {
                                -scale
                            } else {
                                0.0
                            };
                        }
                    }
                }
                vec![(*pred, Tensor::from_parts(pv.shape().to_vec(), data, p))]
            }
        };
        Ok(out)
    }
}

fn dim_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op: op.to_string(),
        left: fmt_shape(a.shape()),
        right: fmt_shape(b.shape()),
    }
}

/// Runs one forward/backward pass and folds the parameter gradients into `store`.
///
/// Returns the loss value.
pub fn backward_into<F>(store: &mut ParamStore, build: F) -> Result<f64>
where
    F: FnOnce(&mut Graph) -> Result<Var>,
{
    let (loss, grads) = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        let grads = g.backward(loss)?;
        (g.value(loss).data()[0], grads.param_grads())
    };
    store.accumulate(&grads);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::tensor::Tensor;

    #[test]
    fn linear_map_gradient() {
        let mut store = ParamStore::new(Precision::Binary64);
        let w = store
            .add("w", Tensor::matrix(&[[0.3, -0.1], [2.0, 0.5], [1.0, 1.0]]))
            .unwrap();
        backward_into(&mut store, |g| {
            let wv = g.param(w);
            let x = g.constant(Tensor::matrix(&[[1.0], [2.0]]));
            let y = g.matmul(wv, x)?;
            Ok(g.sum(y))
        })
        .unwrap();
        for row in store.get(w).grad.data().chunks(2) {
            assert_eq!(row, &[1.0, 2.0]);
        }
    }

    #[test]
    fn softmax_first_entry_gradient() {
        let store = ParamStore::new(Precision::Binary64);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::vector(&[0.0, 0.0]));
        let s = g.softmax(x).unwrap();
        let pick = g.constant(Tensor::vector(&[1.0, 0.0]));
        let prod = g.mul(s, pick).unwrap();
        let loss = g.sum(prod);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.25, -0.25]);
    }

    #[test]
    fn backward_requires_scalar() {
        let store = ParamStore::new(Precision::Binary64);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::vector(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn gradients_accumulate_additively() {
        let mut store = ParamStore::new(Precision::Binary64);
        let p = store.add("p", Tensor::vector(&[3.0])).unwrap();
        for _ in 0..2 {
            backward_into(&mut store, |g| {
                let v = g.param(p);
                let sq = g.mul(v, v)?;
                Ok(g.sum(sq))
            })
            .unwrap();
        }
        assert_eq!(store.get(p).grad.data(), &[12.0]);
        store.zero_grad();
        assert_eq!(store.get(p).grad.data(), &[0.0]);
    }

    #[test]
    fn shift_delays_and_zero_fills() {
        let store = ParamStore::new(Precision::Binary64);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::new(vec![2, 4], (1..=8).map(f64::from).collect()).unwrap());
        let y = g.shift_last_axis(x, 2);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 5.0, 6.0]);
    }

    #[test]
    fn binary32_graph_rounds_outputs() {
        let mut store = ParamStore::new(Precision::Binary32);
        let p = store.add("p", Tensor::vector(&[0.1])).unwrap();
        let mut g = Graph::new(&store);
        let v = g.param(p);
        let y = g.scale(v, 3.0);
        let got = g.value(y).data()[0];
        assert_eq!(got, got as f32 as f64);
        assert_eq!(g.value(y).precision(), Precision::Binary32);
    }
}
