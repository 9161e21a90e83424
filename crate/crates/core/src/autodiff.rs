//! Eager, tape-based reverse-mode differentiation.
//!
//! Every operation evaluates immediately and appends a node to the [`Tape`];
//! [`Tape::backward`] walks the nodes in reverse recording order, so the
//! tape is topologically sorted by construction.

use crate::error::{contract_err, dim_err, Error, Result};
use crate::kernels;
use crate::tensor::{Element, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    LeakyRelu(Var, T),
    Tanh(Var),
    Sqrt(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Upsample(Var),
    Sum(Var),
    Mean(Var),
    Clamp(Var, T, T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], one slot per node.
pub struct Gradients<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.slots.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.slots.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Broadcast a one-element operand against a full tensor.
fn binary<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T, op: &str) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    if b.is_scalar() {
        let s = b.data()[0];
        return Ok(a.map(|v| f(v, s)));
    }
    if a.is_scalar() {
        let s = a.data()[0];
        return Ok(b.map(|v| f(s, v)));
    }
    Err(dim_err!("{op}: shape {:?} vs {:?}", a.shape(), b.shape()))
}

/// Reduce a gradient back to the shape of an operand that may have been broadcast.
fn unbroadcast<T: Element>(g: Tensor<T>, like: &Tensor<T>) -> Tensor<T> {
    if g.shape() == like.shape() {
        g
    } else {
        Tensor::from_parts(like.shape().to_vec(), vec![g.sum()])
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!("non-finite value produced by {}", op_name(&op))));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Copy of `v`'s value as a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary(self.value(a), self.value(b), |x, y| x + y, "add")?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary(self.value(a), self.value(b), |x, y| x - y, "sub")?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary(self.value(a), self.value(b), |x, y| x * y, "mul")?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let rg = self.rg(input) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
            rg,
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        let out = self.value(a).map(|v| if v >= T::zero() { v } else { v * slope });
        let rg = self.rg(a);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.leaky_relu(a, T::zero())
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.tanh());
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| v < T::zero()) {
            return Err(contract_err!("sqrt of negative value"));
        }
        let out = self.value(a).map(|v| v.sqrt());
        let rg = self.rg(a);
        self.push(out, Op::Sqrt(a), rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let parts: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat(&parts, axis)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        )
    }

    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.value(input).narrow(axis, start, len)?;
        let rg = self.rg(input);
        self.push(out, Op::Narrow { input, axis, start }, rg)
    }

    /// Top-left spatial crop of an NCHW node.
    pub fn crop(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let (_, _, ih, iw) = self.value(input).dims4()?;
        if ih == h && iw == w {
            return Ok(input);
        }
        let rows = self.narrow(input, 2, 0, h)?;
        self.narrow(rows, 3, 0, w)
    }

    pub fn upsample_bilinear(&mut self, a: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = kernels::upsample_bilinear(self.value(a), out_h, out_w)?;
        let rg = self.rg(a);
        self.push(out, Op::Upsample(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(lo).min(hi));
        let rg = self.rg(a);
        self.push(out, Op::Clamp(a, lo, hi), rg)
    }

    /// Reverse sweep from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            ));
        }
        let mut slots: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        slots[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![T::one()]));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = slots[idx].take() else {
                continue;
            };
            self.propagate(idx, g, &mut slots)?;
        }
        // only leaves keep gradients
        for (i, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                slots[i] = None;
            }
        }
        Ok(Gradients { slots })
    }

    fn accumulate(&self, slots: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.rg(v) {
            return Ok(());
        }
        match &mut slots[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, idx: usize, g: Tensor<T>, slots: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*b) {
                    self.accumulate(slots, *b, unbroadcast(g.clone(), bv))?;
                }
                self.accumulate(slots, *a, unbroadcast(g, av))?;
            }
            Op::Sub(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*b) {
                    self.accumulate(slots, *b, unbroadcast(g.map(|v| -v), bv))?;
                }
                self.accumulate(slots, *a, unbroadcast(g, av))?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let ga = binary(&g, bv, |x, y| x * y, "mul backward")?;
                    self.accumulate(slots, *a, unbroadcast(ga, av))?;
                }
                if self.rg(*b) {
                    let gb = binary(&g, av, |x, y| x * y, "mul backward")?;
                    self.accumulate(slots, *b, unbroadcast(gb, bv))?;
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(slots, *a, g.map(|v| v * s))?;
            }
            Op::AddScalar(a) => self.accumulate(slots, *a, g)?,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let grads = kernels::conv2d_backward(self.value(*input), self.value(*kernel), &g, *stride, *pad)?;
                self.accumulate(slots, *input, grads.input)?;
                self.accumulate(slots, *kernel, grads.kernel)?;
                if let Some(b) = bias {
                    self.accumulate(slots, *b, grads.bias)?;
                }
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                let ga = g.zip_map(self.value(*a), |gv, x| if x >= T::zero() { gv } else { gv * slope })?;
                self.accumulate(slots, *a, ga)?;
            }
            Op::Tanh(a) => {
                let ga = g.zip_map(&node.value, |gv, y| gv * (T::one() - y * y))?;
                self.accumulate(slots, *a, ga)?;
            }
            Op::Sqrt(a) => {
                let two = T::of(2.0);
                let ga = g.zip_map(&node.value, |gv, y| gv / (two * y))?;
                if !ga.all_finite() {
                    return Err(Error::Numeric("sqrt backward at zero".into()));
                }
                self.accumulate(slots, *a, ga)?;
            }
            Op::Concat { inputs, axis } => {
                let mut start = 0;
                for &v in inputs {
                    let len = self.value(v).shape()[*axis];
                    if self.rg(v) {
                        self.accumulate(slots, v, g.narrow(*axis, start, len)?)?;
                    }
                    start += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                let src = self.value(*input);
                let shape = src.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let extent = shape[*axis];
                let len = g.shape()[*axis];
                let mut full = vec![T::zero(); src.len()];
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let s = o * len * inner;
                    full[dst..dst + len * inner].copy_from_slice(&g.data()[s..s + len * inner]);
                }
                self.accumulate(slots, *input, Tensor::from_parts(shape.to_vec(), full))?;
            }
            Op::Upsample(a) => {
                let (_, _, h, w) = self.value(*a).dims4()?;
                let ga = kernels::upsample_bilinear_backward(&g, h, w)?;
                self.accumulate(slots, *a, ga)?;
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.accumulate(slots, *a, Tensor::full(self.value(*a).shape().to_vec(), gv))?;
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let gv = g.data()[0] / T::of(av.len() as f64);
                self.accumulate(slots, *a, Tensor::full(av.shape().to_vec(), gv))?;
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let ga = g.zip_map(self.value(*a), |gv, x| if x >= lo && x <= hi { gv } else { T::zero() })?;
                self.accumulate(slots, *a, ga)?;
            }
        }
        Ok(())
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::Conv2d { .. } => "conv2d",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Tanh(..) => "tanh",
        Op::Sqrt(..) => "sqrt",
        Op::Concat { .. } => "concat",
        Op::Narrow { .. } => "narrow",
        Op::Upsample(..) => "upsample_bilinear",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::Clamp(..) => "clamp",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_fn([2, 3, 4], |i| i as f64)).unwrap();
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones([2, 3, 4]));
    }

    #[test]
    fn zero_scale_gives_zero_grad() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_fn([5], |i| i as f64)).unwrap();
        let y = tape.scale(x, 0.0).unwrap();
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::zeros([5]));
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::ones([3])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap()).unwrap();
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let y = tape.constant(Tensor::scalar(-1.0)).unwrap();
        let l = tape.leaky_relu(y, 0.2).unwrap();
        assert!((tape.value(l).data()[0] + 0.2).abs() < 1e-7);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let mut tape = Tape::<f32>::new();
        let t = Tensor::from_fn([3, 4], |i| i as f32 - 5.0);
        let a = tape.constant(t.clone()).unwrap();
        let b = tape.constant(Tensor::ones([3, 4])).unwrap();
        let m = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(m), &t);
    }

    #[test]
    fn scalar_broadcast_and_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::from_fn([2, 2], |i| i as f64)).unwrap();
        let s = tape.param(Tensor::scalar(3.0)).unwrap();
        let m = tape.mul(a, s).unwrap();
        assert_eq!(tape.value(m).data(), &[0.0, 3.0, 6.0, 9.0]);
        let bad = tape.constant(Tensor::zeros([3])).unwrap();
        assert!(matches!(tape.add(a, bad), Err(Error::Dimension(_))));
        let l = tape.sum(m).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(s).unwrap().data(), &[6.0]);
        assert_eq!(g.get(a).unwrap().data(), &[3.0; 4]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::ones([2])).unwrap();
        let c = tape.constant(Tensor::ones([2])).unwrap();
        let m = tape.mul(a, c).unwrap();
        let l = tape.sum(m).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(m).is_none());
        assert!(g.get(a).is_some());
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut tape = Tape::<f32>::new();
        assert!(matches!(
            tape.constant(Tensor::full([2], f32::NAN)),
            Err(Error::Numeric(_))
        ));
    }
}
