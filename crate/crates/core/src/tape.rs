//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! append one node each and return a [`Var`] handle; [`Tape::backward`]
//! replays the recorded nodes in reverse order. Leaf gradients accumulate
//! across calls until [`Tape::zero_grad`].

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward rule sees: the op's inputs, its output and the upstream
/// gradient of the output.
pub struct BackwardCtx<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
}

/// Returns one optional gradient per input, in input order.
pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwKind {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Abs,
}

impl EwKind {
    fn is_binary(self) -> bool {
        matches!(self, EwKind::Add | EwKind::Sub | EwKind::Mul)
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Node {
            value,
            inputs: Vec::new(),
            requires_grad,
            backward: None,
        })
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.leaf_grads[v.0].take()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Records a custom differentiable operation whose forward value has
    /// already been computed by the caller.
    pub fn record(
        &mut self,
        inputs: &[Var],
        value: Tensor<T>,
        backward: impl Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Node {
            value,
            inputs: inputs.to_vec(),
            requires_grad,
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn<T>),
        })
    }

    /// Populates leaf gradients with d(root)/d(leaf), adding to whatever
    /// earlier calls left there.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::ones(root_value.shape()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let Some(rule) = &node.backward else {
                if node.requires_grad {
                    accumulate(&mut self.leaf_grads[i], g);
                }
                continue;
            };
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                output: &node.value,
                grad: &g,
            };
            let input_grads = rule(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (inp, gi) in node.inputs.iter().zip(input_grads) {
                if let Some(gi) = gi {
                    if self.nodes[inp.0].requires_grad {
                        debug_assert_eq!(gi.shape(), self.nodes[inp.0].value.shape());
                        accumulate(&mut grads[inp.0], gi);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::dim(format!("matmul of {:?} and {:?}", av.shape(), bv.shape())));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = matmul_nn(av.data(), bv.data(), m, k, n);
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.record(&[a, b], value, move |ctx| {
            let (a, b, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let da = matmul_nt(g, b, m, n, k);
            let db = matmul_tn(a, g, k, m, n);
            vec![
                Some(Tensor::new(&[m, k], da).unwrap()),
                Some(Tensor::new(&[k, n], db).unwrap()),
            ]
        }))
    }

    /// Elementwise operation. Binary kinds broadcast extents of 1.
    pub fn ew(&mut self, kind: EwKind, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(kind, a, b),
            (false, None) => Ok(self.unary(kind, a)),
            (true, None) => Err(Error::Contract(format!("{kind:?} needs two operands"))),
            (false, Some(_)) => Err(Error::Contract(format!("{kind:?} takes one operand"))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(EwKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(EwKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(EwKind::Mul, a, b)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(EwKind::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(EwKind::Tanh, a)
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(EwKind::Abs, a)
    }

    fn unary(&mut self, kind: EwKind, a: Var) -> Var {
        let f = match kind {
            EwKind::Sigmoid => sigmoid::<T>,
            EwKind::Tanh => <T as num_traits::Float>::tanh,
            EwKind::Abs => <T as num_traits::Float>::abs,
            _ => unreachable!(),
        };
        let value = self.value(a).map(f);
        self.record(&[a], value, move |ctx| {
            let (x, y, g) = (ctx.inputs[0].data(), ctx.output.data(), ctx.grad.data());
            let dx = match kind {
                EwKind::Sigmoid => y.iter().zip(g).map(|(&y, &g)| g * y * (T::one() - y)).collect(),
                EwKind::Tanh => y.iter().zip(g).map(|(&y, &g)| g * (T::one() - y * y)).collect(),
                _ => x.iter().zip(g).map(|(&x, &g)| g * sign(x)).collect(),
            };
            vec![Some(Tensor::new(ctx.output.shape(), dx).unwrap())]
        })
    }

    fn binary(&mut self, kind: EwKind, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let bc = Broadcast::new(av.shape(), bv.shape())?;
        let f = match kind {
            EwKind::Add => |x: T, y: T| x + y,
            EwKind::Sub => |x: T, y: T| x - y,
            EwKind::Mul => |x: T, y: T| x * y,
            _ => unreachable!(),
        };
        let out = bc.apply(av.data(), bv.data(), f);
        let value = Tensor::new(&bc.out_shape, out)?;
        Ok(self.record(&[a, b], value, move |ctx| {
            let (x, y, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad.data());
            let mut dx = x.zeros_like();
            let mut dy = y.zeros_like();
            {
                let (dxd, dyd) = (dx.data_mut(), dy.data_mut());
                let (xd, yd) = (x.data(), y.data());
                bc.for_each(|o, ia, ib| match kind {
                    EwKind::Add => {
                        dxd[ia] += g[o];
                        dyd[ib] += g[o];
                    }
                    EwKind::Sub => {
                        dxd[ia] += g[o];
                        dyd[ib] -= g[o];
                    }
                    _ => {
                        dxd[ia] += g[o] * yd[ib];
                        dyd[ib] += g[o] * xd[ia];
                    }
                });
            }
            vec![Some(dx), Some(dy)]
        }))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.record(&[a], value, move |ctx| vec![Some(ctx.grad.map(|g| g * factor))])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let values: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let extents: Vec<usize> = values
            .iter()
            .map(|v| v.shape().get(axis).copied().unwrap_or(0))
            .collect();
        let value = Tensor::concat(&values, axis)?;
        Ok(self.record(parts, value, move |ctx| {
            let mut start = 0;
            extents
                .iter()
                .map(|&e| {
                    let s = ctx.grad.slice_axis(axis, start, e).unwrap();
                    start += e;
                    Some(s)
                })
                .collect()
        }))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = self.value(a).slice_axis(axis, start, len)?;
        let in_shape = self.value(a).shape().to_vec();
        Ok(self.record(&[a], value, move |ctx| {
            let outer: usize = in_shape[..axis].iter().product();
            let inner: usize = in_shape[axis + 1..].iter().product();
            let extent = in_shape[axis];
            let mut dx = Tensor::zeros(&in_shape);
            let g = ctx.grad.data();
            let d = dx.data_mut();
            for o in 0..outer {
                let src = o * len * inner;
                let dst = (o * extent + start) * inner;
                d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            vec![Some(dx)]
        }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let in_shape = self.value(a).shape().to_vec();
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.record(&[a], value, move |ctx| {
            vec![Some(ctx.grad.clone().reshape(&in_shape).unwrap())]
        }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let shape = self.value(a).shape().to_vec();
        self.record(&[a], value, move |ctx| {
            vec![Some(Tensor::full(&shape, ctx.grad.data()[0]))]
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::c(n as f64))
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Index mapping for numpy-style broadcasting between two shapes.
struct Broadcast {
    out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    same: bool,
}

impl Broadcast {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (a, b) = (pad(a), pad(b));
        let mut out_shape = Vec::with_capacity(rank);
        for (&x, &y) in a.iter().zip(&b) {
            if x != y && x != 1 && y != 1 {
                return Err(Error::dim(format!("cannot broadcast {a:?} with {b:?}")));
            }
            out_shape.push(x.max(y));
        }
        let strides = |s: &[usize]| {
            let mut st = vec![0; rank];
            let mut acc = 1;
            for d in (0..rank).rev() {
                st[d] = if s[d] == 1 { 0 } else { acc };
                acc *= s[d];
            }
            st
        };
        Ok(Self {
            same: a == b,
            a_strides: strides(&a),
            b_strides: strides(&b),
            out_shape,
        })
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n: usize = self.out_shape.iter().product();
        if self.same {
            (0..n).for_each(|i| f(i, i, i));
            return;
        }
        let rank = self.out_shape.len();
        let mut idx = vec![0usize; rank];
        let (mut ia, mut ib) = (0usize, 0usize);
        for o in 0..n {
            f(o, ia, ib);
            for d in (0..rank).rev() {
                idx[d] += 1;
                ia += self.a_strides[d];
                ib += self.b_strides[d];
                if idx[d] < self.out_shape[d] {
                    break;
                }
                ia -= self.a_strides[d] * idx[d];
                ib -= self.b_strides[d] * idx[d];
                idx[d] = 0;
            }
        }
    }

    fn apply<T: Real>(&self, a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
        let mut out = Vec::with_capacity(self.out_shape.iter().product());
        self.for_each(|_, ia, ib| out.push(f(a[ia], b[ib])));
        out
    }
}

/// `a (m×k) · b (k×n)`. Each output element accumulates over `k` in
/// ascending order regardless of `m`, so row subsets reproduce bit-exactly.
pub(crate) fn matmul_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a (m×k) · bᵀ` where `b` is stored `n×k`.
pub(crate) fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out.push(dot(arow, &b[j * k..(j + 1) * k]));
        }
    }
    out
}

/// `aᵀ · b` where `a` is stored `m×k` and `b` is `m×n`; result `k×n`.
pub(crate) fn matmul_tn<T: Real>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
