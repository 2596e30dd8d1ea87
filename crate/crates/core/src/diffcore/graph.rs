//! Recording backend: a Wengert list of tensor operations and its
//! reverse sweep.

use std::collections::HashMap;
use std::sync::Arc;

use crate::diffcore::kernels;
use crate::diffcore::ops::{finite, leaky, Ops};
use crate::diffcore::params::{ParamId, ParamStore};
use crate::diffcore::tensor::{Element, Shape, Tensor};
use crate::error::{Error, Result};
use crate::wavelet;

/// Node handle on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Var, padding: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    Exp(Var),
    Sigmoid(Var),
    LeakyRelu(Var, T),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SliceChannels { a: Var, start: usize },
    ConcatChannels(Vec<Var>),
    Reshape(Var),
    Gather { a: Var, index: Arc<Vec<u32>> },
    Dwt(Var),
    Idwt(Var),
    RoundSt(Var),
    ChannelAffine { a: Var, scale: Vec<T> },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records operations for one forward pass so [`Graph::backward`] can
/// propagate gradients. Build a fresh graph per training step.
#[derive(Debug)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of the leaf and parameter nodes produced by
/// [`Graph::backward`]. Intermediate gradients are dropped during the sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Makes later `param(store, id)` calls resolve to `v`, so a gradient
    /// can be taken with respect to a parameter supplied as a leaf.
    pub fn bind_param(&mut self, id: ParamId, v: Var) {
        self.params.insert(id, v);
    }

    pub fn tensor(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        Ok(self.push(finite(name, value)?, op))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of parameter nodes are
    /// added into `store`; all node gradients are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                store.accumulate_grad(*id, g.data())?;
            }
        }
        Ok(grads)
    }

    /// Reverse sweep without touching any parameter store.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != Shape::scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {shape}"
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let g = Tensor::new(self.nodes[i].value.shape(), g)?;
            for (input, contribution) in self.local_grads(i, &g)? {
                accumulate(&mut grads[input.0], contribution);
            }
            if matches!(self.nodes[i].op, Op::Leaf | Op::Param(_)) {
                grads[i] = Some(g.into_vec());
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape());
        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(shapes)
                .map(|(g, s)| g.map(|g| Tensor::new(s, g).expect("gradient shape")))
                .collect(),
        })
    }

    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let val = |v: &Var| &self.nodes[v.0].value;
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf | Op::Param(_) => Vec::new(),
            Op::Conv2d { x, w, b, padding } => {
                let (dx, dw, db) = kernels::conv2d_backward(val(x), val(w), g, *padding)?;
                let db = db.reshape(val(b).shape())?;
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(val(b), |gv, bv| gv * bv)?),
                (*b, g.zip_map(val(a), |gv, av| gv * av)?),
            ],
            Op::Affine(a, mul) => vec![(*a, g.map(|v| v * *mul))],
            Op::Exp(a) => vec![(*a, g.zip_map(out, |gv, y| gv * y)?)],
            Op::Sigmoid(a) => vec![(*a, g.zip_map(out, |gv, y| gv * y * (T::one() - y))?)],
            Op::LeakyRelu(a, alpha) => vec![(
                *a,
                g.zip_map(val(a), |gv, x| if x > T::zero() { gv } else { gv * *alpha })?,
            )],
            Op::Square(a) => {
                let two = T::one() + T::one();
                vec![(*a, g.zip_map(val(a), |gv, x| gv * two * x)?)]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(val(a).shape(), g.data()[0]))],
            Op::Mean(a) => {
                let n = T::from_usize(val(a).len().max(1)).expect("length fits");
                vec![(*a, Tensor::full(val(a).shape(), g.data()[0] / n))]
            }
            Op::SliceChannels { a, start } => {
                let s = val(a).shape();
                let mut parts = Vec::with_capacity(3);
                let before = Tensor::zeros(s.with_channels(*start));
                let after = Tensor::zeros(s.with_channels(s.c - start - g.shape().c));
                if *start > 0 {
                    parts.push(&before);
                }
                parts.push(g);
                if after.shape().c > 0 {
                    parts.push(&after);
                }
                vec![(*a, kernels::concat_channels(&parts)?)]
            }
            Op::ConcatChannels(inputs) => {
                let mut start = 0;
                let mut res = Vec::with_capacity(inputs.len());
                for v in inputs {
                    let c = val(v).shape().c;
                    res.push((*v, kernels::slice_channels(g, start, c)?));
                    start += c;
                }
                res
            }
            Op::Reshape(a) => vec![(*a, g.reshape(val(a).shape())?)],
            Op::Gather { a, index } => {
                vec![(*a, kernels::scatter_add(g, index, val(a).shape()))]
            }
            // Orthonormal transforms: the adjoint is the inverse.
            Op::Dwt(a) => vec![(*a, wavelet::idwt(g)?)],
            Op::Idwt(a) => vec![(*a, wavelet::dwt(g)?)],
            Op::RoundSt(a) => vec![(*a, g.clone())],
            Op::ChannelAffine { a, scale } => {
                let zeros = vec![T::zero(); scale.len()];
                vec![(*a, kernels::channel_affine(g, scale, &zeros)?)]
            }
        })
    }
}

fn accumulate<T: Element>(slot: &mut Option<Vec<T>>, contribution: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contribution.data()) {
                *a = *a + *c;
            }
        }
        None => *slot = Some(contribution.into_vec()),
    }
}

impl<T: Element> Ops<T> for Graph<T> {
    type Value = Var;

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.tensor(*v)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var, padding: usize) -> Result<Var> {
        let y = kernels::conv2d(self.tensor(*x), self.tensor(*w), self.tensor(*b), padding)?;
        self.push_checked("conv2d", y, Op::Conv2d { x: *x, w: *w, b: *b, padding })
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.tensor(*a).zip_map(self.tensor(*b), |x, y| x + y)?;
        self.push_checked("add", y, Op::Add(*a, *b))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.tensor(*a).zip_map(self.tensor(*b), |x, y| x - y)?;
        self.push_checked("sub", y, Op::Sub(*a, *b))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.tensor(*a).zip_map(self.tensor(*b), |x, y| x * y)?;
        self.push_checked("mul", y, Op::Mul(*a, *b))
    }

    fn affine(&mut self, a: &Var, mul: T, add: T) -> Result<Var> {
        let y = self.tensor(*a).map(|x| x * mul + add);
        self.push_checked("affine", y, Op::Affine(*a, mul))
    }

    fn exp(&mut self, a: &Var) -> Result<Var> {
        let y = self.tensor(*a).map(T::exp);
        self.push_checked("exp", y, Op::Exp(*a))
    }

    fn sigmoid(&mut self, a: &Var) -> Result<Var> {
        let y = self.tensor(*a).map(kernels::sigmoid);
        self.push_checked("sigmoid", y, Op::Sigmoid(*a))
    }

    fn leaky_relu(&mut self, a: &Var, alpha: T) -> Result<Var> {
        let y = self.tensor(*a).map(|v| leaky(v, alpha));
        self.push_checked("leaky_relu", y, Op::LeakyRelu(*a, alpha))
    }

    fn square(&mut self, a: &Var) -> Result<Var> {
        let y = self.tensor(*a).map(|v| v * v);
        self.push_checked("square", y, Op::Square(*a))
    }

    fn sum(&mut self, a: &Var) -> Result<Var> {
        let y = Tensor::scalar(self.tensor(*a).sum());
        self.push_checked("sum", y, Op::Sum(*a))
    }

    fn mean(&mut self, a: &Var) -> Result<Var> {
        let t = self.tensor(*a);
        let n = T::from_usize(t.len().max(1)).expect("length fits");
        let y = Tensor::scalar(t.sum() / n);
        self.push_checked("mean", y, Op::Mean(*a))
    }

    fn slice_channels(&mut self, a: &Var, start: usize, len: usize) -> Result<Var> {
        let y = kernels::slice_channels(self.tensor(*a), start, len)?;
        Ok(self.push(y, Op::SliceChannels { a: *a, start }))
    }

    fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|v| self.tensor(*v)).collect();
        let y = kernels::concat_channels(&refs)?;
        Ok(self.push(y, Op::ConcatChannels(parts.to_vec())))
    }

    fn reshape(&mut self, a: &Var, shape: Shape) -> Result<Var> {
        let y = self.tensor(*a).reshape(shape)?;
        Ok(self.push(y, Op::Reshape(*a)))
    }

    fn gather(&mut self, a: &Var, index: &Arc<Vec<u32>>) -> Result<Var> {
        let t = self.tensor(*a);
        let y = kernels::gather(t, index, t.shape())?;
        Ok(self.push(y, Op::Gather { a: *a, index: Arc::clone(index) }))
    }

    fn dwt(&mut self, a: &Var) -> Result<Var> {
        let y = wavelet::dwt(self.tensor(*a))?;
        Ok(self.push(y, Op::Dwt(*a)))
    }

    fn idwt(&mut self, a: &Var) -> Result<Var> {
        let y = wavelet::idwt(self.tensor(*a))?;
        Ok(self.push(y, Op::Idwt(*a)))
    }

    fn round_st(&mut self, a: &Var) -> Result<Var> {
        let y = self.tensor(*a).map(T::round);
        Ok(self.push(y, Op::RoundSt(*a)))
    }

    fn channel_affine(&mut self, a: &Var, scale: &[T], shift: &[T]) -> Result<Var> {
        let y = kernels::channel_affine(self.tensor(*a), scale, shift)?;
        self.push_checked("channel_affine", y, Op::ChannelAffine { a: *a, scale: scale.to_vec() })
    }
}
