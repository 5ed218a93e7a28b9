//! Execution back ends for the network's forward pass.
//!
//! Model code is written once against [`Exec`]. [`Eager`] evaluates each op
//! immediately and lets intermediates drop as soon as they are unused, which
//! is what inference wants. [`Tape`] additionally records every op so that
//! [`Tape::backward`] can run reverse-mode differentiation from a scalar.

use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::loss;
use crate::ops::{self, BatchNormCache};
use crate::param::{ParamId, ParamStore, RunningStats};
use crate::tensor::{Shape, Tensor};

/// How a batchnorm site gets its statistics.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    /// Use batch statistics; the evaluation reports them back.
    Train,
    /// Use the given running statistics.
    Infer(&'a RunningStats),
}

/// Per-channel batch mean and biased variance observed in training mode.
pub type BatchStats = (Vec<f64>, Vec<f64>);

pub trait Exec {
    type Value: Clone;

    fn constant(&mut self, t: Tensor) -> Self::Value;
    fn param(&mut self, store: &ParamStore, id: ParamId) -> Self::Value;
    fn tensor<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;
    /// Number of non-leaf ops evaluated so far.
    fn op_count(&self) -> usize;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: Option<&Self::Value>,
        stride: usize,
        padding: usize,
    ) -> Result<Self::Value>;
    fn maxpool_2x2(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn upsample_2x(&mut self, x: &Self::Value, w: &Self::Value, b: Option<&Self::Value>) -> Result<Self::Value>;
    fn batchnorm(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        mode: BnMode<'_>,
    ) -> Result<(Self::Value, Option<BatchStats>)>;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn sigmoid(&mut self, x: &Self::Value) -> Self::Value;
    fn concat(&mut self, xs: &[Self::Value]) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// Elementwise arithmetic mean of equally shaped values.
    fn mean(&mut self, xs: &[Self::Value]) -> Result<Self::Value>;
}

/// Elementwise mean; summation runs in argument order.
pub fn mean_of(xs: &[&Tensor]) -> Result<Tensor> {
    let first = xs.first().ok_or_else(|| shape_err!("mean of an empty list"))?;
    let mut acc = (*first).clone();
    for (i, t) in xs.iter().enumerate().skip(1) {
        if t.shape() != acc.shape() {
            return Err(shape_err!(
                "mean input {i} has shape {}, input 0 has {}",
                t.shape(),
                acc.shape()
            ));
        }
        acc.add_assign(t)?;
    }
    let k = xs.len() as f64;
    acc.data_mut().iter_mut().for_each(|v| *v /= k);
    Ok(acc)
}

fn bias_slice(b: Option<&Tensor>) -> Option<&[f64]> {
    b.map(Tensor::data)
}

/// Immediate evaluation without recording.
#[derive(Debug, Default)]
pub struct Eager {
    ops: usize,
}

impl Eager {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Exec for Eager {
    type Value = Arc<Tensor>;

    fn constant(&mut self, t: Tensor) -> Arc<Tensor> {
        Arc::new(t)
    }

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Arc<Tensor> {
        Arc::clone(store.value(id))
    }

    fn tensor<'a>(&'a self, v: &'a Arc<Tensor>) -> &'a Tensor {
        v
    }

    fn op_count(&self) -> usize {
        self.ops
    }

    fn conv2d(
        &mut self,
        x: &Arc<Tensor>,
        w: &Arc<Tensor>,
        b: Option<&Arc<Tensor>>,
        stride: usize,
        padding: usize,
    ) -> Result<Arc<Tensor>> {
        self.ops += 1;
        Ok(Arc::new(ops::conv2d(
            x,
            w,
            bias_slice(b.map(|b| &**b)),
            stride,
            padding,
        )?))
    }

    fn maxpool_2x2(&mut self, x: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        self.ops += 1;
        Ok(Arc::new(ops::maxpool_2x2(x)?.0))
    }

    fn upsample_2x(&mut self, x: &Arc<Tensor>, w: &Arc<Tensor>, b: Option<&Arc<Tensor>>) -> Result<Arc<Tensor>> {
        self.ops += 1;
        Ok(Arc::new(ops::upsample_2x(x, w, bias_slice(b.map(|b| &**b)))?))
    }

    fn batchnorm(
        &mut self,
        x: &Arc<Tensor>,
        gamma: &Arc<Tensor>,
        beta: &Arc<Tensor>,
        mode: BnMode<'_>,
    ) -> Result<(Arc<Tensor>, Option<BatchStats>)> {
        self.ops += 1;
        match mode {
            BnMode::Train => {
                let (y, cache) = ops::batchnorm_train(x, gamma.data(), beta.data())?;
                Ok((Arc::new(y), Some((cache.mean, cache.var))))
            }
            BnMode::Infer(stats) => Ok((
                Arc::new(ops::batchnorm_infer(
                    x,
                    gamma.data(),
                    beta.data(),
                    &stats.mean,
                    &stats.var,
                )?),
                None,
            )),
        }
    }

    fn relu(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        self.ops += 1;
        Arc::new(ops::relu(x))
    }

    fn sigmoid(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        self.ops += 1;
        Arc::new(ops::sigmoid(x))
    }

    fn concat(&mut self, xs: &[Arc<Tensor>]) -> Result<Arc<Tensor>> {
        self.ops += 1;
        let refs: Vec<&Tensor> = xs.iter().map(|t| &**t).collect();
        Ok(Arc::new(ops::concat_channels(&refs)?))
    }

    fn add(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        self.ops += 1;
        Ok(Arc::new(ops::add(a, b)?))
    }

    fn mean(&mut self, xs: &[Arc<Tensor>]) -> Result<Arc<Tensor>> {
        self.ops += 1;
        let refs: Vec<&Tensor> = xs.iter().map(|t| &**t).collect();
        Ok(Arc::new(mean_of(&refs)?))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        x: Var,
        indices: Vec<u8>,
    },
    Upsample {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNormTrain {
        gamma: Var,
        beta: Var,
        x: Var,
        cache: BatchNormCache,
    },
    BatchNormInfer {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: RunningStats,
    },
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    Mean(Vec<Var>),
    HybridLoss {
        probs: Var,
        labels: Arc<Tensor>,
    },
    WeightedSum(Vec<(Var, f64)>),
    Dot {
        x: Var,
        coeffs: Arc<Tensor>,
    },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
}

/// Records ops for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_arc(Arc::new(value), op)
    }

    fn push_arc(&mut self, value: Arc<Tensor>, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// The hybrid segmentation loss of `probs` against `labels`, as a scalar.
    pub fn hybrid_loss(&mut self, probs: Var, labels: Arc<Tensor>) -> Result<Var> {
        let l = loss::hybrid_loss(&labels, self.value(probs))?;
        Ok(self.push(Tensor::scalar(l), Op::HybridLoss { probs, labels }))
    }

    /// `sum_i w_i * term_i` over scalar terms, summed in order.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc = 0.0;
        for &(v, w) in terms {
            acc += w * self.value(v).to_scalar()?;
        }
        Ok(self.push(Tensor::scalar(acc), Op::WeightedSum(terms.to_vec())))
    }

    /// `sum(x * coeffs)` as a scalar; a fixed random projection of any
    /// tensor turns it into a loss for gradient checks.
    pub fn dot(&mut self, x: Var, coeffs: Arc<Tensor>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != coeffs.shape() {
            return Err(shape_err!("dot of {} with {}", xv.shape(), coeffs.shape()));
        }
        let s: f64 = xv.data().iter().zip(coeffs.data()).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot { x, coeffs }))
    }

    /// Reverse sweep from the scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_shape = self.value(root).shape();
        if root_shape != Shape::scalar() {
            return Err(shape_err!("backward needs a scalar root, got {root_shape}"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut params = Vec::new();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Param(id) => {
                    params.push((*id, Var(i)));
                    grads[i] = Some(g);
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let r = ops::conv2d_backward(self.value(*x), self.value(*w), &g, *stride, *padding)?;
                    accumulate(&mut grads, *x, r.input)?;
                    accumulate(&mut grads, *w, r.weight)?;
                    if let Some(b) = b {
                        let shape = self.value(*b).shape();
                        accumulate(&mut grads, *b, Tensor::from_vec(shape, r.bias)?)?;
                    }
                }
                Op::MaxPool { x, indices } => {
                    let gin = ops::maxpool_2x2_backward(&g, indices, self.value(*x).shape())?;
                    accumulate(&mut grads, *x, gin)?;
                }
                Op::Upsample { x, w, b } => {
                    let r = ops::upsample_2x_backward(self.value(*x), self.value(*w), &g)?;
                    accumulate(&mut grads, *x, r.input)?;
                    accumulate(&mut grads, *w, r.weight)?;
                    if let Some(b) = b {
                        let shape = self.value(*b).shape();
                        accumulate(&mut grads, *b, Tensor::from_vec(shape, r.bias)?)?;
                    }
                }
                Op::BatchNormTrain { x, gamma, beta, cache } => {
                    let (gx, gg, gb) = ops::batchnorm_backward(&g, cache, self.value(*gamma).data())?;
                    accumulate(&mut grads, *x, gx)?;
                    let shape = self.value(*gamma).shape();
                    accumulate(&mut grads, *gamma, Tensor::from_vec(shape, gg)?)?;
                    accumulate(&mut grads, *beta, Tensor::from_vec(shape, gb)?)?;
                }
                Op::BatchNormInfer { x, gamma, beta, stats } => {
                    let (gx, gg, gb) = ops::batchnorm_infer_backward(
                        self.value(*x),
                        &g,
                        self.value(*gamma).data(),
                        &stats.mean,
                        &stats.var,
                    )?;
                    accumulate(&mut grads, *x, gx)?;
                    let shape = self.value(*gamma).shape();
                    accumulate(&mut grads, *gamma, Tensor::from_vec(shape, gg)?)?;
                    accumulate(&mut grads, *beta, Tensor::from_vec(shape, gb)?)?;
                }
                Op::Relu(x) => {
                    let gin = ops::relu_backward(self.value(*x), &g);
                    accumulate(&mut grads, *x, gin)?;
                }
                Op::Sigmoid(x) => {
                    let gin = ops::sigmoid_backward(&node.value, &g);
                    accumulate(&mut grads, *x, gin)?;
                }
                Op::Concat(xs) => {
                    let sizes: Vec<usize> = xs.iter().map(|v| self.value(*v).shape().c).collect();
                    let parts = ops::split_channels(&g, &sizes)?;
                    for (v, part) in xs.iter().zip(parts) {
                        accumulate(&mut grads, *v, part)?;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Mean(xs) => {
                    let share = g.scale(1.0 / xs.len() as f64);
                    for v in xs {
                        accumulate(&mut grads, *v, share.clone())?;
                    }
                }
                Op::HybridLoss { probs, labels } => {
                    let upstream = g.to_scalar()?;
                    let local = loss::hybrid_loss_grad(labels, self.value(*probs))?;
                    accumulate(&mut grads, *probs, local.scale(upstream))?;
                }
                Op::WeightedSum(terms) => {
                    let upstream = g.to_scalar()?;
                    for &(v, w) in terms {
                        accumulate(&mut grads, v, Tensor::scalar(upstream * w))?;
                    }
                }
                Op::Dot { x, coeffs } => {
                    let upstream = g.to_scalar()?;
                    accumulate(&mut grads, *x, coeffs.scale(upstream))?;
                }
            }
        }
        params.reverse();
        Ok(Gradients { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Gradients of leaves and parameters after [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of a leaf or parameter node; `None` if the root does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for &(id, v) in &self.params {
            if let Some(g) = self.get(v) {
                store.get_mut(id).grad.add_assign(g)?;
            }
        }
        Ok(())
    }
}

impl Exec for Tape {
    type Value = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t)
    }

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push_arc(Arc::clone(store.value(id)), Op::Param(id))
    }

    fn tensor<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.value(*v)
    }

    fn op_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf | Op::Param(_)))
            .count()
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, stride: usize, padding: usize) -> Result<Var> {
        let y = ops::conv2d(
            self.value(*x),
            self.value(*w),
            b.map(|b| self.value(*b).data()),
            stride,
            padding,
        )?;
        Ok(self.push(
            y,
            Op::Conv2d {
                x: *x,
                w: *w,
                b: b.copied(),
                stride,
                padding,
            },
        ))
    }

    fn maxpool_2x2(&mut self, x: &Var) -> Result<Var> {
        let (y, indices) = ops::maxpool_2x2(self.value(*x))?;
        Ok(self.push(y, Op::MaxPool { x: *x, indices }))
    }

    fn upsample_2x(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let y = ops::upsample_2x(self.value(*x), self.value(*w), b.map(|b| self.value(*b).data()))?;
        Ok(self.push(
            y,
            Op::Upsample {
                x: *x,
                w: *w,
                b: b.copied(),
            },
        ))
    }

    fn batchnorm(&mut self, x: &Var, gamma: &Var, beta: &Var, mode: BnMode<'_>) -> Result<(Var, Option<BatchStats>)> {
        match mode {
            BnMode::Train => {
                let (y, cache) =
                    ops::batchnorm_train(self.value(*x), self.value(*gamma).data(), self.value(*beta).data())?;
                let stats = (cache.mean.clone(), cache.var.clone());
                let v = self.push(
                    y,
                    Op::BatchNormTrain {
                        x: *x,
                        gamma: *gamma,
                        beta: *beta,
                        cache,
                    },
                );
                Ok((v, Some(stats)))
            }
            BnMode::Infer(stats) => {
                let y = ops::batchnorm_infer(
                    self.value(*x),
                    self.value(*gamma).data(),
                    self.value(*beta).data(),
                    &stats.mean,
                    &stats.var,
                )?;
                let v = self.push(
                    y,
                    Op::BatchNormInfer {
                        x: *x,
                        gamma: *gamma,
                        beta: *beta,
                        stats: stats.clone(),
                    },
                );
                Ok((v, None))
            }
        }
    }

    fn relu(&mut self, x: &Var) -> Var {
        let y = ops::relu(self.value(*x));
        self.push(y, Op::Relu(*x))
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let y = ops::sigmoid(self.value(*x));
        self.push(y, Op::Sigmoid(*x))
    }

    fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = xs.iter().map(|v| self.value(*v)).collect();
        let y = ops::concat_channels(&refs)?;
        Ok(self.push(y, Op::Concat(xs.to_vec())))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::add(self.value(*a), self.value(*b))?;
        Ok(self.push(y, Op::Add(*a, *b)))
    }

    fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = xs.iter().map(|v| self.value(*v)).collect();
        let y = mean_of(&refs)?;
        Ok(self.push(y, Op::Mean(xs.to_vec())))
    }
}
