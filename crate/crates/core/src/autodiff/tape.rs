//! Wengert tape: operations are appended in execution order and replayed in
//! reverse by [`Tape::backward`].
//!
//! Leaf gradients accumulate additively: calling `backward` twice on the same
//! tape doubles them. [`Tape::zero_grad`] resets.

use std::fmt;
use std::sync::Arc;

use crate::embedding::svf_backward;
use crate::error::{Error, Result};
use crate::nn::conv::{conv2d_backward, ConvSpec};
use crate::nn::resample::Resampler;
use crate::nn::unfold::{fold, unfold3x3};
use crate::nn::upsample::space_to_depth;
use crate::propagation::similarity_backward;
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the second operand of a binary op is broadcast against the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Broadcast {
    Same,
    /// One-element operand applied everywhere.
    Scalar,
    /// `(B,1,H,W)` operand applied to every channel of `(B,C,H,W)`.
    Channel,
}

impl Broadcast {
    pub fn resolve(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Broadcast::Same);
        }
        if b.iter().product::<usize>() == 1 {
            return Ok(Broadcast::Scalar);
        }
        if let (&[ab, _, ah, aw], &[bb, 1, bh, bw]) = (a, b) {
            if (ab, ah, aw) == (bb, bh, bw) {
                return Ok(Broadcast::Channel);
            }
        }
        Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }

    /// Index into the broadcast operand for flat index `i` of the full operand.
    #[inline]
    fn index(self, i: usize, shape: &[usize]) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Scalar => 0,
            Broadcast::Channel => {
                let hw = shape[2] * shape[3];
                let chw = shape[1] * hw;
                (i / chw) * hw + i % hw
            }
        }
    }

    /// Sums a full-shape gradient down to the broadcast operand's shape.
    fn reduce<T: Scalar>(self, g: &[T], shape: &[usize], target: &[usize]) -> Vec<T> {
        match self {
            Broadcast::Same => g.to_vec(),
            _ => {
                let mut out = vec![T::zero(); target.iter().product()];
                for (i, &v) in g.iter().enumerate() {
                    out[self.index(i, shape)] += v;
                }
                out
            }
        }
    }
}

/// Backward rule supplied from outside the built-in operation set.
pub type CustomBackward<T> =
    Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Option<Tensor<T>>> + Send + Sync>;

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add(Broadcast),
    Sub(Broadcast),
    Mul(Broadcast),
    Scale(T),
    Relu,
    LeakyRelu(T),
    Tanh,
    Conv2d(ConvSpec, bool),
    Concat,
    Unfold3x3,
    Fold { normalize: bool },
    PatchSimilarity(T),
    Svf,
    Resample(Arc<Resampler<T>>),
    DepthToSpace(usize),
    Sum,
    Mean,
    MaskedL1(Arc<Vec<bool>>, usize),
    Custom(CustomBackward<T>),
}

impl<T: Scalar> fmt::Debug for Op<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Op::Leaf => "leaf",
            Op::Add(_) => "add",
            Op::Sub(_) => "sub",
            Op::Mul(_) => "mul",
            Op::Scale(_) => "scale",
            Op::Relu => "relu",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Tanh => "tanh",
            Op::Conv2d(..) => "conv2d",
            Op::Concat => "concat",
            Op::Unfold3x3 => "unfold3x3",
            Op::Fold { .. } => "fold",
            Op::PatchSimilarity(_) => "patch_similarity",
            Op::Svf => "svf_filter",
            Op::Resample(_) => "resample",
            Op::DepthToSpace(_) => "depth_to_space",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::MaskedL1(..) => "masked_l1",
            Op::Custom(_) => "custom",
        };
        f.write_str(name)
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
    inputs: Vec<Var>,
    grad: Option<Tensor<T>>,
}

/// Ordered record of operations; every input precedes the node using it.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input value. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
            inputs: Vec::new(),
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any has been propagated to it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: Vec<Var>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
            inputs,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value produced outside the tape with a caller-supplied backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: CustomBackward<T>) -> Var {
        self.push(value, Op::Custom(backward), inputs.to_vec())
    }

    /// Propagates d`loss`/d(leaf) into every `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(shape, T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    let slot = &mut self.nodes[idx].grad;
                    match slot {
                        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                continue;
            }
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = backward_rule(&node.op, &inputs, &node.value, &g, &needs)?;
            for ((var, need), ig) in node.inputs.iter().zip(&needs).zip(input_grads) {
                let (Some(ig), true) = (ig, *need) else { continue };
                if ig.shape() != self.nodes[var.0].value.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "backward",
                        lhs: ig.shape().to_vec(),
                        rhs: self.nodes[var.0].value.shape().to_vec(),
                    });
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(ig.data()).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(ig),
                }
            }
        }
        Ok(())
    }
}

fn zip_map<T: Scalar>(g: &Tensor<T>, x: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = g.data().iter().zip(x.data()).map(|(&g, &x)| f(g, x)).collect();
    Tensor::new(g.shape().to_vec(), data).expect("same shape")
}

fn backward_rule<T: Scalar>(
    op: &Op<T>,
    inputs: &[&Tensor<T>],
    out: &Tensor<T>,
    g: &Tensor<T>,
    needs: &[bool],
) -> Result<Vec<Option<Tensor<T>>>> {
    let reduce_b = |bc: Broadcast, full: Vec<T>| -> Result<Tensor<T>> {
        let target = inputs[1].shape();
        Tensor::new(target.to_vec(), bc.reduce(&full, g.shape(), target))
    };
    Ok(match op {
        Op::Leaf => vec![],
        Op::Add(bc) => vec![
            needs[0].then(|| g.clone()),
            needs[1].then(|| reduce_b(*bc, g.data().to_vec())).transpose()?,
        ],
        Op::Sub(bc) => vec![
            needs[0].then(|| g.clone()),
            needs[1]
                .then(|| reduce_b(*bc, g.data().iter().map(|&v| -v).collect()))
                .transpose()?,
        ],
        Op::Mul(bc) => {
            let (a, b) = (inputs[0], inputs[1]);
            let shape = a.shape();
            let ga = needs[0].then(|| {
                let data = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &gv)| gv * b.data()[bc.index(i, shape)])
                    .collect();
                Tensor::new(shape.to_vec(), data).expect("same shape")
            });
            let gb = needs[1]
                .then(|| reduce_b(*bc, g.data().iter().zip(a.data()).map(|(&gv, &av)| gv * av).collect()))
                .transpose()?;
            vec![ga, gb]
        }
        Op::Scale(c) => vec![needs[0].then(|| g.map(|v| v * *c))],
        Op::Relu => vec![needs[0].then(|| zip_map(g, inputs[0], |g, x| if x > T::zero() { g } else { T::zero() }))],
        Op::LeakyRelu(slope) => {
            vec![needs[0].then(|| zip_map(g, inputs[0], |g, x| if x > T::zero() { g } else { g * *slope }))]
        }
        Op::Tanh => vec![needs[0].then(|| zip_map(g, out, |g, y| g * (T::one() - y * y)))],
        Op::Conv2d(spec, has_bias) => {
            let (dx, dw, db) = conv2d_backward(
                inputs[0],
                inputs[1],
                g,
                *spec,
                [needs[0], needs[1], *has_bias && needs[2]],
            )?;
            let mut v = vec![dx, dw];
            if *has_bias {
                v.push(db.map(|d| d.reshape(inputs[2].shape().to_vec())).transpose()?);
            }
            v
        }
        Op::Concat => {
            let (b, _, h, w) = g.dims4()?;
            let total = g.shape()[1];
            let mut offset = 0;
            let mut res = Vec::with_capacity(inputs.len());
            for (inp, &need) in inputs.iter().zip(needs) {
                let c = inp.shape()[1];
                if need {
                    let mut d = Vec::with_capacity(inp.numel());
                    for bi in 0..b {
                        let start = (bi * total + offset) * h * w;
                        d.extend_from_slice(&g.data()[start..start + c * h * w]);
                    }
                    res.push(Some(Tensor::new(inp.shape().to_vec(), d)?));
                } else {
                    res.push(None);
                }
                offset += c;
            }
            res
        }
        Op::Unfold3x3 => {
            let (b, c, h, w) = inputs[0].dims4()?;
            vec![needs[0].then(|| fold(g, [b, c, h, w], false)).transpose()?]
        }
        Op::Fold { normalize } => {
            let (_, c, h, w) = out.dims4()?;
            let rows = inputs[0].shape()[1];
            if rows == c && rows != 9 * c {
                vec![needs[0].then(|| g.clone().reshape(inputs[0].shape().to_vec())).transpose()?]
            } else {
                let mut gg = g.clone();
                if *normalize {
                    let counts = crate::nn::unfold::overlap_counts(h, w);
                    for plane in gg.data_mut().chunks_mut(h * w) {
                        for (v, &n) in plane.iter_mut().zip(&counts) {
                            *v = *v / T::from_f64(n as f64);
                        }
                    }
                }
                vec![needs[0].then(|| unfold3x3(&gg)).transpose()?]
            }
        }
        Op::PatchSimilarity(eps) => {
            let (gp, gd) = similarity_backward(inputs[0], inputs[1], g, *eps, [needs[0], needs[1]])?;
            vec![gp, gd]
        }
        Op::Svf => {
            let (gx, gk) = svf_backward(inputs[0], inputs[1], g, [needs[0], needs[1]])?;
            vec![gx, gk]
        }
        Op::Resample(r) => vec![needs[0].then(|| r.backward(g)).transpose()?],
        Op::DepthToSpace(r) => vec![needs[0].then(|| space_to_depth(g, *r)).transpose()?],
        Op::Sum => vec![needs[0].then(|| Tensor::full(inputs[0].shape().to_vec(), g.data()[0]))],
        Op::Mean => {
            let n = T::from_f64(inputs[0].numel() as f64);
            vec![needs[0].then(|| Tensor::full(inputs[0].shape().to_vec(), g.data()[0] / n))]
        }
        Op::MaskedL1(mask, count) => {
            let scale = g.data()[0] / T::from_f64(*count as f64);
            let d: Vec<T> = inputs[0]
                .data()
                .iter()
                .zip(inputs[1].data())
                .zip(mask.iter())
                .map(|((&p, &t), &m)| {
                    let diff = p - t;
                    if !m || diff == T::zero() {
                        T::zero()
                    } else {
                        diff.signum() * scale
                    }
                })
                .collect();
            let shape = inputs[0].shape().to_vec();
            let gt = needs[1].then(|| Tensor::new(shape.clone(), d.iter().map(|&v| -v).collect())).transpose()?;
            vec![needs[0].then(|| Tensor::new(shape, d)).transpose()?, gt]
        }
        Op::Custom(f) => f(inputs, out, g),
    })
}

