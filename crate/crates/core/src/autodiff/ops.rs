//! Recording constructors for every differentiable operation.

use std::sync::Arc;

use super::tape::{Broadcast, Op, Tape, Var};
use crate::embedding::svf_forward;
use crate::error::{Error, Result};
use crate::nn::conv::{conv2d_forward, ConvSpec};
use crate::nn::resample::Resampler;
use crate::nn::unfold::{fold, unfold3x3};
use crate::nn::upsample::depth_to_space;
use crate::propagation::similarity_forward;
use crate::tensor::{Scalar, Tensor};

/// Pointwise operation kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl<T: Scalar> Tape<T> {
    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, Broadcast)> {
        let (av, bv) = (self.value(a), self.value(b));
        let bc = Broadcast::resolve(op, av.shape(), bv.shape())?;
        let shape = av.shape();
        let data = match bc {
            Broadcast::Same => av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => {
                let y = bv.data()[0];
                av.data().iter().map(|&x| f(x, y)).collect()
            }
            Broadcast::Channel => {
                let hw = shape[2] * shape[3];
                let c = shape[1];
                let mut out = Vec::with_capacity(av.numel());
                for (i, plane) in av.data().chunks(hw).enumerate() {
                    let w = &bv.data()[(i / c) * hw..(i / c + 1) * hw];
                    out.extend(plane.iter().zip(w).map(|(&x, &y)| f(x, y)));
                }
                out
            }
        };
        Ok((Tensor::new(shape.to_vec(), data)?, bc))
    }

    /// Puts the lower-rank broadcast operand second for commutative ops.
    fn order(&self, a: Var, b: Var) -> (Var, Var) {
        if self.value(a).numel() < self.value(b).numel() {
            (b, a)
        } else {
            (a, b)
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.order(a, b);
        let (v, bc) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(bc), vec![a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, bc) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(bc), vec![a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.order(a, b);
        let (v, bc) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(bc), vec![a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(c), vec![a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu, vec![a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        let v = self.value(a).map(|x| if x > T::zero() { x } else { x * s });
        self.push(v, Op::LeakyRelu(s), vec![a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh, vec![a])
    }

    /// Dispatches one of the pointwise kinds; `b` is ignored by unary kinds.
    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let need_b = || {
            b.ok_or_else(|| Error::InvalidShape {
                op: "elementwise",
                shape: vec![],
                reason: format!("{kind:?} needs a second operand"),
            })
        };
        match kind {
            Elementwise::Add => self.add(a, need_b()?),
            Elementwise::Sub => self.sub(a, need_b()?),
            Elementwise::Mul => self.mul(a, need_b()?),
            Elementwise::ScalarMul(c) => Ok(self.scale(a, c)),
            Elementwise::Relu => Ok(self.relu(a)),
            Elementwise::LeakyRelu(s) => Ok(self.leaky_relu(a, s)),
            Elementwise::Tanh => Ok(self.tanh(a)),
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let v = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(v, Op::Conv2d(spec, b.is_some()), inputs))
    }

    /// Concatenation along the channel axis of BCHW tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).dims4()?;
        let (b, _, h, w) = first;
        let mut total = 0;
        for &p in parts {
            let (pb, pc, ph, pw) = self.value(p).dims4()?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(b * total * h * w);
        for bi in 0..b {
            for &p in parts {
                let t = self.value(p);
                let per = t.shape()[1] * h * w;
                data.extend_from_slice(&t.data()[bi * per..(bi + 1) * per]);
            }
        }
        let v = Tensor::new(vec![b, total, h, w], data)?;
        Ok(self.push(v, Op::Concat, parts.to_vec()))
    }

    pub fn unfold3x3(&mut self, x: Var) -> Result<Var> {
        let v = unfold3x3(self.value(x))?;
        Ok(self.push(v, Op::Unfold3x3, vec![x]))
    }

    pub fn fold(&mut self, patches: Var, out_shape: [usize; 4], normalize: bool) -> Result<Var> {
        let v = fold(self.value(patches), out_shape, normalize)?;
        Ok(self.push(v, Op::Fold { normalize }, vec![patches]))
    }

    /// Per-pixel cosine similarity of 3×3 patches; output `(B,1,H,W)`.
    pub fn patch_similarity(&mut self, prior: Var, depth: Var, eps: f64) -> Result<Var> {
        let eps = T::from_f64(eps);
        let v = similarity_forward(self.value(prior), self.value(depth), eps)?;
        Ok(self.push(v, Op::PatchSimilarity(eps), vec![prior, depth]))
    }

    /// Spatially-variant filtering of `x` with per-pixel kernels `k (B,K²,H,W)`.
    pub fn svf(&mut self, x: Var, k: Var) -> Result<Var> {
        let v = svf_forward(self.value(x), self.value(k))?;
        Ok(self.push(v, Op::Svf, vec![x, k]))
    }

    pub fn resample(&mut self, x: Var, r: Arc<Resampler<T>>) -> Result<Var> {
        let v = r.forward(self.value(x))?;
        Ok(self.push(v, Op::Resample(r), vec![x]))
    }

    pub fn depth_to_space(&mut self, x: Var, r: usize) -> Result<Var> {
        let v = depth_to_space(self.value(x), r)?;
        Ok(self.push(v, Op::DepthToSpace(r), vec![x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum, vec![x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::from_f64(t.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean, vec![x])
    }

    /// Mean absolute error over the pixels where `mask` is set.
    pub fn masked_l1(&mut self, pred: Var, target: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() || mask.len() != p.numel() {
            return Err(Error::ShapeMismatch {
                op: "masked_l1",
                lhs: p.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        let total: T = p
            .data()
            .iter()
            .zip(t.data())
            .zip(mask.iter())
            .filter(|(_, &m)| m)
            .map(|((&a, &b), _)| (a - b).abs())
            .sum();
        let v = Tensor::scalar(total / T::from_f64(count as f64));
        Ok(self.push(v, Op::MaskedL1(mask, count), vec![pred, target]))
    }
}
