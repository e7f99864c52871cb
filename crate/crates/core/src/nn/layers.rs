//! Convolution layers and residual groups built on a [`ParamStore`].

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::conv::ConvSpec;
use crate::nn::params::{init_tensor, Bound, Init, ParamId, ParamStore};
use crate::tensor::Scalar;

/// Negative slope of the activation inside residual blocks.
pub const LEAKY_SLOPE: f64 = 0.1;

/// A convolution whose weight `(out, in, k, k)` and bias `(out)` live in a store.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv2d {
    /// Registers a stride-1 "same" convolution.
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        init: Init,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::InvalidConfig {
                field: "kernel",
                reason: format!("{name}: same-size convolution needs an odd kernel, got {kernel}"),
            });
        }
        let fan_in = in_ch * kernel * kernel;
        let w = init_tensor(vec![out_ch, in_ch, kernel, kernel], init, fan_in, rng);
        let weight = store.add(format!("{name}.weight"), w)?;
        let bias = store.add(format!("{name}.bias"), init_tensor(vec![out_ch], Init::Zeros, 1, rng))?;
        Ok(Self {
            weight,
            bias,
            spec: ConvSpec::same(kernel),
            in_ch,
            out_ch,
            kernel,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p.get(self.weight), Some(p.get(self.bias)), self.spec)
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch
    }
}

/// `x + conv2(act(conv1(x)))`.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

/// Residual group: blocks in sequence, a tail convolution, and a group skip,
/// `x + tail(blocks(x))`. The tail starts at zero so a fresh group is the identity.
#[derive(Debug, Clone)]
pub struct ResidualGroup {
    pub blocks: Vec<ResBlock>,
    pub tail: Conv2d,
    pub channels: usize,
    pub slope: f64,
}

impl ResidualGroup {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        blocks: usize,
    ) -> Result<Self> {
        let blocks = (0..blocks)
            .map(|i| {
                Ok(ResBlock {
                    conv1: Conv2d::build(store, rng, &format!("{name}.b{i}.conv1"), channels, channels, 3, Init::He)?,
                    conv2: Conv2d::build(store, rng, &format!("{name}.b{i}.conv2"), channels, channels, 3, Init::He)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tail = Conv2d::build(store, rng, &format!("{name}.tail"), channels, channels, 3, Init::Zeros)?;
        Ok(Self {
            blocks,
            tail,
            channels,
            slope: LEAKY_SLOPE,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let c = tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.channels {
            return Err(Error::ShapeMismatch {
                op: "residual_group",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![self.channels],
            });
        }
        let mut h = x;
        for b in &self.blocks {
            let y = b.conv1.forward(tape, p, h)?;
            let y = tape.leaky_relu(y, self.slope);
            let y = b.conv2.forward(tape, p, y)?;
            h = tape.add(h, y)?;
        }
        let t = self.tail.forward(tape, p, h)?;
        tape.add(x, t)
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.conv1.param_count() + b.conv2.param_count())
            .sum::<usize>()
            + self.tail.param_count()
    }
}
