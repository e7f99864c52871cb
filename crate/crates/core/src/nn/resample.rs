//! Separable bicubic resampling used for degradation, prior alignment and the
//! bicubic residual path.
//!
//! Catmull-Rom kernel (`a = -0.5`), half-pixel-centred coordinates and edge
//! clamping. Downsampling widens the kernel by the scale factor (antialiased,
//! as in MATLAB `imresize`), so a `×s` reduction averages over a `4s` support.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul, Scalar, Tensor};

pub const CUBIC_A: f64 = -0.5;

/// Supported integer resampling factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resize {
    Up(usize),
    Down(usize),
}

impl Resize {
    pub fn factor(&self) -> usize {
        match *self {
            Resize::Up(s) | Resize::Down(s) => s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.factor() {
            2 | 4 | 8 | 16 => Ok(()),
            s => Err(Error::UnsupportedScale(match self {
                Resize::Up(_) => s as f64,
                Resize::Down(_) => 1.0 / s as f64,
            })),
        }
    }

    /// Output extent for an input extent `n`.
    pub fn apply(&self, n: usize) -> Result<usize> {
        self.validate()?;
        match *self {
            Resize::Up(s) => Ok(n * s),
            Resize::Down(s) if n % s == 0 => Ok(n / s),
            Resize::Down(s) => Err(Error::InvalidShape {
                op: "resize",
                shape: vec![n],
                reason: format!("extent not divisible by {s}"),
            }),
        }
    }
}

/// Interpolation kernel used by a [`Resampler`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Filter {
    #[default]
    Bicubic,
    /// Box average; only meaningful for downsampling.
    Area,
}

/// Catmull-Rom cubic convolution kernel.
pub fn cubic(t: f64) -> f64 {
    let a = CUBIC_A;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Row-major `(out × in)` weight matrix for one axis.
pub fn axis_weights(n: usize, resize: Resize, filter: Filter) -> Result<Vec<f64>> {
    let out = resize.apply(n)?;
    let mut m = vec![0.0; out * n];
    let clamp = |j: i64| j.clamp(0, n as i64 - 1) as usize;
    for i in 0..out {
        let row = &mut m[i * n..(i + 1) * n];
        match (resize, filter) {
            (Resize::Up(s), _) => {
                let x = (i as f64 + 0.5) / s as f64 - 0.5;
                let x0 = x.floor() as i64;
                for j in x0 - 1..=x0 + 2 {
                    row[clamp(j)] += cubic(x - j as f64);
                }
            }
            (Resize::Down(s), Filter::Bicubic) => {
                let s = s as f64;
                let x = (i as f64 + 0.5) * s - 0.5;
                let lo = (x - 2.0 * s).ceil() as i64;
                let hi = (x + 2.0 * s).floor() as i64;
                for j in lo..=hi {
                    row[clamp(j)] += cubic((x - j as f64) / s);
                }
            }
            (Resize::Down(s), Filter::Area) => {
                for j in i * s..(i + 1) * s {
                    row[j] += 1.0;
                }
            }
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(m)
}

/// Separable linear resampler for fixed input extents.
#[derive(Debug, Clone)]
pub struct Resampler<T> {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    wy: Vec<T>,
    wx: Vec<T>,
}

impl<T: Scalar> Resampler<T> {
    pub fn new(h: usize, w: usize, resize: Resize, filter: Filter) -> Result<Self> {
        let cast = |v: Vec<f64>| v.into_iter().map(T::from_f64).collect();
        Ok(Self {
            in_h: h,
            in_w: w,
            out_h: resize.apply(h)?,
            out_w: resize.apply(w)?,
            wy: cast(axis_weights(h, resize, filter)?),
            wx: cast(axis_weights(w, resize, filter)?),
        })
    }

    pub fn output_hw(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    fn check(&self, x: &Tensor<T>, h: usize, w: usize) -> Result<(usize, usize)> {
        let (b, c, xh, xw) = x.dims4()?;
        if (xh, xw) != (h, w) {
            return Err(Error::ShapeMismatch {
                op: "resample",
                lhs: x.shape().to_vec(),
                rhs: vec![h, w],
            });
        }
        Ok((b, c))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c) = self.check(x, self.in_h, self.in_w)?;
        let (ih, iw, oh, ow) = (self.in_h, self.in_w, self.out_h, self.out_w);
        let mut tmp = vec![T::zero(); ih * ow];
        let mut out = vec![T::zero(); b * c * oh * ow];
        for (plane, dst) in x.data().chunks(ih * iw).zip(out.chunks_mut(oh * ow)) {
            matmul(ih, iw, ow, plane, false, &self.wx, true, &mut tmp, false);
            matmul(oh, ih, ow, &self.wy, false, &tmp, false, dst, false);
        }
        Tensor::new(vec![b, c, oh, ow], out)
    }

    /// Transpose of [`Resampler::forward`].
    pub fn backward(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c) = self.check(g, self.out_h, self.out_w)?;
        let (ih, iw, oh, ow) = (self.in_h, self.in_w, self.out_h, self.out_w);
        let mut tmp = vec![T::zero(); ih * ow];
        let mut out = vec![T::zero(); b * c * ih * iw];
        for (plane, dst) in g.data().chunks(oh * ow).zip(out.chunks_mut(ih * iw)) {
            matmul(ih, oh, ow, &self.wy, true, plane, false, &mut tmp, false);
            matmul(ih, ow, iw, &tmp, false, &self.wx, false, dst, false);
        }
        Tensor::new(vec![b, c, ih, iw], out)
    }
}

/// Bicubic resize of a BCHW tensor.
pub fn bicubic_resize<T: Scalar>(x: &Tensor<T>, resize: Resize) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4()?;
    Resampler::new(h, w, resize, Filter::Bicubic)?.forward(x)
}
