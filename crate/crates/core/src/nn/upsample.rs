//! Sub-pixel feature upsampling.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::layers::Conv2d;
use crate::nn::params::{Bound, Init, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// `(B, C·r², H, W)` → `(B, C, H·r, W·r)`, channel `c·r² + i·r + j` landing at
/// offset `(i, j)` of each `r×r` cell.
pub fn depth_to_space<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (b, cr, h, w) = x.dims4()?;
    if r == 0 || cr % (r * r) != 0 {
        return Err(Error::InvalidShape {
            op: "depth_to_space",
            shape: x.shape().to_vec(),
            reason: format!("channels not divisible by {}", r * r),
        });
    }
    let c = cr / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut out = vec![T::zero(); x.numel()];
    let src = x.data();
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let plane = ((bi * cr) + ci * r * r + i * r + j) * h * w;
                    for y in 0..h {
                        let dst_row = ((bi * c + ci) * ho + y * r + i) * wo;
                        for xx in 0..w {
                            out[dst_row + xx * r + j] = src[plane + y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, c, ho, wo], out)
}

/// Inverse of [`depth_to_space`].
pub fn space_to_depth<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (b, c, ho, wo) = x.dims4()?;
    if r == 0 || ho % r != 0 || wo % r != 0 {
        return Err(Error::InvalidShape {
            op: "space_to_depth",
            shape: x.shape().to_vec(),
            reason: format!("extents not divisible by {r}"),
        });
    }
    let (h, w, cr) = (ho / r, wo / r, c * r * r);
    let mut out = vec![T::zero(); x.numel()];
    let src = x.data();
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let plane = ((bi * cr) + ci * r * r + i * r + j) * h * w;
                    for y in 0..h {
                        let src_row = ((bi * c + ci) * ho + y * r + i) * wo;
                        for xx in 0..w {
                            out[plane + y * w + xx] = src[src_row + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, cr, h, w], out)
}

/// `log2(factor)` stages of 3×3 conv `C → 4C` followed by a ×2 rearrangement.
#[derive(Debug, Clone)]
pub struct SubPixelUpsampler {
    pub stages: Vec<Conv2d>,
    pub channels: usize,
}

impl SubPixelUpsampler {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        factor: usize,
    ) -> Result<Self> {
        if !matches!(factor, 1 | 2 | 4 | 8 | 16) {
            return Err(Error::UnsupportedScale(factor as f64));
        }
        let stages = (0..factor.trailing_zeros())
            .map(|i| Conv2d::build(store, rng, &format!("{name}.s{i}"), channels, channels * 4, 3, Init::He))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stages, channels })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for conv in &self.stages {
            if tape.shape(h)[1] != conv.in_ch {
                return Err(Error::ShapeMismatch {
                    op: "upsample_features",
                    lhs: tape.shape(h).to_vec(),
                    rhs: vec![conv.in_ch],
                });
            }
            let y = conv.forward(tape, p, h)?;
            h = tape.depth_to_space(y, 2)?;
        }
        Ok(h)
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(Conv2d::param_count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rearranges_four_channels() {
        let x = Tensor::<f32>::new(vec![1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = depth_to_space(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(space_to_depth(&y, 2).unwrap(), x);
    }

    #[test]
    fn factor_four_is_two_stages() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let up = SubPixelUpsampler::build(&mut store, &mut rng, "up", 3, 4).unwrap();
        assert_eq!(up.stages.len(), 2);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(vec![1, 3, 5, 6]));
        let y = up.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 20, 24]);
        let bad = tape.constant(Tensor::zeros(vec![1, 2, 5, 6]));
        assert!(up.forward(&mut tape, &p, bad).is_err());
        assert!(SubPixelUpsampler::build(&mut store, &mut rng, "bad", 3, 3).is_err());
    }
}
