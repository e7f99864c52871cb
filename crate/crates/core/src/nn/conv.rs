//! 2-D cross-correlation via im2col + GEMM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul, Scalar, Tensor};

/// Stride and zero padding of a convolution, as `(vertical, horizontal)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvSpec {
    /// Stride 1 with `(k - 1) / 2` padding, preserving spatial size for odd `k`.
    pub fn same(k: usize) -> Self {
        Self {
            stride: (1, 1),
            padding: ((k - 1) / 2, (k - 1) / 2),
        }
    }

    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        if sh == 0 || sw == 0 || h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::InvalidShape {
                op: "conv2d",
                shape: vec![h, w, kh, kw],
                reason: format!("kernel does not fit with {self:?}"),
            });
        }
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }

    fn is_pointwise(&self, kh: usize, kw: usize) -> bool {
        kh == 1 && kw == 1 && self.stride == (1, 1) && self.padding == (0, 0)
    }
}

/// Geometry of one im2col expansion.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Patch {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub spec: ConvSpec,
}

impl Patch {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Calls `f(row, col, src_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.padding;
        for ci in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    for oy in 0..self.ho {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = (ci * self.h + iy as usize) * self.w;
                        for ox in 0..self.wo {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(row, oy * self.wo + ox, base + ix as usize);
                        }
                    }
                }
            }
        }
    }
}

/// Expands one `C×H×W` image into a `(C·kh·kw) × (ho·wo)` column matrix.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &Patch, cols: &mut [T]) {
    let n = g.cols();
    cols.iter_mut().for_each(|v| *v = T::zero());
    g.for_each_tap(|row, col, src| cols[row * n + col] = x[src]);
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &Patch, dx: &mut [T]) {
    let n = g.cols();
    g.for_each_tap(|row, col, src| dx[src] += cols[row * n + col]);
}

fn check_conv<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<()> {
    let (_, c, _, _) = x.dims4()?;
    let (co, ci, _, _) = w.dims4()?;
    if ci != c {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    if let Some(b) = b {
        if b.numel() != co {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: w.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
    }
    Ok(())
}

fn geometry<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, spec: ConvSpec) -> Result<Patch> {
    let (_, c, h, wd) = x.dims4()?;
    let (_, _, kh, kw) = w.dims4()?;
    let (ho, wo) = spec.output_size(h, wd, kh, kw)?;
    Ok(Patch {
        c,
        h,
        w: wd,
        kh,
        kw,
        ho,
        wo,
        spec,
    })
}

/// Cross-correlation of `x (B,Cin,H,W)` with `w (Cout,Cin,kh,kw)` plus bias.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    check_conv(x, w, b)?;
    let g = geometry(x, w, spec)?;
    let (batch, _, _, _) = x.dims4()?;
    let co = w.shape()[0];
    let (k, n) = (g.rows(), g.cols());
    let pointwise = spec.is_pointwise(g.kh, g.kw);
    let mut out = vec![T::zero(); batch * co * n];
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * n] };
    let in_per = g.c * g.h * g.w;
    for bi in 0..batch {
        let xb = &x.data()[bi * in_per..(bi + 1) * in_per];
        let yb = &mut out[bi * co * n..(bi + 1) * co * n];
        if let Some(b) = b {
            for (o, row) in yb.chunks_mut(n).enumerate() {
                row.iter_mut().for_each(|v| *v = b.data()[o]);
            }
        }
        let src = if pointwise {
            xb
        } else {
            im2col(xb, &g, &mut cols);
            &cols
        };
        matmul(co, k, n, w.data(), false, src, false, yb, b.is_some());
    }
    Tensor::new(vec![batch, co, g.ho, g.wo], out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
    spec: ConvSpec,
    needs: [bool; 3],
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>)> {
    let g = geometry(x, w, spec)?;
    let (batch, _, _, _) = x.dims4()?;
    let co = w.shape()[0];
    let (k, n) = (g.rows(), g.cols());
    let pointwise = spec.is_pointwise(g.kh, g.kw);
    let in_per = g.c * g.h * g.w;

    let mut dx = needs[0].then(|| vec![T::zero(); x.numel()]);
    let mut dw = needs[1].then(|| vec![T::zero(); w.numel()]);
    let mut db = needs[2].then(|| vec![T::zero(); co]);
    let mut cols = vec![T::zero(); if pointwise { 0 } else { k * n }];
    let mut dcols = vec![T::zero(); if pointwise || dx.is_none() { 0 } else { k * n }];

    for bi in 0..batch {
        let gb = &grad.data()[bi * co * n..(bi + 1) * co * n];
        let xb = &x.data()[bi * in_per..(bi + 1) * in_per];
        if let Some(db) = db.as_mut() {
            for (o, row) in gb.chunks(n).enumerate() {
                db[o] += row.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let src = if pointwise {
                xb
            } else {
                im2col(xb, &g, &mut cols);
                &cols
            };
            matmul(co, n, k, gb, false, src, true, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[bi * in_per..(bi + 1) * in_per];
            if pointwise {
                matmul(k, co, n, w.data(), true, gb, false, dxb, true);
            } else {
                matmul(k, co, n, w.data(), true, gb, false, &mut dcols, false);
                col2im(&dcols, &g, dxb);
            }
        }
    }
    let dx = dx.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?;
    let dw = dw.map(|d| Tensor::new(w.shape().to_vec(), d)).transpose()?;
    let db = db.map(|d| Tensor::new(vec![co], d)).transpose()?;
    Ok((dx, dw, db))
}
