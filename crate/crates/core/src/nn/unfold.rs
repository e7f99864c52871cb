//! 3×3 neighbourhood extraction and its adjoint.

use crate::error::{Error, Result};
use crate::nn::conv::{col2im, im2col, ConvSpec, Patch};
use crate::tensor::{Scalar, Tensor};

fn patch3(c: usize, h: usize, w: usize) -> Patch {
    Patch {
        c,
        h,
        w,
        kh: 3,
        kw: 3,
        ho: h,
        wo: w,
        spec: ConvSpec::same(3),
    }
}

/// `(B,C,H,W)` → `(B, C·9, H·W)`; column `j` is the zero-padded 3×3
/// neighbourhood of pixel `j` (row-major), channel-major within the column.
pub fn unfold3x3<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    let g = patch3(c, h, w);
    let (rows, cols) = (g.rows(), g.cols());
    let mut out = vec![T::zero(); b * rows * cols];
    for (xb, ob) in x.data().chunks(c * h * w).zip(out.chunks_mut(rows * cols)) {
        im2col(xb, &g, ob);
    }
    Tensor::new(vec![b, rows, cols], out)
}

/// Number of 3×3 patches covering each pixel of an `h×w` image.
pub fn overlap_counts(h: usize, w: usize) -> Vec<usize> {
    let span = |i: usize, n: usize| (i.saturating_sub(1)..=(i + 1).min(n - 1)).count();
    (0..h * w).map(|j| span(j / w, h) * span(j % w, w)).collect()
}

/// Reassembles columns into a `(B,C,H,W)` canvas.
///
/// With `C·9` rows the overlapping neighbourhoods are summed (the adjoint of
/// [`unfold3x3`]); `normalize` divides each pixel by its overlap count so that
/// `fold(unfold3x3(x), true) == x`. With `C` rows (one value per patch) the
/// columns are reshaped directly.
pub fn fold<T: Scalar>(patches: &Tensor<T>, out_shape: [usize; 4], normalize: bool) -> Result<Tensor<T>> {
    let [b, c, h, w] = out_shape;
    let (pb, rows, cols) = match patches.shape() {
        &[pb, rows, cols] => (pb, rows, cols),
        s => {
            return Err(Error::InvalidShape {
                op: "fold",
                shape: s.to_vec(),
                reason: "expected (B, rows, H·W)".into(),
            })
        }
    };
    if pb != b || cols != h * w || (rows != c * 9 && rows != c) {
        return Err(Error::ShapeMismatch {
            op: "fold",
            lhs: patches.shape().to_vec(),
            rhs: out_shape.to_vec(),
        });
    }
    if rows == c && rows != c * 9 {
        return patches.clone().reshape(vec![b, c, h, w]);
    }
    let g = patch3(c, h, w);
    let mut out = vec![T::zero(); b * c * h * w];
    for (pbk, ob) in patches.data().chunks(rows * cols).zip(out.chunks_mut(c * h * w)) {
        col2im(pbk, &g, ob);
    }
    if normalize {
        let counts = overlap_counts(h, w);
        for plane in out.chunks_mut(h * w) {
            for (v, &n) in plane.iter_mut().zip(&counts) {
                *v = *v / T::from_f64(n as f64);
            }
        }
    }
    Tensor::new(vec![b, c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_patch() {
        let x = Tensor::<f32>::new(vec![1, 1, 1, 1], vec![5.0]).unwrap();
        let u = unfold3x3(&x).unwrap();
        assert_eq!(u.shape(), &[1, 9, 1]);
        assert_eq!(u.data(), &[0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
        let back = fold(&u, [1, 1, 1, 1], true).unwrap();
        assert_eq!(back.data(), &[5.0]);
    }

    #[test]
    fn ramp_neighbourhoods_by_hand() {
        // 1 2 3 / 4 5 6 / 7 8 9
        let x = Tensor::<f64>::from_fn(vec![1, 1, 3, 3], |i| i as f64 + 1.0);
        let u = unfold3x3(&x).unwrap();
        let expected: [[f64; 9]; 9] = [
            [0., 0., 0., 0., 1., 2., 0., 4., 5.],
            [0., 0., 0., 1., 2., 3., 4., 5., 6.],
            [0., 0., 0., 2., 3., 0., 5., 6., 0.],
            [0., 1., 2., 0., 4., 5., 0., 7., 8.],
            [1., 2., 3., 4., 5., 6., 7., 8., 9.],
            [2., 3., 0., 5., 6., 0., 8., 9., 0.],
            [0., 4., 5., 0., 7., 8., 0., 0., 0.],
            [4., 5., 6., 7., 8., 9., 0., 0., 0.],
            [5., 6., 0., 8., 9., 0., 0., 0., 0.],
        ];
        for (j, col) in expected.iter().enumerate() {
            for (r, &v) in col.iter().enumerate() {
                assert_eq!(u.data()[r * 9 + j], v, "pixel {j} tap {r}");
            }
        }
    }

    #[test]
    fn constant_image_columns_differ_only_by_padding() {
        let x = Tensor::<f32>::full(vec![1, 1, 4, 5], 2.0);
        let u = unfold3x3(&x).unwrap();
        let n = 20;
        for j in 0..n {
            let (y, xx) = (j / 5, j % 5);
            for r in 0..9 {
                let (dy, dx) = (r / 3, r % 3);
                let inside = (y + dy) >= 1 && y + dy <= 4 && (xx + dx) >= 1 && xx + dx <= 5;
                assert_eq!(u.data()[r * n + j], if inside { 2.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn unnormalized_fold_counts() {
        let x = Tensor::<f32>::full(vec![1, 1, 3, 3], 1.0);
        let f = fold(&unfold3x3(&x).unwrap(), [1, 1, 3, 3], false).unwrap();
        assert_eq!(f.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn scalar_per_patch_reshapes() {
        let p = Tensor::<f32>::from_fn(vec![1, 1, 6], |i| i as f32);
        let f = fold(&p, [1, 1, 2, 3], false).unwrap();
        assert_eq!(f.shape(), &[1, 1, 2, 3]);
        assert_eq!(f.data(), p.data());
    }

    #[test]
    fn column_count_mismatch_rejected() {
        let p = Tensor::<f32>::zeros(vec![1, 9, 5]);
        assert!(fold(&p, [1, 1, 2, 3], true).is_err());
    }
}
