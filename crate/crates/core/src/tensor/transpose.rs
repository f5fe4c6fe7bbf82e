//! Strided transposed convolution, implemented as the exact adjoint of
//! [`conv2d`](super::conv2d): a GEMM followed by a col2im scatter-add.
//!
//! Kernel dims are `(kh, kw, cout, cin)`.

use super::conv::{bias_grad, check_bias, Geometry};
use super::gemm::{gemm, MatRef};
use super::{parallel, Dims, Scalar, Tensor};
use crate::error::{Error, Result};

/// Geometry of the forward convolution this op is the adjoint of: it maps
/// the transposed output (`out_h × out_w`) back onto the transposed input.
fn adjoint_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    out_hw: Option<(usize, usize)>,
) -> Result<(Geometry, usize)> {
    let d = input.dims();
    let kd = kernel.dims();
    let (kh, kw, cout, cin) = (kd.n, kd.h, kd.w, kd.c);
    if d.is_empty() {
        return Err(Error::shape(format!("zero-sized input {d}")));
    }
    if stride == 0 || kh == 0 || kw == 0 {
        return Err(Error::shape("stride and kernel extents must be positive"));
    }
    if d.c != cin {
        return Err(Error::shape(format!(
            "input has {} channels, transposed kernel expects {cin}",
            d.c
        )));
    }
    let (out_h, out_w) = out_hw.unwrap_or((d.h * stride, d.w * stride));
    let fits = |o: usize, i: usize| o >= i * stride && o < (i + 1) * stride;
    if !fits(out_h, d.h) || !fits(out_w, d.w) {
        return Err(Error::shape(format!(
            "output {out_h}x{out_w} incompatible with input {}x{} at stride {stride}",
            d.h, d.w
        )));
    }
    let g = Geometry {
        in_h: out_h,
        in_w: out_w,
        cin: cout,
        kh,
        kw,
        stride,
        pad_top: kh.saturating_sub(stride) / 2,
        pad_left: kw.saturating_sub(stride) / 2,
        out_h: d.h,
        out_w: d.w,
    };
    Ok((g, cout))
}

/// Upsamples by `stride` (output `h·stride × w·stride`, or `out_hw` when
/// the caller needs one extra row/column to match an odd skip tensor;
/// uncovered positions then hold only the bias).
pub fn conv2d_transpose<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    out_hw: Option<(usize, usize)>,
) -> Result<Tensor<T>> {
    let (g, cout) = adjoint_geometry(input, kernel, stride, out_hw)?;
    check_bias(bias, cout)?;
    let d = input.dims();
    let cin = d.c;
    let kk = g.patch_len();
    let out_dims = Dims::new(d.n, g.in_h, g.in_w, cout);
    let img_in = d.image_len();
    let rows = g.block_rows();
    let mt = MatRef::transposed(kernel.data(), cin);

    let images = parallel::map_indices(d.n, |i| {
        let img = &input.data()[i * img_in..(i + 1) * img_in];
        let mut out = vec![T::ZERO; out_dims.image_len()];
        let mut cols = Vec::new();
        let mut row0 = 0;
        while row0 < g.out_h {
            let nrows = rows.min(g.out_h - row0);
            let bp = nrows * g.out_w;
            cols.resize(bp * kk, T::ZERO);
            let a = &img[row0 * g.out_w * cin..][..bp * cin];
            gemm(bp, cin, kk, MatRef::row_major(a, cin), mt, T::ZERO, &mut cols);
            g.col2im_add(&cols, row0, nrows, &mut out);
            row0 += nrows;
        }
        for px in out.chunks_exact_mut(cout) {
            for (v, &b) in px.iter_mut().zip(bias.data()) {
                *v += b;
            }
        }
        out
    });
    Tensor::from_vec(out_dims, images.concat())
}

/// Returns `(grad_input, grad_kernel, grad_bias)`.
pub fn conv2d_transpose_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let go = grad_out.dims();
    let (g, cout) = adjoint_geometry(input, kernel, stride, Some((go.h, go.w)))?;
    let d = input.dims();
    grad_out.expect_dims(Dims::new(d.n, g.in_h, g.in_w, cout), "conv2d_transpose_backward grad_out")?;
    let cin = d.c;
    let kk = g.patch_len();
    let img_in = d.image_len();
    let img_out = go.image_len();
    let rows = g.block_rows();
    let m = MatRef::row_major(kernel.data(), cin);

    let per_image = parallel::map_indices(d.n, |i| {
        let img = &input.data()[i * img_in..(i + 1) * img_in];
        let gimg = &grad_out.data()[i * img_out..(i + 1) * img_out];
        let mut gin = vec![T::ZERO; img_in];
        let mut gk = vec![T::ZERO; kernel.len()];
        let mut cols = Vec::new();
        let mut row0 = 0;
        while row0 < g.out_h {
            let nrows = rows.min(g.out_h - row0);
            let bp = nrows * g.out_w;
            cols.resize(bp * kk, T::ZERO);
            g.im2col(gimg, row0, nrows, &mut cols);
            let start = row0 * g.out_w * cin;
            gemm(bp, kk, cin, MatRef::row_major(&cols, kk), m, T::ZERO, &mut gin[start..start + bp * cin]);
            let a = &img[start..start + bp * cin];
            gemm(kk, bp, cin, MatRef::transposed(&cols, kk), MatRef::row_major(a, cin), T::ONE, &mut gk);
            row0 += nrows;
        }
        (gin, gk)
    });

    let mut grad_input = Vec::with_capacity(d.len());
    let mut grad_kernel = vec![T::ZERO; kernel.len()];
    for (gin, gk) in per_image {
        grad_input.extend(gin);
        for (a, b) in grad_kernel.iter_mut().zip(gk) {
            *a += b;
        }
    }
    Ok((
        Tensor::from_vec(d, grad_input)?,
        Tensor::from_vec(kernel.dims(), grad_kernel)?,
        bias_grad(grad_out),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubles_spatial_dims() {
        let x = Tensor::<f32>::full([1, 2, 2, 1], 1.0);
        let k = Tensor::<f32>::full([2, 2, 1, 1], 1.0);
        let y = conv2d_transpose(&x, &k, &Tensor::zeros([1, 1, 1, 1]), 2, None).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 4, 4, 1));
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn odd_target_gets_bias_only_row() {
        let x = Tensor::<f32>::full([1, 2, 3, 1], 1.0);
        let k = Tensor::<f32>::full([2, 2, 1, 1], 2.0);
        let y = conv2d_transpose(&x, &k, &Tensor::full([1, 1, 1, 1], 0.5), 2, Some((5, 7))).unwrap();
        assert_eq!(y.dims(), Dims::new(1, 5, 7, 1));
        assert_eq!(y.get(0, 0, 0, 0), 2.5);
        assert_eq!(y.get(0, 4, 3, 0), 0.5);
        assert_eq!(y.get(0, 2, 6, 0), 0.5);
        assert!(conv2d_transpose(&x, &k, &Tensor::zeros([1, 1, 1, 1]), 2, Some((6, 8))).is_err());
    }
}
