//! Depthwise-separable convolution: one spatial filter per input channel
//! followed by a 1×1 channel mix.
//!
//! Depthwise kernels have dims `(kh, kw, cin, 1)`, pointwise kernels
//! `(1, 1, cin, cout)`.

use super::conv::{conv2d, conv2d_backward, Geometry, Padding};
use super::{parallel, Dims, Scalar, Tensor};
use crate::error::{Error, Result};

pub fn separable_macs_per_pixel(kh: usize, kw: usize, cin: usize, cout: usize) -> usize {
    kh * kw * cin + cin * cout
}

fn depthwise_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Geometry> {
    let d = input.dims();
    let kd = kernel.dims();
    if d.is_empty() {
        return Err(Error::shape(format!("zero-sized input {d}")));
    }
    if kd.w != d.c || kd.c != 1 {
        return Err(Error::shape(format!(
            "depthwise kernel {kd} does not match {} input channels",
            d.c
        )));
    }
    Geometry::conv(d.h, d.w, d.c, kd.n, kd.h, stride, padding)
}

pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = depthwise_geometry(input, kernel, stride, padding)?;
    let d = input.dims();
    let c = d.c;
    let out_dims = Dims::new(d.n, g.out_h, g.out_w, c);
    let mut out = vec![T::ZERO; out_dims.len()];
    let img_in = d.image_len();
    let k = kernel.data();
    for (i, out_img) in out.chunks_mut(out_dims.image_len()).enumerate() {
        let img = &input.data()[i * img_in..(i + 1) * img_in];
        parallel::for_each_chunk(out_img, g.out_w * c, |oy, row| {
            for (ox, o) in row.chunks_exact_mut(c).enumerate() {
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pad_top, g.in_h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pad_left, g.in_w) else {
                            continue;
                        };
                        let s = &img[(iy * g.in_w + ix) * c..][..c];
                        let kk = &k[(ky * g.kw + kx) * c..][..c];
                        for ((o, &x), &w) in o.iter_mut().zip(s).zip(kk) {
                            *o += x * w;
                        }
                    }
                }
            }
        });
    }
    Tensor::from_vec(out_dims, out)
}

/// Returns `(grad_input, grad_kernel)`.
pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = depthwise_geometry(input, kernel, stride, padding)?;
    let d = input.dims();
    let c = d.c;
    grad_out.expect_dims(Dims::new(d.n, g.out_h, g.out_w, c), "depthwise backward grad_out")?;
    let img_in = d.image_len();
    let img_out = grad_out.dims().image_len();
    let k = kernel.data();

    let per_image = parallel::map_indices(d.n, |i| {
        let img = &input.data()[i * img_in..(i + 1) * img_in];
        let gimg = &grad_out.data()[i * img_out..(i + 1) * img_out];
        let mut gin = vec![T::ZERO; img_in];
        let mut gk = vec![T::ZERO; kernel.len()];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let go = &gimg[(oy * g.out_w + ox) * c..][..c];
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pad_top, g.in_h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pad_left, g.in_w) else {
                            continue;
                        };
                        let so = (iy * g.in_w + ix) * c;
                        let ko = (ky * g.kw + kx) * c;
                        for ch in 0..c {
                            gin[so + ch] += go[ch] * k[ko + ch];
                            gk[ko + ch] += go[ch] * img[so + ch];
                        }
                    }
                }
            }
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
    ))
}

/// Depthwise filtering followed by a biased 1×1 convolution.
pub fn separable_conv2d<T: Scalar>(
    input: &Tensor<T>,
    depthwise: &Tensor<T>,
    pointwise: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    check_pointwise(pointwise, input.dims().c)?;
    let mid = depthwise_conv2d(input, depthwise, stride, padding)?;
    conv2d(&mid, pointwise, bias, 1, Padding::Valid)
}

#[derive(Clone, Debug)]
pub struct SeparableGrads<T> {
    pub input: Tensor<T>,
    pub depthwise: Tensor<T>,
    pub pointwise: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn separable_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    depthwise: &Tensor<T>,
    pointwise: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<SeparableGrads<T>> {
    check_pointwise(pointwise, input.dims().c)?;
    let mid = depthwise_conv2d(input, depthwise, stride, padding)?;
    let pw = conv2d_backward(&mid, pointwise, grad_out, 1, Padding::Valid)?;
    let (gin, gdw) = depthwise_conv2d_backward(input, depthwise, &pw.input, stride, padding)?;
    Ok(SeparableGrads {
        input: gin,
        depthwise: gdw,
        pointwise: pw.kernel,
        bias: pw.bias,
    })
}

fn check_pointwise<T: Scalar>(pointwise: &Tensor<T>, cin: usize) -> Result<()> {
    let pd = pointwise.dims();
    if pd.n != 1 || pd.h != 1 || pd.w != cin {
        return Err(Error::shape(format!(
            "pointwise kernel {pd} must be 1x1x{cin}xcout"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_filters_pass_through() {
        let x = Tensor::<f32>::from_fn([1, 4, 5, 3], |_, y, x, c| (y * 31 + x * 7 + c) as f32 * 0.1);
        let mut dw = Tensor::<f32>::zeros([3, 3, 3, 1]);
        for c in 0..3 {
            dw.set(1, 1, c, 0, 1.0);
        }
        let mut pw = Tensor::<f32>::zeros([1, 1, 3, 3]);
        for c in 0..3 {
            pw.set(0, 0, c, c, 1.0);
        }
        let y = separable_conv2d(&x, &dw, &pw, &Tensor::zeros([1, 1, 1, 3]), 1, Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn mac_ratio_closed_form() {
        let sep = separable_macs_per_pixel(3, 3, 32, 32) as f64;
        let dense = crate::tensor::dense_macs_per_pixel(3, 3, 32, 32) as f64;
        assert_eq!(sep, 1312.0);
        assert_eq!(dense, 9216.0);
        assert!((sep / dense - 0.1424).abs() < 1e-4);
    }

    #[test]
    fn mismatched_kernel_rejected() {
        let x = Tensor::<f32>::zeros([1, 4, 4, 2]);
        let dw = Tensor::<f32>::zeros([3, 3, 3, 1]);
        assert!(depthwise_conv2d(&x, &dw, 1, Padding::Same).is_err());
    }
}
