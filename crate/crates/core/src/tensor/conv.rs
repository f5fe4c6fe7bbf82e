//! Dense 2-D cross-correlation via im2col + GEMM.
//!
//! Kernels are stored as tensors whose dims read `(kh, kw, cin, cout)`;
//! biases as `(1, 1, 1, cout)`.

use super::gemm::{gemm, MatRef};
use super::{parallel, Dims, Scalar, Tensor};
use crate::error::{Error, Result};

/// Output pixels handled by one im2col/GEMM block.
const BLOCK_PIXELS: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`. Odd totals put the
    /// extra pixel on the bottom/right.
    Same,
    Valid,
}

/// Sliding-window geometry shared by convolution, its adjoint and the
/// depthwise kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub in_h: usize,
    pub in_w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    pub fn conv(
        in_h: usize,
        in_w: usize,
        cin: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::shape("stride must be at least 1"));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::shape("kernel extent must be positive"));
        }
        if in_h == 0 || in_w == 0 {
            return Err(Error::shape(format!("zero-sized input {in_h}x{in_w}")));
        }
        let (out_h, pad_top) = axis(in_h, kh, stride, padding)?;
        let (out_w, pad_left) = axis(in_w, kw, stride, padding)?;
        Ok(Geometry {
            in_h,
            in_w,
            cin,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    pub fn block_rows(&self) -> usize {
        (BLOCK_PIXELS / self.out_w.max(1)).max(1)
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    /// Input coordinate hit by output row/col `o` and kernel tap `k`.
    #[inline]
    pub fn src(&self, o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }

    /// Gathers patches for output rows `row0..row0 + rows` into `cols`
    /// (`pixels × patch_len`, row-major).
    pub fn im2col<T: Scalar>(&self, img: &[T], row0: usize, rows: usize, cols: &mut [T]) {
        let k = self.patch_len();
        let cin = self.cin;
        for oy in row0..row0 + rows {
            for ox in 0..self.out_w {
                let p = (oy - row0) * self.out_w + ox;
                let dst = &mut cols[p * k..(p + 1) * k];
                for ky in 0..self.kh {
                    let row = &mut dst[ky * self.kw * cin..(ky + 1) * self.kw * cin];
                    match self.src(oy, ky, self.pad_top, self.in_h) {
                        None => row.fill(T::ZERO),
                        Some(iy) => {
                            for kx in 0..self.kw {
                                let d = &mut row[kx * cin..(kx + 1) * cin];
                                match self.src(ox, kx, self.pad_left, self.in_w) {
                                    None => d.fill(T::ZERO),
                                    Some(ix) => {
                                        let s = (iy * self.in_w + ix) * cin;
                                        d.copy_from_slice(&img[s..s + cin]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatter-adds patch rows into `img`.
    pub fn col2im_add<T: Scalar>(&self, cols: &[T], row0: usize, rows: usize, img: &mut [T]) {
        let k = self.patch_len();
        let cin = self.cin;
        for oy in row0..row0 + rows {
            for ox in 0..self.out_w {
                let p = (oy - row0) * self.out_w + ox;
                let src = &cols[p * k..(p + 1) * k];
                for ky in 0..self.kh {
                    let Some(iy) = self.src(oy, ky, self.pad_top, self.in_h) else {
                        continue;
                    };
                    for kx in 0..self.kw {
                        let Some(ix) = self.src(ox, kx, self.pad_left, self.in_w) else {
                            continue;
                        };
                        let d = (iy * self.in_w + ix) * cin;
                        let s = (ky * self.kw + kx) * cin;
                        for (a, &b) in img[d..d + cin].iter_mut().zip(&src[s..s + cin]) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }
}

fn axis(size: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if size < k {
                return Err(Error::shape(format!(
                    "valid convolution needs input extent {size} >= kernel {k}"
                )));
            }
            Ok(((size - k) / stride + 1, 0))
        }
        Padding::Same => {
            if k.is_multiple_of(2) {
                return Err(Error::shape(format!("same padding needs an odd kernel, got {k}")));
            }
            let out = size.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(size);
            Ok((out, total / 2))
        }
    }
}

pub(crate) struct KernelShape {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
}

pub(crate) fn kernel_shape<T: Scalar>(kernel: &Tensor<T>) -> KernelShape {
    let d = kernel.dims();
    KernelShape {
        kh: d.n,
        kw: d.h,
        cin: d.w,
        cout: d.c,
    }
}

pub(crate) fn check_bias<T: Scalar>(bias: &Tensor<T>, cout: usize) -> Result<()> {
    if bias.len() != cout {
        return Err(Error::shape(format!(
            "bias has {} entries, expected {cout}",
            bias.len()
        )));
    }
    Ok(())
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Geometry, KernelShape)> {
    let ks = kernel_shape(kernel);
    let d = input.dims();
    if d.is_empty() {
        return Err(Error::shape(format!("zero-sized input {d}")));
    }
    if d.c != ks.cin {
        return Err(Error::shape(format!(
            "input has {} channels, kernel expects {}",
            d.c, ks.cin
        )));
    }
    if ks.cout == 0 {
        return Err(Error::shape("kernel has zero output channels"));
    }
    let g = Geometry::conv(d.h, d.w, d.c, ks.kh, ks.kw, stride, padding)?;
    Ok((g, ks))
}

/// Multiply-accumulates per output pixel of a dense convolution.
pub fn dense_macs_per_pixel(kh: usize, kw: usize, cin: usize, cout: usize) -> usize {
    kh * kw * cin * cout
}

/// `out[n, y, x, o] = bias[o] + Σ input[n, y·s + ky − pt, x·s + kx − pl, i] · kernel[ky, kx, i, o]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (g, ks) = conv_geometry(input, kernel, stride, padding)?;
    check_bias(bias, ks.cout)?;
    let d = input.dims();
    let out_dims = Dims::new(d.n, g.out_h, g.out_w, ks.cout);
    let mut out = vec![T::ZERO; out_dims.len()];
    let img_in = d.image_len();
    let img_out = out_dims.image_len();
    let rows = g.block_rows();
    let k = g.patch_len();
    let cout = ks.cout;
    let kmat = MatRef::row_major(kernel.data(), cout);
    let b = bias.data();

    for (i, out_img) in out.chunks_mut(img_out).enumerate() {
        let img = &input.data()[i * img_in..(i + 1) * img_in];
        parallel::for_each_chunk(out_img, rows * g.out_w * cout, |blk_idx, blk| {
            let bp = blk.len() / cout;
            let row0 = blk_idx * rows;
            if g.is_pointwise() {
                let a = &img[row0 * g.in_w * g.cin..];
                gemm(bp, k, cout, MatRef::row_major(a, k), kmat, T::ZERO, blk);
            } else {
                let mut cols = vec![T::ZERO; bp * k];
                g.im2col(img, row0, bp / g.out_w, &mut cols);
                gemm(bp, k, cout, MatRef::row_major(&cols, k), kmat, T::ZERO, blk);
            }
            for px in blk.chunks_exact_mut(cout) {
                for (v, &bb) in px.iter_mut().zip(b) {
                    *v += bb;
                }
            }
        });
    }
    Tensor::from_vec(out_dims, out)
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Conv2dGrads<T>> {
    let (g, ks) = conv_geometry(input, kernel, stride, padding)?;
    let d = input.dims();
    grad_out.expect_dims(Dims::new(d.n, g.out_h, g.out_w, ks.cout), "conv2d_backward grad_out")?;
    let cout = ks.cout;
    let k = g.patch_len();
    let img_in = d.image_len();
    let img_out = grad_out.dims().image_len();
    let rows = g.block_rows();
    let kt = MatRef::transposed(kernel.data(), cout);

    let per_image = parallel::map_indices(d.n, |i| {
        let img = &input.data()[i * img_in..(i + 1) * img_in];
        let gimg = &grad_out.data()[i * img_out..(i + 1) * img_out];
        let mut gk = vec![T::ZERO; k * cout];
        let mut gin = vec![T::ZERO; img_in];
        let mut cols = Vec::new();
        let mut dcols = Vec::new();
        for (blk_idx, gblk) in gimg.chunks(rows * g.out_w * cout).enumerate() {
            let bp = gblk.len() / cout;
            let row0 = blk_idx * rows;
            let gmat = MatRef::row_major(gblk, cout);
            if g.is_pointwise() {
                let start = row0 * g.out_w * k;
                let a = &img[start..start + bp * k];
                gemm(k, bp, cout, MatRef::transposed(a, k), gmat, T::ONE, &mut gk);
                gemm(bp, cout, k, gmat, kt, T::ONE, &mut gin[start..start + bp * k]);
            } else {
                cols.resize(bp * k, T::ZERO);
                g.im2col(img, row0, bp / g.out_w, &mut cols);
                gemm(k, bp, cout, MatRef::transposed(&cols, k), gmat, T::ONE, &mut gk);
                dcols.resize(bp * k, T::ZERO);
                gemm(bp, cout, k, gmat, kt, T::ZERO, &mut dcols);
                g.col2im_add(&dcols, row0, bp / g.out_w, &mut gin);
            }
        }
        (gk, gin)
    });

    let mut grad_kernel = vec![T::ZERO; k * cout];
    let mut grad_input = Vec::with_capacity(d.len());
    for (gk, gin) in per_image {
        for (a, b) in grad_kernel.iter_mut().zip(gk) {
            *a += b;
        }
        grad_input.extend(gin);
    }
    Ok(Conv2dGrads {
        input: Tensor::from_vec(d, grad_input)?,
        kernel: Tensor::from_vec(kernel.dims(), grad_kernel)?,
        bias: bias_grad(grad_out),
    })
}

/// Per-channel sum of `grad_out` over batch and pixels.
pub(crate) fn bias_grad<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let c = grad_out.dims().c;
    let mut gb = vec![T::ZERO; c];
    for px in grad_out.data().chunks_exact(c.max(1)) {
        for (a, &b) in gb.iter_mut().zip(px) {
            *a += b;
        }
    }
    Tensor::from_vec([1, 1, 1, c], gb).expect("bias length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor<f64> {
        Tensor::from_fn(dims, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn ones_kernel_counts_overlap() {
        let x = Tensor::<f32>::full([1, 3, 3, 1], 1.0);
        let k = Tensor::<f32>::full([3, 3, 1, 1], 1.0);
        let b = Tensor::<f32>::zeros([1, 1, 1, 1]);
        let y = conv2d(&x, &k, &b, 1, Padding::Same).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, [2, 5, 4, 1]);
        let mut k = Tensor::<f64>::zeros([3, 3, 1, 1]);
        k.set(1, 1, 0, 0, 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros([1, 1, 1, 1]), 1, Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn same_padding_preserves_dims_for_odd_kernels() {
        for k in [1, 3, 5, 7] {
            let g = Geometry::conv(9, 6, 2, k, k, 1, Padding::Same).unwrap();
            assert_eq!((g.out_h, g.out_w), (9, 6));
        }
        let g = Geometry::conv(7, 8, 1, 3, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top), (4, 4, 1));
        let g = Geometry::conv(8, 8, 1, 3, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (4, 0));
    }

    #[test]
    fn errors() {
        let x = Tensor::<f32>::zeros([1, 4, 4, 2]);
        let b = Tensor::<f32>::zeros([1, 1, 1, 1]);
        let k = Tensor::<f32>::zeros([3, 3, 3, 1]);
        assert!(matches!(conv2d(&x, &k, &b, 1, Padding::Same), Err(Error::Shape(_))));
        let empty = Tensor::<f32>::zeros([1, 0, 4, 3]);
        assert!(matches!(conv2d(&empty, &k, &b, 1, Padding::Same), Err(Error::Shape(_))));
        let even = Tensor::<f32>::zeros([2, 2, 2, 1]);
        assert!(conv2d(&x, &even, &b, 1, Padding::Same).is_err());
        assert!(conv2d(&x, &even, &b, 2, Padding::Valid).is_ok());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, [1, 4, 5, 2]);
        let k = rand_tensor(&mut rng, [3, 3, 2, 3]);
        let g = conv2d_backward(&x, &k, &Tensor::zeros([1, 4, 5, 3]), 1, Padding::Same).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernel.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let x = Tensor::<f64>::full([1, 1, 1, 1], 3.0);
        let k = Tensor::<f64>::full([1, 1, 1, 1], -2.0);
        let g = conv2d_backward(&x, &k, &Tensor::full([1, 1, 1, 1], 0.5), 1, Padding::Same).unwrap();
        assert_eq!(g.input.data(), &[-1.0]);
        assert_eq!(g.kernel.data(), &[1.5]);
        assert_eq!(g.bias.data(), &[0.5]);
    }

    #[test]
    fn grad_out_dims_checked() {
        let x = Tensor::<f64>::zeros([1, 4, 4, 1]);
        let k = Tensor::<f64>::zeros([3, 3, 1, 2]);
        assert!(conv2d_backward(&x, &k, &Tensor::zeros([1, 4, 4, 1]), 1, Padding::Same).is_err());
    }

    #[test]
    fn blocked_path_matches_single_block() {
        // Wide enough to need several GEMM blocks per image.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, [1, 70, 64, 2]);
        let k = rand_tensor(&mut rng, [3, 3, 2, 2]);
        let b = Tensor::zeros([1, 1, 1, 2]);
        let y = conv2d(&x, &k, &b, 1, Padding::Same).unwrap();
        for &(yy, xx) in &[(0usize, 0usize), (31, 63), (32, 0), (69, 10)] {
            let mut acc = 0.0;
            for ky in 0..3 {
                for kx in 0..3 {
                    let iy = yy as isize + ky as isize - 1;
                    let ix = xx as isize + kx as isize - 1;
                    if iy < 0 || ix < 0 || iy >= 70 || ix >= 64 {
                        continue;
                    }
                    for ci in 0..2 {
                        acc += x.get(0, iy as usize, ix as usize, ci) * k.get(ky, kx, ci, 1);
                    }
                }
            }
            assert!((y.get(0, yy, xx, 1) - acc).abs() < 1e-12);
        }
    }
}
