//! Dense NHWC tensors and the hand-written layer kernels the network is
//! assembled from.
//!
//! Every kernel comes as a forward/backward pair operating on plain
//! [`Tensor`] values. There is no autograd tape: the model wires the
//! backward passes together explicitly.

mod activation;
mod adam;
mod conv;
mod gemm;
pub mod gradcheck;
pub mod parallel;
mod pool;
mod separable;
mod transpose;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Range, Sub, SubAssign};

pub use activation::{concat_channels, relu, relu_backward, split_channels};
pub use adam::{adam_step, AdamConfig};
pub use conv::{conv2d, conv2d_backward, dense_macs_per_pixel, Conv2dGrads, Padding};
pub use pool::{maxpool2d, maxpool2d_backward, MaxPool};
pub use separable::{
    depthwise_conv2d, depthwise_conv2d_backward, separable_conv2d, separable_conv2d_backward,
    separable_macs_per_pixel, SeparableGrads,
};
pub use transpose::{conv2d_transpose, conv2d_transpose_backward};


use crate::error::{Error, Result};

/// Real scalar used for tensor storage. Implemented for `f32` (training and
/// inference) and `f64` (gradient checks).
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Debug
    + Default
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    /// Byte width, used only for reporting.
    const BITS: u32;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    #[allow(clippy::too_many_arguments)]
    #[doc(hidden)]
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_scalar {
    ($t:ty, $bits:expr, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const BITS: u32 = $bits;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            unsafe fn raw_gemm(
                m: usize,
                k: usize,
                n: usize,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_scalar!(f32, 32, matrixmultiply::sgemm);
impl_scalar!(f64, 64, matrixmultiply::dgemm);

/// Tensor extents in `(n, h, w, c)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Dims {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Dims {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Dims { n, h, w, c }
    }

    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of pixels in a single image.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements per image (`h * w * c`).
    pub fn image_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn with_c(self, c: usize) -> Self {
        Dims { c, ..self }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.h, self.w, self.c)
    }
}

impl From<[usize; 4]> for Dims {
    fn from(d: [usize; 4]) -> Self {
        Dims::new(d[0], d[1], d[2], d[3])
    }
}

/// Row-major `n × h × w × c` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: impl Into<Dims>) -> Self {
        Self::full(dims, T::ZERO)
    }

    pub fn full(dims: impl Into<Dims>, value: T) -> Self {
        let dims = dims.into();
        Tensor {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_vec(dims: impl Into<Dims>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        if data.len() != dims.len() {
            return Err(Error::shape(format!(
                "{} elements supplied for dims {dims} ({} expected)",
                data.len(),
                dims.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_fn(dims: impl Into<Dims>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let dims = dims.into();
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    for c in 0..dims.c {
                        data.push(f(n, y, x, c));
                    }
                }
            }
        }
        Tensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        let d = self.dims;
        ((n * d.h + y) * d.w + x) * d.c + c
    }

    #[inline]
    pub fn get(&self, n: usize, y: usize, x: usize, c: usize) -> T {
        self.data[self.offset(n, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, y: usize, x: usize, c: usize, v: T) {
        let o = self.offset(n, y, x, c);
        self.data[o] = v;
    }

    /// Same data, new dims with the same element count.
    pub fn reshape(self, dims: impl Into<Dims>) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_dims(other.dims, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Tensor<T>) -> Result<f64> {
        self.expect_dims(other.dims, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.to_f64() * b.to_f64())
            .sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        self.expect_dims(other.dims, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// Copy of channels `range` for every pixel.
    pub fn slice_channels(&self, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.dims.c {
            return Err(Error::shape(format!(
                "channel range {range:?} out of bounds for {}",
                self.dims
            )));
        }
        let c = self.dims.c;
        let out_c = range.len();
        let mut data = Vec::with_capacity(self.dims.n * self.dims.plane() * out_c);
        for px in self.data.chunks_exact(c.max(1)) {
            data.extend_from_slice(&px[range.clone()]);
        }
        if c == 0 {
            data.clear();
        }
        Tensor::from_vec(self.dims.with_c(out_c), data)
    }

    /// The `i`-th image as a batch of one.
    pub fn batch_item(&self, i: usize) -> Result<Self> {
        if i >= self.dims.n {
            return Err(Error::shape(format!("batch index {i} out of range for {}", self.dims)));
        }
        let len = self.dims.image_len();
        Tensor::from_vec(
            Dims { n: 1, ..self.dims },
            self.data[i * len..(i + 1) * len].to_vec(),
        )
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack an empty list"))?;
        let per = first.dims;
        let mut data = Vec::with_capacity(per.len() * items.len());
        let mut n = 0;
        for t in items {
            if (t.dims.h, t.dims.w, t.dims.c) != (per.h, per.w, per.c) {
                return Err(Error::shape(format!("stack: {} vs {}", t.dims, per)));
            }
            n += t.dims.n;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Dims { n, ..per }, data)
    }

    pub(crate) fn expect_dims(&self, dims: Dims, what: &str) -> Result<()> {
        if self.dims != dims {
            return Err(Error::shape(format!(
                "{what}: expected dims {dims}, got {}",
                self.dims
            )));
        }
        Ok(())
    }
}

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
    pub step_count: u64,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let dims = value.dims();
        Param {
            value,
            grad: Tensor::zeros(dims),
            adam_m: Tensor::zeros(dims),
            adam_v: Tensor::zeros(dims),
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::ZERO);
    }

    /// Adds `g` into the gradient accumulator.
    pub fn accumulate(&mut self, g: &Tensor<T>) -> Result<()> {
        self.grad.add_assign(g)
    }

    /// Converts value and optimizer state to another scalar width.
    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            value: self.value.cast(),
            grad: self.grad.cast(),
            adam_m: self.adam_m.cast(),
            adam_v: self.adam_v.cast(),
            step_count: self.step_count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec([1, 2, 2, 1], vec![0.0; 3]).is_err());
        let t = Tensor::<f32>::from_vec([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(0, 1, 0, 0), 3.0);
    }

    #[test]
    fn slice_and_stack() {
        let t = Tensor::<f64>::from_fn([2, 2, 3, 4], |n, y, x, c| (n * 1000 + y * 100 + x * 10 + c) as f64);
        let s = t.slice_channels(1..3).unwrap();
        assert_eq!(s.dims(), Dims::new(2, 2, 3, 2));
        assert_eq!(s.get(1, 1, 2, 1), 1122.0);
        let a = t.batch_item(0).unwrap();
        let b = t.batch_item(1).unwrap();
        assert_eq!(Tensor::stack(&[&a, &b]).unwrap(), t);
    }

    #[test]
    fn param_dims_track_value() {
        let p = Param::new(Tensor::<f32>::zeros([3, 3, 2, 4]));
        assert_eq!(p.grad.dims(), p.value.dims());
        assert_eq!(p.adam_m.dims(), p.value.dims());
        assert_eq!(p.adam_v.dims(), p.value.dims());
        assert_eq!(p.step_count, 0);
    }
}
