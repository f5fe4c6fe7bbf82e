use super::{Dims, Scalar, Tensor};
use crate::error::{Error, Result};

/// Output of a 2×2/stride-2 max pool together with the flat input index
/// each output value was taken from.
#[derive(Clone, Debug)]
pub struct MaxPool<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// 2×2 max pooling with stride 2. Trailing odd rows/columns are dropped.
/// Ties resolve to the first maximum in row-major window order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>) -> Result<MaxPool<T>> {
    let d = input.dims();
    if d.h < 2 || d.w < 2 {
        return Err(Error::shape(format!("maxpool needs h, w >= 2, got {d}")));
    }
    let (oh, ow) = (d.h / 2, d.w / 2);
    let out_dims = Dims::new(d.n, oh, ow, d.c);
    let mut out = Vec::with_capacity(out_dims.len());
    let mut argmax = Vec::with_capacity(out_dims.len());
    let x = input.data();
    for n in 0..d.n {
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..d.c {
                    let mut best = input.offset(n, 2 * oy, 2 * ox, c);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let o = input.offset(n, 2 * oy + dy, 2 * ox + dx, c);
                        if x[o] > x[best] {
                            best = o;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok(MaxPool {
        output: Tensor::from_vec(out_dims, out)?,
        argmax,
    })
}

/// Routes each output gradient back to the input position that won the max.
pub fn maxpool2d_backward<T: Scalar>(
    input_dims: Dims,
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape(format!(
            "maxpool backward: {} gradients for {} pooled outputs",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut g = Tensor::zeros(input_dims);
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        gd[i] += v;
    }
    Ok(g)
}
