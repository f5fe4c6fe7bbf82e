use super::{Dims, Scalar, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Passes `grad_out` where `input > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_dims(input.dims(), "relu_backward")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::from_vec(input.dims(), data)
}

/// Channel concatenation; `a`'s channels come first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (da, db) = (a.dims(), b.dims());
    if (da.n, da.h, da.w) != (db.n, db.h, db.w) {
        return Err(Error::shape(format!("concat_channels: {da} vs {db}")));
    }
    let c = da.c + db.c;
    let out_dims = Dims { c, ..da };
    if db.c == 0 {
        return Ok(a.clone());
    }
    if da.c == 0 {
        return Ok(b.clone());
    }
    let mut data = Vec::with_capacity(out_dims.len());
    for (pa, pb) in a.data().chunks_exact(da.c).zip(b.data().chunks_exact(db.c)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Tensor::from_vec(out_dims, data)
}

/// Inverse of [`concat_channels`] for gradients: splits after channel `ca`.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, ca: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = t.dims().c;
    if ca > c {
        return Err(Error::shape(format!("split at {ca} beyond {c} channels")));
    }
    Ok((t.slice_channels(0..ca)?, t.slice_channels(ca..c)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::<f32>::from_vec([1, 1, 3, 1], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full([1, 1, 3, 1], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
        let pos = Tensor::<f32>::from_vec([1, 1, 2, 1], vec![0.5, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn concat_layout() {
        let a = Tensor::<f32>::from_fn([1, 2, 2, 3], |_, y, x, c| (y * 10 + x * 3 + c) as f32);
        let b = Tensor::<f32>::full([1, 2, 2, 1], -1.0);
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.dims(), Dims::new(1, 2, 2, 4));
        assert_eq!(ab.slice_channels(0..3).unwrap(), a);
        assert_eq!(concat_channels(&a, &Tensor::zeros([1, 2, 2, 0])).unwrap(), a);
        let (sa, sb) = split_channels(&ab, 3).unwrap();
        assert_eq!((sa, sb), (a.clone(), b));
        assert!(concat_channels(&a, &Tensor::zeros([1, 3, 2, 1])).is_err());
    }
}
