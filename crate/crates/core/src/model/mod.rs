//! The depth reconstruction network: configuration, graph, and weight files.

mod config;
mod graph;
mod weights;

pub use config::{NetworkConfig, SkipConnection, SkipFlags, MAX_CASCADES, MIN_CASCADES};
pub use graph::{LayerTiming, NetworkGraph, OpKind, Profile, DEPTH_CHANNELS, RGB_CHANNELS};
pub use weights::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use crate::error::{Error, Result};
use crate::loss::ValidityMask;
use crate::tensor::{Scalar, Tensor};

/// One training/evaluation example: the current color frame, the depth
/// input aligned to it, the next color frame, and the ground-truth depth
/// at the next color timestamp. Depth values are normalized; 0 is invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T = f32> {
    pub c_t: Tensor<T>,
    pub d_t: Tensor<T>,
    pub c_next: Tensor<T>,
    pub gt: Tensor<T>,
    pub gt_mask: ValidityMask,
}

impl<T: Scalar> Sample<T> {
    /// Checks shapes and derives the ground-truth mask from zeros in `gt`.
    pub fn new(c_t: Tensor<T>, d_t: Tensor<T>, c_next: Tensor<T>, gt: Tensor<T>) -> Result<Self> {
        let d = c_t.dims();
        if d.c != 3 {
            return Err(Error::shape(format!("C_t must have 3 channels, got {d}")));
        }
        c_next.expect_dims(d, "C_next")?;
        d_t.expect_dims(d.with_c(1), "D_t")?;
        gt.expect_dims(d.with_c(1), "ground truth")?;
        let gt_mask = ValidityMask::from_tensor(&gt)?;
        Ok(Sample {
            c_t,
            d_t,
            c_next,
            gt,
            gt_mask,
        })
    }

    /// Batch size.
    pub fn len(&self) -> usize {
        self.c_t.dims().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(h, w)`.
    pub fn hw(&self) -> (usize, usize) {
        let d = self.c_t.dims();
        (d.h, d.w)
    }

    /// Validity of the sparse depth input.
    pub fn input_mask(&self) -> ValidityMask {
        ValidityMask::from_tensor(&self.d_t).expect("single-channel depth")
    }

    pub fn stack(items: &[Sample<T>]) -> Result<Sample<T>> {
        if items.len() == 1 {
            return Ok(items[0].clone());
        }
        let pick = |f: fn(&Sample<T>) -> &Tensor<T>| Tensor::stack(&items.iter().map(f).collect::<Vec<_>>());
        Ok(Sample {
            c_t: pick(|s| &s.c_t)?,
            d_t: pick(|s| &s.d_t)?,
            c_next: pick(|s| &s.c_next)?,
            gt: pick(|s| &s.gt)?,
            gt_mask: ValidityMask::stack(&items.iter().map(|s| &s.gt_mask).collect::<Vec<_>>())?,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Sample<U> {
        Sample {
            c_t: self.c_t.cast(),
            d_t: self.d_t.cast(),
            c_next: self.c_next.cast(),
            gt: self.gt.cast(),
            gt_mask: self.gt_mask.clone(),
        }
    }
}
