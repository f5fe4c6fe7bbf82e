//! Validity masking and the masked RMSE used both as training loss and as
//! the evaluation metric.
//!
//! A pixel is valid exactly when its depth is non-zero. Every loss and
//! metric here ignores invalid ground-truth pixels.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::image::DepthImage;
use crate::tensor::gradcheck::Layer;
use crate::tensor::{Param, Scalar, Tensor};

/// Per-pixel validity for one or more frames of equal size (`true` = valid).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    frames: usize,
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl ValidityMask {
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::shape(format!(
                "{} mask bits for a {width}x{height} frame",
                bits.len()
            )));
        }
        Ok(ValidityMask {
            frames: 1,
            height,
            width,
            bits,
        })
    }

    pub fn all_valid(width: usize, height: usize) -> Self {
        ValidityMask {
            frames: 1,
            height,
            width,
            bits: vec![true; width * height],
        }
    }

    /// Single-channel tensor; one mask frame per batch item.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let d = t.dims();
        if d.c != 1 {
            return Err(Error::shape(format!("mask source must have one channel, got {d}")));
        }
        Ok(ValidityMask {
            frames: d.n,
            height: d.h,
            width: d.w,
            bits: t.data().iter().map(|&v| v != T::ZERO).collect(),
        })
    }

    /// Stacks single- or multi-frame masks of equal frame size.
    pub fn stack(masks: &[&ValidityMask]) -> Result<Self> {
        let first = masks.first().ok_or_else(|| Error::shape("cannot stack zero masks"))?;
        let mut bits = Vec::new();
        let mut frames = 0;
        for m in masks {
            if (m.width, m.height) != (first.width, first.height) {
                return Err(Error::shape("mask frame sizes differ"));
            }
            frames += m.frames;
            bits.extend_from_slice(&m.bits);
        }
        Ok(ValidityMask {
            frames,
            height: first.height,
            width: first.width,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn frame(&self, i: usize) -> ValidityMask {
        let len = self.width * self.height;
        ValidityMask {
            frames: 1,
            height: self.height,
            width: self.width,
            bits: self.bits[i * len..(i + 1) * len].to_vec(),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Zeroes `t` wherever the mask is invalid.
    pub fn apply<T: Scalar>(&self, t: &mut Tensor<T>) -> Result<()> {
        self.check(t, "apply")?;
        for (v, &b) in t.data_mut().iter_mut().zip(&self.bits) {
            if !b {
                *v = T::ZERO;
            }
        }
        Ok(())
    }

    fn check<T: Scalar>(&self, t: &Tensor<T>, what: &str) -> Result<()> {
        let d = t.dims();
        if d.c != 1 || (d.n, d.h, d.w) != (self.frames, self.height, self.width) {
            return Err(Error::shape(format!(
                "{what}: tensor {d} vs mask {}x{}x{}",
                self.frames, self.height, self.width
            )));
        }
        Ok(())
    }
}

/// False exactly where the depth reading is zero.
pub fn validity_mask(depth: &DepthImage) -> ValidityMask {
    ValidityMask {
        frames: 1,
        height: depth.height(),
        width: depth.width(),
        bits: depth.data().iter().map(|&d| d != 0).collect(),
    }
}

pub fn invalid_fraction(mask: &ValidityMask) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    (mask.len() - mask.valid_count()) as f64 / mask.len() as f64
}

fn sum_sq<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &ValidityMask) -> Result<(f64, usize)> {
    gt.expect_dims(pred.dims(), "masked_rmse")?;
    mask.check(pred, "masked_rmse")?;
    let mut sum = 0.0;
    let mut n = 0;
    for ((&p, &g), &b) in pred.data().iter().zip(gt.data()).zip(&mask.bits) {
        if b {
            let e = p.to_f64() - g.to_f64();
            sum += e * e;
            n += 1;
        }
    }
    Ok((sum, n))
}

/// `sqrt(mean over valid pixels of (pred − gt)²)`, pooled over every frame
/// in the batch.
pub fn masked_rmse<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &ValidityMask) -> Result<f64> {
    let (sum, n) = sum_sq(pred, gt, mask)?;
    if n == 0 {
        return Err(Error::UndefinedMetric("no valid ground-truth pixels".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// Gradient of [`masked_rmse`] with respect to `pred`:
/// `(pred − gt) / (N_valid · rmse)` at valid pixels, 0 elsewhere. At zero
/// error the (sub)gradient returned is all zeros.
pub fn masked_rmse_grad<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &ValidityMask) -> Result<Tensor<T>> {
    let (sum, n) = sum_sq(pred, gt, mask)?;
    if n == 0 {
        return Err(Error::UndefinedMetric("no valid ground-truth pixels".into()));
    }
    let rmse = (sum / n as f64).sqrt();
    let mut g = Tensor::zeros(pred.dims());
    if rmse == 0.0 {
        return Ok(g);
    }
    let scale = 1.0 / (n as f64 * rmse);
    for (((o, &p), &t), &b) in g.data_mut().iter_mut().zip(pred.data()).zip(gt.data()).zip(&mask.bits) {
        if b {
            *o = T::from_f64((p.to_f64() - t.to_f64()) * scale);
        }
    }
    Ok(g)
}

/// Masked RMSE as a layer producing a `1×1×1×1` loss, for gradient checks.
pub struct MaskedRmseLayer<T> {
    pub gt: Tensor<T>,
    pub mask: ValidityMask,
}

impl<T: Scalar> Layer<T> for MaskedRmseLayer<T> {
    fn name(&self) -> &str {
        "masked_rmse"
    }
    fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let v = masked_rmse(input, &self.gt, &self.mask)?;
        Tensor::from_vec([1, 1, 1, 1], vec![T::from_f64(v)])
    }
    fn backward(&mut self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = grad_out.data()[0];
        Ok(masked_rmse_grad(input, &self.gt, &self.mask)?.map(|v| v * g))
    }
    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct InpaintingReport {
    /// Pixels invalid in both the input depth and the ground truth.
    pub inpainted_count: usize,
    pub inpainted_fraction: f64,
    /// Mean `|pred − nearest valid gt|` over those pixels; `None` when the
    /// set is empty or the frame has no valid gt at all.
    pub mean_abs_neighbor_gap: Option<f64>,
}

/// Coverage statistics for predictions at pixels the sensor never measured.
///
/// There is no ground truth at those pixels, so the neighbor gap is only a
/// smoothness proxy. Nearest neighbors are found by a 4-connected
/// breadth-first search from all valid gt pixels.
pub fn inpainting_report<T: Scalar>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    input_mask: &ValidityMask,
    gt_mask: &ValidityMask,
) -> Result<InpaintingReport> {
    gt.expect_dims(pred.dims(), "inpainting_report")?;
    input_mask.check(pred, "inpainting_report input mask")?;
    gt_mask.check(pred, "inpainting_report gt mask")?;
    let (w, h) = (gt_mask.width, gt_mask.height);
    let plane = w * h;
    let mut count = 0;
    let mut gap_sum = 0.0;
    let mut gap_n = 0;
    for f in 0..gt_mask.frames {
        let gm = &gt_mask.bits[f * plane..(f + 1) * plane];
        let im = &input_mask.bits[f * plane..(f + 1) * plane];
        let pv = &pred.data()[f * plane..(f + 1) * plane];
        let gv = &gt.data()[f * plane..(f + 1) * plane];
        let holes: Vec<usize> = (0..plane).filter(|&i| !gm[i] && !im[i]).collect();
        count += holes.len();
        if holes.is_empty() {
            continue;
        }
        let nearest = nearest_valid(gm, w, h);
        for i in holes {
            if let Some(j) = nearest[i] {
                gap_sum += (pv[i].to_f64() - gv[j].to_f64()).abs();
                gap_n += 1;
            }
        }
    }
    let total = gt_mask.bits.len();
    Ok(InpaintingReport {
        inpainted_count: count,
        inpainted_fraction: if total == 0 { 0.0 } else { count as f64 / total as f64 },
        mean_abs_neighbor_gap: (gap_n > 0).then(|| gap_sum / gap_n as f64),
    })
}

fn nearest_valid(valid: &[bool], w: usize, h: usize) -> Vec<Option<usize>> {
    let mut nearest = vec![None; valid.len()];
    let mut queue = VecDeque::new();
    for (i, &v) in valid.iter().enumerate() {
        if v {
            nearest[i] = Some(i);
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let src = nearest[i];
        let mut visit = |j: usize| {
            if nearest[j].is_none() {
                nearest[j] = src;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    nearest
}
