//! Per-sequence, per-method masked RMSE tables.

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{flow_baseline, naive_baseline, FlowConfig};
use crate::image::DepthImage;
use crate::loss::{inpainting_report, masked_rmse, validity_mask, InpaintingReport, ValidityMask};
use crate::model::NetworkGraph;
use crate::synth::Keyframes;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Previous depth frame reused as the prediction.
    Naive,
    /// Previous depth frame warped by color optical flow.
    Flow,
    Network,
    /// Same as `Naive`, reported in the δ sweep.
    InputVsGt,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Flow => "flow",
            Method::Network => "network",
            Method::InputVsGt => "input_vs_gt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: Method,
    pub sequence: String,
    pub delta_frames: usize,
    /// Mean of the per-frame masked RMSEs.
    pub rmse: f64,
    /// Same, restricted to pixels valid in both the ground truth and the
    /// depth input.
    pub rmse_input_valid: f64,
    pub n_frames: usize,
    /// Fraction of ground-truth pixels that are valid.
    pub valid_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        for n in other.notes {
            if !self.notes.contains(&n) {
                self.notes.push(n);
            }
        }
    }

    pub fn sequences(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.sequence) {
                out.push(r.sequence.clone());
            }
        }
        out
    }

    pub fn get(&self, method: Method, sequence: &str, delta_frames: usize) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.sequence == sequence && r.delta_frames == delta_frames)
    }

    /// Arithmetic mean of the per-sequence RMSEs.
    pub fn average(&self, method: Method, delta_frames: usize) -> Option<f64> {
        self.average_by(method, delta_frames, |r| r.rmse)
    }

    pub fn average_input_valid(&self, method: Method, delta_frames: usize) -> Option<f64> {
        self.average_by(method, delta_frames, |r| r.rmse_input_valid)
    }

    fn average_by(&self, method: Method, delta_frames: usize, f: impl Fn(&EvalRow) -> f64) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.delta_frames == delta_frames)
            .map(f)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    fn columns(&self) -> Vec<(Method, usize)> {
        let mut cols: Vec<(Method, usize)> = Vec::new();
        for r in &self.rows {
            if !cols.contains(&(r.method, r.delta_frames)) {
                cols.push((r.method, r.delta_frames));
            }
        }
        cols
    }

    pub fn to_text(&self) -> String {
        let cols = self.columns();
        let mut s = String::new();
        let _ = write!(s, "{:<12}", "sequence");
        for (m, d) in &cols {
            let _ = write!(s, " {:>16}", format!("{m}@{d}"));
        }
        s.push('\n');
        let mut line = |name: &str, value: &dyn Fn(Method, usize) -> Option<f64>| {
            let _ = write!(s, "{name:<12}");
            for &(m, d) in &cols {
                match value(m, d) {
                    Some(v) => {
                        let _ = write!(s, " {v:>16.5}");
                    }
                    None => {
                        let _ = write!(s, " {:>16}", "-");
                    }
                }
            }
            s.push('\n');
        };
        for seq in self.sequences() {
            line(&seq, &|m, d| self.get(m, &seq, d).map(|r| r.rmse));
        }
        line("average", &|m, d| self.average(m, d));
        line("input-valid", &|m, d| self.average_input_valid(m, d));
        for n in &self.notes {
            s.push_str("note: ");
            s.push_str(n);
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per-method `[rmse, rmse_input_valid]`, gt-valid pixel count, pixel count.
type FrameErrors = (Vec<[f64; 2]>, usize, usize);

/// Per-frame masked RMSE of each listed method on one preprocessed
/// sequence. Frames with no pixel valid in both the ground truth and the
/// depth input are skipped.
///
/// Naive and flow predictions keep their invalid (zero) pixels, which count
/// as errors wherever the ground truth is valid.
pub fn evaluate_sequence(
    kf: &Keyframes,
    net: Option<&NetworkGraph<f32>>,
    methods: &[Method],
    delta_frames: usize,
    flow_cfg: &FlowConfig,
) -> Result<EvalReport> {
    if methods.contains(&Method::Network) && net.is_none() {
        return Err(Error::config("network method requested without weights"));
    }
    let max = kf.info.max_depth_mm as f32;
    let n = kf.sample_count(delta_frames);
    let per_frame: Vec<Result<Option<FrameErrors>>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let gt_img = &kf.depth[t + delta_frames];
            let gt = gt_img.to_tensor(max);
            let mask = validity_mask(gt_img);
            let input = validity_mask(&kf.depth[t]);
            let both = ValidityMask::from_bits(
                mask.width(),
                mask.height(),
                mask.bits().iter().zip(input.bits()).map(|(&a, &b)| a && b).collect(),
            )?;
            if both.valid_count() == 0 {
                return Ok(None);
            }
            let mut out = Vec::with_capacity(methods.len());
            for &m in methods {
                let pred = match m {
                    Method::Naive | Method::InputVsGt => naive_baseline(&kf.depth[t]).to_tensor(max),
                    Method::Flow => {
                        flow_baseline(&kf.color[t], &kf.depth[t], &kf.color[t + delta_frames], flow_cfg)?.to_tensor(max)
                    }
                    Method::Network => {
                        let s = kf.sample(t, delta_frames)?;
                        clamp_unit(&net.expect("checked above").forward(&s)?)
                    }
                };
                let ctx = |e: Error| e.context(format!("{} frame {t}", kf.name()));
                out.push([
                    masked_rmse(&pred, &gt, &mask).map_err(ctx)?,
                    masked_rmse(&pred, &gt, &both).map_err(ctx)?,
                ]);
            }
            Ok(Some((out, mask.valid_count(), mask.len())))
        })
        .collect();

    let mut sums = vec![[0.0; 2]; methods.len()];
    let (mut frames, mut valid, mut total, mut skipped) = (0usize, 0usize, 0usize, 0usize);
    for r in per_frame {
        match r? {
            Some((v, nv, nt)) => {
                for (s, x) in sums.iter_mut().zip(v) {
                    s[0] += x[0];
                    s[1] += x[1];
                }
                frames += 1;
                valid += nv;
                total += nt;
            }
            None => skipped += 1,
        }
    }
    if frames == 0 {
        return Err(Error::UndefinedMetric(format!(
            "{}: no frame with valid ground truth at delta {delta_frames}",
            kf.name()
        )));
    }
    let mut report = EvalReport::default();
    for (&m, s) in methods.iter().zip(sums) {
        report.rows.push(EvalRow {
            method: m,
            sequence: kf.name().to_string(),
            delta_frames,
            rmse: s[0] / frames as f64,
            rmse_input_valid: s[1] / frames as f64,
            n_frames: frames,
            valid_fraction: valid as f64 / total as f64,
        });
    }
    if skipped > 0 {
        report.notes.push(format!(
            "{}: {skipped} frame(s) at delta {delta_frames} skipped, no pixel valid in both ground truth and input",
            kf.name()
        ));
    }
    Ok(report)
}

/// Naive, flow and network at delta 1, plus network and input-vs-gt rows
/// for every delta in `deltas`.
pub fn evaluate(
    sequences: &[Keyframes],
    net: &NetworkGraph<f32>,
    deltas: &[usize],
    flow_cfg: &FlowConfig,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for kf in sequences {
        report.extend(evaluate_sequence(
            kf,
            Some(net),
            &[Method::Naive, Method::Flow, Method::Network],
            1,
            flow_cfg,
        )?);
        for &d in deltas {
            report.extend(evaluate_sequence(kf, Some(net), &[Method::Network, Method::InputVsGt], d, flow_cfg)?);
        }
    }
    if deltas.iter().any(|&d| d > 1) {
        report
            .notes
            .push("one network trained at delta 1 is evaluated at every delta".to_string());
    }
    Ok(report)
}

pub fn clamp_unit(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| v.clamp(0.0, 1.0))
}

/// Network inpainting coverage over a whole sequence at `delta_frames`.
pub fn inpainting(kf: &Keyframes, net: &NetworkGraph<f32>, delta_frames: usize) -> Result<InpaintingReport> {
    let (mut count, mut total, mut gap_sum, mut gap_n) = (0usize, 0usize, 0.0, 0usize);
    for t in 0..kf.sample_count(delta_frames) {
        let s = kf.sample(t, delta_frames)?;
        let pred = clamp_unit(&net.forward(&s)?);
        let r = inpainting_report(&pred, &s.gt, &s.input_mask(), &s.gt_mask)?;
        count += r.inpainted_count;
        total += s.gt_mask.len();
        if let Some(g) = r.mean_abs_neighbor_gap {
            gap_sum += g * r.inpainted_count as f64;
            gap_n += r.inpainted_count;
        }
    }
    Ok(InpaintingReport {
        inpainted_count: count,
        inpainted_fraction: if total == 0 { 0.0 } else { count as f64 / total as f64 },
        mean_abs_neighbor_gap: (gap_n > 0).then(|| gap_sum / gap_n as f64),
    })
}

/// Input validity reapplied to a prediction: zero wherever `mask` is false.
pub fn reapply_mask(pred: &mut DepthImage, mask: &ValidityMask) {
    for (v, &b) in pred.data_mut().iter_mut().zip(mask.bits()) {
        if !b {
            *v = 0;
        }
    }
}
