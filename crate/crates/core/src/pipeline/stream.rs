//! Streaming inference at the color frame rate.
//!
//! Color frame `k` is paired with the latest depth frame `i` whose synced
//! color frame `p(i)` is not after `k`; the network sees
//! `(C_p(i), D_i, C_k)`. Stage A prepares the inputs of a frame, stage B
//! runs the network and hands the prediction to a sink.

use std::sync::mpsc::sync_channel;
use std::time::{Duration, Instant};

use crate::calib::resize_nearest;
use crate::error::{Error, Result};
use crate::eval::{clamp_unit, reapply_mask};
use crate::image::{DepthImage, RgbImage};
use crate::loss::{validity_mask, ValidityMask};
use crate::model::NetworkGraph;
use crate::prep::Preprocess;
use crate::synth::{synchronize, Sequence, SequenceInfo, SequenceReader};
use crate::tensor::Tensor;

/// Random access to the frames of a sequence.
pub trait FrameSource: Sync {
    fn info(&self) -> &SequenceInfo;
    fn rgb_timestamps(&self) -> Vec<i64>;
    fn depth_timestamps(&self) -> Vec<i64>;
    fn rgb(&self, k: usize) -> Result<RgbImage>;
    fn depth(&self, i: usize) -> Result<DepthImage>;
}

impl FrameSource for SequenceReader {
    fn info(&self) -> &SequenceInfo {
        SequenceReader::info(self)
    }
    fn rgb_timestamps(&self) -> Vec<i64> {
        SequenceReader::rgb_timestamps(self)
    }
    fn depth_timestamps(&self) -> Vec<i64> {
        SequenceReader::depth_timestamps(self)
    }
    fn rgb(&self, k: usize) -> Result<RgbImage> {
        Ok(self.load_rgb(k)?.image)
    }
    fn depth(&self, i: usize) -> Result<DepthImage> {
        Ok(self.load_depth(i)?.image)
    }
}

impl FrameSource for Sequence {
    fn info(&self) -> &SequenceInfo {
        &self.info
    }
    fn rgb_timestamps(&self) -> Vec<i64> {
        Sequence::rgb_timestamps(self)
    }
    fn depth_timestamps(&self) -> Vec<i64> {
        Sequence::depth_timestamps(self)
    }
    fn rgb(&self, k: usize) -> Result<RgbImage> {
        Ok(self.rgb[k].image.clone())
    }
    fn depth(&self, i: usize) -> Result<DepthImage> {
        Ok(self.depth[i].image.clone())
    }
}

/// One streamed output position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamStep {
    pub rgb_index: usize,
    pub depth_index: usize,
    /// Color frame paired with `depth_index`.
    pub key_rgb_index: usize,
    pub timestamp_us: i64,
}

/// Output schedule: one step per color frame from the first synced one on.
pub fn schedule(src: &dyn FrameSource) -> Result<Vec<StreamStep>> {
    let rgb_ts = src.rgb_timestamps();
    let sync = synchronize(&rgb_ts, &src.depth_timestamps())?;
    let mut steps = Vec::new();
    for (n, &(i, p)) in sync.pairs.iter().enumerate() {
        let end = sync.pairs.get(n + 1).map_or(rgb_ts.len(), |&(_, q)| q);
        for k in p..end.max(p) {
            steps.push(StreamStep {
                rgb_index: k,
                depth_index: i,
                key_rgb_index: p,
                timestamp_us: rgb_ts[k],
            });
        }
    }
    Ok(steps)
}

/// Network-ready inputs for one step.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub step: StreamStep,
    pub c_t: Tensor<f32>,
    pub d_t: Tensor<f32>,
    pub c_next: Tensor<f32>,
    /// Validity of `D_t` at crop resolution.
    pub input_mask: ValidityMask,
}

/// Stage A with a one-keyframe cache.
pub struct Preparer<'a> {
    src: &'a dyn FrameSource,
    prep: &'a Preprocess,
    max_depth: f32,
    cached: Option<(usize, Tensor<f32>, Tensor<f32>, ValidityMask)>,
}

impl<'a> Preparer<'a> {
    pub fn new(src: &'a dyn FrameSource, prep: &'a Preprocess) -> Self {
        Preparer {
            src,
            prep,
            max_depth: src.info().max_depth_mm as f32,
            cached: None,
        }
    }

    pub fn prepare(&mut self, step: StreamStep) -> Result<Prepared> {
        if self.cached.as_ref().map(|c| c.0) != Some(step.depth_index) {
            let d = self.src.depth(step.depth_index)?;
            let cropped = self.prep.depth_cropped(&d)?;
            let mask = validity_mask(&cropped);
            let small = if self.prep.half {
                resize_nearest(&cropped, cropped.width() / 2, cropped.height() / 2)
            } else {
                cropped
            };
            let c_t = self.prep.color(&self.src.rgb(step.key_rgb_index)?)?.to_tensor();
            self.cached = Some((step.depth_index, c_t, small.to_tensor(self.max_depth), mask));
        }
        let (_, c_t, d_t, mask) = self.cached.as_ref().expect("filled above");
        let c_next = self.prep.color(&self.src.rgb(step.rgb_index)?)?.to_tensor();
        Ok(Prepared {
            step,
            c_t: c_t.clone(),
            d_t: d_t.clone(),
            c_next,
            input_mask: mask.clone(),
        })
    }
}

/// Stage B: forward pass, clamp, back to millimeters at crop resolution.
/// In half mode the prediction is upscaled by nearest neighbor and the
/// input validity mask is reapplied.
pub fn predict(net: &NetworkGraph<f32>, p: &Prepared, max_depth_mm: f32, half: bool) -> Result<DepthImage> {
    let out = clamp_unit(&net.forward_inputs(&p.c_t, &p.d_t, &p.c_next)?);
    let img = DepthImage::from_tensor(&out, max_depth_mm)?;
    if !half {
        return Ok(img);
    }
    let mut up = resize_nearest(&img, p.input_mask.width(), p.input_mask.height());
    reapply_mask(&mut up, &p.input_mask);
    Ok(up)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamTimings {
    pub frames: usize,
    pub wall: Duration,
    /// Per-frame stage A time.
    pub prepare: Vec<Duration>,
    /// Per-frame stage B forward time.
    pub model: Vec<Duration>,
    /// Per-frame sink time.
    pub write: Vec<Duration>,
}

impl StreamTimings {
    pub fn fps(&self) -> f64 {
        self.frames as f64 / self.wall.as_secs_f64().max(1e-12)
    }
}

/// Runs `steps` through both stages, calling `sink` in step order.
/// `pipelined` overlaps stage A of frame `k + 1` with stage B of frame `k`
/// through a capacity-1 hand-off; results are identical either way.
pub fn stream_infer(
    net: &NetworkGraph<f32>,
    src: &dyn FrameSource,
    prep: &Preprocess,
    steps: &[StreamStep],
    pipelined: bool,
    mut sink: impl FnMut(StreamStep, DepthImage) -> Result<()>,
) -> Result<StreamTimings> {
    let (w, h) = prep.network_dims();
    if (net.config().input_h, net.config().input_w) != (h, w) {
        return Err(Error::config(format!(
            "network expects {}x{} input, preprocessing yields {w}x{h}",
            net.config().input_w,
            net.config().input_h
        )));
    }
    let max = src.info().max_depth_mm as f32;
    let mut t = StreamTimings {
        frames: steps.len(),
        ..StreamTimings::default()
    };
    let start = Instant::now();
    let mut stage_b = |p: Prepared, t: &mut StreamTimings| -> Result<()> {
        let s = Instant::now();
        let img = predict(net, &p, max, prep.half)?;
        t.model.push(s.elapsed());
        let s = Instant::now();
        sink(p.step, img)?;
        t.write.push(s.elapsed());
        Ok(())
    };
    if pipelined {
        let prepare_times = std::thread::scope(|scope| -> Result<Vec<Duration>> {
            let (tx, rx) = sync_channel::<Result<Prepared>>(1);
            let producer = scope.spawn(move || {
                let mut prep_a = Preparer::new(src, prep);
                let mut times = Vec::with_capacity(steps.len());
                for &step in steps {
                    let s = Instant::now();
                    let r = prep_a.prepare(step);
                    times.push(s.elapsed());
                    let failed = r.is_err();
                    if tx.send(r).is_err() || failed {
                        break;
                    }
                }
                times
            });
            let mut result = Ok(());
            for r in rx.iter() {
                if let Err(e) = r.and_then(|p| stage_b(p, &mut t)) {
                    result = Err(e);
                    break;
                }
            }
            // Dropping the receiver unblocks a producer stuck on send.
            drop(rx);
            let times = producer.join().expect("stage A thread panicked");
            result.map(|_| times)
        })?;
        t.prepare = prepare_times;
    } else {
        let mut prep_a = Preparer::new(src, prep);
        for &step in steps {
            let s = Instant::now();
            let p = prep_a.prepare(step)?;
            t.prepare.push(s.elapsed());
            stage_b(p, &mut t)?;
        }
    }
    t.wall = start.elapsed();
    Ok(t)
}

/// Raw little-endian millimeters, the `.d16` layout.
pub fn depth_bytes(img: &DepthImage) -> Vec<u8> {
    img.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}
