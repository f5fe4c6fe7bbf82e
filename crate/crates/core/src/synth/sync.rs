use super::io::{Sequence, SequenceInfo, SequenceReader};
use super::render::SceneRenderer;
use super::spec::SceneSpec;
use crate::error::{Error, Result};
use crate::image::{DepthImage, RgbImage};
use crate::model::Sample;
use crate::prep::Preprocess;

/// For each depth frame, the nearest color frame in time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncIndex {
    /// `(depth_index, rgb_index)`.
    pub pairs: Vec<(usize, usize)>,
    /// `|t_rgb - t_depth|` per pair.
    pub residual_us: Vec<i64>,
}

/// Nearest-timestamp pairing; ties go to the earlier color frame. Both
/// lists must be sorted.
pub fn synchronize(rgb_ts: &[i64], depth_ts: &[i64]) -> Result<SyncIndex> {
    if rgb_ts.is_empty() || depth_ts.is_empty() {
        return Err(Error::Sync("cannot synchronize an empty stream".into()));
    }
    let mut pairs = Vec::with_capacity(depth_ts.len());
    let mut residual_us = Vec::with_capacity(depth_ts.len());
    for (i, &t) in depth_ts.iter().enumerate() {
        let after = rgb_ts.partition_point(|&r| r < t);
        let best = match (after.checked_sub(1), (after < rgb_ts.len()).then_some(after)) {
            (Some(b), Some(a)) => {
                if t - rgb_ts[b] <= rgb_ts[a] - t {
                    b
                } else {
                    a
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => unreachable!("rgb_ts is non-empty"),
        };
        pairs.push((i, best));
        residual_us.push((rgb_ts[best] - t).abs());
    }
    Ok(SyncIndex { pairs, residual_us })
}

/// Depth frames with the color frame paired to each: all that sample
/// assembly needs, at a fraction of a full sequence's memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Keyframes {
    pub info: SequenceInfo,
    pub depth: Vec<DepthImage>,
    /// `color[i]` is the color frame paired with `depth[i]`.
    pub color: Vec<RgbImage>,
    pub depth_ts: Vec<i64>,
}

impl Keyframes {
    pub fn from_sequence(seq: &Sequence) -> Result<Self> {
        let sync = synchronize(&seq.rgb_timestamps(), &seq.depth_timestamps())?;
        Ok(Keyframes {
            info: seq.info.clone(),
            depth: seq.depth.iter().map(|f| f.image.clone()).collect(),
            color: sync.pairs.iter().map(|&(_, k)| seq.rgb[k].image.clone()).collect(),
            depth_ts: seq.depth_timestamps(),
        })
    }

    /// Loads only the paired color frames.
    pub fn from_reader(reader: &SequenceReader) -> Result<Self> {
        let sync = synchronize(&reader.rgb_timestamps(), &reader.depth_timestamps())?;
        let mut depth = Vec::with_capacity(sync.pairs.len());
        let mut color = Vec::with_capacity(sync.pairs.len());
        for &(i, k) in &sync.pairs {
            depth.push(reader.load_depth(i)?.image);
            color.push(reader.load_rgb(k)?.image);
        }
        Ok(Keyframes {
            info: reader.info().clone(),
            depth,
            color,
            depth_ts: reader.depth_timestamps(),
        })
    }

    /// Renders only the keyframes of the clip `generate_sequence` would
    /// produce with the same arguments.
    pub fn render(spec: &SceneSpec, seed: u64, duration_s: f64, name: &str) -> Result<Self> {
        if !(duration_s > 0.0) {
            return Err(Error::config(format!("duration must be positive, got {duration_s}")));
        }
        let r = SceneRenderer::new(spec, seed)?;
        let (n_rgb, n_depth) = r.frame_counts(duration_s);
        let rgb_ts: Vec<i64> = (0..n_rgb).map(|k| r.rgb_timestamp(k)).collect();
        let depth_ts: Vec<i64> = (0..n_depth).map(|i| r.depth_timestamp(i)).collect();
        let sync = synchronize(&rgb_ts, &depth_ts)?;
        Ok(Keyframes {
            info: SequenceInfo::for_scene(spec, name),
            depth: (0..n_depth).map(|i| r.emitted_depth(i).0).collect(),
            color: sync.pairs.iter().map(|&(_, k)| r.render_rgb(rgb_ts[k])).collect(),
            depth_ts,
        })
    }

    pub fn name(&self) -> &str {
        &self.info.name
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    /// Applies `prep` to every frame.
    pub fn preprocess(&self, prep: &Preprocess) -> Result<Self> {
        let (w, h) = prep.network_dims();
        Ok(Keyframes {
            info: SequenceInfo {
                width: w,
                height: h,
                ..self.info.clone()
            },
            depth: self.depth.iter().map(|d| prep.depth(d)).collect::<Result<_>>()?,
            color: self.color.iter().map(|c| prep.color(c)).collect::<Result<_>>()?,
            depth_ts: self.depth_ts.clone(),
        })
    }

    pub fn sample_count(&self, delta_frames: usize) -> usize {
        self.len().saturating_sub(delta_frames)
    }

    /// Sample starting at depth frame `t` with target `t + delta_frames`.
    pub fn sample(&self, t: usize, delta_frames: usize) -> Result<Sample<f32>> {
        let n = t + delta_frames;
        if delta_frames == 0 || n >= self.len() {
            return Err(Error::config(format!(
                "no sample at frame {t} with delta {delta_frames} ({} depth frames)",
                self.len()
            )));
        }
        let max = self.info.max_depth_mm as f32;
        Sample::new(
            self.color[t].to_tensor(),
            self.depth[t].to_tensor(max),
            self.color[n].to_tensor(),
            self.depth[n].to_tensor(max),
        )
    }

    pub fn samples(&self, delta_frames: usize) -> Result<Vec<Sample<f32>>> {
        (0..self.sample_count(delta_frames)).map(|t| self.sample(t, delta_frames)).collect()
    }
}

/// All samples of a full sequence at `delta_frames` depth periods, using
/// `sync` to pick the color frames. Empty when the sequence is too short.
pub fn make_samples(seq: &Sequence, sync: &SyncIndex, delta_frames: usize) -> Result<Vec<Sample<f32>>> {
    if delta_frames == 0 {
        return Err(Error::config("delta_frames must be at least 1"));
    }
    let kf = Keyframes {
        info: seq.info.clone(),
        depth: seq.depth.iter().map(|f| f.image.clone()).collect(),
        color: sync.pairs.iter().map(|&(_, k)| seq.rgb[k].image.clone()).collect(),
        depth_ts: seq.depth_timestamps(),
    };
    kf.samples(delta_frames)
}

pub trait Named {
    fn name(&self) -> &str;
}

impl Named for Sequence {
    fn name(&self) -> &str {
        &self.info.name
    }
}

impl Named for Keyframes {
    fn name(&self) -> &str {
        &self.info.name
    }
}

impl Named for SequenceReader {
    fn name(&self) -> &str {
        &self.info().name
    }
}

impl Named for String {
    fn name(&self) -> &str {
        self
    }
}

/// Splits off the sequence called `held_out` as the test set.
pub fn loso_split<T: Named>(items: Vec<T>, held_out: &str) -> Result<(Vec<T>, T)> {
    let pos = items
        .iter()
        .position(|s| s.name() == held_out)
        .ok_or_else(|| Error::config(format!("held-out sequence {held_out:?} not found")))?;
    let mut train = items;
    let test = train.remove(pos);
    Ok((train, test))
}
