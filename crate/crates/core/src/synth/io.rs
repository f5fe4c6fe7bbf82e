use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::render::SceneRenderer;
use super::spec::SceneSpec;
use crate::calib::Calibration;
use crate::error::{Error, Result};
use crate::image::{DepthImage, RgbImage};

pub const MANIFEST: &str = "manifest.json";
pub const CALIBRATION: &str = "calibration.json";
/// Horizontal field of view of the synthetic camera.
pub const SYNTH_FOV_DEG: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Rgb,
    Depth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub file: String,
    pub timestamp_us: i64,
    pub kind: FrameKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub rgb_fps: u32,
    pub depth_fps: u32,
    pub max_depth_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<String>,
    pub frames: Vec<FrameEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame<I> {
    pub timestamp_us: i64,
    pub image: I,
}

/// Stream-level metadata shared by a sequence and its keyframes.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceInfo {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub rgb_fps: u32,
    pub depth_fps: u32,
    pub max_depth_mm: f64,
    pub calibration: Calibration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub info: SequenceInfo,
    pub rgb: Vec<Frame<RgbImage>>,
    pub depth: Vec<Frame<DepthImage>>,
}

impl Sequence {
    pub fn name(&self) -> &str {
        &self.info.name
    }

    pub fn rgb_timestamps(&self) -> Vec<i64> {
        self.rgb.iter().map(|f| f.timestamp_us).collect()
    }

    pub fn depth_timestamps(&self) -> Vec<i64> {
        self.depth.iter().map(|f| f.timestamp_us).collect()
    }
}

impl SequenceInfo {
    pub(crate) fn for_scene(spec: &SceneSpec, name: &str) -> Self {
        SequenceInfo {
            name: name.to_string(),
            width: spec.width,
            height: spec.height,
            rgb_fps: spec.rgb_fps,
            depth_fps: spec.depth_fps,
            max_depth_mm: spec.max_depth_mm,
            calibration: Calibration::shared_pinhole(spec.width, spec.height, SYNTH_FOV_DEG),
        }
    }
}

/// Renders a full clip: every color frame and every corrupted depth frame.
pub fn generate_sequence(spec: &SceneSpec, seed: u64, duration_s: f64, name: &str) -> Result<Sequence> {
    if !(duration_s > 0.0) {
        return Err(Error::config(format!("duration must be positive, got {duration_s}")));
    }
    let r = SceneRenderer::new(spec, seed)?;
    let (n_rgb, n_depth) = r.frame_counts(duration_s);
    if n_depth == 0 {
        return Err(Error::config(format!("duration {duration_s}s is shorter than one depth frame")));
    }
    let rgb = (0..n_rgb)
        .map(|k| {
            let t = r.rgb_timestamp(k);
            Frame {
                timestamp_us: t,
                image: r.render_rgb(t),
            }
        })
        .collect();
    let depth = (0..n_depth)
        .map(|i| Frame {
            timestamp_us: r.depth_timestamp(i),
            image: r.emitted_depth(i).0,
        })
        .collect();
    Ok(Sequence {
        info: SequenceInfo::for_scene(spec, name),
        rgb,
        depth,
    })
}

fn rgb_file(k: usize) -> String {
    format!("rgb_{k:06}.rgb")
}

fn depth_file(i: usize) -> String {
    format!("depth_{i:06}.d16")
}

pub fn write_sequence(seq: &Sequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    let mut frames = Vec::with_capacity(seq.rgb.len() + seq.depth.len());
    for (k, f) in seq.rgb.iter().enumerate() {
        let file = rgb_file(k);
        write(&file, f.image.data())?;
        frames.push(FrameEntry {
            file,
            timestamp_us: f.timestamp_us,
            kind: FrameKind::Rgb,
        });
    }
    for (i, f) in seq.depth.iter().enumerate() {
        let file = depth_file(i);
        let bytes: Vec<u8> = f.image.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        write(&file, &bytes)?;
        frames.push(FrameEntry {
            file,
            timestamp_us: f.timestamp_us,
            kind: FrameKind::Depth,
        });
    }
    seq.info.calibration.save(&dir.join(CALIBRATION))?;
    let info = &seq.info;
    let manifest = Manifest {
        name: info.name.clone(),
        width: info.width,
        height: info.height,
        rgb_fps: info.rgb_fps,
        depth_fps: info.depth_fps,
        max_depth_mm: info.max_depth_mm,
        calibration: Some(CALIBRATION.into()),
        frames,
    };
    write(MANIFEST, serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes())
}

/// An on-disk sequence whose frames are loaded on demand.
#[derive(Clone, Debug)]
pub struct SequenceReader {
    dir: PathBuf,
    info: SequenceInfo,
    rgb: Vec<FrameEntry>,
    depth: Vec<FrameEntry>,
}

impl SequenceReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let fname = mpath.display().to_string();
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&fname, e.to_string()))?;
        if m.width == 0 || m.height == 0 || m.depth_fps == 0 || m.rgb_fps == 0 {
            return Err(Error::format(&fname, "zero dims or frame rate"));
        }
        let calibration = match &m.calibration {
            Some(f) => Calibration::load(&dir.join(f)).map_err(|e| match e {
                Error::Config(msg) => Error::format(dir.join(f).display().to_string(), msg),
                other => other,
            })?,
            None => Calibration::shared_pinhole(m.width, m.height, SYNTH_FOV_DEG),
        };
        let (rgb, depth): (Vec<FrameEntry>, Vec<FrameEntry>) =
            m.frames.iter().cloned().partition(|f| f.kind == FrameKind::Rgb);
        if rgb.is_empty() || depth.is_empty() {
            return Err(Error::format(&fname, "sequence needs at least one rgb and one depth frame"));
        }
        for list in [&rgb, &depth] {
            if list.windows(2).any(|p| p[1].timestamp_us <= p[0].timestamp_us) {
                return Err(Error::format(&fname, "timestamps must be strictly increasing per stream"));
            }
        }
        // Files listed vs files present.
        let mut present = HashSet::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.ends_with(".rgb") || name.ends_with(".d16") {
                present.insert(name);
            }
        }
        for f in rgb.iter().chain(&depth) {
            if !present.contains(&f.file) {
                return Err(Error::format(&fname, format!("listed frame {} is missing", f.file)));
            }
        }
        if present.len() != rgb.len() + depth.len() {
            return Err(Error::format(
                &fname,
                format!(
                    "manifest lists {} frames but {} frame files are present",
                    rgb.len() + depth.len(),
                    present.len()
                ),
            ));
        }
        Ok(SequenceReader {
            dir: dir.to_path_buf(),
            info: SequenceInfo {
                name: m.name,
                width: m.width,
                height: m.height,
                rgb_fps: m.rgb_fps,
                depth_fps: m.depth_fps,
                max_depth_mm: m.max_depth_mm,
                calibration,
            },
            rgb,
            depth,
        })
    }

    pub fn info(&self) -> &SequenceInfo {
        &self.info
    }

    pub fn name(&self) -> &str {
        &self.info.name
    }

    pub fn rgb_len(&self) -> usize {
        self.rgb.len()
    }

    pub fn depth_len(&self) -> usize {
        self.depth.len()
    }

    pub fn rgb_timestamps(&self) -> Vec<i64> {
        self.rgb.iter().map(|f| f.timestamp_us).collect()
    }

    pub fn depth_timestamps(&self) -> Vec<i64> {
        self.depth.iter().map(|f| f.timestamp_us).collect()
    }

    fn read(&self, file: &str, expect: usize) -> Result<Vec<u8>> {
        let p = self.dir.join(file);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        if bytes.len() != expect {
            return Err(Error::format(
                p.display().to_string(),
                format!("{} bytes, expected {expect}", bytes.len()),
            ));
        }
        Ok(bytes)
    }

    pub fn load_rgb(&self, k: usize) -> Result<Frame<RgbImage>> {
        let e = &self.rgb[k];
        let (w, h) = (self.info.width, self.info.height);
        let bytes = self.read(&e.file, 3 * w * h)?;
        Ok(Frame {
            timestamp_us: e.timestamp_us,
            image: RgbImage::from_vec(w, h, 3, bytes)?,
        })
    }

    pub fn load_depth(&self, i: usize) -> Result<Frame<DepthImage>> {
        let e = &self.depth[i];
        let (w, h) = (self.info.width, self.info.height);
        let bytes = self.read(&e.file, 2 * w * h)?;
        let data = bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        Ok(Frame {
            timestamp_us: e.timestamp_us,
            image: DepthImage::from_vec(w, h, 1, data)?,
        })
    }

    pub fn load_all(&self) -> Result<Sequence> {
        Ok(Sequence {
            info: self.info.clone(),
            rgb: (0..self.rgb.len()).map(|k| self.load_rgb(k)).collect::<Result<_>>()?,
            depth: (0..self.depth.len()).map(|i| self.load_depth(i)).collect::<Result<_>>()?,
        })
    }
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    SequenceReader::open(dir)?.load_all()
}
