use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average invalid-pixel rate the default corruption model aims for.
pub const DEFAULT_INVALID_FRACTION: f64 = 0.2956;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

/// Position `position` at time `start_s`, moving at `velocity` px/s until
/// the next segment starts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start_s: f64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Full width and height.
    pub size_px: [f64; 2],
    pub depth_mm: f64,
    pub texture_seed: u64,
    /// Base RGB color, modulated by the texture.
    #[serde(default = "default_color")]
    pub color: [f64; 3],
    pub trajectory: Vec<Segment>,
}

fn default_color() -> [f64; 3] {
    [200.0, 120.0, 60.0]
}

impl ShapeSpec {
    /// Center at `t` seconds.
    pub fn center(&self, t: f64) -> [f64; 2] {
        let seg = self
            .trajectory
            .iter()
            .rev()
            .find(|s| s.start_s <= t)
            .unwrap_or(&self.trajectory[0]);
        let dt = t - seg.start_s;
        [seg.position[0] + seg.velocity[0] * dt, seg.position[1] + seg.velocity[1] * dt]
    }

    /// Whether pixel center `(x, y)` lies on the shape when centered at `c`.
    #[inline]
    pub fn covers(&self, c: [f64; 2], x: f64, y: f64) -> bool {
        let dx = (x - c[0]) / (self.size_px[0] / 2.0);
        let dy = (y - c[1]) / (self.size_px[1] / 2.0);
        match self.kind {
            ShapeKind::Rectangle => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            ShapeKind::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Background {
    pub depth_mm: f64,
    #[serde(default)]
    pub tilt_x_mm_per_px: f64,
    #[serde(default)]
    pub tilt_y_mm_per_px: f64,
    pub texture_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvalidModel {
    /// Pixels closer than this (Chebyshev distance) to a depth
    /// discontinuity are invalidated.
    pub edge_band_px: usize,
    /// Neighboring depths differing by more than this form a discontinuity.
    #[serde(default = "default_discontinuity")]
    pub discontinuity_mm: f64,
    /// Dropout probability for pixels outside the edge band.
    pub dropout_rate: f64,
    /// When set, the dropout rate is solved per frame so the frame's total
    /// invalid fraction matches this value (overrides `dropout_rate`).
    #[serde(default)]
    pub target_fraction: Option<f64>,
}

fn default_discontinuity() -> f64 {
    100.0
}

impl Default for InvalidModel {
    fn default() -> Self {
        InvalidModel {
            edge_band_px: 2,
            discontinuity_mm: default_discontinuity(),
            dropout_rate: 0.22,
            target_fraction: Some(DEFAULT_INVALID_FRACTION),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_rgb_fps")]
    pub rgb_fps: u32,
    #[serde(default = "default_depth_fps")]
    pub depth_fps: u32,
    #[serde(default = "default_max_depth")]
    pub max_depth_mm: f64,
    pub background: Background,
    pub shapes: Vec<ShapeSpec>,
    #[serde(default)]
    pub invalid_model: InvalidModel,
}

fn default_rgb_fps() -> u32 {
    240
}

fn default_depth_fps() -> u32 {
    30
}

fn default_max_depth() -> f64 {
    5000.0
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("scene dims must be positive"));
        }
        if self.depth_fps == 0 || !self.rgb_fps.is_multiple_of(self.depth_fps) {
            return Err(Error::config(format!(
                "rgb_fps {} must be a positive multiple of depth_fps {}",
                self.rgb_fps, self.depth_fps
            )));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        let b = &self.background;
        let corners = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)];
        let bg_min = corners
            .iter()
            .map(|&(x, y)| b.depth_mm + b.tilt_x_mm_per_px * (x - w / 2.0) + b.tilt_y_mm_per_px * (y - h / 2.0))
            .fold(f64::INFINITY, f64::min);
        if bg_min < 1.0 {
            return Err(Error::config("background depth must stay positive"));
        }
        if b.depth_mm > self.max_depth_mm {
            return Err(Error::config("background deeper than max_depth_mm"));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            if s.trajectory.is_empty() {
                return Err(Error::config(format!("shape {i} has no trajectory")));
            }
            if !(s.depth_mm >= 1.0 && s.depth_mm < bg_min) {
                return Err(Error::config(format!(
                    "shape {i} depth {} must be in [1, {bg_min}) (in front of the background)",
                    s.depth_mm
                )));
            }
            if s.size_px.iter().any(|&v| v <= 0.0) {
                return Err(Error::config(format!("shape {i} has non-positive size")));
            }
        }
        let m = &self.invalid_model;
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        if !rate_ok(m.dropout_rate) || !m.target_fraction.is_none_or(rate_ok) {
            return Err(Error::config("invalid-model rates must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Color frames per depth frame.
    pub fn ratio(&self) -> usize {
        (self.rgb_fps / self.depth_fps) as usize
    }
}

/// Randomized family of scenes for a whole dataset (the `gen` spec file).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub sequences: usize,
    pub name_prefix: String,
    pub width: usize,
    pub height: usize,
    pub rgb_fps: u32,
    pub depth_fps: u32,
    pub max_depth_mm: f64,
    pub shapes: [usize; 2],
    pub size_px: [f64; 2],
    pub speed_px_s: [f64; 2],
    pub segment_s: [f64; 2],
    /// Zero all velocities.
    #[serde(rename = "static")]
    pub static_scene: bool,
    pub invalid_model: InvalidModel,
    /// Explicit scenes; when non-empty they replace the random ones.
    pub scenes: Vec<SceneSpec>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            sequences: 6,
            name_prefix: "seq".into(),
            width: 192,
            height: 108,
            rgb_fps: 240,
            depth_fps: 30,
            max_depth_mm: 5000.0,
            shapes: [3, 4],
            size_px: [16.0, 40.0],
            speed_px_s: [40.0, 110.0],
            segment_s: [0.8, 2.0],
            static_scene: false,
            invalid_model: InvalidModel::default(),
            scenes: Vec::new(),
        }
    }
}

impl DatasetSpec {
    pub fn count(&self) -> usize {
        if self.scenes.is_empty() {
            self.sequences
        } else {
            self.scenes.len()
        }
    }

    pub fn name(&self, index: usize) -> String {
        format!("{}{index}", self.name_prefix)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count() == 0 {
            return Err(Error::config("dataset spec produces no sequences"));
        }
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0] >= 0.0;
        if self.shapes[0] > self.shapes[1]
            || !ordered(self.size_px)
            || !ordered(self.speed_px_s)
            || !ordered(self.segment_s)
            || self.segment_s[0] <= 0.0
        {
            return Err(Error::config("dataset ranges must be non-negative [min, max] pairs"));
        }
        for s in &self.scenes {
            s.validate()?;
        }
        Ok(())
    }

    /// Scene `index` of the dataset, long enough for `duration_s`.
    pub fn scene(&self, index: usize, seed: u64, duration_s: f64) -> SceneSpec {
        if !self.scenes.is_empty() {
            return self.scenes[index].clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64 + 1);
        let (w, h) = (self.width as f64, self.height as f64);
        let background = Background {
            depth_mm: rng.gen_range(3600.0..4400.0),
            tilt_x_mm_per_px: rng.gen_range(-2.0..2.0),
            tilt_y_mm_per_px: rng.gen_range(-2.0..2.0),
            texture_seed: rng.gen(),
        };
        let n = rng.gen_range(self.shapes[0]..=self.shapes[1]);
        // Distinct depth layers so overlapping shapes form discontinuities.
        let mut layers: Vec<f64> = (0..n).map(|i| 900.0 + 550.0 * i as f64).collect();
        for l in &mut layers {
            *l += rng.gen_range(0.0..200.0);
        }
        let shapes = (0..n)
            .map(|i| {
                let size = [
                    rng.gen_range(self.size_px[0]..=self.size_px[1]),
                    rng.gen_range(self.size_px[0]..=self.size_px[1]),
                ];
                // Keep motion around the central crop so most of it is visible.
                let lo = [w * 0.2, h * 0.2];
                let hi = [w * 0.8, h * 0.8];
                let mut pos = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
                let mut t = 0.0;
                let mut trajectory = Vec::new();
                while t <= duration_s {
                    let dur = rng.gen_range(self.segment_s[0]..=self.segment_s[1]);
                    let target = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
                    let (dx, dy) = (target[0] - pos[0], target[1] - pos[1]);
                    let dist = dx.hypot(dy).max(1e-9);
                    let speed = if self.static_scene {
                        0.0
                    } else {
                        rng.gen_range(self.speed_px_s[0]..=self.speed_px_s[1])
                    };
                    let velocity = [dx / dist * speed, dy / dist * speed];
                    trajectory.push(Segment {
                        start_s: t,
                        position: pos,
                        velocity,
                    });
                    pos = [pos[0] + velocity[0] * dur, pos[1] + velocity[1] * dur];
                    t += dur;
                }
                ShapeSpec {
                    kind: if rng.gen_bool(0.5) { ShapeKind::Rectangle } else { ShapeKind::Ellipse },
                    size_px: size,
                    depth_mm: layers[i],
                    texture_seed: rng.gen(),
                    color: [rng.gen_range(60.0..255.0), rng.gen_range(60.0..255.0), rng.gen_range(60.0..255.0)],
                    trajectory,
                }
            })
            .collect();
        SceneSpec {
            width: self.width,
            height: self.height,
            rgb_fps: self.rgb_fps,
            depth_fps: self.depth_fps,
            max_depth_mm: self.max_depth_mm,
            background,
            shapes,
            invalid_model: self.invalid_model,
        }
    }
}
