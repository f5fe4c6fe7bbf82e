use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{InvalidModel, SceneSpec};
use crate::error::Result;
use crate::image::{DepthImage, RgbImage};

const CORRUPTION_STREAM: u64 = 0x5eed_d0d0;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, x: i64, y: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((x as u64).wrapping_mul(0x632B_E59B_D9B4_E019) ^ (y as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1)`.
pub fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (x0, y0) = (gx.floor(), gy.floor());
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (fx, fy) = (s(gx - x0), s(gy - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let top = lattice(seed, ix, iy) * (1.0 - fx) + lattice(seed, ix + 1, iy) * fx;
    let bot = lattice(seed, ix, iy + 1) * (1.0 - fx) + lattice(seed, ix + 1, iy + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Two-octave texture in `[0, 1)`.
pub fn texture(seed: u64, x: f64, y: f64) -> f64 {
    0.6 * value_noise(seed, x, y, 7.0) + 0.4 * value_noise(seed.wrapping_add(1), x, y, 2.5)
}

fn shade(base: f64, seed: u64, c: usize, x: f64, y: f64) -> u8 {
    let t = texture(seed.wrapping_add(17 * c as u64), x, y);
    (base * (0.3 + 0.7 * t)).round().clamp(0.0, 255.0) as u8
}

/// Which pixels a corrupted depth frame lost, and why.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionTrace {
    /// Within the edge band of a ground-truth discontinuity.
    pub edge: Vec<bool>,
    /// Hit by random dropout.
    pub dropout: Vec<bool>,
    /// Dropout probability used for this frame.
    pub dropout_rate: f64,
}

/// Renders any frame of a scene on demand.
#[derive(Clone, Debug)]
pub struct SceneRenderer {
    spec: SceneSpec,
    seed: u64,
    background_rgb: RgbImage,
    background_depth: Vec<f64>,
}

impl SceneRenderer {
    pub fn new(spec: &SceneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (w, h) = (spec.width, spec.height);
        let b = spec.background;
        let background_rgb = RgbImage::from_fn(w, h, 3, |x, y, c| {
            shade([150.0, 170.0, 190.0][c], b.texture_seed, c, x as f64, y as f64)
        });
        let background_depth = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                b.depth_mm + b.tilt_x_mm_per_px * (x - w as f64 / 2.0) + b.tilt_y_mm_per_px * (y - h as f64 / 2.0)
            })
            .collect();
        Ok(SceneRenderer {
            spec: spec.clone(),
            seed,
            background_rgb,
            background_depth,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn rgb_timestamp(&self, k: usize) -> i64 {
        timestamp_us(k, self.spec.rgb_fps)
    }

    pub fn depth_timestamp(&self, i: usize) -> i64 {
        timestamp_us(i, self.spec.depth_fps)
    }

    /// Frame counts `(rgb, depth)` for a clip of `duration_s`.
    pub fn frame_counts(&self, duration_s: f64) -> (usize, usize) {
        let depth = (duration_s * self.spec.depth_fps as f64).round() as usize;
        (depth * self.spec.ratio(), depth)
    }

    /// Front-to-back: index of the nearest shape covering each pixel.
    fn nearest_shape(&self, t_us: i64) -> Vec<Option<usize>> {
        let (w, h) = (self.spec.width, self.spec.height);
        let t = t_us as f64 / 1e6;
        let mut order: Vec<usize> = (0..self.spec.shapes.len()).collect();
        order.sort_by(|&a, &b| self.spec.shapes[a].depth_mm.total_cmp(&self.spec.shapes[b].depth_mm));
        let mut owner = vec![None; w * h];
        for &si in order.iter().rev() {
            let s = &self.spec.shapes[si];
            let c = s.center(t);
            let (hw, hh) = (s.size_px[0] / 2.0, s.size_px[1] / 2.0);
            let x0 = (c[0] - hw).floor().max(0.0) as usize;
            let y0 = (c[1] - hh).floor().max(0.0) as usize;
            let x1 = ((c[0] + hw).ceil().max(0.0) as usize).min(w.saturating_sub(1));
            let y1 = ((c[1] + hh).ceil().max(0.0) as usize).min(h.saturating_sub(1));
            if c[0] + hw < 0.0 || c[1] + hh < 0.0 {
                continue;
            }
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if s.covers(c, x as f64, y as f64) {
                        owner[y * w + x] = Some(si);
                    }
                }
            }
        }
        owner
    }

    pub fn render_rgb(&self, t_us: i64) -> RgbImage {
        let (w, h) = (self.spec.width, self.spec.height);
        let t = t_us as f64 / 1e6;
        let owner = self.nearest_shape(t_us);
        let centers: Vec<[f64; 2]> = self.spec.shapes.iter().map(|s| s.center(t)).collect();
        let mut img = self.background_rgb.clone();
        for y in 0..h {
            for x in 0..w {
                if let Some(si) = owner[y * w + x] {
                    let s = &self.spec.shapes[si];
                    let (lx, ly) = (x as f64 - centers[si][0], y as f64 - centers[si][1]);
                    let px = img.pixel_mut(x, y);
                    for (c, v) in px.iter_mut().enumerate() {
                        *v = shade(s.color[c], s.texture_seed, c, lx, ly);
                    }
                }
            }
        }
        img
    }

    /// Nearest-surface depth in millimeters, before any corruption.
    pub fn ground_truth_depth(&self, t_us: i64) -> DepthImage {
        let (w, h) = (self.spec.width, self.spec.height);
        let owner = self.nearest_shape(t_us);
        let data = (0..w * h)
            .map(|i| {
                let d = match owner[i] {
                    Some(si) => self.spec.shapes[si].depth_mm,
                    None => self.background_depth[i],
                };
                d.round().clamp(1.0, u16::MAX as f64) as u16
            })
            .collect();
        DepthImage::from_vec(w, h, 1, data).expect("sized to dims")
    }

    /// Depth frame `i` as the sensor reports it, plus its corruption trace.
    pub fn emitted_depth(&self, i: usize) -> (DepthImage, CorruptionTrace) {
        let gt = self.ground_truth_depth(self.depth_timestamp(i));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ CORRUPTION_STREAM);
        rng.set_stream(i as u64);
        corrupt(&gt, &self.spec.invalid_model, &mut rng)
    }
}

/// Integer microsecond timestamp of frame `k` at `fps`, rounded to nearest.
pub fn timestamp_us(k: usize, fps: u32) -> i64 {
    ((k as i64) * 1_000_000 + fps as i64 / 2) / fps as i64
}

/// Pixels at Chebyshev distance `< band` from a discontinuity pixel (one
/// whose 4-neighbor differs by more than `threshold_mm`).
pub fn edge_band(gt: &DepthImage, band: usize, threshold_mm: f64) -> Vec<bool> {
    let (w, h) = (gt.width(), gt.height());
    let d = |x: usize, y: usize| gt.get(x, y, 0) as f64;
    let mut disc = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = d(x, y);
            let jump = |xx: usize, yy: usize| (d(xx, yy) - v).abs() > threshold_mm;
            disc[y * w + x] = (x > 0 && jump(x - 1, y))
                || (x + 1 < w && jump(x + 1, y))
                || (y > 0 && jump(x, y - 1))
                || (y + 1 < h && jump(x, y + 1));
        }
    }
    if band == 0 {
        return vec![false; w * h];
    }
    let r = band - 1;
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !disc[y * w + x] {
                continue;
            }
            for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    out[yy * w + xx] = true;
                }
            }
        }
    }
    out
}

/// Zeroes the edge band, then drops the remaining pixels at random.
pub fn corrupt(gt: &DepthImage, model: &InvalidModel, rng: &mut ChaCha8Rng) -> (DepthImage, CorruptionTrace) {
    let n = gt.data().len();
    let edge = edge_band(gt, model.edge_band_px, model.discontinuity_mm);
    let edge_count = edge.iter().filter(|&&e| e).count();
    let rate = match model.target_fraction {
        Some(target) if edge_count < n => {
            let need = target * n as f64 - edge_count as f64;
            (need / (n - edge_count) as f64).clamp(0.0, 1.0)
        }
        Some(_) => 0.0,
        None => model.dropout_rate,
    };
    let dropout: Vec<bool> = edge.iter().map(|&e| !e && rng.gen_bool(rate)).collect();
    let mut out = gt.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if edge[i] || dropout[i] {
            *v = 0;
        }
    }
    (
        out,
        CorruptionTrace {
            edge,
            dropout,
            dropout_rate: rate,
        },
    )
}
